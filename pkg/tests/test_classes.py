from __future__ import annotations

import pytest

from hfwit import classes as cl
from hfwit import evaluator as ev
from hfwit import formula as fm
from hfwit import hf
from hfwit.classes import (
    BUnion,
    Cases,
    Comp,
    DiffN,
    DuplicateSymbol,
    FunctionDef,
    Iota,
    NormalSep,
    OracleEntry,
    PairN,
    PredRec,
    Proj,
    Ref,
    Registry,
    SafeComp,
    Sep,
    SetRec,
    UnionN,
    ZeroF,
    derive_size_poly,
    parse_poly,
    powerset_entry,
    synth_sigma1,
    synth_sigma1_bang,
    validate_class,
)
from hfwit.formula import App, Eq, In, Valuation, Var, ZERO

E = hf.EMPTY
SE = hf.singleton(E)


def proj_pair():
    return SafeComp(PairN(), (), (Proj("n", 0), Proj("n", 1)))


# ---------------------------------------------------------------- the definition library
# the ≥8 safe-recursive / ι-class definitions exercised by the synthesis and
# size-bound properties


def library() -> dict:
    tc1n = FunctionDef("tc1n", ("x",), (), SafeComp(Ref("tc1"), (Proj("n", 0),), ()), None)
    return {
        "pair2": FunctionDef("pair2", ("x", "y"), (), proj_pair(), None),
        "diff2": FunctionDef(
            "diff2", ("x", "y"), (), SafeComp(DiffN(), (), (Proj("n", 0), Proj("n", 1))), None
        ),
        "un1": FunctionDef("un1", ("x",), (), SafeComp(UnionN(), (), (Proj("n", 0),)), None),
        "sing": FunctionDef(
            "sing", ("x",), (), SafeComp(PairN(), (), (Proj("n", 0), Proj("n", 0))), None
        ),
        "kpair2": FunctionDef(
            "kpair2", ("x", "y"), (), SafeComp(Ref("kpair"), (), (Proj("n", 0), Proj("n", 1))), None
        ),
        "fst1": FunctionDef("fst1", ("x",), (), SafeComp(Ref("fst"), (), (Proj("n", 0),)), None),
        "tc1n": tc1n,
        "iotan": FunctionDef(
            "iotan", ("x",), (), SafeComp(Ref("iotaid"), (), (Proj("n", 0),)), None
        ),
        "memsep": FunctionDef("memsep", ("x", "c"), (), Sep("it", In(Var("it"), Var("x"))), None),
        "condsing": FunctionDef(
            "condsing",
            ("x", "y"),
            (),
            Cases(
                In(Var("x"), Var("y")),
                SafeComp(PairN(), (), (Proj("n", 0), Proj("n", 0))),
                ZeroF(),
            ),
            None,
        ),
    }


def kernel_oracles():
    return {
        "pair2": lambda x, y: hf.pair(x, y),
        "diff2": lambda x, y: hf.diff(x, y),
        "un1": hf.big_union,
        "sing": hf.singleton,
        "kpair2": lambda x, y: hf.kpair(x, y),
        "fst1": hf.first,
        "tc1n": hf.tc_with_self,
        "iotan": lambda x: x.children[0] if len(x) == 1 else E,
        "memsep": lambda x, c: hf.make_set([u for u in c if u in x]),
        "condsing": lambda x, y: hf.singleton(x) if x in y else E,
    }


@pytest.fixture
def lib_registry(registry):
    for d in library().values():
        registry.register_def(d)
    return registry


# ---------------------------------------------------------------- validation


def test_library_validates_pcsf_iota(lib_registry):
    for d in library().values():
        assert validate_class(d, cl.PCSF_IOTA, lib_registry) == []


def test_validate_monotone_within_chains(lib_registry):
    for d in library().values():
        at_minus = validate_class(d, cl.PCSF_MINUS, lib_registry) == []
        at_iota = validate_class(d, cl.PCSF_IOTA, lib_registry) == []
        at_srsf = validate_class(d, cl.SRSF, lib_registry) == []
        if at_minus:
            assert at_iota
        if at_iota:
            assert at_srsf


def test_validate_monotone_rud_primrec(lib_registry):
    # anything valid at the smaller unsplit tag stays valid at the larger
    for d in library().values():
        if validate_class(d, cl.RUD, lib_registry) == []:
            assert validate_class(d, cl.PRIMREC, lib_registry) == []
    tc = lib_registry.defs["tc"]
    assert validate_class(tc, cl.RUD, lib_registry) != []
    assert validate_class(tc, cl.PRIMREC, lib_registry) == []


def test_bunion_rud_ok_pcsf_reject(registry):
    f = FunctionDef("bu", ("x", "z"), (), BUnion(Proj("n", 1)), None)
    registry.register_def(f)
    assert validate_class(f, cl.RUD, registry) == []
    viols = validate_class(f, cl.PCSF_IOTA, registry)
    assert viols and "not in class grammar" in viols[0]


def test_setrec_only_primrec_und_up(registry):
    h = FunctionDef("h0", ("x", "e"), (), Proj("n", 1), None)
    registry.register_def(h)
    f = FunctionDef("f0", ("x",), (), SetRec(Ref("h0")), None)
    registry.register_def(f)
    assert validate_class(f, cl.RUD, registry) != []
    assert validate_class(f, cl.PRIMREC, registry) == []


def test_safecomp_normal_inner_discipline(registry):
    # a normal inner function mentioning a safe parameter is rejected
    f = FunctionDef(
        "bad",
        ("x",),
        ("a",),
        SafeComp(Ref("tc1"), (Proj("s", 0),), ()),
        None,
    )
    registry.register_def(f)
    viols = validate_class(f, cl.PCSF_IOTA, registry)
    assert viols and "out of range" in viols[0]


def test_safe_into_declared_normal_slot_rejected(registry):
    f = FunctionDef("bad2", (), ("a",), SafeComp(Ref("tc1"), (), (Proj("s", 0),)), None)
    registry.register_def(f)
    viols = validate_class(f, cl.PCSF_IOTA, registry)
    assert viols and "arity" in viols[0]


def test_sep_stratification_rejected(registry):
    # the separation formula uses a safe variable inside a normal slot
    theta = Eq(App("tc1", (Var("it", fm.SAFE),), ()), Var("x", fm.NORMAL))
    f = FunctionDef("bads", ("x",), ("c",), Sep("it", theta), None)
    registry.register_def(f)
    viols = validate_class(f, cl.PCSF_MINUS, registry)
    assert viols and "not stratified" in viols[0]


def test_normalsep_needs_flag(registry):
    g = FunctionDef("gg", ("x",), ("b",), Proj("s", 0), None)
    registry.register_def(g)
    f = FunctionDef("ns", ("x",), ("c",), NormalSep(Ref("gg")), None)
    registry.register_def(f)
    viols = validate_class(f, cl.PCSF_IOTA, registry)
    assert viols and "pcsf-plus" in viols[0]
    assert validate_class(f, cl.PCSF_IOTA, registry, pcsf_plus=True) == []


def test_formula_nodes_only_at_body(registry):
    inner = Sep("it", Eq(Var("it"), ZERO))
    f = FunctionDef("nested", ("x",), (), SafeComp(UnionN(), (), (inner,)), None)
    registry.register_def(f)
    viols = validate_class(f, cl.RUD, registry)
    assert viols and "only allowed at a definition body" in viols[0]


# ---------------------------------------------------------------- oracle registry


def test_register_oracle_and_use(registry):
    out = registry.apply("powerset", (SE,), ())
    assert out is hf.powerset(SE)
    assert out is hf.pair(E, SE)


def test_duplicate_symbol(registry):
    with pytest.raises(DuplicateSymbol):
        registry.register_oracle(powerset_entry())
    with pytest.raises(DuplicateSymbol):
        registry.register_def(FunctionDef("powerset", ("x",), (), ZeroF(), None))


def test_oracle_use_in_class(registry):
    f = FunctionDef(
        "powpow", ("x",), (), Comp(cl.OracleRef("powerset"), (Proj("n", 0),)), None
    )
    registry.register_def(f)
    assert validate_class(f, cl.RUD, registry) == []
    got = ev.evaluate(f, (SE,), (), registry).result
    assert got is hf.powerset(SE)


# ---------------------------------------------------------------- synthesis


def holds(phi, env, registry, universe=()):
    return fm.evaluate(phi, Valuation(dict(env), universe=tuple(universe)), registry)


def test_synth_pair_shape(lib_registry):
    phi = synth_sigma1(library()["pair2"], lib_registry)
    assert fm.classify(phi) is fm.FormulaClass.DELTA0
    s = fm.show_formula(phi)
    assert "(in x b)" in s and "(in y b)" in s and "ball" in s


def test_synth_setrec_course_of_values(registry):
    # tc1-style recursion: the defining formula carries the graph function
    step = FunctionDef("st", ("x",), ("e",), Proj("s", 0), None)
    registry.register_def(step)
    f = FunctionDef("rec1", ("x",), (), PredRec(Ref("st")), None)
    registry.register_def(f)
    phi = synth_sigma1(f, registry)
    assert fm.classify(phi) is fm.FormulaClass.SIGMA1
    s = fm.show_formula(phi)
    assert "tc1" in s and "apply" in s


def test_synth_bang_iota_disjunction(registry):
    g = FunctionDef("gid", (), ("c", "b"), Proj("s", 1), None)
    registry.register_def(g)
    f = FunctionDef("iot", (), ("c",), Iota(Ref("gid")), None)
    registry.register_def(f)
    phi = synth_sigma1_bang(f, registry)
    assert fm.classify(phi) is fm.FormulaClass.SIGMA1BANG
    s = fm.show_formula(phi)
    assert s.count("or") >= 1 and "neq" in s  # collision witnesses disjunct


def test_synth_projection_bang(registry):
    f = FunctionDef("idn", ("x",), (), Proj("n", 0), None)
    registry.register_def(f)
    phi = synth_sigma1_bang(f, registry)
    assert fm.classify(phi) is fm.FormulaClass.SIGMA1BANG


# ---------------------------------------------------------------- size polynomials


def test_poly_parse_show_eval():
    p = parse_poly("2*x1*x2 + x1^2 + 3", 2)
    assert p.eval([2, 5]) == 20 + 4 + 3
    assert parse_poly(p.show(), 2).monomials == p.monomials
    with pytest.raises(ValueError):
        parse_poly("x1 - 1", 1)
    with pytest.raises(ValueError):
        parse_poly("x3", 2)


def test_derive_poly_examples(lib_registry):
    lib = library()
    p = derive_size_poly(lib["pair2"], lib_registry)
    assert p.eval([3, 4]) >= 3 + 4 + 1
    proj = FunctionDef("p1", ("x", "y"), (), Proj("n", 1), None)
    assert derive_size_poly(proj, lib_registry).show() == "x2"


def test_derive_poly_rejects_bunion(registry):
    f = FunctionDef("bu2", ("x", "z"), (), BUnion(Proj("n", 1)), None)
    registry.register_def(f)
    with pytest.raises(cl.UnsupportedScheme):
        derive_size_poly(f, registry)


def test_derive_poly_oracle_needs_declaration(registry):
    f = FunctionDef("pw", ("x",), (), Comp(cl.OracleRef("powerset"), (Proj("n", 0),)), None)
    registry.register_def(f)
    with pytest.raises(cl.UnsupportedScheme):
        derive_size_poly(f, registry)


# ---------------------------------------------------------------- def files


def test_def_file_round_trip(lib_registry):
    text = cl.show_defs(library().values(), lib_registry)
    reg2 = Registry()
    defs = cl.load_defs_text(text, reg2)
    assert [d.name for d in defs] == list(library().keys())
    for d in defs:
        assert d == library()[d.name]


def test_def_file_level_graph_round_trip(registry):
    text = cl.show_defs([registry.defs["succ"]], registry)
    reg2 = Registry()
    cl.load_defs_text(text, reg2)
    assert reg2.levels["succ"] == 1
    assert reg2.graphs["succ"] is not None


def test_oracle_determinism_cross_check(registry):
    calls = [hf.singleton(E), E]
    registry.register_oracle(
        OracleEntry("flaky", 1, 0, lambda n, s: calls.pop(0))
    )
    registry.apply("flaky", (E,), ())
    with pytest.raises(cl.ClassViolation):
        registry.apply("flaky", (E,), ())
