from __future__ import annotations

import itertools

import pytest

import corpus_builder as cb
from conftest import fresh_registry
from hfwit import calculus as ca
from hfwit import classes as cl
from hfwit import evaluator as ev
from hfwit import extract as ex
from hfwit import formula as fm
from hfwit import hf
from hfwit import verify as vf
from hfwit.extract import BExCond, OrCond, Point, class_members, envelope_ops
from hfwit.formula import Eq, In, NotIn, Valuation, Var, ZERO

E = hf.EMPTY
SE = hf.singleton(E)

TARGET_CLASS = {
    ca.T0: cl.RUD,
    ca.T1: cl.PRIMREC,
    ca.T2D: cl.SRSF,
    ca.T3: cl.PCSF_IOTA,
}


@pytest.fixture(scope="module")
def bundles():
    out = {}
    for name, deriv in cb.corpus().items():
        reg = fresh_registry()
        out[name] = ex.stratify_submodel(deriv, reg)
    return out


def test_every_corpus_item_extracts(bundles):
    assert len(bundles) == len(cb.corpus())


def test_witnesses_pass_class_validation(bundles):
    for name, bundle in bundles.items():
        assert bundle.klass == TARGET_CLASS[bundle.theory.tag], name
        for (f, dname) in bundle.delta:
            viols = cl.validate_class(
                bundle.registry.defs[dname], bundle.klass, bundle.registry, class_param=True
            )
            assert viols == [], f"{name}/{dname}: {viols[:2]}"


def test_t0_witnesses_have_no_recursion(bundles):
    for name, bundle in bundles.items():
        if bundle.theory.tag != ca.T0:
            continue
        for dname in vf.bundle_def_names(bundle):
            body = bundle.registry.defs[dname].body
            assert not cl._contains(body, (cl.SetRec, cl.PredRec)), f"{name}/{dname}"


def test_t1_fund_witness_uses_recursion(bundles):
    bundle = bundles["t1_fund"]
    names = vf.bundle_def_names(bundle)
    assert any(
        cl._contains(bundle.registry.defs[n].body, (cl.SetRec, cl.PredRec)) for n in names
    )


def test_t2_dfund_uses_predicative_recursion(bundles):
    bundle = bundles["t2_dfund"]
    names = vf.bundle_def_names(bundle)
    assert any(cl._contains(bundle.registry.defs[n].body, cl.PredRec) for n in names)


def test_t3_iota_shows_up_in_case8(bundles):
    bundle = bundles["t3_ball"]
    names = vf.bundle_def_names(bundle)
    assert any(cl._contains(bundle.registry.defs[n].body, cl.Iota) for n in names)


def test_t3_contract_emits_condcases(bundles):
    bundle = bundles["t3_contract"]
    names = vf.bundle_def_names(bundle)
    assert any(
        cl._contains(bundle.registry.defs[n].body, (cl.CondCases, cl.SepW)) for n in names
    )


def test_grid_soundness_full_corpus(bundles, small_grid):
    for name, bundle in bundles.items():
        rep = vf.verify_bundle(bundle, small_grid)
        assert rep.ok, f"{name}: {rep.failures[:1]}"
        assert rep.points > rep.vacuous


def test_extract_refuses_cut(registry):
    with pytest.raises(ex.NotCutFree):
        ex.extract(cb.g_cut(), registry)


def test_extract_refuses_failed_audit(registry):
    stray = fm.BAll(Var("v"), Var("t"), fm.Ex(Var("a"), Eq(Var("a"), Var("v"))))
    d = ca.Derivation(
        ca.TheoryId(ca.T0),
        ca.Node(ca.sequent([stray, fm.negate(stray)]), ca.RuleInstance("init", principal=(In(Var("x"), Var("y")),)), ()),
    )
    # make it check first: use a literal pair instead
    d = ca.Derivation(
        ca.TheoryId(ca.T0),
        ca.Node(
            ca.sequent([stray, In(Var("x"), Var("y")), NotIn(Var("x"), Var("y"))]),
            ca.RuleInstance("init", principal=(In(Var("x"), Var("y")),)),
            (),
        ),
    )
    with pytest.raises(ex.AuditFailed):
        ex.extract(d, registry)


def test_missing_phi_witness(registry):
    deriv = cb.t2_phi(1)
    stripped = ca.Derivation(
        ca.TheoryId(ca.T2D, phi=(ca.PhiEntry(("lx",), "a", cb.pair_formula(Var("lx", fm.NORMAL), Var("lx", fm.NORMAL), Var("a"))),)),
        ca.Node(deriv.root.seq, ca.RuleInstance("phirule", terms=deriv.root.rule.terms, eigen=deriv.root.rule.eigen, index=0), deriv.root.children, None),
    )
    with pytest.raises(ex.MissingPhiWitness):
        ex.extract(stripped, registry)


# ---------------------------------------------------------------- conditions


def test_class_members_enumeration(registry):
    val = Valuation({"t": hf.pair(E, SE)}, universe=())
    assert class_members(Point(Var("t")), val, registry) == [hf.pair(E, SE)]
    both = OrCond(Point(ZERO), Point(Var("t")))
    assert set(class_members(both, val, registry)) == {E, hf.pair(E, SE)}
    bexc = BExCond(Var("d"), Var("t"), Point(Var("d")))
    assert set(class_members(bexc, val, registry)) == {E, SE}


def test_class_members_bounded_by_product(registry):
    val = Valuation({"t": hf.pair(E, SE)}, universe=())
    cond = BExCond(Var("d"), Var("t"), OrCond(Point(Var("d")), Point(ZERO)))
    members = class_members(cond, val, registry)
    assert len(members) <= 2 * 2
    assert len(members) == len(set(members))


def test_envelope_ops(registry):
    lam = Point(Var("s"))
    seq = ca.sequent([NotIn(Var("d"), Var("t")), Eq(Var("s"), Var("s"))])
    ops = envelope_ops(lam, seq)
    w = ops["weaken"](Var("t"))
    assert w == OrCond(lam, Point(Var("t")))
    m = ops["merge"](Point(ZERO))
    assert m == OrCond(lam, Point(ZERO))
    b = ops["bind"](Var("d"), Var("t"))
    assert b == BExCond(Var("d"), Var("t"), lam)
    with pytest.raises(ex.SideConditionViolated):
        ops["bind"](Var("q"), Var("t"))
    # membership is monotone under weakening
    val = Valuation({"s": SE, "t": hf.pair(E, SE)}, universe=())
    assert set(class_members(lam, val, registry)) <= set(class_members(w, val, registry))


# ---------------------------------------------------------------- instantiation


def test_instantiate_identity_without_class_nodes(registry):
    d = cl.FunctionDef("idn", ("x",), (), cl.Proj("n", 0), None)
    registry.register_def(d)
    out = ex.instantiate_class(d, Point(ZERO), registry)
    assert out.body == d.body
    assert cl.validate_class(out, cl.PCSF_IOTA, registry) == []


def test_instantiate_unbound_condition_variable(registry):
    d = cl.FunctionDef("idn2", ("x",), (), cl.Proj("n", 0), None)
    registry.register_def(d)
    with pytest.raises(ex.UnboundConditionVariable):
        ex.instantiate_class(d, Point(Var("zz")), registry)


def test_instantiate_matches_direct_interpretation(registry, v2):
    """Dual-path oracle: running the class-parameterized definition with the
    enumerated class equals running the instantiated definition."""
    guard_phi = fm.ExBang(Var("c"), Eq(Var("c"), Var("x", fm.NORMAL)))
    d = cl.FunctionDef(
        "ccx",
        ("x",),
        (),
        cl.CondCases(
            guard_phi,
            "q",
            cl.SafeComp(cl.PairN(), (), (cl.Proj("n", 0), cl.Proj("n", 0))),
            cl.Proj("n", 0),
            cl.Proj("n", 0),
            cl.ZeroF(),
        ),
        None,
    )
    registry.register_def(d)
    cond = Point(Var("x"))
    inst = ex.instantiate_class(d, cond, registry)
    assert cl.validate_class(inst, cl.PCSF_IOTA, registry) == []
    for x in v2:
        members = class_members(cond, Valuation({"x": x}, universe=()), registry)
        direct = ev.evaluate(d, (x,), (), registry, class_env=ev.ClassEnv(tuple(members), registry)).result
        via_inst = ev.evaluate(inst, (x,), (), registry).result
        assert direct is via_inst


# ---------------------------------------------------------------- drivers


def test_definable_function_pair_union_recursion(bundles, small_grid):
    cases = [
        ("t0_pair_driver", lambda a, b: hf.pair(a, b), 2),
        ("t0_union_driver", hf.big_union, 1),
        ("t1_fund", lambda a: hf.pair(a, a), 1),
    ]
    for name, kernel, n in cases:
        bundle = bundles[name]
        main = vf.definable_function(bundle, small_grid, name=f"main_{name}")
        pool = hf.enumerate_rank(2)
        for args in itertools.product(pool, repeat=n):
            got = ev.evaluate(main, args, (), bundle.registry).result
            assert got is kernel(*args), name


def test_definable_function_t3_tc(bundles, small_grid):
    bundle = bundles["t3_trcl"]
    main = vf.definable_function(bundle, small_grid, name="main_tc")
    for x in hf.enumerate_rank(2):
        got = ev.evaluate(main, (x,), (), bundle.registry).result
        assert got is hf.transitive_closure(x)


def test_definable_function_unverified():
    reg = fresh_registry()
    bundle = ex.stratify_submodel(cb.t0_pair_driver(), reg)
    # a same-signature function that returns ∅ cannot witness the pair goal
    wrong = cl.FunctionDef("wrong", bundle.ctx.normals, bundle.ctx.safes, cl.ZeroF(), None)
    reg.register_def(wrong)
    bad = ex.WitnessBundle(
        bundle.theory,
        bundle.klass,
        bundle.ctx,
        bundle.gamma,
        ((bundle.delta[0][0], "wrong"),),
        bundle.delta0,
        bundle.du,
        bundle.psi,
        bundle.dlits,
        bundle.condition,
        bundle.defs,
        bundle.registry,
        bundle.end_seq,
    )
    with pytest.raises(ex.ObligationUnverified):
        vf.definable_function(bad, vf.default_grid(2, 2, 2))


# ---------------------------------------------------------------- bundle files


def test_bundle_round_trip(bundles, small_grid, tmp_path):
    for name in ("t0_pair_driver", "t2_dfund", "t3_ufund"):
        bundle = bundles[name]
        defs_text = vf.show_bundle_defs(bundle)
        obl_text = vf.show_bundle_obligations(bundle)
        reg = fresh_registry()
        back = vf.parse_bundle(obl_text, defs_text, reg)
        rep = vf.verify_bundle(back, small_grid)
        assert rep.ok, f"{name}: {rep.failures[:1]}"


def test_envelope_obligations_hold_at_weakened_mu(bundles):
    # envelope sampling is on by default in verify_bundle; spot-check that a
    # weakened condition also passes explicitly
    bundle = bundles["t3_ball"]
    spec = vf.GridSpec(
        pool=hf.enumerate_rank(2),
        wit_pool=hf.enumerate_rank(2),
        universe=tuple(hf.enumerate_rank(2)),
        envelope=True,
    )
    rep = vf.verify_bundle(bundle, spec)
    assert rep.ok
