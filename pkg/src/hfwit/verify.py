"""Semantic verification of extracted witness bundles.

The central check: for every assignment of the end-sequent's free variables
from the sample pool, and every witness-variable assignment satisfying the
hypothesis-side witness predicates, the extracted functions make the
disjunction side true.  For the ι-class bundles the check runs at the
extracted condition λ and at sampled members of its envelope.

Also houses the ∃!-goal driver that collapses a witness-set function into a
single-valued function, and the bundle file formats.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from . import calculus as ca
from . import classes as cl
from . import evaluator as ev
from . import extract as ex
from . import formula as fm
from . import hf, sexpr
from .formula import App, BAll, ExBang


@dataclass
class GridSpec:
    pool: list  # assignment values for free variables
    wit_pool: list  # candidate witness elements
    universe: tuple  # scratch universe for unbounded quantifiers (Ψ parts)
    max_assignments: int = 100_000
    max_candidates: int = 3
    envelope: bool = True


def default_grid(rank: int = 2, wit_rank: int = 2, universe_rank: int = 2) -> GridSpec:
    return GridSpec(
        pool=hf.enumerate_rank(rank),
        wit_pool=hf.enumerate_rank(wit_rank),
        universe=tuple(hf.enumerate_rank(universe_rank)),
    )


@dataclass
class Failure:
    assignment: dict
    mu: object | None
    detail: str

    def __str__(self):
        env = " ".join(f"{k}={hf.show(v)}" for k, v in sorted(self.assignment.items()))
        return f"{self.detail} at {env}"


@dataclass
class VerifyReport:
    points: int = 0
    vacuous: int = 0
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def line(self) -> str:
        checked = self.points - self.vacuous
        status = "pass" if self.ok else f"FAIL ({len(self.failures)})"
        return f"grid {self.points} points, {checked} live, {self.vacuous} vacuous: {status}"


# ---------------------------------------------------------------- candidates


def _sigma_candidates(sigma, val: fm.Valuation, registry, spec: GridSpec, bang: bool, mu):
    """Witness values satisfying (or plausibly satisfying) w(!)_sigma."""
    if bang:
        if isinstance(sigma, ExBang):
            sats = [
                c
                for c in spec.wit_pool
                if fm.evaluate(sigma.body, val.bind(sigma.v.name, c), registry)
            ]
            extra = [
                c
                for c in ex.class_members(mu, val, registry)
                if c not in sats
                and fm.evaluate(sigma.body, val.bind(sigma.v.name, c), registry)
            ]
            return (sats + extra)[: spec.max_candidates + 1]
        if isinstance(sigma, BAll) and isinstance(sigma.body, ExBang):
            bound = fm.eval_term(sigma.bound, val, registry)
            choices = []
            for x in bound:
                inner = sigma.body
                sats = [
                    c
                    for c in spec.wit_pool
                    if fm.evaluate(
                        inner.body, val.bind(sigma.v.name, x).bind(inner.v.name, c), registry
                    )
                ]
                if not sats:
                    return []
                choices.append(sats[: spec.max_candidates])
            graphs = []
            for combo in itertools.islice(itertools.product(*choices), 4):
                graphs.append(
                    hf.make_set([hf.kpair(x, c) for x, c in zip(bound, combo)])
                )
            return graphs or [hf.EMPTY]
        raise ex.UnsupportedShape(f"no candidate rule for {fm.show_formula(sigma)}")
    cls = fm.classify(sigma)
    if cls is fm.FormulaClass.SIGMA1:
        vs, matrix = fm.ex_block(sigma)
        sats = []
        for combo in itertools.product(spec.wit_pool, repeat=len(vs)):
            v2 = val
            for v, c in zip(vs, combo):
                v2 = v2.bind(v.name, c)
            if fm.evaluate(matrix, v2, registry):
                enc = combo[-1]
                for c in reversed(combo[:-1]):
                    enc = hf.kpair(c, enc)
                sats.append(enc)
        out = [hf.singleton(s) for s in sats[: spec.max_candidates]]
        if sats:
            out.append(hf.make_set(sats))
        return out
    if cls is fm.FormulaClass.SIGMA:
        bound = fm.eval_term(sigma.bound, val, registry)
        per_point = []
        for x in bound:
            inner = sigma.body
            vs, matrix = fm.ex_block(inner)
            sats = []
            for combo in itertools.product(spec.wit_pool, repeat=len(vs)):
                v2 = val.bind(sigma.v.name, x)
                for v, c in zip(vs, combo):
                    v2 = v2.bind(v.name, c)
                if fm.evaluate(matrix, v2, registry):
                    enc = combo[-1]
                    for c in reversed(combo[:-1]):
                        enc = hf.kpair(c, enc)
                    sats.append(enc)
            if not sats:
                return []
            per_point.append(sats)
        graphs = [
            hf.make_set(
                [hf.kpair(x, hf.make_set(s)) for x, s in zip(bound, per_point)]
            )
        ]
        singles = hf.make_set(
            [hf.kpair(x, hf.singleton(s[0])) for x, s in zip(bound, per_point)]
        )
        if singles not in graphs:
            graphs.append(singles)
        return graphs
    raise ex.UnsupportedShape(f"no candidate rule for class {cls.value}")


# ---------------------------------------------------------------- the grid


def _du_holds(f, mu, val, registry) -> bool:
    """¬Unique_a(θ) relativized to X_mu: two distinct members satisfying θ."""
    inner = f.body  # f = Ex(a, Ex(b, And(And(θa, θb), a≠b)))
    a, b = f.v, inner.v
    matrix = inner.body
    members = ex.class_members(mu, val, registry)
    for i, x in enumerate(members):
        for y in members[i + 1 :]:
            if fm.evaluate(matrix, val.bind(a.name, x).bind(b.name, y), registry):
                return True
            if fm.evaluate(matrix, val.bind(a.name, y).bind(b.name, x), registry):
                return True
    return False


def verify_bundle(bundle: ex.WitnessBundle, spec: GridSpec | None = None) -> VerifyReport:
    spec = spec or default_grid()
    registry = bundle.registry
    bang = bundle.theory.tag == ca.T3
    report = VerifyReport()
    frees = bundle.ctx.normals + bundle.ctx.safes
    wnames = [w for (_, _, w) in bundle.gamma]
    frees = tuple(p for p in frees if p not in wnames)
    assignments = itertools.product(spec.pool, repeat=len(frees))
    count = 0
    for values in assignments:
        count += 1
        if count > spec.max_assignments:
            break
        env = dict(zip(frees, values))
        base = fm.Valuation(dict(env), universe=spec.universe, dclass=None)
        mus = [None]
        if bang:
            lam = bundle.condition if bundle.condition is not None else ex.C0
            mus = ex.envelope_samples(lam, bundle.end_seq) if spec.envelope else [lam]
        for mu in mus:
            for combo in _witness_combos(bundle, base, registry, spec, bang, mu):
                report.points += 1
                val = base
                for name, value in combo:
                    val = val.bind(name, value)
                live, detail = _check_point(bundle, val, registry, spec, bang, mu)
                if live is None:
                    report.vacuous += 1
                elif not live:
                    report.failures.append(Failure(dict(val.env), mu, detail))
    return report


def _witness_combos(bundle, val, registry, spec, bang, mu):
    if not bundle.gamma:
        return [()]
    lists = []
    for (_, sigma, wname) in bundle.gamma:
        cands = _sigma_candidates(sigma, val, registry, spec, bang, mu)
        if not cands:
            return [()]  # hypotheses unsatisfiable here: one vacuous point
        lists.append([(wname, c) for c in cands])
    return itertools.product(*lists)


def _check_point(bundle, val, registry, spec, bang, mu):
    """None if a premise fails (vacuous), else truth of the disjunction."""
    for (_, sigma, wname) in bundle.gamma:
        if wname not in val.env:
            return None, "unassigned witness variable"
        b = fm.fresh_var("chk", fm.SAFE)
        if bang:
            w = fm.witness_bang_predicate(sigma, b, mu)
        else:
            w = fm.witness_predicate(sigma, b)
        if not fm.evaluate(w, val.bind(b.name, val.env[wname]), registry):
            return None, ""
    for f in bundle.delta0:
        if fm.evaluate(f, val, registry):
            return True, ""
    if bang:
        for f in bundle.du:
            if _du_holds(f, mu, val, registry):
                return True, ""
        for f in bundle.psi:
            if fm.evaluate(f, val, registry):
                return True, ""
    class_env = None
    if bang:
        class_env = ev.ClassEnv(tuple(ex.class_members(mu, val, registry)), registry)
    for (f, name) in bundle.delta:
        fdef = registry.defs[name]
        nargs = tuple(val.env[p] for p in fdef.normals)
        sargs = tuple(val.env[p] for p in fdef.safes)
        value = ev.evaluate(fdef, nargs, sargs, registry, class_env=class_env).result
        b = fm.fresh_var("chk", fm.SAFE)
        if bang:
            w = fm.witness_bang_predicate(f, b, mu)
        else:
            w = fm.witness_predicate(f, b)
        if fm.evaluate(w, val.bind(b.name, value), registry):
            return True, ""
    return False, "no disjunct holds"


# ---------------------------------------------------------------- the ∃!-goal driver


def definable_function(
    bundle: ex.WitnessBundle,
    spec: GridSpec | None = None,
    name: str = "main",
    verified: bool = False,
    paired: bool | None = None,
) -> cl.FunctionDef:
    """Collapse a verified bundle for a goal ∀x⃗ ∃!b φ into a single-valued
    function.  For a one-quantifier goal this is the union of the witness
    set (a singleton by uniqueness); when the goal packs an auxiliary
    existential into a pair (∃!b ∃c …, witnesses ⟨b,c⟩), take first
    components before collapsing.  For the ι-class the witness value is
    already unique; pairing again only needs a first projection."""
    if not verified:
        report = verify_bundle(bundle, spec)
        if not report.ok:
            raise ex.ObligationUnverified(str(report.failures[0]))
    goals = [
        (f, dname)
        for (f, dname) in bundle.delta
        if fm.free_vars(f)  # the genuine goal mentions the arguments
    ] or list(bundle.delta)
    if len(goals) != 1:
        raise ex.UnsupportedShape("the goal bundle must carry exactly one witnessed formula")
    goal, dname = goals[0]
    if paired is None:
        vs, _ = fm.ex_block(goal) if isinstance(goal, fm.Ex) else ([None], None)
        paired = len(vs) >= 2
    registry = bundle.registry
    fdef = registry.defs[dname]
    emitter = ex.Emitter(registry, bundle.theory.tag in (ca.T2D, ca.T3), bundle.klass)
    ctx = ex.Ctx(fdef.normals, fdef.safes)
    if bundle.theory.tag == ca.T3:
        inst = ex.instantiate_class(registry.defs[dname], bundle.condition, registry)
        call = ex.ECall(inst.name, tuple(ex.EVar(p) for p in ctx.params()))
        body = ex.ECall("fst", (call,)) if paired else call
    else:
        call = ex.ECall(dname, tuple(ex.EVar(p) for p in ctx.params()))
        if paired:
            d = f"%d{emitter.count}"
            call = ex.EBUnion(
                call,
                d,
                fm.SAFE if bundle.theory.tag == ca.T2D else fm.NORMAL,
                ex.ECall(
                    "pr",
                    (ex.ECall("fst", (ex.EVar(d),)), ex.ECall("fst", (ex.EVar(d),))),
                ),
            )
        body = ex.ECall("un", (call,))
    outname = registry.fresh_name(name)
    emitter.define(outname, ctx, body)
    return registry.defs[outname]


# ---------------------------------------------------------------- bundle files


def bundle_def_names(bundle: ex.WitnessBundle) -> list:
    """All non-builtin definitions the bundle's functions depend on, in
    dependency order."""
    registry = bundle.registry
    seen: list = []
    marks: set = set()

    def term_syms(t, out):
        if isinstance(t, App):
            out.add(t.symbol)
            for s in t.normals + t.safes:
                term_syms(s, out)

    def formula_syms(f, out):
        if isinstance(f, (fm.DPred, fm.NotDPred)):
            term_syms(f.t, out)
        elif isinstance(f, fm.LITERALS):
            term_syms(f.t, out)
            term_syms(f.s, out)
        elif isinstance(f, (fm.Or, fm.And)):
            formula_syms(f.a, out)
            formula_syms(f.b, out)
        elif isinstance(f, (fm.BEx, fm.BAll)):
            term_syms(f.bound, out)
            formula_syms(f.body, out)
        else:
            formula_syms(f.body, out)

    def scheme_syms(node, out):
        if isinstance(node, cl.Ref):
            out.add(node.name)
        if isinstance(node, cl.OracleRef):
            pass
        for attr in ("g", "h", "then", "els"):
            sub = getattr(node, attr, None)
            if sub is not None and cl._is_scheme(sub):
                scheme_syms(sub, out)
        for attr in ("inners", "rs", "ts"):
            for sub in getattr(node, attr, ()):
                scheme_syms(sub, out)
        for attr in ("theta", "plain", "phi"):
            f = getattr(node, attr, None)
            if f is not None and not isinstance(f, str):
                formula_syms(f, out)
        cand = getattr(node, "cand", None)
        if cand is not None:
            term_syms(cand, out)

    def visit(name):
        if name in marks or name in cl.BUILTIN_NAMES or name not in registry.defs:
            return
        marks.add(name)
        deps: set = set()
        scheme_syms(registry.defs[name].body, deps)
        for dep in sorted(deps):
            visit(dep)
        seen.append(name)

    for (_, name) in bundle.delta:
        visit(name)
    for d in bundle.defs:
        visit(d.name)
    return seen


def show_bundle_defs(bundle: ex.WitnessBundle) -> str:
    names = bundle_def_names(bundle)
    return cl.show_defs([bundle.registry.defs[n] for n in names], bundle.registry)


def bundle_obligations_sexpr(bundle: ex.WitnessBundle):
    out = ["obligation", ["theory", bundle.theory.tag], ["class", bundle.klass]]
    out.append(["normals"] + [p for p in bundle.ctx.normals if p not in _wnames(bundle)])
    out.append(["safes"] + [p for p in bundle.ctx.safes if p not in _wnames(bundle)])
    for (f, sigma, w) in bundle.gamma:
        out.append(["witness", w, fm.formula_sexpr(sigma)])
    for (f, name) in bundle.delta:
        out.append(["delta", name, fm.formula_sexpr(f)])
    for f in bundle.delta0:
        out.append(["delta0", fm.formula_sexpr(f)])
    for f in bundle.du:
        out.append(["du", fm.formula_sexpr(f)])
    for f in bundle.psi:
        out.append(["psi", fm.formula_sexpr(f)])
    for t in bundle.dlits:
        out.append(["dlit", fm.term_sexpr(t)])
    if bundle.condition is not None:
        out.append(["condition", ex.cond_sexpr(bundle.condition)])
    out.append(["endseq"] + [fm.formula_sexpr(f) for f in ca.seq_sorted(bundle.end_seq)])
    return out


def show_bundle_obligations(bundle: ex.WitnessBundle) -> str:
    return sexpr.show_pretty(bundle_obligations_sexpr(bundle)) + "\n"


def parse_bundle(obl_text: str, defs_text: str, registry) -> ex.WitnessBundle:
    """Rebuild a bundle from its two files, loading definitions into the
    registry (replayable verification)."""
    cl.load_defs_text(defs_text, registry)
    e = sexpr.parse_one(obl_text)
    if not (isinstance(e, list) and e and e[0] == "obligation"):
        raise ValueError("obligations file must start with (obligation ...)")
    theory = ca.TheoryId(ca.T0)
    klass = cl.RUD
    normals: tuple = ()
    safes: tuple = ()
    gamma, delta, delta0, du, psi, dlits = [], [], [], [], [], []
    condition = None
    endseq: frozenset = frozenset()
    for part in e[1:]:
        head = part[0]
        if head == "theory":
            theory = ca.TheoryId(part[1])
        elif head == "class":
            klass = part[1]
        elif head == "normals":
            normals = tuple(part[1:])
        elif head == "safes":
            safes = tuple(part[1:])
        elif head == "witness":
            sigma = fm.parse_formula(part[2], allow_reserved=True)
            gamma.append((fm.negate(sigma), sigma, part[1]))
        elif head == "delta":
            delta.append((fm.parse_formula(part[2], allow_reserved=True), part[1]))
        elif head == "delta0":
            delta0.append(fm.parse_formula(part[1], allow_reserved=True))
        elif head == "du":
            du.append(fm.parse_formula(part[1], allow_reserved=True))
        elif head == "psi":
            psi.append(fm.parse_formula(part[1], allow_reserved=True))
        elif head == "dlit":
            dlits.append(fm.parse_term(part[1], allow_reserved=True))
        elif head == "condition":
            condition = ex.parse_condition(part[1])
        elif head == "endseq":
            endseq = ca.sequent(fm.parse_formula(x, allow_reserved=True) for x in part[1:])
        else:
            raise ValueError(f"bad obligation part {head}")
    wnames = tuple(w for (_, _, w) in gamma)
    ctx = ex.Ctx(normals, safes + wnames) if theory.tag in (ca.T2D, ca.T3) else ex.Ctx(
        normals + wnames, safes
    )
    return ex.WitnessBundle(
        theory,
        klass,
        ctx,
        tuple(gamma),
        tuple(delta),
        tuple(delta0),
        tuple(du),
        tuple(psi),
        tuple(dlits),
        condition,
        (),
        registry,
        endseq,
    )


def _wnames(bundle) -> set:
    return {w for (_, _, w) in bundle.gamma}
