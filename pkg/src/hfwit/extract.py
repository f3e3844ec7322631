"""Witness extraction from cut-free derivations.

Three extractors share one walk.  For T0/T1 every Σ1 formula on the Δ side
gets a rudimentary (resp. primitive recursive) function whose value is a
nonempty set of witnesses; for T2 the functions are safe recursive with the
𝒟-variables normal; for T3 every Σ1! formula gets a class-parameterized
predicatively computable function together with a condition λ naming the
finite class that bounds the uniqueness quantifiers.

Functions are assembled in a small expression IR over the sequent's free
variables plus the witness variables, then compiled to scheme combinators.
Formula-carrying schemes and recursions become auxiliary named definitions;
bounded unions over a normal variable compile to a predicative-recursion
accumulator over the transitive closure of the bound.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from . import calculus as ca
from . import classes as cl
from . import formula as fm
from .calculus import Derivation, Node, RuleInstance
from .formula import (
    All,
    AllBangNeg,
    And,
    App,
    BAll,
    BEx,
    Eq,
    Ex,
    ExBang,
    In,
    Neq,
    NotDPred,
    NotIn,
    Or,
    Var,
    ZERO,
    negate,
    subst_var,
)


class ExtractError(Exception):
    pass


class NotCutFree(ExtractError):
    pass


class AuditFailed(ExtractError):
    pass


class UnsupportedShape(ExtractError):
    pass


class MissingPhiWitness(ExtractError):
    pass


class ObligationUnverified(ExtractError):
    pass


class SideConditionViolated(ExtractError):
    pass


class UnboundConditionVariable(ExtractError):
    pass


# ---------------------------------------------------------------- conditions


@dataclass(frozen=True)
class Point:
    term: object  # Term


@dataclass(frozen=True)
class OrCond:
    a: "Condition"
    b: "Condition"


@dataclass(frozen=True)
class BExCond:
    v: Var
    bound: object  # Term
    body: "Condition"


Condition = object

C0 = Point(ZERO)


def cond_vars(c) -> set:
    if isinstance(c, Point):
        return fm.term_vars(c.term)
    if isinstance(c, OrCond):
        return cond_vars(c.a) | cond_vars(c.b)
    if isinstance(c, BExCond):
        return fm.term_vars(c.bound) | (cond_vars(c.body) - {c.v.name})
    raise TypeError(f"not a condition: {c!r}")


def cond_subst(c, env):
    if isinstance(c, Point):
        return Point(fm.term_subst(c.term, env))
    if isinstance(c, OrCond):
        return OrCond(cond_subst(c.a, env), cond_subst(c.b, env))
    if isinstance(c, BExCond):
        inner = {k: v for k, v in env.items() if k != c.v.name}
        return BExCond(c.v, fm.term_subst(c.bound, env), cond_subst(c.body, inner))
    raise TypeError(f"not a condition: {c!r}")


def cond_sexpr(c):
    if isinstance(c, Point):
        return ["point", fm.term_sexpr(c.term)]
    if isinstance(c, OrCond):
        return ["or", cond_sexpr(c.a), cond_sexpr(c.b)]
    if isinstance(c, BExCond):
        return ["bex", fm._var_sexpr(c.v), fm.term_sexpr(c.bound), cond_sexpr(c.body)]
    raise TypeError(f"not a condition: {c!r}")


def parse_condition(e):
    head = e[0]
    if head == "point":
        return Point(fm.parse_term(e[1], allow_reserved=True))
    if head == "or":
        return OrCond(parse_condition(e[1]), parse_condition(e[2]))
    if head == "bex":
        return BExCond(
            ca.parse_var_binder(e[1]),
            fm.parse_term(e[2], allow_reserved=True),
            parse_condition(e[3]),
        )
    raise ValueError(f"bad condition {e}")


def class_members(cond, val: fm.Valuation, registry) -> list:
    """Exact finite enumeration of X_λ under the valuation."""
    if isinstance(cond, Point):
        return [fm.eval_term(cond.term, val, registry)]
    if isinstance(cond, OrCond):
        out = class_members(cond.a, val, registry) + class_members(cond.b, val, registry)
        return list(dict.fromkeys(out))
    if isinstance(cond, BExCond):
        bound = fm.eval_term(cond.bound, val, registry)
        out = []
        for x in bound:
            out.extend(class_members(cond.body, val.bind(cond.v.name, x), registry))
        return list(dict.fromkeys(out))
    raise TypeError(f"not a condition: {cond!r}")


def weaken(cond, term) -> Condition:
    return OrCond(cond, Point(term))


def merge(c0, c1) -> Condition:
    return OrCond(c0, c1)


def bind(cond, v: Var, term, seq) -> Condition:
    """∃v∈term cond; licensed only when the literal v∉term is in the sequent."""
    if NotIn(Var(v.name, v.sort), term) not in seq:
        raise SideConditionViolated(
            f"bind: literal {v.name} ∉ {fm.show_term(term)} not in the sequent"
        )
    return BExCond(v, term, cond)


def envelope_ops(cond, seq):
    """The three envelope operations over a sequent, as closures."""
    return {
        "weaken": lambda t: weaken(cond, t),
        "merge": lambda other: merge(cond, other),
        "bind": lambda v, t: bind(cond, v, t, seq),
    }


def envelope_samples(cond, seq) -> list:
    """λ itself plus one application of each envelope operation."""
    out = [cond, weaken(cond, ZERO), merge(cond, Point(ZERO))]
    for f in ca.seq_sorted(seq):
        if isinstance(f, NotIn) and isinstance(f.t, Var):
            try:
                out.append(bind(cond, Var(f.t.name, f.t.sort), f.s, seq))
                break
            except SideConditionViolated:  # pragma: no cover - defensive
                pass
    return out


# ---------------------------------------------------------------- expression IR


@dataclass(frozen=True)
class EVar:
    name: str


@dataclass(frozen=True)
class ETerm:
    term: object


@dataclass(frozen=True)
class ECall:
    sym: str
    args: tuple


@dataclass(frozen=True)
class ESep:
    bound: "Expr"
    var: str
    theta: object  # Δ0 formula over scope names + var


@dataclass(frozen=True)
class EBUnion:
    bound: "Expr"
    var: str
    sort: str  # placement of the union variable
    body: "Expr"


@dataclass(frozen=True)
class ECases:
    guard: object  # Δ0 formula over scope names
    then: "Expr"
    els: "Expr"


@dataclass(frozen=True)
class ECondW:
    """then if ∀xvar∈g [w!^X_phi(h)] else els; h may use the name xvar."""

    phi: object
    xvar: str
    g: "Expr"
    h: "Expr"
    then: "Expr"
    els: "Expr"


@dataclass(frozen=True)
class ESepW:
    """{var ∈ bound : plain ∧ w!^X_phi(cand)}."""

    bound: "Expr"
    var: str
    plain: object
    phi: object
    cand: "Expr"


Expr = object

E0 = ETerm(ZERO)


def esubst(e, env: dict):
    """Substitute terms for free variable names inside an expression."""
    if not env:
        return e
    if isinstance(e, EVar):
        t = env.get(e.name)
        return ETerm(t) if t is not None else e
    if isinstance(e, ETerm):
        return ETerm(fm.term_subst(e.term, env))
    if isinstance(e, ECall):
        return ECall(e.sym, tuple(esubst(a, env) for a in e.args))
    if isinstance(e, ESep):
        inner = {k: v for k, v in env.items() if k != e.var}
        return ESep(esubst(e.bound, env), e.var, fm.subst(e.theta, inner))
    if isinstance(e, EBUnion):
        inner = {k: v for k, v in env.items() if k != e.var}
        return EBUnion(esubst(e.bound, env), e.var, e.sort, esubst(e.body, inner))
    if isinstance(e, ECases):
        return ECases(fm.subst(e.guard, env), esubst(e.then, env), esubst(e.els, env))
    if isinstance(e, ECondW):
        inner = {k: v for k, v in env.items() if k != e.xvar}
        return ECondW(
            fm.subst(e.phi, inner),
            e.xvar,
            esubst(e.g, env),
            esubst(e.h, inner),
            esubst(e.then, env),
            esubst(e.els, env),
        )
    if isinstance(e, ESepW):
        inner = {k: v for k, v in env.items() if k != e.var}
        return ESepW(
            esubst(e.bound, env),
            e.var,
            fm.subst(e.plain, inner),
            e.phi,
            esubst(e.cand, inner),
        )
    raise TypeError(f"not an expression: {e!r}")


def efree(e) -> set:
    if isinstance(e, EVar):
        return {e.name}
    if isinstance(e, ETerm):
        return fm.term_vars(e.term)
    if isinstance(e, ECall):
        out: set = set()
        for a in e.args:
            out |= efree(a)
        return out
    if isinstance(e, ESep):
        return efree(e.bound) | (fm.free_vars(e.theta) - {e.var})
    if isinstance(e, EBUnion):
        return efree(e.bound) | (efree(e.body) - {e.var})
    if isinstance(e, ECases):
        return fm.free_vars(e.guard) | efree(e.then) | efree(e.els)
    if isinstance(e, ECondW):
        out = efree(e.g) | efree(e.then) | efree(e.els)
        out |= (fm.free_vars(e.phi) | efree(e.h)) - {e.xvar}
        return out
    if isinstance(e, ESepW):
        out = efree(e.bound)
        out |= (fm.free_vars(e.plain) | efree(e.cand) | fm.free_vars(e.phi)) - {e.var}
        return out
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------- compilation


@dataclass(frozen=True)
class Ctx:
    normals: tuple
    safes: tuple

    def params(self):
        return self.normals + self.safes


class Emitter:
    """Compiles IR expressions into named definitions in a registry."""

    def __init__(self, registry, split: bool, klass: str):
        self.reg = registry
        self.split = split
        self.klass = klass
        self.esort = fm.SAFE if split else fm.NORMAL
        self.defs: list = []
        self.count = 0

    def fresh(self, hint: str) -> str:
        self.count += 1
        return self.reg.fresh_name(f"{hint}{self.count}")

    def register(self, fdef: cl.FunctionDef):
        self.reg.register_def(fdef)
        self.defs.append(fdef)
        return fdef

    def extend(self, ctx: Ctx, names, sort=None) -> Ctx:
        sort = sort or self.esort
        if sort == fm.NORMAL:
            return Ctx(ctx.normals + tuple(names), ctx.safes)
        return Ctx(ctx.normals, ctx.safes + tuple(names))

    def var_term(self, name: str, ctx: Ctx) -> Var:
        if not self.split:
            return Var(name)
        return Var(name, fm.NORMAL if name in ctx.normals else fm.SAFE)

    # -- expression to term (for guard formulas and conditions)

    def to_term(self, e, ctx: Ctx):
        if isinstance(e, EVar):
            return self.var_term(e.name, ctx)
        if isinstance(e, ETerm):
            return e.term
        if isinstance(e, ECall):
            dn, ds = self.reg.arity(e.sym)
            args = [self.to_term(a, ctx) for a in e.args]
            if len(args) != dn + ds:
                raise ExtractError(f"{e.sym} arity mismatch in term conversion")
            return App(e.sym, tuple(args[:dn]), tuple(args[dn:]))
        name = self.define(self.fresh("aux"), ctx, e)
        dn, ds = self.reg.arity(name)
        params = ctx.params()
        return App(
            name,
            tuple(self.var_term(p, ctx) for p in params[:dn]),
            tuple(self.var_term(p, ctx) for p in params[dn:]),
        )

    # -- compile an expression into a named definition

    def define(self, name: str, ctx: Ctx, e) -> str:
        body = self.body_scheme(e, ctx)
        self.register(cl.FunctionDef(name, ctx.normals, ctx.safes, body, self.klass))
        return name

    def body_scheme(self, e, ctx: Ctx):
        """Scheme usable at a definition body with ctx's parameters."""
        if isinstance(e, ESep):
            cname = f"%C{self.count}"
            inner = self.extend(ctx, [cname])
            sepname = self.fresh("sep")
            self.register(
                cl.FunctionDef(sepname, inner.normals, inner.safes, cl.Sep(e.var, e.theta), self.klass)
            )
            return self.call_scheme(sepname, [EVar(p) for p in ctx.params()] + [e.bound], ctx)
        if isinstance(e, ECases):
            return cl.Cases(e.guard, self.body_scheme(e.then, ctx), self.body_scheme(e.els, ctx))
        if isinstance(e, ECondW):
            gname = self.define(self.fresh("g"), ctx, e.g)
            hctx = self.extend(ctx, [e.xvar], fm.NORMAL)
            hname = self.define(self.fresh("h"), hctx, e.h)
            return cl.CondCases(
                e.phi,
                e.xvar,
                self.call_scheme(gname, [EVar(p) for p in ctx.params()], ctx),
                self.call_scheme(hname, [EVar(p) for p in hctx.params()], hctx),
                self.body_scheme(e.then, ctx),
                self.body_scheme(e.els, ctx),
            )
        if isinstance(e, ESepW):
            vctx = self.extend(ctx, [e.var], fm.SAFE)
            cand_term = self.to_term(e.cand, vctx)
            cname = f"%C{self.count}"
            inner = self.extend(ctx, [cname])
            swname = self.fresh("sepw")
            self.register(
                cl.FunctionDef(
                    swname,
                    inner.normals,
                    inner.safes,
                    cl.SepW(e.var, e.plain, e.phi, cand_term),
                    self.klass,
                )
            )
            return self.call_scheme(swname, [EVar(p) for p in ctx.params()] + [e.bound], ctx)
        return self.compile(e, ctx)

    def compile(self, e, ctx: Ctx):
        if isinstance(e, EVar):
            if e.name in ctx.normals:
                return cl.Proj("n", ctx.normals.index(e.name))
            if e.name in ctx.safes:
                return cl.Proj("s", ctx.safes.index(e.name))
            raise ExtractError(f"unbound variable {e.name} in an emitted function")
        if isinstance(e, ETerm):
            return self.term_scheme(e.term, ctx)
        if isinstance(e, ECall):
            return self.call_scheme(e.sym, list(e.args), ctx)
        if isinstance(e, EBUnion):
            if self.split and e.sort == fm.NORMAL:
                return self.compile(self.normal_bunion(e, ctx), ctx)
            bctx = self.extend(ctx, [e.var])
            gname = self.define(self.fresh("bu"), bctx, e.body)
            node = cl.BUnion(cl.Ref(gname))
            args = [EVar(p) for p in ctx.params()] + [e.bound]
            return self.wire(node, args, len(bctx.normals), len(bctx.safes), ctx)
        if isinstance(e, (ESep, ECases, ECondW, ESepW)):
            name = self.define(self.fresh("aux"), ctx, e)
            return self.call_scheme(name, [EVar(p) for p in ctx.params()], ctx)
        raise TypeError(f"cannot compile {e!r}")

    def term_scheme(self, t, ctx: Ctx):
        if isinstance(t, fm.Zero):
            return cl.ZeroF()
        if isinstance(t, Var):
            return self.compile(EVar(t.name), ctx)
        return self.call_scheme(t.symbol, [ETerm(x) for x in t.normals + t.safes], ctx)

    def call_scheme(self, sym: str, args: list, ctx: Ctx):
        dn, ds = self.reg.arity(sym)
        if len(args) != dn + ds:
            raise ExtractError(f"{sym}: arity mismatch ({len(args)} for {dn}+{ds})")
        node = cl.Ref(sym) if sym in self.reg.defs else cl.OracleRef(sym)
        return self.wire(node, args, dn, ds, ctx)

    def wire(self, node, args: list, dn: int, ds: int, ctx: Ctx):
        compiled = [self.compile(a, ctx) for a in args]
        if not self.split:
            return cl.Comp(node, tuple(compiled))
        for a in args[:dn]:
            if efree(a) & set(ctx.safes):
                raise ExtractError("safe value flows into a normal slot")
        return cl.SafeComp(node, tuple(compiled[:dn]), tuple(compiled[dn:]))

    # -- bounded union over a normal variable: a recursion accumulator

    def normal_bunion(self, e: EBUnion, ctx: Ctx) -> Expr:
        """∪{body(v) : v ∈ bound} with v normal: accumulate over the
        transitive closure of the bound value, guarded by membership."""
        if efree(e.bound) & set(ctx.safes):
            raise UnsupportedShape(
                "bounded union over a normal variable needs a normal-only bound"
            )
        wname = f"%W{self.count}"
        ename = f"%e{self.count}"
        anormals = (e.var,) + ctx.normals
        asafes = ctx.safes + (wname,)
        guarded = ECases(In(Var(e.var, fm.NORMAL), Var(wname, fm.SAFE)), e.body, E0)
        step = ECall("un", (ECall("pr", (guarded, ECall("un", (EVar(ename),)))),))
        sctx = Ctx(anormals, asafes + (ename,))
        stepname = self.define(self.fresh("accstep"), sctx, step)
        accname = self.fresh("acc")
        self.register(
            cl.FunctionDef(accname, anormals, asafes, cl.PredRec(cl.Ref(stepname)), self.klass)
        )
        callargs = (
            [e.bound]
            + [EVar(p) for p in ctx.normals]
            + [EVar(p) for p in ctx.safes]
            + [e.bound]
        )
        return ECall(accname, tuple(callargs))


# ---------------------------------------------------------------- contexts and shapes


def seq_var_sorts(seq) -> dict:
    sorts: dict = {}

    def note(v: Var):
        if v.sort == fm.NORMAL:
            sorts[v.name] = fm.NORMAL
        else:
            sorts.setdefault(v.name, v.sort)

    def walk_term(t):
        if isinstance(t, Var):
            note(t)
        elif isinstance(t, App):
            for s in t.normals + t.safes:
                walk_term(s)

    def walk(f):
        if isinstance(f, (fm.DPred, NotDPred)):
            walk_term(f.t)
        elif isinstance(f, fm.LITERALS):
            walk_term(f.t)
            walk_term(f.s)
        elif isinstance(f, (Or, And)):
            walk(f.a)
            walk(f.b)
        elif isinstance(f, (BEx, BAll)):
            walk_term(f.bound)
            walk(f.body)
        else:
            walk(f.body)

    for f in seq:
        walk(f)
    return sorts


def _wkey(name: str):
    return (len(name), name)


def gamma_shape(f, bang: bool) -> bool:
    """Is the sequent formula the negation of a Σ(!)-side hypothesis?"""
    if bang:
        if isinstance(f, AllBangNeg) and fm.is_delta0(f.body):
            return True
        return (
            isinstance(f, BEx)
            and isinstance(f.body, AllBangNeg)
            and fm.is_delta0(f.body.body)
        )
    if fm.classify(f) is fm.FormulaClass.PI1:
        return True
    if isinstance(f, BEx):
        body = f.body
        seen = False
        while isinstance(body, All):
            seen = True
            body = body.body
        return seen and fm.is_delta0(body)
    return False


def delta_shape(f, bang: bool) -> bool:
    if bang:
        return isinstance(f, ExBang) and fm.is_delta0(f.body)
    return fm.classify(f) is fm.FormulaClass.SIGMA1


def _is_du_shape(phi) -> bool:
    return ca._is_notunique_shape(phi)


def gamma_hypothesis(f):
    return negate(f)


# ---------------------------------------------------------------- bundle


@dataclass
class NodeResult:
    fns: dict  # Δ-side formula -> Expr
    cond: object | None = None


@dataclass
class WitnessBundle:
    theory: ca.TheoryId
    klass: str
    ctx: Ctx
    gamma: tuple  # (sequent formula, hypothesis σ, witness variable name)
    delta: tuple  # (formula, emitted definition name)
    delta0: tuple
    du: tuple
    psi: tuple
    dlits: tuple
    condition: object | None
    defs: tuple
    registry: object
    end_seq: frozenset = frozenset()


class _Extract:
    def __init__(self, deriv: Derivation, registry, phi_witnesses=None):
        self.deriv = deriv
        self.tag = deriv.theory.tag
        self.bang = self.tag == ca.T3
        self.split = self.tag in (ca.T2D, ca.T3)
        klass = {ca.T0: cl.RUD, ca.T1: cl.PRIMREC, ca.T2D: cl.SRSF, ca.T3: cl.PCSF_IOTA}[
            self.tag
        ]
        self.emit = Emitter(registry, self.split, klass)
        self.phi_witnesses = phi_witnesses or {}
        self.wcount = 0

    # -- bookkeeping

    def fresh_wvar(self) -> str:
        self.wcount += 1
        return f"%b{self.wcount}"

    def wpred(self, sigma, bname: str, cond=None):
        if self.bang:
            return fm.witness_bang_predicate(sigma, Var(bname, fm.SAFE), cond or C0)
        return fm.witness_predicate(sigma, Var(bname, fm.SAFE))

    def node_ctx(self, node: Node) -> Ctx:
        fv = ca.seq_free_vars(node.seq)
        if not self.split:
            return Ctx(tuple(sorted(fv)), ())
        sorts = seq_var_sorts(node.seq)
        dnames = {
            f.t.name for f in node.seq if isinstance(f, NotDPred) and isinstance(f.t, Var)
        }
        normals = tuple(sorted(v for v in fv if sorts.get(v) == fm.NORMAL or v in dnames))
        safes = tuple(sorted(v for v in fv if v not in normals))
        return Ctx(normals, safes)

    def ctx_at(self, node: Node, wmap: dict) -> Ctx:
        base = self.node_ctx(node)
        wvars = tuple(sorted(set(wmap.values()), key=_wkey))
        if self.split:
            return Ctx(base.normals, base.safes + wvars)
        return Ctx(base.normals + wvars, ())

    def deltas(self, node: Node) -> list:
        return [f for f in ca.seq_sorted(node.seq) if delta_shape(f, self.bang)]

    def child_wmap(self, child: Node, wmap: dict, fresh: dict | None = None) -> dict:
        out = {}
        for f in child.seq:
            if gamma_shape(f, self.bang):
                if f in wmap:
                    out[f] = wmap[f]
                elif fresh is not None and f in fresh:
                    out[f] = fresh[f]
                else:
                    out[f] = self.fresh_wvar()
        return out

    # -- entry

    def run(self) -> WitnessBundle:
        if not ca.is_cut_free(self.deriv):
            raise NotCutFree("extraction requires a cut-free derivation")
        audit = ca.audit_formula_occurrences(self.deriv)
        if audit:
            raise AuditFailed("; ".join(audit[:3]))
        root = self.deriv.root
        wmap: dict = {}
        for f in ca.seq_sorted(root.seq):
            if gamma_shape(f, self.bang):
                wmap[f] = self.fresh_wvar()
        res = self.walk(root, wmap)
        full = self.ctx_at(root, wmap)
        gamma, delta, delta0, du, psi, dlits = [], [], [], [], [], []
        for f in ca.seq_sorted(root.seq):
            if f in wmap:
                gamma.append((f, gamma_hypothesis(f), wmap[f]))
            elif isinstance(f, NotDPred):
                dlits.append(f.t)
            elif delta_shape(f, self.bang):
                name = self.emit.define(self.emit.fresh("w"), full, res.fns.get(f, E0))
                delta.append((f, name))
            elif self.bang and _is_du_shape(f):
                du.append(f)
            elif self.bang and fm.classify(f) is fm.FormulaClass.SIGMA1:
                psi.append(f)
            elif fm.is_delta0(f):
                delta0.append(f)
            else:
                raise UnsupportedShape(
                    f"end-sequent formula outside the witnessing shapes: {fm.show_formula(f)}"
                )
        return WitnessBundle(
            self.deriv.theory,
            self.emit.klass,
            full,
            tuple(gamma),
            tuple(delta),
            tuple(delta0),
            tuple(du),
            tuple(psi),
            tuple(dlits),
            res.cond if self.bang else None,
            tuple(self.emit.defs),
            self.emit.reg,
            root.seq,
        )

    # -- dispatch

    def walk(self, node: Node, wmap: dict) -> NodeResult:
        handler = getattr(self, "x_" + node.rule.rule, None)
        if handler is None:
            raise UnsupportedShape(f"no extraction case for rule {node.rule.rule}")
        res = handler(node, wmap)
        if self.bang and res.cond is None:
            res.cond = C0
        return res

    def passthrough(self, node: Node, wmap: dict, child: Node, env=None) -> NodeResult:
        sub = self.walk(child, self.child_wmap(child, wmap))
        fns = {}
        for f in self.deltas(node):
            e = sub.fns.get(f, E0)
            fns[f] = esubst(e, env) if env else e
        cond = sub.cond
        if cond is not None and env:
            cond = cond_subst(cond, env)
        return NodeResult(fns, cond)

    def branch_merge(self, node, wmap, guard, child_then, child_els, env_then=None, env_els=None):
        """Δ0-guarded case split between two premises: if the guard holds the
        then-premise's disjunction fires, otherwise the else-premise's."""
        a = self.walk(child_then, self.child_wmap(child_then, wmap))
        b = self.walk(child_els, self.child_wmap(child_els, wmap))
        fns = {}
        for f in self.deltas(node):
            ea = esubst(a.fns.get(f, E0), env_then or {})
            eb = esubst(b.fns.get(f, E0), env_els or {})
            fns[f] = ea if ea == eb else ECases(guard, ea, eb)
        cond = None
        if self.bang:
            cnd_a = cond_subst(a.cond or C0, env_then or {})
            cnd_b = cond_subst(b.cond or C0, env_els or {})
            cond = OrCond(cnd_a, cnd_b)
        return NodeResult(fns, cond)

    def merge_candidates(self, delta, cand1, cand2, ctx: Ctx):
        """Contraction: definition by cases on the witness predicate of the
        first candidate, so contracted goals keep a single function."""
        if cand2 == E0 or cand1 == cand2:
            return cand1
        if self.bang:
            return ECondW(delta, "%mx", ECall("pr", (E0, E0)), cand1, cand1, cand2)
        b = fm.fresh_var("m", fm.SAFE)
        w = self.wpred(delta, b.name)
        t1 = self.emit.to_term(cand1, ctx)
        return ECases(subst_var(w, b.name, t1), cand1, cand2)

    def intersect_witnesses(self, delta, h):
        """h ∩ {tuple-coded witnesses of delta}, as a separation."""
        d = fm.fresh_var("d", fm.SAFE)
        vs, matrix = fm.ex_block(delta)
        projs = fm.tuple_projections(Var(d.name, fm.SAFE), len(vs))
        inner = fm.subst(matrix, {v.name: p for v, p in zip(vs, projs)})
        return ESep(h, d.name, inner)

    # -- leaf

    def x_init(self, node: Node, wmap: dict) -> NodeResult:
        return NodeResult({f: E0 for f in self.deltas(node)}, C0)

    # -- propositional

    def x_or(self, node: Node, wmap: dict) -> NodeResult:
        p = node.rule.principal[0]
        if not fm.is_delta0(p):
            raise UnsupportedShape("disjunction principal outside Δ0")
        return self.passthrough(node, wmap, node.children[0])

    def x_and(self, node: Node, wmap: dict) -> NodeResult:
        p = node.rule.principal[0]
        if not fm.is_delta0(p):
            raise UnsupportedShape("conjunction principal outside Δ0")
        return self.branch_merge(node, wmap, p.a, node.children[1], node.children[0])

    def x_bex(self, node: Node, wmap: dict) -> NodeResult:
        p = node.rule.principal[0]
        if not fm.is_delta0(p):
            raise UnsupportedShape("bounded-∃ principal outside Δ0")
        s = node.rule.terms[0]
        return self.branch_merge(node, wmap, In(s, p.bound), node.children[1], node.children[0])

    # -- (b∀): union over the bound, or the ι device in the unique setting

    def x_ball(self, node: Node, wmap: dict) -> NodeResult:
        p = node.rule.principal[0]
        if not fm.is_delta0(p):
            raise UnsupportedShape("bounded-∀ principal outside Δ0 in extraction")
        a = node.rule.eigen[0]
        child = node.children[0]
        cmap = self.child_wmap(child, wmap)
        sub = self.walk(child, cmap)
        fns = {}
        for f in self.deltas(node):
            h = sub.fns.get(f, E0)
            if self.bang:
                fns[f] = self.filtered_iota(
                    f, ETerm(p.bound), a.name, h, _drop(self.ctx_at(child, cmap), a.name)
                )
            else:
                fns[f] = EBUnion(
                    ETerm(p.bound),
                    a.name,
                    fm.SAFE if self.split else fm.NORMAL,
                    self.intersect_witnesses(f, h),
                )
        cond = None
        if self.bang:
            c0 = sub.cond or C0
            if a.name in cond_vars(c0):
                cond = bind(c0, Var(a.name, a.sort), p.bound, child.seq)
            else:
                cond = c0
        return NodeResult(fns, cond)

    def filtered_iota(self, delta, bound: Expr, var: str, k: Expr, hctx: Ctx):
        """ι over {k(v) : v ∈ bound, w!_delta(k(v))}.
        The ι scheme itself maps the filtered set through k, and the
        per-element unique-witness guard keeps the range a singleton."""
        kctx = Ctx(hctx.normals, hctx.safes + (var,)) if self.split else Ctx(
            hctx.normals + (var,), hctx.safes
        )
        hname = self.emit.define(self.emit.fresh("h"), kctx, k)
        dn, _ = self.emit.reg.arity(hname)
        ordered = [self.emit.var_term(p, kctx) for p in kctx.params()]
        cand = App(hname, tuple(ordered[:dn]), tuple(ordered[dn:]))
        vq = Var(var, fm.SAFE if self.split else fm.PLAIN)
        filtered = ESepW(bound, var, Eq(vq, vq), delta, ETerm(cand))
        iname = self.emit.fresh("iota")
        cpar = f"%C{self.emit.count}"
        ictx = Ctx(hctx.normals, hctx.safes + (cpar,))
        self.emit.register(
            cl.FunctionDef(iname, ictx.normals, ictx.safes, cl.Iota(cl.Ref(hname)), self.emit.klass)
        )
        return ECall(iname, tuple(EVar(p) for p in hctx.params()) + (filtered,))

    # -- unbounded introductions

    def x_ex(self, node: Node, wmap: dict) -> NodeResult:
        p = node.rule.principal[0]
        child = node.children[0]
        sub = self.walk(child, self.child_wmap(child, wmap))
        terms = node.rule.terms
        body = p
        opened = []
        for _ in terms:
            opened.append(body.v.name)
            body = body.body
        inst = fm.subst(body, dict(zip(opened, terms)))
        if self.bang:
            cond = sub.cond or C0
            if _is_du_shape(p) and len(terms) == 2:
                cond = OrCond(OrCond(cond, Point(terms[0])), Point(terms[1]))
            fns = {f: sub.fns.get(f, E0) for f in self.deltas(node)}
            return NodeResult(fns, cond)
        fns = {}
        for f in self.deltas(node):
            if f != p:
                fns[f] = sub.fns.get(f, E0)
        prior = sub.fns.get(p) if p in child.seq else None
        if fm.is_delta0(inst):
            tup = fm.tuple_term(list(terms))
            cand = ECall("pr", (ETerm(tup), ETerm(tup)))
            fns[p] = ECases(inst, cand, prior if prior is not None else E0)
        else:
            inner = sub.fns.get(inst, E0)
            d = fm.fresh_var("d", fm.SAFE)
            tup = fm.tuple_term(list(terms) + [Var(d.name, fm.SAFE)])
            lifted = EBUnion(
                inner,
                d.name,
                fm.SAFE if self.split else fm.NORMAL,
                ECall("pr", (ETerm(tup), ETerm(tup))),
            )
            if prior is not None:
                fns[p] = self.merge_candidates(p, lifted, prior, self.ctx_at(node, wmap))
            else:
                fns[p] = lifted
        return NodeResult(fns, None)

    def x_all(self, node: Node, wmap: dict) -> NodeResult:
        raise UnsupportedShape("the unbounded ∀ rule does not occur in extractable derivations")

    def x_cut(self, node: Node, wmap: dict) -> NodeResult:
        raise NotCutFree("cut in derivation")

    # -- introduction of a hypothesis-side Π formula

    def x_bexall(self, node: Node, wmap: dict) -> NodeResult:
        p = node.rule.principal[0]
        if p not in wmap:
            raise UnsupportedShape("bexall principal is not a hypothesis-side formula")
        bvar = wmap[p]
        s = node.rule.terms[0]
        eigens = node.rule.eigen
        c0, c1 = node.children
        sub0 = self.walk(c0, self.child_wmap(c0, wmap))
        sub1 = self.walk(c1, self.child_wmap(c1, wmap))
        bs = App("apply", (), (Var(bvar, fm.SAFE if self.split else fm.PLAIN), s))
        fns = {}
        for f in self.deltas(node):
            h = sub1.fns.get(f, E0)
            d = fm.fresh_var("d", fm.SAFE)
            projs = fm.tuple_projections(Var(d.name, fm.SAFE), len(eigens))
            env = {e.name: t for e, t in zip(eigens, projs)}
            inner = self.intersect_witnesses(f, esubst(h, env))
            unioned = EBUnion(ETerm(bs), d.name, fm.SAFE if self.split else fm.NORMAL, inner)
            fns[f] = ECases(In(s, p.bound), unioned, sub0.fns.get(f, E0))
        return NodeResult(fns, None)

    def x_ballex(self, node: Node, wmap: dict) -> NodeResult:
        raise UnsupportedShape("positive Σ formulas are outside the witnessing shapes")

    # -- set existence rules: substitute the witnessed set for the eigenvariable

    def x_pair(self, node: Node, wmap: dict) -> NodeResult:
        t, s = node.rule.terms
        a = node.rule.eigen[0]
        return self.passthrough(node, wmap, node.children[0], env={a.name: App("pr", (), (t, s))})

    def x_union(self, node: Node, wmap: dict) -> NodeResult:
        t = node.rule.terms[0]
        c = node.rule.eigen[0]
        return self.passthrough(node, wmap, node.children[0], env={c.name: App("un", (), (t,))})

    def x_sep(self, node: Node, wmap: dict) -> NodeResult:
        t = node.rule.terms[0]
        a = node.rule.eigen[0]
        phi, slot = node.rule.formula, node.rule.slots[0]
        ctx = self.ctx_at(node, wmap)
        val = self.emit.to_term(ESep(ETerm(t), slot, phi), ctx)
        return self.passthrough(node, wmap, node.children[0], env={a.name: val})

    # -- oracle and symbol axioms: the premise extra is false, so it passes through

    def x_oracle(self, node: Node, wmap: dict) -> NodeResult:
        return self.passthrough(node, wmap, node.children[0])

    def x_trcl(self, node: Node, wmap: dict) -> NodeResult:
        return self.passthrough(node, wmap, node.children[0])

    def x_deff(self, node: Node, wmap: dict) -> NodeResult:
        return self.passthrough(node, wmap, node.children[0])

    def x_eqd(self, node: Node, wmap: dict) -> NodeResult:
        s, t = node.rule.terms
        return self.branch_merge(node, wmap, Eq(s, t), node.children[1], node.children[0])

    def x_trd(self, node: Node, wmap: dict) -> NodeResult:
        s, t = node.rule.terms
        return self.branch_merge(node, wmap, In(s, t), node.children[1], node.children[0])

    # -- collection: case split between per-point and collected-bound witnesses

    def x_coll(self, node: Node, wmap: dict) -> NodeResult:
        t = node.rule.terms[0]
        x, ceig = node.rule.eigen
        phi = node.rule.formula
        xs, asl = node.rule.slots
        c0, c1 = node.children
        map0 = self.child_wmap(c0, wmap)
        map1 = self.child_wmap(c1, wmap)
        sub0 = self.walk(c0, map0)
        sub1 = self.walk(c1, map1)
        ctx0 = self.ctx_at(c0, map0)
        ctx = self.ctx_at(node, wmap)
        usort = fm.SAFE if self.split else fm.NORMAL
        exphi = Ex(Var(asl), subst_var(phi, xs, Var(x.name, x.sort)))
        h = sub0.fns.get(exphi, E0)
        hname = self.emit.define(self.emit.fresh("h"), ctx0, h)
        cval = EBUnion(
            ETerm(t),
            x.name,
            usort,
            ECall(hname, tuple(EVar(p) for p in ctx0.params())),
        )
        c1term = self.emit.to_term(cval, ctx)
        fns = {}
        for f in self.deltas(node):
            k0sep = self.intersect_witnesses(f, sub0.fns.get(f, E0))
            kname = self.emit.define(self.emit.fresh("k"), ctx0, k0sep)
            kapp = App(
                kname,
                tuple(self.emit.var_term(p, ctx0) for p in ctx0.normals),
                tuple(self.emit.var_term(p, ctx0) for p in ctx0.safes),
            )
            guard = BEx(Var(x.name, x.sort), t, Neq(kapp, ZERO))
            a_branch = EBUnion(
                ETerm(t), x.name, usort, ECall(kname, tuple(EVar(p) for p in ctx0.params()))
            )
            else_branch = esubst(sub1.fns.get(f, E0), {ceig.name: c1term})
            fns[f] = ECases(guard, a_branch, else_branch)
        return NodeResult(fns, None)

    # -- foundation: course-of-values recursion over TC(t∪{t})

    def x_fund(self, node: Node, wmap: dict) -> NodeResult:
        return self.fund_common(node, wmap)

    def x_dfund(self, node: Node, wmap: dict) -> NodeResult:
        return self.fund_common(node, wmap)

    def fund_common(self, node: Node, wmap: dict) -> NodeResult:
        t = node.rule.terms[0]
        y, aeig = node.rule.eigen
        phi = node.rule.formula
        xs, asl = node.rule.slots
        c0, c1 = node.children
        yv = Var(y.name, y.sort)
        pi = BEx(Var(xs), yv, All(Var(asl), negate(phi)))
        fresh = {pi: self.fresh_wvar()}
        map0 = self.child_wmap(c0, wmap, fresh)
        map1 = self.child_wmap(c1, wmap)
        sub0 = self.walk(c0, map0)
        sub1 = self.walk(c1, map1)
        brec = fresh[pi]
        exphi = Ex(Var(asl), subst_var(phi, xs, yv))
        h = sub0.fns.get(exphi, E0)
        ctx0 = self.ctx_at(c0, map0)
        gname, graphname = self.emit_graph_recursion(y, ctx0, brec, h)
        kctx = _drop(ctx0, brec)
        bound = App("tc1", (t,), ())

        def rcall(sym, arg):
            # recursion-emitted definitions take the recursion variable first
            names = [arg] + [
                self.emit.var_term(p, kctx) for p in kctx.params() if p != y.name
            ]
            dn, _ = self.emit.reg.arity(sym)
            return App(sym, tuple(names[:dn]), tuple(names[dn:]))

        def kcall_term(sym, arg):
            names = [
                arg if p == y.name else self.emit.var_term(p, kctx)
                for p in kctx.params()
            ]
            dn, _ = self.emit.reg.arity(sym)
            return App(sym, tuple(names[:dn]), tuple(names[dn:]))

        fns = {}
        usort = fm.NORMAL
        for f in self.deltas(node):
            k1 = esubst(
                sub0.fns.get(f, E0), {brec: rcall(graphname, Var(y.name, y.sort))}
            )
            k1name = self.emit.define(
                self.emit.fresh("k"), kctx, self.intersect_witnesses(f, k1)
            )
            xq = fm.fresh_var("x", fm.NORMAL if self.split else fm.PLAIN)
            guard = BEx(xq, bound, Neq(kcall_term(k1name, Var(xq.name, xq.sort)), ZERO))
            a_branch = EBUnion(
                ETerm(bound),
                y.name,
                usort,
                ECall(k1name, tuple(EVar(p) for p in kctx.params())),
            )
            p1 = sub1.fns.get(f, E0)
            gcall_args = [ETerm(t)] + [
                EVar(p) for p in kctx.params() if p != y.name
            ]
            q = EBUnion(
                ECall(gname, tuple(gcall_args)),
                aeig.name,
                fm.SAFE if self.split else fm.NORMAL,
                self.intersect_witnesses(f, p1),
            )
            fns[f] = ECases(guard, a_branch, q)
        return NodeResult(fns, None)

    def emit_graph_recursion(self, y: Var, ctx0: Ctx, brec: str, h: Expr):
        """g(y,⋯) = h(y,⋯, g↾y) by paired set recursion; also the graph
        function y ↦ {⟨z, g(z)⟩ : z ∈ y}."""
        base = _drop(ctx0, brec)
        normals = (y.name,) + tuple(p for p in base.normals if p != y.name)
        safes = tuple(p for p in base.safes if p != y.name)
        rctx = Ctx(normals, safes)
        ename = f"%e{self.emit.count}"
        step = ECall("kpair", (EVar(y.name), esubst(h, {brec: Var(ename, fm.SAFE if self.split else fm.PLAIN)})))
        sctx = self.emit.extend(rctx, [ename])
        stepname = self.emit.define(self.emit.fresh("recstep"), sctx, step)
        Gname = self.emit.fresh("G")
        rec = cl.PredRec(cl.Ref(stepname)) if self.split else cl.SetRec(cl.Ref(stepname))
        self.emit.register(cl.FunctionDef(Gname, rctx.normals, rctx.safes, rec, self.emit.klass))
        gname = self.emit.define(
            self.emit.fresh("g"),
            rctx,
            ECall("snd", (ECall(Gname, tuple(EVar(p) for p in rctx.params())),)),
        )
        z = f"%z{self.emit.count}"
        gz = ECall(
            Gname, tuple(EVar(z) if p == y.name else EVar(p) for p in rctx.params())
        )
        graphname = self.emit.define(
            self.emit.fresh("graph"),
            rctx,
            EBUnion(EVar(y.name), z, fm.NORMAL, ECall("pr", (gz, gz))),
        )
        return gname, graphname

    # -- Φ rules: compose with the licensed witness function

    def x_phirule(self, node: Node, wmap: dict) -> NodeResult:
        idx = node.rule.index
        if idx is None or idx not in self.phi_witnesses:
            raise MissingPhiWitness(f"no witness function for Φ rule index {idx}")
        fdef = self.phi_witnesses[idx]
        y = node.rule.eigen[0]
        child = node.children[0]
        cmap = self.child_wmap(child, wmap)
        sub = self.walk(child, cmap)
        fical = App(fdef.name, tuple(node.rule.terms), ())
        if self.bang:
            env = {y.name: fical}
            fns = {f: esubst(sub.fns.get(f, E0), env) for f in self.deltas(node)}
            return NodeResult(fns, cond_subst(sub.cond or C0, env))
        fns = {}
        for f in self.deltas(node):
            h = sub.fns.get(f, E0)
            fns[f] = EBUnion(
                ETerm(fical),
                y.name,
                fm.NORMAL if self.split else fm.NORMAL,
                self.intersect_witnesses(f, h),
            )
        return NodeResult(fns, None)

    # -- T3 unique-quantifier rules

    def x_exu(self, node: Node, wmap: dict) -> NodeResult:
        # the uniqueness premise contributes derivability only; its witness
        # functions mention the eigenvariables and are discarded (the grid
        # check guards the composition)
        p = node.rule.principal[0]
        s = node.rule.terms[0]
        c0, c1 = node.children
        sub0 = self.walk(c0, self.child_wmap(c0, wmap))
        sub1 = self.walk(c1, self.child_wmap(c1, wmap))
        fns = {}
        for f in self.deltas(node):
            if f == p:
                prior = sub0.fns.get(p) if p in c0.seq else None
                cand = ETerm(s)
                if prior is not None:
                    fns[f] = self.merge_candidates(p, cand, prior, self.ctx_at(node, wmap))
                else:
                    fns[f] = cand
            else:
                fns[f] = sub0.fns.get(f, E0)
        # the uniqueness premise contributes derivability, not witnesses or
        # class points; its condition would mention its eigenvariables
        cond = OrCond(sub0.cond or C0, Point(s))
        return NodeResult(fns, cond)

    def x_allu(self, node: Node, wmap: dict) -> NodeResult:
        p = node.rule.principal[0]
        if p not in wmap:
            raise UnsupportedShape("∀!-principal is not a hypothesis-side formula")
        b = node.rule.eigen[0]
        child = node.children[0]
        sub = self.walk(child, self.child_wmap(child, wmap))
        env = {b.name: Var(wmap[p], fm.SAFE)}
        fns = {f: esubst(sub.fns.get(f, E0), env) for f in self.deltas(node)}
        return NodeResult(fns, cond_subst(sub.cond or C0, env))

    def x_bexdallu(self, node: Node, wmap: dict) -> NodeResult:
        p = node.rule.principal[0]
        if p not in wmap:
            raise UnsupportedShape("principal is not a hypothesis-side formula")
        bvar = wmap[p]
        s = node.rule.terms[0]
        a = node.rule.eigen[0]
        c0, c1 = node.children
        sub0 = self.walk(c0, self.child_wmap(c0, wmap))
        sub1 = self.walk(c1, self.child_wmap(c1, wmap))
        bs = App("apply", (), (Var(bvar, fm.SAFE), s))
        env = {a.name: bs}
        fns = {}
        for f in self.deltas(node):
            h1 = esubst(sub1.fns.get(f, E0), env)
            fns[f] = ECases(In(s, p.bound), h1, sub0.fns.get(f, E0))
        cond = OrCond(cond_subst(sub1.cond or C0, env), sub0.cond or C0)
        return NodeResult(fns, cond)

    def x_balldexu(self, node: Node, wmap: dict) -> NodeResult:
        raise UnsupportedShape("positive Σ𝒟! formulas are outside the witnessing shapes")

    # -- replacement: graph the per-point unique witnesses, or ι-filter

    def x_repl(self, node: Node, wmap: dict) -> NodeResult:
        t = node.rule.terms[0]
        x, ceig = node.rule.eigen
        phi = node.rule.formula
        xs, asl = node.rule.slots
        c0, c1 = node.children
        map0 = self.child_wmap(c0, wmap)
        map1 = self.child_wmap(c1, wmap)
        sub0 = self.walk(c0, map0)
        sub1 = self.walk(c1, map1)
        ctx0 = self.ctx_at(c0, map0)
        ctx = self.ctx_at(node, wmap)
        exphi = ExBang(Var(asl), subst_var(phi, xs, Var(x.name, x.sort)))
        h = sub0.fns.get(exphi, E0)
        hname = self.emit.define(self.emit.fresh("h"), ctx0, h)

        def happ(arg):
            others = [p for p in ctx0.params() if p != x.name]
            dn, _ = self.emit.reg.arity(hname)
            names = {p: self.emit.var_term(p, ctx0) for p in others}
            ordered = [arg if p == x.name else names[p] for p in ctx0.params()]
            return App(hname, tuple(ordered[:dn]), tuple(ordered[dn:]))

        z = f"%z{self.emit.count}"
        gz = ECall("kpair", (EVar(z), ETerm(happ(Var(z, fm.NORMAL)))))
        graph = EBUnion(ETerm(t), z, fm.NORMAL, ECall("pr", (gz, gz)))
        graphterm = self.emit.to_term(graph, ctx)
        fns = {}
        for f in self.deltas(node):
            then = esubst(sub1.fns.get(f, E0), {ceig.name: graphterm})
            vname = f"%v{self.emit.count}"
            k = esubst(sub0.fns.get(f, E0), {x.name: Var(vname, fm.SAFE)})
            els = self.filtered_iota(f, ETerm(t), vname, k, _drop(ctx0, x.name))
            fns[f] = ECondW(
                ExBang(Var(asl), phi),
                xs,
                ETerm(t),
                ETerm(happ(Var(xs, fm.NORMAL))),
                then,
                els,
            )
        lam0 = sub0.cond or C0
        if x.name in cond_vars(lam0):
            lam0 = BExCond(Var(x.name, x.sort), t, lam0)
        return NodeResult(fns, OrCond(lam0, sub1.cond or C0))

    # -- unique foundation: recursion with the class threaded through the graph

    def x_ufund(self, node: Node, wmap: dict) -> NodeResult:
        t = node.rule.terms[0]
        y = node.rule.eigen[0]
        phi = node.rule.formula
        xs, asl = node.rule.slots
        c0, c1 = node.children
        yv = Var(y.name, y.sort)
        negphi = negate(phi)
        pigamma = BEx(Var(xs), yv, AllBangNeg(Var(asl), negphi))
        fresh0 = {pigamma: self.fresh_wvar()}
        map0 = self.child_wmap(c0, wmap, fresh0)
        negprincipal = AllBangNeg(Var(asl), subst_var(negphi, xs, t))
        fresh1 = {negprincipal: self.fresh_wvar()}
        map1 = self.child_wmap(c1, wmap, fresh1)
        sub0 = self.walk(c0, map0)
        sub1 = self.walk(c1, map1)
        brec = fresh0[pigamma]
        evar = fresh1[negprincipal]
        exphi = ExBang(Var(asl), subst_var(phi, xs, yv))
        h = sub0.fns.get(exphi, E0)
        ctx0 = self.ctx_at(c0, map0)
        gname, graphname = self.emit_graph_recursion(y, ctx0, brec, h)
        kctx = _drop(ctx0, brec)
        bound = App("tc1", (t,), ())

        def recall(sym, arg):
            dn, _ = self.emit.reg.arity(sym)
            ordered = [arg] + [
                self.emit.var_term(p, kctx) for p in kctx.params() if p != y.name
            ]
            return App(sym, tuple(ordered[:dn]), tuple(ordered[dn:]))

        e1 = recall(gname, t)
        fns = {}
        for f in self.deltas(node):
            then = esubst(sub1.fns.get(f, E0), {evar: e1})
            vname = f"%v{self.emit.count}"
            k = esubst(
                sub0.fns.get(f, E0),
                {
                    brec: recall(graphname, Var(vname, fm.SAFE)),
                    y.name: Var(vname, fm.SAFE),
                },
            )
            els = self.filtered_iota(f, ETerm(bound), vname, k, _drop(kctx, y.name))
            fns[f] = ECondW(
                ExBang(Var(asl), phi),
                xs,
                ETerm(bound),
                ETerm(recall(gname, Var(xs, fm.NORMAL))),
                then,
                els,
            )
        lam0 = cond_subst(sub0.cond or C0, {brec: recall(graphname, Var(y.name, y.sort))})
        if y.name in cond_vars(lam0):
            lam0 = BExCond(Var(y.name, fm.NORMAL), bound, lam0)
        lam1 = cond_subst(sub1.cond or C0, {evar: e1})
        return NodeResult(fns, OrCond(lam0, lam1))


def _drop(ctx: Ctx, name: str) -> Ctx:
    return Ctx(
        tuple(p for p in ctx.normals if p != name),
        tuple(p for p in ctx.safes if p != name),
    )


# ---------------------------------------------------------------- entry points


def extract_T01(deriv: Derivation, registry) -> WitnessBundle:
    if deriv.theory.tag not in (ca.T0, ca.T1):
        raise UnsupportedShape("extract_T01 takes a t0 or t1 derivation")
    _precheck(deriv, registry)
    return _Extract(deriv, registry).run()


def extract_T2(deriv: Derivation, registry, phi_witnesses=None) -> WitnessBundle:
    if deriv.theory.tag != ca.T2D:
        raise UnsupportedShape("extract_T2 takes a t2d derivation")
    _precheck(deriv, registry)
    _check_phi(deriv, phi_witnesses)
    return _Extract(deriv, registry, phi_witnesses).run()


def extract_T3(deriv: Derivation, registry, phi_witnesses=None) -> WitnessBundle:
    if deriv.theory.tag != ca.T3:
        raise UnsupportedShape("extract_T3 takes a t3 derivation")
    _precheck(deriv, registry)
    _check_phi(deriv, phi_witnesses)
    return _Extract(deriv, registry, phi_witnesses).run()


def _precheck(deriv, registry):
    bad = ca.check_derivation(deriv, registry)
    if bad:
        raise UnsupportedShape("derivation does not check: " + bad[0])
    if not ca.is_cut_free(deriv):
        raise NotCutFree("derivation contains cut")
    bad = ca.audit_formula_occurrences(deriv)
    if bad:
        raise AuditFailed(bad[0])


def _check_phi(deriv, phi_witnesses):
    used = set()

    def walk(n):
        if n.rule.rule == "phirule" and n.license is None:
            used.add(n.rule.index)
        for c in n.children:
            walk(c)

    walk(deriv.root)
    for i in sorted(used, key=lambda v: (v is None, v)):
        if phi_witnesses is None or i not in phi_witnesses:
            raise MissingPhiWitness(f"Φ rule {i} has no supplied witness function")


def extract(deriv: Derivation, registry, phi_witnesses=None) -> WitnessBundle:
    tag = deriv.theory.tag
    if tag in (ca.T0, ca.T1):
        return extract_T01(deriv, registry)
    if tag == ca.T2D:
        return extract_T2(deriv, registry, phi_witnesses)
    return extract_T3(deriv, registry, phi_witnesses)


# ---------------------------------------------------------------- submodel stratification


def stratify_submodel(deriv: Derivation, registry, phi_witnesses=None) -> WitnessBundle:
    """Resolve licensed Φ rules bottom-up: extract every license's premise
    derivation recursively, turn its witness into a Φ-witness function, and
    run the base extractor on the stripped derivation."""
    bad = ca.check_derivation(deriv, registry)
    if bad:
        raise UnsupportedShape("derivation does not check: " + bad[0])
    root = deriv.root
    if root.rule.rule == "submodel":
        core, _ = _peel_closure(root.children[0], root.rule)
        sub = Derivation(replace(deriv.theory, budget=0), core)
        return stratify_submodel(sub, registry, phi_witnesses)
    phi = list(deriv.theory.phi)
    witnesses = dict(phi_witnesses or {})

    def strip(n: Node) -> Node:
        children = tuple(strip(c) for c in n.children)
        if n.rule.rule == "phirule" and n.license is not None:
            lic = n.license
            core, entry = _peel_closure(lic.children[0], lic.rule)
            subth = ca.TheoryId(
                deriv.theory.tag,
                deriv.theory.level,
                max(0, deriv.theory.budget - 1),
                tuple(phi),
            )
            bundle = stratify_submodel(Derivation(subth, core), registry, dict(witnesses))
            fdef = phi_witness_function(bundle, entry, registry)
            idx = len(phi)
            phi.append(entry)
            witnesses[idx] = fdef
            return Node(n.seq, replace(n.rule, index=idx), children, None)
        return Node(n.seq, n.rule, children, n.license)

    stripped = strip(root)
    theory = ca.TheoryId(deriv.theory.tag, deriv.theory.level, 0, tuple(phi))
    return extract(Derivation(theory, stripped), registry, witnesses)


def _peel_closure(node: Node, submodel_rule: RuleInstance):
    """Walk down the ∀/∨ introductions of a Submodel premise to the open core."""
    entry = ca.PhiEntry(
        tuple(submodel_rule.slots[:-1]), submodel_rule.slots[-1], submodel_rule.formula
    )
    cur = node
    while cur.rule.rule in ("all", "or") and len(cur.children) == 1:
        cur = cur.children[0]
    return cur, entry


def phi_witness_function(bundle: WitnessBundle, entry: ca.PhiEntry, registry) -> cl.FunctionDef:
    """The Φ-witness f_i(x⃗/−): for T2 the nonempty-witness-set function, for
    T3 the unique witness with the class instantiated at the bundle's λ."""
    if bundle.gamma:
        raise UnsupportedShape("licensed premise has hypothesis-side formulas")
    if len(bundle.delta) != 1:
        raise UnsupportedShape("licensed premise must have exactly one goal formula")
    _, name = bundle.delta[0]
    fdef = bundle.registry.defs[name]
    if bundle.theory.tag == ca.T3:
        fdef = instantiate_class(fdef, bundle.condition, bundle.registry)
    if fdef.safes:
        raise UnsupportedShape("Φ witnesses take normal arguments only")
    if tuple(fdef.normals) != tuple(entry.args):
        fdef = rename_params(fdef, entry.args, bundle.registry)
    return fdef


def rename_params(fdef: cl.FunctionDef, names: tuple, registry) -> cl.FunctionDef:
    if len(fdef.normals) != len(names):
        raise UnsupportedShape(
            f"licensed witness has arity {len(fdef.normals)}, Φ entry wants {len(names)}"
        )
    env = {old: Var(new, fm.NORMAL) for old, new in zip(fdef.normals, names)}
    out = cl.FunctionDef(
        registry.fresh_name(fdef.name + ".r"),
        tuple(names),
        (),
        _scheme_rename(fdef.body, env),
        fdef.klass,
    )
    registry.register_def(out)
    return out


def _scheme_rename(node, env):
    if isinstance(node, cl.Sep):
        return cl.Sep(node.var, fm.subst(node.theta, env))
    if isinstance(node, cl.Cases):
        return cl.Cases(
            fm.subst(node.theta, env),
            _scheme_rename(node.then, env),
            _scheme_rename(node.els, env),
        )
    if isinstance(node, cl.SepW):
        return cl.SepW(
            node.var, fm.subst(node.plain, env), node.phi, fm.term_subst(node.cand, env)
        )
    if isinstance(node, cl.CondCases):
        return cl.CondCases(
            node.phi,
            node.xvar,
            _scheme_rename(node.g, env),
            _scheme_rename(node.h, env),
            _scheme_rename(node.then, env),
            _scheme_rename(node.els, env),
        )
    if isinstance(node, cl.BUnion):
        return cl.BUnion(_scheme_rename(node.g, env))
    if isinstance(node, cl.Comp):
        return cl.Comp(
            _scheme_rename(node.h, env), tuple(_scheme_rename(g, env) for g in node.inners)
        )
    if isinstance(node, cl.SafeComp):
        return cl.SafeComp(
            _scheme_rename(node.h, env),
            tuple(_scheme_rename(g, env) for g in node.rs),
            tuple(_scheme_rename(g, env) for g in node.ts),
        )
    if isinstance(node, (cl.SetRec, cl.PredRec)):
        return type(node)(_scheme_rename(node.h, env))
    if isinstance(node, (cl.Iota, cl.NormalSep)):
        return type(node)(_scheme_rename(node.g, env))
    return node


# ---------------------------------------------------------------- class instantiation


def instantiate_class(fdef: cl.FunctionDef, cond, registry) -> cl.FunctionDef:
    """Replace the class slot X by X_cond; the result is a plain definition
    in the ι-closed predicatively computable class."""
    if cond is None:
        cond = C0
    extra = cond_vars(cond) - set(fdef.params())
    if extra:
        raise UnboundConditionVariable(f"condition mentions {sorted(extra)}")

    def walk(node, owner: cl.FunctionDef):
        if isinstance(node, cl.CondCases):
            b = fm.fresh_var("ic", fm.SAFE)
            w = fm.witness_bang_predicate(node.phi, b, cond)
            gterm = _ref_term(node.g, owner, registry)
            hterm = _ref_term(node.h, owner, registry, extra=(node.xvar,))
            guard = BAll(Var(node.xvar, fm.NORMAL), gterm, subst_var(w, b.name, hterm))
            return cl.Cases(guard, walk(node.then, owner), walk(node.els, owner))
        if isinstance(node, cl.SepW):
            b = fm.fresh_var("ic", fm.SAFE)
            w = fm.witness_bang_predicate(node.phi, b, cond)
            return cl.Sep(node.var, And(node.plain, subst_var(w, b.name, node.cand)))
        if isinstance(node, cl.Cases):
            return cl.Cases(node.theta, walk(node.then, owner), walk(node.els, owner))
        if isinstance(node, cl.BUnion):
            return cl.BUnion(walk(node.g, owner))
        if isinstance(node, cl.Comp):
            return cl.Comp(walk(node.h, owner), tuple(walk(g, owner) for g in node.inners))
        if isinstance(node, cl.SafeComp):
            return cl.SafeComp(
                walk(node.h, owner),
                tuple(walk(g, owner) for g in node.rs),
                tuple(walk(g, owner) for g in node.ts),
            )
        if isinstance(node, (cl.SetRec, cl.PredRec)):
            return type(node)(walk(node.h, owner))
        if isinstance(node, (cl.Iota, cl.NormalSep)):
            return type(node)(walk(node.g, owner))
        if isinstance(node, cl.Ref):
            target = registry.defs[node.name]
            if _has_class_nodes(target.body):
                inst = instantiate_class(target, _restrict_cond(cond, target), registry)
                return cl.Ref(inst.name)
        return node

    out = cl.FunctionDef(
        registry.fresh_name(fdef.name + ".at"),
        fdef.normals,
        fdef.safes,
        walk(fdef.body, fdef),
        cl.PCSF_IOTA,
    )
    registry.register_def(out)
    return out


def _restrict_cond(cond, target: cl.FunctionDef):
    extra = cond_vars(cond) - set(target.params())
    if extra:
        raise UnboundConditionVariable(
            f"condition mentions {sorted(extra)} not among {target.name}'s parameters"
        )
    return cond


def _has_class_nodes(node) -> bool:
    if isinstance(node, (cl.CondCases, cl.SepW)):
        return True
    for attr in ("g", "h", "then", "els"):
        sub = getattr(node, attr, None)
        if sub is not None and cl._is_scheme(sub) and _has_class_nodes(sub):
            return True
    for attr in ("inners", "rs", "ts"):
        for sub in getattr(node, attr, ()):
            if _has_class_nodes(sub):
                return True
    return False


_LEAF_SYMBOL = {cl.PairN: "pr", cl.DiffN: "df", cl.UnionN: "un"}


def _ref_term(node, fdef: cl.FunctionDef, registry, extra=()):
    """A term view of a wired scheme sub-node (references, combinator leaves
    and compositions over projections)."""
    pn = fdef.normals + tuple(extra)
    ps = fdef.safes

    def conv(n):
        if isinstance(n, cl.Proj):
            pool = pn if n.kind == "n" else ps
            return Var(pool[n.index], fm.NORMAL if n.kind == "n" else fm.SAFE)
        if isinstance(n, cl.ZeroF):
            return ZERO
        if isinstance(n, cl.Ref):
            dn, ds = registry.arity(n.name)
            names = list(pn) + list(ps)
            return App(
                n.name,
                tuple(Var(v, fm.NORMAL) for v in names[:dn]),
                tuple(Var(v, fm.SAFE) for v in names[dn : dn + ds]),
            )
        if isinstance(n, (cl.Comp, cl.SafeComp)):
            args = [conv(a) for a in (getattr(n, "inners", ()) or tuple(n.rs) + tuple(n.ts))]
            h = n.h
            if isinstance(h, cl.Ref):
                sym = h.name
            elif isinstance(h, cl.OracleRef):
                sym = h.symbol
            elif type(h) in _LEAF_SYMBOL:
                sym = _LEAF_SYMBOL[type(h)]
            else:
                raise UnsupportedShape("cannot take a term view of this guard part")
            dn, ds = registry.arity(sym)
            return App(sym, tuple(args[:dn]), tuple(args[dn:]))
        raise UnsupportedShape("class-parameterized guard parts must be named references")

    return conv(node)
