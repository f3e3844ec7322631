"""First-order formulas over ∈ and =, in negation normal form.

Terms are variables (sorted normal/safe/plain), the constant 0 and
applications of registered function/oracle symbols.  Formulas carry no
negation node; `negate` computes the de Morgan dual.  `classify` places a
formula in the Δ0/Σ1/Π1/Σ/Σ1!/Σ𝒟! lattice, `check_stratified` enforces the
normal/safe variable discipline, `evaluate` decides truth over HF sets with
unbounded quantifiers truncated to a finite scratch universe, and
`witness_predicate` / `witness_bang_predicate` build the bounded
witness-translation formulas used by extraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from . import hf, sexpr
from .hf import HFSet


class UnknownSymbol(Exception):
    pass


class NotSigma(Exception):
    pass


class NotSigmaBang(Exception):
    pass


NORMAL = "normal"
SAFE = "safe"
PLAIN = "plain"


# ---------------------------------------------------------------- terms


@dataclass(frozen=True)
class Var:
    name: str
    sort: str = PLAIN


@dataclass(frozen=True)
class Zero:
    pass


@dataclass(frozen=True)
class App:
    symbol: str
    normals: tuple = ()
    safes: tuple = ()


Term = "Var | Zero | App"

ZERO = Zero()


def term_vars(t) -> set:
    if isinstance(t, Var):
        return {t.name}
    if isinstance(t, Zero):
        return set()
    out: set = set()
    for s in t.normals + t.safes:
        out |= term_vars(s)
    return out


def term_subst(t, env: Mapping[str, "Term"]):
    if isinstance(t, Var):
        return env.get(t.name, t)
    if isinstance(t, Zero):
        return t
    return App(
        t.symbol,
        tuple(term_subst(s, env) for s in t.normals),
        tuple(term_subst(s, env) for s in t.safes),
    )


# ---------------------------------------------------------------- formulas


@dataclass(frozen=True)
class In:
    t: Term
    s: Term


@dataclass(frozen=True)
class NotIn:
    t: Term
    s: Term


@dataclass(frozen=True)
class Eq:
    t: Term
    s: Term


@dataclass(frozen=True)
class Neq:
    t: Term
    s: Term


@dataclass(frozen=True)
class DPred:
    t: Term


@dataclass(frozen=True)
class NotDPred:
    t: Term


@dataclass(frozen=True)
class Or:
    a: "Formula"
    b: "Formula"


@dataclass(frozen=True)
class And:
    a: "Formula"
    b: "Formula"


@dataclass(frozen=True)
class BEx:
    v: Var
    bound: Term
    body: "Formula"


@dataclass(frozen=True)
class BAll:
    v: Var
    bound: Term
    body: "Formula"


@dataclass(frozen=True)
class Ex:
    v: Var
    body: "Formula"


@dataclass(frozen=True)
class All:
    v: Var
    body: "Formula"


@dataclass(frozen=True)
class ExBang:
    v: Var
    body: "Formula"


@dataclass(frozen=True)
class AllBangNeg:
    """∀!v body, i.e. ¬∃!v ¬body."""

    v: Var
    body: "Formula"


Formula = object

LITERALS = (In, NotIn, Eq, Neq, DPred, NotDPred)
QUANTS = (BEx, BAll, Ex, All, ExBang, AllBangNeg)


def or_all(fs: list) -> Formula:
    if not fs:
        return Neq(ZERO, ZERO)
    out = fs[0]
    for f in fs[1:]:
        out = Or(out, f)
    return out


def and_all(fs: list) -> Formula:
    if not fs:
        return Eq(ZERO, ZERO)
    out = fs[0]
    for f in fs[1:]:
        out = And(out, f)
    return out


def negate(phi: Formula) -> Formula:
    if isinstance(phi, In):
        return NotIn(phi.t, phi.s)
    if isinstance(phi, NotIn):
        return In(phi.t, phi.s)
    if isinstance(phi, Eq):
        return Neq(phi.t, phi.s)
    if isinstance(phi, Neq):
        return Eq(phi.t, phi.s)
    if isinstance(phi, DPred):
        return NotDPred(phi.t)
    if isinstance(phi, NotDPred):
        return DPred(phi.t)
    if isinstance(phi, Or):
        return And(negate(phi.a), negate(phi.b))
    if isinstance(phi, And):
        return Or(negate(phi.a), negate(phi.b))
    if isinstance(phi, BEx):
        return BAll(phi.v, phi.bound, negate(phi.body))
    if isinstance(phi, BAll):
        return BEx(phi.v, phi.bound, negate(phi.body))
    if isinstance(phi, Ex):
        return All(phi.v, negate(phi.body))
    if isinstance(phi, All):
        return Ex(phi.v, negate(phi.body))
    if isinstance(phi, ExBang):
        return AllBangNeg(phi.v, negate(phi.body))
    if isinstance(phi, AllBangNeg):
        return ExBang(phi.v, negate(phi.body))
    raise TypeError(f"not a formula: {phi!r}")


def free_vars(phi: Formula) -> set:
    if isinstance(phi, LITERALS):
        ts = [phi.t] if isinstance(phi, (DPred, NotDPred)) else [phi.t, phi.s]
        out: set = set()
        for t in ts:
            out |= term_vars(t)
        return out
    if isinstance(phi, (Or, And)):
        return free_vars(phi.a) | free_vars(phi.b)
    if isinstance(phi, (BEx, BAll)):
        return term_vars(phi.bound) | (free_vars(phi.body) - {phi.v.name})
    if isinstance(phi, (Ex, All, ExBang, AllBangNeg)):
        return free_vars(phi.body) - {phi.v.name}
    raise TypeError(f"not a formula: {phi!r}")


def subst(phi: Formula, env: Mapping[str, Term]) -> Formula:
    """Capture-avoiding only in the sense that bound names shadow; callers
    use fresh bound names so no renaming is needed."""
    if not env:
        return phi
    if isinstance(phi, (DPred, NotDPred)):
        return type(phi)(term_subst(phi.t, env))
    if isinstance(phi, LITERALS):
        return type(phi)(term_subst(phi.t, env), term_subst(phi.s, env))
    if isinstance(phi, (Or, And)):
        return type(phi)(subst(phi.a, env), subst(phi.b, env))
    if isinstance(phi, (BEx, BAll)):
        inner = {k: v for k, v in env.items() if k != phi.v.name}
        return type(phi)(phi.v, term_subst(phi.bound, env), subst(phi.body, inner))
    if isinstance(phi, (Ex, All, ExBang, AllBangNeg)):
        inner = {k: v for k, v in env.items() if k != phi.v.name}
        return type(phi)(phi.v, subst(phi.body, inner))
    raise TypeError(f"not a formula: {phi!r}")


def subst_var(phi: Formula, name: str, t: Term) -> Formula:
    return subst(phi, {name: t})


# ---------------------------------------------------------------- classes


class FormulaClass(Enum):
    DELTA0 = "delta0"
    SIGMA1 = "sigma1"
    PI1 = "pi1"
    SIGMA = "sigma"
    SIGMA1BANG = "sigma1bang"
    SIGMADBANG = "sigmadbang"
    UNCLASSIFIED = "unclassified"


def _check_symbols(phi: Formula, symbols, level):
    """symbols: mapping name -> declared level (or None for no check)."""
    if symbols is None:
        return

    def walk_term(t):
        if isinstance(t, App):
            if t.symbol not in symbols:
                raise UnknownSymbol(t.symbol)
            if level is not None and symbols[t.symbol] > level:
                raise UnknownSymbol(
                    f"{t.symbol} lives at language level {symbols[t.symbol]} > {level}"
                )
            for s in t.normals + t.safes:
                walk_term(s)

    def walk(f):
        if isinstance(f, (DPred, NotDPred)):
            walk_term(f.t)
        elif isinstance(f, LITERALS):
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

    walk(phi)


def is_delta0(phi: Formula) -> bool:
    """Bounded and 𝒟-free."""
    if isinstance(phi, (DPred, NotDPred)):
        return False
    if isinstance(phi, LITERALS):
        return True
    if isinstance(phi, (Or, And)):
        return is_delta0(phi.a) and is_delta0(phi.b)
    if isinstance(phi, (BEx, BAll)):
        return is_delta0(phi.body)
    return False


def classify(phi: Formula, symbols=None, level: int | None = None) -> FormulaClass:
    """Most specific class.  Σ1/Π1 admit a block of like quantifiers over a
    Δ0 matrix (the negated equality axioms need this); Σ is Σ1 or ∀x∈t Σ1;
    Σ𝒟! is Σ1! or ∀x∈t Σ1!."""
    _check_symbols(phi, symbols, level)
    if is_delta0(phi):
        return FormulaClass.DELTA0
    body = phi
    if isinstance(body, Ex):
        while isinstance(body, Ex):
            body = body.body
        if is_delta0(body):
            return FormulaClass.SIGMA1
        return FormulaClass.UNCLASSIFIED
    if isinstance(body, All):
        while isinstance(body, All):
            body = body.body
        if is_delta0(body):
            return FormulaClass.PI1
        return FormulaClass.UNCLASSIFIED
    if isinstance(body, ExBang):
        if is_delta0(body.body):
            return FormulaClass.SIGMA1BANG
        return FormulaClass.UNCLASSIFIED
    if isinstance(body, BAll):
        inner = classify(body.body)
        if inner is FormulaClass.SIGMA1:
            return FormulaClass.SIGMA
        if inner is FormulaClass.SIGMA1BANG:
            return FormulaClass.SIGMADBANG
        return FormulaClass.UNCLASSIFIED
    return FormulaClass.UNCLASSIFIED


# ---------------------------------------------------------------- stratification


@dataclass(frozen=True)
class StratViolation:
    clause: str
    detail: str

    def __str__(self):
        return f"clause {self.clause}: {self.detail}"


def _strat_term(t, normals: set, safes: set, registry) -> StratViolation | None:
    if isinstance(t, Zero):
        return None
    if isinstance(t, Var):
        if t.name in normals or t.name in safes:
            return None
        return StratViolation("1(a)", f"variable {t.name} is not among the declared variables")
    # clause 1(b): applications; normal slots must be built from normal variables only
    if registry is not None and not registry.has_symbol(t.symbol):
        return StratViolation("1(b)", f"unknown function symbol {t.symbol}")
    for s in t.normals:
        v = _strat_term(s, normals, set(), registry)
        if v is not None:
            if term_vars(s) & safes:
                return StratViolation(
                    "1(b)", f"safe variable in a normal slot of {t.symbol}"
                )
            return v
    for s in t.safes:
        v = _strat_term(s, normals, safes, registry)
        if v is not None:
            return v
    return None


def check_stratified(
    phi: Formula, normals: Iterable[str], safes: Iterable[str], registry=None
) -> StratViolation | None:
    """None if phi is a stratified bounded formula wrt (normals; safes)."""
    ns, ss = set(normals), set(safes)
    if ns & ss:
        return StratViolation("0", "normal and safe variable sets overlap")

    def walk(f, ns: set, ss: set) -> StratViolation | None:
        if isinstance(f, (DPred, NotDPred)):
            return StratViolation("2", "the domain predicate may not occur in bounded formulas")
        if isinstance(f, LITERALS):
            for t in (f.t, f.s):
                v = _strat_term(t, ns, ss, registry)
                if v is not None:
                    return v
            return None
        if isinstance(f, (Or, And)):
            return walk(f.a, ns, ss) or walk(f.b, ns, ss)
        if isinstance(f, (BEx, BAll)):
            v = _strat_term(f.bound, ns, ss, registry)
            if v is not None:
                return StratViolation("4", f"bound term not stratified: {v.detail}")
            if f.v.sort == NORMAL:
                return walk(f.body, ns | {f.v.name}, ss - {f.v.name})
            return walk(f.body, ns - {f.v.name}, ss | {f.v.name})
        return StratViolation("*", "unbounded quantifier in a bounded formula")

    return walk(phi, ns, ss)


# ---------------------------------------------------------------- evaluation


@dataclass
class Valuation:
    env: dict = field(default_factory=dict)
    universe: tuple = ()
    dclass: frozenset | None = None  # None: 𝒟 holds of everything

    def bind(self, name: str, value: HFSet) -> "Valuation":
        new = dict(self.env)
        new[name] = value
        return Valuation(new, self.universe, self.dclass)


def eval_term(t, val: Valuation, registry) -> HFSet:
    if isinstance(t, Zero):
        return hf.EMPTY
    if isinstance(t, Var):
        if t.name not in val.env:
            raise UnknownSymbol(f"unbound variable {t.name}")
        return val.env[t.name]
    if registry is None:
        raise UnknownSymbol(t.symbol)
    nargs = tuple(eval_term(s, val, registry) for s in t.normals)
    sargs = tuple(eval_term(s, val, registry) for s in t.safes)
    return registry.apply(t.symbol, nargs, sargs)


def evaluate(phi: Formula, val: Valuation, registry=None) -> bool:
    """Truth over HF sets.  Bounded quantifiers range over actual members;
    unbounded ones over val.universe (a documented truncation of V)."""
    if isinstance(phi, In):
        return eval_term(phi.t, val, registry) in eval_term(phi.s, val, registry)
    if isinstance(phi, NotIn):
        return eval_term(phi.t, val, registry) not in eval_term(phi.s, val, registry)
    if isinstance(phi, Eq):
        return eval_term(phi.t, val, registry) is eval_term(phi.s, val, registry)
    if isinstance(phi, Neq):
        return eval_term(phi.t, val, registry) is not eval_term(phi.s, val, registry)
    if isinstance(phi, DPred):
        return val.dclass is None or eval_term(phi.t, val, registry) in val.dclass
    if isinstance(phi, NotDPred):
        return not (val.dclass is None or eval_term(phi.t, val, registry) in val.dclass)
    if isinstance(phi, Or):
        return evaluate(phi.a, val, registry) or evaluate(phi.b, val, registry)
    if isinstance(phi, And):
        return evaluate(phi.a, val, registry) and evaluate(phi.b, val, registry)
    if isinstance(phi, BEx):
        b = eval_term(phi.bound, val, registry)
        return any(evaluate(phi.body, val.bind(phi.v.name, x), registry) for x in b)
    if isinstance(phi, BAll):
        b = eval_term(phi.bound, val, registry)
        return all(evaluate(phi.body, val.bind(phi.v.name, x), registry) for x in b)
    if isinstance(phi, Ex):
        return any(evaluate(phi.body, val.bind(phi.v.name, x), registry) for x in val.universe)
    if isinstance(phi, All):
        return all(evaluate(phi.body, val.bind(phi.v.name, x), registry) for x in val.universe)
    if isinstance(phi, ExBang):
        count = 0
        for x in val.universe:
            if evaluate(phi.body, val.bind(phi.v.name, x), registry):
                count += 1
                if count > 1:
                    return False
        return count == 1
    if isinstance(phi, AllBangNeg):
        # ∀!v body ⇔ ¬∃!v ¬body
        count = 0
        for x in val.universe:
            if not evaluate(phi.body, val.bind(phi.v.name, x), registry):
                count += 1
                if count > 1:
                    return True
        return count != 1
    raise TypeError(f"not a formula: {phi!r}")


# ---------------------------------------------------------------- witness translations

_FRESH = 0


def fresh_var(prefix: str = "w", sort: str = PLAIN) -> Var:
    """Fresh variable in the reserved '%' namespace (the parsers reject it)."""
    global _FRESH
    _FRESH += 1
    return Var(f"%{prefix}{_FRESH}", sort)


def reset_fresh():
    """Reset the fresh-name counter (one deterministic stream per batch run)."""
    global _FRESH
    _FRESH = 0


def ex_block(phi: Formula):
    """Split a Σ1 formula into its leading Ex-variables and Δ0 matrix."""
    vs = []
    while isinstance(phi, Ex):
        vs.append(phi.v)
        phi = phi.body
    return vs, phi


def tuple_projections(d: Term, k: int) -> list:
    """Terms decoding a right-nested Kuratowski tuple of width k from d."""
    if k == 1:
        return [d]
    out = []
    cur = d
    for _ in range(k - 1):
        out.append(App("fst", (), (cur,)))
        cur = App("snd", (), (cur,))
    out.append(cur)
    return out


def tuple_term(ts: list) -> Term:
    """Right-nested Kuratowski tuple term ⟨t1,⟨t2,...⟩⟩."""
    out = ts[-1]
    for t in reversed(ts[:-1]):
        out = App("kpair", (), (t, out))
    return out


def is_function_on_formula(c: Term, y: Term, varname: str = "%fo") -> Formula:
    """Δ0 formula: c = {⟨x, c'x⟩ : x ∈ y} with c single-valued, via the total
    apply term."""
    x = Var(varname + "x")
    d = Var(varname + "d")
    entry = App("kpair", (), (Var(x.name), App("apply", (), (c, Var(x.name)))))
    return And(
        BAll(d, c, BEx(x, y, Eq(Var(d.name), entry))),
        BAll(x, y, BEx(d, c, Eq(Var(d.name), entry))),
    )


def witness_predicate(phi: Formula, b: Var) -> Formula:
    """The Δ0 witness translation w_phi(b): b is a nonempty set of witnesses."""
    cls = classify(phi)
    if cls is FormulaClass.DELTA0:
        return phi
    if cls is FormulaClass.SIGMA1:
        vs, matrix = ex_block(phi)
        d = fresh_var("c")
        projs = tuple_projections(Var(d.name), len(vs))
        inner = subst(matrix, {v.name: p for v, p in zip(vs, projs)})
        return And(Neq(Var(b.name), ZERO), BAll(d, Var(b.name), inner))
    if cls is FormulaClass.SIGMA:
        x, bound, sig = phi.v, phi.bound, phi.body
        vs, matrix = ex_block(sig)
        bx = App("apply", (), (Var(b.name), Var(x.name)))
        d = fresh_var("c")
        projs = tuple_projections(Var(d.name), len(vs))
        inner = subst(matrix, {v.name: p for v, p in zip(vs, projs)})
        per_point = And(Neq(bx, ZERO), BAll(d, bx, inner))
        return And(
            is_function_on_formula(Var(b.name), bound, varname="%fo" + b.name.strip("%")),
            BAll(x, bound, per_point),
        )
    raise NotSigma(f"cannot build a witness predicate for class {cls.value}")


def _rename_bound(cond):
    """Fresh copy of a ∃-condition's bound variable, so the expansion never
    captures equally-named free variables of the target formula (the envelope
    bind operation reuses sequent variable names by design)."""
    from . import extract as _ex

    u = fresh_var("r", cond.v.sort)
    body = _ex.cond_subst(cond.body, {cond.v.name: Var(u.name, cond.v.sort)})
    return Var(u.name, cond.v.sort), body


def class_membership(cond, star: Term) -> Formula:
    """λ(* := star) as a formula; cond is an extract.Condition."""
    from . import extract as _ex

    if isinstance(cond, _ex.Point):
        return Eq(star, cond.term)
    if isinstance(cond, _ex.OrCond):
        return Or(class_membership(cond.a, star), class_membership(cond.b, star))
    if isinstance(cond, _ex.BExCond):
        u, body = _rename_bound(cond)
        return BEx(u, cond.bound, class_membership(body, star))
    raise TypeError(f"not a condition: {cond!r}")


def forall_in_class(cond, v: Var, body: Formula) -> Formula:
    """∀v∈X_λ body, expanded per the class-formula definition."""
    from . import extract as _ex

    if isinstance(cond, _ex.Point):
        return subst_var(body, v.name, cond.term)
    if isinstance(cond, _ex.OrCond):
        return And(forall_in_class(cond.a, v, body), forall_in_class(cond.b, v, body))
    if isinstance(cond, _ex.BExCond):
        u, inner = _rename_bound(cond)
        return BAll(u, cond.bound, forall_in_class(inner, v, body))
    raise TypeError(f"not a condition: {cond!r}")


def unique_in_class(cond, psi_of, b: Term) -> Formula:
    """Unique^X_c(ψ, b) := b ∈ X ∧ ∀c∈X(ψ(c) → b=c)."""
    c = fresh_var("u")
    body = Or(negate(psi_of(Var(c.name))), Eq(b, Var(c.name)))
    return And(class_membership(cond, b), forall_in_class(cond, c, body))


def witness_bang_predicate(phi: Formula, b: Var, cond) -> Formula:
    """The bounded unique-witness translation w!^X_phi(b)."""
    cls = classify(phi)
    if cls is FormulaClass.DELTA0:
        return phi
    if cls is FormulaClass.SIGMA1BANG:
        c, psi = phi.v, phi.body

        def psi_of(t):
            return subst_var(psi, c.name, t)

        return And(psi_of(Var(b.name)), unique_in_class(cond, psi_of, Var(b.name)))
    if cls is FormulaClass.SIGMADBANG:
        x, bound, sig = phi.v, phi.bound, phi.body
        bx = App("apply", (), (Var(b.name), Var(x.name)))
        c, psi = sig.v, sig.body

        def psi_of(t):
            return subst_var(psi, c.name, t)

        per_point = And(psi_of(bx), unique_in_class(cond, psi_of, bx))
        return And(
            is_function_on_formula(Var(b.name), bound, varname="%fo" + b.name.strip("%")),
            BAll(x, bound, per_point),
        )
    raise NotSigmaBang(f"cannot build a unique-witness predicate for class {cls.value}")


# ---------------------------------------------------------------- surface syntax

_CONN = {"and": And, "or": Or}
_LIT = {"in": In, "notin": NotIn, "eq": Eq, "neq": Neq}
_BQ = {"ball": BAll, "bex": BEx}
_UQ = {"all": All, "ex": Ex, "exu": ExBang, "allu": AllBangNeg}


def _parse_var(e, allow_reserved: bool = False) -> Var:
    if isinstance(e, str):
        name = e
        sort = PLAIN
    elif isinstance(e, list) and len(e) == 2 and all(isinstance(x, str) for x in e):
        name, sort = e
        if sort not in (NORMAL, SAFE, PLAIN):
            raise ValueError(f"bad variable sort {sort}")
    else:
        raise ValueError(f"bad variable binder {sexpr.show(e)}")
    if name.startswith("%") and not allow_reserved:
        raise ValueError("variable names starting with % are reserved")
    return Var(name, sort)


def parse_term(e, allow_reserved: bool = False):
    if isinstance(e, str):
        if e == "zero" or e == "0":
            return ZERO
        if e.startswith("%") and not allow_reserved:
            raise ValueError("variable names starting with % are reserved")
        return Var(e)
    if not e:
        raise ValueError("empty term")
    head = e[0]
    if head == "var":
        if len(e) == 2:
            return Var(e[1])
        if len(e) == 3:
            return Var(e[1], e[2])
        raise ValueError(f"bad var term {sexpr.show(e)}")
    if head == "app":
        if len(e) != 4:
            raise ValueError(f"bad app term {sexpr.show(e)}: want (app f (n...) (s...))")
        return App(
            e[1],
            tuple(parse_term(x, allow_reserved) for x in e[2]),
            tuple(parse_term(x, allow_reserved) for x in e[3]),
        )
    raise ValueError(f"bad term {sexpr.show(e)}")


def parse_formula(e, allow_reserved: bool = False):
    if isinstance(e, str):
        raise ValueError(f"bad formula {e}")
    if not e:
        raise ValueError("empty formula")
    head = e[0]
    pt = lambda x: parse_term(x, allow_reserved)
    if head in _LIT:
        if len(e) != 3:
            raise ValueError(f"bad literal {sexpr.show(e)}")
        return _LIT[head](pt(e[1]), pt(e[2]))
    if head == "dpred":
        return DPred(pt(e[1]))
    if head == "ndpred":
        return NotDPred(pt(e[1]))
    if head in _CONN:
        if len(e) != 3:
            raise ValueError(f"bad connective {sexpr.show(e)}")
        return _CONN[head](
            parse_formula(e[1], allow_reserved), parse_formula(e[2], allow_reserved)
        )
    if head in _BQ:
        if len(e) != 4:
            raise ValueError(f"bad bounded quantifier {sexpr.show(e)}")
        return _BQ[head](
            _parse_var(e[1], allow_reserved), pt(e[2]), parse_formula(e[3], allow_reserved)
        )
    if head in _UQ:
        if len(e) != 3:
            raise ValueError(f"bad quantifier {sexpr.show(e)}")
        return _UQ[head](_parse_var(e[1], allow_reserved), parse_formula(e[2], allow_reserved))
    raise ValueError(f"bad formula head {head}")


def term_sexpr(t):
    if isinstance(t, Zero):
        return "zero"
    if isinstance(t, Var):
        if t.sort == PLAIN:
            return t.name
        return ["var", t.name, t.sort]
    return ["app", t.symbol, [term_sexpr(x) for x in t.normals], [term_sexpr(x) for x in t.safes]]


def _var_sexpr(v: Var):
    return v.name if v.sort == PLAIN else [v.name, v.sort]


def formula_sexpr(phi):
    if isinstance(phi, In):
        return ["in", term_sexpr(phi.t), term_sexpr(phi.s)]
    if isinstance(phi, NotIn):
        return ["notin", term_sexpr(phi.t), term_sexpr(phi.s)]
    if isinstance(phi, Eq):
        return ["eq", term_sexpr(phi.t), term_sexpr(phi.s)]
    if isinstance(phi, Neq):
        return ["neq", term_sexpr(phi.t), term_sexpr(phi.s)]
    if isinstance(phi, DPred):
        return ["dpred", term_sexpr(phi.t)]
    if isinstance(phi, NotDPred):
        return ["ndpred", term_sexpr(phi.t)]
    if isinstance(phi, Or):
        return ["or", formula_sexpr(phi.a), formula_sexpr(phi.b)]
    if isinstance(phi, And):
        return ["and", formula_sexpr(phi.a), formula_sexpr(phi.b)]
    if isinstance(phi, BEx):
        return ["bex", _var_sexpr(phi.v), term_sexpr(phi.bound), formula_sexpr(phi.body)]
    if isinstance(phi, BAll):
        return ["ball", _var_sexpr(phi.v), term_sexpr(phi.bound), formula_sexpr(phi.body)]
    if isinstance(phi, Ex):
        return ["ex", _var_sexpr(phi.v), formula_sexpr(phi.body)]
    if isinstance(phi, All):
        return ["all", _var_sexpr(phi.v), formula_sexpr(phi.body)]
    if isinstance(phi, ExBang):
        return ["exu", _var_sexpr(phi.v), formula_sexpr(phi.body)]
    if isinstance(phi, AllBangNeg):
        return ["allu", _var_sexpr(phi.v), formula_sexpr(phi.body)]
    raise TypeError(f"not a formula: {phi!r}")


def show_formula(phi) -> str:
    return sexpr.show(formula_sexpr(phi))


def show_term(t) -> str:
    return sexpr.show(term_sexpr(t))
