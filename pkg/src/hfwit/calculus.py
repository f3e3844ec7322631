"""One-sided sequent calculi for the four fragments.

Sequents are finite sets of formulas.  Derivations are explicit trees: every
node names its rule, principal formulas, eigenvariables and instance terms,
and the checker verifies each node against the rule display up to set
equality of sequents; it never searches.  Contraction is implicit in the set
reading; context splitting between premises is allowed (contexts of premises
must be contained in the conclusion and jointly cover it).

Submodel inferences are consumed through licensed Φ-rules: a `PhiRule` node
may carry a `license` subderivation concluding the universal closure that a
Submodel rule would consume; the licensed form is what bounded-nesting
derivations look like without a cut-elimination procedure.  A bare
`SubmodelRule` node is checkable as a root.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import formula as fm
from . import sexpr
from .formula import (
    All,
    AllBangNeg,
    And,
    App,
    BAll,
    BEx,
    DPred,
    Eq,
    Ex,
    ExBang,
    In,
    Neq,
    NotDPred,
    NotIn,
    Or,
    Term,
    Var,
    ZERO,
    negate,
    subst_var,
)

T0, T1, T2D, T3 = "t0", "t1", "t2d", "t3"


def formula_key(phi):
    s = fm.show_formula(phi)
    return (len(s), s)


def sequent(formulas) -> frozenset:
    return frozenset(formulas)


def seq_sorted(seq) -> list:
    return sorted(seq, key=formula_key)


def seq_free_vars(seq) -> set:
    out: set = set()
    for f in seq:
        out |= fm.free_vars(f)
    return out


@dataclass(frozen=True)
class PhiEntry:
    """A licensed Δ0 formula φ_i(x⃗, a) with named argument and slot variables."""

    args: tuple  # names
    slot: str
    phi: object


@dataclass(frozen=True)
class TheoryId:
    tag: str
    level: int = 0  # language level for t3
    budget: int = 0  # admitted Submodel/licence nesting
    phi: tuple = ()  # PhiEntry list for the +Φ systems


@dataclass(frozen=True)
class RuleInstance:
    rule: str
    principal: tuple = ()
    eigen: tuple = ()  # Var
    terms: tuple = ()  # Term
    formula: object | None = None  # schematic formula of the rule
    slots: tuple = ()  # schematic variable names for `formula`
    symbol: str | None = None
    index: int | None = None


@dataclass(frozen=True)
class Node:
    seq: frozenset
    rule: RuleInstance
    children: tuple = ()
    license: "Node | None" = None


@dataclass(frozen=True)
class Derivation:
    theory: TheoryId
    root: Node


# ---------------------------------------------------------------- canonical formula shapes


def pair_axiom_neg(t: Term, s: Term, a: Var):
    """¬(t∈a ∧ s∈a ∧ ∀x∈a(x=t ∨ x=s))."""
    x = Var("q0")
    av = Var(a.name, a.sort)
    return Or(
        Or(NotIn(t, av), NotIn(s, av)),
        BEx(x, av, And(Neq(Var(x.name), t), Neq(Var(x.name), s))),
    )


def union_axiom_neg(t: Term, c: Var):
    """¬(∀a∈t ∀b∈a (b∈c) ∧ ∀b∈c ∃a∈t (b∈a))."""
    a, b = Var("q0"), Var("q1")
    cv = Var(c.name, c.sort)
    return Or(
        BEx(a, t, BEx(b, Var(a.name), NotIn(Var(b.name), cv))),
        BEx(b, cv, BAll(a, t, NotIn(Var(b.name), Var(a.name)))),
    )


def sep_axiom_neg(t: Term, phi, slot: str, a: Var):
    """¬(∀x∈a(x∈t ∧ φ(x)) ∧ ∀x∈t(φ(x) → x∈a))."""
    x = Var("q0")
    av = Var(a.name, a.sort)
    phix = subst_var(phi, slot, Var(x.name))
    return Or(
        BEx(x, av, Or(NotIn(Var(x.name), t), negate(phix))),
        BEx(x, t, And(phix, NotIn(Var(x.name), av))),
    )


def not_unique(phi, v: Var):
    """¬Unique_v(φ) = ∃v0 ∃v1 (φ(v0) ∧ φ(v1) ∧ v0 ≠ v1)."""
    a, b = Var(v.name + "_0"), Var(v.name + "_1")
    return Ex(
        a,
        Ex(
            b,
            And(
                And(subst_var(phi, v.name, Var(a.name)), subst_var(phi, v.name, Var(b.name))),
                Neq(Var(a.name), Var(b.name)),
            ),
        ),
    )


def trcv_formula(u: Term, x: Term):
    y, z = Var("q0"), Var("q1")
    return And(
        BAll(y, x, In(Var(y.name), u)),
        BAll(y, u, BAll(z, Var(y.name), In(Var(z.name), u))),
    )


def trcl_formula(y: Term, x: Term, a: Term):
    z = Var("q2")
    return And(
        trcv_formula(y, x),
        Or(negate(trcv_formula(a, x)), BAll(z, y, In(Var(z.name), a))),
    )


def closure_sentence(xvars: tuple, slot: str, phi, bang: bool, in_d: bool):
    """∀x⃗⊂𝒟 ∃[!]a φ, or with in_d the conclusion form ∀x⃗⊂𝒟 ∃y∈𝒟 φ(x⃗,y)."""
    if in_d:
        y = Var(slot, fm.NORMAL)
        body = Ex(y, And(DPred(Var(y.name)), subst_var(phi, slot, Var(y.name))))
    elif bang:
        body = ExBang(Var(slot), phi)
    else:
        body = Ex(Var(slot), phi)
    for xn in reversed(xvars):
        body = Or(NotDPred(Var(xn, fm.NORMAL)), body)
        body = All(Var(xn, fm.NORMAL), body)
    return body


def eq_sentences(registry=None) -> tuple:
    a, b, c = Var("a"), Var("b"), Var("c")
    av, bv, cv = Var("a"), Var("b"), Var("c")
    out = [
        All(a, Eq(av, av)),
        All(a, All(b, Or(Neq(av, bv), Eq(bv, av)))),
        All(a, All(b, All(c, Or(Or(Neq(av, bv), Neq(av, cv)), Eq(bv, cv))))),
        All(a, All(b, All(c, Or(Or(Neq(av, bv), NotIn(bv, cv)), In(av, cv))))),
    ]
    if registry is not None:
        for name in sorted(registry.oracles):
            e = registry.oracles[name]
            n = e.normal_arity + e.safe_arity
            xs = [Var(f"a{i}") for i in range(n)]
            ys = [Var(f"b{i}") for i in range(n)]
            nx, sx = tuple(xs[: e.normal_arity]), tuple(xs[e.normal_arity :])
            ny, sy = tuple(ys[: e.normal_arity]), tuple(ys[e.normal_arity :])
            body = Eq(App(name, nx, sx), App(name, ny, sy))
            for x, y in zip(reversed(xs), reversed(ys)):
                body = Or(Neq(x, y), body)
            for v in reversed(xs + ys):
                body = All(v, body)
            out.append(body)
    return tuple(out)


def ext_sentences() -> tuple:
    a, b, c = Var("a"), Var("b"), Var("c")
    return (
        All(
            a,
            All(
                b,
                Or(
                    Or(
                        BEx(c, Var("a"), NotIn(Var("c"), Var("b"))),
                        BEx(c, Var("b"), NotIn(Var("c"), Var("a"))),
                    ),
                    Eq(Var("a"), Var("b")),
                ),
            ),
        ),
    )


def builtin_sentences(registry=None):
    """(Eq, Ext) in NNF; their negations are the ¬Eq, ¬Ext antecedents."""
    return eq_sentences(registry), ext_sentences()


# ---------------------------------------------------------------- rule admission

_RULES_T0 = {
    "init",
    "or",
    "and",
    "bex",
    "ball",
    "ex",
    "all",
    "cut",
    "bexall",
    "ballex",
    "pair",
    "union",
    "sep",
    "oracle",
    "coll",
}
_RULES_T1 = _RULES_T0 | {"fund"}
_RULES_T2 = _RULES_T0 | {"dfund", "eqd", "trd", "submodel", "phirule"}
_RULES_T3 = {
    "init",
    "or",
    "and",
    "bex",
    "ball",
    "ex",
    "all",
    "cut",
    "exu",
    "allu",
    "bexdallu",
    "balldexu",
    "pair",
    "union",
    "sep",
    "oracle",
    "eqd",
    "trd",
    "trcl",
    "deff",
    "ufund",
    "repl",
    "submodel",
    "phirule",
}

_ADMITTED = {T0: _RULES_T0, T1: _RULES_T1, T2D: _RULES_T2, T3: _RULES_T3}


def theory_admits(theory: TheoryId, rule: str) -> bool:
    return rule in _ADMITTED[theory.tag]


# ---------------------------------------------------------------- the checker


class _Check:
    def __init__(self, deriv: Derivation, registry):
        self.deriv = deriv
        self.reg = registry
        self.theory = deriv.theory
        self.out: list = []

    def fail(self, path: str, msg: str):
        self.out.append(f"node {path or 'root'}: {msg}")

    # -- helpers

    def match(self, node: Node, path: str, principal, news, nchildren=None):
        """Set-level shape check: conclusion = ∪ contexts ∪ principal, where
        child_i = context_i ∪ news_i, contexts ⊆ conclusion."""
        concl = node.seq
        principal = frozenset(principal)
        if nchildren is None:
            nchildren = len(news)
        if len(node.children) != nchildren:
            self.fail(path, f"{node.rule.rule}: expected {nchildren} premises, got {len(node.children)}")
            return False
        if not principal <= concl:
            self.fail(path, f"{node.rule.rule}: principal formula not in conclusion")
            return False
        resid: set = set()
        allnews: set = set()
        ok = True
        for i, (child, new) in enumerate(zip(node.children, news)):
            new = frozenset(new)
            allnews |= new
            if not new <= child.seq:
                self.fail(path, f"{node.rule.rule}: premise {i} lacks its introduced formula(s)")
                ok = False
                continue
            r = child.seq - new
            if not r <= concl:
                extra = seq_sorted(r - concl)[:1]
                self.fail(
                    path,
                    f"{node.rule.rule}: premise {i} context not in conclusion"
                    + (f" ({fm.show_formula(extra[0])})" if extra else ""),
                )
                ok = False
            resid |= r
        if ok:
            missing = concl - (resid | principal | allnews)
            if missing:
                self.fail(
                    path,
                    f"{node.rule.rule}: conclusion context not covered by premises "
                    f"({fm.show_formula(seq_sorted(missing)[0])})",
                )
                ok = False
        return ok

    def eigen_ok(self, node: Node, path: str, extra_terms=()):
        concl_fv = seq_free_vars(node.seq)
        for t in extra_terms:
            concl_fv |= fm.term_vars(t)
        if node.rule.formula is not None:
            concl_fv |= fm.free_vars(node.rule.formula) - set(node.rule.slots)
        for v in node.rule.eigen:
            if v.name in concl_fv:
                self.fail(path, f"{node.rule.rule}: eigenvariable condition violated for {v.name}")
                return False
        names = [v.name for v in node.rule.eigen]
        if len(set(names)) != len(names):
            self.fail(path, f"{node.rule.rule}: duplicate eigenvariables")
            return False
        return True

    def delta0_ok(self, node: Node, path: str, phi, what: str = "schematic formula"):
        try:
            cls = fm.classify(phi, self.reg.symbol_levels() if self.reg else None, self._level())
        except fm.UnknownSymbol as exc:
            self.fail(path, f"{node.rule.rule}: unknown symbol in {what}: {exc}")
            return False
        if cls is not fm.FormulaClass.DELTA0:
            self.fail(path, f"{node.rule.rule}: {what} must be delta0, is {cls.value}")
            return False
        return True

    def _level(self):
        return self.theory.level if self.theory.tag == T3 else 0

    def need_d_literals(self, node: Node, path: str, terms):
        if self.theory.tag in (T2D, T3):
            for t in terms:
                if NotDPred(t) not in node.seq:
                    self.fail(
                        path,
                        f"{node.rule.rule}: conclusion lacks the domain literal for {fm.show_term(t)}",
                    )
                    return False
        return True

    def need_normal(self, node: Node, path: str, v: Var):
        if v.sort != fm.NORMAL:
            self.fail(path, f"{node.rule.rule}: eigenvariable {v.name} must be normal-sorted")
            return False
        return True

    # -- walk

    def run(self):
        self.walk(self.deriv.root, "")
        if self.theory.tag in (T2D, T3):
            depth = license_nesting(self.deriv.root)
            if depth > self.theory.budget:
                self.fail("", f"submodel nesting {depth} exceeds budget {self.theory.budget}")
        return self.out

    def walk(self, node: Node, path: str):
        inst = node.rule
        if not theory_admits(self.theory, inst.rule):
            self.fail(path, f"rule {inst.rule} not admitted in {self.theory.tag}")
        else:
            handler = getattr(self, "rule_" + inst.rule, None)
            if handler is None:
                self.fail(path, f"unknown rule {inst.rule}")
            else:
                handler(node, path)
        for i, child in enumerate(node.children):
            self.walk(child, f"{path}.{i}" if path else str(i))
        if node.license is not None:
            if inst.rule != "phirule":
                self.fail(path, "only phirule nodes carry a license subderivation")
            else:
                self.walk(node.license, f"{path}.L" if path else "L")

    # -- leaf rules

    def rule_init(self, node: Node, path: str):
        if node.children:
            self.fail(path, "init: takes no premises")
        if not inst_literal_pair(node.seq, node.rule.principal):
            self.fail(path, "init: no complementary literal pair in the sequent")

    # -- propositional and quantifier rules

    def rule_or(self, node: Node, path: str):
        p = self.one_principal(node, path, Or)
        if p is None:
            return
        self.match(node, path, {p}, [{p.a, p.b}])

    def rule_and(self, node: Node, path: str):
        p = self.one_principal(node, path, And)
        if p is None:
            return
        self.match(node, path, {p}, [{p.a}, {p.b}])

    def rule_bex(self, node: Node, path: str):
        p = self.one_principal(node, path, BEx)
        if p is None or not self.need_terms(node, path, 1):
            return
        s = node.rule.terms[0]
        self.match(node, path, {p}, [{In(s, p.bound)}, {subst_var(p.body, p.v.name, s)}])

    def rule_ball(self, node: Node, path: str):
        p = self.one_principal(node, path, BAll)
        if p is None or not self.need_eigen(node, path, 1):
            return
        a = node.rule.eigen[0]
        av = Var(a.name, a.sort)
        self.match(
            node, path, {p}, [{NotIn(av, p.bound), subst_var(p.body, p.v.name, av)}]
        )
        self.eigen_ok(node, path)

    def rule_ex(self, node: Node, path: str):
        p = self.one_principal(node, path, Ex)
        if p is None:
            return
        k = len(node.rule.terms)
        if k < 1:
            self.fail(path, "ex: needs at least one instance term")
            return
        body = p
        opened = []
        for _ in range(k):
            if not isinstance(body, Ex):
                self.fail(path, "ex: more instance terms than leading quantifiers")
                return
            opened.append(body.v.name)
            body = body.body
        env = dict(zip(opened, node.rule.terms))
        self.match(node, path, {p}, [{fm.subst(body, env)}])

    def rule_all(self, node: Node, path: str):
        p = self.one_principal(node, path, All)
        if p is None or not self.need_eigen(node, path, 1):
            return
        a = node.rule.eigen[0]
        self.match(node, path, {p}, [{subst_var(p.body, p.v.name, Var(a.name, a.sort))}])
        self.eigen_ok(node, path)

    def rule_cut(self, node: Node, path: str):
        if node.rule.formula is None:
            self.fail(path, "cut: needs its cut formula")
            return
        c = node.rule.formula
        self.match(node, path, set(), [{negate(c)}, {c}])

    def rule_bexall(self, node: Node, path: str):
        p = self.one_principal(node, path, BEx)
        if p is None or not self.need_terms(node, path, 1):
            return
        blockvars, matrix = [], p.body
        while isinstance(matrix, All):
            blockvars.append(matrix.v.name)
            matrix = matrix.body
        if not blockvars:
            self.fail(path, "bexall: principal is not ∃x∈t ∀⃗ φ")
            return
        if not self.delta0_ok(node, path, matrix, "matrix"):
            return
        if len(node.rule.eigen) != len(blockvars):
            self.fail(path, f"bexall: needs {len(blockvars)} eigenvariables")
            return
        s = node.rule.terms[0]
        env = {p.v.name: s}
        env.update(
            {bn: Var(e.name, e.sort) for bn, e in zip(blockvars, node.rule.eigen)}
        )
        self.match(node, path, {p}, [{In(s, p.bound)}, {fm.subst(matrix, env)}])
        self.eigen_ok(node, path, extra_terms=(s,))

    def rule_ballex(self, node: Node, path: str):
        p = self.one_principal(node, path, BAll)
        if p is None or not self.need_eigen(node, path, 1):
            return
        if not isinstance(p.body, Ex):
            self.fail(path, "ballex: principal is not ∀x∈t ∃⃗ φ")
            return
        x = node.rule.eigen[0]
        xv = Var(x.name, x.sort)
        self.match(
            node, path, {p}, [{NotIn(xv, p.bound), subst_var(p.body, p.v.name, xv)}]
        )
        self.eigen_ok(node, path)

    # -- set-existence rules

    def rule_pair(self, node: Node, path: str):
        if not (self.need_terms(node, path, 2) and self.need_eigen(node, path, 1)):
            return
        t, s = node.rule.terms
        a = node.rule.eigen[0]
        self.match(node, path, set(), [{pair_axiom_neg(t, s, a)}])
        self.eigen_ok(node, path, extra_terms=(t, s))

    def rule_union(self, node: Node, path: str):
        if not (self.need_terms(node, path, 1) and self.need_eigen(node, path, 1)):
            return
        t = node.rule.terms[0]
        c = node.rule.eigen[0]
        self.match(node, path, set(), [{union_axiom_neg(t, c)}])
        self.eigen_ok(node, path, extra_terms=(t,))

    def rule_sep(self, node: Node, path: str):
        if not (
            self.need_terms(node, path, 1)
            and self.need_eigen(node, path, 1)
            and self.need_formula(node, path, 1)
        ):
            return
        t = node.rule.terms[0]
        a = node.rule.eigen[0]
        phi, slot = node.rule.formula, node.rule.slots[0]
        if not self.delta0_ok(node, path, phi):
            return
        self.match(node, path, set(), [{sep_axiom_neg(t, phi, slot, a)}])
        self.eigen_ok(node, path, extra_terms=(t,))

    def rule_oracle(self, node: Node, path: str):
        sym = node.rule.symbol
        if sym is None or sym not in getattr(self.reg, "oracles", {}):
            self.fail(path, f"oracle: unknown oracle symbol {sym}")
            return
        entry = self.reg.oracles[sym]
        if entry.theta is None:
            self.fail(path, f"oracle: {sym} has no declared defining formula")
            return
        theta = entry.theta
        if len(node.rule.terms) != entry.normal_arity + entry.safe_arity:
            self.fail(path, f"oracle: {sym} wants {entry.normal_arity + entry.safe_arity} terms")
            return
        nterms = node.rule.terms[: entry.normal_arity]
        sterms = node.rule.terms[entry.normal_arity :]
        argnames = entry.theta_args or tuple(
            f"a{i}" for i in range(entry.normal_arity + entry.safe_arity)
        )
        valname = entry.theta_val
        # peel the Π1 prefix ∀c⃗ ψ
        cvars, psi = [], theta
        while isinstance(psi, All):
            cvars.append(psi.v)
            psi = psi.body
        env = dict(zip(argnames, node.rule.terms))
        env[valname] = App(sym, nterms, sterms)
        prem = fm.subst(negate(psi), env)
        for v in reversed(cvars):
            prem = Ex(v, prem)
        self.match(node, path, set(), [{prem}])
        self.need_d_literals(node, path, [t for t in nterms])

    def rule_coll(self, node: Node, path: str):
        if self.theory.tag == T3:
            self.fail(path, "coll: replaced by its unique version in this theory")
            return
        if not (
            self.need_terms(node, path, 1)
            and self.need_eigen(node, path, 2)
            and self.need_formula(node, path, 2)
        ):
            return
        t = node.rule.terms[0]
        x, c = node.rule.eigen
        phi = node.rule.formula
        xs, asl = node.rule.slots
        if not self.delta0_ok(node, path, phi):
            return
        xv = Var(x.name, x.sort)
        phix = subst_var(phi, xs, xv)
        prem0 = {NotIn(xv, t), Ex(Var(asl), phix)}
        inner = negate(phi)
        prem1 = {
            BEx(
                Var(xs),
                t,
                BAll(Var(asl), Var(c.name, c.sort), inner),
            )
        }
        self.match(node, path, set(), [prem0, prem1])
        self.eigen_ok(node, path, extra_terms=(t,))

    def rule_fund(self, node: Node, path: str):
        if self.theory.tag != T1:
            self.fail(path, "fund: the Σ1-Foundation rule is only for t1")
            return
        self._fund_common(node, path, with_d=False)

    def rule_dfund(self, node: Node, path: str):
        self._fund_common(node, path, with_d=True)

    def _fund_common(self, node: Node, path: str, with_d: bool):
        if not (
            self.need_terms(node, path, 1)
            and self.need_eigen(node, path, 2)
            and self.need_formula(node, path, 2)
        ):
            return
        t = node.rule.terms[0]
        y, a = node.rule.eigen
        phi = node.rule.formula
        xs, asl = node.rule.slots
        if not self.delta0_ok(node, path, phi):
            return
        yv = Var(y.name, y.sort)
        negphi = negate(phi)
        pi = BEx(Var(xs), yv, All(Var(asl), negphi))
        prem0 = {pi, Ex(Var(asl), subst_var(phi, xs, yv))}
        if with_d:
            if not self.need_normal(node, path, y):
                return
            prem0.add(NotDPred(yv))
            self.need_d_literals(node, path, (t,))
        prem1 = {fm.subst(negphi, {xs: t, asl: Var(a.name, a.sort)})}
        self.match(node, path, set(), [prem0, prem1])
        self.eigen_ok(node, path, extra_terms=(t,))

    # -- 𝒟 bookkeeping rules

    def rule_eqd(self, node: Node, path: str):
        if not self.need_terms(node, path, 2):
            return
        s, t = node.rule.terms
        self.match(node, path, {NotDPred(t)}, [{Eq(s, t)}, {NotDPred(s)}])

    def rule_trd(self, node: Node, path: str):
        if not self.need_terms(node, path, 2):
            return
        s, t = node.rule.terms
        self.match(node, path, {NotDPred(t)}, [{In(s, t)}, {NotDPred(s)}])

    # -- Submodel and Φ rules

    def rule_submodel(self, node: Node, path: str):
        if not self.need_formula(node, path, None):
            return
        phi = node.rule.formula
        slots = node.rule.slots
        if len(slots) < 2:
            self.fail(path, "submodel: needs argument slots and the witness slot")
            return
        xvars, slot = tuple(slots[:-1]), slots[-1]
        if not self.delta0_ok(node, path, phi):
            return
        extra = fm.free_vars(phi) - set(xvars) - {slot}
        if extra:
            self.fail(path, f"submodel: schematic formula has stray free variables {sorted(extra)}")
            return
        bang = self.theory.tag == T3
        prem = closure_sentence(xvars, slot, phi, bang=bang, in_d=False)
        concl = closure_sentence(xvars, slot, phi, bang=False, in_d=True)
        ok = self.match(node, path, {concl}, [{prem}])
        if ok:
            for side in node.seq - {concl}:
                if fm.free_vars(side) or fm.classify(side) is not fm.FormulaClass.SIGMA1:
                    self.fail(path, "submodel: side formulas must be closed Σ1 sentences")
                    break

    def rule_phirule(self, node: Node, path: str):
        if node.rule.index is None or not (0 <= node.rule.index < len(self.theory.phi)):
            if node.license is None:
                self.fail(path, "phirule: index outside the licensed Φ list and no license attached")
                return
            entry = self._license_entry(node, path)
            if entry is None:
                return
        else:
            entry = self.theory.phi[node.rule.index]
        if len(node.rule.terms) != len(entry.args):
            self.fail(path, f"phirule: needs {len(entry.args)} argument terms")
            return
        if not self.need_eigen(node, path, 1):
            return
        y = node.rule.eigen[0]
        if not self.need_normal(node, path, y):
            return
        if not self.delta0_ok(node, path, entry.phi, "licensed formula"):
            return
        env = dict(zip(entry.args, node.rule.terms))
        env[entry.slot] = Var(y.name, y.sort)
        prem = {NotDPred(Var(y.name, y.sort)), fm.subst(negate(entry.phi), env)}
        self.match(node, path, set(), [prem])
        self.eigen_ok(node, path, extra_terms=node.rule.terms)
        self.need_d_literals(node, path, node.rule.terms)

    def _license_entry(self, node: Node, path: str):
        """A license subderivation concludes the ∃[!]-closure of its formula."""
        lic = node.license
        if lic.rule.rule != "submodel":
            self.fail(path, "phirule: license must conclude with the Submodel rule")
            return None
        phi = lic.rule.formula
        slots = lic.rule.slots
        if phi is None or len(slots) < 2:
            self.fail(path, "phirule: malformed license")
            return None
        return PhiEntry(tuple(slots[:-1]), slots[-1], phi)

    # -- T3 rules

    def rule_exu(self, node: Node, path: str):
        p = self.one_principal(node, path, ExBang)
        if p is None or not (self.need_terms(node, path, 1) and self.need_eigen(node, path, 2)):
            return
        s = node.rule.terms[0]
        a, b = node.rule.eigen
        av, bv = Var(a.name, a.sort), Var(b.name, b.sort)
        negphi = negate(p.body)
        prem1 = {
            subst_var(negphi, p.v.name, av),
            subst_var(negphi, p.v.name, bv),
            Eq(av, bv),
        }
        self.match(node, path, {p}, [{subst_var(p.body, p.v.name, s)}, prem1])
        self.eigen_ok(node, path, extra_terms=(s,))

    def rule_allu(self, node: Node, path: str):
        p = self.one_principal(node, path, AllBangNeg)
        if p is None or not self.need_eigen(node, path, 1):
            return
        b = node.rule.eigen[0]
        phi = negate(p.body)  # ∀!v body ≡ ¬∃!v φ for φ = ¬body
        prem = {
            subst_var(p.body, p.v.name, Var(b.name, b.sort)),
            not_unique(phi, p.v),
        }
        self.match(node, path, {p}, [prem])
        self.eigen_ok(node, path)

    def rule_bexdallu(self, node: Node, path: str):
        p = self.one_principal(node, path, BEx)
        if p is None or not (self.need_terms(node, path, 1) and self.need_eigen(node, path, 1)):
            return
        if not isinstance(p.body, AllBangNeg):
            self.fail(path, "bexdallu: principal is not ∃x∈t ∀!a φ")
            return
        s = node.rule.terms[0]
        a = node.rule.eigen[0]
        inner = p.body  # ∀!a φ(x, a)
        phis = subst_var(inner.body, p.v.name, s)
        prem1 = {
            subst_var(phis, inner.v.name, Var(a.name, a.sort)),
            not_unique(negate(phis), inner.v),
        }
        self.match(node, path, {p}, [{In(s, p.bound)}, prem1])
        self.eigen_ok(node, path, extra_terms=(s,))
        self.need_d_literals(node, path, (p.bound,))

    def rule_balldexu(self, node: Node, path: str):
        p = self.one_principal(node, path, BAll)
        if p is None or not self.need_eigen(node, path, 1):
            return
        if not isinstance(p.body, ExBang):
            self.fail(path, "balldexu: principal is not ∀x∈t ∃!a φ")
            return
        x = node.rule.eigen[0]
        xv = Var(x.name, x.sort)
        self.match(node, path, {p}, [{NotIn(xv, p.bound), subst_var(p.body, p.v.name, xv)}])
        self.eigen_ok(node, path)
        self.need_d_literals(node, path, (p.bound,))

    def rule_trcl(self, node: Node, path: str):
        if self.theory.tag != T3:
            self.fail(path, "trcl: only in the transitive-closure theory")
            return
        if not self.need_terms(node, path, 2):
            return
        t, s = node.rule.terms
        tc = App("tc", (t,), ())
        prem = {negate(trcl_formula(tc, t, s))}
        self.match(node, path, set(), [prem])
        self.need_d_literals(node, path, (t,))

    def rule_deff(self, node: Node, path: str):
        sym = node.rule.symbol
        if sym is None or sym not in getattr(self.reg, "defs", {}):
            self.fail(path, f"deff: unknown defined symbol {sym}")
            return
        level = self.reg.levels.get(sym, 0)
        if not (0 < level <= self.theory.level):
            self.fail(path, f"deff: {sym} has level {level}, theory is at level {self.theory.level}")
            return
        graph = self.reg.graphs.get(sym)
        if graph is None:
            self.fail(path, f"deff: {sym} has no registered graph formula")
            return
        fdef = self.reg.defs[sym]
        params = fdef.params()
        if len(node.rule.terms) != len(params):
            self.fail(path, f"deff: {sym} wants {len(params)} terms")
            return
        try:
            cls = fm.classify(graph, self.reg.symbol_levels(), level - 1)
        except fm.UnknownSymbol as exc:
            self.fail(path, f"deff: graph formula uses symbols above level {level - 1}: {exc}")
            return
        if cls is not fm.FormulaClass.DELTA0:
            self.fail(path, f"deff: graph formula must be delta0, is {cls.value}")
            return
        nterms = node.rule.terms[: len(fdef.normals)]
        sterms = node.rule.terms[len(fdef.normals) :]
        env = dict(zip(params, node.rule.terms))
        env["b"] = App(sym, nterms, sterms)
        prem = {fm.subst(negate(graph), env)}
        self.match(node, path, set(), [prem])
        self.need_d_literals(node, path, nterms)

    def rule_ufund(self, node: Node, path: str):
        if not (
            self.need_terms(node, path, 1)
            and self.need_eigen(node, path, 1)
            and self.need_formula(node, path, 2)
        ):
            return
        t = node.rule.terms[0]
        y = node.rule.eigen[0]
        if not self.need_normal(node, path, y):
            return
        phi = node.rule.formula
        xs, asl = node.rule.slots
        if not self.delta0_ok(node, path, phi):
            return
        yv = Var(y.name, y.sort)
        negphi = negate(phi)
        av = Var(asl)
        not_all = BEx(Var(xs), yv, AllBangNeg(av, negphi))
        prem0 = {
            NotIn(yv, App("tc1", (t,), ())),
            not_all,
            ExBang(av, subst_var(phi, xs, yv)),
        }
        prem1 = {AllBangNeg(av, subst_var(negphi, xs, t))}
        self.match(node, path, set(), [prem0, prem1])
        self.eigen_ok(node, path, extra_terms=(t,))
        self.need_d_literals(node, path, (t,))

    def rule_repl(self, node: Node, path: str):
        if not (
            self.need_terms(node, path, 1)
            and self.need_eigen(node, path, 2)
            and self.need_formula(node, path, 2)
        ):
            return
        t = node.rule.terms[0]
        x, c = node.rule.eigen
        if not self.need_normal(node, path, x):
            return
        phi = node.rule.formula
        xs, asl = node.rule.slots
        if not self.delta0_ok(node, path, phi):
            return
        xv = Var(x.name, x.sort)
        prem0 = {NotIn(xv, t), ExBang(Var(asl), subst_var(phi, xs, xv))}
        cx = App("apply", (), (Var(c.name, c.sort), Var(xs)))
        prem1 = {BEx(Var(xs), t, subst_var(negate(phi), asl, cx))}
        self.match(node, path, set(), [prem0, prem1])
        self.eigen_ok(node, path, extra_terms=(t,))
        self.need_d_literals(node, path, (t,))

    # -- small shared guards

    def one_principal(self, node: Node, path: str, kind):
        if len(node.rule.principal) != 1:
            self.fail(path, f"{node.rule.rule}: needs exactly one principal formula")
            return None
        p = node.rule.principal[0]
        if not isinstance(p, kind):
            self.fail(path, f"{node.rule.rule}: principal has the wrong shape")
            return None
        return p

    def need_terms(self, node: Node, path: str, k: int):
        if len(node.rule.terms) != k:
            self.fail(path, f"{node.rule.rule}: needs {k} instance term(s)")
            return False
        return True

    def need_eigen(self, node: Node, path: str, k: int):
        if len(node.rule.eigen) != k:
            self.fail(path, f"{node.rule.rule}: needs {k} eigenvariable(s)")
            return False
        return True

    def need_formula(self, node: Node, path: str, nslots):
        if node.rule.formula is None:
            self.fail(path, f"{node.rule.rule}: needs its schematic formula")
            return False
        if nslots is not None and len(node.rule.slots) != nslots:
            self.fail(path, f"{node.rule.rule}: needs {nslots} slot name(s)")
            return False
        return True


def inst_literal_pair(seq, principal):
    lits = [f for f in seq if isinstance(f, (In, NotIn, Eq, Neq, DPred, NotDPred))]
    if principal:
        lits = [f for f in principal] + lits
    for f in lits:
        if negate(f) in seq and f in seq:
            return True
    return False


def check_derivation(deriv: Derivation, registry) -> list:
    """Per-node violations; empty list means the derivation checks."""
    return _Check(deriv, registry).run()


def license_nesting(node: Node) -> int:
    """Maximum number of nested Submodel applications, licenses included."""
    sub = max([license_nesting(c) for c in node.children] or [0])
    lic = license_nesting(node.license) if node.license is not None else 0
    if node.rule.rule == "submodel":
        return max(1 + sub, lic)
    return max(sub, lic)


def is_cut_free(deriv: Derivation) -> bool:
    def walk(n: Node) -> bool:
        if n.rule.rule == "cut":
            return False
        return all(walk(c) for c in n.children)

    return walk(deriv.root)


# ---------------------------------------------------------------- audit


def _is_notunique_shape(phi) -> bool:
    if not (isinstance(phi, Ex) and isinstance(phi.body, Ex)):
        return False
    m = phi.body.body
    return (
        isinstance(m, And)
        and isinstance(m.a, And)
        and isinstance(m.b, Neq)
        and fm.is_delta0(m)
    )


def classify_occurrence(phi, tag: str) -> str:
    if isinstance(phi, (DPred, NotDPred)):
        return "dliteral" if tag in (T2D, T3) else "other"
    if fm.is_delta0(phi):
        return "delta0"
    cls = fm.classify(phi)
    if tag in (T0, T1, T2D):
        if cls is fm.FormulaClass.SIGMA1:
            return "sigma1"
        if cls is fm.FormulaClass.PI1:
            return "pi"
        if isinstance(phi, BEx):
            body = phi.body
            while isinstance(body, All):
                body = body.body
            if fm.is_delta0(body):
                return "pi"
        return "other"
    # t3 buckets
    if cls is fm.FormulaClass.SIGMA1BANG:
        return "sigma1bang"
    if isinstance(phi, AllBangNeg) and fm.is_delta0(phi.body):
        return "negated-unique"
    if isinstance(phi, BEx) and isinstance(phi.body, AllBangNeg) and fm.is_delta0(phi.body.body):
        return "negated-unique"
    if _is_notunique_shape(phi):
        return "not-unique"
    if cls is fm.FormulaClass.SIGMA1:
        return "sigma1"
    return "other"


def audit_formula_occurrences(deriv: Derivation) -> list:
    """Occurrences outside the closed list for the derivation's theory."""
    out = []

    def walk(n: Node, path: str):
        for f in seq_sorted(n.seq):
            bucket = classify_occurrence(f, deriv.theory.tag)
            if bucket == "other":
                out.append(f"node {path or 'root'}: formula outside the cut-free "
                           f"occurrence list: {fm.show_formula(f)}")
        for i, c in enumerate(n.children):
            walk(c, f"{path}.{i}" if path else str(i))
        # licenses are audited by their own extraction pass

    walk(deriv.root, "")
    return out


# ---------------------------------------------------------------- normalization


def normalize_free_variables(deriv: Derivation, keep) -> Derivation:
    keep = set(keep)

    def eigens(n: Node) -> set:
        out = {v.name for v in n.rule.eigen}
        for c in n.children:
            out |= eigens(c)
        if n.license is not None:
            out |= eigens(n.license)
        return out

    protected = keep | eigens(deriv.root)

    def fix_formula(f):
        env = {v: ZERO for v in fm.free_vars(f) - protected}
        return fm.subst(f, env) if env else f

    def fix_term(t):
        env = {v: ZERO for v in fm.term_vars(t) - protected}
        return fm.term_subst(t, env) if env else t

    def fix_node(n: Node) -> Node:
        inst = n.rule
        new_inst = RuleInstance(
            inst.rule,
            tuple(fix_formula(p) for p in inst.principal),
            inst.eigen,
            tuple(fix_term(t) for t in inst.terms),
            fix_formula(inst.formula) if inst.formula is not None else None,
            inst.slots,
            inst.symbol,
            inst.index,
        )
        return Node(
            sequent(fix_formula(f) for f in n.seq),
            new_inst,
            tuple(fix_node(c) for c in n.children),
            fix_node(n.license) if n.license is not None else None,
        )

    return Derivation(deriv.theory, fix_node(deriv.root))


# ---------------------------------------------------------------- file format


def parse_var_binder(e) -> Var:
    if isinstance(e, str):
        return Var(e)
    if isinstance(e, list) and len(e) == 2:
        return Var(e[0], e[1])
    raise ValueError(f"bad variable binder {sexpr.show(e)}")


_ALL_RULES = _RULES_T1 | _RULES_T2 | _RULES_T3


def parse_rule(e) -> RuleInstance:
    if not (isinstance(e, list) and e and e[0] == "rule"):
        raise ValueError(f"bad rule {sexpr.show(e)}")
    name = e[1]
    if name not in _ALL_RULES:
        raise ValueError(f"unknown rule id {name}")
    kw = {
        "principal": (),
        "eigen": (),
        "terms": (),
        "formula": None,
        "slots": (),
        "symbol": None,
        "index": None,
    }
    for part in e[2:]:
        head = part[0]
        if head == "principal":
            kw["principal"] = tuple(fm.parse_formula(x, allow_reserved=True) for x in part[1:])
        elif head == "eigen":
            kw["eigen"] = tuple(parse_var_binder(x) for x in part[1:])
        elif head == "terms":
            kw["terms"] = tuple(fm.parse_term(x, allow_reserved=True) for x in part[1:])
        elif head == "subst":
            # alternate spelling: named bindings in display order
            kw["terms"] = tuple(fm.parse_term(x[1], allow_reserved=True) for x in part[1:])
        elif head == "formula":
            kw["formula"] = fm.parse_formula(part[1], allow_reserved=True)
        elif head == "slots":
            kw["slots"] = tuple(part[1:])
        elif head == "sym":
            kw["symbol"] = part[1]
        elif head == "index":
            kw["index"] = int(part[1])
        else:
            raise ValueError(f"bad rule field {head}")
    return RuleInstance(name, **kw)


def parse_node(e) -> Node:
    if not (isinstance(e, list) and e and e[0] == "node"):
        raise ValueError(f"bad node {sexpr.show(e)}")
    seq = None
    rule = None
    children = []
    license = None
    for part in e[1:]:
        head = part[0] if isinstance(part, list) and part else None
        if head == "seq":
            seq = sequent(fm.parse_formula(x, allow_reserved=True) for x in part[1:])
        elif head == "rule":
            rule = parse_rule(part)
        elif head == "node":
            children.append(parse_node(part))
        elif head == "license":
            license = parse_node(part[1])
        else:
            raise ValueError(f"bad node part {sexpr.show(part)}")
    if seq is None or rule is None:
        raise ValueError("node needs (seq ...) and (rule ...)")
    return Node(seq, rule, tuple(children), license)


def parse_derivation(text: str) -> Derivation:
    e = sexpr.parse_one(text)
    if not (isinstance(e, list) and e and e[0] == "deriv"):
        raise ValueError("derivation file must start with (deriv ...)")
    tag = e[1]
    if tag not in (T0, T1, T2D, T3):
        raise ValueError(f"unknown theory {tag}")
    level = 0
    budget = 0
    phi: list = []
    root = None
    for part in e[2:]:
        head = part[0] if isinstance(part, list) and part else None
        if head == "level":
            level = int(part[1])
        elif head == "budget":
            budget = int(part[1])
        elif head == "phi":
            for entry in part[1:]:
                args = tuple(entry[0][1:])
                slot = entry[1][1]
                phi.append(PhiEntry(args, slot, fm.parse_formula(entry[2], allow_reserved=True)))
        elif head == "node":
            root = parse_node(part)
        else:
            raise ValueError(f"bad derivation part {sexpr.show(part)}")
    if root is None:
        raise ValueError("derivation has no root node")
    return Derivation(TheoryId(tag, level, budget, tuple(phi)), root)


def rule_sexpr(inst: RuleInstance):
    out = ["rule", inst.rule]
    if inst.principal:
        out.append(["principal"] + [fm.formula_sexpr(p) for p in inst.principal])
    if inst.eigen:
        out.append(["eigen"] + [fm._var_sexpr(v) for v in inst.eigen])
    if inst.terms:
        out.append(["terms"] + [fm.term_sexpr(t) for t in inst.terms])
    if inst.formula is not None:
        out.append(["formula", fm.formula_sexpr(inst.formula)])
    if inst.slots:
        out.append(["slots"] + list(inst.slots))
    if inst.symbol is not None:
        out.append(["sym", inst.symbol])
    if inst.index is not None:
        out.append(["index", str(inst.index)])
    return out


def node_sexpr(n: Node):
    out = ["node", ["seq"] + [fm.formula_sexpr(f) for f in seq_sorted(n.seq)], rule_sexpr(n.rule)]
    out += [node_sexpr(c) for c in n.children]
    if n.license is not None:
        out.append(["license", node_sexpr(n.license)])
    return out


def derivation_sexpr(d: Derivation):
    out = ["deriv", d.theory.tag]
    if d.theory.level:
        out.append(["level", str(d.theory.level)])
    if d.theory.budget:
        out.append(["budget", str(d.theory.budget)])
    if d.theory.phi:
        out.append(
            ["phi"]
            + [
                [["args"] + list(p.args), ["slot", p.slot], fm.formula_sexpr(p.phi)]
                for p in d.theory.phi
            ]
        )
    out.append(node_sexpr(d.root))
    return out


def show_derivation(d: Derivation) -> str:
    return sexpr.show_pretty(derivation_sexpr(d)) + "\n"
