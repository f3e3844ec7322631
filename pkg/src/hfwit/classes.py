"""Function definitions for the rudimentary / primitive recursive / safe
recursive / predicatively computable classes.

A FunctionDef is a named arrow with normal and safe parameters and a body
built from scheme combinators.  `validate_class` checks a definition against
one of the class grammars (RUD, PRIMREC, SRSF, PCSF_MINUS, PCSF_IOTA) and the
normal/safe discipline.  `synth_sigma1` / `synth_sigma1_bang` produce defining
formulas for validated definitions.  `derive_size_poly` builds the candidate
polynomial for the transitive-closure size bound; it is only ever trusted
after the empirical check in the evaluator.

Definitions with formula-carrying nodes (separation, cases) keep those nodes
at the body position, where the definition's parameter names are in scope;
composition goes through references to named definitions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

from . import formula as fm
from . import hf, sexpr
from .formula import (
    All,
    And,
    App,
    BAll,
    BEx,
    Eq,
    Ex,
    ExBang,
    In,
    Neq,
    NotIn,
    Or,
    Term,
    Var,
    ZERO,
)
from .hf import HFSet


class DuplicateSymbol(Exception):
    pass


class UnsupportedScheme(Exception):
    pass


class ClassViolation(Exception):
    pass


RUD = "RUD"
PRIMREC = "PRIMREC"
SRSF = "SRSF"
PCSF_MINUS = "PCSF_MINUS"
PCSF_IOTA = "PCSF_IOTA"

TAGS = (RUD, PRIMREC, SRSF, PCSF_MINUS, PCSF_IOTA)
UNSPLIT_TAGS = (RUD, PRIMREC)


# ---------------------------------------------------------------- scheme nodes


@dataclass(frozen=True)
class Proj:
    kind: str  # "n" | "s"
    index: int


@dataclass(frozen=True)
class ZeroF:
    pass


@dataclass(frozen=True)
class PairN:
    pass


@dataclass(frozen=True)
class DiffN:
    pass


@dataclass(frozen=True)
class UnionN:
    pass


@dataclass(frozen=True)
class OracleRef:
    symbol: str


@dataclass(frozen=True)
class Ref:
    name: str


@dataclass(frozen=True)
class BUnion:
    g: "Scheme"


@dataclass(frozen=True)
class Comp:
    h: "Scheme"
    inners: tuple


@dataclass(frozen=True)
class SafeComp:
    h: "Scheme"
    rs: tuple
    ts: tuple


@dataclass(frozen=True)
class SetRec:
    h: "Scheme"


@dataclass(frozen=True)
class PredRec:
    h: "Scheme"


@dataclass(frozen=True)
class Sep:
    var: str
    theta: object


@dataclass(frozen=True)
class Iota:
    g: "Scheme"


@dataclass(frozen=True)
class Cases:
    theta: object
    then: "Scheme"
    els: "Scheme"


@dataclass(frozen=True)
class CondCases:
    """f = then if ∀x∈g [w!^X_phi(h(... x ...))] else els; X is the class slot."""

    phi: object
    xvar: str
    g: "Scheme"
    h: "Scheme"
    then: "Scheme"
    els: "Scheme"


@dataclass(frozen=True)
class SepW:
    """{v ∈ last arg : plain ∧ w!^X_phi(cand)}; X is the class slot."""

    var: str
    plain: object
    phi: object
    cand: object  # Term over the def's params plus var


@dataclass(frozen=True)
class NormalSep:
    g: "Scheme"


Scheme = object

PLAIN_LEAVES = (PairN, DiffN, UnionN)
FORMULA_NODES = (Sep, Cases, CondCases, SepW)
CLASS_PARAM_NODES = (CondCases, SepW)


@dataclass(frozen=True)
class FunctionDef:
    name: str
    normals: tuple
    safes: tuple
    body: Scheme
    klass: str | None = None

    @property
    def arity(self):
        return (len(self.normals), len(self.safes))

    def params(self):
        return self.normals + self.safes


# ---------------------------------------------------------------- registry


@dataclass
class OracleEntry:
    symbol: str
    normal_arity: int
    safe_arity: int
    evaluator: Callable
    theta: object | None = None  # declared Π1 defining formula, unverified
    theta_args: tuple = ()  # names of the argument variables free in theta
    theta_val: str = "b"  # name of the value variable free in theta
    level: int = 0
    size_poly: "Poly | None" = None


class Registry:
    """Write-once collection of oracle symbols and named definitions."""

    def __init__(self, with_builtins: bool = True):
        self.oracles: dict = {}
        self.defs: dict = {}
        self.levels: dict = {}
        self.graphs: dict = {}  # symbol -> Δ0 graph formula (for the defined-symbol rule)
        self._oracle_memo: dict = {}
        if with_builtins:
            _install_builtins(self)

    def has_symbol(self, name: str) -> bool:
        return name in self.oracles or name in self.defs

    def symbol_levels(self) -> dict:
        return dict(self.levels)

    def register_oracle(self, entry: OracleEntry):
        if self.has_symbol(entry.symbol):
            raise DuplicateSymbol(entry.symbol)
        self.oracles[entry.symbol] = entry
        self.levels[entry.symbol] = entry.level
        return self

    def register_def(self, fdef: FunctionDef, level: int = 0, graph=None, replace: bool = False):
        if not replace and self.has_symbol(fdef.name):
            raise DuplicateSymbol(fdef.name)
        self.defs[fdef.name] = fdef
        self.levels[fdef.name] = level
        if graph is not None:
            self.graphs[fdef.name] = graph
        return self

    def arity(self, name: str):
        if name in self.oracles:
            e = self.oracles[name]
            return (e.normal_arity, e.safe_arity)
        if name in self.defs:
            return self.defs[name].arity
        raise fm.UnknownSymbol(name)

    def apply(self, name: str, nargs: tuple, sargs: tuple) -> HFSet:
        dn, ds = self.arity(name)
        if len(nargs) + len(sargs) != dn + ds:
            raise fm.UnknownSymbol(
                f"{name} expects {dn}+{ds} arguments, got {len(nargs)}+{len(sargs)}"
            )
        if (len(nargs), len(sargs)) != (dn, ds):
            comb = nargs + sargs
            nargs, sargs = comb[:dn], comb[dn:]
        if name in self.oracles:
            return self.oracle_value(name, nargs, sargs)
        from . import evaluator

        return evaluator.evaluate(self.defs[name], nargs, sargs, self).result

    def oracle_value(self, name: str, nargs: tuple, sargs: tuple) -> HFSet:
        """Apply an oracle; repeated calls cross-check against the memo so a
        nondeterministic evaluator is caught rather than trusted."""
        value = self.oracles[name].evaluator(nargs, sargs)
        key = (name, nargs, sargs)
        seen = self._oracle_memo.get(key)
        if seen is None:
            self._oracle_memo[key] = value
        elif seen is not value:
            raise ClassViolation(f"oracle {name} is not deterministic")
        return value

    def fresh_name(self, base: str) -> str:
        if not self.has_symbol(base):
            return base
        k = 1
        while self.has_symbol(f"{base}.{k}"):
            k += 1
        return f"{base}.{k}"


def register_oracle(registry: Registry, entry: OracleEntry) -> Registry:
    return registry.register_oracle(entry)


def powerset_entry() -> OracleEntry:
    a, b, c, z = Var("a"), Var("b"), Var("c"), Var("z")
    theta = All(
        c,
        And(
            Or(NotIn(Var("c"), Var("b")), BAll(z, Var("c"), In(Var("z"), Var("a")))),
            Or(BEx(z, Var("c"), NotIn(Var("z"), Var("a"))), In(Var("c"), Var("b"))),
        ),
    )
    return OracleEntry(
        "powerset",
        1,
        0,
        lambda nargs, sargs: hf.powerset(nargs[0]),
        theta=theta,
        theta_args=("a",),
        theta_val="b",
    )


# ---------------------------------------------------------------- builtins


def _install_builtins(reg: Registry):
    """The rudimentary helpers the calculus and witness machinery use as
    level-0 function symbols: pr, un, kpair, fst, snd, apply, image and the
    transitive closures tc, tc1."""
    it = "it"

    pr = FunctionDef("pr", (), ("a", "b"), PairN(), None)
    df = FunctionDef("df", (), ("a", "b"), DiffN(), None)
    un = FunctionDef("un", (), ("a",), UnionN(), None)
    kp = FunctionDef(
        "kpair",
        (),
        ("a", "b"),
        SafeComp(
            PairN(),
            (),
            (
                SafeComp(PairN(), (), (Proj("s", 0), Proj("s", 0))),
                SafeComp(PairN(), (), (Proj("s", 0), Proj("s", 1))),
            ),
        ),
        None,
    )
    # fst(d) = ∪{b ∈ ∪d : ∃c ∈ ∪d (⟨b,c⟩ = d)}
    fst_sep = FunctionDef(
        "fst.sel",
        (),
        ("d", "c"),
        Sep(
            it,
            BEx(
                Var("z"),
                App("un", (), (Var("d"),)),
                Eq(App("kpair", (), (Var(it), Var("z"))), Var("d")),
            ),
        ),
        None,
    )
    fst = FunctionDef(
        "fst",
        (),
        ("d",),
        SafeComp(
            UnionN(),
            (),
            (
                SafeComp(
                    Ref("fst.sel"), (), (Proj("s", 0), SafeComp(UnionN(), (), (Proj("s", 0),)))
                ),
            ),
        ),
        None,
    )
    snd_sep = FunctionDef(
        "snd.sel",
        (),
        ("d", "c"),
        Sep(
            it,
            BEx(
                Var("z"),
                App("un", (), (Var("d"),)),
                Eq(App("kpair", (), (Var("z"), Var(it))), Var("d")),
            ),
        ),
        None,
    )
    snd = FunctionDef(
        "snd",
        (),
        ("d",),
        SafeComp(
            UnionN(),
            (),
            (
                SafeComp(
                    Ref("snd.sel"), (), (Proj("s", 0), SafeComp(UnionN(), (), (Proj("s", 0),)))
                ),
            ),
        ),
        None,
    )
    # apply(c,x) = c'x = ∪{b ∈ ∪∪c : ⟨x,b⟩ ∈ c}
    app_sep = FunctionDef(
        "apply.sel",
        (),
        ("c", "x", "u"),
        Sep(it, In(App("kpair", (), (Var("x"), Var(it))), Var("c"))),
        None,
    )
    app = FunctionDef(
        "apply",
        (),
        ("c", "x"),
        SafeComp(
            UnionN(),
            (),
            (
                SafeComp(
                    Ref("apply.sel"),
                    (),
                    (
                        Proj("s", 0),
                        Proj("s", 1),
                        SafeComp(
                            UnionN(), (), (SafeComp(UnionN(), (), (Proj("s", 0),)),)
                        ),
                    ),
                ),
            ),
        ),
        None,
    )
    # image(c,x) = c''x = {b ∈ ∪∪c : ∃z ∈ x (⟨z,b⟩ ∈ c)}
    img = FunctionDef(
        "image",
        (),
        ("c", "x", "u"),
        Sep(
            it,
            BEx(Var("z"), Var("x"), In(App("kpair", (), (Var("z"), Var(it))), Var("c"))),
        ),
        None,
    )
    img_top = FunctionDef(
        "image",
        (),
        ("c", "x"),
        SafeComp(
            Ref("image.sel"),
            (),
            (
                Proj("s", 0),
                Proj("s", 1),
                SafeComp(UnionN(), (), (SafeComp(UnionN(), (), (Proj("s", 0),)),)),
            ),
        ),
        None,
    )
    img_sel = FunctionDef("image.sel", img.normals, img.safes, img.body, None)
    # tc1(x) = TC(x ∪ {x}) = {x} ∪ ∪{tc1(z) : z ∈ x}, by predicative set recursion
    tc1_step = FunctionDef(
        "tc1.step",
        ("x",),
        ("e",),
        SafeComp(
            UnionN(),
            (),
            (
                SafeComp(
                    PairN(),
                    (),
                    (
                        SafeComp(PairN(), (), (Proj("n", 0), Proj("n", 0))),
                        SafeComp(UnionN(), (), (Proj("s", 0),)),
                    ),
                ),
            ),
        ),
        None,
    )
    tc1 = FunctionDef("tc1", ("x",), (), PredRec(Ref("tc1.step")), None)
    tc = FunctionDef(
        "tc",
        ("x",),
        (),
        SafeComp(
            DiffN(),
            (),
            (
                SafeComp(Ref("tc1"), (Proj("n", 0),), ()),
                SafeComp(PairN(), (), (Proj("n", 0), Proj("n", 0))),
            ),
        ),
        None,
    )
    iotaid = FunctionDef("iotaid", (), ("c",), Iota(Proj("s", 0)), None)
    for d in (
        pr,
        df,
        un,
        kp,
        fst_sep,
        fst,
        snd_sep,
        snd,
        app_sep,
        app,
        img_sel,
        img_top,
        tc1_step,
        tc1,
        tc,
        iotaid,
    ):
        reg.register_def(d, level=0, replace=True)


BUILTIN_NAMES = (
    "pr",
    "df",
    "un",
    "kpair",
    "fst",
    "snd",
    "apply",
    "image",
    "tc",
    "tc1",
    "iotaid",
    "fst.sel",
    "snd.sel",
    "apply.sel",
    "image.sel",
    "tc1.step",
)


# ---------------------------------------------------------------- validation

_GRAMMARS = {
    RUD: {Proj, ZeroF, PairN, DiffN, UnionN, OracleRef, Ref, BUnion, Comp, Sep, Cases},
    PRIMREC: {
        Proj,
        ZeroF,
        PairN,
        DiffN,
        UnionN,
        OracleRef,
        Ref,
        BUnion,
        Comp,
        Sep,
        Cases,
        SetRec,
    },
    SRSF: {
        Proj,
        ZeroF,
        PairN,
        DiffN,
        UnionN,
        OracleRef,
        Ref,
        BUnion,
        SafeComp,
        Sep,
        Cases,
        PredRec,
        Iota,
    },
    PCSF_MINUS: {Proj, ZeroF, PairN, DiffN, UnionN, OracleRef, Ref, SafeComp, Sep, Cases},
    PCSF_IOTA: {
        Proj,
        ZeroF,
        PairN,
        DiffN,
        UnionN,
        OracleRef,
        Ref,
        SafeComp,
        Sep,
        Cases,
        PredRec,
        Iota,
    },
}


def _norm_kind(node, split: bool):
    """In unsplit classes safe composition degenerates to composition and
    predicative set recursion to set recursion (and vice versa for the split
    reading of the shared builtins)."""
    k = type(node)
    if not split:
        if k is SafeComp:
            return Comp
        if k is PredRec:
            return SetRec
    else:
        if k is Comp:
            return Comp  # never admitted in split grammars
    return k


def validate_class(
    fdef: FunctionDef,
    tag: str,
    registry: Registry,
    pcsf_plus: bool = False,
    class_param: bool = False,
) -> list:
    """Violation report; empty means the definition is in the class."""
    if tag not in TAGS:
        raise ValueError(f"unknown class tag {tag}")
    # the unsplit classes ignore the normal/safe role split entirely
    split = tag not in UNSPLIT_TAGS
    out: list = []
    seen_stack: set = set()

    def check_ref(name: str, N: int, S: int, where: str):
        if name in registry.oracles:
            e = registry.oracles[name]
            dn, ds = e.normal_arity, e.safe_arity
        elif name in registry.defs:
            target = registry.defs[name]
            dn, ds = target.arity
            key = (name, tag)
            if key not in seen_stack:
                seen_stack.add(key)
                sub = validate_class(target, tag, registry, pcsf_plus, class_param)
                for v in sub:
                    out.append(f"{where}: referenced {name}: {v}")
        else:
            out.append(f"{where}: unknown symbol {name}")
            return
        # split symbols may be used in unsplit classes with all arguments
        # combined, but safe values never flow into declared normal slots
        if (N, S) != (dn, ds) and not (S == 0 and N == dn + ds and not split):
            out.append(f"{where}: {name} has arity {dn}+{ds}, used at {N}+{S}")

    def check_formula_delta0(theta, ns, ss, where: str):
        cls = fm.classify(theta)
        if cls is not fm.FormulaClass.DELTA0:
            out.append(f"{where}: guard formula is {cls.value}, want delta0")
            return
        if split:
            v = fm.check_stratified(theta, ns, ss, registry)
            if v is not None:
                out.append(f"{where}: guard not stratified: {v}")
        else:
            bad = fm.free_vars(theta) - set(ns) - set(ss)
            if bad:
                out.append(f"{where}: unknown variables {sorted(bad)} in guard")

    def walk(node, N: int, S: int, at_body: bool, where: str):
        kind = _norm_kind(node, split)
        allowed = set(_GRAMMARS[tag])
        if class_param:
            allowed |= {CondCases, SepW}
        if pcsf_plus and tag in (PCSF_MINUS, PCSF_IOTA):
            allowed |= {NormalSep}
        if type(node) is NormalSep and type(node) not in allowed:
            out.append(f"{where}: (Normal Separation) is only admitted with the pcsf-plus flag")
            return
        if kind not in allowed and type(node) not in allowed:
            out.append(f"{where}: scheme {type(node).__name__} not in class grammar {tag}")
            return
        if isinstance(node, FORMULA_NODES) and not at_body:
            out.append(f"{where}: {type(node).__name__} only allowed at a definition body")
            return

        if isinstance(node, Proj):
            if node.kind == "n":
                if not (0 <= node.index < N):
                    out.append(f"{where}: normal projection {node.index} out of range {N}")
            elif node.kind == "s":
                if not (0 <= node.index < S):
                    out.append(f"{where}: safe projection {node.index} out of range {S}")
            else:
                out.append(f"{where}: bad projection kind {node.kind}")
        elif isinstance(node, ZeroF):
            pass
        elif isinstance(node, PLAIN_LEAVES):
            want = 1 if isinstance(node, UnionN) else 2
            if N + S != want:
                out.append(f"{where}: {type(node).__name__} wants {want} arguments, has {N}+{S}")
            elif split and N != 0:
                out.append(
                    f"{where}: {type(node).__name__} takes safe arguments in class {tag}"
                )
        elif isinstance(node, OracleRef):
            check_ref(node.symbol, N, S, where)
        elif isinstance(node, Ref):
            check_ref(node.name, N, S, where)
        elif isinstance(node, BUnion):
            # the union bound is the last argument; the union variable takes
            # its place in g (safe position in the split classes)
            if N + S < 1:
                out.append(f"{where}: bounded union needs its bound as the last argument")
            else:
                walk(node.g, N, S, False, where + "/bunion-g")
        elif isinstance(node, Comp):
            walk(node.h, len(node.inners), 0, False, where + "/comp-h")
            for i, g in enumerate(node.inners):
                walk(g, N, S, False, f"{where}/comp-g{i}")
        elif isinstance(node, SafeComp):
            walk(node.h, len(node.rs), len(node.ts), False, where + "/safecomp-h")
            for i, r in enumerate(node.rs):
                # normal inner functions take no safe arguments
                walk(r, N, 0, False, f"{where}/safecomp-r{i}")
            for i, t in enumerate(node.ts):
                walk(t, N, S, False, f"{where}/safecomp-t{i}")
        elif isinstance(node, (SetRec, PredRec)):
            if N < 1:
                out.append(f"{where}: set recursion needs a first normal argument")
            elif split:
                walk(node.h, N, S + 1, False, where + "/rec-h")
            else:
                walk(node.h, N + 1, S, False, where + "/rec-h")
        elif isinstance(node, Sep):
            if N + S < 1:
                out.append(f"{where}: separation needs its bound as the last argument")
                return
            params = fdef.params()
            bound = params[-1]
            ns = set(fdef.normals)
            ss = set(fdef.safes) | {node.var}
            ss.discard(bound)
            ns.discard(bound)
            if bound in fm.free_vars(node.theta):
                out.append(f"{where}: separation formula may not mention the bound {bound}")
            check_formula_delta0(node.theta, ns, ss, where + "/sep")
        elif isinstance(node, Cases):
            check_formula_delta0(node.theta, set(fdef.normals), set(fdef.safes), where + "/cases")
            walk(node.then, N, S, at_body, where + "/then")
            walk(node.els, N, S, at_body, where + "/else")
        elif isinstance(node, CondCases):
            cls = fm.classify(node.phi)
            if cls is not fm.FormulaClass.SIGMA1BANG:
                out.append(f"{where}: cond-cases guard must be sigma1bang, is {cls.value}")
            walk(node.g, N, S, False, where + "/ccases-g")
            walk(node.h, N + 1, S, False, where + "/ccases-h")
            walk(node.then, N, S, at_body, where + "/then")
            walk(node.els, N, S, at_body, where + "/else")
        elif isinstance(node, SepW):
            cls = fm.classify(node.phi)
            if cls not in (fm.FormulaClass.SIGMA1BANG, fm.FormulaClass.DELTA0):
                out.append(f"{where}: sepw witness formula must be sigma1bang, is {cls.value}")
            if N + S < 1:
                out.append(f"{where}: sepw needs its bound as the last argument")
        elif isinstance(node, Iota):
            if N + S < 1:
                out.append(f"{where}: the ι scheme needs its range bound as the last argument")
            else:
                walk(node.g, N, S, False, where + "/iota-g")
        elif isinstance(node, NormalSep):
            walk(node.g, N, S, False, where + "/nsep-g")
        else:
            out.append(f"{where}: unknown scheme node {node!r}")

    walk(fdef.body, len(fdef.normals), len(fdef.safes), True, fdef.name)
    return out


# ---------------------------------------------------------------- size polynomials


@dataclass(frozen=True)
class Poly:
    """Multivariate polynomial with nonnegative integer coefficients over the
    normal-argument sizes; monomial exponent tuple -> coefficient."""

    nvars: int
    monomials: tuple  # sorted tuple of (exponents, coeff)

    @staticmethod
    def const(c: int, nvars: int) -> "Poly":
        if c < 0:
            raise ValueError("negative coefficient")
        if c == 0:
            return Poly(nvars, ())
        return Poly(nvars, (((0,) * nvars, c),))

    @staticmethod
    def var(i: int, nvars: int) -> "Poly":
        e = [0] * nvars
        e[i] = 1
        return Poly(nvars, ((tuple(e), 1),))

    def _as_dict(self):
        return dict(self.monomials)

    @staticmethod
    def _from_dict(d: dict, nvars: int) -> "Poly":
        items = tuple(sorted((e, c) for e, c in d.items() if c))
        return Poly(nvars, items)

    def add(self, other: "Poly") -> "Poly":
        d = self._as_dict()
        for e, c in other.monomials:
            d[e] = d.get(e, 0) + c
        return Poly._from_dict(d, self.nvars)

    def mul(self, other: "Poly") -> "Poly":
        d: dict = {}
        for e1, c1 in self.monomials:
            for e2, c2 in other.monomials:
                e = tuple(a + b for a, b in zip(e1, e2))
                d[e] = d.get(e, 0) + c1 * c2
        return Poly._from_dict(d, self.nvars)

    def subst(self, args: list) -> "Poly":
        """Substitute polynomials (all over the same variable set) for the variables."""
        nv = args[0].nvars if args else self.nvars
        out = Poly.const(0, nv)
        for e, c in self.monomials:
            term = Poly.const(c, nv)
            for i, p in enumerate(e):
                for _ in range(p):
                    term = term.mul(args[i])
            out = out.add(term)
        return out

    def eval(self, xs: list) -> int:
        total = 0
        for e, c in self.monomials:
            v = c
            for i, p in enumerate(e):
                v *= xs[i] ** p
            total += v
        return total

    def show(self) -> str:
        if not self.monomials:
            return "0"
        parts = []
        for e, c in self.monomials:
            factors = [str(c)] if c != 1 or not any(e) else []
            for i, p in enumerate(e):
                if p == 1:
                    factors.append(f"x{i + 1}")
                elif p > 1:
                    factors.append(f"x{i + 1}^{p}")
            parts.append("*".join(factors))
        return "+".join(parts)


def parse_poly(text: str, nvars: int) -> Poly:
    """Parse sums of products like '2*x1*x2 + x1^2 + 3'."""
    out = Poly.const(0, nvars)
    for part in text.replace("-", "#").split("+"):
        part = part.strip()
        if "#" in part:
            raise ValueError("size polynomials have nonnegative coefficients")
        if not part:
            continue
        term = Poly.const(1, nvars)
        for factor in part.split("*"):
            factor = factor.strip()
            if factor.isdigit():
                term = term.mul(Poly.const(int(factor), nvars))
                continue
            if "^" in factor:
                base, _, exp = factor.partition("^")
                reps = int(exp)
            else:
                base, reps = factor, 1
            if not base.startswith("x"):
                raise ValueError(f"bad factor {factor}")
            i = int(base[1:]) - 1
            if not (0 <= i < nvars):
                raise ValueError(f"variable {base} out of range for {nvars} arguments")
            for _ in range(reps):
                term = term.mul(Poly.var(i, nvars))
        out = out.add(term)
    return out


def derive_size_poly(fdef: FunctionDef, registry: Registry) -> Poly:
    """Candidate p_f with card(TC(f(X/A))) ≤ p_f(card TC(X_i)) + Σ card TC(A_j).

    Deliberately generous; always checked empirically by check_size_bound.
    """
    tag_nodes_banned = (BUnion, SetRec)

    def bound_poly(N: int, S: int) -> Poly:
        """Size of a value included in the last argument: the safe sum covers
        a safe bound; a normal bound charges its own size variable."""
        if S > 0 or N == 0:
            return Poly.const(1, N)
        return Poly.var(N - 1, N).add(Poly.const(1, N))

    def derive(node, N: int, S: int) -> Poly:
        if isinstance(node, tag_nodes_banned):
            raise UnsupportedScheme(
                f"{type(node).__name__} has no size polynomial (outside PCSF)"
            )
        if isinstance(node, Proj):
            if node.kind == "n":
                return Poly.var(node.index, N)
            return Poly.const(0, N)
        if isinstance(node, ZeroF):
            return Poly.const(0, N)
        if isinstance(node, PairN):
            if N == 0:
                return Poly.const(2, N)
            p = Poly.const(2, N)
            for i in range(N):
                p = p.add(Poly.var(i, N))
            return p
        if isinstance(node, (DiffN, UnionN)):
            if N == 0:
                return Poly.const(1, N)
            p = Poly.const(1, N)
            for i in range(N):
                p = p.add(Poly.var(i, N))
            return p
        if isinstance(node, OracleRef):
            e = registry.oracles.get(node.symbol)
            if e is None or e.size_poly is None:
                raise UnsupportedScheme(f"oracle {node.symbol} has no declared size polynomial")
            if e.normal_arity != N:
                raise UnsupportedScheme(f"oracle {node.symbol} arity mismatch in size bound")
            return e.size_poly
        if isinstance(node, Ref):
            target = registry.defs.get(node.name)
            if target is None:
                raise UnsupportedScheme(f"unknown symbol {node.name}")
            dn, ds = target.arity
            if (dn, ds) != (N, S):
                raise UnsupportedScheme(f"{node.name} used at unexpected arity in size bound")
            return derive(target.body, dn, ds)
        if isinstance(node, SafeComp):
            rpolys = [derive(r, N, 0) for r in node.rs]
            ph = derive(node.h, len(node.rs), len(node.ts))
            out = ph.subst(rpolys) if node.rs else Poly.const(ph.eval([]), N)
            for t in node.ts:
                out = out.add(derive(t, N, S))
            return out
        if isinstance(node, Comp):
            gpolys = [derive(g, N, S) for g in node.inners]
            ph = derive(node.h, len(node.inners), 0)
            return ph.subst(gpolys) if node.inners else Poly.const(ph.eval([]), N)
        if isinstance(node, PredRec):
            ph = derive(node.h, N, S + 1)
            x = Poly.var(0, N)
            return x.add(Poly.const(1, N)).mul(ph.add(Poly.const(1, N)))
        if isinstance(node, (Sep, SepW, NormalSep)):
            return bound_poly(N, S)
        if isinstance(node, Cases):
            return derive(node.then, N, S).add(derive(node.els, N, S))
        if isinstance(node, CondCases):
            return derive(node.then, N, S).add(derive(node.els, N, S))
        if isinstance(node, Iota):
            return derive(node.g, N, S)
        raise UnsupportedScheme(f"no size rule for {type(node).__name__}")

    return derive(fdef.body, len(fdef.normals), len(fdef.safes))


# ---------------------------------------------------------------- Σ1 synthesis

_is_fn = fm.is_function_on_formula


def _tc1_term(x: Term) -> Term:
    return App("tc1", (x,), ())


class _Synth:
    def __init__(self, fdef: FunctionDef, registry: Registry, bang: bool):
        self.fdef = fdef
        self.reg = registry
        self.bang = bang
        self.aux: list = []

    def aux_symbol(self, node, N: int, S: int) -> str:
        """Register a subtree as a named helper so formulas can mention it."""
        name = self.reg.fresh_name(f"{self.fdef.name}.s{len(self.aux)}")
        params_n = tuple(f"p{i}" for i in range(N))
        params_s = tuple(f"q{i}" for i in range(S))
        helper = FunctionDef(name, params_n, params_s, node, self.fdef.klass)
        self.reg.register_def(helper, level=0)
        self.aux.append(helper)
        return name

    def value(self, node, ntms: tuple, stms: tuple):
        """Term denoting the node's value, or None if not term-shaped."""
        if isinstance(node, Proj):
            return (ntms if node.kind == "n" else stms)[node.index]
        if isinstance(node, ZeroF):
            return ZERO
        if isinstance(node, (OracleRef, Ref)):
            sym = node.symbol if isinstance(node, OracleRef) else node.name
            dn, ds = self.reg.arity(sym)
            comb = ntms + stms
            if (len(ntms), len(stms)) != (dn, ds):
                ntms, stms = comb[:dn], comb[dn:]
            return App(sym, ntms, stms)
        if isinstance(node, Comp):
            inner = [self.value(g, ntms, stms) for g in node.inners]
            if all(t is not None for t in inner):
                return self.value(node.h, tuple(inner), ())
            return None
        if isinstance(node, SafeComp):
            rv = [self.value(r, ntms, ()) for r in node.rs]
            tv = [self.value(t, ntms, stms) for t in node.ts]
            if all(t is not None for t in rv + tv):
                return self.value(node.h, tuple(rv), tuple(tv))
            return None
        return None

    def graph(self, node, ntms: tuple, stms: tuple, result: Term):
        """(exvars, matrix) with matrix Δ0 given the exvars; the value of node
        at the argument terms equals result iff ∃exvars matrix."""
        tv = self.value(node, ntms, stms)
        if tv is not None:
            return [], Eq(result, tv)
        if isinstance(node, PairN):
            a, b = (ntms + stms)
            x = fm.fresh_var("x")
            return [], And(
                And(In(a, result), In(b, result)),
                BAll(x, result, Or(Eq(Var(x.name), a), Eq(Var(x.name), b))),
            )
        if isinstance(node, DiffN):
            a, b = (ntms + stms)
            c = fm.fresh_var("x")
            cv = Var(c.name)
            return [], And(
                BAll(c, result, And(In(cv, a), NotIn(cv, b))),
                BAll(c, a, Or(In(cv, b), In(cv, result))),
            )
        if isinstance(node, UnionN):
            (a,) = ntms + stms
            c, d = fm.fresh_var("x"), fm.fresh_var("y")
            return [], And(
                BAll(c, result, BEx(d, a, In(Var(c.name), Var(d.name)))),
                BAll(d, a, BAll(c, Var(d.name), In(Var(c.name), result))),
            )
        if isinstance(node, (Comp, SafeComp)):
            evs: list = []
            matrices: list = []
            if isinstance(node, Comp):
                pieces = [(g, ntms, stms) for g in node.inners]
            else:
                pieces = [(r, ntms, ()) for r in node.rs] + [(t, ntms, stms) for t in node.ts]
            args = []
            for g, nt, st in pieces:
                t = self.value(g, nt, st)
                if t is None:
                    v = fm.fresh_var("v")
                    if self.bang:
                        sym = self.aux_symbol(g, len(nt), len(st))
                        args.append(App(sym, nt, st))
                        continue
                    sub_evs, sub_m = self.graph(g, nt, st, Var(v.name))
                    evs.extend(sub_evs + [v])
                    matrices.append(sub_m)
                    args.append(Var(v.name))
                else:
                    args.append(t)
            if isinstance(node, Comp):
                h_evs, h_m = self.graph(node.h, tuple(args), (), result)
            else:
                h_evs, h_m = self.graph(
                    node.h, tuple(args[: len(node.rs)]), tuple(args[len(node.rs):]), result
                )
            return evs + h_evs, fm.and_all(matrices + [h_m])
        if isinstance(node, BUnion):
            z = stms[-1] if stms else ntms[-1]
            gsym = self.aux_symbol(node.g, len(ntms), len(stms))
            y, c = fm.fresh_var("y"), fm.fresh_var("c")
            if stms:
                gapp = App(gsym, ntms, stms[:-1] + (Var(y.name),))
            else:
                gapp = App(gsym, ntms[:-1] + (Var(y.name),), stms)
            return [], And(
                BAll(y, z, BAll(c, gapp, In(Var(c.name), result))),
                BAll(c, result, BEx(y, z, In(Var(c.name), gapp))),
            )
        if isinstance(node, (SetRec, PredRec)):
            hsym = self.aux_symbol(
                node.h,
                len(ntms) + (0 if isinstance(node, PredRec) else 1),
                len(stms) + (1 if isinstance(node, PredRec) else 0),
            )
            x = ntms[0]
            e = fm.fresh_var("e")
            z = fm.fresh_var("z")
            bound = _tc1_term(x)
            ev = Var(e.name)
            if isinstance(node, PredRec):
                happ = App(
                    hsym,
                    (Var(z.name),) + ntms[1:],
                    stms + (App("image", (), (ev, Var(z.name))),),
                )
            else:
                happ = App(
                    hsym,
                    (Var(z.name),) + ntms[1:] + (App("image", (), (ev, Var(z.name))),),
                    stms,
                )
            matrix = fm.and_all(
                [
                    _is_fn(ev, bound, varname=f"%fo{e.name.strip('%')}"),
                    BAll(z, bound, Eq(App("apply", (), (ev, Var(z.name))), happ)),
                    Eq(App("apply", (), (ev, x)), result),
                ]
            )
            return [e], matrix
        if isinstance(node, Sep):
            env = dict(zip(self.fdef.params(), ntms + stms))
            bound = (ntms + stms)[-1]
            u = fm.fresh_var("u")
            theta_u = fm.subst(node.theta, {**env, node.var: Var(u.name)})
            return [], And(
                BAll(u, result, And(In(Var(u.name), bound), theta_u)),
                BAll(u, bound, Or(fm.negate(theta_u), In(Var(u.name), result))),
            )
        if isinstance(node, Cases):
            env = dict(zip(self.fdef.params(), ntms + stms))
            theta = fm.subst(node.theta, env)
            evs_t, m_t = self.graph(node.then, ntms, stms, result)
            evs_e, m_e = self.graph(node.els, ntms, stms, result)
            return evs_t + evs_e, Or(And(theta, m_t), And(fm.negate(theta), m_e))
        if isinstance(node, NormalSep):
            gsym = self.aux_symbol(node.g, len(ntms), len(stms))
            bound = (ntms + stms)[-1]
            u = fm.fresh_var("u")
            gapp = App(gsym, ntms, stms[:-1] + (Var(u.name),)) if stms else App(
                gsym, ntms[:-1] + (Var(u.name),), stms
            )
            return [], And(
                BAll(u, result, And(In(Var(u.name), bound), Neq(gapp, ZERO))),
                BAll(u, bound, Or(Eq(gapp, ZERO), In(Var(u.name), result))),
            )
        if isinstance(node, Iota):
            gsym = self.aux_symbol(node.g, len(ntms), len(stms))
            c = (ntms + stms)[-1]
            b0, b1 = fm.fresh_var("b"), fm.fresh_var("b")
            gapp0 = App(gsym, ntms, stms[:-1] + (Var(b0.name),))
            gapp1 = App(gsym, ntms, stms[:-1] + (Var(b1.name),))
            is_value = And(
                BEx(b0, c, Eq(gapp0, result)), BAll(b1, c, Eq(gapp1, result))
            )
            not_single = Or(
                Eq(c, ZERO), BEx(b0, c, BEx(b1, c, Neq(gapp0, gapp1)))
            )
            return [], Or(is_value, And(Eq(result, ZERO), not_single))
        raise UnsupportedScheme(f"cannot synthesize a defining formula for {type(node).__name__}")


def synth_sigma1(fdef: FunctionDef, registry: Registry, result: str = "b"):
    """Σ1 defining formula of a RUD/PRIMREC/SRSF definition: free variables
    are the definition's parameters plus `result`."""
    if result in fdef.params():
        raise ValueError("result variable collides with a parameter")
    for bad in (Iota, CondCases, SepW):
        if _contains(fdef.body, bad):
            raise UnsupportedScheme(f"{bad.__name__} needs synth_sigma1_bang")
    syn = _Synth(fdef, registry, bang=False)
    ntms = tuple(Var(p) for p in fdef.normals)
    stms = tuple(Var(p) for p in fdef.safes)
    evs, matrix = syn.graph(fdef.body, ntms, stms, Var(result))
    phi = matrix
    for v in reversed(evs):
        phi = Ex(v, phi)
    return phi


def synth_sigma1_bang(fdef: FunctionDef, registry: Registry, result: str = "b"):
    """Σ1! defining formula ∃!e(graph ∧ e = result) of a PCSF^ι definition."""
    if result in fdef.params():
        raise ValueError("result variable collides with a parameter")
    syn = _Synth(fdef, registry, bang=True)
    ntms = tuple(Var(p) for p in fdef.normals)
    stms = tuple(Var(p) for p in fdef.safes)
    e = fm.fresh_var("e")
    evs, matrix = syn.graph(fdef.body, ntms, stms, Var(e.name))
    # in bang mode inner composites are symbolized, so only recursion adds an
    # exvar; fold any such function variable into the unique quantifier chain
    if not evs:
        return ExBang(e, And(matrix, Eq(Var(e.name), Var(result))))
    if len(evs) == 1 and isinstance(fdef.body, (SetRec, PredRec)):
        # ∃!c(course-of-values graph ∧ c'x = result), per the recursion case;
        # the unique witness is the graph, the value slot stays free
        return ExBang(evs[0], fm.subst_var(matrix, e.name, Var(result)))
    raise UnsupportedScheme("definition is not in a Σ1!-synthesizable shape")


def _contains(node, kind) -> bool:
    if isinstance(node, kind):
        return True
    for attr in ("g", "h", "then", "els"):
        sub = getattr(node, attr, None)
        if sub is not None and not isinstance(sub, (str, tuple)) and _is_scheme(sub):
            if _contains(sub, kind):
                return True
    for attr in ("inners", "rs", "ts"):
        for sub in getattr(node, attr, ()):
            if _contains(sub, kind):
                return True
    return False


def _is_scheme(x) -> bool:
    return isinstance(
        x,
        (
            Proj,
            ZeroF,
            PairN,
            DiffN,
            UnionN,
            OracleRef,
            Ref,
            BUnion,
            Comp,
            SafeComp,
            SetRec,
            PredRec,
            Sep,
            Iota,
            Cases,
            CondCases,
            SepW,
            NormalSep,
        ),
    )


# ---------------------------------------------------------------- def file syntax


def parse_scheme(e):
    if isinstance(e, str):
        if e == "zero":
            return ZeroF()
        return Ref(e)
    head = e[0]
    if head == "proj":
        if len(e) == 2:
            return Proj("n", int(e[1]))
        return Proj(e[1], int(e[2]))
    if head == "pair":
        return PairN()
    if head == "diff":
        return DiffN()
    if head == "union":
        return UnionN()
    if head == "oracle":
        return OracleRef(e[1])
    if head == "bunion":
        return BUnion(parse_scheme(e[1]))
    if head == "comp":
        return Comp(parse_scheme(e[1]), tuple(parse_scheme(x) for x in e[2:]))
    if head == "safecomp":
        return SafeComp(
            parse_scheme(e[1]),
            tuple(parse_scheme(x) for x in e[2]),
            tuple(parse_scheme(x) for x in e[3]),
        )
    if head == "setrec":
        return SetRec(parse_scheme(e[1]))
    if head == "predrec":
        return PredRec(parse_scheme(e[1]))
    if head == "sep":
        if len(e) == 2:
            return Sep("it", fm.parse_formula(e[1], allow_reserved=True))
        return Sep(e[1], fm.parse_formula(e[2], allow_reserved=True))
    if head == "iota":
        return Iota(parse_scheme(e[1]))
    if head == "cases":
        return Cases(
            fm.parse_formula(e[1], allow_reserved=True), parse_scheme(e[2]), parse_scheme(e[3])
        )
    if head == "condcases":
        return CondCases(
            fm.parse_formula(e[1], allow_reserved=True),
            e[2],
            parse_scheme(e[3]),
            parse_scheme(e[4]),
            parse_scheme(e[5]),
            parse_scheme(e[6]),
        )
    if head == "sepw":
        return SepW(
            e[1],
            fm.parse_formula(e[2], allow_reserved=True),
            fm.parse_formula(e[3], allow_reserved=True),
            fm.parse_term(e[4], allow_reserved=True),
        )
    if head == "normalsep":
        return NormalSep(parse_scheme(e[1]))
    raise ValueError(f"bad scheme {sexpr.show(e)}")


def scheme_sexpr(node):
    if isinstance(node, Proj):
        return ["proj", node.kind, str(node.index)]
    if isinstance(node, ZeroF):
        return "zero"
    if isinstance(node, PairN):
        return ["pair"]
    if isinstance(node, DiffN):
        return ["diff"]
    if isinstance(node, UnionN):
        return ["union"]
    if isinstance(node, OracleRef):
        return ["oracle", node.symbol]
    if isinstance(node, Ref):
        return node.name
    if isinstance(node, BUnion):
        return ["bunion", scheme_sexpr(node.g)]
    if isinstance(node, Comp):
        return ["comp", scheme_sexpr(node.h)] + [scheme_sexpr(g) for g in node.inners]
    if isinstance(node, SafeComp):
        return [
            "safecomp",
            scheme_sexpr(node.h),
            [scheme_sexpr(r) for r in node.rs],
            [scheme_sexpr(t) for t in node.ts],
        ]
    if isinstance(node, SetRec):
        return ["setrec", scheme_sexpr(node.h)]
    if isinstance(node, PredRec):
        return ["predrec", scheme_sexpr(node.h)]
    if isinstance(node, Sep):
        if node.var == "it":
            return ["sep", fm.formula_sexpr(node.theta)]
        return ["sep", node.var, fm.formula_sexpr(node.theta)]
    if isinstance(node, Iota):
        return ["iota", scheme_sexpr(node.g)]
    if isinstance(node, Cases):
        return ["cases", fm.formula_sexpr(node.theta), scheme_sexpr(node.then), scheme_sexpr(node.els)]
    if isinstance(node, CondCases):
        return [
            "condcases",
            fm.formula_sexpr(node.phi),
            node.xvar,
            scheme_sexpr(node.g),
            scheme_sexpr(node.h),
            scheme_sexpr(node.then),
            scheme_sexpr(node.els),
        ]
    if isinstance(node, SepW):
        return [
            "sepw",
            node.var,
            fm.formula_sexpr(node.plain),
            fm.formula_sexpr(node.phi),
            fm.term_sexpr(node.cand),
        ]
    if isinstance(node, NormalSep):
        return ["normalsep", scheme_sexpr(node.g)]
    raise TypeError(f"not a scheme: {node!r}")


def parse_def(e):
    """(def name ((normals) (safes)) scheme [(level n)] [(graph formula)])"""
    if not (isinstance(e, list) and len(e) >= 4 and e[0] == "def"):
        raise ValueError(f"bad definition {sexpr.show(e)}")
    name = e[1]
    normals = tuple(e[2][0])
    safes = tuple(e[2][1])
    fdef = FunctionDef(name, normals, safes, parse_scheme(e[3]))
    level = 0
    graph = None
    for part in e[4:]:
        if part and part[0] == "level":
            level = int(part[1])
        elif part and part[0] == "graph":
            graph = fm.parse_formula(part[1], allow_reserved=True)
        else:
            raise ValueError(f"bad definition annotation {sexpr.show(part)}")
    return fdef, level, graph


def def_sexpr(fdef: FunctionDef, level: int = 0, graph=None):
    out = ["def", fdef.name, [list(fdef.normals), list(fdef.safes)], scheme_sexpr(fdef.body)]
    if level:
        out.append(["level", str(level)])
    if graph is not None:
        out.append(["graph", fm.formula_sexpr(graph)])
    return out


def parse_defs_file(text: str) -> list:
    """[(FunctionDef, level, graph)] in file order."""
    return [parse_def(e) for e in sexpr.parse_all(text)]


def load_defs_text(text: str, registry: "Registry", replace: bool = True) -> list:
    out = []
    for fdef, level, graph in parse_defs_file(text):
        registry.register_def(fdef, level=level, graph=graph, replace=replace)
        out.append(fdef)
    return out


def show_defs(defs: Iterable[FunctionDef], registry: "Registry | None" = None) -> str:
    lines = []
    for d in defs:
        level = registry.levels.get(d.name, 0) if registry else 0
        graph = registry.graphs.get(d.name) if registry else None
        lines.append(sexpr.show_pretty(def_sexpr(d, level, graph)))
    return "\n".join(lines) + "\n"
