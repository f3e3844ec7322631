"""Interpreter for validated function definitions on HF arguments.

Each call owns a private memo table keyed on (node identity, argument tuple);
safe arguments participate in keys.  Step and transitive-closure caps abort
with ResourceLimit.  The optional hint collector records intermediate values
(course-of-values graphs, composition values) so that defining formulas with
existential prefixes can be checked over a finite universe that contains
their witnesses.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from . import classes as cl
from . import formula as fm
from . import hf
from .hf import HFSet, ResourceLimit


@dataclass
class EvalReport:
    result: HFSet
    steps: int
    max_tc_card_seen: int
    memo_hits: int
    hints: list = field(default_factory=list)


@dataclass
class ClassEnv:
    """Concrete class to interpret the X slot of class-parameterized
    definitions directly (the dual path to instantiate_class)."""

    members: tuple  # finite enumeration of X
    registry: object


DEFAULT_STEP_CAP = 10_000_000


class _Eval:
    def __init__(self, registry, step_cap, memo_on, collect_hints, class_env):
        self.reg = registry
        self.step_cap = step_cap
        self.memo_on = memo_on
        self.memo: dict = {}
        self.steps = 0
        self.max_tc = 0
        self.hits = 0
        self.hints: list | None = [] if collect_hints else None
        self.class_env = class_env

    def tick(self):
        self.steps += 1
        if self.steps > self.step_cap:
            raise ResourceLimit(f"step cap {self.step_cap} exceeded")

    def note(self, value: HFSet) -> HFSet:
        if value.tc_card > self.max_tc:
            self.max_tc = value.tc_card
        if self.hints is not None:
            self.hints.append(value)
        return value

    def call(self, fdef: cl.FunctionDef, nargs: tuple, sargs: tuple) -> HFSet:
        key = (fdef.name, nargs, sargs)
        if self.memo_on and key in self.memo:
            self.hits += 1
            return self.memo[key]
        value = self.node(fdef.body, fdef, nargs, sargs)
        if self.memo_on:
            self.memo[key] = value
        return value

    def symbol(self, name: str, nargs: tuple, sargs: tuple) -> HFSet:
        dn, ds = self.reg.arity(name)
        comb = nargs + sargs
        if (len(nargs), len(sargs)) != (dn, ds):
            nargs, sargs = comb[:dn], comb[dn:]
        if name in self.reg.oracles:
            self.tick()
            return self.note(self.reg.oracle_value(name, nargs, sargs))
        return self.call(self.reg.defs[name], nargs, sargs)

    def guard(self, theta, fdef, nargs, sargs) -> bool:
        env = dict(zip(fdef.params(), nargs + sargs))
        val = fm.Valuation(env, universe=(), dclass=None)
        return fm.evaluate(theta, val, _TermRegistry(self))

    def wbang_holds(self, phi, value: HFSet, fdef, nargs, sargs, extra=None) -> bool:
        """w!^X_phi(value) with X the concrete class_env enumeration."""
        if self.class_env is None:
            raise cl.UnsupportedScheme(
                "class-parameterized definition evaluated without a class environment"
            )
        env = dict(zip(fdef.params(), nargs + sargs))
        if extra:
            env.update(extra)
        val = fm.Valuation(env, universe=(), dclass=None)
        reg = _TermRegistry(self)
        cls = fm.classify(phi)
        if cls is fm.FormulaClass.DELTA0:
            return fm.evaluate(phi, val, reg)
        if cls is not fm.FormulaClass.SIGMA1BANG:
            raise cl.UnsupportedScheme(f"bad class guard formula class {cls.value}")
        c, psi = phi.v, phi.body

        def sat(x: HFSet) -> bool:
            return fm.evaluate(psi, val.bind(c.name, x), reg)

        if not sat(value):
            return False
        if value not in self.class_env.members:
            return False
        return all((not sat(d)) or d is value for d in self.class_env.members)

    def node(self, node, fdef, nargs: tuple, sargs: tuple) -> HFSet:
        self.tick()
        if isinstance(node, cl.Proj):
            return (nargs if node.kind == "n" else sargs)[node.index]
        if isinstance(node, cl.ZeroF):
            return hf.EMPTY
        if isinstance(node, cl.PairN):
            a, b = nargs + sargs
            return self.note(hf.pair(a, b))
        if isinstance(node, cl.DiffN):
            a, b = nargs + sargs
            return self.note(hf.diff(a, b))
        if isinstance(node, cl.UnionN):
            (a,) = nargs + sargs
            return self.note(hf.big_union(a))
        if isinstance(node, cl.OracleRef):
            return self.symbol(node.symbol, nargs, sargs)
        if isinstance(node, cl.Ref):
            return self.symbol(node.name, nargs, sargs)
        if isinstance(node, cl.BUnion):
            if sargs:
                z = sargs[-1]
                vals = [self.node(node.g, fdef, nargs, sargs[:-1] + (y,)) for y in z]
            else:
                z = nargs[-1]
                vals = [self.node(node.g, fdef, nargs[:-1] + (y,), sargs) for y in z]
            return self.note(hf.big_union(hf.make_set(vals)))
        if isinstance(node, cl.Comp):
            vals = tuple(self.node(g, fdef, nargs, sargs) for g in node.inners)
            return self.node(node.h, fdef, vals, ())
        if isinstance(node, cl.SafeComp):
            rvals = tuple(self.node(r, fdef, nargs, ()) for r in node.rs)
            tvals = tuple(self.node(t, fdef, nargs, sargs) for t in node.ts)
            return self.node(node.h, fdef, rvals, tvals)
        if isinstance(node, (cl.SetRec, cl.PredRec)):
            split = isinstance(node, cl.PredRec)

            def rec(x: HFSet) -> HFSet:
                key = (id(node), x, nargs[1:], sargs)
                if self.memo_on and key in self.memo:
                    self.hits += 1
                    return self.memo[key]
                self.tick()
                e = hf.make_set([rec(z) for z in x])
                if split:
                    v = self.node(node.h, fdef, (x,) + nargs[1:], sargs + (e,))
                else:
                    v = self.node(node.h, fdef, (x,) + nargs[1:] + (e,), sargs)
                if self.memo_on:
                    self.memo[key] = v
                return v

            x0 = nargs[0]
            out = rec(x0)
            if self.hints is not None:
                dom = hf.tc_with_self(x0)
                self.note(hf.make_set([hf.kpair(z, rec(z)) for z in dom]))
            return self.note(out)
        if isinstance(node, cl.Sep):
            bound = (nargs + sargs)[-1]
            env = dict(zip(fdef.params(), nargs + sargs))
            val = fm.Valuation(env, universe=(), dclass=None)
            reg = _TermRegistry(self)
            kept = [
                b
                for b in bound
                if fm.evaluate(node.theta, val.bind(node.var, b), reg)
            ]
            return self.note(hf.make_set(kept))
        if isinstance(node, cl.Cases):
            if self.guard(node.theta, fdef, nargs, sargs):
                return self.node(node.then, fdef, nargs, sargs)
            return self.node(node.els, fdef, nargs, sargs)
        if isinstance(node, cl.Iota):
            c = sargs[-1] if sargs else nargs[-1]
            if sargs:
                vals = [self.node(node.g, fdef, nargs, sargs[:-1] + (b,)) for b in c]
            else:
                vals = [self.node(node.g, fdef, nargs[:-1] + (b,), sargs) for b in c]
            rng = hf.make_set(vals)
            out = rng.children[0] if len(rng) == 1 else hf.EMPTY
            return self.note(out)
        if isinstance(node, cl.CondCases):
            gval = self.node(node.g, fdef, nargs, sargs)
            ok = True
            for x in gval:
                hval = self.node(node.h, fdef, nargs + (x,), sargs)
                if not self.wbang_holds(
                    node.phi, hval, fdef, nargs, sargs, extra={node.xvar: x}
                ):
                    ok = False
                    break
            if ok:
                return self.node(node.then, fdef, nargs, sargs)
            return self.node(node.els, fdef, nargs, sargs)
        if isinstance(node, cl.SepW):
            bound = (nargs + sargs)[-1]
            env = dict(zip(fdef.params(), nargs + sargs))
            reg = _TermRegistry(self)
            kept = []
            for b in bound:
                val = fm.Valuation({**env, node.var: b}, universe=(), dclass=None)
                if not fm.evaluate(node.plain, val, reg):
                    continue
                cand = fm.eval_term(node.cand, val, reg)
                if self.wbang_holds(node.phi, cand, fdef, nargs, sargs, extra={node.var: b}):
                    kept.append(b)
            return self.note(hf.make_set(kept))
        if isinstance(node, cl.NormalSep):
            bound = (nargs + sargs)[-1]
            kept = []
            for b in bound:
                if sargs:
                    v = self.node(node.g, fdef, nargs, sargs[:-1] + (b,))
                else:
                    v = self.node(node.g, fdef, nargs[:-1] + (b,), sargs)
                if v is not hf.EMPTY:
                    kept.append(b)
            return self.note(hf.make_set(kept))
        raise TypeError(f"cannot evaluate scheme node {node!r}")


class _TermRegistry:
    """Registry view that routes symbol application through a running
    evaluation, so step/size accounting covers term evaluation too."""

    def __init__(self, ev: _Eval):
        self.ev = ev
        self.oracles = ev.reg.oracles
        self.defs = ev.reg.defs

    def has_symbol(self, name):
        return self.ev.reg.has_symbol(name)

    def arity(self, name):
        return self.ev.reg.arity(name)

    def apply(self, name, nargs, sargs):
        return self.ev.symbol(name, nargs, sargs)


def evaluate(
    fdef: cl.FunctionDef,
    nargs: tuple,
    sargs: tuple,
    registry,
    step_cap: int = DEFAULT_STEP_CAP,
    memo: bool = True,
    collect_hints: bool = False,
    class_env: ClassEnv | None = None,
) -> EvalReport:
    if (len(nargs), len(sargs)) != fdef.arity:
        comb = nargs + sargs
        if len(comb) != len(fdef.normals) + len(fdef.safes):
            raise ValueError(
                f"{fdef.name} expects {fdef.arity} arguments, got {(len(nargs), len(sargs))}"
            )
        nargs, sargs = comb[: len(fdef.normals)], comb[len(fdef.normals):]
    ev = _Eval(registry, step_cap, memo, collect_hints, class_env)
    result = ev.call(fdef, tuple(nargs), tuple(sargs))
    report = EvalReport(result, ev.steps, max(ev.max_tc, result.tc_card), ev.hits)
    if collect_hints:
        report.hints = ev.hints + [result, hf.EMPTY]
    return report


# ---------------------------------------------------------------- sampling


def sample_pool(rank: int = 3, cap: int | None = None) -> list:
    """Deterministic enumeration of all sets of rank ≤ rank (capped)."""
    return hf.enumerate_rank(rank, cap)


def random_hf(rng: random.Random, pool: list) -> HFSet:
    return pool[rng.randrange(len(pool))]


@dataclass
class SizeCounterexample:
    nargs: tuple
    sargs: tuple
    actual: int
    bound: int

    def __str__(self):
        ns = " ".join(hf.show(x) for x in self.nargs)
        ss = " ".join(hf.show(x) for x in self.sargs)
        return f"card TC = {self.actual} > bound {self.bound} at ({ns} / {ss})"


def check_size_bound(
    fdef: cl.FunctionDef,
    poly: cl.Poly,
    registry,
    samples: int = 1000,
    seed: int = 0,
    pool: list | None = None,
    step_cap: int = DEFAULT_STEP_CAP,
) -> SizeCounterexample | None:
    """Empirical size-bound check: card(TC(f(X/A))) ≤ p(card TC(X_i)) + Σ card TC(A_j).

    Draws seeded pseudo-random argument tuples; returns the first violation.
    """
    rng = random.Random(seed)
    if pool is None:
        pool = sample_pool(3)
    n, s = fdef.arity
    if poly.nvars != n:
        raise ValueError(f"polynomial has {poly.nvars} variables, definition has {n} normals")
    for _ in range(samples):
        nargs = tuple(random_hf(rng, pool) for _ in range(n))
        sargs = tuple(random_hf(rng, pool) for _ in range(s))
        value = evaluate(fdef, nargs, sargs, registry, step_cap=step_cap).result
        bound = poly.eval([x.tc_card for x in nargs]) + sum(a.tc_card for a in sargs)
        if value.tc_card > bound:
            return SizeCounterexample(nargs, sargs, value.tc_card, bound)
    return None
