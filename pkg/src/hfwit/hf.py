"""Hereditarily finite set kernel.

Values are immutable, interned and canonically ordered, so structural
equality is identity and every set has one printed form.  The canonical
total order is (size of transitive closure, then lexicographic on the
child sequence); any total order would do, but this one is cheap and it
is the order all file output uses.
"""

from __future__ import annotations

import functools
from typing import Iterable, Iterator


class ResourceLimit(Exception):
    """Raised when a computation exceeds a configured size or step cap."""


class MalformedFunction(Exception):
    """Raised when a set used as a function graph is not one."""


_TC_CARD_LIMIT = 10_000


def set_tc_card_limit(n: int) -> int:
    """Set the global transitive-closure cardinality cap; returns the old one."""
    global _TC_CARD_LIMIT
    old = _TC_CARD_LIMIT
    _TC_CARD_LIMIT = n
    return old


def tc_card_limit() -> int:
    return _TC_CARD_LIMIT


class HFSet:
    """A hereditarily finite set: sorted duplicate-free tuple of children."""

    __slots__ = ("children", "tc_card", "rank", "digest")

    _intern: dict = {}

    children: tuple
    tc_card: int
    rank: int
    digest: int

    def __new__(cls, *args, **kwargs):
        raise TypeError("use make_set()")

    def __len__(self) -> int:
        return len(self.children)

    def __iter__(self) -> Iterator["HFSet"]:
        return iter(self.children)

    def __contains__(self, x: "HFSet") -> bool:
        return x in self.children

    def __hash__(self) -> int:
        return self.digest

    # interning makes structural equality identity; default object __eq__ works

    def __lt__(self, other: "HFSet") -> bool:
        return compare(self, other) < 0

    def __repr__(self) -> str:
        return show(self)


def _build(children: tuple) -> HFSet:
    key = children
    hit = HFSet._intern.get(key)
    if hit is not None:
        return hit
    obj = object.__new__(HFSet)
    # transitive closure members, by traversal over already-interned children
    tc: set = set()
    stack = list(children)
    while stack:
        node = stack.pop()
        if node not in tc:
            tc.add(node)
            stack.extend(node.children)
            if len(tc) > _TC_CARD_LIMIT:
                raise ResourceLimit(
                    f"transitive closure exceeds cap {_TC_CARD_LIMIT}"
                )
    obj.children = children
    obj.tc_card = len(tc)
    obj.rank = max((c.rank for c in children), default=-1) + 1
    obj.digest = hash((obj.tc_card, tuple(c.digest for c in children)))
    HFSet._intern[key] = obj
    return obj


def compare(a: HFSet, b: HFSet) -> int:
    """Total order: -1, 0 or 1.  0 iff extensional (= structural) equality.
    Ordered by transitive-closure size, then child count, then the child
    sequences elementwise."""
    if a is b:
        return 0
    if a.tc_card != b.tc_card:
        return -1 if a.tc_card < b.tc_card else 1
    if len(a.children) != len(b.children):
        return -1 if len(a.children) < len(b.children) else 1
    for x, y in zip(a.children, b.children):
        c = compare(x, y)
        if c:
            return c
    return 0


@functools.cmp_to_key
def _key(a, b):
    return compare(a, b)


def make_set(elements: Iterable[HFSet]) -> HFSet:
    """The set whose members are exactly the given elements (deduplicated)."""
    elems = sorted(elements, key=_key)
    out = []
    for e in elems:
        if not out or out[-1] is not e:
            out.append(e)
    return _build(tuple(out))


EMPTY = make_set([])


def pair(a: HFSet, b: HFSet) -> HFSet:
    return make_set([a, b])


def singleton(a: HFSet) -> HFSet:
    return make_set([a])


def diff(a: HFSet, b: HFSet) -> HFSet:
    return make_set([c for c in a if c not in b])


def big_union(a: HFSet) -> HFSet:
    # the usual convention: union of the empty set is the empty set
    return make_set([c for d in a for c in d])


def union2(a: HFSet, b: HFSet) -> HFSet:
    return make_set(list(a.children) + list(b.children))


def transitive_closure(x: HFSet) -> HFSet:
    """Smallest transitive set containing every member of x."""
    seen: set = set()
    stack = list(x.children)
    while stack:
        node = stack.pop()
        if node not in seen:
            seen.add(node)
            stack.extend(node.children)
    return make_set(seen)


def tc_with_self(x: HFSet) -> HFSet:
    """TC(x ∪ {x})."""
    return make_set(list(transitive_closure(x).children) + [x])


def kpair(a: HFSet, b: HFSet) -> HFSet:
    return pair(singleton(a), pair(a, b))


def as_kpair(d: HFSet):
    """Decode a Kuratowski pair; None if d is not one."""
    if len(d) == 1:
        (u,) = d.children
        if len(u) == 1:
            return u.children[0], u.children[0]
        return None
    if len(d) == 2:
        u, w = d.children
        if len(u) > len(w):
            u, w = w, u
        if len(u) == 1 and len(w) == 2:
            (a,) = u.children
            x, y = w.children
            if x is a:
                return a, y
            if y is a:
                return a, x
        return None
    return None


def first(d: HFSet) -> HFSet:
    """1st(d) = ∪{b ∈ ∪d : ∃c ∈ ∪d (⟨b,c⟩ = d)} — total, per the rudimentary definition."""
    ud = big_union(d)
    hits = [b for b in ud if any(kpair(b, c) is d for c in ud)]
    return big_union(make_set(hits))


def second(d: HFSet) -> HFSet:
    ud = big_union(d)
    hits = [c for c in ud if any(kpair(b, c) is d for b in ud)]
    return big_union(make_set(hits))


def graph_entries(c: HFSet) -> list:
    """Decode c as a list of (key, value); raises MalformedFunction."""
    entries = []
    seen = {}
    for d in c:
        kv = as_kpair(d)
        if kv is None:
            raise MalformedFunction(f"non-pair element {show(d)} in function value")
        k, v = kv
        if k in seen and seen[k] is not v:
            raise MalformedFunction(f"two values for key {show(k)}")
        seen[k] = v
        entries.append((k, v))
    return entries


def fn_apply(c: HFSet, x: HFSet) -> HFSet:
    """The unique b with ⟨x,b⟩ ∈ c, or ∅ on a missing key."""
    found = None
    for k, v in graph_entries(c):
        if k is x:
            found = v
    return EMPTY if found is None else found


def fn_image(c: HFSet, x: HFSet) -> HFSet:
    """{c'z : z ∈ x, z in the domain of c}."""
    entries = dict(graph_entries(c))
    return make_set([entries[z] for z in x if z in entries])


def apply_total(c: HFSet, x: HFSet) -> HFSet:
    """c'x = ∪{b ∈ ∪∪c : ⟨x,b⟩ ∈ c} — total even on malformed c."""
    uuc = big_union(big_union(c))
    return big_union(make_set([b for b in uuc if kpair(x, b) in c]))


def image_total(c: HFSet, x: HFSet) -> HFSet:
    """c''x = {b ∈ ∪∪c : ∃z ∈ x (⟨z,b⟩ ∈ c)}."""
    uuc = big_union(big_union(c))
    return make_set([b for b in uuc if any(kpair(z, b) in c for z in x)])


def is_function_on(c: HFSet, y: HFSet) -> bool:
    """c = {⟨x, f(x)⟩ : x ∈ y} for some single-valued f."""
    try:
        entries = graph_entries(c)
    except MalformedFunction:
        return False
    keys = make_set([k for k, _ in entries])
    return keys is y and len(entries) == len(y)


def graph_of(f, y: HFSet) -> HFSet:
    """The graph {⟨x, f(x)⟩ : x ∈ y} of a python callable on members of y."""
    return make_set([kpair(x, f(x)) for x in y])


def powerset(a: HFSet) -> HFSet:
    subs = [EMPTY]
    for c in a:
        subs = subs + [make_set(list(s.children) + [c]) for s in subs]
    return make_set(subs)


def von_neumann(n: int) -> HFSet:
    x = EMPTY
    for _ in range(n):
        x = make_set(list(x.children) + [x])
    return x


def enumerate_rank(rank: int, cap: int | None = None) -> list:
    """All HF sets of rank ≤ rank, canonically ordered; optionally capped."""
    level = [EMPTY]
    for _ in range(rank):
        nxt = []
        for s in _subsets(level):
            nxt.append(s)
            if cap is not None and len(nxt) >= cap:
                break
        level = sorted(nxt, key=_key)
    return level


def _subsets(pool: list):
    out = [EMPTY]
    for c in pool:
        out = out + [make_set(list(s.children) + [c]) for s in out]
    return out


# text literal syntax: {} and {e1 e2 ...}


def show(x: HFSet) -> str:
    return "{" + " ".join(show(c) for c in x.children) + "}"


def parse(text: str) -> HFSet:
    pos = 0

    def skip_ws():
        nonlocal pos
        while pos < len(text) and text[pos].isspace():
            pos += 1

    def parse_set() -> HFSet:
        nonlocal pos
        skip_ws()
        if pos >= len(text) or text[pos] != "{":
            raise ValueError(f"expected '{{' at position {pos} in HF literal")
        pos += 1
        elems = []
        while True:
            skip_ws()
            if pos >= len(text):
                raise ValueError("unterminated HF literal")
            if text[pos] == "}":
                pos += 1
                return make_set(elems)
            elems.append(parse_set())

    out = parse_set()
    skip_ws()
    if pos != len(text):
        raise ValueError("trailing characters after HF literal")
    return out
