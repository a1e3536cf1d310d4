"""Bundles: DAGs of communication and succession, validity, causal order,
and run-of-protocol checking by role-assignment search."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Union

from .roles import (
    ADVERSARY_ROLE_NAMES,
    Protocol,
    RoleItem,
    TAG_ROLE,
    adversary_roles,
    build_implicit_item,
    inst,
    tag_item,
)
from .strands import Node, StrandSpace, Trace
from .terms import (
    AConst,
    DConst,
    Enc,
    Pair,
    SConst,
    Sort,
    SortError,
    Substitution,
    Tag,
    Term,
    Var,
    carried_subterms,
    invert_key,
    is_atom,
    match,
    pretty,
    sort_of,
)


class NotARunError(ValueError):
    """A bundle operation required a run of the protocol and got none."""


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str


@dataclass(frozen=True)
class Bundle:
    space: StrandSpace
    comm_edges: tuple[tuple[Node, Node], ...]

    def __post_init__(self) -> None:
        edges = tuple(sorted((Node(*a), Node(*b)) for a, b in self.comm_edges))
        object.__setattr__(self, "comm_edges", edges)
        for n0, n1 in edges:
            if not (self.space.has_node(n0) and self.space.has_node(n1)):
                raise ValueError(f"edge {tuple(n0)}->{tuple(n1)} references a missing node")


def _succession_edges(space: StrandSpace) -> Iterator[tuple[Node, Node]]:
    for s, trace in enumerate(space.traces):
        for i in range(1, len(trace)):
            yield Node(s, i - 1), Node(s, i)


def validate_bundle(b: Bundle) -> list[Violation]:
    """Check the three bundle invariants; violations are data, not errors."""
    violations: list[Violation] = []
    space = b.space
    for n0, n1 in b.comm_edges:
        e0, e1 = space.evt(n0), space.evt(n1)
        if not e0.outbound or e1.outbound or e0.message != e1.message:
            violations.append(
                Violation(
                    "bad-edge",
                    f"edge {tuple(n0)}->{tuple(n1)} does not send and receive one message",
                )
            )
    for n in space.nodes():
        if not space.evt(n).outbound:
            sources = [n0 for n0, n1 in b.comm_edges if n1 == n]
            if not sources:
                violations.append(
                    Violation("unexplained-reception", f"no transmission explains node {tuple(n)}")
                )
            elif len(sources) > 1:
                violations.append(
                    Violation("ambiguous-reception", f"node {tuple(n)} has {len(sources)} senders")
                )
    adjacency: dict[Node, list[Node]] = {n: [] for n in space.nodes()}
    for n0, n1 in list(_succession_edges(space)) + list(b.comm_edges):
        adjacency[n0].append(n1)
    state: dict[Node, int] = {}

    def cyclic(start: Node) -> bool:
        stack = [(start, iter(adjacency[start]))]
        state[start] = 1
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                mark = state.get(nxt)
                if mark == 1:
                    return True
                if mark is None:
                    state[nxt] = 1
                    stack.append((nxt, iter(adjacency[nxt])))
                    advanced = True
                    break
            if not advanced:
                state[node] = 2
                stack.pop()
        return False

    for n in space.nodes():
        if n not in state and cyclic(n):
            violations.append(Violation("cycle", f"cycle through node {tuple(n)}"))
            break
    return violations


class Precedes:
    """The strict causal order of a valid bundle, queryable and enumerable."""

    def __init__(self, bundle: Bundle):
        problems = validate_bundle(bundle)
        if problems:
            raise ValueError(f"bundle is invalid: {problems[0].detail}")
        self._space = bundle.space
        nodes = list(bundle.space.nodes())
        succ: dict[Node, set[Node]] = {n: set() for n in nodes}
        for n0, n1 in list(_succession_edges(bundle.space)) + list(bundle.comm_edges):
            succ[n0].add(n1)
        reach: dict[Node, frozenset[Node]] = {n: frozenset() for n in nodes}
        changed = True
        while changed:
            changed = False
            for n in nodes:
                acc = set(succ[n])
                for m in succ[n]:
                    acc |= reach[m]
                frozen = frozenset(acc)
                if frozen != reach[n]:
                    reach[n] = frozen
                    changed = True
        self._reach = reach

    def prec(self, n0: Node, n1: Node) -> bool:
        n0, n1 = Node(*n0), Node(*n1)
        return n1 in self._reach.get(n0, frozenset())

    def pairs(self) -> Iterator[tuple[Node, Node]]:
        for n0 in sorted(self._reach):
            for n1 in sorted(self._reach[n0]):
                yield n0, n1

    def comparable(self, n0: Node, n1: Node) -> bool:
        return self.prec(n0, n1) or self.prec(n1, n0)


def precedes(b: Bundle) -> Precedes:
    return Precedes(b)


@dataclass(frozen=True)
class RegularAssignment:
    role: str
    mapping: Substitution


@dataclass(frozen=True)
class AdversaryAssignment:
    kind: str
    params: tuple[Term, ...]


StrandRole = Union[RegularAssignment, AdversaryAssignment]


@dataclass(frozen=True)
class RoleAssignment:
    entries: tuple[StrandRole, ...]

    def describe(self, s: int) -> str:
        entry = self.entries[s]
        if isinstance(entry, RegularAssignment):
            args = ", ".join(
                f"{name}={pretty(img)}" for (name, _), img in entry.mapping.items()
            )
            return f"{entry.role}({args})"
        return f"{entry.kind}({', '.join(pretty(p) for p in entry.params)})"


class _Fresh:
    """Deterministic constants unused anywhere in a strand space."""

    def __init__(self, space: StrandSpace):
        self._next = {Sort.AKEY: 0, Sort.SKEY: 0, Sort.DATA: 0}
        for trace in space.traces:
            for event in trace:
                for t in carried_subterms(event.message):
                    self._bump(t)
                self._scan_keys(event.message)

    def _scan_keys(self, t: Term) -> None:
        if isinstance(t, Pair):
            self._scan_keys(t.left)
            self._scan_keys(t.right)
        elif isinstance(t, Enc):
            self._bump(t.key)
            self._scan_keys(t.body)

    def _bump(self, t: Term) -> None:
        if isinstance(t, AConst):
            self._next[Sort.AKEY] = max(self._next[Sort.AKEY], t.index + 1)
        elif isinstance(t, SConst):
            self._next[Sort.SKEY] = max(self._next[Sort.SKEY], t.index + 1)
        elif isinstance(t, DConst):
            self._next[Sort.DATA] = max(self._next[Sort.DATA], t.index + 1)

    def atom(self, sort: Sort) -> Term:
        if sort is Sort.TOP:
            sort = Sort.DATA
        n = self._next[sort]
        self._next[sort] = n + 1
        if sort is Sort.AKEY:
            return AConst(n)
        if sort is Sort.SKEY:
            return SConst(n)
        return DConst(n)

    def snapshot(self) -> dict[Sort, int]:
        return dict(self._next)


def item_for_entry(p: Protocol, entry: StrandRole) -> RoleItem:
    if isinstance(entry, RegularAssignment):
        return p.role(entry.role).instantiate(entry.mapping)
    return build_implicit_item(entry.kind, entry.params)


def _regular_candidates(p: Protocol, trace: Trace, fresh: _Fresh) -> Iterator[StrandRole]:
    h = len(trace)
    for role in p.roles:
        if h > len(role.trace):
            continue
        sub: Optional[Substitution] = Substitution()
        for pattern_event, event in zip(role.trace, trace):
            if pattern_event.outbound != event.outbound:
                sub = None
                break
            sub = match(pattern_event.message, event.message, sub)
            if sub is None:
                break
        if sub is None:
            continue
        for name, sort in role.params:
            if sub.get((name, sort)) is None:
                sub = sub.extend((name, sort), fresh.atom(sort))
        yield RegularAssignment(role.name, sub)


def _adversary_candidates(trace: Trace, fresh: _Fresh) -> Iterator[StrandRole]:
    h = len(trace)
    first = trace[0]
    if h == 1 and first.outbound:
        t = first.message
        if is_atom(t):
            yield AdversaryAssignment("create", (t,))
    if h <= 3 and not first.outbound:
        # pair: -t0 -t1 +(t0,t1)
        t0 = first.message
        t1 = trace[1].message if h >= 2 and not trace[1].outbound else None
        if h == 1:
            yield AdversaryAssignment("pair", (t0, fresh.atom(Sort.DATA)))
        elif t1 is not None:
            yield AdversaryAssignment("pair", (t0, t1))
        # sep: -(t0,t1) +t0 +t1
        if isinstance(first.message, Pair):
            yield AdversaryAssignment("sep", (first.message.left, first.message.right))
        # enc: -t -k +{t}k
        if h == 1:
            yield AdversaryAssignment("enc", (t0, fresh.atom(Sort.SKEY)))
        elif t1 is not None and sort_of(t1) in (Sort.AKEY, Sort.SKEY):
            yield AdversaryAssignment("enc", (t0, t1))
        # dec: -{t}k -invk(k) +t
        if isinstance(first.message, Enc):
            yield AdversaryAssignment("dec", (first.message.body, first.message.key))
    if h == 1 and first.outbound and isinstance(first.message, Tag):
        yield AdversaryAssignment(TAG_ROLE, (first.message,))


def _strand_candidates(p: Protocol, trace: Trace, fresh: _Fresh) -> Iterator[StrandRole]:
    yield from _regular_candidates(p, trace, fresh)
    yield from _adversary_candidates(trace, fresh)


def check_run(
    b: Bundle, p: Protocol, hint: Optional[RoleAssignment] = None
) -> Optional[RoleAssignment]:
    """Find (or verify) a role assignment making the bundle a run of p.

    Returns None when no assignment exists.  Each strand's conditions are
    independent of the other strands' choices, so a per-strand first-fit
    search over regular roles, then adversary generators, is complete.
    """
    if validate_bundle(b):
        return None
    space = b.space
    if hint is not None:
        if len(hint.entries) != len(space):
            return None
        for s, entry in enumerate(hint.entries):
            try:
                item = item_for_entry(p, entry)
            except (ValueError, SortError):
                return None
            if not inst(space, s, item):
                return None
        return hint
    entries: list[StrandRole] = []
    fresh = _Fresh(space)
    for s, trace in enumerate(space.traces):
        chosen: Optional[StrandRole] = None
        for candidate in _strand_candidates(p, trace, fresh):
            try:
                item = item_for_entry(p, candidate)
            except (ValueError, SortError):
                continue
            if inst(space, s, item):
                chosen = candidate
                break
        if chosen is None:
            return None
        entries.append(chosen)
    return RoleAssignment(tuple(entries))


def require_run(b: Bundle, p: Protocol, hint: Optional[RoleAssignment] = None) -> RoleAssignment:
    assignment = check_run(b, p, hint)
    if assignment is None:
        raise NotARunError(f"bundle is not a run of protocol {p.name}")
    return assignment
