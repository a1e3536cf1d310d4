"""State-threading annotations: transition sets, path compatibility, the
check-or-issue property, bridge witnesses, and the award card protocol.

States are natural numbers up to the box count of a card: the number of
unchecked boxes.  One transition checks a box; issuing a fresh card jumps
to the all-unchecked state.  Annotated bundle nodes must embed, in causal
order, into a path of the transition relation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Union

from .bundles import Bundle, Precedes, RoleAssignment, require_run
from .roles import (
    BOTTOM,
    Lifted,
    Protocol,
    RoleItem,
    RoleTemplate,
    Up,
    down,
    inst,
)
from .strands import Node, recv, send
from .terms import Enc, Pair, Sort, Tag, Term, Var, pretty


@dataclass(frozen=True)
class CheckBox:
    """One box gets checked: unchecked count drops by one."""


@dataclass(frozen=True)
class NewCard:
    """A fresh card is issued: the state jumps to the box count."""


@dataclass(frozen=True)
class EndsAt:
    state: int


@dataclass(frozen=True)
class StartsAt:
    state: int


@dataclass(frozen=True)
class Explicit:
    pairs: frozenset[tuple[int, int]]


TransitionSet = Union[CheckBox, NewCard, EndsAt, StartsAt, Explicit]


def ts_contains(ts: TransitionSet, s0: int, s1: int, boxes: int) -> bool:
    match ts:
        case CheckBox():
            return s0 == s1 + 1
        case NewCard():
            return s1 == boxes
        case EndsAt(state=s):
            return s1 == s
        case StartsAt(state=s):
            return s0 == s
        case Explicit(pairs=pairs):
            return (s0, s1) in pairs
    raise TypeError(f"not a transition set: {ts!r}")


def ts_pairs(ts: TransitionSet, boxes: int) -> frozenset[tuple[int, int]]:
    states = range(boxes + 1)
    return frozenset(
        (s0, s1) for s0 in states for s1 in states if ts_contains(ts, s0, s1, boxes)
    )


def ts_describe(ts: TransitionSet) -> str:
    match ts:
        case CheckBox():
            return "check-box"
        case NewCard():
            return "new-card"
        case EndsAt(state=s):
            return f"ends-at {s}"
        case StartsAt(state=s):
            return f"starts-at {s}"
        case Explicit(pairs=pairs):
            inner = " ".join(f"({a} {b})" for a, b in sorted(pairs))
            return f"explicit {inner}"
    raise TypeError(f"not a transition set: {ts!r}")


@dataclass(frozen=True)
class StateModel:
    boxes: int
    tau: tuple[TransitionSet, ...]

    def __post_init__(self) -> None:
        if self.boxes < 1:
            raise ValueError("a card needs at least one box")

    def states(self) -> range:
        return range(self.boxes + 1)

    def contains(self, s0: int, s1: int) -> bool:
        return any(ts_contains(ts, s0, s1, self.boxes) for ts in self.tau)

    def successors(self, s0: int) -> list[int]:
        return [s1 for s1 in self.states() if self.contains(s0, s1)]

    def live_states(self) -> frozenset[int]:
        """States from which an infinite path exists (greatest fixpoint)."""
        live = set(self.states())
        changed = True
        while changed:
            changed = False
            for s in list(live):
                if not any(s1 in live for s1 in self.successors(s)):
                    live.discard(s)
                    changed = True
        return frozenset(live)


def acp_state_model(boxes: int) -> StateModel:
    return StateModel(boxes, (CheckBox(), NewCard()))


def is_path_prefix(model: StateModel, states: tuple[int, ...]) -> bool:
    return all(model.contains(a, b) for a, b in zip(states, states[1:]))


@dataclass(frozen=True)
class CompatibilityWitness:
    ell: int
    order: tuple[Node, ...]
    path: tuple[int, ...]


@dataclass(frozen=True)
class Incompatible:
    reason: str
    detail: str = ""


def annotations_of(b: Bundle, p: Protocol, rl: RoleAssignment, n: Node) -> Lifted:
    """The lifted annotation at a node under a verified role assignment."""
    return AnnotationReader(b, p, rl).annotation(n)


class AnnotationReader:
    """Annotation lookups for one bundle under a verified role assignment."""

    def __init__(self, b: Bundle, p: Protocol, rl: RoleAssignment):
        from .bundles import item_for_entry

        if len(rl.entries) != len(b.space):
            raise ValueError("role assignment does not cover every strand")
        self._space = b.space
        self._items: list[RoleItem] = []
        for s, entry in enumerate(rl.entries):
            item = item_for_entry(p, entry)
            if not inst(b.space, s, item):
                raise ValueError(f"strand {s} is not an instance of its assigned role")
            self._items.append(item)

    def annotation(self, n: Node) -> Lifted:
        n = Node(*n)
        if not self._space.has_node(n):
            raise ValueError(f"node {tuple(n)} out of range")
        return self._items[n.strand].annotations[n.index]

    def annotated_nodes(self) -> tuple[Node, ...]:
        return tuple(
            n for n in self._space.nodes() if isinstance(self.annotation(n), Up)
        )


def annotated_nodes(b: Bundle, p: Protocol, rl: RoleAssignment) -> tuple[Node, ...]:
    return AnnotationReader(b, p, rl).annotated_nodes()


def check_compatibility(
    b: Bundle, p: Protocol, rl: RoleAssignment, model: StateModel
) -> Union[CompatibilityWitness, Incompatible]:
    """Decide whether the bundle's annotated nodes embed into a path.

    The annotated nodes must be linearly ordered by the causal order
    (the order-embedding condition forces this), and an assignment of
    states to path positions must satisfy every annotation.  A finite
    prefix suffices: the search only accepts prefixes ending in a state
    from which an infinite path exists.
    """
    require_run(b, p, rl)
    reader = AnnotationReader(b, p, rl)
    nodes = reader.annotated_nodes()
    order = Precedes(b)
    for i, n0 in enumerate(nodes):
        for n1 in nodes[i + 1 :]:
            if not order.comparable(n0, n1):
                return Incompatible(
                    "condition 2: annotated nodes not linearly ordered",
                    f"{tuple(n0)} and {tuple(n1)} are causally incomparable",
                )
    ordered = sorted(nodes, key=lambda n: sum(order.prec(m, n) for m in nodes))
    constraints = [ts_pairs(down(reader.annotation(n)), model.boxes) for n in ordered]
    ell = len(ordered)
    live = model.live_states()

    def extend(prefix: list[int]) -> Optional[list[int]]:
        position = len(prefix) - 1
        if position == ell:
            return prefix if prefix[-1] in live else None
        here = prefix[-1]
        for nxt in model.states():
            if not model.contains(here, nxt):
                continue
            if (here, nxt) not in constraints[position]:
                continue
            result = extend(prefix + [nxt])
            if result is not None:
                return result
        return None

    for start in model.states():
        found = extend([start])
        if found is not None:
            return CompatibilityWitness(ell, tuple(ordered), tuple(found))
    return Incompatible(
        "condition 3: no consistent path",
        "no state path satisfies every annotation in order",
    )


def validate_witness(
    b: Bundle, p: Protocol, rl: RoleAssignment, model: StateModel, w: CompatibilityWitness
) -> list[str]:
    """Re-check a compatibility witness against the raw definition."""
    problems: list[str] = []
    reader = AnnotationReader(b, p, rl)
    nodes = set(reader.annotated_nodes())
    if set(w.order) != nodes or len(w.order) != w.ell:
        problems.append("order is not a bijection with the annotated nodes")
    if len(w.path) != w.ell + 1:
        problems.append(f"path prefix must have length {w.ell + 1}")
        return problems
    if not is_path_prefix(model, w.path):
        problems.append("state sequence is not a path of the transition relation")
    order = Precedes(b)
    position = {n: i for i, n in enumerate(w.order)}
    for n0 in w.order:
        for n1 in w.order:
            if (position[n0] < position[n1]) != order.prec(n0, n1):
                problems.append(
                    f"order-embedding fails on {tuple(n0)} and {tuple(n1)}"
                )
    for n in w.order:
        i = position[n]
        annotation = down(reader.annotation(n))
        if not ts_contains(annotation, w.path[i], w.path[i + 1], model.boxes):
            problems.append(
                f"transition ({w.path[i]},{w.path[i + 1]}) escapes the annotation at {tuple(n)}"
            )
    return problems


@dataclass(frozen=True)
class CheckOrIssueCounterexample:
    path: tuple[int, ...]
    i: int
    k: int


def check_or_issue(
    model: StateModel, max_len: int
) -> Optional[CheckOrIssueCounterexample]:
    """Exhaustively test, over all path prefixes up to max_len: a later
    state never exceeds an earlier one unless a full-card state lies
    strictly between them.  None means the property holds at this scale."""
    if max_len < 2:
        raise ValueError("max_len must be at least 2")

    def violation(path: list[int]) -> Optional[tuple[int, int]]:
        k = len(path) - 1
        for i in range(k + 1):
            if path[i] >= path[k]:
                continue
            if not any(path[j] == model.boxes for j in range(i + 1, k + 1)):
                return (i, k)
        return None

    def walk(path: list[int]) -> Optional[CheckOrIssueCounterexample]:
        bad = violation(path)
        if bad is not None:
            return CheckOrIssueCounterexample(tuple(path), bad[0], bad[1])
        if len(path) == max_len:
            return None
        for nxt in model.successors(path[-1]):
            found = walk(path + [nxt])
            if found is not None:
                return found
        return None

    for start in model.states():
        found = walk([start])
        if found is not None:
            return found
    return None


@dataclass(frozen=True)
class GeqState:
    s0: int
    s1: int


@dataclass(frozen=True)
class NewCardNode:
    node: Node


@dataclass(frozen=True)
class NotApplicable:
    reason: str


BridgeResult = Union[GeqState, NewCardNode, NotApplicable]


def _unique_end_state(pairs: frozenset[tuple[int, int]]) -> Optional[int]:
    ends = {s1 for _, s1 in pairs}
    return next(iter(ends)) if len(ends) == 1 else None


def _unique_start_state(pairs: frozenset[tuple[int, int]]) -> Optional[int]:
    starts = {s0 for s0, _ in pairs}
    return next(iter(starts)) if len(starts) == 1 else None


def find_bridge_witness(
    b: Bundle,
    p: Protocol,
    rl: RoleAssignment,
    model: StateModel,
    n0: Node,
    n1: Node,
) -> BridgeResult:
    """Bridge conclusion for two annotated nodes with derivable end and
    start states: either the earlier state is at least the later one, or
    a new-card node sits causally between them, located on the
    compatibility witness's path."""
    n0, n1 = Node(*n0), Node(*n1)
    compat = check_compatibility(b, p, rl, model)
    if isinstance(compat, Incompatible):
        return NotApplicable(f"bundle is not compatible: {compat.reason}")
    reader = AnnotationReader(b, p, rl)
    a0, a1 = reader.annotation(n0), reader.annotation(n1)
    if not isinstance(a0, Up) or not isinstance(a1, Up):
        return NotApplicable("both nodes must be annotated")
    s0 = _unique_end_state(ts_pairs(a0.value, model.boxes))
    s1 = _unique_start_state(ts_pairs(a1.value, model.boxes))
    if s0 is None:
        return NotApplicable("first annotation has no unique end state")
    if s1 is None:
        return NotApplicable("second annotation has no unique start state")
    if not Precedes(b).prec(n0, n1):
        return NotApplicable("first node does not precede the second")
    if s0 >= s1:
        return GeqState(s0, s1)
    position = {n: i for i, n in enumerate(compat.order)}
    new_card_pairs = ts_pairs(EndsAt(model.boxes), model.boxes)
    for p_index in range(position[n0] + 1, position[n1]):
        if compat.path[p_index + 1] != model.boxes:
            continue
        node = compat.order[p_index]
        if ts_pairs(down(reader.annotation(node)), model.boxes) == new_card_pairs:
            return NewCardNode(node)
    return NotApplicable("no new-card node found between the two (bridge violated)")


def _card(state_tag: Tag, b: Var, c: Var, k: Var) -> Term:
    return Enc(Pair(state_tag, Pair(b, c)), k)


def state_of_message(t: Term, boxes: int) -> Optional[int]:
    """Extract the encoded state: the leading tag of an encrypted pair."""
    if isinstance(t, Enc) and isinstance(t.body, Pair) and isinstance(t.body.left, Tag):
        index = t.body.left.index
        if index <= boxes:
            return index
    return None


def _pair_annotation(previous: Optional[Term], outbound: Term, boxes: int) -> TransitionSet:
    """Annotation of a state-encoding receive-send pair.

    With a state in both messages the transition is pinned exactly; a
    dummy reception leaves the start state free (a fresh-card issue)."""
    s1 = state_of_message(outbound, boxes)
    if s1 is None:
        raise ValueError(f"outbound event encodes no state: {pretty(outbound)}")
    if previous is None:
        return NewCard() if s1 == boxes else EndsAt(s1)
    s0 = state_of_message(previous, boxes)
    if s0 is None:
        raise ValueError(f"inbound event encodes no state: {pretty(previous)}")
    return Explicit(frozenset({(s0, s1)}))


def acp_protocol(boxes: int = 1) -> tuple[Protocol, StateModel]:
    """The award card protocol: buyer, cashier(s), and new-card roles.

    Tags encode states 0..boxes; the buy and new tags come after them
    (g2 and g3 when boxes = 1).  For more than one box there is one
    cashier role per checkable state."""
    if boxes < 1:
        raise ValueError("a card needs at least one box")
    b, c = Var("b", Sort.AKEY), Var("c", Sort.AKEY)
    k = Var("k", Sort.SKEY)
    nb, nc = Var("nb", Sort.DATA), Var("nc", Sort.DATA)
    buy, new = Tag(boxes + 1), Tag(boxes + 2)
    request = Enc(Pair(buy, Pair(nc, c)), b)
    response = Enc(Pair(nc, Pair(nb, b)), c)
    receipt = Pair(nc, nb)
    buyer = RoleTemplate(
        "buyer",
        (("b", Sort.AKEY), ("c", Sort.AKEY), ("nb", Sort.DATA), ("nc", Sort.DATA)),
        (send(request), recv(response), send(receipt)),
    )
    cashiers = []
    for s in range(boxes, 0, -1):
        trace = (
            recv(request),
            send(response),
            recv(_card(Tag(s), b, c, k)),
            send(_card(Tag(s - 1), b, c, k)),
            recv(receipt),
        )
        annotations = (
            BOTTOM,
            BOTTOM,
            BOTTOM,
            Up(_pair_annotation(_card(Tag(s), b, c, k), _card(Tag(s - 1), b, c, k), boxes)),
            BOTTOM,
        )
        name = "cashier" if boxes == 1 else f"cashier{s}"
        cashiers.append(
            RoleTemplate(
                name,
                (
                    ("b", Sort.AKEY),
                    ("c", Sort.AKEY),
                    ("k", Sort.SKEY),
                    ("nb", Sort.DATA),
                    ("nc", Sort.DATA),
                ),
                trace,
                annotations=annotations,
            )
        )
    new_card = RoleTemplate(
        "new-card",
        (("b", Sort.AKEY), ("c", Sort.AKEY), ("k", Sort.SKEY)),
        (recv(new), send(_card(Tag(boxes), b, c, k))),
        annotations=(BOTTOM, Up(_pair_annotation(None, _card(Tag(boxes), b, c, k), boxes))),
    )
    model = acp_state_model(boxes)
    name = "acp" if boxes == 1 else f"acp{boxes}"
    protocol = Protocol(name, (buyer, *cashiers, new_card), state=model)
    return protocol, model
