"""Events, traces, strand spaces, nodes, and the origination predicates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple, Optional

from .terms import Term, carries, is_atom, pretty


@dataclass(frozen=True)
class Event:
    outbound: bool
    message: Term

    def __repr__(self) -> str:
        sign = "+" if self.outbound else "-"
        return f"{sign}{pretty(self.message)}"


def send(t: Term) -> Event:
    return Event(True, t)


def recv(t: Term) -> Event:
    return Event(False, t)


Trace = tuple[Event, ...]


class Node(NamedTuple):
    strand: int
    index: int


@dataclass(frozen=True)
class StrandSpace:
    """A finite non-empty sequence of non-empty traces."""

    traces: tuple[Trace, ...]

    def __post_init__(self) -> None:
        if not self.traces:
            raise ValueError("a strand space needs at least one strand")
        for s, trace in enumerate(self.traces):
            if not trace:
                raise ValueError(f"strand {s} has an empty trace")

    def __len__(self) -> int:
        return len(self.traces)

    def strands(self) -> range:
        return range(len(self.traces))

    def nodes(self) -> Iterator[Node]:
        for s, trace in enumerate(self.traces):
            for i in range(len(trace)):
                yield Node(s, i)

    def has_node(self, n: Node) -> bool:
        return 0 <= n.strand < len(self.traces) and 0 <= n.index < len(self.traces[n.strand])

    def evt(self, n: Node) -> Event:
        if not self.has_node(n):
            raise IndexError(f"node {tuple(n)} out of range")
        return self.traces[n.strand][n.index]


def evt(space: StrandSpace, n: Node) -> Event:
    return space.evt(n)


def _require_atom(t: Term) -> None:
    if not is_atom(t):
        raise ValueError(f"origination is defined for atoms only: {pretty(t)}")


def originates_at(trace: Trace, t: Term) -> Optional[int]:
    """Least index whose outbound event first carries t, or None.

    Accepts atoms over variables as well as ground atoms: origination in
    the free algebra is the same structural recursion.
    """
    _require_atom(t)
    for i, event in enumerate(trace):
        if carries(t, event.message):
            return i if event.outbound else None
    return None


def origination_points(space: StrandSpace, t: Term) -> tuple[Node, ...]:
    """All nodes at which t originates, one per originating strand."""
    _require_atom(t)
    found = []
    for s, trace in enumerate(space.traces):
        i = originates_at(trace, t)
        if i is not None:
            found.append(Node(s, i))
    return tuple(found)


def non_originating(space: StrandSpace, t: Term) -> bool:
    """True iff t originates on no strand of the space."""
    return not origination_points(space, t)


def uniquely_originates(space: StrandSpace, t: Term, n: Node) -> bool:
    """True iff t originates on exactly one strand, at node n."""
    points = origination_points(space, t)
    return len(points) == 1 and points[0] == Node(*n)
