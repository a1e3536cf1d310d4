"""Skeletons over the free algebra and homomorphism verification.

A homomorphism witness carries a strand map and an algebra substitution.
When the target is a bundle, listener strands have no image strand:
the witness names a transmission node instead, and that node inherits
the orderings of the listener's nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .bundles import Bundle, Precedes, RoleAssignment, require_run
from .roles import LISTENER, Protocol, RoleTemplate, listener_template
from .strands import Event, Node, StrandSpace, Trace
from .terms import (
    Sort,
    Substitution,
    Term,
    Var,
    free_vars,
    is_atom,
    is_ground,
    pretty,
    sort_leq,
    sort_of,
)


@dataclass(frozen=True)
class Instance:
    """One strand of a skeleton: a role, a height, and a parameter map."""

    role: RoleTemplate
    height: int
    mapping: Substitution

    def __post_init__(self) -> None:
        if not 1 <= self.height <= len(self.role.trace):
            raise ValueError(
                f"instance of {self.role.name}: height {self.height} out of range"
            )
        for name, sort in self.role.params:
            if self.mapping.get((name, sort)) is None:
                raise ValueError(f"instance of {self.role.name}: parameter {name} unbound")

    def is_listener(self) -> bool:
        return self.role.name == LISTENER

    def trace(self) -> Trace:
        prefix = self.role.trace[: self.height]
        return tuple(Event(e.outbound, self.mapping.apply(e.message)) for e in prefix)


def listener_instance(t: Term) -> Instance:
    return Instance(listener_template(), 2, Substitution({("x", Sort.TOP): t}))


@dataclass(frozen=True)
class Skeleton:
    protocol: Protocol
    instances: tuple[Instance, ...]
    ordering: tuple[tuple[Node, Node], ...]
    nonorig: tuple[Term, ...]
    uniqorig: tuple[Term, ...]
    vars: tuple[tuple[str, Sort], ...]

    def __post_init__(self) -> None:
        if not self.instances:
            raise ValueError("a skeleton needs at least one instance")
        object.__setattr__(
            self,
            "ordering",
            tuple((Node(*a), Node(*b)) for a, b in self.ordering),
        )
        space = self.derive_space()
        for n0, n1 in self.ordering:
            if not (space.has_node(n0) and space.has_node(n1)):
                raise ValueError(f"ordering pair {tuple(n0)} < {tuple(n1)} out of range")
        declared = {Var(n, s) for n, s in self.vars}
        for name, group in (("non-orig", self.nonorig), ("uniq-orig", self.uniqorig)):
            for t in group:
                if not is_atom(t):
                    raise ValueError(f"{name} term is not an atom: {pretty(t)}")
                stray = free_vars(t) - declared
                if stray:
                    raise ValueError(f"{name} term uses undeclared variables: {pretty(t)}")
        closure = order_closure(self)
        for n in space.nodes():
            if (n, n) in closure:
                raise ValueError("skeleton ordering is cyclic")
        for t in self.uniqorig:
            self.origination_node(t)

    def derive_space(self) -> StrandSpace:
        return StrandSpace(tuple(instance.trace() for instance in self.instances))

    def origination_node(self, t: Term) -> Node:
        """The unique node of the derived space at which t originates."""
        from .strands import origination_points

        points = origination_points(self.derive_space(), t)
        if len(points) != 1:
            raise ValueError(
                f"uniq-orig atom {pretty(t)} originates at {len(points)} nodes, not one"
            )
        return points[0]


def origination_node(k: Skeleton, t: Term) -> Node:
    if t not in k.uniqorig:
        raise ValueError(f"{pretty(t)} is not a uniq-orig atom of the skeleton")
    return k.origination_node(t)


def order_closure(k: Skeleton) -> frozenset[tuple[Node, Node]]:
    """Transitive closure of declared orderings plus strand succession."""
    space = k.derive_space()
    pairs: set[tuple[Node, Node]] = set(k.ordering)
    for s, trace in enumerate(space.traces):
        for i in range(1, len(trace)):
            pairs.add((Node(s, i - 1), Node(s, i)))
    nodes = list(space.nodes())
    changed = True
    while changed:
        changed = False
        for a, b in list(pairs):
            for c, d in list(pairs):
                if b == c and (a, d) not in pairs:
                    pairs.add((a, d))
                    changed = True
    return frozenset(pairs)


StrandTarget = Union[int, Node]


@dataclass(frozen=True)
class HomWitness:
    """Candidate homomorphism: per-strand targets and an algebra map.

    A target is a strand id, or a node when a listener strand maps into
    a bundle.
    """

    targets: tuple[StrandTarget, ...]
    term_map: Substitution

    def target(self, s: int) -> StrandTarget:
        return self.targets[s]

    def strand_of(self, s: int) -> int:
        t = self.targets[s]
        return t.strand if isinstance(t, Node) else t


def identity_witness(k: Skeleton) -> HomWitness:
    mapping = Substitution({(n, s): Var(n, s) for n, s in k.vars})
    return HomWitness(tuple(range(len(k.instances))), mapping)


def compose(w1: HomWitness, w2: HomWitness) -> HomWitness:
    """Composite witness: apply w1 then w2."""
    targets: list[StrandTarget] = []
    for t in w1.targets:
        if isinstance(t, Node):
            raise ValueError("cannot compose past a bundle-range witness")
        if t >= len(w2.targets):
            raise ValueError(f"strand {t} outside the second witness's domain")
        targets.append(w2.targets[t])
    return HomWitness(tuple(targets), w1.term_map.compose(w2.term_map))


def verify_hom(k0: Skeleton, k1: Skeleton, w: HomWitness) -> list[str]:
    """Check the six skeleton-homomorphism properties; empty list means OK."""
    if k0.protocol.name != k1.protocol.name:
        raise ValueError("homomorphisms must preserve the protocol")
    violations: list[str] = []
    space0, space1 = k0.derive_space(), k1.derive_space()
    if len(w.targets) != len(space0):
        return [f"strand map covers {len(w.targets)} strands, skeleton has {len(space0)}"]
    for s, trace in enumerate(space0.traces):
        t = w.target(s)
        if isinstance(t, Node) or not 0 <= t < len(space1):
            violations.append(f"property 1: strand {s} has no image strand")
            continue
        if len(space1.traces[t]) < len(trace):
            violations.append(f"property 1: image strand {t} is shorter than strand {s}")
    if violations:
        return violations
    sigma = w.term_map
    for s, trace in enumerate(space0.traces):
        for i, event in enumerate(trace):
            image = space1.evt(Node(w.strand_of(s), i))
            if image.outbound != event.outbound or sigma.apply(event.message) != image.message:
                violations.append(
                    f"property 3: event mismatch at node ({s}, {i})"
                )
    closure1 = order_closure(k1)
    for n0, n1 in order_closure(k0):
        m0 = Node(w.strand_of(n0.strand), n0.index)
        m1 = Node(w.strand_of(n1.strand), n1.index)
        if (m0, m1) not in closure1:
            violations.append(
                f"property 4: ordering {tuple(n0)} < {tuple(n1)} not preserved"
            )
    mapped_non = {sigma.apply(t) for t in k0.nonorig}
    if not mapped_non <= set(k1.nonorig):
        missing = mapped_non - set(k1.nonorig)
        violations.append(
            "property 5: non-orig not preserved: " + ", ".join(sorted(pretty(t) for t in missing))
        )
    for t in k0.uniqorig:
        image = sigma.apply(t)
        if image not in k1.uniqorig:
            violations.append(f"property 6: {pretty(image)} is not uniq-orig in the target")
            continue
        o0 = k0.origination_node(t)
        o1 = k1.origination_node(image)
        if Node(w.strand_of(o0.strand), o0.index) != o1:
            violations.append(f"property 6: origination node of {pretty(t)} not preserved")
    return violations


def verify_hom_to_bundle(
    k: Skeleton,
    b: Bundle,
    w: HomWitness,
    assignment: Optional[RoleAssignment] = None,
) -> list[str]:
    """Bundle-range homomorphism check.

    Raises NotARunError when the bundle is not a run of the skeleton's
    protocol.  Listener strands must target a node transmitting the
    mapped listener message; their internal succession is exempt from
    order preservation since the two listener nodes collapse to one.
    """
    require_run(b, k.protocol, assignment)
    violations: list[str] = []
    space0 = k.derive_space()
    space1 = b.space
    sigma = w.term_map
    if len(w.targets) != len(space0):
        return [f"strand map covers {len(w.targets)} strands, skeleton has {len(space0)}"]
    if not sigma.is_ground():
        return ["property 2: the algebra map must have ground range"]
    listener: dict[int, Node] = {}
    for s, instance in enumerate(k.instances):
        target = w.target(s)
        if instance.is_listener():
            if not isinstance(target, Node):
                violations.append(f"property 1: listener strand {s} must target a node")
                continue
            if not space1.has_node(target):
                violations.append(f"property 1: listener target {tuple(target)} out of range")
                continue
            message = sigma.apply(instance.trace()[0].message)
            event = space1.evt(target)
            if not event.outbound or event.message != message:
                violations.append(
                    f"listener strand {s}: node {tuple(target)} does not transmit {pretty(message)}"
                )
            listener[s] = target
        else:
            if isinstance(target, Node):
                violations.append(f"property 1: strand {s} must target a strand, not a node")
                continue
            if not 0 <= target < len(space1):
                violations.append(f"property 1: strand {s} has no image strand")
                continue
            trace = space0.traces[s]
            if len(space1.traces[target]) < len(trace):
                violations.append(f"property 1: image strand {target} is shorter than strand {s}")
                continue
            for i, event in enumerate(trace):
                image = space1.evt(Node(target, i))
                if image.outbound != event.outbound or sigma.apply(event.message) != image.message:
                    violations.append(f"property 3: event mismatch at node ({s}, {i})")
    if violations:
        return violations

    def map_node(n: Node) -> Node:
        if n.strand in listener:
            return listener[n.strand]
        return Node(w.strand_of(n.strand), n.index)

    order = Precedes(b)
    for n0, n1 in order_closure(k):
        if n0.strand == n1.strand and n0.strand in listener:
            continue
        if not order.prec(map_node(n0), map_node(n1)):
            violations.append(f"property 4: ordering {tuple(n0)} < {tuple(n1)} not preserved")
    from .strands import non_originating, uniquely_originates

    for t in k.nonorig:
        if not non_originating(space1, sigma.apply(t)):
            violations.append(f"property 5: {pretty(sigma.apply(t))} originates in the bundle")
    for t in k.uniqorig:
        image = sigma.apply(t)
        target_node = map_node(k.origination_node(t))
        if not uniquely_originates(space1, image, target_node):
            violations.append(
                f"property 6: {pretty(image)} does not uniquely originate at {tuple(target_node)}"
            )
    return violations
