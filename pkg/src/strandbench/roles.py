"""Role items, role templates, protocols, and the adversary's behaviors.

Regular behavior is constrained by protocol roles.  Adversary strands are
constrained by the five built-in generators (create, pair, sep, enc, dec)
plus a dedicated tag-emission role: tag constants have sort top, so they
are not atoms and create cannot produce them, yet stateful protocols need
a source for dummy tag receptions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Optional, Sequence

from .strands import Event, Node, StrandSpace, Trace, recv, send
from .terms import (
    KEY_SORTS,
    Sort,
    SortError,
    Substitution,
    Tag,
    Term,
    Var,
    free_vars,
    invert_key,
    is_atom,
    is_ground,
    pretty,
    sort_of,
)

if TYPE_CHECKING:
    from .statemodel import StateModel


class _Bottom:
    """The unannotated marker of a lifted type."""

    _instance: Optional["_Bottom"] = None

    def __new__(cls) -> "_Bottom":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "Bottom"


BOTTOM = _Bottom()


@dataclass(frozen=True)
class Up:
    value: Any


Lifted = _Bottom | Up


def down(x: Lifted) -> Any:
    if isinstance(x, Up):
        return x.value
    raise ValueError("down applied to Bottom")


LISTENER = "listener"
TAG_ROLE = "tag"
ADVERSARY_ROLE_NAMES = ("create", "pair", "sep", "enc", "dec")
RESERVED_ROLE_NAMES = frozenset(ADVERSARY_ROLE_NAMES) | {LISTENER, TAG_ROLE}

OriginationSets = tuple[frozenset[Term], ...]


def _empty_sets(n: int) -> OriginationSets:
    return tuple(frozenset() for _ in range(n))


def _empty_annotations(n: int) -> tuple[Lifted, ...]:
    return tuple(BOTTOM for _ in range(n))


@dataclass(frozen=True)
class RoleItem:
    """A concrete constrained behavior: trace plus per-index assumptions."""

    role: str
    trace: Trace
    nonorig: OriginationSets
    uniqorig: OriginationSets
    annotations: tuple[Lifted, ...] = ()

    def __post_init__(self) -> None:
        if not self.trace:
            raise ValueError("role item trace must be non-empty")
        if self.annotations == ():
            object.__setattr__(self, "annotations", _empty_annotations(len(self.trace)))
        if not (len(self.nonorig) == len(self.uniqorig) == len(self.annotations) == len(self.trace)):
            raise ValueError("trace, origination, and annotation lengths must agree")
        for sets in (self.nonorig, self.uniqorig):
            for entry in sets:
                for t in entry:
                    if not is_atom(t):
                        raise ValueError(f"origination assumption on a non-atom: {pretty(t)}")


@dataclass(frozen=True)
class RoleTemplate:
    """A parametric role; instantiation yields role items."""

    name: str
    params: tuple[tuple[str, Sort], ...]
    trace: Trace
    nonorig: OriginationSets = ()
    uniqorig: OriginationSets = ()
    annotations: tuple[Lifted, ...] = ()

    def __post_init__(self) -> None:
        if not self.trace:
            raise ValueError(f"role {self.name}: trace must be non-empty")
        n = len(self.trace)
        if self.nonorig == ():
            object.__setattr__(self, "nonorig", _empty_sets(n))
        if self.uniqorig == ():
            object.__setattr__(self, "uniqorig", _empty_sets(n))
        if self.annotations == ():
            object.__setattr__(self, "annotations", _empty_annotations(n))
        if not (len(self.nonorig) == len(self.uniqorig) == len(self.annotations) == n):
            raise ValueError(f"role {self.name}: clause lengths must agree")
        declared = {Var(p, s) for p, s in self.params}
        used: set[Var] = set()
        for event in self.trace:
            used |= free_vars(event.message)
        for sets in (self.nonorig, self.uniqorig):
            for entry in sets:
                for t in entry:
                    if not is_atom(t):
                        raise ValueError(f"role {self.name}: non-atom origination term")
                    used |= free_vars(t)
        stray = used - declared
        if stray:
            names = ", ".join(sorted(v.name for v in stray))
            raise ValueError(f"role {self.name}: undeclared variables {names}")

    def param_var(self, name: str) -> Var:
        for p, s in self.params:
            if p == name:
                return Var(p, s)
        raise ValueError(f"role {self.name} has no parameter {name}")

    def instantiate(self, sub: Substitution) -> RoleItem:
        """Ground instantiation; every parameter must be bound."""
        for p, s in self.params:
            image = sub.get((p, s))
            if image is None:
                raise ValueError(f"role {self.name}: parameter {p} unbound")
            if not is_ground(image):
                raise ValueError(f"role {self.name}: parameter {p} bound to a non-ground term")
        trace = tuple(Event(e.outbound, sub.apply(e.message)) for e in self.trace)
        nonorig = tuple(frozenset(sub.apply(t) for t in entry) for entry in self.nonorig)
        uniqorig = tuple(frozenset(sub.apply(t) for t in entry) for entry in self.uniqorig)
        return RoleItem(self.name, trace, nonorig, uniqorig, self.annotations)


def listener_template() -> RoleTemplate:
    """The reserved two-event listener role over a top-sorted parameter."""
    x = Var("x", Sort.TOP)
    return RoleTemplate(LISTENER, (("x", Sort.TOP),), (recv(x), send(x)))


@dataclass(frozen=True)
class Protocol:
    name: str
    roles: tuple[RoleTemplate, ...]
    state: Optional["StateModel"] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for role in self.roles:
            if role.name in RESERVED_ROLE_NAMES:
                raise ValueError(f"role name {role.name} is reserved")
            if role.name in seen:
                raise ValueError(f"duplicate role name {role.name}")
            seen.add(role.name)

    def role(self, name: str) -> RoleTemplate:
        for role in self.roles:
            if role.name == name:
                return role
        raise ValueError(f"protocol {self.name} has no role {name}")

    def has_role(self, name: str) -> bool:
        return any(role.name == name for role in self.roles)


def inst(space: StrandSpace, s: int, item: RoleItem) -> bool:
    """Is strand s an instance of the role item in this space?"""
    trace = space.traces[s]
    h = len(trace)
    if h > len(item.trace) or trace != item.trace[:h]:
        return False
    from .strands import non_originating, uniquely_originates

    for i in range(h):
        for t in item.nonorig[i]:
            if not non_originating(space, t):
                return False
        for t in item.uniqorig[i]:
            if not uniquely_originates(space, t, Node(s, i)):
                return False
    return True


def htin(space: StrandSpace, s: int, h: int, item: RoleItem) -> bool:
    """Height-instance predicate: h within the strand and inst holds."""
    return h <= len(space.traces[s]) and inst(space, s, item)


def _require_ground_top(name: str, t: Term) -> None:
    if not is_ground(t):
        raise ValueError(f"{name}: adversary parameters must be ground")


def create_item(t: Term) -> RoleItem:
    _require_ground_top("create", t)
    if not is_atom(t):
        raise ValueError(f"create is restricted to atoms: {pretty(t)}")
    return RoleItem("create", (send(t),), _empty_sets(1), _empty_sets(1))


def pair_item(t0: Term, t1: Term) -> RoleItem:
    _require_ground_top("pair", t0)
    _require_ground_top("pair", t1)
    from .terms import Pair

    trace = (recv(t0), recv(t1), send(Pair(t0, t1)))
    return RoleItem("pair", trace, _empty_sets(3), _empty_sets(3))


def sep_item(t0: Term, t1: Term) -> RoleItem:
    _require_ground_top("sep", t0)
    _require_ground_top("sep", t1)
    from .terms import Pair

    trace = (recv(Pair(t0, t1)), send(t0), send(t1))
    return RoleItem("sep", trace, _empty_sets(3), _empty_sets(3))


def _require_key(name: str, k: Term) -> None:
    if sort_of(k) not in KEY_SORTS:
        raise SortError(f"{name}: second parameter must be a key: {pretty(k)}")


def enc_item(t: Term, k: Term) -> RoleItem:
    _require_ground_top("enc", t)
    _require_ground_top("enc", k)
    _require_key("enc", k)
    from .terms import Enc

    trace = (recv(t), recv(k), send(Enc(t, k)))
    return RoleItem("enc", trace, _empty_sets(3), _empty_sets(3))


def dec_item(t: Term, k: Term) -> RoleItem:
    _require_ground_top("dec", t)
    _require_ground_top("dec", k)
    _require_key("dec", k)
    from .terms import Enc

    trace = (recv(Enc(t, k)), recv(invert_key(k)), send(t))
    return RoleItem("dec", trace, _empty_sets(3), _empty_sets(3))


def tag_item(index: int) -> RoleItem:
    """The dedicated tag-emission role: tags are public but not atoms."""
    return RoleItem(TAG_ROLE, (send(Tag(index)),), _empty_sets(1), _empty_sets(1))


def adversary_roles() -> dict[str, Any]:
    """The five parametric adversary generators, by name."""
    return {
        "create": create_item,
        "pair": pair_item,
        "sep": sep_item,
        "enc": enc_item,
        "dec": dec_item,
    }


def build_implicit_item(kind: str, params: Sequence[Term]) -> RoleItem:
    """Build an adversary, tag, or listener item from positional parameters."""
    if kind == TAG_ROLE:
        (t,) = params
        if not isinstance(t, Tag):
            raise ValueError(f"tag role takes a tag constant: {pretty(t)}")
        return tag_item(t.index)
    if kind == LISTENER:
        (t,) = params
        return listener_role(t)
    builders = adversary_roles()
    if kind not in builders:
        raise ValueError(f"unknown implicit role {kind}")
    return builders[kind](*params)


def listener_role(t: Term) -> RoleItem:
    """Ground listener item: receive t, retransmit t."""
    if not is_ground(t):
        raise ValueError("listener messages must be ground here")
    return RoleItem(LISTENER, (recv(t), send(t)), _empty_sets(2), _empty_sets(2))
