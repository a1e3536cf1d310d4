"""Order-sorted message algebra: terms, sorts, substitutions, matching.

Terms are kept canonical: key inversion is a flag on asymmetric constants
and variables, never an operator node.  That makes the inverse equations
(invert twice is identity, symmetric keys are self-inverse) hold by
construction, and term equality is plain structural equality.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Mapping, Optional, Union


class SortError(TypeError):
    """A term or binding violates the sort discipline."""


class NotGroundError(ValueError):
    """An operation restricted to ground terms received a variable."""


class Sort(Enum):
    TOP = "top"
    AKEY = "akey"
    SKEY = "skey"
    DATA = "data"

    def __repr__(self) -> str:
        return f"Sort.{self.name}"


KEY_SORTS = (Sort.AKEY, Sort.SKEY)


def sort_leq(lo: Sort, hi: Sort) -> bool:
    """Subsort order: akey, skey, data below top; nothing else related."""
    return lo is hi or hi is Sort.TOP


@dataclass(frozen=True)
class AConst:
    """Asymmetric key constant: a_i when not inverted, b_i when inverted."""

    index: int
    inverted: bool = False


@dataclass(frozen=True)
class SConst:
    """Symmetric key constant s_i (self-inverse)."""

    index: int


@dataclass(frozen=True)
class DConst:
    """Data constant d_i."""

    index: int


@dataclass(frozen=True)
class Tag:
    """Tag constant g_i, of sort top.  Tags are not atoms."""

    index: int


@dataclass(frozen=True)
class Var:
    name: str
    sort: Sort
    inverted: bool = False

    def __post_init__(self) -> None:
        if self.inverted and self.sort is not Sort.AKEY:
            raise SortError(f"only akey variables may be inverted: {self.name}")

    def base(self) -> "Var":
        return Var(self.name, self.sort) if self.inverted else self


@dataclass(frozen=True)
class Pair:
    left: "Term"
    right: "Term"


@dataclass(frozen=True)
class Enc:
    body: "Term"
    key: "Term"

    def __post_init__(self) -> None:
        if sort_of(self.key) not in KEY_SORTS:
            raise SortError(f"encryption key must be akey or skey: {pretty(self.key)}")


Term = Union[AConst, SConst, DConst, Tag, Var, Pair, Enc]


def sort_of(t: Term) -> Sort:
    """Least sort of a term; pairs and encryptions land in top."""
    match t:
        case AConst():
            return Sort.AKEY
        case SConst():
            return Sort.SKEY
        case DConst():
            return Sort.DATA
        case Tag():
            return Sort.TOP
        case Var(sort=s):
            return s
        case Pair() | Enc():
            return Sort.TOP
    raise TypeError(f"not a term: {t!r}")


def is_atom(t: Term) -> bool:
    """Atoms are exactly the messages of key or data sort."""
    return sort_of(t) is not Sort.TOP


def is_ground(t: Term) -> bool:
    match t:
        case Var():
            return False
        case Pair(left=l, right=r):
            return is_ground(l) and is_ground(r)
        case Enc(body=b, key=k):
            return is_ground(b) and is_ground(k)
    return True


def free_vars(t: Term) -> frozenset[Var]:
    """Variables of a term, in base (non-inverted) form."""
    match t:
        case Var():
            return frozenset((t.base(),))
        case Pair(left=l, right=r):
            return free_vars(l) | free_vars(r)
        case Enc(body=b, key=k):
            return free_vars(b) | free_vars(k)
    return frozenset()


def invert_key(t: Term) -> Term:
    """Canonical key inverse; an involution on key terms."""
    match t:
        case AConst(index=i, inverted=inv):
            return AConst(i, not inv)
        case SConst():
            return t
        case Var(name=n, sort=Sort.AKEY, inverted=inv):
            return Var(n, Sort.AKEY, not inv)
        case Var(sort=Sort.SKEY):
            return t
    raise SortError(f"invert_key applied to a non-key term: {pretty(t)}")


def carries(t0: Term, t1: Term) -> bool:
    """Structural carried-by relation; keys occupy no carried position."""
    if t0 == t1:
        return True
    match t1:
        case Pair(left=l, right=r):
            return carries(t0, l) or carries(t0, r)
        case Enc(body=b):
            return carries(t0, b)
    return False


def carried_by(t0: Term, t1: Term) -> bool:
    """Carried-by on ground terms: t0 extractable from t1 given all keys."""
    if not (is_ground(t0) and is_ground(t1)):
        raise NotGroundError("carried_by is defined on ground terms")
    return carries(t0, t1)


def carried_subterms(t: Term) -> Iterator[Term]:
    """All subterms carried by t (plaintext positions only)."""
    yield t
    match t:
        case Pair(left=l, right=r):
            yield from carried_subterms(l)
            yield from carried_subterms(r)
        case Enc(body=b):
            yield from carried_subterms(b)


def well_formed(t: Term) -> bool:
    """Validity of the canonical representation, checked recursively."""
    match t:
        case AConst(index=i) | SConst(index=i) | DConst(index=i) | Tag(index=i):
            return i >= 0
        case Var(sort=s, inverted=inv):
            return not inv or s is Sort.AKEY
        case Pair(left=l, right=r):
            return well_formed(l) and well_formed(r)
        case Enc(body=b, key=k):
            return sort_of(k) in KEY_SORTS and well_formed(b) and well_formed(k)
    return False


VarKey = tuple[str, Sort]


def _as_key(v: Union[Var, VarKey]) -> VarKey:
    if isinstance(v, Var):
        return (v.name, v.sort)
    return v


class Substitution:
    """Sort-preserving, idempotent finite map from variables to terms.

    Keys are (name, sort) pairs; a binding for an inverted variable is
    looked up through its base and the image is inverted on application.
    """

    __slots__ = ("_bindings",)

    def __init__(self, bindings: Mapping[Union[Var, VarKey], Term] = ()):
        normalized: dict[VarKey, Term] = {}
        for raw, image in dict(bindings).items():
            key = _as_key(raw)
            name, sort = key
            if not sort_leq(sort_of(image), sort):
                raise SortError(
                    f"binding {name}:{sort.value} to {pretty(image)} breaks the sort order"
                )
            normalized[key] = image
        self._bindings = normalized
        nontrivial = {
            key for key, image in normalized.items()
            if image != Var(key[0], key[1])
        }
        for key, image in normalized.items():
            clash = {(v.name, v.sort) for v in free_vars(image)} & nontrivial
            if clash - ({key} if image == Var(key[0], key[1]) else set()):
                raise ValueError(
                    f"substitution is not idempotent: {key[0]} maps into its own domain"
                )

    def get(self, v: Union[Var, VarKey]) -> Optional[Term]:
        return self._bindings.get(_as_key(v))

    def domain(self) -> tuple[VarKey, ...]:
        return tuple(self._bindings)

    def items(self) -> tuple[tuple[VarKey, Term], ...]:
        return tuple(self._bindings.items())

    def apply(self, t: Term) -> Term:
        match t:
            case Var(name=n, sort=s, inverted=inv):
                image = self._bindings.get((n, s))
                if image is None:
                    return t
                return invert_key(image) if inv else image
            case Pair(left=l, right=r):
                return Pair(self.apply(l), self.apply(r))
            case Enc(body=b, key=k):
                return Enc(self.apply(b), self.apply(k))
        return t

    def extend(self, v: Union[Var, VarKey], image: Term) -> "Substitution":
        merged = dict(self._bindings)
        merged[_as_key(v)] = image
        return Substitution(merged)

    def compose(self, outer: "Substitution") -> "Substitution":
        """First apply self, then outer: result.apply = outer.apply . self.apply."""
        merged: dict[VarKey, Term] = {
            key: outer.apply(image) for key, image in self._bindings.items()
        }
        for key, image in outer._bindings.items():
            merged.setdefault(key, image)
        return Substitution(merged)

    def is_ground(self) -> bool:
        return all(is_ground(image) for image in self._bindings.values())

    def __contains__(self, v: object) -> bool:
        if isinstance(v, (Var, tuple)):
            return _as_key(v) in self._bindings  # type: ignore[arg-type]
        return False

    def __len__(self) -> int:
        return len(self._bindings)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Substitution) and self._bindings == other._bindings

    def __hash__(self) -> int:
        return hash(frozenset(self._bindings.items()))

    def __repr__(self) -> str:
        inner = ", ".join(
            f"{name}:{sort.value}->{pretty(img)}"
            for (name, sort), img in self._bindings.items()
        )
        return f"Substitution({inner})"


IDENTITY = Substitution()


def match(pattern: Term, target: Term, seed: Substitution = IDENTITY) -> Optional[Substitution]:
    """One-way order-sorted matching: minimal extension of seed sending
    pattern to target, or None.  The target must be ground."""
    if not is_ground(target):
        raise NotGroundError("match target must be ground")
    return _match(pattern, target, seed)


def _match(pattern: Term, target: Term, sub: Substitution) -> Optional[Substitution]:
    match pattern:
        case Var(name=n, sort=s, inverted=inv):
            if inv:
                try:
                    needed = invert_key(target)
                except SortError:
                    return None
            else:
                needed = target
            if not sort_leq(sort_of(needed), s):
                return None
            existing = sub.get((n, s))
            if existing is not None:
                return sub if existing == needed else None
            return sub.extend((n, s), needed)
        case Pair(left=pl, right=pr):
            if not isinstance(target, Pair):
                return None
            sub2 = _match(pl, target.left, sub)
            if sub2 is None:
                return None
            return _match(pr, target.right, sub2)
        case Enc(body=pb, key=pk):
            if not isinstance(target, Enc):
                return None
            sub2 = _match(pb, target.body, sub)
            if sub2 is None:
                return None
            return _match(pk, target.key, sub2)
    return sub if pattern == target else None


def pretty(t: Term) -> str:
    """Compact rendering: a0/b0/s0/d0/g0, {body}key, (left, right)."""
    match t:
        case AConst(index=i, inverted=inv):
            return f"b{i}" if inv else f"a{i}"
        case SConst(index=i):
            return f"s{i}"
        case DConst(index=i):
            return f"d{i}"
        case Tag(index=i):
            return f"g{i}"
        case Var(name=n, inverted=inv):
            return f"invk({n})" if inv else n
        case Pair():
            parts = []
            node: Term = t
            while isinstance(node, Pair):
                parts.append(pretty(node.left))
                node = node.right
            parts.append(pretty(node))
            return "(" + ", ".join(parts) + ")"
        case Enc(body=b, key=k):
            return "{" + pretty(b) + "}" + pretty(k)
    return repr(t)
