"""Readers and writers for the S-expression file formats.

One grammar covers every object kind (protocols, bundles, skeletons,
homomorphism witnesses, goals, sentences, analyses); docs/formats.md is
the normative description.  A workspace holds loaded objects by kind and
name so cross-references (a bundle's protocol, a goal's roles) resolve.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

from .bundles import (
    AdversaryAssignment,
    Bundle,
    RegularAssignment,
    RoleAssignment,
    StrandRole,
    item_for_entry,
)
from .formulas import (
    Atom,
    EqStrand,
    EqTerm,
    Goal,
    GoalDisjunct,
    HtIn,
    Non,
    Prec,
    SentenceDisjunct,
    ShapeSentence,
    SkeletonFormula,
    Uniq,
    VarDecl,
)
from .roles import (
    BOTTOM,
    LISTENER,
    Lifted,
    Protocol,
    RESERVED_ROLE_NAMES,
    RoleTemplate,
    TAG_ROLE,
    Up,
)
from .sexpr import ParseError, SAtom, SExpr, SList, parse_text, write_forms
from .skeletons import HomWitness, Instance, Skeleton, listener_instance
from .statemodel import (
    CheckBox,
    EndsAt,
    Explicit,
    NewCard,
    StartsAt,
    StateModel,
    TransitionSet,
)
from .strands import Event, Node, recv, send
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
    invert_key,
    sort_leq,
    sort_of,
)

SORT_NAMES = {
    "akey": Sort.AKEY,
    "skey": Sort.SKEY,
    "data": Sort.DATA,
    "top": Sort.TOP,
}
STRAND_SORT = "strd"


def _err(node: SExpr, message: str) -> ParseError:
    return ParseError(message, node.line, node.column)


def _symbol(node: SExpr, what: str) -> str:
    if isinstance(node, SAtom) and isinstance(node.value, str) and not node.quoted:
        return node.value
    raise _err(node, f"expected {what}")


def _integer(node: SExpr, what: str) -> int:
    if isinstance(node, SAtom) and isinstance(node.value, int):
        return node.value
    raise _err(node, f"expected {what}")


def _string(node: SExpr, what: str) -> str:
    if isinstance(node, SAtom) and node.quoted:
        return str(node.value)
    raise _err(node, f"expected {what}")


def _list(node: SExpr, what: str) -> SList:
    if isinstance(node, SList):
        return node
    raise _err(node, f"expected {what}")


def _clause(node: SExpr, head: str) -> SList:
    lst = _list(node, f"({head} ...) clause")
    if not lst.items or _symbol(lst.items[0], "clause head") != head:
        raise _err(node, f"expected ({head} ...) clause")
    return lst


def _clauses(items: Sequence[SExpr]) -> dict[str, SList]:
    seen: dict[str, SList] = {}
    for item in items:
        lst = _list(item, "clause")
        if not lst.items:
            raise _err(item, "empty clause")
        head = _symbol(lst.items[0], "clause head")
        if head in seen:
            raise _err(item, f"duplicate clause {head}")
        seen[head] = lst
    return seen


Scope = dict[str, Var]


def parse_sort(node: SExpr) -> Sort:
    name = _symbol(node, "sort")
    if name not in SORT_NAMES:
        raise _err(node, f"unknown sort {name}")
    return SORT_NAMES[name]


def parse_var_decls(node: SExpr) -> tuple[list[VarDecl], list[str]]:
    """A (vars ...) clause: algebra declarations plus strand variables."""
    algebra: list[VarDecl] = []
    strands: list[str] = []
    for item in _clause(node, "vars").items[1:]:
        decl = _list(item, "(name sort) declaration")
        if len(decl.items) != 2:
            raise _err(item, "variable declarations have the form (name sort)")
        name = _symbol(decl.items[0], "variable name")
        sort_symbol = _symbol(decl.items[1], "sort")
        if sort_symbol == STRAND_SORT:
            strands.append(name)
        elif sort_symbol in SORT_NAMES:
            algebra.append((name, SORT_NAMES[sort_symbol]))
        else:
            raise _err(decl.items[1], f"unknown sort {sort_symbol}")
    return algebra, strands


def parse_term(node: SExpr, scope: Optional[Scope]) -> Term:
    if isinstance(node, SAtom):
        name = _symbol(node, "term")
        if scope is None:
            raise _err(node, f"variable {name} in a ground context")
        if name not in scope:
            raise _err(node, f"undeclared variable {name}")
        return scope[name]
    if not node.items:
        raise _err(node, "empty term")
    head = _symbol(node.items[0], "term constructor")
    args = node.items[1:]

    def arity(n: int) -> None:
        if len(args) != n:
            raise _err(node, f"{head} takes {n} arguments")

    if head == "akey":
        arity(1)
        return AConst(_integer(args[0], "constant index"))
    if head == "akey-inv":
        arity(1)
        return AConst(_integer(args[0], "constant index"), inverted=True)
    if head == "skey":
        arity(1)
        return SConst(_integer(args[0], "constant index"))
    if head == "data":
        arity(1)
        return DConst(_integer(args[0], "constant index"))
    if head == "tag":
        arity(1)
        return Tag(_integer(args[0], "constant index"))
    if head == "var":
        arity(2)
        return Var(_symbol(args[0], "variable name"), parse_sort(args[1]))
    if head == "invk":
        arity(1)
        inner = parse_term(args[0], scope)
        try:
            return invert_key(inner)
        except SortError as exc:
            raise _err(node, str(exc))
    if head == "pair":
        arity(2)
        return Pair(parse_term(args[0], scope), parse_term(args[1], scope))
    if head == "enc":
        arity(2)
        body = parse_term(args[0], scope)
        key = parse_term(args[1], scope)
        try:
            return Enc(body, key)
        except SortError as exc:
            raise _err(node, str(exc))
    raise _err(node, f"unknown term constructor {head}")


def term_to_sexpr(t: Term, scoped: bool) -> SExpr:
    match t:
        case AConst(index=i, inverted=inv):
            return SList((SAtom("akey-inv" if inv else "akey"), SAtom(i)))
        case SConst(index=i):
            return SList((SAtom("skey"), SAtom(i)))
        case DConst(index=i):
            return SList((SAtom("data"), SAtom(i)))
        case Tag(index=i):
            return SList((SAtom("tag"), SAtom(i)))
        case Var(name=n, sort=s, inverted=inv):
            base: SExpr = (
                SAtom(n) if scoped else SList((SAtom("var"), SAtom(n), SAtom(s.value)))
            )
            return SList((SAtom("invk"), base)) if inv else base
        case Pair(left=l, right=r):
            return SList((SAtom("pair"), term_to_sexpr(l, scoped), term_to_sexpr(r, scoped)))
        case Enc(body=b, key=k):
            return SList((SAtom("enc"), term_to_sexpr(b, scoped), term_to_sexpr(k, scoped)))
    raise TypeError(f"not a term: {t!r}")


def parse_event(node: SExpr, scope: Optional[Scope]) -> Event:
    lst = _list(node, "(send ...) or (recv ...)")
    if len(lst.items) != 2:
        raise _err(node, "events have the form (send TERM) or (recv TERM)")
    head = _symbol(lst.items[0], "event direction")
    term = parse_term(lst.items[1], scope)
    if head == "send":
        return send(term)
    if head == "recv":
        return recv(term)
    raise _err(node, f"unknown event direction {head}")


def event_to_sexpr(e: Event, scoped: bool) -> SExpr:
    return SList((SAtom("send" if e.outbound else "recv"), term_to_sexpr(e.message, scoped)))


def parse_annotation(node: SExpr) -> TransitionSet:
    lst = _list(node, "annotation")
    head = _symbol(lst.items[0], "annotation kind") if lst.items else ""
    if head == "new-card" and len(lst.items) == 1:
        return NewCard()
    if head == "check-box" and len(lst.items) == 1:
        return CheckBox()
    if head == "ends-at" and len(lst.items) == 2:
        return EndsAt(_integer(lst.items[1], "state"))
    if head == "starts-at" and len(lst.items) == 2:
        return StartsAt(_integer(lst.items[1], "state"))
    if head == "explicit":
        pairs = set()
        for item in lst.items[1:]:
            pair = _list(item, "(s0 s1) transition")
            if len(pair.items) != 2:
                raise _err(item, "transitions have the form (s0 s1)")
            pairs.add((_integer(pair.items[0], "state"), _integer(pair.items[1], "state")))
        return Explicit(frozenset(pairs))
    raise _err(node, "unknown annotation")


def annotation_to_sexpr(ts: TransitionSet) -> SExpr:
    match ts:
        case NewCard():
            return SList((SAtom("new-card"),))
        case CheckBox():
            return SList((SAtom("check-box"),))
        case EndsAt(state=s):
            return SList((SAtom("ends-at"), SAtom(s)))
        case StartsAt(state=s):
            return SList((SAtom("starts-at"), SAtom(s)))
        case Explicit(pairs=pairs):
            items: list[SExpr] = [SAtom("explicit")]
            for s0, s1 in sorted(pairs):
                items.append(SList((SAtom(s0), SAtom(s1))))
            return SList(tuple(items))
    raise TypeError(f"not a transition set: {ts!r}")


def _indexed_entries(clause: SList) -> list[tuple[int, SExpr]]:
    out = []
    for item in clause.items[1:]:
        lst = _list(item, "(index ...) entry")
        if len(lst.items) != 2:
            raise _err(item, "entries have the form (INDEX VALUE)")
        out.append((_integer(lst.items[0], "index"), lst.items[1]))
    return out


def parse_role(node: SExpr) -> RoleTemplate:
    lst = _clause(node, "defrole")
    if len(lst.items) < 3:
        raise _err(node, "defrole needs a name, vars, and a trace")
    name = _symbol(lst.items[1], "role name")
    if name in RESERVED_ROLE_NAMES:
        raise _err(lst.items[1], f"role name {name} is reserved")
    clauses = _clauses(lst.items[2:])
    if "vars" not in clauses or "trace" not in clauses:
        raise _err(node, "defrole needs (vars ...) and (trace ...)")
    algebra, strand_vars = parse_var_decls(clauses["vars"])
    if strand_vars:
        raise _err(clauses["vars"], "roles declare algebra variables only")
    scope: Scope = {n: Var(n, s) for n, s in algebra}
    trace = tuple(parse_event(e, scope) for e in clauses["trace"].items[1:])
    if not trace:
        raise _err(clauses["trace"], "traces must be non-empty")
    n = len(trace)
    nonorig = [set() for _ in range(n)]
    uniqorig = [set() for _ in range(n)]
    annotations: list[Lifted] = [BOTTOM] * n
    for head, target in (("non-orig", nonorig), ("uniq-orig", uniqorig)):
        if head in clauses:
            for index, value in _indexed_entries(clauses[head]):
                if not 0 <= index < n:
                    raise _err(clauses[head], f"{head} index {index} out of range")
                target[index].add(parse_term(value, scope))
    if "annotations" in clauses:
        for index, value in _indexed_entries(clauses["annotations"]):
            if not 0 <= index < n:
                raise _err(clauses["annotations"], f"annotation index {index} out of range")
            annotations[index] = Up(parse_annotation(value))
    try:
        return RoleTemplate(
            name,
            tuple(algebra),
            trace,
            tuple(frozenset(s) for s in nonorig),
            tuple(frozenset(s) for s in uniqorig),
            tuple(annotations),
        )
    except ValueError as exc:
        raise _err(node, str(exc))


def parse_protocol(form: SList) -> Protocol:
    if len(form.items) < 2:
        raise _err(form, "defprotocol needs a name")
    name = _symbol(form.items[1], "protocol name")
    roles = []
    state: Optional[StateModel] = None
    for item in form.items[2:]:
        lst = _list(item, "defrole or defstate")
        head = _symbol(lst.items[0], "clause head") if lst.items else ""
        if head == "defrole":
            roles.append(parse_role(lst))
        elif head == "defstate":
            inner = _clauses(lst.items[1:])
            if "boxes" not in inner or len(inner["boxes"].items) != 2:
                raise _err(item, "defstate needs (boxes N)")
            boxes = _integer(inner["boxes"].items[1], "box count")
            state = StateModel(boxes, (CheckBox(), NewCard()))
        else:
            raise _err(item, f"unexpected clause {head} in defprotocol")
    try:
        return Protocol(name, tuple(roles), state=state)
    except ValueError as exc:
        raise _err(form, str(exc))


def role_to_sexpr(role: RoleTemplate) -> SExpr:
    items: list[SExpr] = [SAtom("defrole"), SAtom(role.name)]
    items.append(
        SList(
            (SAtom("vars"),)
            + tuple(SList((SAtom(n), SAtom(s.value))) for n, s in role.params)
        )
    )
    items.append(SList((SAtom("trace"),) + tuple(event_to_sexpr(e, True) for e in role.trace)))
    for head, sets in (("non-orig", role.nonorig), ("uniq-orig", role.uniqorig)):
        entries = []
        for index, group in enumerate(sets):
            for t in sorted(group, key=repr):
                entries.append(SList((SAtom(index), term_to_sexpr(t, True))))
        if entries:
            items.append(SList((SAtom(head),) + tuple(entries)))
    annotation_entries = []
    for index, lifted in enumerate(role.annotations):
        if isinstance(lifted, Up):
            annotation_entries.append(
                SList((SAtom(index), annotation_to_sexpr(lifted.value)))
            )
    if annotation_entries:
        items.append(SList((SAtom("annotations"),) + tuple(annotation_entries)))
    return SList(tuple(items))


def protocol_to_sexpr(p: Protocol) -> SExpr:
    items: list[SExpr] = [SAtom("defprotocol"), SAtom(p.name)]
    items.extend(role_to_sexpr(role) for role in p.roles)
    if p.state is not None:
        items.append(SList((SAtom("defstate"), SList((SAtom("boxes"), SAtom(p.state.boxes))))))
    return SList(tuple(items))


def _parse_map(clause: SList, params: Sequence[VarDecl], scope: Optional[Scope]) -> Substitution:
    bindings: dict[tuple[str, Sort], Term] = {}
    by_name = {name: sort for name, sort in params}
    for item in clause.items[1:]:
        lst = _list(item, "(param TERM) binding")
        if len(lst.items) != 2:
            raise _err(item, "bindings have the form (param TERM)")
        name = _symbol(lst.items[0], "parameter name")
        if name not in by_name:
            raise _err(lst.items[0], f"unknown parameter {name}")
        term = parse_term(lst.items[1], scope)
        if not sort_leq(sort_of(term), by_name[name]):
            raise _err(lst.items[1], f"binding for {name} breaks the sort order")
        bindings[(name, by_name[name])] = term
    try:
        return Substitution(bindings)
    except (ValueError, SortError) as exc:
        raise _err(clause, str(exc))


@dataclass(frozen=True)
class StrandDecl:
    entry: StrandRole
    height: Optional[int]


@dataclass(frozen=True)
class BundleSource:
    name: str
    protocol_name: str
    strands: tuple[StrandDecl, ...]
    edges: tuple[tuple[Node, Node], ...]


def _parse_node(node: SExpr) -> Node:
    lst = _list(node, "(strand index) node")
    if len(lst.items) != 2:
        raise _err(node, "nodes have the form (S I)")
    return Node(_integer(lst.items[0], "strand"), _integer(lst.items[1], "index"))


def node_to_sexpr(n: Node) -> SExpr:
    return SList((SAtom(n.strand), SAtom(n.index)))


def parse_bundle(form: SList, protocols: dict[str, Protocol]) -> tuple[Bundle, RoleAssignment, BundleSource]:
    if len(form.items) < 2:
        raise _err(form, "defbundle needs a name")
    name = _symbol(form.items[1], "bundle name")
    protocol: Optional[Protocol] = None
    decls: list[StrandDecl] = []
    edges: list[tuple[Node, Node]] = []
    for item in form.items[2:]:
        lst = _list(item, "bundle clause")
        head = _symbol(lst.items[0], "clause head") if lst.items else ""
        if head == "protocol":
            pname = _symbol(lst.items[1], "protocol name")
            if pname not in protocols:
                raise _err(lst.items[1], f"protocol {pname} is not loaded")
            protocol = protocols[pname]
        elif head == "strand":
            if protocol is None:
                raise _err(item, "the (protocol ...) clause must come first")
            decls.append(_parse_strand_decl(lst, protocol))
        elif head == "edges":
            for edge in lst.items[1:]:
                pair = _list(edge, "((S I) (S I)) edge")
                if len(pair.items) != 2:
                    raise _err(edge, "edges have the form ((S I) (S I))")
                edges.append((_parse_node(pair.items[0]), _parse_node(pair.items[1])))
        else:
            raise _err(item, f"unexpected clause {head} in defbundle")
    if protocol is None:
        raise _err(form, "defbundle needs a (protocol ...) clause")
    if not decls:
        raise _err(form, "defbundle needs at least one strand")
    traces = []
    for position, decl in enumerate(decls):
        try:
            item = item_for_entry(protocol, decl.entry)
        except (ValueError, SortError) as exc:
            raise _err(form, f"strand {position}: {exc}")
        height = decl.height if decl.height is not None else len(item.trace)
        if not 1 <= height <= len(item.trace):
            raise _err(form, f"strand {position}: height {height} out of range")
        traces.append(item.trace[:height])
    from .strands import StrandSpace

    try:
        bundle = Bundle(StrandSpace(tuple(traces)), tuple(edges))
    except ValueError as exc:
        raise _err(form, str(exc))
    hint = RoleAssignment(tuple(d.entry for d in decls))
    source = BundleSource(name, protocol.name, tuple(decls), tuple(edges))
    return bundle, hint, source


def _parse_strand_decl(lst: SList, protocol: Protocol) -> StrandDecl:
    clauses = _clauses(lst.items[1:])
    if "role" not in clauses or len(clauses["role"].items) != 2:
        raise _err(lst, "strands need a (role NAME) clause")
    role_name = _symbol(clauses["role"].items[1], "role name")
    height: Optional[int] = None
    if "height" in clauses:
        if len(clauses["height"].items) != 2:
            raise _err(clauses["height"], "height has the form (height H)")
        height = _integer(clauses["height"].items[1], "height")
    if role_name in RESERVED_ROLE_NAMES and role_name != LISTENER:
        if "params" not in clauses:
            raise _err(lst, f"adversary strand {role_name} needs (params TERM...)")
        params = tuple(parse_term(t, None) for t in clauses["params"].items[1:])
        return StrandDecl(AdversaryAssignment(role_name, params), height)
    if not protocol.has_role(role_name):
        raise _err(clauses["role"].items[1], f"unknown role {role_name}")
    role = protocol.role(role_name)
    if "map" not in clauses:
        raise _err(lst, f"strand of role {role_name} needs a (map ...) clause")
    mapping = _parse_map(clauses["map"], role.params, None)
    return StrandDecl(RegularAssignment(role_name, mapping), height)


def bundle_to_sexpr(source: BundleSource) -> SExpr:
    items: list[SExpr] = [SAtom("defbundle"), SAtom(source.name)]
    items.append(SList((SAtom("protocol"), SAtom(source.protocol_name))))
    for decl in source.strands:
        strand_items: list[SExpr] = [SAtom("strand")]
        if isinstance(decl.entry, RegularAssignment):
            strand_items.append(SList((SAtom("role"), SAtom(decl.entry.role))))
            if decl.height is not None:
                strand_items.append(SList((SAtom("height"), SAtom(decl.height))))
            bindings = tuple(
                SList((SAtom(name), term_to_sexpr(image, False)))
                for (name, _), image in decl.entry.mapping.items()
            )
            strand_items.append(SList((SAtom("map"),) + bindings))
        else:
            strand_items.append(SList((SAtom("role"), SAtom(decl.entry.kind))))
            if decl.height is not None:
                strand_items.append(SList((SAtom("height"), SAtom(decl.height))))
            strand_items.append(
                SList(
                    (SAtom("params"),)
                    + tuple(term_to_sexpr(t, False) for t in decl.entry.params)
                )
            )
        items.append(SList(tuple(strand_items)))
    edge_items = tuple(
        SList((node_to_sexpr(a), node_to_sexpr(b))) for a, b in source.edges
    )
    items.append(SList((SAtom("edges"),) + edge_items))
    return SList(tuple(items))


def parse_skeleton(form: SList, protocols: dict[str, Protocol]) -> Skeleton:
    if len(form.items) < 2:
        raise _err(form, "defskeleton needs a name")
    protocol: Optional[Protocol] = None
    algebra: list[VarDecl] = []
    scope: Scope = {}
    instances: list[Instance] = []
    ordering: list[tuple[Node, Node]] = []
    nonorig: list[Term] = []
    uniqorig: list[Term] = []
    for item in form.items[2:]:
        lst = _list(item, "skeleton clause")
        head = _symbol(lst.items[0], "clause head") if lst.items else ""
        if head == "protocol":
            pname = _symbol(lst.items[1], "protocol name")
            if pname not in protocols:
                raise _err(lst.items[1], f"protocol {pname} is not loaded")
            protocol = protocols[pname]
        elif head == "vars":
            algebra, strand_vars = parse_var_decls(lst)
            if strand_vars:
                raise _err(lst, "skeletons declare algebra variables only")
            scope = {n: Var(n, s) for n, s in algebra}
        elif head == "instance":
            if protocol is None:
                raise _err(item, "the (protocol ...) clause must come first")
            clauses = _clauses(lst.items[1:])
            if "role" not in clauses or "height" not in clauses:
                raise _err(item, "instances need (role NAME) and (height H)")
            role_name = _symbol(clauses["role"].items[1], "role name")
            if not protocol.has_role(role_name):
                raise _err(clauses["role"].items[1], f"unknown role {role_name}")
            role = protocol.role(role_name)
            height = _integer(clauses["height"].items[1], "height")
            mapping = (
                _parse_map(clauses["map"], role.params, scope)
                if "map" in clauses
                else Substitution()
            )
            try:
                instances.append(Instance(role, height, mapping))
            except ValueError as exc:
                raise _err(item, str(exc))
        elif head == "listener":
            if len(lst.items) != 2:
                raise _err(item, "listener clauses have the form (listener TERM)")
            instances.append(listener_instance(parse_term(lst.items[1], scope)))
        elif head == "precedes":
            for edge in lst.items[1:]:
                pair = _list(edge, "((S I) (S I)) ordering")
                if len(pair.items) != 2:
                    raise _err(edge, "orderings have the form ((S I) (S I))")
                ordering.append((_parse_node(pair.items[0]), _parse_node(pair.items[1])))
        elif head == "non-orig":
            nonorig.extend(parse_term(t, scope) for t in lst.items[1:])
        elif head == "uniq-orig":
            uniqorig.extend(parse_term(t, scope) for t in lst.items[1:])
        else:
            raise _err(item, f"unexpected clause {head} in defskeleton")
    if protocol is None:
        raise _err(form, "defskeleton needs a (protocol ...) clause")
    try:
        return Skeleton(
            protocol,
            tuple(instances),
            tuple(ordering),
            tuple(nonorig),
            tuple(uniqorig),
            tuple(algebra),
        )
    except ValueError as exc:
        raise _err(form, str(exc))


def skeleton_name(form: SList) -> str:
    return _symbol(form.items[1], "skeleton name")


def skeleton_to_sexpr(name: str, k: Skeleton) -> SExpr:
    items: list[SExpr] = [SAtom("defskeleton"), SAtom(name)]
    items.append(SList((SAtom("protocol"), SAtom(k.protocol.name))))
    items.append(
        SList(
            (SAtom("vars"),)
            + tuple(SList((SAtom(n), SAtom(s.value))) for n, s in k.vars)
        )
    )
    for instance in k.instances:
        if instance.is_listener():
            message = instance.mapping.apply(Var("x", Sort.TOP))
            items.append(SList((SAtom("listener"), term_to_sexpr(message, True))))
            continue
        bindings = tuple(
            SList((SAtom(pname), term_to_sexpr(image, True)))
            for (pname, _), image in instance.mapping.items()
        )
        items.append(
            SList(
                (
                    SAtom("instance"),
                    SList((SAtom("role"), SAtom(instance.role.name))),
                    SList((SAtom("height"), SAtom(instance.height))),
                    SList((SAtom("map"),) + bindings),
                )
            )
        )
    if k.ordering:
        items.append(
            SList(
                (SAtom("precedes"),)
                + tuple(
                    SList((node_to_sexpr(a), node_to_sexpr(b))) for a, b in k.ordering
                )
            )
        )
    if k.nonorig:
        items.append(
            SList((SAtom("non-orig"),) + tuple(term_to_sexpr(t, True) for t in k.nonorig))
        )
    if k.uniqorig:
        items.append(
            SList((SAtom("uniq-orig"),) + tuple(term_to_sexpr(t, True) for t in k.uniqorig))
        )
    return SList(tuple(items))


@dataclass(frozen=True)
class HomSpec:
    """A homomorphism witness as written: resolved against skeletons later."""

    name: str
    strand_entries: tuple[Union[int, Node], ...]
    map_entries: tuple[tuple[str, SExpr], ...]

    def resolve(self, source: Skeleton, target_scope: Optional[Scope]) -> HomWitness:
        """Bind the map against the source skeleton's variables; values are
        parsed in the target skeleton's scope (None for a bundle)."""
        declared = {name: sort for name, sort in source.vars}
        bindings: dict[tuple[str, Sort], Term] = {}
        for name, value in self.map_entries:
            if name not in declared:
                raise ParseError(f"witness binds unknown variable {name}")
            term = parse_term(value, target_scope)
            bindings[(name, declared[name])] = term
        return HomWitness(self.strand_entries, Substitution(bindings))


def parse_hom(form: SList) -> HomSpec:
    index = 1
    name = "hom"
    if len(form.items) > 1 and isinstance(form.items[1], SAtom):
        name = _symbol(form.items[1], "witness name")
        index = 2
    clauses = _clauses(form.items[index:])
    if "strands" not in clauses:
        raise _err(form, "defhom needs a (strands ...) clause")
    entries: list[Union[int, Node]] = []
    for item in clauses["strands"].items[1:]:
        if isinstance(item, SAtom):
            entries.append(_integer(item, "strand target"))
        else:
            entries.append(_parse_node(item))
    pairs: list[tuple[str, SExpr]] = []
    if "map" in clauses:
        for item in clauses["map"].items[1:]:
            lst = _list(item, "(var TERM) binding")
            if len(lst.items) != 2:
                raise _err(item, "bindings have the form (var TERM)")
            pairs.append((_symbol(lst.items[0], "variable name"), lst.items[1]))
    return HomSpec(name, tuple(entries), tuple(pairs))


def hom_to_sexpr(spec: HomSpec) -> SExpr:
    strand_items: list[SExpr] = [SAtom("strands")]
    for entry in spec.strand_entries:
        strand_items.append(node_to_sexpr(entry) if isinstance(entry, Node) else SAtom(entry))
    map_items: list[SExpr] = [SAtom("map")]
    for name, value in spec.map_entries:
        map_items.append(SList((SAtom(name), value)))
    return SList(
        (SAtom("defhom"), SAtom(spec.name), SList(tuple(strand_items)), SList(tuple(map_items)))
    )


def _parse_node_ref(node: SExpr, strand_vars: set[str]) -> tuple[str, int]:
    lst = _list(node, "(z I) node reference")
    if len(lst.items) != 2:
        raise _err(node, "node references have the form (z I)")
    z = _symbol(lst.items[0], "strand variable")
    if z not in strand_vars:
        raise _err(lst.items[0], f"undeclared strand variable {z}")
    return z, _integer(lst.items[1], "index")


def parse_atom(node: SExpr, protocol: Protocol, scope: Scope, strand_vars: set[str]) -> Atom:
    lst = _list(node, "atom")
    head = _symbol(lst.items[0], "atom head") if lst.items else ""
    if head == "htin":
        if len(lst.items) != 4:
            raise _err(node, "htin atoms have the form (htin z H (ROLE TERM...))")
        z = _symbol(lst.items[1], "strand variable")
        if z not in strand_vars:
            raise _err(lst.items[1], f"undeclared strand variable {z}")
        height = _integer(lst.items[2], "height")
        call = _list(lst.items[3], "(ROLE TERM...) role pattern")
        role_name = _symbol(call.items[0], "role name")
        if role_name == LISTENER:
            params: tuple[VarDecl, ...] = (("x", Sort.TOP),)
            max_height = 2
        elif protocol.has_role(role_name):
            role = protocol.role(role_name)
            params = role.params
            max_height = len(role.trace)
        else:
            raise _err(call.items[0], f"unknown role {role_name}")
        args = tuple(parse_term(t, scope) for t in call.items[1:])
        if len(args) != len(params):
            raise _err(node, f"{role_name} takes {len(params)} arguments")
        for (pname, psort), arg in zip(params, args):
            if not sort_leq(sort_of(arg), psort):
                raise _err(node, f"argument for {pname} breaks the sort order")
        if not 1 <= height <= max_height:
            raise _err(lst.items[2], f"height {height} out of range for {role_name}")
        return HtIn(z, height, role_name, args)
    if head == "prec":
        if len(lst.items) != 3:
            raise _err(node, "prec atoms have the form (prec (z I) (z J))")
        return Prec(
            _parse_node_ref(lst.items[1], strand_vars),
            _parse_node_ref(lst.items[2], strand_vars),
        )
    if head == "non":
        if len(lst.items) != 2:
            raise _err(node, "non atoms have the form (non TERM)")
        return Non(parse_term(lst.items[1], scope))
    if head == "uniq":
        if len(lst.items) != 3:
            raise _err(node, "uniq atoms have the form (uniq TERM (z I))")
        return Uniq(
            parse_term(lst.items[1], scope),
            _parse_node_ref(lst.items[2], strand_vars),
        )
    if head == "=":
        if len(lst.items) != 3:
            raise _err(node, "equalities have the form (= x TERM)")
        lhs = _symbol(lst.items[1], "variable")
        if lhs in strand_vars:
            rhs = _symbol(lst.items[2], "strand variable")
            if rhs not in strand_vars:
                raise _err(lst.items[2], f"undeclared strand variable {rhs}")
            return EqStrand(lhs, rhs)
        if lhs not in scope:
            raise _err(lst.items[1], f"undeclared variable {lhs}")
        return EqTerm(scope[lhs], parse_term(lst.items[2], scope))
    raise _err(node, f"unknown atom {head}")


def atom_to_sexpr(atom: Atom) -> SExpr:
    match atom:
        case HtIn(strand=z, height=h, role=r, args=args):
            call = SList((SAtom(r),) + tuple(term_to_sexpr(a, True) for a in args))
            return SList((SAtom("htin"), SAtom(z), SAtom(h), call))
        case Prec(n0=(z0, i0), n1=(z1, i1)):
            return SList(
                (
                    SAtom("prec"),
                    SList((SAtom(z0), SAtom(i0))),
                    SList((SAtom(z1), SAtom(i1))),
                )
            )
        case Non(term=t):
            return SList((SAtom("non"), term_to_sexpr(t, True)))
        case Uniq(term=t, node=(z, i)):
            return SList(
                (SAtom("uniq"), term_to_sexpr(t, True), SList((SAtom(z), SAtom(i))))
            )
        case EqStrand(left=a, right=b):
            return SList((SAtom("="), SAtom(a), SAtom(b)))
        case EqTerm(var=v, term=t):
            return SList((SAtom("="), SAtom(v.name), term_to_sexpr(t, True)))
    raise TypeError(f"not an atom: {atom!r}")


def _decls_to_sexpr(algebra: Sequence[VarDecl], strands: Sequence[str]) -> SExpr:
    items: list[SExpr] = [SAtom("vars")]
    items.extend(SList((SAtom(n), SAtom(s.value))) for n, s in algebra)
    items.extend(SList((SAtom(z), SAtom(STRAND_SORT))) for z in strands)
    return SList(tuple(items))


def parse_goal(form: SList, protocols: dict[str, Protocol]) -> Goal:
    if len(form.items) < 4:
        raise _err(form, "defgoal needs a name, protocol, and formula")
    name = _symbol(form.items[1], "goal name")
    protocol_clause = _clause(form.items[2], "protocol")
    pname = _symbol(protocol_clause.items[1], "protocol name")
    if pname not in protocols:
        raise _err(protocol_clause, f"protocol {pname} is not loaded")
    protocol = protocols[pname]
    forall = _clause(form.items[3], "forall")
    if len(forall.items) != 3:
        raise _err(forall, "forall has the form (forall (DECLS) (implies ...))")
    algebra, strand_list = parse_var_decls(
        SList((SAtom("vars"),) + _list(forall.items[1], "declarations").items)
    )
    scope: Scope = {n: Var(n, s) for n, s in algebra}
    strand_vars = set(strand_list)
    implies = _clause(forall.items[2], "implies")
    if len(implies.items) != 3:
        raise _err(implies, "implies has the form (implies (and ...) (or ...))")
    hypothesis_clause = _clause(implies.items[1], "and")
    hypothesis = tuple(
        parse_atom(a, protocol, scope, strand_vars) for a in hypothesis_clause.items[1:]
    )
    disjunction = _clause(implies.items[2], "or")
    disjuncts = []
    for item in disjunction.items[1:]:
        exists = _clause(item, "exists")
        if len(exists.items) != 3:
            raise _err(exists, "exists has the form (exists (DECLS) (and ...))")
        extra_algebra, extra_strands = parse_var_decls(
            SList((SAtom("vars"),) + _list(exists.items[1], "declarations").items)
        )
        inner_scope = dict(scope)
        inner_scope.update({n: Var(n, s) for n, s in extra_algebra})
        inner_strands = strand_vars | set(extra_strands)
        body = _clause(exists.items[2], "and")
        atoms = tuple(
            parse_atom(a, protocol, inner_scope, inner_strands) for a in body.items[1:]
        )
        disjuncts.append(
            GoalDisjunct(tuple(extra_algebra), tuple(extra_strands), atoms)
        )
    return Goal(
        name,
        protocol,
        tuple(algebra),
        tuple(strand_list),
        hypothesis,
        tuple(disjuncts),
    )


def goal_to_sexpr(g: Goal) -> SExpr:
    hypothesis = SList((SAtom("and"),) + tuple(atom_to_sexpr(a) for a in g.hypothesis))
    disjuncts = []
    for d in g.disjuncts:
        decls = _list(_decls_to_sexpr(d.algebra_vars, d.strand_vars), "decls")
        disjuncts.append(
            SList(
                (
                    SAtom("exists"),
                    SList(decls.items[1:]),
                    SList((SAtom("and"),) + tuple(atom_to_sexpr(a) for a in d.atoms)),
                )
            )
        )
    decls = _list(_decls_to_sexpr(g.algebra_vars, g.strand_vars), "decls")
    return SList(
        (
            SAtom("defgoal"),
            SAtom(g.name),
            SList((SAtom("protocol"), SAtom(g.protocol.name))),
            SList(
                (
                    SAtom("forall"),
                    SList(decls.items[1:]),
                    SList(
                        (
                            SAtom("implies"),
                            hypothesis,
                            SList((SAtom("or"),) + tuple(disjuncts)),
                        )
                    ),
                )
            ),
        )
    )


def parse_sentence(form: SList, protocols: dict[str, Protocol]) -> ShapeSentence:
    if len(form.items) < 4:
        raise _err(form, "defsentence needs a name, protocol, vars, and lhs")
    name = _symbol(form.items[1], "sentence name")
    clauses = list(form.items[2:])
    protocol_clause = _clause(clauses[0], "protocol")
    pname = _symbol(protocol_clause.items[1], "protocol name")
    if pname not in protocols:
        raise _err(protocol_clause, f"protocol {pname} is not loaded")
    protocol = protocols[pname]
    vars_clause = _clause(clauses[1], "vars")
    algebra, strand_list = parse_var_decls(vars_clause)
    scope: Scope = {n: Var(n, s) for n, s in algebra}
    strand_vars = set(strand_list)
    lhs_clause = _clause(clauses[2], "lhs")
    lhs = tuple(parse_atom(a, protocol, scope, strand_vars) for a in lhs_clause.items[1:])
    disjuncts = []
    for item in clauses[3:]:
        lst = _clause(item, "disjunct")
        inner = _clauses(lst.items[1:])
        if "vars" not in inner or "and" not in inner:
            raise _err(item, "disjuncts need (vars ...), (delta ...), and (and ...)")
        extra_algebra, extra_strands = parse_var_decls(inner["vars"])
        inner_scope = dict(scope)
        inner_scope.update({n: Var(n, s) for n, s in extra_algebra})
        inner_strands = strand_vars | set(extra_strands)
        delta = tuple(
            parse_atom(a, protocol, inner_scope, inner_strands)
            for a in inner.get("delta", SList((SAtom("delta"),))).items[1:]
        )
        atoms = tuple(
            parse_atom(a, protocol, inner_scope, inner_strands)
            for a in inner["and"].items[1:]
        )
        disjuncts.append(
            SentenceDisjunct(tuple(extra_algebra), tuple(extra_strands), delta, atoms)
        )
    pov = SkeletonFormula(tuple(algebra), tuple(strand_list), lhs)
    return ShapeSentence(name, protocol, pov, tuple(disjuncts))


def sentence_to_sexpr(s: ShapeSentence) -> SExpr:
    items: list[SExpr] = [SAtom("defsentence"), SAtom(s.name)]
    items.append(SList((SAtom("protocol"), SAtom(s.protocol.name))))
    items.append(_decls_to_sexpr(s.pov.algebra_vars, s.pov.strand_vars))
    items.append(SList((SAtom("lhs"),) + tuple(atom_to_sexpr(a) for a in s.pov.atoms)))
    for d in s.disjuncts:
        items.append(
            SList(
                (
                    SAtom("disjunct"),
                    _decls_to_sexpr(d.algebra_vars, d.strand_vars),
                    SList((SAtom("delta"),) + tuple(atom_to_sexpr(a) for a in d.delta)),
                    SList((SAtom("and"),) + tuple(atom_to_sexpr(a) for a in d.atoms)),
                )
            )
        )
    return SList(tuple(items))


def formula_to_sexpr(f: SkeletonFormula) -> SExpr:
    return SList(
        (
            SAtom("formula"),
            _decls_to_sexpr(f.algebra_vars, f.strand_vars),
            SList((SAtom("and"),) + tuple(atom_to_sexpr(a) for a in f.atoms)),
        )
    )


@dataclass(frozen=True)
class AnalysisSpec:
    name: str
    pov: Skeleton
    shapes: tuple[tuple[Skeleton, HomWitness], ...]


KINDS = ("protocol", "bundle", "skeleton", "hom", "goal", "sentence", "analysis")


@dataclass
class Workspace:
    """Loaded objects by kind and name; cross-references must resolve."""

    protocols: dict[str, Protocol] = field(default_factory=dict)
    bundles: dict[str, Bundle] = field(default_factory=dict)
    bundle_hints: dict[str, RoleAssignment] = field(default_factory=dict)
    bundle_sources: dict[str, BundleSource] = field(default_factory=dict)
    skeletons: dict[str, Skeleton] = field(default_factory=dict)
    skeleton_names: dict[str, str] = field(default_factory=dict)
    homs: dict[str, HomSpec] = field(default_factory=dict)
    goals: dict[str, Goal] = field(default_factory=dict)
    sentences: dict[str, ShapeSentence] = field(default_factory=dict)
    analyses: dict[str, AnalysisSpec] = field(default_factory=dict)

    def load_form(self, form: SExpr, base_dir: str = ".") -> tuple[str, str]:
        lst = _list(form, "top-level definition")
        head = _symbol(lst.items[0], "definition head") if lst.items else ""
        if head == "defprotocol":
            protocol = parse_protocol(lst)
            self.protocols[protocol.name] = protocol
            return "protocol", protocol.name
        if head == "defbundle":
            bundle, hint, source = parse_bundle(lst, self.protocols)
            self.bundles[source.name] = bundle
            self.bundle_hints[source.name] = hint
            self.bundle_sources[source.name] = source
            return "bundle", source.name
        if head == "defskeleton":
            name = skeleton_name(lst)
            skeleton = parse_skeleton(lst, self.protocols)
            self.skeletons[name] = skeleton
            return "skeleton", name
        if head == "defhom":
            spec = parse_hom(lst)
            self.homs[spec.name] = spec
            return "hom", spec.name
        if head == "defgoal":
            goal = parse_goal(lst, self.protocols)
            self.goals[goal.name] = goal
            return "goal", goal.name
        if head == "defsentence":
            sentence = parse_sentence(lst, self.protocols)
            self.sentences[sentence.name] = sentence
            return "sentence", sentence.name
        if head == "defanalysis":
            spec = self._load_analysis(lst, base_dir)
            self.analyses[spec.name] = spec
            return "analysis", spec.name
        raise _err(form, f"unknown definition {head}")

    def _load_analysis(self, form: SList, base_dir: str) -> AnalysisSpec:
        if len(form.items) < 3:
            raise _err(form, "defanalysis needs a name and a pov clause")
        name = _symbol(form.items[1], "analysis name")
        pov: Optional[Skeleton] = None
        shapes: list[tuple[Skeleton, HomWitness]] = []
        for item in form.items[2:]:
            lst = _list(item, "analysis clause")
            head = _symbol(lst.items[0], "clause head") if lst.items else ""
            if head == "pov":
                path = os.path.join(base_dir, _string(lst.items[1], "skeleton file path"))
                pov = self.load_file(path, "skeleton")
            elif head == "shape":
                if pov is None:
                    raise _err(item, "the pov clause must come first")
                if len(lst.items) != 3:
                    raise _err(item, "shape clauses have the form (shape SKEL-FILE HOM-FILE)")
                shape_path = os.path.join(base_dir, _string(lst.items[1], "skeleton file path"))
                hom_path = os.path.join(base_dir, _string(lst.items[2], "witness file path"))
                shape = self.load_file(shape_path, "skeleton")
                spec = self.load_file(hom_path, "hom")
                scope = {n: Var(n, s) for n, s in shape.vars}
                witness = spec.resolve(pov, scope)
                shapes.append((shape, witness))
            else:
                raise _err(item, f"unexpected clause {head} in defanalysis")
        if pov is None:
            raise _err(form, "defanalysis needs a (pov ...) clause")
        return AnalysisSpec(name, pov, tuple(shapes))

    def get(self, kind: str, name: str):
        table = {
            "protocol": self.protocols,
            "bundle": self.bundles,
            "skeleton": self.skeletons,
            "hom": self.homs,
            "goal": self.goals,
            "sentence": self.sentences,
            "analysis": self.analyses,
        }[kind]
        if name not in table:
            raise KeyError(f"no {kind} named {name} is loaded")
        return table[name]

    def bundle_protocol(self, name: str) -> Protocol:
        return self.protocols[self.bundle_sources[name].protocol_name]

    def load_path(self, path: str) -> list[tuple[str, str]]:
        try:
            with open(path, "r", encoding="utf-8") as handle:
                text = handle.read()
        except OSError as exc:
            raise ParseError(f"cannot read {path}: {exc.strerror}")
        loaded = []
        for form in parse_text(text):
            loaded.append(self.load_form(form, base_dir=os.path.dirname(path) or "."))
        return loaded

    def load_file(self, path: str, expected_kind: str):
        """Load every form in a file; return the last object of the kind."""
        if expected_kind not in KINDS:
            raise ValueError(f"unknown kind {expected_kind}")
        last_name: Optional[str] = None
        for kind, name in self.load_path(path):
            if kind == expected_kind:
                last_name = name
        if last_name is None:
            raise ParseError(f"{path} defines no {expected_kind}")
        return self.get(expected_kind, last_name)


def parse_file(path: str, expected_kind: str, workspace: Optional[Workspace] = None):
    """Parse one file into a typed, validated object of the given kind."""
    ws = workspace if workspace is not None else Workspace()
    return ws.load_file(path, expected_kind)


def dump(form: SExpr) -> str:
    return write_forms([form])
