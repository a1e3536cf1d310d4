"""The formula layer: skeleton formulas, satisfaction in bundles, shape
analysis sentences, security goals, and syntactic goal entailment.

Satisfaction works by matching: height-instance atoms bind strand
variables to strands and algebra variables via one-way matching of role
traces against bundle traces, equalities propagate bindings to a fixed
point, and the remaining atoms filter.  Algebra variables that no
height-instance atom or equality can ever bind make a formula fall
outside the supported fragment.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Union

from .bundles import Bundle, Precedes, RoleAssignment, check_run
from .roles import LISTENER, Protocol, RoleTemplate, htin, listener_template
from .skeletons import HomWitness, Skeleton, order_closure, verify_hom, verify_hom_to_bundle
from .strands import Node, StrandSpace
from .terms import (
    AConst,
    DConst,
    SConst,
    Sort,
    Substitution,
    Term,
    Var,
    free_vars,
    is_ground,
    match,
    pretty,
    sort_leq,
    sort_of,
)


class UnsupportedFormulaError(ValueError):
    """The formula lies outside the matching-based fragment."""


NodeRef = tuple[str, int]


@dataclass(frozen=True)
class HtIn:
    strand: str
    height: int
    role: str
    args: tuple[Term, ...]


@dataclass(frozen=True)
class Prec:
    n0: NodeRef
    n1: NodeRef


@dataclass(frozen=True)
class Non:
    term: Term


@dataclass(frozen=True)
class Uniq:
    term: Term
    node: NodeRef


@dataclass(frozen=True)
class EqStrand:
    left: str
    right: str


@dataclass(frozen=True)
class EqTerm:
    var: Var
    term: Term


Atom = Union[HtIn, Prec, Non, Uniq, EqStrand, EqTerm]

VarDecl = tuple[str, Sort]


@dataclass(frozen=True)
class SkeletonFormula:
    algebra_vars: tuple[VarDecl, ...]
    strand_vars: tuple[str, ...]
    atoms: tuple[Atom, ...]


def skeleton_formula(k: Skeleton) -> SkeletonFormula:
    """Characteristic conjunction of a skeleton: one height-instance atom
    per instance, plus ordering, non-origination, and unique-origination
    atoms.  Strand variables are z0, z1, ... in instance order."""
    zvars = tuple(f"z{s}" for s in range(len(k.instances)))
    atoms: list[Atom] = []
    for s, instance in enumerate(k.instances):
        args = tuple(
            instance.mapping.apply(Var(name, sort)) for name, sort in instance.role.params
        )
        atoms.append(HtIn(zvars[s], instance.height, instance.role.name, args))
    for n0, n1 in k.ordering:
        atoms.append(Prec((zvars[n0.strand], n0.index), (zvars[n1.strand], n1.index)))
    for t in k.nonorig:
        atoms.append(Non(t))
    for t in k.uniqorig:
        node = k.origination_node(t)
        atoms.append(Uniq(t, (zvars[node.strand], node.index)))
    return SkeletonFormula(tuple(k.vars), zvars, tuple(atoms))


@dataclass
class Assignment:
    strands: dict[str, int] = field(default_factory=dict)
    terms: dict[VarDecl, Term] = field(default_factory=dict)
    listener_nodes: dict[str, Node] = field(default_factory=dict)

    def substitution(self) -> Substitution:
        return Substitution(self.terms)

    def copy(self) -> "Assignment":
        return Assignment(dict(self.strands), dict(self.terms), dict(self.listener_nodes))

    def key(self) -> tuple:
        term_entries = sorted(
            (((n, s.value), t) for (n, s), t in self.terms.items()),
            key=lambda kv: kv[0],
        )
        return (
            tuple(sorted(self.strands.items())),
            tuple(term_entries),
            tuple(sorted(self.listener_nodes.items())),
        )

    def describe(self) -> str:
        parts = [f"{z} -> strand {s}" for z, s in sorted(self.strands.items())]
        parts += [
            f"{name} -> {pretty(t)}"
            for (name, _), t in sorted(self.terms.items(), key=lambda kv: kv[0][0])
        ]
        return "; ".join(parts)


class EvalContext:
    """A bundle assumed to be a run of a protocol, with derived data."""

    def __init__(self, bundle: Bundle, protocol: Protocol):
        self.bundle = bundle
        self.protocol = protocol
        self.space: StrandSpace = bundle.space
        self.order = Precedes(bundle)
        self._listener = listener_template()
        from .bundles import _Fresh

        self._fresh_base = _Fresh(self.space).snapshot()

    def role(self, name: str) -> RoleTemplate:
        if name == LISTENER:
            return self._listener
        return self.protocol.role(name)

    def transmissions(self) -> Iterator[Node]:
        for n in self.space.nodes():
            if self.space.evt(n).outbound:
                yield n

    def fresh_counters(self) -> dict[Sort, int]:
        return dict(self._fresh_base)


def _mentioned_algebra_vars(atoms: Sequence[Atom]) -> set[VarDecl]:
    out: set[VarDecl] = set()

    def collect(t: Term) -> None:
        for v in free_vars(t):
            out.add((v.name, v.sort))

    for atom in atoms:
        match atom:
            case HtIn(args=args):
                for a in args:
                    collect(a)
            case Non(term=t) | Uniq(term=t):
                collect(t)
            case EqTerm(var=v, term=t):
                out.add((v.name, v.sort))
                collect(t)
    return out


def _bindable_vars(atoms: Sequence[Atom]) -> set[VarDecl]:
    out: set[VarDecl] = set()
    for atom in atoms:
        match atom:
            case HtIn(args=args):
                for a in args:
                    for v in free_vars(a):
                        out.add((v.name, v.sort))
            case EqTerm(var=v, term=t):
                out.add((v.name, v.sort))
                for u in free_vars(t):
                    out.add((u.name, u.sort))
    return out


def _mentioned_strand_vars(atoms: Sequence[Atom]) -> set[str]:
    out: set[str] = set()
    for atom in atoms:
        match atom:
            case HtIn(strand=z):
                out.add(z)
            case Prec(n0=(z0, _), n1=(z1, _)):
                out.add(z0)
                out.add(z1)
            case Uniq(node=(z, _)):
                out.add(z)
            case EqStrand(left=a, right=b):
                out.add(a)
                out.add(b)
    return out


def satisfy(
    ctx: EvalContext,
    atoms: Sequence[Atom],
    seed: Optional[Assignment] = None,
) -> Iterator[Assignment]:
    """Enumerate the total assignments extending seed that satisfy every
    atom in the bundle.  Deterministic order; complete for formulas whose
    algebra variables are determined by matching and equalities."""
    seed = seed.copy() if seed is not None else Assignment()
    mentioned = _mentioned_algebra_vars(atoms)
    bindable = _bindable_vars(atoms) | set(seed.terms)
    unbindable = {v for v in mentioned if v not in bindable}
    if unbindable:
        names = ", ".join(sorted(n for n, _ in unbindable))
        raise UnsupportedFormulaError(
            f"variables bound by no height-instance atom or equality: {names}"
        )
    htins = [a for a in atoms if isinstance(a, HtIn)]
    eqs = [a for a in atoms if isinstance(a, (EqStrand, EqTerm))]
    seen: set[tuple] = set()
    for asg in _enumerate_htins(ctx, htins, 0, seed):
        for total in _finish(ctx, atoms, eqs, asg):
            key = total.key()
            if key not in seen:
                seen.add(key)
                yield total


def _enumerate_htins(
    ctx: EvalContext, htins: list[HtIn], i: int, asg: Assignment
) -> Iterator[Assignment]:
    if i == len(htins):
        yield asg
        return
    atom = htins[i]
    role = ctx.role(atom.role)
    if len(atom.args) != len(role.params):
        raise UnsupportedFormulaError(
            f"{atom.role} takes {len(role.params)} arguments, got {len(atom.args)}"
        )
    if atom.role == LISTENER:
        pattern = atom.args[0]
        for node in ctx.transmissions():
            bound = asg.strands.get(atom.strand)
            if bound is not None and bound != node.strand:
                continue
            sub = match(pattern, ctx.space.evt(node).message, asg.substitution())
            if sub is None:
                continue
            nxt = asg.copy()
            nxt.strands[atom.strand] = node.strand
            nxt.listener_nodes[atom.strand] = node
            nxt.terms = dict(sub.items())
            yield from _enumerate_htins(ctx, htins, i + 1, nxt)
        return
    params_to_args = Substitution(
        {(name, sort): arg for (name, sort), arg in zip(role.params, atom.args)}
    )
    pattern_trace = [
        (e.outbound, params_to_args.apply(e.message)) for e in role.trace
    ]
    for s in ctx.space.strands():
        bound = asg.strands.get(atom.strand)
        if bound is not None and bound != s:
            continue
        trace = ctx.space.traces[s]
        if not atom.height <= len(trace) <= len(role.trace):
            continue
        sub: Optional[Substitution] = asg.substitution()
        for (outbound, message), event in zip(pattern_trace, trace):
            if outbound != event.outbound:
                sub = None
                break
            sub = match(message, event.message, sub)
            if sub is None:
                break
        if sub is None:
            continue
        nxt = asg.copy()
        nxt.strands[atom.strand] = s
        nxt.terms = dict(sub.items())
        yield from _enumerate_htins(ctx, htins, i + 1, nxt)


def _mint(counters: dict[Sort, int], sort: Sort) -> Term:
    if sort is Sort.TOP:
        sort = Sort.DATA
    n = counters[sort]
    counters[sort] = n + 1
    if sort is Sort.AKEY:
        return AConst(n)
    if sort is Sort.SKEY:
        return SConst(n)
    return DConst(n)


def _finish(
    ctx: EvalContext, atoms: Sequence[Atom], eqs: list[Atom], asg: Assignment
) -> Iterator[Assignment]:
    if not _propagate_equalities(eqs, asg):
        return
    mentioned = _mentioned_algebra_vars(atoms)
    unbound_z = sorted(_mentioned_strand_vars(atoms) - set(asg.strands))
    for combo in itertools.product(ctx.space.strands(), repeat=len(unbound_z)):
        candidate = asg.copy()
        for z, s in zip(unbound_z, combo):
            candidate.strands[z] = s
        if not _propagate_equalities(eqs, candidate):
            continue
        # An equality both of whose sides stayed unbound cannot be settled
        # by matching; the branch is abandoned rather than guessed at.
        stuck = any(
            isinstance(eq, EqTerm)
            and (eq.var.name, eq.var.sort) not in candidate.terms
            and not is_ground(candidate.substitution().apply(eq.term))
            for eq in eqs
        )
        if stuck:
            continue
        counters = ctx.fresh_counters()
        for name, sort in sorted(mentioned, key=lambda d: (d[0], d[1].value)):
            if (name, sort) not in candidate.terms:
                candidate.terms[(name, sort)] = _mint(counters, sort)
        if all(holds(ctx, atom, candidate) for atom in atoms):
            yield candidate


def _propagate_equalities(eqs: list[Atom], asg: Assignment) -> bool:
    pending = list(eqs)
    progress = True
    while progress and pending:
        progress = False
        remaining = []
        for eq in pending:
            if isinstance(eq, EqStrand):
                lhs, rhs = asg.strands.get(eq.left), asg.strands.get(eq.right)
                if lhs is not None and rhs is not None:
                    if lhs != rhs:
                        return False
                    progress = True
                elif lhs is not None:
                    asg.strands[eq.right] = lhs
                    if eq.left in asg.listener_nodes:
                        asg.listener_nodes.setdefault(eq.right, asg.listener_nodes[eq.left])
                    progress = True
                elif rhs is not None:
                    asg.strands[eq.left] = rhs
                    if eq.right in asg.listener_nodes:
                        asg.listener_nodes.setdefault(eq.left, asg.listener_nodes[eq.right])
                    progress = True
                else:
                    remaining.append(eq)
                continue
            state = _try_eq_term(eq, asg)
            if state == "fail":
                return False
            if state == "done":
                progress = True
            else:
                remaining.append(eq)
        pending = remaining
    return True


def _try_eq_term(eq: EqTerm, asg: Assignment) -> str:
    sub = asg.substitution()
    key = (eq.var.name, eq.var.sort)
    lhs = asg.terms.get(key)
    rhs = sub.apply(eq.term)
    if lhs is not None:
        if is_ground(rhs):
            return "done" if lhs == rhs else "fail"
        extended = match(eq.term, lhs, sub)
        if extended is None:
            return "fail"
        asg.terms = dict(extended.items())
        return "done"
    if is_ground(rhs):
        if not sort_leq(sort_of(rhs), eq.var.sort):
            return "fail"
        asg.terms[key] = rhs
        return "done"
    return "stuck"


def _resolve_node(ctx: EvalContext, ref: NodeRef, asg: Assignment) -> Optional[Node]:
    z, index = ref
    if z in asg.listener_nodes:
        return asg.listener_nodes[z]
    s = asg.strands.get(z)
    if s is None:
        return None
    node = Node(s, index)
    return node if ctx.space.has_node(node) else None


def holds(ctx: EvalContext, atom: Atom, asg: Assignment) -> bool:
    """Evaluate one atom under a total assignment."""
    sub = asg.substitution()
    match atom:
        case HtIn(strand=z, height=h, role=name, args=args):
            s = asg.strands.get(z)
            if s is None:
                return False
            ground_args = [sub.apply(a) for a in args]
            if not all(is_ground(g) for g in ground_args):
                return False
            if name == LISTENER:
                node = asg.listener_nodes.get(z)
                if node is None or node.strand != s:
                    return False
                event = ctx.space.evt(node)
                return event.outbound and event.message == ground_args[0]
            role = ctx.role(name)
            mapping = Substitution(
                {(p, srt): g for (p, srt), g in zip(role.params, ground_args)}
            )
            return htin(ctx.space, s, h, role.instantiate(mapping))
        case Prec(n0=r0, n1=r1):
            m0, m1 = _resolve_node(ctx, r0, asg), _resolve_node(ctx, r1, asg)
            return m0 is not None and m1 is not None and ctx.order.prec(m0, m1)
        case Non(term=t):
            from .strands import non_originating

            return non_originating(ctx.space, sub.apply(t))
        case Uniq(term=t, node=ref):
            from .strands import uniquely_originates

            node = _resolve_node(ctx, ref, asg)
            return node is not None and uniquely_originates(ctx.space, sub.apply(t), node)
        case EqStrand(left=a, right=b):
            return asg.strands.get(a) is not None and asg.strands.get(a) == asg.strands.get(b)
        case EqTerm(var=v, term=t):
            return sub.apply(v) == sub.apply(t)
    raise TypeError(f"not an atom: {atom!r}")


def induced_witness(k: Skeleton, asg: Assignment) -> HomWitness:
    """The homomorphism a satisfying assignment specifies."""
    targets: list = []
    for s, instance in enumerate(k.instances):
        z = f"z{s}"
        if instance.is_listener():
            targets.append(asg.listener_nodes[z])
        else:
            targets.append(asg.strands[z])
    sigma = Substitution(
        {(n, srt): asg.terms[(n, srt)] for n, srt in k.vars if (n, srt) in asg.terms}
    )
    return HomWitness(tuple(targets), sigma)


@dataclass(frozen=True)
class Satisfiable:
    assignment: Assignment
    witness: HomWitness


def eval_sigma(k: Skeleton, b: Bundle) -> Optional[Satisfiable]:
    """Run-of-protocol plus satisfiability of the skeleton formula.

    On success the induced witness is re-verified as a homomorphism into
    the bundle; None means the characteristic predicate is false here."""
    if check_run(b, k.protocol) is None:
        return None
    ctx = EvalContext(b, k.protocol)
    formula = skeleton_formula(k)
    for asg in satisfy(ctx, formula.atoms):
        witness = induced_witness(k, asg)
        problems = verify_hom_to_bundle(k, b, witness)
        if problems:
            raise RuntimeError(
                "induced witness failed verification: " + "; ".join(problems)
            )
        return Satisfiable(asg, witness)
    return None


@dataclass(frozen=True)
class SentenceDisjunct:
    algebra_vars: tuple[VarDecl, ...]
    strand_vars: tuple[str, ...]
    delta: tuple[Atom, ...]
    atoms: tuple[Atom, ...]


@dataclass(frozen=True)
class ShapeSentence:
    name: str
    protocol: Protocol
    pov: SkeletonFormula
    disjuncts: tuple[SentenceDisjunct, ...]


def _base_name(name: str) -> str:
    stripped = name.rstrip("0123456789").rstrip("'")
    return stripped or "x"


class _Renamer:
    """Canonical sentence naming: per base letter, indices count up across
    the point of view and then each disjunct."""

    def __init__(self) -> None:
        self._counters: dict[str, int] = {}

    def fresh(self, name: str) -> str:
        base = _base_name(name)
        n = self._counters.get(base, 0)
        self._counters[base] = n + 1
        return f"{base}{n}"


def _rename_formula(
    formula: SkeletonFormula, renamer: _Renamer
) -> tuple[SkeletonFormula, Substitution, dict[str, str]]:
    var_map: dict[VarDecl, Term] = {}
    new_algebra: list[VarDecl] = []
    for name, sort in formula.algebra_vars:
        fresh = renamer.fresh(name)
        var_map[(name, sort)] = Var(fresh, sort)
        new_algebra.append((fresh, sort))
    zmap = {z: renamer.fresh("z") for z in formula.strand_vars}
    rho = Substitution(var_map)
    atoms = tuple(_rename_atom(a, rho, zmap) for a in formula.atoms)
    return SkeletonFormula(tuple(new_algebra), tuple(zmap.values()), atoms), rho, zmap


def _rename_atom(atom: Atom, rho: Substitution, zmap: dict[str, str]) -> Atom:
    match atom:
        case HtIn(strand=z, height=h, role=r, args=args):
            return HtIn(zmap.get(z, z), h, r, tuple(rho.apply(a) for a in args))
        case Prec(n0=(z0, i0), n1=(z1, i1)):
            return Prec((zmap.get(z0, z0), i0), (zmap.get(z1, z1), i1))
        case Non(term=t):
            return Non(rho.apply(t))
        case Uniq(term=t, node=(z, i)):
            return Uniq(rho.apply(t), (zmap.get(z, z), i))
        case EqStrand(left=a, right=b):
            return EqStrand(zmap.get(a, a), zmap.get(b, b))
        case EqTerm(var=v, term=t):
            image = rho.apply(v)
            if not isinstance(image, Var):
                raise ValueError("renaming must map variables to variables")
            return EqTerm(image, rho.apply(t))
    raise TypeError(f"not an atom: {atom!r}")


def build_shape_sentence(
    name: str,
    pov: Skeleton,
    shapes: Sequence[tuple[Skeleton, HomWitness]],
) -> ShapeSentence:
    """Encode an analysis (pov skeleton, shapes, homomorphisms) as a
    biconditional sentence.  Every witness is verified first; shape
    variables are renamed apart from the point of view's."""
    for i, (shape, delta) in enumerate(shapes):
        problems = verify_hom(pov, shape, delta)
        if problems:
            raise ValueError(f"shape {i}: homomorphism fails: " + "; ".join(problems))
    renamer = _Renamer()
    pov_formula, pov_rho, pov_zmap = _rename_formula(skeleton_formula(pov), renamer)
    disjuncts: list[SentenceDisjunct] = []
    for shape, delta_w in shapes:
        shape_formula, shape_rho, shape_zmap = _rename_formula(skeleton_formula(shape), renamer)
        delta: list[Atom] = []
        for s in range(len(pov.instances)):
            source = pov_zmap[f"z{s}"]
            target = shape_zmap[f"z{delta_w.strand_of(s)}"]
            delta.append(EqStrand(source, target))
        for vname, vsort in pov.vars:
            image = delta_w.term_map.get((vname, vsort))
            if image is None:
                image = Var(vname, vsort)
            lhs = pov_rho.apply(Var(vname, vsort))
            assert isinstance(lhs, Var)
            delta.append(EqTerm(lhs, shape_rho.apply(image)))
        disjuncts.append(
            SentenceDisjunct(
                shape_formula.algebra_vars,
                shape_formula.strand_vars,
                tuple(delta),
                shape_formula.atoms,
            )
        )
    return ShapeSentence(name, pov.protocol, pov_formula, tuple(disjuncts))


@dataclass(frozen=True)
class CounterModel:
    assignment: Assignment
    side: str


def _first(it: Iterator[Assignment]) -> Optional[Assignment]:
    for x in it:
        return x
    return None


def eval_sentence(s: ShapeSentence, b: Bundle) -> Optional[CounterModel]:
    """Check both directions of the biconditional on one bundle.

    None means the sentence holds; a counter-model names the assignment
    and the failing direction."""
    from .bundles import require_run

    require_run(b, s.protocol)
    ctx = EvalContext(b, s.protocol)
    for alpha in satisfy(ctx, s.pov.atoms):
        covered = False
        for disjunct in s.disjuncts:
            if _first(satisfy(ctx, tuple(disjunct.delta + disjunct.atoms), alpha)) is not None:
                covered = True
                break
        if not covered:
            return CounterModel(alpha, "forward")
    for disjunct in s.disjuncts:
        for beta in satisfy(ctx, tuple(disjunct.delta + disjunct.atoms)):
            if not all(holds(ctx, atom, beta) for atom in s.pov.atoms):
                return CounterModel(beta, "backward")
    return None


@dataclass(frozen=True)
class GoalDisjunct:
    algebra_vars: tuple[VarDecl, ...]
    strand_vars: tuple[str, ...]
    atoms: tuple[Atom, ...]


@dataclass(frozen=True)
class Goal:
    name: str
    protocol: Protocol
    algebra_vars: tuple[VarDecl, ...]
    strand_vars: tuple[str, ...]
    hypothesis: tuple[Atom, ...]
    disjuncts: tuple[GoalDisjunct, ...]


def eval_goal(g: Goal, b: Bundle) -> list[Assignment]:
    """Hypothesis assignments no conclusion disjunct extends; empty means
    no counterexample in this bundle (which certifies only this bundle)."""
    from .bundles import require_run

    require_run(b, g.protocol)
    ctx = EvalContext(b, g.protocol)
    violations: list[Assignment] = []
    for alpha in satisfy(ctx, g.hypothesis):
        covered = False
        for disjunct in g.disjuncts:
            if _first(satisfy(ctx, disjunct.atoms, alpha)) is not None:
                covered = True
                break
        if not covered:
            violations.append(alpha)
    return violations


@dataclass(frozen=True)
class DisjunctCover:
    goal_disjunct: int
    existentials: tuple[tuple[str, str | Term], ...]


@dataclass(frozen=True)
class EntailmentProof:
    hypothesis_map: tuple[tuple[str, str], ...]
    covers: tuple[DisjunctCover, ...]


def entail(s: ShapeSentence, g: Goal) -> Optional[EntailmentProof]:
    """Sound, incomplete syntactic entailment of a goal from a sentence.

    Finds a renaming embedding the sentence's point of view into the goal
    hypothesis, then checks that every sentence disjunct, closed under the
    delta equalities, precedes-transitivity, and intra-strand succession,
    subsumes some goal disjunct.  None means "not derivable this way",
    never "false"."""
    if s.protocol.name != g.protocol.name:
        raise ValueError("sentence and goal describe different protocols")
    for rho in _hypothesis_embeddings(s.pov, g):
        covers: list[DisjunctCover] = []
        for disjunct in s.disjuncts:
            cover = _cover_some_goal_disjunct(s, disjunct, rho, g)
            if cover is None:
                break
            covers.append(cover)
        else:
            pairs = tuple(sorted(rho.items()))
            return EntailmentProof(pairs, tuple(covers))
    return None


def _atom_vars(atom: Atom) -> set[str]:
    out: set[str] = set()

    def term_vars(t: Term) -> None:
        for v in free_vars(t):
            out.add(v.name)

    match atom:
        case HtIn(strand=z, args=args):
            out.add(z)
            for a in args:
                term_vars(a)
        case Prec(n0=(z0, _), n1=(z1, _)):
            out.update((z0, z1))
        case Non(term=t):
            term_vars(t)
        case Uniq(term=t, node=(z, _)):
            out.add(z)
            term_vars(t)
        case EqStrand(left=a, right=b):
            out.update((a, b))
        case EqTerm(var=v, term=t):
            out.add(v.name)
            term_vars(t)
    return out


def _rename_vars_in_atom(atom: Atom, rho: dict[str, str]) -> Atom:
    def rename_term(t: Term) -> Term:
        match t:
            case Var(name=n, sort=srt, inverted=inv):
                return Var(rho.get(n, n), srt, inv)
            case _:
                from .terms import Enc, Pair

                if isinstance(t, Pair):
                    return Pair(rename_term(t.left), rename_term(t.right))
                if isinstance(t, Enc):
                    return Enc(rename_term(t.body), rename_term(t.key))
                return t

    match atom:
        case HtIn(strand=z, height=h, role=r, args=args):
            return HtIn(rho.get(z, z), h, r, tuple(rename_term(a) for a in args))
        case Prec(n0=(z0, i0), n1=(z1, i1)):
            return Prec((rho.get(z0, z0), i0), (rho.get(z1, z1), i1))
        case Non(term=t):
            return Non(rename_term(t))
        case Uniq(term=t, node=(z, i)):
            return Uniq(rename_term(t), (rho.get(z, z), i))
        case EqStrand(left=a, right=b):
            return EqStrand(rho.get(a, a), rho.get(b, b))
        case EqTerm(var=v, term=t):
            renamed = rename_term(v)
            assert isinstance(renamed, Var)
            return EqTerm(renamed, rename_term(t))
    raise TypeError(f"not an atom: {atom!r}")


def _embed_atom(pattern: Atom, target: Atom, rho: dict[str, str]) -> Optional[dict[str, str]]:
    """Extend a variable-to-variable renaming so pattern becomes target."""

    def embed_term(p: Term, t: Term, acc: dict[str, str]) -> Optional[dict[str, str]]:
        from .terms import Enc, Pair

        match p:
            case Var(name=n, sort=srt, inverted=inv):
                if not (isinstance(t, Var) and t.sort is srt and t.inverted == inv):
                    return None
                if n in acc:
                    return acc if acc[n] == t.name else None
                new = dict(acc)
                new[n] = t.name
                return new
            case Pair(left=pl, right=pr):
                if not isinstance(t, Pair):
                    return None
                step = embed_term(pl, t.left, acc)
                return None if step is None else embed_term(pr, t.right, step)
            case Enc(body=pb, key=pk):
                if not isinstance(t, Enc):
                    return None
                step = embed_term(pb, t.body, acc)
                return None if step is None else embed_term(pk, t.key, step)
        return acc if p == t else None

    def embed_z(a: str, b: str, acc: dict[str, str]) -> Optional[dict[str, str]]:
        if a in acc:
            return acc if acc[a] == b else None
        new = dict(acc)
        new[a] = b
        return new

    match (pattern, target):
        case (HtIn() as p, HtIn() as t):
            # A height-h fact implies the same atom at any height <= h.
            if p.height > t.height or p.role != t.role or len(p.args) != len(t.args):
                return None
            acc = embed_z(p.strand, t.strand, rho)
            for pa, ta in zip(p.args, t.args):
                if acc is None:
                    return None
                acc = embed_term(pa, ta, acc)
            return acc
        case (Prec() as p, Prec() as t):
            if p.n0[1] != t.n0[1] or p.n1[1] != t.n1[1]:
                return None
            acc = embed_z(p.n0[0], t.n0[0], rho)
            return None if acc is None else embed_z(p.n1[0], t.n1[0], acc)
        case (Non() as p, Non() as t):
            return embed_term(p.term, t.term, rho)
        case (Uniq() as p, Uniq() as t):
            if p.node[1] != t.node[1]:
                return None
            acc = embed_term(p.term, t.term, rho)
            return None if acc is None else embed_z(p.node[0], t.node[0], acc)
    return None


def _hypothesis_embeddings(pov: SkeletonFormula, g: Goal) -> Iterator[dict[str, str]]:
    hypothesis = list(g.hypothesis)

    def extend(i: int, rho: dict[str, str]) -> Iterator[dict[str, str]]:
        if i == len(pov.atoms):
            yield rho
            return
        for target in hypothesis:
            extended = _embed_atom(pov.atoms[i], target, rho)
            if extended is not None:
                yield from extend(i + 1, extended)

    yield from extend(0, {})


class _UnionFind:
    def __init__(self) -> None:
        self._parent: dict[str, str] = {}
        self._preferred: set[str] = set()

    def prefer(self, name: str) -> None:
        self._preferred.add(name)

    def find(self, x: str) -> str:
        self._parent.setdefault(x, x)
        while self._parent[x] != x:
            self._parent[x] = self._parent[self._parent[x]]
            x = self._parent[x]
        return x

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        keep, drop = sorted(
            (ra, rb), key=lambda r: (r not in self._preferred, r)
        )
        self._parent[drop] = keep


def _normalize_atoms(atoms: list[Atom], uf: _UnionFind) -> list[Atom]:
    rho = {name: uf.find(name) for atom in atoms for name in _atom_vars(atom)}
    out = []
    for atom in atoms:
        renamed = _rename_vars_in_atom(atom, rho)
        if isinstance(renamed, EqStrand) and renamed.left == renamed.right:
            continue
        if isinstance(renamed, EqTerm) and renamed.term == renamed.var:
            continue
        out.append(renamed)
    return out


def _closed_fact_set(
    s: ShapeSentence, disjunct: SentenceDisjunct, rho: dict[str, str], g: Goal
) -> tuple[set[Atom], set[str]]:
    goal_names = {n for n, _ in g.algebra_vars} | set(g.strand_vars)
    collision = {
        name
        for name in itertools.chain(
            (n for n, _ in disjunct.algebra_vars), disjunct.strand_vars
        )
        if name in goal_names
    }
    freshen = {name: f"{name}~" for name in collision}
    atoms: list[Atom] = [_rename_vars_in_atom(a, rho) for a in s.pov.atoms]
    atoms += list(g.hypothesis)
    for a in disjunct.delta + disjunct.atoms:
        atoms.append(_rename_vars_in_atom(_rename_vars_in_atom(a, freshen), rho))
    uf = _UnionFind()
    for name in goal_names:
        uf.prefer(name)
    for atom in atoms:
        if isinstance(atom, EqStrand):
            uf.union(atom.left, atom.right)
        elif isinstance(atom, EqTerm) and isinstance(atom.term, Var) and not atom.term.inverted:
            if not atom.var.inverted:
                uf.union(atom.var.name, atom.term.name)
    normalized = _normalize_atoms(atoms, uf)
    facts: set[Atom] = set(normalized)
    heights: dict[str, int] = {}
    for atom in normalized:
        if isinstance(atom, HtIn):
            heights[atom.strand] = max(heights.get(atom.strand, 0), atom.height)
    precs: set[tuple[NodeRef, NodeRef]] = {
        (a.n0, a.n1) for a in normalized if isinstance(a, Prec)
    }
    for z, h in heights.items():
        for i in range(h):
            for j in range(i + 1, h):
                precs.add(((z, i), (z, j)))
    changed = True
    while changed:
        changed = False
        for (a, b), (c, d) in itertools.product(list(precs), repeat=2):
            if b == c and (a, d) not in precs:
                precs.add((a, d))
                changed = True
    for n0, n1 in precs:
        facts.add(Prec(n0, n1))
    return facts, goal_names


def _cover_some_goal_disjunct(
    s: ShapeSentence, disjunct: SentenceDisjunct, rho: dict[str, str], g: Goal
) -> Optional[DisjunctCover]:
    facts, _ = _closed_fact_set(s, disjunct, rho, g)
    for index, goal_disjunct in enumerate(g.disjuncts):
        existentials = {n for n, _ in goal_disjunct.algebra_vars} | set(
            goal_disjunct.strand_vars
        )
        theta = _subsume(list(goal_disjunct.atoms), facts, existentials, {})
        if theta is not None:
            return DisjunctCover(index, tuple(sorted(theta.items())))
    return None


def _subsume(
    goal_atoms: list[Atom],
    facts: set[Atom],
    existentials: set[str],
    theta: dict[str, str],
) -> Optional[dict[str, str]]:
    """Find a renaming of the existentials making every goal atom a fact."""
    if not goal_atoms:
        return theta
    head, rest = goal_atoms[0], goal_atoms[1:]
    for fact in sorted(facts, key=repr):
        extended = _embed_restricted(head, fact, theta, existentials)
        if extended is not None:
            result = _subsume(rest, facts, existentials, extended)
            if result is not None:
                return result
    return None


def _embed_restricted(
    pattern: Atom, target: Atom, theta: dict[str, str], existentials: set[str]
) -> Optional[dict[str, str]]:
    """Like _embed_atom but only existential variables may be renamed;
    all other variables must match the fact verbatim."""
    fixed = {name: name for name in _atom_vars(pattern) if name not in existentials}
    seed = dict(fixed)
    seed.update(theta)
    extended = _embed_atom(pattern, target, seed)
    if extended is None:
        return None
    for name, image in fixed.items():
        if extended.get(name) != image:
            return None
    return {k: v for k, v in extended.items() if k in existentials}
