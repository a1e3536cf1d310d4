"""Command-line surface.

Exit codes: 0 when the checked property holds, 1 when it fails (a
counterexample, a non-run, an incompatibility, an unknown entailment),
2 on usage or parse errors.  Object arguments are file paths; files that
reference other objects by name (a bundle's protocol, a goal's roles)
need those files loaded first via --load.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from .bundles import (
    AdversaryAssignment,
    NotARunError,
    RegularAssignment,
    check_run,
    validate_bundle,
)
from .dot import export_dot
from .formats import (
    Workspace,
    atom_to_sexpr,
    dump,
    formula_to_sexpr,
    sentence_to_sexpr,
)
from .formulas import (
    CounterModel,
    build_shape_sentence,
    entail,
    eval_goal,
    eval_sentence,
    skeleton_formula,
)
from .sexpr import ParseError, SAtom, SList
from .skeletons import verify_hom, verify_hom_to_bundle
from .statemodel import (
    CompatibilityWitness,
    GeqState,
    Incompatible,
    NewCardNode,
    NotApplicable,
    check_compatibility,
    check_or_issue,
    find_bridge_witness,
)
from .strands import Node
from .terms import Var

OK, FAIL, USAGE = 0, 1, 2


class _Command:
    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.ws = Workspace()
        for path in args.load or []:
            self.ws.load_path(path)

    def emit(self, text: str, sexpr: SList | SAtom | None = None) -> None:
        if self.args.sexpr and sexpr is not None:
            print(dump(sexpr), end="")
        else:
            print(text)

    def bundle_with_protocol(self, path: str):
        bundle = self.ws.load_file(path, "bundle")
        name = next(n for n, b in self.ws.bundles.items() if b is bundle)
        protocol = self.ws.bundle_protocol(name)
        return name, bundle, protocol


def _report(kind: str, verdict: str, detail: list[str]) -> SList:
    items = [SAtom(kind), SAtom(verdict)]
    items.extend(SAtom(line, quoted=True) for line in detail)
    return SList(tuple(items))


def _cmd_check_bundle(cmd: _Command) -> int:
    name, bundle, _ = cmd.bundle_with_protocol(cmd.args.file)
    problems = validate_bundle(bundle)
    if not problems:
        cmd.emit(f"bundle {name}: ok", _report("check-bundle", "ok", []))
        return OK
    lines = [f"{v.kind}: {v.detail}" for v in problems]
    cmd.emit(
        f"bundle {name}: {len(problems)} violation(s)\n" + "\n".join("  " + l for l in lines),
        _report("check-bundle", "violations", lines),
    )
    return FAIL


def _cmd_check_run(cmd: _Command) -> int:
    protocol = cmd.ws.load_file(cmd.args.protocol, "protocol")
    name, bundle, _ = cmd.bundle_with_protocol(cmd.args.file)
    assignment = check_run(bundle, protocol)
    if assignment is None:
        cmd.emit(f"bundle {name}: not a run of {protocol.name}",
                 _report("check-run", "not-a-run", []))
        return FAIL
    lines = [f"strand {s}: {assignment.describe(s)}" for s in range(len(assignment.entries))]
    cmd.emit(
        f"bundle {name}: run of {protocol.name}\n" + "\n".join("  " + l for l in lines),
        _report("check-run", "run", lines),
    )
    return OK


def _cmd_check_hom(cmd: _Command) -> int:
    source = cmd.ws.load_file(cmd.args.source, "skeleton")
    spec = cmd.ws.load_file(cmd.args.witness, "hom")
    target_kinds = {k for k, _ in (("skeleton", 0), ("bundle", 0))}
    loaded = cmd.ws.load_path(cmd.args.target)
    target_kind, target_name = next(
        ((k, n) for k, n in reversed(loaded) if k in target_kinds), (None, None)
    )
    if target_kind is None:
        raise ParseError(f"{cmd.args.target} defines no skeleton or bundle")
    if target_kind == "skeleton":
        target = cmd.ws.skeletons[target_name]
        scope = {n: Var(n, s) for n, s in target.vars}
        witness = spec.resolve(source, scope)
        problems = verify_hom(source, target, witness)
    else:
        bundle = cmd.ws.bundles[target_name]
        protocol = cmd.ws.bundle_protocol(target_name)
        if protocol.name != source.protocol.name:
            raise ParseError("the skeleton and bundle protocols differ")
        witness = spec.resolve(source, None)
        problems = verify_hom_to_bundle(source, bundle, witness)
    if not problems:
        cmd.emit("homomorphism: ok", _report("check-hom", "ok", []))
        return OK
    cmd.emit(
        "homomorphism fails:\n" + "\n".join("  " + p for p in problems),
        _report("check-hom", "violations", problems),
    )
    return FAIL


def _cmd_formula(cmd: _Command) -> int:
    skeleton = cmd.ws.load_file(cmd.args.skeleton, "skeleton")
    formula = skeleton_formula(skeleton)
    print(dump(formula_to_sexpr(formula)), end="")
    return OK


def _cmd_sentence_build(cmd: _Command) -> int:
    analysis = cmd.ws.load_file(cmd.args.analysis, "analysis")
    sentence = build_shape_sentence(analysis.name, analysis.pov, analysis.shapes)
    text = dump(sentence_to_sexpr(sentence))
    if cmd.args.out:
        with open(cmd.args.out, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        print(text, end="")
    return OK


def _cmd_sentence_eval(cmd: _Command) -> int:
    sentence = cmd.ws.load_file(cmd.args.sentence, "sentence")
    name, bundle, protocol = cmd.bundle_with_protocol(cmd.args.bundle)
    if protocol.name != sentence.protocol.name:
        raise ParseError("the sentence and bundle protocols differ")
    result = eval_sentence(sentence, bundle)
    if result is None:
        cmd.emit(f"sentence {sentence.name} holds on {name}",
                 _report("sentence-eval", "holds", []))
        return OK
    detail = [f"direction: {result.side}", result.assignment.describe()]
    cmd.emit(
        f"sentence {sentence.name} fails on {name} ({result.side} direction)\n  "
        + result.assignment.describe(),
        _report("sentence-eval", "counter-model", detail),
    )
    return FAIL


def _cmd_goal_eval(cmd: _Command) -> int:
    goal = cmd.ws.load_file(cmd.args.goal, "goal")
    name, bundle, protocol = cmd.bundle_with_protocol(cmd.args.bundle)
    if protocol.name != goal.protocol.name:
        raise ParseError("the goal and bundle protocols differ")
    violations = eval_goal(goal, bundle)
    if not violations:
        cmd.emit(
            f"goal {goal.name}: no counterexample in {name} "
            "(certifies this bundle only, not validity)",
            _report("goal-eval", "no-counterexample", []),
        )
        return OK
    lines = [v.describe() for v in violations]
    cmd.emit(
        f"goal {goal.name}: {len(violations)} violating assignment(s) in {name}\n"
        + "\n".join("  " + l for l in lines),
        _report("goal-eval", "violations", lines),
    )
    return FAIL


def _cmd_entail(cmd: _Command) -> int:
    sentence = cmd.ws.load_file(cmd.args.sentence, "sentence")
    goal = cmd.ws.load_file(cmd.args.goal, "goal")
    proof = entail(sentence, goal)
    if proof is None:
        cmd.emit(
            f"goal {goal.name}: not derivable from {sentence.name} (unknown, not false)",
            _report("entail", "unknown", []),
        )
        return FAIL
    lines = ["hypothesis map: " + ", ".join(f"{a}={b}" for a, b in proof.hypothesis_map)]
    for i, cover in enumerate(proof.covers):
        bindings = ", ".join(
            f"{name}={value}" for name, value in cover.existentials
        )
        lines.append(
            f"sentence disjunct {i} covers goal disjunct {cover.goal_disjunct}"
            + (f" via {bindings}" if bindings else "")
        )
    cmd.emit(
        f"goal {goal.name} is entailed by {sentence.name}\n"
        + "\n".join("  " + l for l in lines),
        _report("entail", "entailed", lines),
    )
    return OK


def _cmd_state_compat(cmd: _Command) -> int:
    name, bundle, protocol = cmd.bundle_with_protocol(cmd.args.bundle)
    if protocol.state is None:
        raise ParseError(f"protocol {protocol.name} declares no state model")
    assignment = check_run(bundle, protocol, cmd.ws.bundle_hints.get(name))
    if assignment is None:
        raise NotARunError(f"bundle {name} is not a run of {protocol.name}")
    result = check_compatibility(bundle, protocol, assignment, protocol.state)
    if isinstance(result, Incompatible):
        cmd.emit(
            f"bundle {name}: incompatible ({result.reason})\n  {result.detail}",
            _report("state-compat", "incompatible", [result.reason, result.detail]),
        )
        return FAIL
    order = " ".join(str(tuple(n)) for n in result.order)
    path = " ".join(str(s) for s in result.path)
    lines = [f"annotated nodes: {result.ell}", f"order: {order}", f"path prefix: {path}"]
    cmd.emit(
        f"bundle {name}: compatible\n" + "\n".join("  " + l for l in lines),
        _report("state-compat", "compatible", lines),
    )
    return OK


def _cmd_state_check_or_issue(cmd: _Command) -> int:
    from .statemodel import acp_state_model

    model = acp_state_model(cmd.args.boxes)
    result = check_or_issue(model, cmd.args.len)
    if result is None:
        cmd.emit(
            f"check-or-issue holds for {cmd.args.boxes} box(es) up to length {cmd.args.len}",
            _report("check-or-issue", "holds", []),
        )
        return OK
    detail = f"path {list(result.path)} at i={result.i}, k={result.k}"
    cmd.emit("check-or-issue fails: " + detail, _report("check-or-issue", "counterexample", [detail]))
    return FAIL


def _parse_node_argument(text: str) -> Node:
    parts = text.split(",")
    if len(parts) != 2:
        raise ParseError(f"nodes are written STRAND,INDEX: {text}")
    try:
        return Node(int(parts[0]), int(parts[1]))
    except ValueError:
        raise ParseError(f"nodes are written STRAND,INDEX: {text}")


def _cmd_state_bridge(cmd: _Command) -> int:
    name, bundle, protocol = cmd.bundle_with_protocol(cmd.args.bundle)
    if protocol.state is None:
        raise ParseError(f"protocol {protocol.name} declares no state model")
    assignment = check_run(bundle, protocol, cmd.ws.bundle_hints.get(name))
    if assignment is None:
        raise NotARunError(f"bundle {name} is not a run of {protocol.name}")
    n0 = _parse_node_argument(cmd.args.source)
    n1 = _parse_node_argument(cmd.args.target)
    result = find_bridge_witness(bundle, protocol, assignment, protocol.state, n0, n1)
    if isinstance(result, GeqState):
        cmd.emit(
            f"state does not increase: {result.s0} >= {result.s1}",
            _report("state-bridge", "geq-state", [f"{result.s0} >= {result.s1}"]),
        )
        return OK
    if isinstance(result, NewCardNode):
        cmd.emit(
            f"new card issued between: node {tuple(result.node)}",
            _report("state-bridge", "new-card-node", [str(tuple(result.node))]),
        )
        return OK
    cmd.emit(
        f"bridge not applicable: {result.reason}",
        _report("state-bridge", "not-applicable", [result.reason]),
    )
    return FAIL


def _cmd_export_dot(cmd: _Command) -> int:
    name, bundle, _ = cmd.bundle_with_protocol(cmd.args.file)
    hint = cmd.ws.bundle_hints.get(name)
    labels = None
    if hint is not None:
        labels = [
            e.role if isinstance(e, RegularAssignment) else e.kind for e in hint.entries
        ]
    text = export_dot(bundle, labels)
    if cmd.args.out:
        with open(cmd.args.out, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        print(text, end="")
    return OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="strandbench",
        description="Verify protocol runs, skeleton homomorphisms, shape "
        "analysis sentences, security goals, and state compatibility.",
    )
    parser.add_argument(
        "--load",
        action="append",
        metavar="FILE",
        help="preload definitions (protocols etc.) before the command runs",
    )
    parser.add_argument(
        "--sexpr", action="store_true", help="machine-readable S-expression reports"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check-bundle", help="validate a bundle's invariants")
    p.add_argument("file")
    p.set_defaults(run=_cmd_check_bundle)

    p = sub.add_parser("check-run", help="check a bundle is a run of a protocol")
    p.add_argument("--protocol", required=True)
    p.add_argument("file")
    p.set_defaults(run=_cmd_check_run)

    p = sub.add_parser("check-hom", help="verify a homomorphism witness")
    p.add_argument("--from", dest="source", required=True, metavar="SKELETON")
    p.add_argument("--to", dest="target", required=True, metavar="SKELETON-OR-BUNDLE")
    p.add_argument("--witness", required=True)
    p.set_defaults(run=_cmd_check_hom)

    p = sub.add_parser("formula", help="print a skeleton's characteristic formula")
    p.add_argument("--skeleton", required=True)
    p.set_defaults(run=_cmd_formula)

    p = sub.add_parser("sentence", help="build or evaluate shape analysis sentences")
    sentence_sub = p.add_subparsers(dest="sentence_command", required=True)
    b = sentence_sub.add_parser("build", help="encode an analysis as a sentence")
    b.add_argument("--analysis", required=True)
    b.add_argument("--out")
    b.set_defaults(run=_cmd_sentence_build)
    e = sentence_sub.add_parser("eval", help="evaluate a sentence on a bundle")
    e.add_argument("--sentence", required=True)
    e.add_argument("--bundle", required=True)
    e.set_defaults(run=_cmd_sentence_eval)

    p = sub.add_parser("goal", help="evaluate security goals")
    goal_sub = p.add_subparsers(dest="goal_command", required=True)
    g = goal_sub.add_parser("eval", help="check a goal against a bundle")
    g.add_argument("--goal", required=True)
    g.add_argument("--bundle", required=True)
    g.set_defaults(run=_cmd_goal_eval)

    p = sub.add_parser("entail", help="derive a goal from a sentence syntactically")
    p.add_argument("--sentence", required=True)
    p.add_argument("--goal", required=True)
    p.set_defaults(run=_cmd_entail)

    p = sub.add_parser("state", help="state-compatibility checks")
    state_sub = p.add_subparsers(dest="state_command", required=True)
    c = state_sub.add_parser("compat", help="check bundle/state compatibility")
    c.add_argument("--bundle", required=True)
    c.set_defaults(run=_cmd_state_compat)
    i = state_sub.add_parser("check-or-issue", help="exhaustive path property check")
    i.add_argument("--boxes", type=int, required=True)
    i.add_argument("--len", type=int, required=True)
    i.set_defaults(run=_cmd_state_check_or_issue)
    r = state_sub.add_parser("bridge", help="find the bridge witness between nodes")
    r.add_argument("--bundle", required=True)
    r.add_argument("--from", dest="source", required=True, metavar="S,I")
    r.add_argument("--to", dest="target", required=True, metavar="S,I")
    r.set_defaults(run=_cmd_state_bridge)

    p = sub.add_parser("export-dot", help="render a bundle as Graphviz text")
    p.add_argument("file")
    p.add_argument("--out")
    p.set_defaults(run=_cmd_export_dot)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE if exc.code not in (0, None) else 0
    try:
        command = _Command(args)
        return args.run(command)
    except (ParseError, NotARunError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
