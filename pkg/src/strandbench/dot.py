"""Deterministic Graphviz rendering of bundles: one cluster per strand,
solid arrows for communication, double-line arrows for succession."""

from __future__ import annotations

from typing import Optional, Sequence

from .bundles import Bundle, validate_bundle
from .strands import Node
from .terms import pretty


def _label(text: str, limit: int = 40) -> str:
    if len(text) > limit:
        text = text[: limit - 3] + "..."
    return text.replace("\\", "\\\\").replace('"', '\\"')


def export_dot(b: Bundle, strand_labels: Optional[Sequence[str]] = None) -> str:
    """Byte-stable digraph text for a valid bundle."""
    problems = validate_bundle(b)
    if problems:
        raise ValueError(f"bundle is invalid: {problems[0].detail}")
    lines = ["digraph bundle {", "  rankdir=TB;", "  node [shape=box];"]
    for s, trace in enumerate(b.space.traces):
        title = f"strand {s}"
        if strand_labels is not None and s < len(strand_labels):
            title += f" ({strand_labels[s]})"
        lines.append(f"  subgraph cluster_{s} {{")
        lines.append(f'    label="{_label(title)}";')
        for i, event in enumerate(trace):
            sign = "+" if event.outbound else "-"
            lines.append(f'    n{s}_{i} [label="{_label(sign + pretty(event.message))}"];')
        lines.append("  }")
    for s, trace in enumerate(b.space.traces):
        for i in range(1, len(trace)):
            lines.append(f'  n{s}_{i - 1} -> n{s}_{i} [color="black:black"];')
    for (s0, i0), (s1, i1) in sorted(b.comm_edges):
        lines.append(f"  n{s0}_{i0} -> n{s1}_{i1};")
    lines.append("}")
    return "\n".join(lines) + "\n"
