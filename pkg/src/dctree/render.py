"""Graphviz DOT export for estimated trees.

Every node shows its effect estimate, bootstrap SE, estimation-row count and
(for internal nodes) the split variable; edges carry the split values. Nodes
whose |estimate| exceeds 1.96 standard errors are drawn with a thicker border
and an asterisk after the estimate. Fills run linearly from red to green
across the tree's range of available estimates; nodes without an estimate
stay gray.
"""

from __future__ import annotations

import math

from .estimate import EstimatedTree

RED = (215, 58, 46)
GREEN = (46, 160, 79)
GRAY = "#cccccc"
SIGNIFICANT_PENWIDTH = 3


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def _fill(tau: float, lo: float, hi: float) -> str:
    t = 0.5 if hi <= lo else (tau - lo) / (hi - lo)
    rgb = (round(r + (g - r) * t) for r, g in zip(RED, GREEN))
    return "#" + "".join(f"{c:02x}" for c in rgb)


def _node_label(et: EstimatedTree, i: int) -> str:
    e = et.estimates[i]
    lines = []
    if et.tree.feature[i] >= 0:
        lines.append(_escape(et.feature_names[int(et.tree.feature[i])]))
    if e.available:
        star = "*" if e.significant_95 else ""
        lines.append(f"effect = {e.tau_hat:.3f}{star}")
        lines.append(f"se = {e.se:.3f}" if e.se_available else "se = n/a")
    else:
        lines.append("effect = n/a")
    lines.append(f"n = {e.n_node}")
    return "\\n".join(lines)


def to_dot(et: EstimatedTree) -> str:
    """Deterministic DOT text for the whole estimated tree."""
    taus = [e.tau_hat for e in et.estimates if e.available and math.isfinite(e.tau_hat)]
    lo, hi = (min(taus), max(taus)) if taus else (0.0, 0.0)

    lines = [
        "digraph dct {",
        '  node [shape=box, style="filled,rounded", fontname="Helvetica"];',
        '  edge [fontname="Helvetica"];',
    ]
    t = et.tree
    for i in range(t.n_nodes):
        e = et.estimates[i]
        fill = _fill(e.tau_hat, lo, hi) if e.available else GRAY
        pen = f", penwidth={SIGNIFICANT_PENWIDTH}" if e.significant_95 else ""
        lines.append(f'  n{i} [label="{_node_label(et, i)}", fillcolor="{fill}"{pen}];')
    for i in range(t.n_nodes):
        if t.feature[i] >= 0:
            threshold = float(t.threshold[i])
            lines.append(f'  n{i} -> n{int(t.left[i])} [label="<= {threshold:.4g}"];')
            lines.append(f'  n{i} -> n{int(t.right[i])} [label="> {threshold:.4g}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_dot(et: EstimatedTree, path: str):
    with open(path, "w") as fh:
        fh.write(to_dot(et))
