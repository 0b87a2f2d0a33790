"""Standalone SVG rendering of ROC curves."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from .dataset import write_atomic
from .metrics import RocCurve

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")

SIZE = 360
PAD = 48


def _xy(fpr: float, tpr: float) -> tuple[float, float]:
    return PAD + fpr * SIZE, PAD + (1.0 - tpr) * SIZE


def roc_svg(curves: Sequence[tuple[str, RocCurve]]) -> str:
    if not curves:
        raise ValueError("need at least one ROC curve to plot")
    w = h = SIZE + 2 * PAD
    legend_h = 18 * len(curves)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w + 200}" height="{max(h, legend_h + 2 * PAD)}" '
        f'font-family="sans-serif" font-size="12">',
        f'<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>',
    ]
    for i in range(11):
        v = i / 10
        x, _ = _xy(v, 0)
        _, y = _xy(0, v)
        parts.append(f'<text x="{x:.1f}" y="{PAD + SIZE + 16}" text-anchor="middle">{v:.1f}</text>')
        parts.append(f'<text x="{PAD - 6}" y="{y + 4:.1f}" text-anchor="end">{v:.1f}</text>')
    parts.append(f'<text x="{PAD + SIZE / 2}" y="{PAD + SIZE + 36}" text-anchor="middle">false positive rate</text>')
    parts.append(f'<text x="14" y="{PAD + SIZE / 2}" text-anchor="middle" '
                 f'transform="rotate(-90 14 {PAD + SIZE / 2})">true positive rate</text>')
    x0, y0 = _xy(0, 0)
    x1, y1 = _xy(1, 1)
    parts.append(f'<line class="chance" x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}" '
                 f'stroke="gray" stroke-dasharray="4 4"/>')
    for i, (name, curve) in enumerate(curves):
        color = COLORS[i % len(COLORS)]
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in (_xy(f, t) for f, t in curve.points))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        ly = PAD + 10 + 18 * i
        lx = PAD + SIZE + 16
        parts.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 26}" y="{ly + 4}">{escape(name)} (AUC {curve.area():.3f})</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_roc_svg(curves: Sequence[tuple[str, RocCurve]], out_path: str | Path) -> Path:
    out_path = Path(out_path)
    svg = roc_svg(curves)
    try:
        write_atomic(out_path, svg.encode("utf-8"))
    except OSError as exc:
        raise OSError(f"cannot write ROC plot to {out_path}: {exc}") from exc
    return out_path
