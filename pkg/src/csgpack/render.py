"""SVG rendering of a block of primitive cells."""
from __future__ import annotations

import numpy as np

from .geometry import Configuration

PALETTE = (
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948",
    "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac", "#86bcb6", "#d37295",
)
CANVAS = 800.0


def _fmt(v: float) -> str:
    s = f"{v:.4f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def render_svg(cfg: Configuration, cells_per_axis: int = 5) -> str:
    """Draw ``cells_per_axis**2`` copies of the cell contents plus one cell outline.

    Each symmetry op gets its own fill colour; output is byte-deterministic.
    """
    if cells_per_axis < 1:
        raise ValueError("cells_per_axis must be >= 1")
    b1, b2 = cfg.lattice
    polys, ops = [], []
    for u in range(cells_per_axis):
        for v in range(cells_per_axis):
            shift = u * b1 + v * b2
            for p in cfg.placements:
                polys.append(cfg.polygon.placed(p.rotation, p.center + shift))
                ops.append(p.op_index)
    cell = np.array([[0.0, 0.0], b1, b1 + b2, b2])
    pts = np.concatenate(polys + [cell])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = float(max(hi - lo)) or 1.0
    scale = CANVAS / span
    margin = 10.0
    width = (hi[0] - lo[0]) * scale + 2 * margin
    height = (hi[1] - lo[1]) * scale + 2 * margin

    def to_px(q: np.ndarray) -> np.ndarray:
        # flip y so the image matches the usual mathematical orientation
        return np.column_stack([(q[:, 0] - lo[0]) * scale + margin, (hi[1] - q[:, 1]) * scale + margin])

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_fmt(width)}" '
        f'height="{_fmt(height)}" viewBox="0 0 {_fmt(width)} {_fmt(height)}">',
        f'<rect width="100%" height="100%" fill="#ffffff"/>',
    ]
    for poly, op in zip(polys, ops):
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in to_px(poly))
        out.append(f'<polygon points="{coords}" fill="{PALETTE[op % len(PALETTE)]}" '
                   f'stroke="#222222" stroke-width="0.5"/>')
    c = to_px(cell)
    d = "M " + " L ".join(f"{_fmt(x)} {_fmt(y)}" for x, y in c) + " Z"
    out.append(f'<path d="{d}" fill="none" stroke="#000000" stroke-width="1.5" stroke-dasharray="6 3"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
