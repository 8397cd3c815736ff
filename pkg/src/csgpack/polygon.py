"""Convex polygons in half-plane form.

A polygon is stored with its area centroid at the origin, vertices in
counter-clockwise order and one outward unit normal ``a_i`` and offset
``b_i`` per edge so that ``a_i . x + b_i <= 0`` inside the polygon.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import Degenerate, NonConvex

DUPLICATE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ConvexPolygon:
    vertices: np.ndarray  # (m, 2), CCW, centroid at origin
    normals: np.ndarray   # (m, 2), unit outward normal of edge i -> i+1
    offsets: np.ndarray   # (m,)
    diameter: float       # 2 * max vertex norm

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def placed(self, rotation: np.ndarray, center) -> np.ndarray:
        """Vertices after applying ``x -> rotation @ x + center``."""
        return self.vertices @ np.asarray(rotation).T + np.asarray(center)

    def to_list(self) -> list[list[float]]:
        return self.vertices.tolist()


def _shoelace(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _centroid(v: np.ndarray) -> np.ndarray:
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum()
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * area)


def polygon_from_vertices(points) -> ConvexPolygon:
    """Build a centred, CCW-ordered convex polygon from an unordered point set.

    Raises ``NonConvex`` if some point is not a strict hull vertex and
    ``Degenerate`` for collinear input.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise Degenerate("need at least three 2D points")
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    np.fill_diagonal(dist, np.inf)
    if dist.min() < DUPLICATE_TOL:
        raise Degenerate("duplicate vertices")
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:
        raise Degenerate("points are collinear") from exc
    if len(hull.vertices) < len(pts):
        raise NonConvex("some points are not vertices of the convex hull")
    verts = pts[hull.vertices]
    area = _shoelace(verts)
    if area < 0:
        verts = verts[::-1]
        area = -area
    scale = float(np.abs(verts).max())
    if area < 1e-12 * max(scale, 1.0) ** 2:
        raise Degenerate("zero-area point set")
    edges = np.roll(verts, -1, axis=0) - verts
    nxt = np.roll(edges, -1, axis=0)
    cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
    if np.any(cross <= 1e-14 * scale ** 2):
        raise NonConvex("polygon is not strictly convex")

    verts = verts - _centroid(verts)
    edges = np.roll(verts, -1, axis=0) - verts
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    normals = np.column_stack([edges[:, 1], -edges[:, 0]]) / lengths[:, None]
    offsets = -(normals * verts).sum(axis=1)
    diameter = 2.0 * float(np.hypot(verts[:, 0], verts[:, 1]).max())
    for arr in (verts, normals, offsets):
        arr.setflags(write=False)
    return ConvexPolygon(verts, normals, offsets, diameter)


def polygon_area(p: ConvexPolygon) -> float:
    return _shoelace(p.vertices)


def regular_polygon(k: int, circumradius: float = 1.0, phase: float = 0.0) -> ConvexPolygon:
    ang = phase + 2.0 * np.pi * np.arange(k) / k
    return polygon_from_vertices(circumradius * np.column_stack([np.cos(ang), np.sin(ang)]))


def cairo_pentagon(side: float = 1.0) -> ConvexPolygon:
    """Pentagon with interior angles 120, 120, 90, 120, 90 (Cairo tile).

    Four sides have length ``side``; the remaining one is ``(sqrt(3) - 1) * side``.
    """
    short = (math.sqrt(3.0) - 1.0) * side
    lengths = [short, side, side, side, side]
    turns = [60.0, 90.0, 60.0, 90.0, 60.0]  # exterior angles after each side
    pts, pos, heading = [], np.zeros(2), 0.0
    for length, turn in zip(lengths, turns):
        pts.append(pos.copy())
        pos = pos + length * np.array([math.cos(math.radians(heading)), math.sin(math.radians(heading))])
        heading += turn
    return polygon_from_vertices(pts)


def triangle_30_60_90(hypotenuse: float = 1.0) -> ConvexPolygon:
    return polygon_from_vertices([[0.0, 0.0], [hypotenuse * math.sqrt(3.0) / 2.0, 0.0],
                                  [0.0, hypotenuse / 2.0]])


SHAPE_DIR = Path(__file__).with_name("shapes")


def bundled_shapes() -> list[str]:
    return sorted(p.stem for p in SHAPE_DIR.glob("*.json"))


def load_polygon(path_or_name) -> ConvexPolygon:
    """Load a JSON ``[[x, y], ...]`` vertex file, or a bundled shape by name."""
    path = Path(path_or_name)
    if not path.exists():
        bundled = SHAPE_DIR / f"{path_or_name}.json"
        if not bundled.exists():
            raise FileNotFoundError(f"no polygon file or bundled shape named {path_or_name!r}")
        path = bundled
    with open(path) as fh:
        return polygon_from_vertices(json.load(fh))


def save_polygon(p: ConvexPolygon, path) -> None:
    with open(path, "w") as fh:
        json.dump(p.to_list(), fh, indent=1)
