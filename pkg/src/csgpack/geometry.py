"""Decoding design vectors into plane-group configurations and scoring them.

A design vector ``x`` holds ``(c1, c2, omega_p, <lattice parameters>)``.
The polygon is rotated by ``omega_p``, its centroid placed at fractional
position ``(c1, c2)`` and copied by every symmetry op of the group.  The
overlap measure is the largest face-separation value over the two polygons
of a pair, minimised over all copy pairs within a 5x5 block of cells.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .errors import OutOfBounds, SingularLattice
from .groups import PlaneGroupDef, cartesian_ops
from .polygon import ConvexPolygon, polygon_area

SINGULAR_TOL = 1e-12
BOUND_TOL = 1e-9
NEIGHBOR_CAP = 4  # translation index limit once the lattice is too fine to pack at all


@dataclass(frozen=True)
class Placement:
    rotation: np.ndarray  # 2x2, op rotation part times Rot(omega_p)
    center: np.ndarray    # Cartesian centroid position
    op_index: int


@dataclass(frozen=True, eq=False)
class Configuration:
    group: PlaneGroupDef
    polygon: ConvexPolygon
    lattice: np.ndarray  # rows b1, b2
    placements: tuple[Placement, ...]
    design: np.ndarray

    @property
    def rotations(self) -> np.ndarray:
        return np.stack([p.rotation for p in self.placements])

    @property
    def centers(self) -> np.ndarray:
        return np.stack([p.center for p in self.placements])


def rotation_matrix(angle) -> np.ndarray:
    """``(..., 2, 2)`` counter-clockwise rotation matrices."""
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def cell_area(b1, b2) -> float:
    det = float(b1[0] * b2[1] - b1[1] * b2[0])
    if abs(det) < SINGULAR_TOL:
        raise SingularLattice(f"lattice generators are (nearly) parallel: det = {det:.3e}")
    return abs(det)


def _check_bounds(group: PlaneGroupDef, polygon: ConvexPolygon, x: np.ndarray, length_bound: str) -> None:
    if x.shape != (group.n_vars,):
        raise OutOfBounds(f"{group.name} expects {group.n_vars} design variables, got shape {x.shape}")
    for v, xi in zip(group.design_variables(polygon.diameter, length_bound), x):
        if not (v.lower - BOUND_TOL <= xi <= v.upper + BOUND_TOL):
            raise OutOfBounds(f"{v.name} = {xi} outside [{v.lower}, {v.upper}]")


def decode_batch(group: PlaneGroupDef, X: np.ndarray):
    """Vectorised decode of an ``(S, n)`` design matrix.

    Returns ``lattices (S, 2, 2)``, ``rotations (S, N, 2, 2)`` and
    ``centers (S, N, 2)``; centres are wrapped into the primitive cell.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    lattices = group.lattice_vectors(X)
    W = np.stack([op.matrix for op in group.ops])  # (N, 2, 2)
    w = np.stack([op.shift for op in group.ops])   # (N, 2)
    frac = np.einsum("nij,sj->sni", W, X[:, :2]) + w
    frac -= np.floor(frac)
    centers = np.einsum("sni,sij->snj", frac, lattices)
    B = np.swapaxes(lattices, -1, -2)  # columns b1, b2
    det = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
    safe = np.where(np.abs(det) < SINGULAR_TOL, 1.0, det)
    Binv = np.stack([np.stack([B[:, 1, 1], -B[:, 0, 1]], -1),
                     np.stack([-B[:, 1, 0], B[:, 0, 0]], -1)], -2) / safe[:, None, None]
    R = np.einsum("sij,njk,skl->snil", B, W, Binv)
    # singular cells have no meaningful point group; fall back to the fractional matrices
    R[np.abs(det) < SINGULAR_TOL] = W
    rotations = R @ rotation_matrix(X[:, 2])[:, None]
    return lattices, rotations, centers


def decode_configuration(group: PlaneGroupDef, polygon: ConvexPolygon, x,
                         length_bound: str = "2d", check_bounds: bool = True) -> Configuration:
    x = np.array(x, dtype=float)
    if check_bounds:
        _check_bounds(group, polygon, x, length_bound)
    elif x.shape != (group.n_vars,):
        raise OutOfBounds(f"{group.name} expects {group.n_vars} design variables, got shape {x.shape}")
    lattice = group.lattice_vectors(x)
    cell_area(*lattice)
    R = cartesian_ops(group, lattice) @ rotation_matrix(x[2])
    W = np.stack([op.matrix for op in group.ops])
    w = np.stack([op.shift for op in group.ops])
    frac = W @ x[:2] + w
    frac -= np.floor(frac)
    centers = frac @ lattice
    placements = tuple(Placement(R[i], centers[i], i) for i in range(group.order))
    x.setflags(write=False)
    return Configuration(group, polygon, lattice, placements, x)


def _transformed(poly: ConvexPolygon, rotation, center):
    R = np.asarray(rotation, dtype=float)
    c = np.asarray(center, dtype=float)
    verts = poly.vertices @ R.T + c
    normals = poly.normals @ R.T
    offsets = poly.offsets - normals @ c
    return verts, normals, offsets


def _face_separation(normals, offsets, verts) -> float:
    """max over faces of min over the other polygon's vertices of ``a.v + b``."""
    return float((verts @ normals.T + offsets).min(axis=0).max())


def pair_distance(poly: ConvexPolygon, placement1, placement2) -> float:
    """Signed separation of two placed copies of ``poly``.

    Placements are ``Placement`` objects or ``(rotation, center)`` pairs.
    Non-negative means the interiors are disjoint.
    """
    p1 = (placement1.rotation, placement1.center) if isinstance(placement1, Placement) else placement1
    p2 = (placement2.rotation, placement2.center) if isinstance(placement2, Placement) else placement2
    v1, a1, b1 = _transformed(poly, *p1)
    v2, a2, b2 = _transformed(poly, *p2)
    return max(_face_separation(a1, b1, v2), _face_separation(a2, b2, v1))


@nb.njit(cache=True, nogil=True)
def _sep(av, ab, bv, shift):
    # max over faces of A of min over vertices of B (shifted by `shift`)
    best = -np.inf
    for f in range(av.shape[0]):
        sx = av[f, 0] * shift[0] + av[f, 1] * shift[1] + ab[f]
        lo = np.inf
        for k in range(bv.shape[0]):
            val = av[f, 0] * bv[k, 0] + av[f, 1] * bv[k, 1] + sx
            if val < lo:
                lo = val
        if lo > best:
            best = lo
    return best


@nb.njit(cache=True, nogil=True)
def _reduce_basis(b1x, b1y, b2x, b2y):
    # Lagrange-Gauss reduction: shortest basis of the same lattice
    for _ in range(200):
        n1 = b1x * b1x + b1y * b1y
        n2 = b2x * b2x + b2y * b2y
        if n1 > n2:
            b1x, b1y, b2x, b2y = b2x, b2y, b1x, b1y
            n1, n2 = n2, n1
        if n1 == 0.0:
            break
        m = np.floor((b1x * b2x + b1y * b2y) / n1 + 0.5)
        if m == 0.0:
            break
        b2x -= m * b1x
        b2y -= m * b1y
    return b1x, b1y, b2x, b2y


@nb.njit(cache=True, nogil=True)
def _violation_one(base_v, base_a, base_b, lattice, rotations, centers, cap):
    n_ops = rotations.shape[0]
    m = base_v.shape[0]
    V = np.empty((n_ops, m, 2))
    A = np.empty((n_ops, m, 2))
    Bo = np.empty((n_ops, m))
    for i in range(n_ops):
        R = rotations[i]
        for k in range(m):
            vx, vy = base_v[k, 0], base_v[k, 1]
            V[i, k, 0] = R[0, 0] * vx + R[0, 1] * vy + centers[i, 0]
            V[i, k, 1] = R[1, 0] * vx + R[1, 1] * vy + centers[i, 1]
            ax, ay = base_a[k, 0], base_a[k, 1]
            A[i, k, 0] = R[0, 0] * ax + R[0, 1] * ay
            A[i, k, 1] = R[1, 0] * ax + R[1, 1] * ay
            Bo[i, k] = base_b[k] - A[i, k, 0] * centers[i, 0] - A[i, k, 1] * centers[i, 1]
    r = 0.0
    for k in range(m):
        r = max(r, np.sqrt(base_v[k, 0] ** 2 + base_v[k, 1] ** 2))
    ax_, ay_, bx_, by_ = _reduce_basis(lattice[0, 0], lattice[0, 1], lattice[1, 0], lattice[1, 1])
    la = np.sqrt(ax_ * ax_ + ay_ * ay_)
    lb2 = bx_ * bx_ + by_ * by_
    lb = np.sqrt(lb2)
    det = ax_ * by_ - ay_ * bx_
    if abs(det) < SINGULAR_TOL:
        det = SINGULAR_TOL if det >= 0 else -SINGULAR_TOL
    reach = 2.0 * r + max(la, lb)
    reach2 = reach * reach
    inradius = -base_b.max()
    # a copy translated by a vector shorter than twice the inradius always overlaps itself,
    # so truncating the neighbour set cannot flip the sign; elsewhere enumerate the full disk
    if la >= 2.0 * inradius:
        cap = 1 << 30
    out = np.inf
    shift = np.empty(2)
    neg = np.empty(2)
    for i in range(n_ops):
        for j in range(i, n_ops):
            dx = centers[j, 0] - centers[i, 0]
            dy = centers[j, 1] - centers[i, 1]
            # rows u1 whose line {delta + u1 a + s b} comes within reach of the origin
            cdb = dx * by_ - dy * bx_
            lo1 = (-cdb - reach * lb) / det
            hi1 = (-cdb + reach * lb) / det
            if lo1 > hi1:
                lo1, hi1 = hi1, lo1
            u1_lo = max(int(np.ceil(lo1)), -cap)
            u1_hi = min(int(np.floor(hi1)), cap)
            for u1 in range(u1_lo, u1_hi + 1):
                px = dx + u1 * ax_
                py = dy + u1 * ay_
                pb = px * bx_ + py * by_
                disc = pb * pb - lb2 * (px * px + py * py - reach2)
                if disc < 0:
                    continue
                sq = np.sqrt(disc)
                u2_lo = max(int(np.ceil((-pb - sq) / lb2)), -cap)
                u2_hi = min(int(np.floor((-pb + sq) / lb2)), cap)
                for u2 in range(u2_lo, u2_hi + 1):
                    if i == j:
                        # translate-only pairs: alpha and -alpha give the same distance
                        if u1 < 0 or (u1 == 0 and u2 <= 0):
                            continue
                    shift[0] = u1 * ax_ + u2 * bx_
                    shift[1] = u1 * ay_ + u2 * by_
                    neg[0] = -shift[0]
                    neg[1] = -shift[1]
                    d = _sep(A[i], Bo[i], V[j], shift)
                    d2 = _sep(A[j], Bo[j], V[i], neg)
                    if d2 > d:
                        d = d2
                    if d < out:
                        out = d
    return out


@nb.njit(cache=True, nogil=True)
def _violation_batch(base_v, base_a, base_b, lattices, rotations, centers, rng):
    out = np.empty(lattices.shape[0])
    for s in range(lattices.shape[0]):
        out[s] = _violation_one(base_v, base_a, base_b, lattices[s], rotations[s], centers[s], rng)
    return out


def violations_batch(polygon: ConvexPolygon, lattices, rotations, centers) -> np.ndarray:
    """``packing_violation`` for a batch of decoded configurations."""
    return _violation_batch(np.ascontiguousarray(polygon.vertices), np.ascontiguousarray(polygon.normals),
                            np.ascontiguousarray(polygon.offsets), np.ascontiguousarray(lattices),
                            np.ascontiguousarray(rotations), np.ascontiguousarray(centers), NEIGHBOR_CAP)


def packing_violation(cfg: Configuration) -> float:
    """Minimum pair separation over all nearby copy pairs; ``>= 0`` iff packing."""
    return float(violations_batch(cfg.polygon, cfg.lattice[None], cfg.rotations[None], cfg.centers[None])[0])


def packing_density(cfg: Configuration) -> float:
    return cfg.group.order * polygon_area(cfg.polygon) / cell_area(*cfg.lattice)


def extra_constraint_values(group: PlaneGroupDef, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return group.constraint_values(x[..., 0], x[..., 1])
