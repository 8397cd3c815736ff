"""Plane-group registry.

Symmetry operations are stored in fractional (lattice) coordinates as
``f -> W f + w`` with integer ``W`` and rational ``w`` taken from the
standard settings of the International Tables.  Cartesian rotation parts
are obtained by conjugating with the lattice basis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

TWO_PI = 2.0 * math.pi

# free lattice parameters per lattice kind; pinned values are substituted on decode
LATTICE_PARAMS = {
    "oblique": ("b1", "b2", "omega_c"),
    "rectangular": ("b1", "b2"),
    "rhombic": ("b1", "omega_c"),
    "square": ("b1",),
    "hexagonal": ("b1",),
}
PINNED_ANGLE = {"rectangular": math.pi / 2, "square": math.pi / 2, "hexagonal": 2 * math.pi / 3}
ANGLE_BOUNDS = {"oblique": (0.0, math.pi / 2), "rhombic": (0.0, math.pi)}


@dataclass(frozen=True)
class SymOp:
    W: tuple[tuple[int, int], tuple[int, int]]
    w: tuple[Fraction, Fraction]

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.W, dtype=float)

    @property
    def shift(self) -> np.ndarray:
        return np.array([float(v) for v in self.w])

    def compose(self, other: "SymOp") -> "SymOp":
        """``self after other``, translation reduced modulo the lattice."""
        W = np.array(self.W) @ np.array(other.W)
        w = [sum(Fraction(self.W[i][k]) * other.w[k] for k in range(2)) + self.w[i] for i in range(2)]
        return SymOp(tuple(map(tuple, W.tolist())), tuple(v % 1 for v in w))


@dataclass(frozen=True)
class Variable:
    name: str
    lower: float
    upper: float
    periodic: bool


@dataclass(frozen=True)
class PlaneGroupDef:
    name: str
    ops: tuple[SymOp, ...]
    crystal_system: str
    lattice: str
    c_bounds: tuple[tuple[float, float], tuple[float, float]]
    extra_constraints: tuple[tuple[str, Callable[[np.ndarray, np.ndarray], np.ndarray]], ...] = field(default=())

    @property
    def order(self) -> int:
        return len(self.ops)

    @property
    def variable_names(self) -> tuple[str, ...]:
        return ("c1", "c2", "omega_p") + LATTICE_PARAMS[self.lattice]

    @property
    def n_vars(self) -> int:
        return len(self.variable_names)

    def design_variables(self, diameter: float, length_bound: str = "2d") -> list[Variable]:
        """Box bounds and periodicity flags for each design variable.

        ``length_bound`` is ``"2d"`` (lattice lengths up to twice the
        circumdiameter) or ``"Nd"`` (up to group order times the diameter).
        """
        factor = {"2d": 2.0, "Nd": float(self.order)}[length_bound]
        out = [Variable("c1", *self.c_bounds[0], True),
               Variable("c2", *self.c_bounds[1], True),
               Variable("omega_p", 0.0, TWO_PI, True)]
        for name in LATTICE_PARAMS[self.lattice]:
            if name == "omega_c":
                out.append(Variable(name, *ANGLE_BOUNDS[self.lattice], True))
            else:
                out.append(Variable(name, 0.0, factor * diameter, False))
        return out

    def lattice_vectors(self, x) -> np.ndarray:
        """Rows ``b1, b2`` for design vector(s) ``x``; shape ``(..., 2, 2)``.

        ``b1`` lies along +x and ``b2`` sits at the cell angle counter-clockwise from it.
        """
        x = np.asarray(x, dtype=float)
        names = self.variable_names
        L1 = x[..., names.index("b1")]
        L2 = x[..., names.index("b2")] if "b2" in names else L1
        if "omega_c" in names:
            ang = x[..., names.index("omega_c")]
        else:
            ang = np.full_like(L1, PINNED_ANGLE[self.lattice])
        out = np.zeros(L1.shape + (2, 2))
        out[..., 0, 0] = L1
        out[..., 1, 0] = L2 * np.cos(ang)
        out[..., 1, 1] = L2 * np.sin(ang)
        return out

    def constraint_values(self, c1, c2) -> np.ndarray:
        """Extra asymmetric-unit inequalities ``g_j(c1, c2) <= 0``; shape ``(..., J)``."""
        c1 = np.asarray(c1, dtype=float)
        c2 = np.asarray(c2, dtype=float)
        if not self.extra_constraints:
            return np.zeros(c1.shape + (0,))
        return np.stack([np.broadcast_to(fn(c1, c2), c1.shape) for _, fn in self.extra_constraints], axis=-1)


def _op(W, w=(0, 0)) -> SymOp:
    return SymOp(tuple(tuple(r) for r in W), tuple(Fraction(v) % 1 for v in w))


H = Fraction(1, 2)
I2 = ((1, 0), (0, 1))
C2 = ((-1, 0), (0, -1))
MX = ((1, 0), (0, -1))  # mirror across b1
MY = ((-1, 0), (0, 1))  # mirror across b2
C4 = ((0, -1), (1, 0))
C4M = ((0, 1), (-1, 0))
C3 = ((0, -1), (1, -1))
C3M = ((-1, 1), (-1, 0))

_P6MM_W = [
    I2, C3, C3M, C2, ((0, 1), (-1, 1)), ((1, -1), (1, 0)),
    ((0, -1), (-1, 0)), ((-1, 1), (0, 1)), ((1, 0), (1, -1)),
    ((0, 1), (1, 0)), ((1, -1), (0, -1)), ((-1, 0), (-1, 1)),
]

GROUPS: dict[str, PlaneGroupDef] = {
    g.name: g
    for g in [
        PlaneGroupDef("p1", (_op(I2),), "oblique", "oblique", ((0.0, 1.0), (0.0, 1.0))),
        PlaneGroupDef("p2", (_op(I2), _op(C2)), "oblique", "oblique", ((0.0, 1.0), (0.0, 0.5))),
        PlaneGroupDef("pg", (_op(I2), _op(MX, (H, 0))), "rectangular", "rectangular",
                      ((0.0, 1.0), (0.0, 0.5))),
        PlaneGroupDef("cm", (_op(I2), _op(((0, 1), (1, 0)))), "rectangular", "rhombic",
                      ((0.0, 1.0), (0.0, 1.0))),
        PlaneGroupDef("p2mm", (_op(I2), _op(C2), _op(MY), _op(MX)), "rectangular", "rectangular",
                      ((0.0, 0.5), (0.0, 0.5))),
        PlaneGroupDef("p2mg", (_op(I2), _op(C2), _op(MY, (H, 0)), _op(MX, (H, 0))),
                      "rectangular", "rectangular", ((0.0, 0.25), (0.0, 1.0))),
        PlaneGroupDef("p2gg", (_op(I2), _op(C2), _op(MY, (H, H)), _op(MX, (H, H))),
                      "rectangular", "rectangular", ((0.0, 0.5), (0.0, 0.5))),
        PlaneGroupDef("p4", (_op(I2), _op(C2), _op(C4), _op(C4M)), "square", "square",
                      ((0.0, 0.5), (0.0, 0.5))),
        PlaneGroupDef("p3", (_op(I2), _op(C3), _op(C3M)), "hexagonal", "hexagonal",
                      ((0.0, 2 / 3), (0.0, 2 / 3)),
                      (("c2 - min(1 - c1, c1/2 + 1/2)",
                        lambda c1, c2: c2 - np.minimum(1.0 - c1, 0.5 * c1 + 0.5)),
                       ("c1 - c2/2 - 1/2", lambda c1, c2: c1 - 0.5 * c2 - 0.5))),
        PlaneGroupDef("p6mm", tuple(_op(W) for W in _P6MM_W), "hexagonal", "hexagonal",
                      ((0.0, 2 / 3), (0.0, 1 / 3)),
                      (("2 c1 - c2 - 1", lambda c1, c2: 2.0 * c1 - c2 - 1.0),
                       ("c2 - c1/2", lambda c1, c2: -0.5 * c1 + c2))),
    ]
}


def get_group(name: str) -> PlaneGroupDef:
    try:
        return GROUPS[name]
    except KeyError:
        raise KeyError(f"unknown plane group {name!r}; available: {', '.join(GROUPS)}") from None


def cartesian_ops(group: PlaneGroupDef, lattice: np.ndarray) -> np.ndarray:
    """Rotation parts ``B W B^-1`` of each op for a lattice with rows ``b1, b2``."""
    B = np.asarray(lattice, dtype=float).T
    Binv = np.linalg.inv(B)
    return np.stack([B @ op.matrix @ Binv for op in group.ops])
