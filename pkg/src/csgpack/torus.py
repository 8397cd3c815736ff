"""Extended multivariate von Mises submodel on the n-torus.

Two parameterisations are used:

* natural ``(mu, kappa, D)`` with unnormalised log density
  ``kappa . cos(theta - mu) + 1/2 z^T D z``, ``z = [cos(theta - mu); sin(theta - mu)]``;
* canonical ``(eta, E)`` with log density ``eta . w + w^T E w``, ``w = [cos theta; sin theta]``.

Writing ``z = R(mu) w`` with ``R = [[C, S], [-S, C]]`` (``C = diag cos mu``,
``S = diag sin mu``) gives ``eta = [kappa cos mu; kappa sin mu]`` and
``E = 1/2 R^T D R``.  The submodel mask zeroes the diagonals of the cc, ss
and cs blocks of both ``D`` and ``E`` (the transform preserves it), leaving
``2 n^2`` free coordinates.

The flat canonical vector pairs with the sufficient statistic ``t(theta)``:
``t = [cos theta_1..n, sin theta_1..n, w_a w_b for unmasked a < b]`` in
row-major order over the upper triangle of ``w w^T``, and the matching
coordinates are ``[eta, 2 E_ab]`` so that ``log f = vec . t - psi``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numba as nb
import numpy as np

from .errors import DivergentRejection, KappaUnderflow, NonPositiveKappa, ZeroConcentration

TWO_PI = 2.0 * math.pi
KAPPA_FLOOR = 1e-6
MAX_REJECTIONS = 1_000_000


# ---------------------------------------------------------------- layout

@lru_cache(maxsize=None)
def free_mask(n: int) -> np.ndarray:
    """Boolean ``2n x 2n`` mask of interaction entries allowed by the submodel."""
    m = ~np.eye(2 * n, dtype=bool)
    idx = np.arange(n)
    m[idx, n + idx] = False
    m[n + idx, idx] = False
    m.setflags(write=False)
    return m


@lru_cache(maxsize=None)
def interaction_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column indices of the free upper-triangular entries, row-major."""
    a, b = np.triu_indices(2 * n, k=1)
    keep = free_mask(n)[a, b]
    a, b = a[keep], b[keep]
    a.setflags(write=False)
    b.setflags(write=False)
    return a, b


def stat_dim(n: int) -> int:
    return 2 * n * n


def layout_descriptor(n: int) -> list[str]:
    """Human-readable label of every sufficient-statistic entry, in order."""
    names = [f"cos{i}" for i in range(n)] + [f"sin{i}" for i in range(n)]
    a, b = interaction_pairs(n)
    return names + [f"{names[i]}*{names[j]}" for i, j in zip(a, b)]


def apply_mask(M: np.ndarray) -> np.ndarray:
    """Symmetrise and zero the entries the submodel forbids."""
    n = M.shape[0] // 2
    out = 0.5 * (M + M.T)
    out[~free_mask(n)] = 0.0
    return out


# ---------------------------------------------------------------- parameters

@dataclass(frozen=True, eq=False)
class NaturalParams:
    mu: np.ndarray     # (n,) in [0, 2pi)
    kappa: np.ndarray  # (n,) > 0
    D: np.ndarray      # (2n, 2n) symmetric, masked

    @property
    def n(self) -> int:
        return len(self.mu)


@dataclass(frozen=True, eq=False)
class CanonicalParams:
    eta: np.ndarray  # (2n,) = [eta_c; eta_s]
    E: np.ndarray    # (2n, 2n) symmetric, masked

    @property
    def n(self) -> int:
        return len(self.eta) // 2

    @classmethod
    def zeros(cls, n: int) -> "CanonicalParams":
        return cls(np.zeros(2 * n), np.zeros((2 * n, 2 * n)))


def _rotation_blocks(mu: np.ndarray) -> np.ndarray:
    C, S = np.diag(np.cos(mu)), np.diag(np.sin(mu))
    return np.block([[C, S], [-S, C]])


def canonical_from_natural(p: NaturalParams) -> CanonicalParams:
    mu = np.asarray(p.mu, dtype=float)
    kappa = np.asarray(p.kappa, dtype=float)
    if np.any(kappa <= 0):
        raise NonPositiveKappa(f"concentrations must be positive, got min {kappa.min():.3e}")
    eta = np.concatenate([kappa * np.cos(mu), kappa * np.sin(mu)])
    R = _rotation_blocks(mu)
    E = apply_mask(0.5 * R.T @ np.asarray(p.D, dtype=float) @ R)
    return CanonicalParams(eta, E)


def natural_from_canonical(p: CanonicalParams) -> NaturalParams:
    n = p.n
    ec, es = p.eta[:n], p.eta[n:]
    kappa = np.hypot(ec, es)
    if np.any(kappa == 0):
        raise ZeroConcentration("eta has a zero (cos, sin) pair; the mean direction is undefined")
    mu = np.mod(np.arctan2(es, ec), TWO_PI)
    R = _rotation_blocks(mu)
    D = apply_mask(2.0 * R @ p.E @ R.T)
    return NaturalParams(mu, kappa, D)


def to_vector(p: CanonicalParams) -> np.ndarray:
    """Flat canonical coordinates aligned with ``sufficient_statistic``."""
    a, b = interaction_pairs(p.n)
    return np.concatenate([p.eta, 2.0 * p.E[a, b]])


def from_vector(vec: np.ndarray, n: int) -> CanonicalParams:
    vec = np.asarray(vec, dtype=float)
    a, b = interaction_pairs(n)
    E = np.zeros((2 * n, 2 * n))
    E[a, b] = 0.5 * vec[2 * n:]
    E[b, a] = E[a, b]
    return CanonicalParams(vec[:2 * n].copy(), E)


def sufficient_statistic(theta) -> np.ndarray:
    """``t(theta)`` for one angle vector ``(n,)`` or a batch ``(S, n)``."""
    theta = np.asarray(theta, dtype=float)
    w = np.concatenate([np.cos(theta), np.sin(theta)], axis=-1)
    a, b = interaction_pairs(theta.shape[-1])
    return np.concatenate([w, w[..., a] * w[..., b]], axis=-1)


def log_density_natural(theta, p: NaturalParams) -> np.ndarray:
    """Unnormalised log density in natural coordinates."""
    d = np.asarray(theta, dtype=float) - p.mu
    z = np.concatenate([np.cos(d), np.sin(d)], axis=-1)
    return z[..., :p.n] @ p.kappa + 0.5 * np.einsum("...a,ab,...b->...", z, p.D, z)


def log_density_canonical(theta, p: CanonicalParams) -> np.ndarray:
    """Unnormalised log density ``eta . w + w^T E w``."""
    theta = np.asarray(theta, dtype=float)
    w = np.concatenate([np.cos(theta), np.sin(theta)], axis=-1)
    return w @ p.eta + np.einsum("...a,ab,...b->...", w, p.E, w)


# ---------------------------------------------------------------- conditionals

def _second_order_terms(E: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # w^T E w restricted to angle k: E^cc_kk cos^2 + E^ss_kk sin^2 + 2 E^cs_kk cos sin
    #   = const + (E^cc_kk - E^ss_kk)/2 cos 2t + E^cs_kk sin 2t
    n = E.shape[0] // 2
    k = np.arange(n)
    half_diff = 0.5 * (E[k, k] - E[n + k, n + k])
    cross = E[k, n + k]
    return np.hypot(half_diff, cross), np.mod(0.5 * np.arctan2(cross, half_diff), math.pi)


def conditional_gvm_params(k: int, theta, p: CanonicalParams) -> tuple[float, float, float, float]:
    """``(gamma1, nu1, gamma2, nu2)`` of the law of ``theta_k`` given the other angles."""
    n = p.n
    theta = np.asarray(theta, dtype=float)
    if not 0 <= k < n:
        raise IndexError(f"coordinate {k} out of range for n = {n}")
    w = np.concatenate([np.cos(theta), np.sin(theta)])
    others = np.ones(2 * n, dtype=bool)
    others[[k, n + k]] = False
    A = p.eta[k] + 2.0 * p.E[k, others] @ w[others]
    B = p.eta[n + k] + 2.0 * p.E[n + k, others] @ w[others]
    g2, n2 = _second_order_terms(p.E)
    return float(math.hypot(A, B)), float(math.atan2(B, A) % TWO_PI), float(g2[k]), float(n2[k])


# ---------------------------------------------------------------- samplers

@nb.njit(cache=True, nogil=True)
def _vonmises(rng, mu, kappa):
    # Best & Fisher (1979) wrapped-Cauchy envelope; wrapped normal when kappa is huge
    if kappa < 1e-8:
        return TWO_PI * rng.random()
    if kappa > 1e6:
        return (mu + rng.standard_normal() / math.sqrt(kappa)) % TWO_PI
    if kappa < 1e-5:
        s = 1.0 / kappa + kappa
    else:
        r = 1.0 + math.sqrt(1.0 + 4.0 * kappa * kappa)
        rho = (r - math.sqrt(2.0 * r)) / (2.0 * kappa)
        s = (1.0 + rho * rho) / (2.0 * rho)
    while True:
        u = rng.random()
        z = math.cos(math.pi * u)
        w = (1.0 + s * z) / (s + z)
        y = kappa * (s - w)
        v = rng.random()
        if y * (2.0 - y) - v >= 0.0 or math.log(y / v) + 1.0 - y >= 0.0:
            break
    t = math.acos(min(1.0, max(-1.0, w)))
    if rng.random() < 0.5:
        t = -t
    return (mu + t) % TWO_PI


@nb.njit(cache=True, nogil=True)
def _gvm2(rng, g1, n1, g2, n2):
    """One draw from exp{g1 cos(t - n1) + g2 cos 2(t - n2)}; -1 on runaway rejection."""
    if g2 <= 0.0:
        return _vonmises(rng, n1, g1)
    for _ in range(MAX_REJECTIONS):
        t = _vonmises(rng, n1, g1)
        if rng.random() < math.exp(g2 * (math.cos(2.0 * (t - n2)) - 1.0)):
            return t
    return -1.0


@nb.njit(cache=True, nogil=True)
def _gvm2_many(rng, g1, n1, g2, n2, size):
    out = np.empty(size)
    for i in range(size):
        out[i] = _gvm2(rng, g1, n1, g2, n2)
        if out[i] < 0.0:
            return out, False
    return out, True


@nb.njit(cache=True, nogil=True)
def _conditional(k, n, eta, M, c, s):
    A = eta[k]
    B = eta[n + k]
    for i in range(n):
        if i != k:
            A += M[k, i] * c[i] + M[k, n + i] * s[i]
            B += M[n + k, i] * c[i] + M[n + k, n + i] * s[i]
    return math.sqrt(A * A + B * B), math.atan2(B, A)


@nb.njit(cache=True, nogil=True)
def _gibbs(rng, eta, M, g2, nu2, count, sweeps):
    n = eta.shape[0] // 2
    out = np.empty((count, n))
    c = np.empty(n)
    s = np.empty(n)
    for j in range(count):
        # first n-1 angles from the per-angle laws ignoring interactions
        for k in range(n - 1):
            t = _gvm2(rng, math.sqrt(eta[k] ** 2 + eta[n + k] ** 2), math.atan2(eta[n + k], eta[k]),
                      g2[k], nu2[k])
            if t < 0.0:
                return out, False
            c[k] = math.cos(t)
            s[k] = math.sin(t)
            out[j, k] = t
        first = n - 1
        for sweep in range(sweeps + 1):
            for k in range(first, n):
                g1, n1 = _conditional(k, n, eta, M, c, s)
                t = _gvm2(rng, g1, n1, g2[k], nu2[k])
                if t < 0.0:
                    return out, False
                c[k] = math.cos(t)
                s[k] = math.sin(t)
                out[j, k] = t
            first = 0
    return out, True


def sample_gvm2(gamma1: float, nu1: float, gamma2: float, nu2: float, rng: np.random.Generator,
                size: int | None = None):
    """Exact draws from the order-2 generalised von Mises law on the circle."""
    if gamma1 < 0 or gamma2 < 0:
        raise ValueError("gamma1 and gamma2 must be non-negative")
    out, ok = _gvm2_many(rng, float(gamma1), float(nu1), float(gamma2), float(nu2), 1 if size is None else size)
    if not ok:
        raise DivergentRejection(f"no acceptance after {MAX_REJECTIONS} proposals (gamma2 = {gamma2})")
    return float(out[0]) if size is None else out


def gibbs_sample(p: CanonicalParams, count: int, sweeps: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` independent Gibbs chains, each run for ``sweeps`` full sweeps; returns ``(count, n)``."""
    if count < 1 or sweeps < 1:
        raise ValueError("count and sweeps must be >= 1")
    g2, nu2 = _second_order_terms(p.E)
    M = np.ascontiguousarray(2.0 * p.E)
    out, ok = _gibbs(rng, np.ascontiguousarray(p.eta, dtype=float), M, g2, nu2, int(count), int(sweeps))
    if not ok:
        raise DivergentRejection(f"Gibbs sweep hit {MAX_REJECTIONS} rejections")
    return out


# ---------------------------------------------------------------- tangent maps

def tangent_transform(d_eta, dE, at: NaturalParams, kappa_floor: float = KAPPA_FLOOR):
    """Push a canonical tangent vector ``(d_eta, dE)`` to natural coordinates at ``at``.

    Returns ``(d_mu, d_kappa, dD)``; ``dD`` is symmetrised and masked.
    """
    mu, kappa, D = at.mu, at.kappa, at.D
    if np.any(kappa < kappa_floor):
        raise KappaUnderflow(f"kappa {kappa.min():.3e} below floor {kappa_floor:.1e}")
    n = len(mu)
    d_eta = np.asarray(d_eta, dtype=float)
    dc, ds = d_eta[:n], d_eta[n:]
    cm, sm = np.cos(mu), np.sin(mu)
    d_mu = (-sm * dc + cm * ds) / kappa
    d_kappa = cm * dc + sm * ds
    # D = 2 R E R^T with dR = J R, J = [[0, dM], [-dM, 0]]
    dM = np.diag(d_mu)
    Z = np.zeros((n, n))
    J = np.block([[Z, dM], [-dM, Z]])
    R = _rotation_blocks(mu)
    dD = J @ D + D @ J.T + 2.0 * R @ np.asarray(dE, dtype=float) @ R.T
    return d_mu, d_kappa, apply_mask(dD)
