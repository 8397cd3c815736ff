"""Entropic trust-region search for dense plane-group packings.

Each iteration draws a batch from the extended von Mises model on the
torus, maps it into the design box, ranks the designs with a feasibility
penalty, and moves the model along the spectrally scaled natural gradient
of the selected-quantile objective.  The first step is taken in canonical
coordinates (the uniform start has no natural parameterisation); later
steps are pushed to ``(mu, kappa, D)`` and applied there with momentum and
per-scalar adaptive learning rates.
"""
from __future__ import annotations

import csv
import dataclasses
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .errors import SingularFisher
from .geometry import decode_batch, violations_batch
from .groups import PlaneGroupDef, Variable
from .polygon import ConvexPolygon, polygon_area
from .torus import (
    CanonicalParams, NaturalParams, apply_mask, canonical_from_natural, from_vector,
    gibbs_sample, natural_from_canonical, stat_dim, sufficient_statistic, tangent_transform, to_vector,
)

TWO_PI = 2.0 * math.pi
JITTER_LEVELS = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
LOG_COLUMNS = ("iter", "mean_density", "max_density", "best_density", "q", "feasible_frac", "lambda_min",
               "step_norm_mu", "step_norm_kappa", "step_norm_D")


# ---------------------------------------------------------------- problem & settings

@dataclass(frozen=True, eq=False)
class Problem:
    group: PlaneGroupDef
    polygon: ConvexPolygon
    bounds: tuple[Variable, ...]
    length_bound: str = "2d"

    @classmethod
    def create(cls, group: PlaneGroupDef, polygon: ConvexPolygon, length_bound: str = "2d") -> "Problem":
        return cls(group, polygon, tuple(group.design_variables(polygon.diameter, length_bound)), length_bound)

    def __post_init__(self):
        if len(self.bounds) != self.group.n_vars:
            raise ValueError(f"{self.group.name} needs {self.group.n_vars} bounds, got {len(self.bounds)}")
        for v in self.bounds:
            if not (math.isfinite(v.lower) and math.isfinite(v.upper) and v.lower < v.upper):
                raise ValueError(f"invalid bounds for {v.name}: [{v.lower}, {v.upper}]")

    @property
    def n(self) -> int:
        return len(self.bounds)

    @property
    def lower(self) -> np.ndarray:
        return np.array([v.lower for v in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([v.upper for v in self.bounds])

    @property
    def periodic(self) -> np.ndarray:
        return np.array([v.periodic for v in self.bounds])

    def with_bounds(self, lower, upper, periodic) -> "Problem":
        vs = tuple(Variable(v.name, float(lo), float(hi), bool(p))
                   for v, lo, hi, p in zip(self.bounds, lower, upper, periodic))
        return dataclasses.replace(self, bounds=vs)

    def evaluate(self, X: np.ndarray):
        """Objectives (cell areas), constraint matrix ``g <= 0``, densities and overlap values."""
        lattices, rotations, centers = decode_batch(self.group, X)
        area = np.abs(lattices[:, 0, 0] * lattices[:, 1, 1] - lattices[:, 0, 1] * lattices[:, 1, 0])
        dist = violations_batch(self.polygon, lattices, rotations, centers)
        g = np.column_stack([-dist, self.group.constraint_values(X[:, 0], X[:, 1])])
        with np.errstate(divide="ignore"):
            density = self.density_scale / area
        return area, g, density, dist

    @property
    def density_scale(self) -> float:
        """Density times cell area: copies per cell times polygon area."""
        return self.group.order * polygon_area(self.polygon)

    def describe(self) -> dict:
        return {"group": self.group.name, "polygon": self.polygon.to_list(), "length_bound": self.length_bound,
                "bounds": [dataclasses.asdict(v) for v in self.bounds]}


@dataclass(frozen=True)
class Hyperparams:
    gamma_mu0: float = 0.140625
    gamma_kappa0: float = 0.171875
    gamma_D0: float = 0.21875
    c_up: float = 1.1
    c_down: float = 0.9
    alpha_mu: float = 0.7109375
    alpha_kappa: float = 0.1953125
    alpha_D: float = 0.578125
    q0_divisor: float = 100.0
    beta_horizon: float = 2000.0  # beta = ln(N / q0) / beta_horizon
    c: float = 0.12
    iterations: int = 8000
    c_eps: float = 1.2
    sweeps: int = 100
    # dmu = d_eta / kappa; a floor near zero lets the mean-direction update blow up
    kappa_floor: float = 0.3
    quantile_batches: int = 1
    shards: int = 4  # independent RNG streams per iteration; fixed so results do not depend on workers
    batch_size: int | None = None  # overrides the c-derived N when set

    def __post_init__(self):
        if not self.c_up > 1 or not 0 < self.c_down < 1:
            raise ValueError("need c_up > 1 and 0 < c_down < 1")
        if not 0 < self.c < 1:
            raise ValueError("c must lie in (0, 1)")
        if not self.c_eps > 1:
            raise ValueError("c_eps must exceed 1")
        if self.iterations < 0 or self.sweeps < 1 or self.shards < 1 or self.quantile_batches < 1:
            raise ValueError("iterations >= 0, sweeps >= 1, shards >= 1, quantile_batches >= 1 required")

    def batch(self, n: int) -> int:
        """N = ceil(2 n^2 / c) rounded up to a multiple of the shard count."""
        N = self.batch_size if self.batch_size is not None else math.ceil(2 * n * n / self.c - 1e-9)
        N = self.shards * math.ceil(N / self.shards)
        if N < 2 * n * n and self.batch_size is None:
            raise ValueError("batch smaller than the statistic dimension")
        return N

    def q0(self, n: int) -> float:
        return max(1.0, self.batch(n) / self.q0_divisor)

    def beta(self, n: int) -> float:
        return math.log(self.batch(n) / self.q0(n)) / self.beta_horizon

    def resolved(self, n: int) -> dict:
        d = dataclasses.asdict(self)
        d.update(N=self.batch(n), q0=self.q0(n), beta=self.beta(n))
        return d


# ---------------------------------------------------------------- building blocks

def boundary_map(point, lower, upper, periodic) -> np.ndarray:
    """Map torus angles in ``[0, 2pi)`` into the design box.

    Periodic variables use the affine map; aperiodic ones a triangle wave so
    both ends of the circle land on the lower bound.
    """
    x = np.asarray(point, dtype=float)
    lo, hi = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    span = hi - lo
    affine = lo + x / TWO_PI * span
    rising = lo + x / math.pi * span
    falling = 2.0 * hi - lo - x / math.pi * span
    tri = np.where(x < math.pi, rising, falling)
    return np.where(np.asarray(periodic, dtype=bool), affine, tri)


def penalty_fitness(objectives, violations) -> np.ndarray:
    """Feasibility-first penalty: feasible points keep ``f``; others get ``f_max`` plus normalised violations.

    ``violations`` is ``(N, J)`` with ``g <= 0`` meaning satisfied.  With no
    feasible point ``f_max`` is taken as 0.
    """
    f = np.asarray(objectives, dtype=float)
    g = np.asarray(violations, dtype=float).reshape(len(f), -1)
    positive = g > 0
    feasible = ~positive.any(axis=1)
    f_max = f[feasible].max() if feasible.any() else 0.0
    g_max = np.where(positive, g, -np.inf).max(axis=0)
    g_max = np.where(np.isfinite(g_max), g_max, 1.0)
    excess = np.where(positive, g / g_max, 0.0).sum(axis=1)
    return np.where(feasible, f, f_max + excess)


def select_quantile(F, q: float, batches: int = 1) -> tuple[np.ndarray, float]:
    """Indices of the best ``ceil(N/q)`` points by ascending ``F`` (stable ties) and the threshold.

    With ``batches > 1`` the threshold is estimated per equal sub-batch and
    the most selective one is used.
    """
    F = np.asarray(F, dtype=float)
    N = len(F)
    if not 1.0 <= q <= N:
        raise ValueError(f"q = {q} outside [1, {N}]")
    order = np.argsort(F, kind="stable")
    if batches == 1:
        k = math.ceil(N / q)
        return order[:k], float(F[order[k - 1]])
    thresholds = []
    for part in np.array_split(np.arange(N), batches):
        sub = np.sort(F[part], kind="stable")
        thresholds.append(sub[math.ceil(len(part) / q) - 1])
    threshold = float(min(thresholds))
    chosen = order[F[order] <= threshold]
    return (chosen if len(chosen) else order[:1]), threshold


def estimate_fisher(stats) -> np.ndarray:
    """Unbiased sample covariance of the sufficient statistics (the Fisher matrix in canonical coordinates)."""
    S = np.asarray(stats, dtype=float)
    if len(S) < 2:
        raise ValueError("need at least two samples")
    C = np.cov(S, rowvar=False)
    return 0.5 * (C + C.T)


def estimate_gradient(stats, selected) -> np.ndarray:
    S = np.asarray(stats, dtype=float)
    sel = np.asarray(selected)
    if sel.size == 0:
        raise ValueError("selection is empty")
    if sel.size == len(S):
        # selecting everything carries no signal; avoid normalising round-off
        return np.zeros(S.shape[1])
    return S[sel].mean(axis=0) - S.mean(axis=0)


def natural_step(fisher, grad, levels: Sequence[float] = JITTER_LEVELS) -> tuple[np.ndarray, float]:
    """Unit natural-gradient step under the ``lambda_min``-scaled Fisher metric.

    Solves ``(F + eps tr(F)/d I) y = g`` with escalating ridge ``eps`` and returns
    ``sqrt(lambda_min) y / sqrt(y^T F y)`` (metric and eigenvalue both of the
    ridged matrix) together with ``lambda_min``.
    """
    F = np.asarray(fisher, dtype=float)
    g = np.asarray(grad, dtype=float)
    d = len(g)
    scale = np.trace(F) / d
    if not scale > 0:
        scale = 1.0
    for eps in levels:
        A = F + eps * scale * np.eye(d)
        try:
            factor = linalg.cho_factor(A, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError):
            continue
        lam = float(linalg.eigvalsh(A, subset_by_index=[0, 0])[0])
        if not lam > 0:
            continue
        if not np.any(g):
            return np.zeros(d), lam
        y = linalg.cho_solve(factor, g)
        return math.sqrt(lam) * y / math.sqrt(float(y @ A @ y)), lam
    raise SingularFisher(f"Fisher matrix not positive definite after ridge {levels[-1]:g}")


def ridge_fisher(fisher, lam_levels: Sequence[float] = JITTER_LEVELS) -> np.ndarray:
    """The ridged Fisher matrix ``natural_step`` would use (first level that factorises)."""
    F = np.asarray(fisher, dtype=float)
    d = len(F)
    scale = np.trace(F) / d
    scale = scale if scale > 0 else 1.0
    for eps in lam_levels:
        A = F + eps * scale * np.eye(d)
        try:
            linalg.cho_factor(A, lower=True)
            return A
        except linalg.LinAlgError:
            continue
    raise SingularFisher("Fisher matrix not positive definite")


def update_q(q: float, delta_now, delta_prev, fisher, beta: float, N: int) -> float:
    """``q exp(beta cos alpha)`` clamped to ``[1, N]``; angle in the Fisher metric."""
    a = np.asarray(delta_now, dtype=float)
    b = np.asarray(delta_prev, dtype=float)
    Fa, Fb = fisher @ a, fisher @ b
    na, nb = math.sqrt(max(a @ Fa, 0.0)), math.sqrt(max(b @ Fb, 0.0))
    cos = 0.0 if na == 0 or nb == 0 else float(np.clip((a @ Fb) / (na * nb), -1.0, 1.0))
    return float(min(max(q * math.exp(beta * cos), 1.0), N))


def adapt_rates(rates, deltas_now, deltas_prev, gamma0, c_up: float, c_down: float) -> np.ndarray:
    """Per-scalar rate update: agreeing signs grow (capped at ``gamma0``), flips shrink.

    ``sgn(0)`` is treated as agreement.
    """
    r = np.asarray(rates, dtype=float)
    a, b = np.sign(deltas_now), np.sign(deltas_prev)
    agree = (a == b) | (a == 0) | (b == 0)
    return np.where(agree, np.minimum(c_up * r, gamma0), c_down * r)


# ---------------------------------------------------------------- state & records

@dataclass
class OptimizerState:
    n: int
    N: int
    q: float
    canonical: CanonicalParams
    natural: NaturalParams | None = None
    iteration: int = 0
    rates: dict = field(default_factory=dict)
    momentum: dict = field(default_factory=dict)
    natural_deltas: list = field(default_factory=list)    # last two realised (mu, kappa, D) deltas
    canonical_deltas: list = field(default_factory=list)  # last two canonical-vector deltas
    best_x: np.ndarray | None = None
    best_density: float = 0.0
    best_violation: float = float("nan")
    last_fisher: np.ndarray | None = None
    last_step: np.ndarray | None = None
    last_lambda: float = float("nan")
    last_F: np.ndarray | None = None
    last_feasible: np.ndarray | None = None
    last_selected: np.ndarray | None = None
    last_stats_mean: np.ndarray | None = None
    rows: list = field(default_factory=list)

    @classmethod
    def initial(cls, n: int, hyper: Hyperparams) -> "OptimizerState":
        two = 2 * n
        return cls(
            n=n, N=hyper.batch(n), q=hyper.q0(n), canonical=CanonicalParams.zeros(n),
            rates={"mu": np.full(n, hyper.gamma_mu0), "kappa": np.full(n, hyper.gamma_kappa0),
                   "D": np.full((two, two), hyper.gamma_D0)},
            momentum={"mu": np.zeros(n), "kappa": np.zeros(n), "D": np.zeros((two, two))},
        )


@dataclass
class RunRecord:
    rows: list
    best_x: np.ndarray | None
    best_density: float
    best_violation: float
    wall_seconds: float
    seed: object
    hyper: dict
    problem: dict

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for row in self.rows:
                w.writerow([row["iter"]] + [repr(float(row[c])) for c in LOG_COLUMNS[1:]])

    def summary(self) -> dict:
        return {
            "problem": self.problem, "hyperparams": self.hyper, "seed": self.seed,
            "best_design": None if self.best_x is None else [float(v) for v in self.best_x],
            "best_density": float(self.best_density), "violation": float(self.best_violation),
            "wall_seconds": float(self.wall_seconds), "iterations": len(self.rows),
        }


# ---------------------------------------------------------------- iteration

def _seed_tuple(seed) -> tuple[int, ...]:
    return tuple(int(s) for s in (seed if isinstance(seed, (tuple, list)) else (seed,)))


def _shard_work(problem: Problem, canonical: CanonicalParams, count: int, sweeps: int, seed, iteration: int,
                shard: int):
    ss = np.random.SeedSequence(list(_seed_tuple(seed)), spawn_key=(iteration, shard))
    rng = np.random.Generator(np.random.Philox(ss))
    theta = gibbs_sample(canonical, count, sweeps, rng)
    X = boundary_map(theta, problem.lower, problem.upper, problem.periodic)
    return (theta, X) + problem.evaluate(X)


def _sample_and_evaluate(state, problem, hyper, seed, pool):
    per = state.N // hyper.shards
    jobs = [(problem, state.canonical, per, hyper.sweeps, seed, state.iteration, s) for s in range(hyper.shards)]
    if pool is None:
        parts = [_shard_work(*j) for j in jobs]
    else:
        parts = list(pool.map(lambda j: _shard_work(*j), jobs))
    return [np.concatenate([p[i] for p in parts]) for i in range(6)]


def iterate(state: OptimizerState, problem: Problem, hyper: Hyperparams, seed, pool=None) -> OptimizerState:
    """One trust-region iteration; mutates and returns ``state``."""
    n = state.n
    theta, X, area, g, density, dist = _sample_and_evaluate(state, problem, hyper, seed, pool)
    F = penalty_fitness(area, g)
    feasible = ~(g > 0).any(axis=1)
    selected, _ = select_quantile(F, state.q, hyper.quantile_batches)

    T = sufficient_statistic(theta)
    fisher = estimate_fisher(T)
    grad = estimate_gradient(T, selected)
    step, lam = natural_step(fisher, grad)
    ridged = ridge_fisher(fisher)

    old_vec = to_vector(state.canonical)
    norms = {"mu": float("nan"), "kappa": float("nan"), "D": float("nan")}
    if state.natural is None:
        new_can = from_vector(old_vec + step, n)
        # a coordinate the step left at eta = 0 is still uniform; give it mu = 0 and the floor
        flat = np.hypot(new_can.eta[:n], new_can.eta[n:]) == 0
        new_can.eta[:n][flat] = hyper.kappa_floor
        nat = natural_from_canonical(new_can)
        nat = NaturalParams(nat.mu, np.maximum(nat.kappa, hyper.kappa_floor), nat.D)
    else:
        d_can = from_vector(step, n)
        d_mu, d_kappa, d_D = tangent_transform(d_can.eta, d_can.E, state.natural, hyper.kappa_floor)
        m = state.momentum
        m["mu"] = d_mu + hyper.alpha_mu * m["mu"]
        m["kappa"] = d_kappa + hyper.alpha_kappa * m["kappa"]
        m["D"] = d_D + hyper.alpha_D * m["D"]
        if len(state.natural_deltas) == 2:
            now, prev = state.natural_deltas[-1], state.natural_deltas[-2]
            for key, g0 in (("mu", hyper.gamma_mu0), ("kappa", hyper.gamma_kappa0), ("D", hyper.gamma_D0)):
                state.rates[key] = adapt_rates(state.rates[key], now[key], prev[key], g0, hyper.c_up,
                                               hyper.c_down)
        r = state.rates
        old = state.natural
        mu = np.mod(old.mu + r["mu"] * m["mu"], TWO_PI)
        kappa = np.maximum(old.kappa + r["kappa"] * m["kappa"], hyper.kappa_floor)
        D = apply_mask(old.D + r["D"] * m["D"])
        nat = NaturalParams(mu, kappa, D)
        delta = {"mu": r["mu"] * m["mu"], "kappa": kappa - old.kappa, "D": D - old.D}
        state.natural_deltas = (state.natural_deltas + [delta])[-2:]
        norms = {k: float(np.linalg.norm(v)) for k, v in delta.items()}
        new_can = canonical_from_natural(nat)

    state.natural = nat
    state.canonical = new_can
    state.canonical_deltas = (state.canonical_deltas + [to_vector(new_can) - old_vec])[-2:]
    state.iteration += 1
    if state.iteration >= 3 and len(state.canonical_deltas) == 2:
        state.q = update_q(state.q, state.canonical_deltas[-1], state.canonical_deltas[-2], ridged,
                           hyper.beta(n), state.N)

    if feasible.any():
        i = int(np.argmax(np.where(feasible, density, -np.inf)))
        it_max = float(density[i])
        if it_max > state.best_density:
            state.best_density, state.best_x, state.best_violation = it_max, X[i].copy(), float(dist[i])
    else:
        it_max = 0.0
    with np.errstate(divide="ignore"):
        mean_density = float(np.mean(problem.density_scale / F))

    state.last_fisher, state.last_step, state.last_lambda = ridged, step, lam
    state.last_F, state.last_feasible, state.last_selected = F, feasible, selected
    state.last_stats_mean = T.mean(axis=0)
    state.rows.append({
        "iter": state.iteration, "mean_density": mean_density, "max_density": it_max,
        "best_density": state.best_density, "q": state.q, "feasible_frac": float(feasible.mean()),
        "lambda_min": lam, "step_norm_mu": norms["mu"], "step_norm_kappa": norms["kappa"],
        "step_norm_D": norms["D"],
    })
    return state


def optimize(problem: Problem, hyper: Hyperparams, seed, workers: int = 1,
             callback: Callable[[OptimizerState], None] | None = None,
             iterations: int | None = None) -> RunRecord:
    """Run ``hyper.iterations`` iterations from the uniform distribution on the torus."""
    start = time.perf_counter()
    state = OptimizerState.initial(problem.n, hyper)
    total = hyper.iterations if iterations is None else iterations
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for _ in range(total):
            iterate(state, problem, hyper, seed, pool)
            if callback is not None:
                callback(state)
    finally:
        if pool is not None:
            pool.shutdown()
    return RunRecord(state.rows, state.best_x, state.best_density, state.best_violation,
                     time.perf_counter() - start, seed, hyper.resolved(problem.n), problem.describe())


@dataclass
class RefineRecord:
    run_best: list            # best density after each refinement run (carried forward)
    runs: list                # RunRecord per refinement run
    best_x: np.ndarray
    best_density: float
    best_violation: float


def refine_bounds(lower, upper, best, r: int, c_eps: float):
    """Bounds of refinement run ``r``: a box of half-width ``(1/c_eps)^r (u - l)`` around ``best``, clipped."""
    lo, hi, b = (np.asarray(v, dtype=float) for v in (lower, upper, best))
    eps = (1.0 / c_eps) ** r * (hi - lo)
    return np.maximum(b - eps, lo), np.minimum(b + eps, hi)


def refine(problem: Problem, hyper: Hyperparams, best_x, runs: int, seed, best_density: float = 0.0,
           best_violation: float = float("nan"), workers: int = 1, iterations: int | None = None,
           target: float | None = None,
           callback: Callable[[int, RunRecord, "RefineRecord"], None] | None = None) -> RefineRecord:
    """Restart the search in geometrically shrinking boxes around the incumbent.

    Every shrunk variable is treated as aperiodic.  The incumbent is only
    replaced by a strictly denser feasible design, so the best density is
    non-decreasing over runs.  Stops early once ``target`` is reached.
    """
    best_x = np.asarray(best_x, dtype=float)
    lo0, hi0 = problem.lower, problem.upper
    if np.any(best_x < lo0 - 1e-9) or np.any(best_x > hi0 + 1e-9):
        raise ValueError("best_x lies outside the problem bounds")
    record = RefineRecord([], [], best_x.copy(), float(best_density), float(best_violation))
    for r in range(1, runs + 1):
        lo, hi = refine_bounds(lo0, hi0, record.best_x, r, hyper.c_eps)
        sub = problem.with_bounds(lo, hi, np.zeros(problem.n, dtype=bool))
        run = optimize(sub, hyper, _seed_tuple(seed) + (r,), workers=workers, iterations=iterations)
        if run.best_x is not None and run.best_density > record.best_density:
            record.best_x, record.best_density, record.best_violation = (run.best_x.copy(), run.best_density,
                                                                         run.best_violation)
        record.run_best.append(record.best_density)
        record.runs.append(run)
        if callback is not None:
            callback(r, run, record)
        if target is not None and record.best_density >= target:
            break
    return record
