"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``criterion k: PASS|FAIL`` line (collected again in the terminal summary).
Criteria 1-3 are full-length optimisation runs and take hours on a single core; the
multi-seed ones stop as soon as the pass/fail outcome is decided.
"""
import math
import os

import numpy as np
import pytest
from scipy import special, stats

from csgpack.geometry import (
    Placement, decode_configuration, packing_density, packing_violation, pair_distance, rotation_matrix,
)
from csgpack.groups import GROUPS
from csgpack.optimizer import (
    Hyperparams, OptimizerState, Problem, estimate_fisher, iterate, optimize, refine,
)
from csgpack.polygon import load_polygon, polygon_area
from csgpack.torus import (
    CanonicalParams, NaturalParams, apply_mask, canonical_from_natural, free_mask, gibbs_sample,
    natural_from_canonical, sample_gvm2, stat_dim, sufficient_statistic, tangent_transform,
)

from conftest import record_criterion
from oracles import (
    convex_intersect, nearest_feature_distance, random_design, shoelace, torus2_cell_probs,
    vm_fisher_quadrature,
)

TWO_PI = 2 * math.pi
SEEDS = (1, 2, 3, 4, 5)


def rng_for(seed):
    return np.random.Generator(np.random.Philox(seed))


def workers():
    return int(os.environ.get("PACK_WORKERS") or os.cpu_count() or 1)


def k_of_n(seeds, k, trial):
    """Run ``trial(seed) -> (ok, note)`` until ``k`` passes or too many failures decide the outcome."""
    notes, passed, failed = [], 0, 0
    for seed in seeds:
        ok, note = trial(seed)
        notes.append(f"seed {seed}: {note}")
        passed += ok
        failed += not ok
        if passed >= k or failed > len(seeds) - k:
            break
    return passed >= k, notes


# ---------------------------------------------------------------- 1: octagon p2

@pytest.mark.slow
def test_criterion_1_octagon_p2():
    prob = Problem.create(GROUPS["p2"], load_polygon("octagon"))
    hyper = Hyperparams()
    assert hyper.batch(prob.n) == 600 and hyper.iterations == 8000

    def trial(seed):
        rec = optimize(prob, hyper, seed, workers=workers())
        # beta depends on the horizon constant, not on the run length, so the first 4000
        # iterations of the full run are exactly the reduced run
        at_4000 = rec.rows[3999]["best_density"]
        ok = rec.best_density >= 0.885 and at_4000 >= 0.87
        return ok, f"best {rec.best_density:.6f}, best by iteration 4000 {at_4000:.6f}"

    ok, notes = k_of_n(SEEDS, 3, trial)
    record_criterion(1, ok, "p2 octagon >= 0.885 (and >= 0.87 by iteration 4000) in 3 of 5 seeds; "
                     + "; ".join(notes))
    assert ok


# ---------------------------------------------------------------- 2: tiling shapes

@pytest.mark.slow
@pytest.mark.parametrize("group,shape", [("p3", "hexagon"), ("p6mm", "triangle_30_60_90"),
                                         ("p4", "cairo_pentagon")])
def test_criterion_2_tilings(group, shape):
    prob = Problem.create(GROUPS[group], load_polygon(shape))
    hyper = Hyperparams(c_eps=1.2)
    seed = 1
    rec = optimize(prob, hyper, seed, workers=workers())
    initial_ok = rec.best_density >= 0.95
    refined = rec.best_density
    n_runs = 0
    if rec.best_x is not None:
        res = refine(prob, hyper, rec.best_x, runs=15, seed=seed, best_density=rec.best_density,
                     best_violation=rec.best_violation, workers=workers(), iterations=2000, target=0.999)
        refined, n_runs = res.best_density, len(res.run_best)
    ok = initial_ok and refined >= 0.999
    record_criterion(2, ok, f"{group} {shape}: initial {rec.best_density:.8f} (>= 0.95), "
                     f"refined {refined:.8f} after {n_runs} runs (>= 0.999)")
    assert ok


# ---------------------------------------------------------------- 3: pentagon pg, heptagon p2gg

@pytest.mark.slow
@pytest.mark.parametrize("group,shape,optimum", [("pg", "pentagon", 0.92131060),
                                                   ("p2gg", "heptagon", 0.89269067)])
def test_criterion_3_pentagon_heptagon(group, shape, optimum):
    prob = Problem.create(GROUPS[group], load_polygon(shape))
    hyper = Hyperparams()

    def trial(seed):
        rec = optimize(prob, hyper, seed, workers=workers())
        return optimum - rec.best_density <= 0.03, f"best {rec.best_density:.6f}"

    ok, notes = k_of_n(SEEDS, 3, trial)
    record_criterion(3, ok, f"{group} {shape} within 0.03 of {optimum} in 3 of 5 seeds; " + "; ".join(notes))
    assert ok


# ---------------------------------------------------------------- 4: samplers

def test_criterion_4_samplers():
    x = gibbs_sample(CanonicalParams.zeros(6), 10_000, 100, rng_for(7))
    ks = [stats.kstest(x[:, k], "uniform", args=(0, TWO_PI)).pvalue for k in range(6)]
    uniform_ok = min(ks) > 0.01

    lam = 0.6
    D = np.zeros((4, 4))
    D[2, 3] = D[3, 2] = lam
    nat = NaturalParams(np.array([1.0, 4.0]), np.array([2.0, 2.0]), D)

    def logf(t1, t2):
        return 2 * np.cos(t1 - 1.0) + 2 * np.cos(t2 - 4.0) + lam * np.sin(t1 - 1.0) * np.sin(t2 - 4.0)
    y = gibbs_sample(canonical_from_natural(nat), 10_000, 100, rng_for(8))
    bins = 50
    edges = np.linspace(0, TWO_PI, bins + 1)
    counts = np.histogram2d(y[:, 0], y[:, 1], bins=[edges, edges])[0].ravel()
    expected = torus2_cell_probs(logf, bins).ravel() * counts.sum()
    small = expected < 5
    p_chi2 = stats.chisquare(np.append(counts[~small], counts[small].sum()),
                             np.append(expected[~small], expected[small].sum())).pvalue

    N = 100_000
    z = sample_gvm2(2.0, 1.0, 0.0, 0.0, rng_for(2), size=N)
    C = np.cos(z - 1.0)
    R = special.i1(2.0) / special.i0(2.0)
    moment_err = abs(C.mean() - R) / (C.std() / math.sqrt(N))

    ok = uniform_ok and p_chi2 > 0.01 and moment_err < 3
    record_criterion(4, ok, f"uniform KS min p {min(ks):.3f} (> 0.01), sine-submodel chi2 p {p_chi2:.3f} "
                     f"(> 0.01), von Mises mean resultant off by {moment_err:.2f} SE (< 3)")
    assert ok


# ---------------------------------------------------------------- 5: estimators

def test_criterion_5_estimators():
    N = 100_000
    nat = NaturalParams(np.array([0.7]), np.array([2.0]), np.zeros((2, 2)))
    F = estimate_fisher(sufficient_statistic(gibbs_sample(canonical_from_natural(nat), N, 1, rng_for(4))))
    fisher_err = np.abs(F - vm_fisher_quadrature(2.0, 0.7)).max()

    count = 20_000
    x = gibbs_sample(CanonicalParams.zeros(3), count, 1, rng_for(14))
    cov = np.cov(sufficient_statistic(x), rowvar=False)
    analytic = np.diag(np.r_[np.full(6, 0.5), np.full(stat_dim(3) - 6, 0.25)])
    cov_err = np.abs(cov - analytic).max()

    ok = fisher_err < 5 / math.sqrt(N) and cov_err < 5 / math.sqrt(count)
    record_criterion(5, ok, f"n=1 Fisher max error {fisher_err:.2e} (< {5 / math.sqrt(N):.2e}), "
                     f"uniform covariance max error {cov_err:.2e} (< {5 / math.sqrt(count):.2e})")
    assert ok


# ---------------------------------------------------------------- 6: geometry

def test_criterion_6_geometry():
    rng = np.random.default_rng(7)
    polys = [load_polygon(n) for n in ("octagon", "pentagon", "triangle_30_60_90", "cairo_pentagon")]
    sign_bad, dist_bad, n_dist = 0, 0, 0
    for k in range(1000):
        poly = polys[k % len(polys)]
        a = Placement(rotation_matrix(rng.uniform(0, TWO_PI)), rng.uniform(-1.5, 1.5, 2), 0)
        b = Placement(rotation_matrix(rng.uniform(0, TWO_PI)), rng.uniform(-1.5, 1.5, 2), 0)
        d = pair_distance(poly, a, b)
        va, vb = poly.placed(a.rotation, a.center), poly.placed(b.rotation, b.center)
        overlap = convex_intersect(va, vb)
        if abs(d) > 1e-9 and (d < 0) != overlap:
            sign_bad += 1
        if not overlap:
            true, vertex_edge = nearest_feature_distance(va, vb)
            if vertex_edge:
                n_dist += 1
                dist_bad += abs(d - true) >= 1e-9

    formula_err = 0.0
    for name, shape in [("p2", "octagon"), ("p6mm", "triangle_30_60_90"), ("pg", "pentagon"),
                        ("p2gg", "heptagon"), ("p3", "hexagon"), ("p4", "cairo_pentagon")]:
        group, poly = GROUPS[name], load_polygon(shape)
        formula_err = max(formula_err, abs(polygon_area(poly) - shoelace(poly.vertices)))
        for _ in range(50):
            cfg = decode_configuration(group, poly, random_design(group, poly.diameter, rng))
            b1, b2 = cfg.lattice
            oracle = group.order * shoelace(poly.vertices) / abs(b1[0] * b2[1] - b1[1] * b2[0])
            formula_err = max(formula_err, abs(packing_density(cfg) - oracle) / max(1.0, oracle))

    ok = sign_bad == 0 and dist_bad == 0 and n_dist > 0 and formula_err < 1e-12
    record_criterion(6, ok, f"sign disagreements {sign_bad}/1000, vertex-to-edge mismatches {dist_bad}/{n_dist}, "
                     f"area/density formula error {formula_err:.1e} (< 1e-12)")
    assert ok


# ---------------------------------------------------------------- 7: transforms

def test_criterion_7_transforms():
    rng = np.random.default_rng(0)
    worst = 0.0
    for k in range(100):
        n = 1 + k % 6
        nat = NaturalParams(rng.uniform(0, TWO_PI, n), rng.uniform(0.1, 10.0, n),
                            apply_mask(rng.normal(size=(2 * n, 2 * n))))
        back = natural_from_canonical(canonical_from_natural(nat))
        dmu = np.abs((back.mu - nat.mu + math.pi) % TWO_PI - math.pi).max()
        worst = max(worst, dmu, np.abs(back.kappa - nat.kappa).max(), np.abs(back.D - nat.D).max())

    ratios = []
    for n, seed in [(1, 0), (2, 1), (3, 2), (6, 3)]:
        r = np.random.default_rng(seed)
        at = NaturalParams(r.uniform(0, TWO_PI, n), r.uniform(0.5, 3.0, n), apply_mask(r.normal(size=(2 * n, 2 * n))))
        d_eta, dE = r.normal(size=2 * n), apply_mask(r.normal(size=(2 * n, 2 * n)))
        dmu, dk, dD = tangent_transform(d_eta, dE, at)
        base = canonical_from_natural(at)

        def err(h):
            moved = canonical_from_natural(NaturalParams(at.mu + h * dmu, at.kappa + h * dk, at.D + h * dD))
            return math.sqrt(np.sum((moved.eta - base.eta - h * d_eta) ** 2) + np.sum((moved.E - base.E - h * dE) ** 2))
        ratios.append(err(1e-2) / err(5e-3))

    ok = worst < 1e-10 and all(abs(q - 4.0) <= 0.5 for q in ratios)
    record_criterion(7, ok, f"round-trip max error {worst:.1e} (< 1e-10), Richardson ratios "
                     + ", ".join(f"{q:.3f}" for q in ratios) + " (4 +- 0.5)")
    assert ok


# ---------------------------------------------------------------- 8: mechanism invariants

def test_criterion_8_invariants(tmp_path):
    prob = Problem.create(GROUPS["p2"], load_polygon("octagon"))
    # a short horizon drives q to its cap within the run
    h = Hyperparams(batch_size=200, sweeps=20, shards=4, beta_horizon=5)
    state = OptimizerState.initial(prob.n, h)
    mask = free_mask(prob.n)
    failures = []
    best, q_hit_cap = 0.0, False
    for _ in range(30):
        q_before = state.q
        iterate(state, prob, h, seed=3)
        F, feas = state.last_F, state.last_feasible
        if feas.any() and (~feas).any() and not F[feas].max() < F[~feas].min():
            failures.append("feasibility dominance")
        if len(state.last_selected) != math.ceil(state.N / q_before):
            failures.append("quantile set size")
        if not 1.0 <= state.q <= state.N:
            failures.append("q range")
        q_hit_cap |= state.q == state.N
        if abs(state.last_step @ state.last_fisher @ state.last_step - state.last_lambda) > 1e-8 * state.last_lambda:
            failures.append("step metric norm")
        if np.any(state.natural.kappa < h.kappa_floor):
            failures.append("kappa floor")
        if np.any(state.natural.D[~mask] != 0.0) or np.any(state.natural.D != state.natural.D.T):
            failures.append("D mask")
        if state.best_density < best:
            failures.append("best-so-far monotone")
        best = state.best_density
    if not q_hit_cap:
        failures.append("q never reached N")

    logs = []
    for k, w in enumerate((1, 2, 4)):
        rec = optimize(prob, Hyperparams(batch_size=200, sweeps=20, shards=4), seed=11, workers=w, iterations=6)
        rec.write_csv(tmp_path / f"{k}.csv")
        logs.append(((tmp_path / f"{k}.csv").read_bytes(), rec.best_x))
    if not all(b == logs[0][0] and np.array_equal(x, logs[0][1]) for b, x in logs):
        failures.append("bit determinism across workers")

    ok = not failures
    record_criterion(8, ok, "30 iterations and 3 worker counts; "
                     + ("all invariants hold" if ok else "violated: " + ", ".join(sorted(set(failures)))))
    assert ok
