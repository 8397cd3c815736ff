"""Independent reference implementations used only by the tests."""
import math

import numpy as np


def shoelace(v):
    x, y = np.asarray(v, dtype=float).T
    return 0.5 * abs(sum(x[i] * y[(i + 1) % len(x)] - x[(i + 1) % len(x)] * y[i] for i in range(len(x))))


def random_design(group, diameter, rng, length_bound="2d"):
    vs = group.design_variables(diameter, length_bound)
    x = np.array([rng.uniform(v.lower, v.upper) for v in vs])
    names = group.variable_names
    for k in ("b1", "b2"):
        if k in names:
            x[names.index(k)] = rng.uniform(0.3, 1.0) * vs[names.index(k)].upper
    if "omega_c" in names:
        i = names.index("omega_c")
        x[i] = rng.uniform(vs[i].lower + 0.2, vs[i].upper - 0.2)
    return x


def _inside(p, poly):
    """Point strictly inside a convex polygon (either orientation)."""
    n = len(poly)
    signs = []
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        signs.append((b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]))
    signs = np.array(signs)
    return bool(np.all(signs > 1e-12) or np.all(signs < -1e-12))


def _segments_cross(p1, p2, q1, q2):
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return d1 * d2 < 0 and d3 * d4 < 0


def convex_intersect(P, Q):
    """Interiors overlap: a vertex inside the other polygon or two edges properly crossing."""
    if any(_inside(p, Q) for p in P) or any(_inside(q, P) for q in Q):
        return True
    for i in range(len(P)):
        for j in range(len(Q)):
            if _segments_cross(P[i], P[(i + 1) % len(P)], Q[j], Q[(j + 1) % len(Q)]):
                return True
    return False


def _point_segment(p, a, b):
    ab = b - a
    t = float(np.dot(p - a, ab) / np.dot(ab, ab))
    tc = min(max(t, 0.0), 1.0)
    return math.hypot(*(a + tc * ab - p)), 1e-9 < t < 1 - 1e-9


def nearest_feature_distance(P, Q):
    """Euclidean distance between disjoint polygons from all vertex-to-edge distances.

    Also reports whether the nearest pair is a vertex against the interior of an edge.
    """
    best, interior = np.inf, False
    for A, B in ((P, Q), (Q, P)):
        for p in A:
            for j in range(len(B)):
                d, inner = _point_segment(p, B[j], B[(j + 1) % len(B)])
                if d < best - 1e-12:
                    best, interior = d, inner
                elif abs(d - best) <= 1e-12:
                    interior = interior or inner
    return best, interior


def circle_grid(k=4096):
    """Uniform trapezoid nodes on [0, 2pi) (exact for trigonometric polynomials)."""
    return np.arange(k) * (2 * math.pi / k)


def gvm2_pdf(t, g1, n1, g2, n2, k=4096):
    """Normalised order-2 generalised von Mises density by trapezoid quadrature."""
    grid = circle_grid(k)
    logf = lambda x: g1 * np.cos(x - n1) + g2 * np.cos(2 * (x - n2))
    z = np.exp(logf(grid)).mean() * 2 * math.pi
    return np.exp(logf(np.asarray(t))) / z


def gvm2_cdf(t, g1, n1, g2, n2, k=20000):
    grid = np.linspace(0, 2 * math.pi, k + 1)
    f = gvm2_pdf(grid, g1, n1, g2, n2)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(grid))])
    cdf /= cdf[-1]
    return np.interp(t, grid, cdf)


def sine_model_conditional(theta_other, mu, kappa, lam, mu_other):
    """theta_1 | theta_2 under exp{k1 cos(t1-m1) + k2 cos(t2-m2) + lam sin(t1-m1) sin(t2-m2)}."""
    b = lam * math.sin(theta_other - mu_other)
    return math.hypot(kappa, b), (mu + math.atan2(b, kappa)) % (2 * math.pi)


def torus2_cell_probs(logf, bins, sub=8):
    """Cell probabilities of a 2-torus density on a bins x bins grid (midpoint sub-grid quadrature)."""
    k = bins * sub
    g = (np.arange(k) + 0.5) * (2 * math.pi / k)
    T1, T2 = np.meshgrid(g, g, indexing="ij")
    f = np.exp(logf(T1, T2))
    cells = f.reshape(bins, sub, bins, sub).sum(axis=(1, 3))
    return cells / cells.sum()


def vm_fisher_quadrature(kappa, mu=0.0, k=4096):
    """Covariance of (cos, sin) under von Mises(mu, kappa) by trapezoid quadrature."""
    g = circle_grid(k)
    f = np.exp(kappa * np.cos(g - mu))
    f /= f.sum()
    t = np.stack([np.cos(g), np.sin(g)])
    m = t @ f
    return (t * f) @ t.T - np.outer(m, m)


def successive_minima(lattice, k=30):
    """Lengths of the two shortest linearly independent lattice vectors by enumeration."""
    b1, b2 = np.asarray(lattice, dtype=float)
    vecs = [u1 * b1 + u2 * b2 for u1 in range(-k, k + 1) for u2 in range(-k, k + 1) if (u1, u2) != (0, 0)]
    vecs.sort(key=lambda v: float(np.hypot(*v)))
    first = vecs[0]
    for v in vecs[1:]:
        if abs(first[0] * v[1] - first[1] * v[0]) > 1e-12 * max(1.0, float(v @ v)):
            return float(np.hypot(*first)), float(np.hypot(*v))
    raise ValueError("degenerate lattice")
