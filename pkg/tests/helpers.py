"""Independent oracles used across the test modules.

These deliberately avoid the library's Wolfe solver and event-driven
integrator: the least-norm point comes from a penalized NNLS solve (or a
barycentric grid scan), and the fluid path from plain forward Euler with
a pure-Python inner loop.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np
from scipy.optimize import nnls


def least_norm_nnls(V: np.ndarray) -> np.ndarray:
    """Least-norm point of Conv(rows of V) via penalized NNLS."""
    V = np.asarray(V, dtype=float)
    k = V.shape[0]
    rho = 1e7 * max(1.0, float(np.abs(V).max()))
    A = np.vstack([V.T, rho * np.ones((1, k))])
    b = np.concatenate([np.zeros(V.shape[1]), [rho]])
    w, _ = nnls(A, b)
    s = w.sum()
    w = w / s if s > 0 else np.full(k, 1.0 / k)
    return w @ V


def least_norm_grid(V: np.ndarray, step: float = 1e-3) -> np.ndarray:
    """Brute-force scan of barycentric weights (practical up to 3 vertices)."""
    V = np.asarray(V, dtype=float)
    k = V.shape[0]
    m = int(round(1.0 / step))
    if k == 1:
        return V[0]
    if k == 2:
        t = np.arange(m + 1) / m
        pts = np.outer(1 - t, V[0]) + np.outer(t, V[1])
        return pts[np.argmin(np.einsum("ij,ij->i", pts, pts))]
    if k == 3:
        i = np.arange(m + 1)
        a, b = np.meshgrid(i, i, indexing="ij")
        keep = a + b <= m
        a, b = a[keep] / m, b[keep] / m
        c = 1.0 - a - b
        pts = a[:, None] * V[0] + b[:, None] * V[1] + c[:, None] * V[2]
        return pts[np.argmin(np.einsum("ij,ij->i", pts, pts))]
    raise ValueError("grid oracle supports at most 3 vertices")


def euler_fluid(net, lam, q0, T: float, h: float = 1e-4, sample_times=None):
    """Forward Euler on the least-norm drift, clamped to the orthant.

    The drift at each step is recomputed from the active set via the NNLS
    oracle (cached per active set, which is a small bitmask).  Returns the
    states at ``sample_times`` (default: the step grid).
    """
    assert np.all(net.weights == 1.0), "oracle covers unit-weight instances"
    rows = [tuple(r) for r in net.drift_rows]
    k = len(rows)
    n = net.n
    cands = np.asarray(lam, dtype=float) + (net.routing - np.eye(n)) @ net.actions.T
    cands = cands.T  # candidate drifts per action
    drift_cache: dict[int, tuple] = {}

    if sample_times is None:
        sample_times = np.arange(0.0, T + h / 2, h)
    sample_times = np.asarray(sample_times, dtype=float)
    out = np.empty((len(sample_times), n))

    x = [float(v) for v in np.asarray(q0, dtype=float)]
    steps = int(round(T / h))
    si = 0
    t = 0.0
    tol = 1e-9
    for stepi in range(steps + 1):
        while si < len(sample_times) and sample_times[si] <= t + h / 2:
            out[si] = x
            si += 1
        if si >= len(sample_times):
            break
        obj = [sum(r[j] * x[j] for j in range(n)) for r in rows]
        m = max(obj)
        mask = 0
        for i in range(k):
            if obj[i] >= m - tol:
                mask |= 1 << i
        drift = drift_cache.get(mask)
        if drift is None:
            active = [i for i in range(k) if mask & (1 << i)]
            drift = tuple(least_norm_nnls(cands[active]))
            drift_cache[mask] = drift
        x = [max(x[j] + h * drift[j], 0.0) for j in range(n)]
        t += h
    while si < len(sample_times):
        out[si] = x
        si += 1
    return sample_times, out


def vertex_projection_oracle(normals, offsets, x, span_vectors):
    """Projection onto a polyhedron known to be cone(span) via closed form.

    Only used for the rays arising in the worked examples: projects onto
    each ray and returns the best feasible candidate (origin included).
    """
    x = np.asarray(x, dtype=float)
    best = np.zeros_like(x)
    bestd = float(np.linalg.norm(x))
    for u in span_vectors:
        u = np.asarray(u, dtype=float)
        u = u / np.linalg.norm(u)
        p = max(float(x @ u), 0.0) * u
        d = float(np.linalg.norm(x - p))
        if d < bestd:
            best, bestd = p, d
    return best, bestd


def enumerate_membership(target, vertices, M, step=0.02) -> bool:
    """Coarse grid check of target in M Conv(vertices) (tiny vertex sets)."""
    V = np.asarray(vertices, dtype=float) @ np.asarray(M, dtype=float).T
    k = V.shape[0]
    m = int(round(1.0 / step))
    grid = [w for w in combinations(range(m + k), k - 1)]
    # stars-and-bars enumeration of weights summing to m
    for bars in grid:
        w = []
        prev = -1
        for b in bars:
            w.append(b - prev - 1)
            prev = b
        w.append(m + k - 1 - prev - 1)
        w = np.asarray(w, dtype=float) / m
        if np.linalg.norm(w @ V - target) < step * 2:
            return True
    return False
