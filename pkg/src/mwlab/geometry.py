"""Polyhedral and convex numerics shared by the fluid model and experiments.

Three primitives, each small and certified:

* least-norm point of a polytope given by vertices (Wolfe's active-set
  method, with convex-coefficient certificate),
* Euclidean projection onto an intersection of half-spaces (cyclic Dykstra
  iterations, with a vectorized batch variant),
* membership of a point in the linear image of a polytope (phase-1 dense
  simplex with Bland's rule; returns mixing weights or a strictly
  separating affine functional).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NumericFailureError(RuntimeError):
    """An iterative routine stopped before reaching its tolerance.

    Carries the best iterate found so far in ``best`` and, for projections,
    the per-half-space residuals in ``residuals``.
    """

    def __init__(self, message: str, best=None, residuals=None):
        super().__init__(message)
        self.best = best
        self.residuals = residuals


@dataclass(frozen=True)
class Polyhedron:
    """Intersection of half-spaces {x : normals[i] @ x <= offsets[i]}.

    The representation may be redundant; no minimality is required.
    """

    normals: np.ndarray  # (m, n)
    offsets: np.ndarray  # (m,)

    def __post_init__(self):
        normals = np.atleast_2d(np.asarray(self.normals, dtype=float))
        offsets = np.atleast_1d(np.asarray(self.offsets, dtype=float))
        if normals.shape[0] != offsets.shape[0]:
            raise ValueError("one offset per half-space required")
        if not np.all(np.isfinite(normals)):
            raise ValueError("half-space normals must be finite")
        normals.setflags(write=False)
        offsets.setflags(write=False)
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "offsets", offsets)

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    def residuals(self, x: np.ndarray) -> np.ndarray:
        """Signed constraint values g@x - b (<= 0 means satisfied)."""
        return self.normals @ np.asarray(x, dtype=float) - self.offsets

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        return bool(np.all(self.residuals(x) <= tol))

    def halfspace_distances(self, x: np.ndarray) -> np.ndarray:
        """Euclidean distance of x to each individual half-space."""
        norms = np.linalg.norm(self.normals, axis=1)
        norms = np.where(norms == 0.0, 1.0, norms)
        return np.maximum(self.residuals(x), 0.0) / norms


@dataclass(frozen=True)
class Polytope:
    """Convex hull of a finite, non-empty vertex list."""

    vertices: np.ndarray  # (k, n)

    def __post_init__(self):
        verts = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if verts.shape[0] == 0:
            raise ValueError("polytope needs at least one vertex")
        verts.setflags(write=False)
        object.__setattr__(self, "vertices", verts)


@dataclass(frozen=True)
class MinNormCertificate:
    """Least-norm point of a polytope plus the convex weights realizing it."""

    point: np.ndarray  # (n,)
    coefficients: np.ndarray  # (k,), aligned with the input vertex order

    def reconstruction_error(self, polytope: Polytope) -> float:
        return float(
            np.linalg.norm(self.coefficients @ polytope.vertices - self.point)
        )


def _affine_minimizer(C: np.ndarray) -> np.ndarray:
    """Coefficients of the min-norm point over the affine hull of rows of C."""
    k = C.shape[0]
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = C @ C.T
    kkt[:k, k] = 1.0
    kkt[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    return sol[:k]


def min_norm_point(polytope: Polytope, tol: float = 1e-10) -> MinNormCertificate:
    """Euclidean least-norm point of a polytope (Wolfe's method).

    Exact on one- and two-vertex inputs.  Raises
    :class:`NumericFailureError` (carrying the best iterate) if the major
    cycle cap of 10*k^2 is exceeded, which does not happen on the small
    vertex sets arising here.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    V = polytope.vertices
    k, n = V.shape

    if k == 1:
        return MinNormCertificate(point=V[0].copy(), coefficients=np.ones(1))
    if k == 2:
        d = V[0] - V[1]
        dd = float(d @ d)
        if dd == 0.0:
            return MinNormCertificate(point=V[0].copy(), coefficients=np.array([1.0, 0.0]))
        # minimize ||V0 + t (V1 - V0)|| over t in [0, 1]
        t = min(max(float(V[0] @ d) / dd, 0.0), 1.0)
        w = np.array([1.0 - t, t])
        return MinNormCertificate(point=w @ V, coefficients=w)

    scale = max(1.0, float(np.max(np.abs(V))) ** 2)
    start = int(np.argmin(np.linalg.norm(V, axis=1)))
    support = [start]
    weights = np.array([1.0])
    x = V[start].copy()

    max_major = 10 * k * k
    for _ in range(max_major):
        inner = V @ x
        xx = float(x @ x)
        j = int(np.argmin(inner))
        if inner[j] >= xx - tol * scale:
            coeffs = np.zeros(k)
            coeffs[support] = weights
            return MinNormCertificate(point=x, coefficients=coeffs)
        if j not in support:
            support.append(j)
            weights = np.append(weights, 0.0)

        # minor cycles: pull the affine minimizer back into the simplex
        while True:
            C = V[support]
            alpha = _affine_minimizer(C)
            if np.all(alpha > -tol):
                x = np.clip(alpha, 0.0, None) @ C
                weights = np.clip(alpha, 0.0, None)
                s = weights.sum()
                if s > 0:
                    weights = weights / s
                break
            neg = alpha < -tol
            theta = np.min(weights[neg] / (weights[neg] - alpha[neg]))
            weights = (1.0 - theta) * weights + theta * alpha
            weights = np.clip(weights, 0.0, None)
            drop = int(np.argmin(weights))
            support.pop(drop)
            weights = np.delete(weights, drop)
            s = weights.sum()
            if s > 0:
                weights = weights / s
            x = weights @ V[support]

    coeffs = np.zeros(k)
    coeffs[support] = weights
    raise NumericFailureError(
        f"least-norm iteration cap {max_major} exceeded",
        best=MinNormCertificate(point=x, coefficients=coeffs),
    )


def project(
    poly: Polyhedron,
    x: np.ndarray,
    tol: float = 1e-9,
    max_cycles: int = 100_000,
) -> np.ndarray:
    """Project x onto the polyhedron by cyclic Dykstra iterations.

    Stops when the point moves less than ``tol`` over a full cycle and all
    half-space residuals are within ``tol``.
    """
    p = project_many(poly, np.asarray(x, dtype=float)[None, :], tol=tol, max_cycles=max_cycles)
    return p[0]


def project_many(
    poly: Polyhedron,
    X: np.ndarray,
    tol: float = 1e-9,
    max_cycles: int = 100_000,
) -> np.ndarray:
    """Vectorized Dykstra projection of each row of X onto the polyhedron."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    m = poly.normals.shape[0]
    norms2 = np.einsum("ij,ij->i", poly.normals, poly.normals)
    P = X.copy()
    corrections = np.zeros((m, *X.shape))
    for _ in range(max_cycles):
        start = P.copy()
        for i in range(m):
            if norms2[i] == 0.0:
                continue
            y = P + corrections[i]
            viol = np.maximum(y @ poly.normals[i] - poly.offsets[i], 0.0) / norms2[i]
            newP = y - viol[:, None] * poly.normals[i]
            corrections[i] = y - newP
            P = newP
        moved = np.max(np.abs(P - start))
        feas = np.max(P @ poly.normals.T - poly.offsets, initial=0.0)
        if moved < tol and feas <= tol:
            return P
    res = P @ poly.normals.T - poly.offsets
    raise NumericFailureError(
        f"Dykstra cycle cap {max_cycles} exceeded", best=P, residuals=res
    )


def distance(poly: Polyhedron, x: np.ndarray, tol: float = 1e-9) -> float:
    return float(np.linalg.norm(np.asarray(x, dtype=float) - project(poly, x, tol=tol)))


def distance_many(
    poly: Polyhedron, X: np.ndarray, tol: float = 1e-7, chunk: int = 200_000
) -> np.ndarray:
    """Distances of many points to the polyhedron, chunked to bound memory."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.empty(X.shape[0])
    for lo in range(0, X.shape[0], chunk):
        hi = min(lo + chunk, X.shape[0])
        P = project_many(poly, X[lo:hi], tol=tol)
        out[lo:hi] = np.linalg.norm(X[lo:hi] - P, axis=1)
    return out


@dataclass(frozen=True)
class MembershipResult:
    """Outcome of an lp_membership query.

    On feasible queries ``weights`` holds convex coefficients over the
    polytope vertices with ``weights @ (M V) == target``.  On infeasible
    queries ``certificate = (c, c0)`` satisfies c@(M v) + c0 <= 0 for every
    vertex v while c@target + c0 > 0.
    """

    feasible: bool
    weights: np.ndarray | None = None
    certificate: tuple[np.ndarray, float] | None = None
    margin: float = field(default=0.0)


def _phase1_simplex(A: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Minimize the sum of artificials for A x = b, x >= 0 (Bland's rule).

    Returns (objective, x, y) where y is the dual vector of the phase-1
    optimum, recovered from the reduced costs of the artificial columns.
    """
    m, k = A.shape
    sign = np.where(b < 0, -1.0, 1.0)
    A = A * sign[:, None]
    b = b * sign

    T = np.zeros((m + 1, k + m + 1))
    T[:m, :k] = A
    T[:m, k : k + m] = np.eye(m)
    T[:m, -1] = b
    # phase-1 costs: artificials cost 1; express objective row in reduced form
    T[m, :k] = -A.sum(axis=0)
    T[m, -1] = -b.sum()
    basis = list(range(k, k + m))

    max_pivots = 10_000
    for _ in range(max_pivots):
        # Bland: entering = lowest-index column with negative reduced cost
        enter = -1
        for j in range(k + m):
            if T[m, j] < -1e-11:
                enter = j
                break
        if enter < 0:
            break
        ratios = np.full(m, np.inf)
        col = T[:m, enter]
        pos = col > 1e-12
        ratios[pos] = T[:m, -1][pos] / col[pos]
        if not np.any(pos):
            break  # unbounded cannot occur in phase 1; bail defensively
        leave = -1
        best = np.inf
        for i in range(m):
            if pos[i] and (ratios[i] < best - 1e-15 or (abs(ratios[i] - best) <= 1e-15 and (leave < 0 or basis[i] < basis[leave]))):
                best = ratios[i]
                leave = i
        piv = T[leave, enter]
        T[leave] /= piv
        for i in range(m + 1):
            if i != leave and T[i, enter] != 0.0:
                T[i] -= T[i, enter] * T[leave]
        basis[leave] = enter
    else:
        raise NumericFailureError("phase-1 simplex pivot cap exceeded")

    objective = -T[m, -1]
    x = np.zeros(k)
    for i, var in enumerate(basis):
        if var < k:
            x[var] = T[i, -1]
    # duals: reduced cost of artificial j is 1 - y_j in original row signs
    y = (1.0 - T[m, k : k + m]) * sign
    return objective, x, y


def lp_membership(target: np.ndarray, polytope: Polytope, M: np.ndarray) -> MembershipResult:
    """Decide whether target lies in M @ Conv(vertices).

    Solves the equality system sum_i a_i (M v_i) = target, sum a_i = 1,
    a >= 0 by phase-1 simplex.  Bland's rule guards against cycling.
    """
    target = np.asarray(target, dtype=float)
    M = np.asarray(M, dtype=float)
    V = polytope.vertices
    images = V @ M.T  # rows M v_i
    n = target.shape[0]

    A = np.vstack([images.T, np.ones((1, V.shape[0]))])
    b = np.concatenate([target, [1.0]])
    scale = max(1.0, float(np.max(np.abs(A))), float(np.max(np.abs(b))))
    objective, x, y = _phase1_simplex(A / scale, b / scale)

    if objective <= 1e-9:
        w = np.clip(x, 0.0, None)
        s = w.sum()
        if s > 0:
            w = w / s
        return MembershipResult(feasible=True, weights=w)

    c, c0 = y[:n], float(y[n])
    vertex_vals = images @ c + c0
    target_val = float(c @ target + c0)
    margin = target_val - float(np.max(vertex_vals))
    if not (target_val > 0 >= np.max(vertex_vals) + 1e-9) and margin <= 0:
        raise NumericFailureError("simplex returned an invalid separation certificate")
    return MembershipResult(feasible=False, certificate=(c, c0), margin=margin)


def hoffman_estimate(
    poly: Polyhedron,
    samples: int,
    seed: int,
    box_halfwidth: float = 5.0,
    tol: float = 1e-9,
) -> float:
    """Empirical lower bound on the Hoffman constant of a polyhedron.

    Samples points uniformly in [-w, w]^n, skips points inside the
    polyhedron, and returns the max of d(x, poly) / max_i d(x, H_i).
    """
    if samples < 100:
        raise ValueError("need at least 100 samples")
    rng = np.random.Generator(np.random.Philox(key=seed))
    X = rng.uniform(-box_halfwidth, box_halfwidth, size=(samples, poly.dim))
    best = 0.0
    for x in X:
        hs = poly.halfspace_distances(x)
        worst = float(np.max(hs))
        if worst <= tol:
            continue  # inside (or on) the polyhedron
        d = distance(poly, x, tol=tol)
        best = max(best, d / worst)
    return best
