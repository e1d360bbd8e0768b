"""Exact fluid-model integration and the polyhedral fixed-point geometry.

The continuous-time companion of the discrete scheduler moves along the
least-norm element of { lam + (R - I) u : u in Conv(argmax actions) }, the
standard almost-everywhere derivative of the flow driven by the negated
subgradient of the piecewise-linear potential

    max over actions mu of ((I - R) mu) @ x  -  lam @ x.

Because the action set is closed under zeroing single components, the
argmax set at a boundary point already contains every partial-service
vector the dynamics need, so no separate reflection term appears: the
slack process is identically zero in this closed representation.  That is
the one deliberate modeling reduction in this module; the forward-Euler
oracle in the test suite and the descent/non-expansiveness invariants
pin it down.

Trajectories are integrated event-to-event and are exact piecewise-linear
objects: within a segment the drift is constant, and the next breakpoint
is the earliest time a non-active action's objective ties the running
maximum, found by solving linear equations in t.

Weighted instances reduce to unit-weight ones through the diagonal
rescaling map; integration happens in the transformed coordinates and is
mapped back, which keeps every certificate identity valid in the original
coordinates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import geometry
from .geometry import MinNormCertificate, Polyhedron, Polytope
from .netmodel import Network, TIE_TOL, wmw_to_mw

ABSORB_TOL = 1e-11
MAX_EVENTS = 1_000_000


class DomainError(ValueError):
    """An operation was asked outside its mathematical domain."""


class ExtremePointError(DomainError):
    """No collapse direction exists: the rate vector is an extreme point."""


@dataclass(frozen=True)
class PotentialEval:
    value: float  # max over actions of ((I-R) mu) @ x
    value_centered: float  # value - lam @ x, non-negative inside capacity
    active: np.ndarray  # indices of maximizing actions
    maximizers: np.ndarray  # the maximizing action vectors themselves


def potential(net: Network, lam, x) -> PotentialEval:
    """Piecewise-linear potential and its argmax set (ties within 1e-12)."""
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    obj = net.drift_rows @ x
    m = float(np.max(obj))
    active = np.flatnonzero(obj >= m - TIE_TOL)
    return PotentialEval(
        value=m,
        value_centered=m - float(lam @ x),
        active=active,
        maximizers=net.actions[active],
    )


@dataclass(frozen=True)
class DriftCertificate:
    """Least-norm drift with its convex-combination witness.

    ``drift = lam + (R - I) @ (coefficients @ active_actions)`` holds in the
    original coordinates even for weighted instances, where the least-norm
    selection itself is taken in the rescaled coordinates.
    """

    drift: np.ndarray
    coefficients: np.ndarray  # convex weights over the active actions
    active: np.ndarray  # indices into net.actions
    active_actions: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.drift))

    @property
    def absorbed(self) -> bool:
        return self.norm <= ABSORB_TOL


def _active_set(net: Network, q: np.ndarray) -> np.ndarray:
    """Argmax indices of q @ W (I - R) mu; identical to the scheduler's."""
    obj = net.objective_rows @ q
    m = np.max(obj)
    return np.flatnonzero(obj >= m - TIE_TOL * max(1.0, abs(m)))


def fluid_drift(net: Network, lam, q) -> DriftCertificate:
    """A.e. derivative of the unique fluid solution through q.

    Least-norm point of { lam + (R - I) u : u in Conv(active actions) },
    computed in the weight-rescaled coordinates for weighted instances.
    """
    q = np.asarray(q, dtype=float)
    lam = np.asarray(lam, dtype=float)
    active = _active_set(net, q)
    candidates = (lam[:, None] + (net.routing - np.eye(net.n)) @ net.actions[active].T).T
    w_sqrt = np.sqrt(net.weights)
    cert: MinNormCertificate = geometry.min_norm_point(Polytope(candidates * w_sqrt))
    drift = cert.point / w_sqrt
    return DriftCertificate(
        drift=drift,
        coefficients=cert.coefficients,
        active=active,
        active_actions=net.actions[active],
    )


@dataclass(frozen=True)
class FluidTrajectory:
    """Exact piecewise-linear fluid path as breakpoints plus segment drifts."""

    times: np.ndarray  # (m,), increasing, times[0] = 0
    states: np.ndarray  # (m, n)
    certificates: list  # DriftCertificate per segment, length m - 1
    absorbed: bool
    horizon: float

    @property
    def absorbed_time(self) -> float | None:
        return float(self.times[-1]) if self.absorbed else None

    def eval(self, t) -> np.ndarray:
        """State at time(s) t; constant beyond the last breakpoint."""
        t = np.asarray(t, dtype=float)
        out = np.empty(t.shape + (self.states.shape[1],))
        for i in range(self.states.shape[1]):
            out[..., i] = np.interp(t, self.times, self.states[:, i])
        return out

    def drift_at(self, t: float) -> np.ndarray:
        """Right drift at time t (zero beyond absorption / the horizon)."""
        if t >= self.times[-1]:
            return np.zeros(self.states.shape[1])
        j = int(np.searchsorted(self.times, t, side="right") - 1)
        return self.certificates[j].drift

    def to_csv(self, path) -> None:
        """Breakpoint rows t, q_1..q_n plus the drift on the leaving segment."""
        n = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["t"] + [f"q_{i+1}" for i in range(n)] + [f"drift_{i+1}" for i in range(n)]
            )
            for j, (t, x) in enumerate(zip(self.times, self.states)):
                drift = (
                    self.certificates[j].drift
                    if j < len(self.certificates)
                    else np.zeros(n)
                )
                writer.writerow(
                    [repr(float(t))]
                    + [repr(float(v)) for v in x]
                    + [repr(float(v)) for v in drift]
                )


def _integrate_unit(net: Network, lam: np.ndarray, q0: np.ndarray, T: float):
    """Event-driven integration for a unit-weight instance."""
    rows = net.drift_rows  # (k, n): objectives are rows @ x
    k = rows.shape[0]
    x = np.asarray(q0, dtype=float).copy()
    if np.min(x) < -1e-12:
        raise ValueError("initial state must be non-negative")
    x = np.maximum(x, 0.0)

    times = [0.0]
    states = [x.copy()]
    certs: list[DriftCertificate] = []
    t = 0.0
    absorbed = False

    for _ in range(MAX_EVENTS):
        cert = fluid_drift(net, lam, x)
        if cert.absorbed:
            absorbed = True
            break
        v = cert.drift

        obj = rows @ x
        m0 = float(np.max(obj))
        tol_tie = TIE_TOL * max(1.0, abs(m0))
        active_mask = obj >= m0 - tol_tie
        rates = rows @ v
        m_rate = float(np.max(rates[active_mask]))

        # earliest tie of a non-active objective with the running maximum
        t_event = np.inf
        gaps = m0 - obj
        closing = (~active_mask) & (rates > m_rate + 1e-13 * max(1.0, abs(m_rate)))
        if np.any(closing):
            t_candidates = gaps[closing] / (rates[closing] - m_rate)
            t_event = float(np.min(t_candidates))
        # boundary safety: mathematically redundant (a zeroed action ties
        # first), kept to stop any negative fp excursion
        falling = v < -1e-14
        if np.any(falling):
            t_bound = float(np.min(x[falling] / -v[falling]))
            t_event = min(t_event, t_bound)
        t_event = max(t_event, 0.0)

        dt = min(t_event, T - t)
        x = np.maximum(x + dt * v, 0.0)
        t = t + dt

        if certs and np.linalg.norm(v - certs[-1].drift) <= 1e-12 * (1.0 + cert.norm):
            # same drift as the previous segment: extend it (guards against
            # zero-length event loops at spurious ties)
            times[-1] = t
            states[-1] = x.copy()
        else:
            certs.append(cert)
            times.append(t)
            states.append(x.copy())

        if t >= T - 1e-15:
            break
    else:
        raise geometry.NumericFailureError(
            f"event cap {MAX_EVENTS} exceeded during fluid integration"
        )

    return np.asarray(times), np.asarray(states), certs, absorbed


def integrate_fluid(net: Network, lam, q0, T: float) -> FluidTrajectory:
    """Unique fluid solution from q0 on [0, T], exactly.

    The trajectory ends early, flagged ``absorbed``, when the drift
    vanishes; evaluation beyond the last breakpoint returns the final
    (fixed-point) state.
    """
    if T <= 0:
        raise ValueError("horizon T must be positive")
    lam = np.asarray(lam, dtype=float)
    if np.min(lam) < 0:
        raise ValueError("arrival rate must be non-negative")

    if net.is_unit_weight:
        times, states, certs, absorbed = _integrate_unit(net, lam, np.asarray(q0, float), T)
        return FluidTrajectory(times=times, states=states, certificates=certs,
                               absorbed=absorbed, horizon=T)

    tilde, tfm = wmw_to_mw(net)
    times, states, certs_t, absorbed = _integrate_unit(
        tilde, tfm.forward(lam), tfm.forward(q0), T
    )
    states = states / tfm.w_sqrt
    certs = []
    for c in certs_t:
        certs.append(
            DriftCertificate(
                drift=c.drift / tfm.w_sqrt,
                coefficients=c.coefficients,
                active=c.active,
                active_actions=net.actions[c.active],
            )
        )
    return FluidTrajectory(times=times, states=states, certificates=certs,
                           absorbed=absorbed, horizon=T)


@dataclass(frozen=True)
class InvariantSet:
    """Fluid fixed points: a polyhedral cone intersected with the orthant."""

    lam: np.ndarray
    poly: Polyhedron

    def contains(self, x, tol: float = 1e-9) -> bool:
        return self.poly.contains(x, tol=tol)

    def project(self, x, tol: float = 1e-9) -> np.ndarray:
        return geometry.project(self.poly, x, tol=tol)

    def distance(self, x, tol: float = 1e-9) -> float:
        return geometry.distance(self.poly, x, tol=tol)

    def distance_many(self, X, tol: float = 1e-7) -> np.ndarray:
        return geometry.distance_many(self.poly, X, tol=tol)


def capacity_check(net: Network, lam) -> str:
    """Position of lam relative to (I - R) Conv(actions).

    Returns "interior", "boundary", or "outside"; the boundary is detected
    by rescaling lam by (1 + 1e-6) and testing feasibility again.
    """
    lam = np.asarray(lam, dtype=float)
    if np.min(lam) < 0:
        raise ValueError("arrival rate must be non-negative")
    polytope = Polytope(net.actions)
    M = net.service_matrix
    base = geometry.lp_membership(lam, polytope, M)
    if not base.feasible:
        return "outside"
    bumped = geometry.lp_membership(lam * (1.0 + 1e-6), polytope, M)
    return "interior" if bumped.feasible else "boundary"


def invariant_set(net: Network, lam) -> InvariantSet:
    """Half-space description of the fluid fixed points for lam.

    Requires lam in the capacity region (the set is defined only there).
    For weighted instances the half-space normals carry the weight matrix,
    matching the rescaled-coordinates fixed points mapped back.
    """
    lam = np.asarray(lam, dtype=float)
    if capacity_check(net, lam) == "outside":
        raise DomainError("invariant set is defined only inside the capacity region")
    W = np.diag(net.weights)
    normals = [W @ (net.service_matrix @ mu - lam) for mu in net.actions]
    normals.extend(-np.eye(net.n))  # orthant: -x_i <= 0
    offsets = np.zeros(len(normals))
    return InvariantSet(lam=lam, poly=Polyhedron(np.asarray(normals), offsets))


def collapse_direction(net: Network, lam) -> np.ndarray:
    """A direction v with v @ x = 0 across the invariant set.

    Decomposes lam over the action images, picks two supported actions
    with distinct images, and returns the image of their difference.
    Raises ExtremePointError when no such pair exists (lam extreme).
    """
    lam = np.asarray(lam, dtype=float)
    if capacity_check(net, lam) == "outside":
        raise DomainError("lam must lie in the capacity region")
    res = geometry.lp_membership(lam, Polytope(net.actions), net.service_matrix)
    support = np.flatnonzero(res.weights > 1e-9)
    images = net.actions[support] @ net.service_matrix.T
    for ai in range(len(support)):
        for bi in range(ai + 1, len(support)):
            v = images[ai] - images[bi]
            if np.linalg.norm(v) > 1e-12:
                return v  # support is lex-descending, so mu >lex nu
    raise ExtremePointError("rate vector admits no two-action decomposition")


@dataclass(frozen=True)
class AttractionStats:
    alpha_hat: float  # minimum per-segment decay slope of d(q(t), I)
    slopes: np.ndarray
    absorption_times: np.ndarray  # inf where not absorbed within T


def attraction_rate(net: Network, lam, starts, T: float) -> AttractionStats:
    """Measured attraction of fluid paths to the invariant set.

    Integrates from each start, evaluates the set distance at breakpoints,
    and reports min over segments of -(delta d / delta t), restricted to
    segments leaving points with distance above 1e-8.
    """
    inv = invariant_set(net, lam)
    slopes: list[float] = []
    absorb: list[float] = []
    for q0 in starts:
        traj = integrate_fluid(net, lam, q0, T)
        d = np.array([inv.distance(x) for x in traj.states])
        for j in range(len(traj.times) - 1):
            if d[j] > 1e-8:
                dt = traj.times[j + 1] - traj.times[j]
                if dt > 0:
                    slopes.append(-(d[j + 1] - d[j]) / dt)
        if d[0] <= 1e-8:
            absorb.append(0.0)
        elif traj.absorbed:
            absorb.append(float(traj.times[-1]))
        else:
            absorb.append(np.inf)
    alpha = float(np.min(slopes)) if slopes else np.inf
    return AttractionStats(
        alpha_hat=alpha,
        slopes=np.asarray(slopes),
        absorption_times=np.asarray(absorb),
    )
