"""Switched multi-hop network instances and the Max-Weight scheduler.

A network instance is static: ``n`` queues, a non-negative routing matrix
``R`` (entry (i, j) routes work completed at queue j to queue i), a finite
set of service vectors closed under zeroing any single component, and
strictly positive per-queue weights (all ones for the plain policy).

One time slot applies the weighted Max-Weight rule: pick a service vector
maximizing ``q @ W (I - R) mu``, serve ``min(mu, q)`` componentwise, then
add the slot's arrivals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAX_ACTIONS = 4096
TIE_TOL = 1e-12


class InvalidActionError(ValueError):
    """A service vector has a negative component."""


class ConfigError(ValueError):
    """A network / experiment configuration is malformed."""


def _lex_desc_order(vectors: np.ndarray) -> np.ndarray:
    """Indices sorting rows lexicographically descending (first component first)."""
    keys = tuple(-vectors[:, i] for i in reversed(range(vectors.shape[1])))
    return np.lexsort(keys)


def close_actions(base, n: int | None = None) -> np.ndarray:
    """Smallest superset of ``base`` closed under zeroing single components.

    Always contains the zero vector.  Idempotent.  Rows of the result are
    sorted lexicographically descending, the canonical order used by the
    scheduler's tie-break.
    """
    arr = np.atleast_2d(np.asarray(base, dtype=float))
    if arr.size == 0:
        if n is None:
            raise ConfigError("empty action set needs an explicit dimension")
        arr = np.zeros((0, n))
    if n is not None and arr.shape[0] and arr.shape[1] != n:
        raise ConfigError(f"actions have dimension {arr.shape[1]}, expected {n}")
    if arr.size and np.min(arr) < 0:
        raise InvalidActionError("service vectors must be non-negative")
    dim = arr.shape[1] if arr.size else int(n)

    seen: set[tuple[float, ...]] = set()
    stack = [tuple(row) for row in arr]
    stack.append(tuple([0.0] * dim))
    while stack:
        vec = stack.pop()
        if vec in seen:
            continue
        seen.add(vec)
        if len(seen) > MAX_ACTIONS:
            raise ConfigError(f"closed action set exceeds cap of {MAX_ACTIONS}")
        for i in range(dim):
            if vec[i] != 0.0:
                zeroed = vec[:i] + (0.0,) + vec[i + 1 :]
                if zeroed not in seen:
                    stack.append(zeroed)
    out = np.array(sorted(seen, reverse=True), dtype=float)
    return out


@dataclass(frozen=True)
class Network:
    """Immutable problem instance; safe to share across threads."""

    n: int
    routing: np.ndarray  # (n, n), non-negative
    actions: np.ndarray  # (k, n), closed under zeroing, lex-descending rows
    weights: np.ndarray  # (n,), strictly positive
    closure_added: bool = False  # loader metadata: did closing add vectors?

    def __post_init__(self):
        R = np.asarray(self.routing, dtype=float)
        acts = np.asarray(self.actions, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if R.shape != (self.n, self.n):
            raise ConfigError(f"routing must be {self.n}x{self.n}")
        if np.min(R) < 0:
            raise ConfigError("routing entries must be non-negative")
        if acts.ndim != 2 or acts.shape[1] != self.n:
            raise ConfigError("actions must be (k, n)")
        if acts.shape[0] > MAX_ACTIONS:
            raise ConfigError(f"action set exceeds cap of {MAX_ACTIONS}")
        if np.min(acts) < 0:
            raise InvalidActionError("service vectors must be non-negative")
        if w.shape != (self.n,) or np.min(w) <= 0:
            raise ConfigError("weights must be strictly positive, length n")
        for a in (R, acts, w):
            a.setflags(write=False)
        object.__setattr__(self, "routing", R)
        object.__setattr__(self, "actions", acts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def build(cls, routing, base_actions, weights=None) -> "Network":
        """Construct from a base action set; closure is applied here."""
        R = np.asarray(routing, dtype=float)
        n = R.shape[0]
        closed = close_actions(base_actions, n=n)
        base = np.atleast_2d(np.asarray(base_actions, dtype=float))
        added = closed.shape[0] != base.shape[0]
        if weights is None:
            weights = np.ones(n)
        return cls(n=n, routing=R, actions=closed, weights=np.asarray(weights, dtype=float),
                   closure_added=added)

    @property
    def service_matrix(self) -> np.ndarray:
        """I - R."""
        return np.eye(self.n) - self.routing

    @property
    def objective_rows(self) -> np.ndarray:
        """Rows W (I - R) mu, one per action: objectives are rows @ q."""
        return self.actions @ (np.diag(self.weights) @ self.service_matrix).T

    @property
    def drift_rows(self) -> np.ndarray:
        """Rows (I - R) mu, one per action (unweighted potential gradients)."""
        return self.actions @ self.service_matrix.T

    @property
    def is_unit_weight(self) -> bool:
        return bool(np.all(self.weights == 1.0))


@dataclass(frozen=True)
class ScheduleDecision:
    chosen: np.ndarray
    objective: float
    tied: list
    chosen_index: int


def schedule(net: Network, q) -> ScheduleDecision:
    """Exact maximizer of q @ W (I - R) mu over the action set.

    Ties (objective within TIE_TOL of the maximum) are broken toward the
    lexicographically largest service vector; ``tied`` lists every
    tolerance-maximizer.  Lexicographic tie-breaking commutes with the
    positive diagonal scaling of the weighted-to-unweighted transform.
    """
    q = np.asarray(q, dtype=float)
    obj = net.objective_rows @ q
    m = float(np.max(obj))
    tied_idx = np.flatnonzero(obj >= m - TIE_TOL)
    chosen_index = int(tied_idx[0])  # actions stored lex-descending
    return ScheduleDecision(
        chosen=net.actions[chosen_index],
        objective=m,
        tied=[net.actions[i] for i in tied_idx],
        chosen_index=chosen_index,
    )


def step(net: Network, q, arrivals) -> np.ndarray:
    """One slot of the evolution rule q' = q + a + (R - I) min(mu, q)."""
    q = np.asarray(q, dtype=float)
    a = np.asarray(arrivals, dtype=float)
    if np.min(a) < 0:
        raise ValueError("arrivals must be non-negative")
    mu = schedule(net, q).chosen
    served = np.minimum(mu, q)
    out = q + a + (net.routing - np.eye(net.n)) @ served
    if np.min(out) < -1e-9:
        raise AssertionError("evolution rule produced a negative queue")
    return np.maximum(out, 0.0)


@dataclass(frozen=True)
class WeightTransform:
    """State/arrival map x -> W^{1/2} x between weighted and unit-weight instances."""

    w_sqrt: np.ndarray

    def forward(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.w_sqrt

    def inverse(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) / self.w_sqrt


def wmw_to_mw(net: Network) -> tuple[Network, WeightTransform]:
    """Equivalent unit-weight instance.

    Actions become W^{1/2} mu, routing becomes W^{1/2} R W^{-1/2}; queue
    states and arrivals map through ``transform.forward``.  Positive
    diagonal scaling preserves the lex-descending order of the action rows,
    so scheduler tie-breaks agree between the two instances.
    """
    w_sqrt = np.sqrt(net.weights)
    acts = net.actions * w_sqrt
    order = _lex_desc_order(acts)
    if not np.array_equal(order, np.arange(acts.shape[0])):
        raise AssertionError("diagonal scaling must preserve action order")
    routing = (net.routing * w_sqrt[:, None]) / w_sqrt[None, :]
    tilde = Network(n=net.n, routing=routing, actions=acts, weights=np.ones(net.n))
    return tilde, WeightTransform(w_sqrt=w_sqrt)


@dataclass(frozen=True)
class DiscreteTrajectory:
    """Sampled queue path with per-slot decisions and the deviation statistic."""

    q: np.ndarray  # (K+1, n)
    chosen: np.ndarray  # (K,), action indices
    maxdev: np.ndarray | None = None  # (K+1,), running max partial-sum deviation

    @property
    def horizon(self) -> int:
        return self.q.shape[0] - 1


def simulate(net: Network, q0, arrivals, lam=None) -> DiscreteTrajectory:
    """Drive the one-step rule over a full arrival array (K, n).

    When ``lam`` is given, the running max over t < k of
    ``|| sum_{tau<=t} (A(tau) - lam) ||`` is recorded alongside the path.
    """
    arrivals = np.atleast_2d(np.asarray(arrivals, dtype=float))
    K = arrivals.shape[0]
    q = np.asarray(q0, dtype=float).copy()
    path = np.empty((K + 1, net.n))
    chosen = np.empty(K, dtype=int)
    path[0] = q
    RmI = net.routing - np.eye(net.n)
    rows = net.objective_rows
    acts = net.actions
    for k in range(K):
        obj = rows @ q
        m = obj.max()
        idx = int(np.argmax(obj >= m - TIE_TOL))
        chosen[k] = idx
        served = np.minimum(acts[idx], q)
        q = np.maximum(q + arrivals[k] + RmI @ served, 0.0)
        path[k + 1] = q

    maxdev = None
    if lam is not None:
        dev = np.cumsum(arrivals - np.asarray(lam, dtype=float), axis=0)
        norms = np.linalg.norm(dev, axis=1)
        maxdev = np.concatenate([[0.0], np.maximum.accumulate(norms)])
    return DiscreteTrajectory(q=path, chosen=chosen, maxdev=maxdev)


def load_network(source) -> Network:
    """Build a Network from a JSON file path, JSON string, or dict.

    Schema: {"n": int, "routing": [[..]] row-major, "base_actions": [[..]],
    "weights": [..] optional}.  The closure is applied automatically; the
    returned instance records whether it added vectors.
    """
    if isinstance(source, (str, Path)) and Path(str(source)).exists():
        with open(source) as f:
            data = json.load(f)
    elif isinstance(source, str):
        data = json.loads(source)
    else:
        data = source
    if not isinstance(data, dict):
        raise ConfigError("network config must be a JSON object")
    for fieldname in ("n", "routing", "base_actions"):
        if fieldname not in data:
            raise ConfigError(f"network config missing field '{fieldname}'")
    n = data["n"]
    if not isinstance(n, int) or n <= 0:
        raise ConfigError("field 'n' must be a positive integer")
    routing = np.asarray(data["routing"], dtype=float)
    if routing.shape != (n, n):
        raise ConfigError(f"field 'routing' must be an {n}x{n} matrix")
    weights = data.get("weights")
    net = Network.build(routing, data["base_actions"], weights=weights)
    return net
