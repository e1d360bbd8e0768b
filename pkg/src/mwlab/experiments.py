"""Seeded Monte Carlo harnesses for the scheduler's tracking and collapse claims.

Every experiment is a pure function of its configuration and seed.
Replications draw from per-replication Philox streams (see
:mod:`mwlab.arrivals`), run vectorized in fixed-size blocks, and reduce by
order-independent aggregation, so reports are identical at any thread
count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import arrivals as arr
from . import fluid as fl
from .arrivals import ArrivalSpec, ClosedForm, stream, wilson_interval
from .netmodel import ConfigError, Network, TIE_TOL, simulate, wmw_to_mw

STEP_BUDGET = 10**9
REP_BLOCK = 64
CHUNK_STEPS = 512


class BudgetError(RuntimeError):
    """A run would exceed the desk-scale step budget."""


@dataclass(frozen=True)
class ScalingSpec:
    """Time scaling q_hat(t) = Q(floor(g(r) t)) / r over a grid of r values."""

    g: ClosedForm
    r_grid: tuple
    T: float

    def __post_init__(self):
        grid = tuple(int(r) for r in self.r_grid)
        if len(grid) == 0 or any(r < 1 for r in grid):
            raise ConfigError("r grid must be non-empty positive integers")
        vals = [self.g(r) for r in grid]
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigError("g must be increasing on the r grid")
        if self.T <= 0:
            raise ConfigError("scaled horizon T must be positive")
        object.__setattr__(self, "r_grid", grid)


@dataclass
class ExperimentReport:
    """Rows plus summary for one experiment; serializable to CSV and JSON."""

    kind: str
    config: dict
    seed: int
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def write_csv(self, path) -> None:
        """Long-format CSV: one row per (r-or-K, statistic)."""
        import csv as _csv

        with open(path, "w", newline="") as fh:
            writer = _csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", "statistic", "value"])
            for row in self.rows:
                idx = row.get("r", row.get("K", ""))
                for key in sorted(row):
                    if key in ("r", "K"):
                        continue
                    writer.writerow([idx, key, _fmt(row[key])])

    def write_json(self, path) -> None:
        import json as _json

        payload = {
            "kind": self.kind,
            "seed": self.seed,
            "config": self.config,
            "rows": self.rows,
            "summary": self.summary,
        }
        with open(path, "w") as fh:
            _json.dump(_sanitize(payload), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _sanitize(obj):
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    if isinstance(obj, ClosedForm):
        return str(obj)
    return obj


def _blocks(replications: int):
    return [(lo, min(lo + REP_BLOCK, replications)) for lo in range(0, replications, REP_BLOCK)]


def _run_blocks(replications: int, threads: int, worker):
    """Run a per-block worker and concatenate results in replication order."""
    blocks = _blocks(replications)
    if threads <= 1:
        parts = [worker(lo, hi) for lo, hi in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: worker(*b), blocks))
    return parts


def _step_batch(Q, A_t, acts, rows_T, RmI_T):
    """One evolution slot for a (B, n) batch; same tie-break as the scalar path."""
    obj = Q @ rows_T
    m = obj.max(axis=1)
    tied = obj >= (m - TIE_TOL)[:, None]
    idx = tied.argmax(axis=1)  # actions are lex-descending: first tie wins
    svc = np.minimum(acts[idx], Q)
    return np.maximum(Q + A_t + svc @ RmI_T, 0.0), idx


class _BatchSim:
    """Vectorized multi-replication simulator with per-replication streams."""

    def __init__(self, net: Network, spec: ArrivalSpec, seed: int, rep_lo: int, rep_hi: int, q0):
        self.net = net
        self.spec = spec
        self.B = rep_hi - rep_lo
        self.gens = [stream(seed, rep) for rep in range(rep_lo, rep_hi)]
        q0 = np.asarray(q0, dtype=float)
        self.Q = np.tile(q0, (self.B, 1)) if q0.ndim == 1 else q0.copy()
        self.acts = net.actions
        self.rows_T = net.objective_rows.T
        self.RmI_T = (net.routing - np.eye(net.n)).T

    def draw_chunk(self, L: int) -> np.ndarray:
        A = np.empty((self.B, L, self.net.n))
        for i, g in enumerate(self.gens):
            A[i] = arr.generate_with(self.spec, L, g)
        return A

    def run_chunk(self, A: np.ndarray, states_out: np.ndarray | None = None):
        """Advance len(A[0]) slots; optionally record post-step states."""
        for t in range(A.shape[1]):
            self.Q, _ = _step_batch(self.Q, A[:, t], self.acts, self.rows_T, self.RmI_T)
            if states_out is not None:
                states_out[:, t] = self.Q


def sensitivity_experiment(
    net: Network,
    lam,
    spec: ArrivalSpec,
    horizons,
    replications: int,
    seed: int,
    q0,
    threads: int = 1,
) -> ExperimentReport:
    """Tracking-ratio table: discrete path versus the exact fluid path.

    Per replication and horizon K the statistic is

        max_{k<=K} ||Q(k) - q(k)||  /  (1 + ||lam|| + maxdev(K)),

    with Q(0) = q(0) = q0 and maxdev the running max partial-sum deviation
    of the arrivals from lam.  The per-horizon maximum over replications is
    reported as the empirical lower bound on any valid tracking constant.
    """
    horizons = sorted(int(k) for k in horizons)
    if horizons[0] < 1:
        raise ConfigError("horizons must be >= 1")
    K = horizons[-1]
    lam = np.asarray(lam, dtype=float)
    q0 = np.asarray(q0, dtype=float)
    traj = fl.integrate_fluid(net, lam, q0, float(K))
    qf = traj.eval(np.arange(K + 1, dtype=float))
    lam_norm = float(np.linalg.norm(lam))

    def worker(lo, hi):
        sim = _BatchSim(net, spec, seed, lo, hi, q0)
        B = sim.B
        cum = np.zeros((B, net.n))
        maxdev = np.zeros(B)
        runmax = np.zeros(B)
        ratios = np.empty((len(horizons), B))
        sups = np.empty((len(horizons), B))
        ci = 0
        k = 0
        while k < K:
            L = min(CHUNK_STEPS, K - k)
            A = sim.draw_chunk(L)
            for t in range(L):
                sim.Q, _ = _step_batch(sim.Q, A[:, t], sim.acts, sim.rows_T, sim.RmI_T)
                cum += A[:, t] - lam
                maxdev = np.maximum(maxdev, np.linalg.norm(cum, axis=1))
                runmax = np.maximum(runmax, np.linalg.norm(sim.Q - qf[k + t + 1], axis=1))
                while ci < len(horizons) and k + t + 1 == horizons[ci]:
                    ratios[ci] = runmax / (1.0 + lam_norm + maxdev)
                    sups[ci] = runmax
                    ci += 1
            k += L
        return ratios, sups

    parts = _run_blocks(replications, threads, worker)
    ratios = np.concatenate([p[0] for p in parts], axis=1)
    sups = np.concatenate([p[1] for p in parts], axis=1)

    report = ExperimentReport(
        kind="sensitivity",
        seed=seed,
        config={
            "lam": lam,
            "q0": q0,
            "horizons": horizons,
            "replications": replications,
            "arrivals": spec.kind,
        },
    )
    for i, Kh in enumerate(horizons):
        report.rows.append(
            {
                "K": Kh,
                "c_hat": float(ratios[i].max()),
                "ratio_median": float(np.median(ratios[i])),
                "ratio_p90": float(np.quantile(ratios[i], 0.9)),
                "sup_dist_max": float(sups[i].max()),
            }
        )
    report.summary = {
        "c_hat": float(ratios[-1].max()),
        "c_hat_note": "empirical lower bound on any valid C",
    }
    return report


def fluid_convergence_experiment(
    net: Network,
    lam,
    spec: ArrivalSpec,
    q0,
    T: float,
    r_grid,
    replications: int,
    seed: int,
    threads: int = 1,
) -> ExperimentReport:
    """Distance of the fluid-scaled process from the fluid path, per r.

    The scaled process starts at round(r q0) and is compared with the fluid
    path from q0 at the sample times k/r, k <= floor(rT); at r = 1 the
    statistic coincides with the sensitivity experiment's numerator.
    """
    lam = np.asarray(lam, dtype=float)
    q0 = np.asarray(q0, dtype=float)
    traj = fl.integrate_fluid(net, lam, q0, float(T))
    report = ExperimentReport(
        kind="fluid-convergence",
        seed=seed,
        config={"lam": lam, "q0": q0, "T": T, "r_grid": list(r_grid),
                "replications": replications, "arrivals": spec.kind},
    )
    for r in r_grid:
        r = int(r)
        K = int(np.floor(r * T))
        qf = traj.eval(np.arange(K + 1, dtype=float) / r) * r  # compare unscaled

        def worker(lo, hi, K=K, r=r, qf=qf):
            sim = _BatchSim(net, spec, seed + r, lo, hi, np.rint(r * q0))
            B = sim.B
            cum = np.zeros((B, net.n))
            maxdev = np.zeros(B)
            runmax = np.zeros(B)
            k = 0
            while k < K:
                L = min(CHUNK_STEPS, K - k)
                A = sim.draw_chunk(L)
                for t in range(L):
                    sim.Q, _ = _step_batch(sim.Q, A[:, t], sim.acts, sim.rows_T, sim.RmI_T)
                    cum += A[:, t] - lam
                    maxdev = np.maximum(maxdev, np.linalg.norm(cum, axis=1))
                    runmax = np.maximum(runmax, np.linalg.norm(sim.Q - qf[k + t + 1], axis=1))
                k += L
            return runmax, maxdev

        parts = _run_blocks(replications, threads, worker)
        sup = np.concatenate([p[0] for p in parts]) / r
        maxdev = np.concatenate([p[1] for p in parts])
        ratio = sup / (maxdev / r + 1.0 / r)
        report.rows.append(
            {
                "r": r,
                "sup_dist_max": float(sup.max()),
                "sup_dist_mean": float(sup.mean()),
                "scaled_maxdev_mean": float((maxdev / r).mean()),
                "ratio_max": float(ratio.max()),
            }
        )
    rs = np.array([row["r"] for row in report.rows], dtype=float)
    vals = np.array([row["sup_dist_max"] for row in report.rows])
    if np.all(vals > 0):
        report.summary["loglog_slope"] = fit_loglog_slope(rs, vals)
    return report


def fit_loglog_slope(xs, ys) -> float:
    """Least-squares slope of log(y) against log(x)."""
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


def default_ssc_q0(inv: fl.InvariantSet, base_q0, direction=None):
    """Initialization rule: projection of base_q0 plus a 1/sqrt(r) offset.

    Satisfies d(q_hat(0), invariant set) -> 0 while keeping the start off
    the set, exercising the weaker-than-fixed-start hypothesis.
    """
    base_q0 = np.asarray(base_q0, dtype=float)
    proj = inv.project(base_q0)
    if direction is None:
        off = base_q0 - proj
        nrm = np.linalg.norm(off)
        direction = off / nrm if nrm > 1e-12 else np.eye(len(base_q0))[0]
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)

    def rule(r: int) -> np.ndarray:
        return np.maximum(proj + direction / math.sqrt(r), 0.0)

    return rule


def _distance_indicator_worker(net, spec_r, seed, q0_scaled, steps, inv, threshold):
    """Build a block worker tracking sup_k d(Q(k), invariant set)."""

    def worker(lo, hi):
        sim = _BatchSim(net, spec_r, seed, lo, hi, q0_scaled)
        B = sim.B
        sup_d = inv.distance_many(sim.Q)
        k = 0
        buf = np.empty((B, CHUNK_STEPS, net.n))
        while k < steps:
            L = min(CHUNK_STEPS, steps - k)
            A = sim.draw_chunk(L)
            sim.run_chunk(A, states_out=buf[:, :L])
            d = inv.distance_many(buf[:, :L].reshape(B * L, net.n)).reshape(B, L)
            sup_d = np.maximum(sup_d, d.max(axis=1))
            k += L
        return (sup_d > threshold).astype(int), sup_d

    return worker


def ssc_experiment(
    net: Network,
    family: ArrivalSpec,
    scaling: ScalingSpec,
    delta: float,
    replications: int,
    seed: int,
    q0_rule=None,
    q0_base=None,
    threads: int = 1,
) -> ExperimentReport:
    """Estimate P[sup_{t<=T} d(q_hat^r(t), invariant set) > delta] per r.

    ``family`` describes the arrival family; its base mean is the limiting
    rate vector whose invariant set is tested.  The distance is evaluated
    at every step of the scaled process.  Runs whose step budget
    r * g(r) * T would exceed 1e9 raise :class:`BudgetError`.
    """
    lam = family.lam
    inv = fl.invariant_set(net, lam)
    if q0_rule is None:
        base = np.ones(net.n) if q0_base is None else np.asarray(q0_base, dtype=float)
        q0_rule = default_ssc_q0(inv, base)

    report = ExperimentReport(
        kind="ssc",
        seed=seed,
        config={
            "lam": lam,
            "delta": delta,
            "g": str(scaling.g),
            "T": scaling.T,
            "r_grid": list(scaling.r_grid),
            "replications": replications,
            "arrivals": family.kind,
        },
    )
    for r in scaling.r_grid:
        g_val = float(scaling.g(r))
        if r * g_val * scaling.T > STEP_BUDGET:
            raise BudgetError(
                f"step budget exceeded at r={r}: r*g(r)*T = {r * g_val * scaling.T:.3g}"
            )
        steps = int(np.floor(g_val * scaling.T))
        spec_r = family.at(r)
        q0_scaled = np.rint(r * np.asarray(q0_rule(r), dtype=float))
        worker = _distance_indicator_worker(
            net, spec_r, seed + r, q0_scaled, steps, inv, r * delta
        )
        parts = _run_blocks(replications, threads, worker)
        hits = int(np.concatenate([p[0] for p in parts]).sum())
        sup_d = np.concatenate([p[1] for p in parts])
        lo, hi = wilson_interval(hits, replications)
        report.rows.append(
            {
                "r": int(r),
                "g": g_val,
                "steps": steps,
                "count": hits,
                "p_hat": hits / replications,
                "wilson_lo": lo,
                "wilson_hi": hi,
                "sup_scaled_distance_max": float(sup_d.max() / r),
            }
        )
    report.summary = {
        "trend_non_increasing": trend_non_increasing(report.rows),
    }
    return report


def converse_experiment(
    net: Network,
    lam,
    f: ClosedForm,
    g: ClosedForm,
    h: ClosedForm,
    delta: float,
    T: float,
    r_grid,
    replications: int,
    seed: int,
    q0=None,
    threads: int = 1,
) -> ExperimentReport:
    """Bursty-arrival construction that defeats collapse at too-long scalings.

    The burst direction w is built from the collapse geometry: v spans the
    one-dimensional complement of a hyperplane containing the invariant
    set; w is the scaled coordinate axis with d(w, hyperplane) = 1.  Each
    slot adds (r g(r)/h(r)) w with probability 1/h(r).
    """
    lam = np.asarray(lam, dtype=float)
    inv = fl.invariant_set(net, lam)
    v0 = fl.collapse_direction(net, lam)
    v = v0 / np.linalg.norm(v0)
    i_star = int(np.argmax(np.abs(v)))
    if abs(v[i_star]) < 1e-12:
        raise fl.DomainError("collapse direction has no usable coordinate axis")
    w = np.zeros(net.n)
    w[i_star] = 1.0 / abs(v[i_star])

    burst = arr.BurstSpec(w=w, h=h, g=g, f=f)
    family = ArrivalSpec(kind="converse-burst", lam=lam, burst=burst)
    if q0 is None:
        q0 = inv.project(np.ones(net.n))
    q0 = np.asarray(q0, dtype=float)

    report = ExperimentReport(
        kind="converse",
        seed=seed,
        config={
            "lam": lam,
            "delta": delta,
            "T": T,
            "r_grid": [int(r) for r in r_grid],
            "replications": replications,
            "f": str(f),
            "g": str(g),
            "h": str(h),
            "w": w,
            "v": v,
            "q0": q0,
        },
    )
    for r in r_grid:
        r = int(r)
        g_val = float(g(r))
        if r * g_val * T > STEP_BUDGET:
            raise BudgetError(
                f"step budget exceeded at r={r}: r*g(r)*T = {r * g_val * T:.3g}"
            )
        steps = int(np.floor(g_val * T))
        spec_r = family.at(r)
        worker = _distance_indicator_worker(
            net, spec_r, seed + r, np.rint(r * q0), steps, inv, r * delta
        )
        parts = _run_blocks(replications, threads, worker)
        hits = int(np.concatenate([p[0] for p in parts]).sum())
        lo, hi = wilson_interval(hits, replications)
        report.rows.append(
            {
                "r": r,
                "g": g_val,
                "steps": steps,
                "expected_bursts": steps / float(h(r)),
                "count": hits,
                "p_hat": hits / replications,
                "wilson_lo": lo,
                "wilson_hi": hi,
            }
        )
    report.summary = {
        "trend_non_decreasing": trend_non_decreasing(report.rows),
    }
    return report


def trend_non_increasing(rows) -> bool:
    """p_hat non-increasing in r, up to 95% Wilson-interval overlap."""
    for a, b in zip(rows, rows[1:]):
        if b["p_hat"] > a["p_hat"] and b["wilson_lo"] > a["wilson_hi"]:
            return False
    return True


def trend_non_decreasing(rows) -> bool:
    for a, b in zip(rows, rows[1:]):
        if b["p_hat"] < a["p_hat"] and b["wilson_hi"] < a["wilson_lo"]:
            return False
    return True


@dataclass(frozen=True)
class WmwCheckResult:
    ok: bool
    max_discrepancy: float
    first_divergence: int | None


def wmw_equivalence_check(net: Network, spec: ArrivalSpec, K: int, seed: int, q0) -> WmwCheckResult:
    """Weighted run versus transformed unit-weight run on transformed arrivals.

    Passes when max_k || Q_tilde(k) - W^{1/2} Q(k) || <= 1e-9; on failure
    the first divergent slot index is reported (a tie-break inconsistency
    diagnostic).
    """
    q0 = np.asarray(q0, dtype=float)
    A = arr.generate(spec, K, seed)
    direct = simulate(net, q0, A)
    tilde, tfm = wmw_to_mw(net)
    transformed = simulate(tilde, tfm.forward(q0), A * tfm.w_sqrt)
    disc = np.linalg.norm(transformed.q - direct.q * tfm.w_sqrt, axis=1)
    worst = float(disc.max())
    if worst <= 1e-9:
        return WmwCheckResult(ok=True, max_discrepancy=worst, first_divergence=None)
    first = int(np.argmax(disc > 1e-9))
    return WmwCheckResult(ok=False, max_discrepancy=worst, first_divergence=first)
