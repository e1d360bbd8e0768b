"""Arrival-process generators and the cumulative-deviation statistic.

Generators are pure functions of (spec, horizon, seed).  Streams come from
the Philox counter-based generator keyed through a splitmix64 mix of the
user seed and a replication index, which makes replication streams
independent and the output identical across platforms and thread counts.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace

import numpy as np

from .netmodel import ConfigError

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One round of the splitmix64 mixer (public-domain constants)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Derived Philox stream: key = splitmix64(splitmix64(seed) ^ index)."""
    key = splitmix64(splitmix64(int(seed) & _MASK64) ^ (int(index) & _MASK64))
    return np.random.Generator(np.random.Philox(key=key))


_POWER_RE = re.compile(r"^\s*(?:(?P<c>[0-9.eE+-]+)\s*\*\s*)?r(?:\^(?P<p>[0-9.eE+-]+))?\s*$")
_EXP_RE = re.compile(
    r"^\s*(?:(?P<c>[0-9.eE+-]+)\s*\*\s*)?exp\(\s*(?:(?P<g>[0-9.eE+-]+)\s*\*\s*)?r\s*\)\s*$"
)


@dataclass(frozen=True)
class ClosedForm:
    """Closed form in r from the grammar c*r^p | c*exp(g*r)."""

    kind: str  # "power" | "exp"
    c: float = 1.0
    p: float = 1.0  # exponent for power, rate for exp

    def __call__(self, r) -> float:
        r = np.asarray(r, dtype=float)
        if self.kind == "power":
            val = self.c * r**self.p
        else:
            val = self.c * np.exp(self.p * r)
        return float(val) if val.ndim == 0 else val

    @classmethod
    def parse(cls, text) -> "ClosedForm":
        if isinstance(text, ClosedForm):
            return text
        if isinstance(text, (int, float)):
            raise ConfigError("closed forms must mention r, e.g. 'r^2' or 'exp(0.05*r)'")
        m = _POWER_RE.match(text)
        if m:
            c = float(m.group("c")) if m.group("c") else 1.0
            p = float(m.group("p")) if m.group("p") else 1.0
            return cls(kind="power", c=c, p=p)
        m = _EXP_RE.match(text)
        if m:
            c = float(m.group("c")) if m.group("c") else 1.0
            g = float(m.group("g")) if m.group("g") else 1.0
            return cls(kind="exp", c=c, p=g)
        raise ConfigError(f"cannot parse closed form {text!r}")

    def __str__(self) -> str:
        prefix = "" if self.c == 1.0 else f"{self.c}*"
        if self.kind == "power":
            return f"{prefix}r" if self.p == 1.0 else f"{prefix}r^{self.p}"
        return f"{prefix}exp({self.p}*r)"


@dataclass(frozen=True)
class BurstSpec:
    """Rare-burst construction: add htilde(r) * w with probability 1/h(r)."""

    w: np.ndarray
    h: ClosedForm
    g: ClosedForm
    f: ClosedForm

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if np.min(w) < 0:
            raise ConfigError("burst direction w must be non-negative")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    def htilde(self, r) -> float:
        """Burst magnitude r*g(r)/h(r)."""
        r = np.asarray(r, dtype=float)
        val = r * self.g(r) / self.h(r)
        return float(val) if val.ndim == 0 else val

    def limits_hold(self, r_grid) -> bool:
        """Numerically check the three scaling limits on a grid:
        r*f/h -> 0, h/g -> 0, h^2/(r*g) -> infinity (each monotonically)."""
        rs = np.asarray(sorted(r_grid), dtype=float)
        a = rs * self.f(rs) / self.h(rs)
        b = self.h(rs) / self.g(rs)
        c = self.h(rs) ** 2 / (rs * self.g(rs))
        return bool(
            np.all(np.diff(a) < 0) and np.all(np.diff(b) < 0) and np.all(np.diff(c) > 0)
        )


@dataclass(frozen=True)
class MarkovSpec:
    """Two-state modulation: emit the state's mean vector each slot."""

    means: np.ndarray  # (2, n)
    transition: np.ndarray  # (2, 2) row-stochastic

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        P = np.asarray(self.transition, dtype=float)
        if means.shape[0] != 2 or P.shape != (2, 2):
            raise ConfigError("markov modulation is a 2-state chain")
        if np.min(means) < 0 or np.min(P) < 0 or np.max(np.abs(P.sum(axis=1) - 1)) > 1e-12:
            raise ConfigError("markov means must be >= 0 and transition rows sum to 1")
        means.setflags(write=False)
        P.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "transition", P)

    def stationary(self) -> np.ndarray:
        p01, p10 = self.transition[0, 1], self.transition[1, 0]
        if p01 + p10 == 0.0:
            return np.array([0.5, 0.5])
        return np.array([p10, p01]) / (p01 + p10)


KINDS = ("constant", "iid-bounded", "markov-modulated", "converse-burst")


@dataclass(frozen=True)
class ArrivalSpec:
    """Everything needed to draw one arrival path.

    ``lam`` is the base mean; ``approach_rate`` describes the heavy-traffic
    family lam * (1 - c/r).  ``at(r)`` resolves the family at index r, which
    is required for converse-burst specs before generating.
    """

    kind: str
    lam: np.ndarray
    a: float | None = None  # componentwise bound, iid case
    approach_rate: float = 0.0
    burst: BurstSpec | None = None
    markov: MarkovSpec | None = None
    r: int | None = None  # family index this spec is resolved at

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown arrival kind {self.kind!r}")
        lam = np.asarray(self.lam, dtype=float)
        if np.min(lam) < 0:
            raise ConfigError("mean arrival rates must be non-negative")
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)
        if self.kind == "iid-bounded":
            if self.a is None or self.a <= 0:
                raise ConfigError("iid-bounded arrivals need a positive bound a")
            if np.max(lam) > self.a:
                raise ConfigError("iid-bounded mean must lie in [0, a] componentwise")
        if self.kind == "converse-burst" and self.burst is None:
            raise ConfigError("converse-burst arrivals need burst parameters")
        if self.kind == "markov-modulated" and self.markov is None:
            raise ConfigError("markov-modulated arrivals need a MarkovSpec")

    @property
    def n(self) -> int:
        return self.lam.shape[0]

    def at(self, r: int) -> "ArrivalSpec":
        """Resolve the heavy-traffic family at index r."""
        if r < 1:
            raise ConfigError("family index r must be >= 1")
        lam_r = self.lam * (1.0 - self.approach_rate / r)
        return replace(self, lam=lam_r, r=int(r))

    @property
    def mean(self) -> np.ndarray:
        """True per-slot mean of the generated process."""
        if self.kind == "converse-burst":
            b = self.burst
            if self.r is None:
                raise ConfigError("converse-burst spec must be resolved with .at(r)")
            return self.lam + (b.htilde(self.r) / b.h(self.r)) * b.w
        if self.kind == "markov-modulated":
            return self.markov.stationary() @ self.markov.means
        return self.lam


def generate(spec: ArrivalSpec, horizon: int, seed: int) -> np.ndarray:
    """Draw the (horizon, n) arrival array for one replication."""
    if horizon < 0:
        raise ConfigError("horizon must be >= 0")
    gen = stream(seed, 0)
    return generate_with(spec, horizon, gen)


def generate_with(spec: ArrivalSpec, horizon: int, gen: np.random.Generator) -> np.ndarray:
    """Like generate(), drawing from an already-derived stream.

    Used by the experiment harnesses, which advance one persistent stream
    per replication chunk by chunk.
    """
    n = spec.n
    if horizon == 0:
        return np.zeros((0, n))
    if spec.kind == "constant":
        return np.tile(spec.lam, (horizon, 1))
    if spec.kind == "iid-bounded":
        u = gen.random((horizon, n))
        return spec.a * (u < spec.lam / spec.a).astype(float)
    if spec.kind == "markov-modulated":
        m = spec.markov
        pi = m.stationary()
        u = gen.random(horizon)
        states = np.empty(horizon, dtype=int)
        s = int(u[0] > pi[0])
        states[0] = s
        for t in range(1, horizon):
            s = int(u[t] > m.transition[s, 0])
            states[t] = s
        return m.means[states]
    # converse-burst
    if spec.r is None:
        raise ConfigError("converse-burst spec must be resolved with .at(r)")
    b = spec.burst
    prob = 1.0 / b.h(spec.r)
    hits = gen.random(horizon) < prob
    out = np.tile(spec.lam, (horizon, 1))
    out[hits] += b.htilde(spec.r) * b.w
    return out


@dataclass(frozen=True)
class DeviationPath:
    """maxdev(k) = max over t < k of || sum_{tau<=t} (A(tau) - lam) ||_2."""

    values: np.ndarray  # (K+1,), non-decreasing, values[0] = 0

    @property
    def final(self) -> float:
        return float(self.values[-1])


def max_deviation(samples: np.ndarray, lam) -> DeviationPath:
    """Running max partial-sum deviation of an arrival array from its mean."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] == 0:
        raise ValueError("need at least one sample")
    dev = np.cumsum(samples - np.asarray(lam, dtype=float), axis=0)
    norms = np.linalg.norm(dev, axis=1)
    return DeviationPath(values=np.concatenate([[0.0], np.maximum.accumulate(norms)]))


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """95% Wilson score interval for a binomial proportion."""
    if trials <= 0:
        return (0.0, 1.0)
    phat = successes / trials
    denom = 1.0 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def generate_block(spec: ArrivalSpec, reps: int, horizon: int, gen: np.random.Generator) -> np.ndarray:
    """Draw a (reps, horizon, n) block of i.i.d.-across-replication paths."""
    n = spec.n
    if spec.kind == "constant":
        return np.broadcast_to(spec.lam, (reps, horizon, n)).copy()
    if spec.kind == "iid-bounded":
        u = gen.random((reps, horizon, n))
        return spec.a * (u < spec.lam / spec.a).astype(float)
    if spec.kind == "converse-burst":
        if spec.r is None:
            raise ConfigError("converse-burst spec must be resolved with .at(r)")
        b = spec.burst
        hits = gen.random((reps, horizon)) < 1.0 / b.h(spec.r)
        out = np.tile(spec.lam, (reps, horizon, 1))
        out[hits] += b.htilde(spec.r) * b.w
        return out
    # markov-modulated paths are sequential; draw them one by one
    return np.stack([generate_with(spec, horizon, gen) for _ in range(reps)])


def f_tailed_probe(
    spec: ArrivalSpec,
    f,
    delta: float,
    r_grid,
    replications: int,
    seed: int,
    chunk: int = 20_000,
) -> list[dict]:
    """Monte Carlo table of f(r, delta) * P[(1/r) sup_{t<=r} ||dev|| > delta].

    ``f`` is a callable (r, delta) -> float.  One row per r with the
    estimate, its 95% Wilson interval, and the product with f.  Blocks of
    replications share one derived stream, so the table is a pure function
    of (spec, f, delta, r_grid, replications, seed).
    """
    if replications < 100:
        raise ConfigError("probe needs at least 100 replications")
    rows = []
    for r in r_grid:
        spec_r = spec.at(int(r))
        lam_r = spec_r.mean
        count = 0
        done = 0
        block_index = 0
        while done < replications:
            b = min(chunk, replications - done)
            gen = stream(seed, (int(r) << 24) ^ block_index)
            A = generate_block(spec_r, b, int(r) + 1, gen)
            dev = np.cumsum(A - lam_r, axis=1)
            stats = np.linalg.norm(dev, axis=2).max(axis=1) / r
            count += int((stats > delta).sum())
            done += b
            block_index += 1
        p_hat = count / replications
        lo, hi = wilson_interval(count, replications)
        f_val = float(f(int(r), delta))
        rows.append(
            {
                "r": int(r),
                "p_hat": p_hat,
                "wilson_lo": lo,
                "wilson_hi": hi,
                "f_value": f_val,
                "product": f_val * p_hat,
            }
        )
    return rows


def heavy_traffic_sequence(lam_boundary, approach_rate: float, r: int) -> np.ndarray:
    """lam^r = lam_boundary * (1 - c/r), approaching the boundary as r grows."""
    if approach_rate < 0:
        raise ConfigError("approach rate must be >= 0")
    if r < 1:
        raise ConfigError("r must be >= 1")
    return np.asarray(lam_boundary, dtype=float) * (1.0 - approach_rate / r)
