import numpy as np
import pytest

from mwlab import ConfigError
from mwlab.arrivals import (
    ArrivalSpec,
    BurstSpec,
    ClosedForm,
    MarkovSpec,
    f_tailed_probe,
    generate,
    generate_block,
    heavy_traffic_sequence,
    max_deviation,
    stream,
    wilson_interval,
)


class TestClosedForm:
    @pytest.mark.parametrize(
        "text,r,expected",
        [
            ("r", 7, 7.0),
            ("r^2.5", 4, 32.0),
            ("2*r^3", 3, 54.0),
            ("exp(0.5*r)", 2, np.e),
            ("3*exp(r)", 1, 3 * np.e),
        ],
    )
    def test_parse_eval(self, text, r, expected):
        assert ClosedForm.parse(text)(r) == pytest.approx(expected, rel=1e-12)

    def test_str_roundtrip(self):
        for text in ("r", "r^2.5", "2.0*r^3.0", "exp(0.05*r)"):
            form = ClosedForm.parse(text)
            assert ClosedForm.parse(str(form)) == form

    def test_rejects_garbage(self):
        with pytest.raises(ConfigError):
            ClosedForm.parse("r**2 + 1")


class TestGenerators:
    def test_constant_is_exact(self):
        spec = ArrivalSpec(kind="constant", lam=np.array([0.5, 0.5]))
        A = generate(spec, 3, seed=1)
        assert A.shape == (3, 2)
        assert np.all(A == 0.5)

    def test_iid_bounds_and_determinism(self):
        spec = ArrivalSpec(kind="iid-bounded", lam=np.array([0.3, 0.7]), a=1.0)
        A = generate(spec, 1000, seed=5)
        B = generate(spec, 1000, seed=5)
        assert np.array_equal(A, B)
        assert set(np.unique(A)) <= {0.0, 1.0}
        C = generate(spec, 1000, seed=6)
        assert not np.array_equal(A, C)

    def test_iid_infeasible_mean(self):
        with pytest.raises(ConfigError):
            ArrivalSpec(kind="iid-bounded", lam=np.array([1.5]), a=1.0)

    def test_iid_clt_oracle(self):
        # empirical mean of 1e5 bernoulli(1/2) draws within 3 sigma / sqrt(N)
        spec = ArrivalSpec(kind="iid-bounded", lam=np.array([0.5]), a=1.0)
        A = generate(spec, 100_000, seed=11)
        assert abs(A.mean() - 0.5) < 3 * 0.5 / np.sqrt(100_000)

    def test_markov_stationary_mean(self):
        m = MarkovSpec(
            means=np.array([[1.0, 0.0], [0.0, 1.0]]),
            transition=np.array([[0.9, 0.1], [0.3, 0.7]]),
        )
        spec = ArrivalSpec(kind="markov-modulated", lam=m.stationary() @ m.means, markov=m)
        A = generate(spec, 200_000, seed=3)
        assert np.allclose(A.mean(axis=0), spec.mean, atol=0.01)

    def test_converse_needs_resolution(self):
        b = BurstSpec(
            w=np.array([1.0, 0.0]),
            h=ClosedForm.parse("r^2.5"),
            g=ClosedForm.parse("r^3"),
            f=ClosedForm.parse("r"),
        )
        spec = ArrivalSpec(kind="converse-burst", lam=np.array([0.5, 0.5]), burst=b)
        with pytest.raises(ConfigError):
            generate(spec, 10, seed=0)
        A = generate(spec.at(10), 500, seed=0)
        # every slot is either lam or lam + htilde * w
        base = np.all(A == [0.5, 0.5], axis=1)
        burst = np.all(A == [0.5 + 10**1.5, 0.5], axis=1)
        assert np.all(base | burst)

    def test_generate_block_matches_marginals(self):
        spec = ArrivalSpec(kind="iid-bounded", lam=np.array([0.4]), a=1.0)
        blk = generate_block(spec, 200, 50, stream(1, 0))
        assert blk.shape == (200, 50, 1)
        assert abs(blk.mean() - 0.4) < 0.02

    def test_nonnegative_everywhere(self):
        spec = ArrivalSpec(kind="iid-bounded", lam=np.array([0.1, 0.9]), a=2.0)
        assert np.min(generate(spec, 2000, seed=8)) >= 0


class TestBurstScalingLimits:
    def test_default_family_limits(self):
        # r f/h = r^-0.5 -> 0, h/g = r^-0.5 -> 0, h^2/(r g) = r -> inf
        b = BurstSpec(
            w=np.array([1.0]),
            h=ClosedForm.parse("r^2.5"),
            g=ClosedForm.parse("r^3"),
            f=ClosedForm.parse("r"),
        )
        rs = [10**2, 10**3, 10**4, 10**5, 10**6]
        assert b.limits_hold(rs)
        assert b.htilde(4) == pytest.approx(4**1.5)

    def test_violating_family_detected(self):
        # h = r: r f / h = r does not vanish
        b = BurstSpec(
            w=np.array([1.0]),
            h=ClosedForm.parse("r"),
            g=ClosedForm.parse("r^3"),
            f=ClosedForm.parse("r"),
        )
        assert not b.limits_hold([10**2, 10**3, 10**4])


class TestMaxDeviation:
    def test_zero_for_exact_mean(self):
        A = np.full((10, 2), 0.5)
        dev = max_deviation(A, [0.5, 0.5])
        assert np.all(dev.values == 0.0)

    def test_alternating(self):
        dev = max_deviation(np.array([[1.0], [0.0], [1.0], [0.0]]), [0.5])
        assert dev.values[-1] == pytest.approx(0.5)

    def test_front_loaded(self):
        dev = max_deviation(np.array([[2.0], [0.0], [0.0]]), [0.5])
        assert dev.values[-1] == pytest.approx(1.5)

    def test_monotone_and_zero_start(self):
        rng = np.random.default_rng(2)
        A = rng.uniform(0, 1, size=(200, 3))
        dev = max_deviation(A, A.mean(axis=0))
        assert dev.values[0] == 0.0
        assert np.all(np.diff(dev.values) >= 0)


class TestHeavyTraffic:
    def test_formula(self):
        assert tuple(heavy_traffic_sequence([0.5, 0.5], 1.0, 10)) == (0.45, 0.45)

    def test_zero_rate_identity(self):
        assert tuple(heavy_traffic_sequence([0.3, 0.7], 0.0, 5)) == (0.3, 0.7)

    def test_componentwise(self):
        assert tuple(heavy_traffic_sequence([0.5, 0.0], 2.0, 4)) == (0.25, 0.0)


class TestProbe:
    def test_constant_probability_zero(self):
        spec = ArrivalSpec(kind="constant", lam=np.array([0.5, 0.5]))
        rows = f_tailed_probe(spec, lambda r, d: np.exp(r * d), 0.1, [10, 20], 200, seed=4)
        assert all(row["p_hat"] == 0.0 for row in rows)
        assert all(row["product"] == 0.0 for row in rows)

    def test_deterministic_given_seed(self):
        spec = ArrivalSpec(kind="iid-bounded", lam=np.array([0.5]), a=1.0)
        r1 = f_tailed_probe(spec, lambda r, d: 1.0, 0.05, [20, 40], 500, seed=9)
        r2 = f_tailed_probe(spec, lambda r, d: 1.0, 0.05, [20, 40], 500, seed=9)
        assert r1 == r2

    def test_replication_floor(self):
        spec = ArrivalSpec(kind="constant", lam=np.array([0.5]))
        with pytest.raises(ConfigError):
            f_tailed_probe(spec, lambda r, d: 1.0, 0.1, [10], 50, seed=0)

    def test_wilson_orders(self):
        lo, hi = wilson_interval(5, 100)
        assert 0.0 <= lo <= 0.05 <= hi <= 1.0


def test_stream_independent_replications():
    a = stream(7, 0).random(5)
    b = stream(7, 1).random(5)
    c = stream(7, 0).random(5)
    assert np.array_equal(a, c)
    assert not np.array_equal(a, b)
