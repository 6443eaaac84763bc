import numpy as np
import pytest

from eigdyad.dgp import (
    DesignSpec,
    Dist,
    derive_seed,
    normal,
    oracle_outcome,
    rng_for,
    simulate,
    standard_designs,
    uniform,
)
from eigdyad.errors import ConfigError


class TestDist:
    def test_moments(self):
        assert normal(1.0, 2.0).mean == 1.0 and normal(1.0, 2.0).var == 4.0
        assert uniform(0.0, 1.0).mean == 0.5 and uniform(0.0, 1.0).var == pytest.approx(1 / 12)

    def test_round_trip(self):
        d = uniform(-1.0, 3.0)
        assert Dist.from_dict(d.to_dict()) == d
        assert Dist.from_dict("normal") == normal()

    @pytest.mark.parametrize(
        "name, params",
        [("cauchy", {}), ("normal", {"sd": 1.0}), ("normal", {"scale": -1.0}), ("uniform", {"low": 2.0, "high": 1.0})],
    )
    def test_rejects(self, name, params):
        with pytest.raises(ConfigError):
            Dist(name, params)


class TestDesignSpec:
    def test_defaults_valid(self):
        spec = DesignSpec()
        assert spec.terms == ("intercept", "additive")

    def test_mu0_shift(self):
        spec = DesignSpec(gamma=1.0, delta=-1, beta=(1.0, 1.0))
        np.testing.assert_array_equal(spec.mu0, [2.0, 1.0])
        spec = DesignSpec(gamma=2.0, effect_scale=4.0, beta=(0.0, 1.0))
        np.testing.assert_array_equal(spec.mu0, [-1.0, 1.0])

    def test_effect_moments(self):
        spec = DesignSpec(gamma=1.0)
        assert spec.mean_u == 1.0 and spec.mean_u2 == 2.0
        spec = DesignSpec(gamma=0.0, effect_scale=10.0)
        assert spec.mean_u == 0.0 and spec.mean_u2 == pytest.approx(10.0)

    @pytest.mark.parametrize(
        "kw",
        [
            {"n": 3},
            {"gamma": -1.0},
            {"delta": 0},
            {"effect_scale": 0.0},
            {"beta": (1.0,)},
            {"regressor_form": "quadratic"},
            {"regressor_form": ("intercept", "intercept", "additive"), "beta": (1.0, 1.0, 1.0)},
            {"seed": -1},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            DesignSpec(**kw)

    def test_dict_round_trip(self):
        spec = DesignSpec(regressor_form=("intercept", "additive", "multiplicative"), beta=(1, 2, 3), w_scale=0.5)
        assert DesignSpec.from_dict(spec.to_dict()) == spec

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown"):
            DesignSpec.from_dict({"n": 10, "sigma": 1})


class TestSimulate:
    def test_deterministic(self):
        spec = standard_designs(30)[3].with_(seed=11)
        (d1, y1, t1), (d2, y2, t2) = simulate(spec), simulate(spec)
        np.testing.assert_array_equal(d1.x, d2.x)
        np.testing.assert_array_equal(y1.y, y2.y)
        np.testing.assert_array_equal(t1.u, t2.u)

    def test_seed_changes_draws(self):
        a = simulate(DesignSpec(n=20, seed=1))[1].y
        b = simulate(DesignSpec(n=20, seed=2))[1].y
        assert not np.array_equal(a, b)

    def test_structure(self):
        spec = DesignSpec(n=15, gamma=1.0, regressor_form="multiplicative", seed=3)
        d, y, t = simulate(spec)
        assert d.intercept == 0 and d.names == ("const", "x1")
        np.testing.assert_array_equal(d.x[1], np.outer(t.x_nodes[0], t.x_nodes[0]) * (1 - np.eye(15)))
        np.testing.assert_array_equal(y.y, y.y.T)
        assert np.all(np.diag(y.y) == 0)

    def test_reparameterization(self):
        """Off the diagonal ``Y = X mu0 + delta U U' + V`` in every sign/scale case."""
        for delta in (1, -1):
            for scale in (1.0, 10.0):
                spec = DesignSpec(n=12, gamma=1.5, delta=delta, effect_scale=scale, seed=4)
                d, y, t = simulate(spec)
                rebuilt = d.combine(t.mu0) + delta * np.outer(t.u, t.u) + t.v
                np.fill_diagonal(rebuilt, 0.0)
                np.testing.assert_allclose(y.y, rebuilt, atol=1e-12)

    def test_spike_noise_diagonal(self):
        spec = DesignSpec(n=10, gamma=1.0, regressor_form="intercept_only", beta=(0.0,), seed=5)
        d, y, t = simulate(spec)
        m = y.y - d.combine(t.mu0)
        lhs = t.delta * m
        rhs = np.outer(t.u, t.u) + t.spike_noise() - t.mean_u**2 * np.eye(10)
        rhs[np.diag_indices(10)] += t.mean_u**2 - t.mean_u**2
        np.testing.assert_allclose(np.diag(rhs), 0.0, atol=1e-12)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_oracle_outcome_shares_draws(self):
        spec = standard_designs(20)[2].with_(seed=6)
        d, y, t = simulate(spec)
        np.testing.assert_allclose(oracle_outcome(d, spec, t).y, d.combine(spec.beta) + t.v)

    def test_w_scale_noise(self):
        spec = DesignSpec(n=30, w_scale=1.0, seed=7)
        d, _, t = simulate(spec)
        base = t.x_nodes[0][:, None] + t.x_nodes[0][None, :]
        np.fill_diagonal(base, 0.0)
        assert not np.allclose(d.x[1], base)

    def test_effect_moments_large_sample(self):
        spec = DesignSpec(n=4000, gamma=1.0, regressor_form="intercept_only", beta=(1.0,), seed=8)
        _, _, t = simulate(spec)
        se = np.sqrt(1.0 / 4000)
        assert abs(t.u.mean() - 1.0) < 5 * se
        assert abs(np.mean(t.u**2) - 2.0) < 5 * np.sqrt(6.0 / 4000)


class TestSeeds:
    def test_derive_seed_stable_and_distinct(self):
        assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
        assert len({derive_seed(1, k) for k in range(100)}) == 100
        assert 0 <= derive_seed(2**64 - 1, 5) < 2**64

    def test_streams_independent(self):
        a = rng_for(9, 0).normal(size=5)
        b = rng_for(9, 1).normal(size=5)
        assert not np.array_equal(a, b)


def test_standard_designs():
    ds = standard_designs(50)
    assert [d.name for d in ds] == ["design1", "design2", "design3", "design4"]
    assert [d.gamma for d in ds] == [0.0, 0.0, 1.0, 1.0]
    assert [d.regressor_form for d in ds] == ["additive", "multiplicative"] * 2
    assert all(d.n == 50 for d in ds)
