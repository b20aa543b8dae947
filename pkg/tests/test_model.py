import math

import numpy as np
import pytest

from covert_qcd.model import (
    ChannelAssumptionError,
    Prior,
    Scenario,
    build_channel,
    observation_index,
    product_channel,
    reference_channel,
    sample_changepoint,
    sample_observation,
)


def ber(p):
    return [1.0 - p, p]


def product(alice, eve):
    return product_channel(alice, eve)


class TestBuildChannel:
    def test_reference_constants(self, channel):
        assert channel.D == pytest.approx(0.8318, abs=5e-5)
        assert channel.V == pytest.approx(1.9218, abs=5e-5)
        assert channel.chi2_post == pytest.approx(16 / 21, abs=1e-12)
        assert channel.chi2_pre == pytest.approx(1 / 6, abs=1e-12)

    def test_marginals_match_joint(self, channel):
        for x in (0, 1):
            for th in (0, 1):
                j = channel.joint[x, th]
                np.testing.assert_allclose(channel.alice[x][th].mass, j.sum(axis=1), atol=1e-12)
                np.testing.assert_allclose(channel.eve[x][th].mass, j.sum(axis=0), atol=1e-12)

    def test_rejects_free_passive_sensing(self):
        with pytest.raises(ChannelAssumptionError) as exc:
            product([[ber(0.5), ber(0.6)], [ber(0.2), ber(0.8)]], [[ber(0.4), ber(0.3)], [ber(0.6), ber(0.7)]])
        assert exc.value.assumption == "no free passive sensing"

    def test_rejects_uninformative_probe(self):
        with pytest.raises(ChannelAssumptionError) as exc:
            product([[ber(0.5), ber(0.5)], [ber(0.2), ber(0.2)]], [[ber(0.4), ber(0.3)], [ber(0.6), ber(0.7)]])
        assert exc.value.assumption == "active sensing gain"

    def test_rejects_infinite_gain(self):
        with pytest.raises(ChannelAssumptionError) as exc:
            product([[ber(0.5), ber(0.5)], [ber(0.0), ber(0.8)]], [[ber(0.4), ber(0.3)], [ber(0.6), ber(0.7)]])
        assert exc.value.assumption == "active sensing gain"

    def test_rejects_zero_chi2(self):
        with pytest.raises(ChannelAssumptionError) as exc:
            product([[ber(0.5), ber(0.5)], [ber(0.2), ber(0.8)]], [[ber(0.4), ber(0.3)], [ber(0.4), ber(0.3)]])
        assert exc.value.assumption == "eve distinguishability"

    def test_rejects_eve_support_violation(self):
        with pytest.raises(ChannelAssumptionError) as exc:
            product([[ber(0.5), ber(0.5)], [ber(0.2), ber(0.8)]], [[ber(0.0), ber(0.3)], [ber(0.6), ber(0.7)]])
        assert exc.value.assumption == "eve absolute continuity"

    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            build_channel(np.ones((2, 3, 2, 2)) / 4)
        with pytest.raises(ValueError):
            build_channel(np.ones((2, 2, 17, 1)) / 17)

    def test_rejects_non_pmf_slice(self):
        tables = reference_channel().joint.copy()
        tables[1, 0, 0, 0] += 0.1
        with pytest.raises(ValueError, match="x=1, theta=0"):
            build_channel(tables)

    def test_correlated_joint(self):
        # Y and Z perfectly correlated under probing; marginals still valid.
        t = np.zeros((2, 2, 2, 2))
        t[0, 0] = t[0, 1] = np.outer(ber(0.5), ber(0.4))
        t[0, 1] = np.outer(ber(0.5), ber(0.3))
        t[1, 0] = np.diag([0.4, 0.6])
        t[1, 1] = np.diag([0.3, 0.7])
        ch = build_channel(t)
        assert ch.alice[1][0].mass.tolist() == pytest.approx([0.4, 0.6])
        assert ch.eve[1][1].mass.tolist() == pytest.approx([0.3, 0.7])
        assert ch.chi2_pre == pytest.approx(0.2**2 / 0.6 + 0.2**2 / 0.4)
        assert ch.D == pytest.approx(0.3 * math.log(0.75) + 0.7 * math.log(7 / 6))

    def test_modulated_llr(self, channel):
        for y in range(channel.n_y):
            assert channel.modulated_llr(0, y) == 0.0
            assert channel.modulated_llr(1, y) == channel.llr(y)
        assert channel.llr(1) == pytest.approx(math.log(4))
        assert channel.llr(0) == pytest.approx(-math.log(4))


class TestPrior:
    def test_constants(self):
        p = Prior(1 / 20)
        assert p.d == pytest.approx(-math.log(0.95))
        assert p.c_rho == pytest.approx(math.log(19))
        assert p.mean == 20.0

    @pytest.mark.parametrize("n", [0, 1, 7, 50, 300])
    def test_tail_recursion(self, n):
        p = Prior(1 / 20)
        assert p.tail(n) * (1 - p.rho) == pytest.approx(p.tail(n + 1), rel=1e-12)
        assert p.tail(n) == pytest.approx(0.95**n, rel=1e-12)

    @pytest.mark.parametrize("rho", [0.0, 1.0, -0.1])
    def test_invalid(self, rho):
        with pytest.raises(ValueError):
            Prior(rho)


class TestScenario:
    def test_derived(self, channel):
        s = Scenario.at(channel, 1 / 20, 1 / 24, 3.0)
        assert s.alpha == pytest.approx(math.exp(-3))
        assert s.b_alpha == pytest.approx(math.log((1 - s.alpha) / s.alpha), rel=1e-14)
        assert s.n_alpha == math.ceil(3.0 / -math.log(0.95))
        assert s.b_alpha > 0

    def test_alpha_range(self, channel):
        with pytest.raises(ValueError):
            Scenario.at(channel, 0.05, 0.1, 0.5)
        with pytest.raises(ValueError):
            Scenario.from_alpha(channel, Prior(0.05), 0.1, 0.6)

    def test_huge_abs_ln_alpha(self, channel):
        s = Scenario.at(channel, 0.05, 0.1, 1e6)
        assert s.alpha == 0.0
        assert s.b_alpha == 1e6

    def test_from_alpha_roundtrip(self, channel):
        s = Scenario.from_alpha(channel, Prior(0.05), 0.1, 0.01)
        assert s.alpha == pytest.approx(0.01, rel=1e-14)


class TestSampling:
    def test_changepoint_mean(self):
        rng = np.random.default_rng(1)
        prior = Prior(1 / 20)
        draws = np.array([sample_changepoint(prior, rng) for _ in range(1000)])
        assert draws.min() >= 1
        big = rng.geometric(prior.rho, size=10**6)
        assert big.mean() == pytest.approx(20.0, abs=0.1)
        for n in (1, 10, 50):
            assert (big > n).mean() == pytest.approx(prior.tail(n), abs=4 * math.sqrt(prior.tail(n) / 1e6))

    def test_changepoint_near_one(self):
        rng = np.random.default_rng(2)
        draws = rng.geometric(0.999, size=10**5)
        assert (draws == 1).mean() == pytest.approx(0.999, abs=5e-4)

    def test_observation_frequencies(self, channel):
        rng = np.random.default_rng(3)
        n = 200_000
        u = rng.random(n)
        idx = observation_index(channel, 1, 1, u)
        y, z = np.divmod(idx, channel.n_z)
        assert y.mean() == pytest.approx(0.8, abs=5e-3)
        assert z.mean() == pytest.approx(0.7, abs=5e-3)
        z10 = np.divmod(observation_index(channel, 1, 0, u), channel.n_z)[1]
        assert z10.mean() == pytest.approx(0.6, abs=5e-3)

    def test_no_free_passive_sensing_statistics(self, channel):
        u = np.random.default_rng(4).random(100_000)
        y0 = np.divmod(observation_index(channel, 0, 0, u), channel.n_z)[0]
        y1 = np.divmod(observation_index(channel, 0, 1, u), channel.n_z)[0]
        # Same uniforms, same y marginal: the y draws coincide exactly.
        np.testing.assert_array_equal(y0, y1)

    def test_sample_observation_scalar(self, channel):
        rng = np.random.default_rng(5)
        y, z = sample_observation(channel, 1, 0, rng)
        assert y in (0, 1) and z in (0, 1)
