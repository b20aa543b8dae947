import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covert_qcd.probability import (
    AbsoluteContinuityError,
    Pmf,
    SupportMismatchError,
    chi2_divergence,
    divergences,
    kl_divergence,
    llr_second_moment,
)


def pmf_pairs(min_size=1, max_size=8):
    """Pairs (p, q) with q strictly positive, so p << q always holds."""

    @st.composite
    def build(draw):
        n = draw(st.integers(min_size, max_size))
        a = draw(st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n))
        b = draw(st.lists(st.floats(1e-3, 1.0), min_size=n, max_size=n))
        a = np.array(a)
        if a.sum() == 0.0:
            a[0] = 1.0
        b = np.array(b)
        return Pmf(a / a.sum()), Pmf(b / b.sum())

    return build()


class TestPmf:
    def test_renormalizes_within_tolerance(self):
        p = Pmf([0.5, 0.5 + 5e-13])
        assert p.mass.sum() == pytest.approx(1.0, abs=1e-15)

    def test_rejects_bad_sum(self):
        with pytest.raises(ValueError, match="sum"):
            Pmf([0.5, 0.6])

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            Pmf([1.2, -0.2])

    def test_degenerate_size_one(self):
        assert Pmf([1.0]).support_size == 1

    def test_immutable(self):
        p = Pmf.bernoulli(0.3)
        with pytest.raises(ValueError):
            p.mass[0] = 0.1

    def test_bernoulli_layout(self):
        assert Pmf.bernoulli(0.8).mass.tolist() == pytest.approx([0.2, 0.8])


class TestKnownValues:
    def test_kl_reference(self):
        assert kl_divergence(Pmf.bernoulli(0.8), Pmf.bernoulli(0.2)) == pytest.approx(0.6 * math.log(4), abs=1e-12)
        assert kl_divergence(Pmf.bernoulli(0.8), Pmf.bernoulli(0.2)) == pytest.approx(0.83178, abs=1e-5)

    def test_kl_hand_checked(self):
        # 0.7 ln(7/3) + 0.3 ln(3/7) = 0.4 ln(7/3)
        assert kl_divergence(Pmf.bernoulli(0.7), Pmf.bernoulli(0.3)) == pytest.approx(0.4 * math.log(7 / 3), abs=1e-15)
        assert 0.4 * math.log(7 / 3) == pytest.approx(0.338919, abs=1e-6)

    def test_second_moment(self):
        assert llr_second_moment(Pmf.bernoulli(0.8), Pmf.bernoulli(0.2)) == pytest.approx(1.92181, abs=1e-5)
        assert llr_second_moment(Pmf.bernoulli(0.7), Pmf.bernoulli(0.3)) == pytest.approx(
            math.log(7 / 3) ** 2, abs=1e-12
        )
        assert math.log(7 / 3) ** 2 == pytest.approx(0.717914, abs=1e-6)

    def test_chi2(self):
        assert chi2_divergence(Pmf.bernoulli(0.7), Pmf.bernoulli(0.3)) == pytest.approx(16 / 21, abs=1e-14)
        assert chi2_divergence(Pmf.bernoulli(0.6), Pmf.bernoulli(0.4)) == pytest.approx(1 / 6, abs=1e-14)

    @pytest.mark.parametrize("f", [kl_divergence, llr_second_moment, chi2_divergence])
    def test_identity_is_zero(self, f):
        p = Pmf([0.1, 0.2, 0.7])
        assert f(p, p) == 0.0

    def test_zero_mass_terms_ignored(self):
        p, q = Pmf([0.0, 1.0]), Pmf([0.5, 0.5])
        assert kl_divergence(p, q) == pytest.approx(math.log(2))
        # q has a zero where p does too: the symbol is skipped.
        assert chi2_divergence(Pmf([0.0, 1.0]), Pmf([0.0, 1.0])) == 0.0


class TestErrors:
    def test_support_mismatch(self):
        with pytest.raises(SupportMismatchError):
            kl_divergence(Pmf([0.5, 0.5]), Pmf([0.2, 0.3, 0.5]))

    @pytest.mark.parametrize("f", [kl_divergence, llr_second_moment, chi2_divergence])
    def test_absolute_continuity(self, f):
        with pytest.raises(AbsoluteContinuityError):
            f(Pmf([0.5, 0.5]), Pmf([1.0, 0.0]))


class TestProperties:
    @settings(max_examples=1000, deadline=None)
    @given(pmf_pairs())
    def test_inequalities(self, pq):
        p, q = pq
        d = divergences(p, q)
        assert d.kl >= 0.0
        assert d.chi2 >= 0.0
        assert d.second_moment >= d.kl**2 - 1e-10
        # ln(1 + x) <= x gives KL <= chi2.
        assert d.kl <= d.chi2 + 1e-12

    @settings(max_examples=1000, deadline=None)
    @given(pmf_pairs(min_size=2), st.randoms(use_true_random=False))
    def test_permutation_invariance(self, pq, r):
        p, q = pq
        perm = list(range(p.support_size))
        r.shuffle(perm)
        pp, qq = Pmf(p.mass[perm]), Pmf(q.mass[perm])
        for f in (kl_divergence, llr_second_moment, chi2_divergence):
            assert f(pp, qq) == pytest.approx(f(p, q), rel=1e-12, abs=1e-14)

    @settings(max_examples=1000, deadline=None)
    @given(pmf_pairs())
    def test_kl_zero_iff_equal(self, pq):
        p, q = pq
        equal = p.allclose(q, atol=1e-12)
        assert (kl_divergence(p, q) == 0.0) == equal or kl_divergence(p, q) < 1e-20
        assert (chi2_divergence(p, q) == 0.0) == (kl_divergence(p, q) == 0.0) or kl_divergence(p, q) < 1e-20
