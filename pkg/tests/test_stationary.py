from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rbmkit.reflection import ParamError, RankParams, RbmParams, generator
from rbmkit.stationary import (
    NotApplicable, ProductExpLaw, check_satinteg, d1_records, finite_atlas_stationary,
    fit_report, gap_rbm_stationary, gbar, hr_rank_stationary, ks_marginal, logpdf, pi_a, pi_a_g,
    sample,
)


@pytest.mark.parametrize("d", range(1, 13))
def test_three_routes_agree(d):
    fa = finite_atlas_stationary(d)
    rp = RankParams.standard_atlas(d)
    hr = hr_rank_stationary(rp)
    assert fa.exact == hr.exact
    assert fa.exact == tuple(Fraction(2 * (d + 1 - i), d + 1) for i in range(1, d + 1))
    assert np.allclose(gap_rbm_stationary(rp.to_rbm()).rates, fa.rates, rtol=1e-12)


def test_atlas_three_gaps():
    assert finite_atlas_stationary(3).exact == (Fraction(3, 2), Fraction(1), Fraction(1, 2))


def test_linear_variance_ranks_satisfy_skew_condition():
    d = 5
    sig = tuple(np.sqrt(1 + 0.3 * np.arange(d + 1)))
    rp = RankParams((1.0,) + (0.0,) * d, sig)
    law = hr_rank_stationary(rp)
    assert law and np.allclose(law.rates, gap_rbm_stationary(rp.to_rbm()).rates)


def test_not_applicable_cases():
    rp = RankParams((1.0, 0.0, 0.0), (1.0, 2.0, 1.0))
    assert isinstance(hr_rank_stationary(rp), NotApplicable)
    assert not gap_rbm_stationary(rp.to_rbm())
    unstable = RankParams((0.0, 0.0, 1.0), (1.0, 1.0, 1.0))
    assert not hr_rank_stationary(unstable)
    assert isinstance(hr_rank_stationary(RankParams.standard_atlas(3, 0.7)), NotApplicable)


def test_asymmetric_atlas_has_product_form():
    law = gap_rbm_stationary(RankParams.standard_atlas(4, 0.75).to_rbm())
    assert law.rates == pytest.approx([1.322, 1.289, 1.190, 0.893], abs=2e-3)


def test_one_dimensional_rbm_rate():
    law = gap_rbm_stationary(RbmParams([-1.0], [[1.0]], generator("identity", 1)))
    assert law.rates[0] == pytest.approx(2.0)


@given(st.integers(1, 20), st.fractions(0, 5))
def test_pi_a_g_reduces_to_pi_a(d, a):
    g = np.zeros(d)
    g[0] = 1.0
    assert np.allclose(pi_a_g(g, float(a), d).rates, pi_a(float(a), d).rates)


def test_pi_a_validation_and_rule():
    law = pi_a(0.5, 4)
    assert law.exact is None and np.allclose(law.rates, [2.5, 3.0, 3.5, 4.0])
    assert np.allclose(law.rule(np.array([10])), [7.0])
    assert pi_a(Fraction(1, 2), 2).exact == (Fraction(5, 2), Fraction(3))
    with pytest.raises(ParamError):
        pi_a(-1, 3)


def test_pi_a_g_window_and_boundary():
    g = np.array([1.0, -1.0, 0.5, -0.5, 0.2, -0.2])
    gb = gbar(g, 6)
    assert np.allclose(gb, np.cumsum(g) / np.arange(1, 7))
    with pytest.raises(ParamError):
        pi_a_g(g, -2 * gb.min(), 6)
    assert pi_a_g(g, -2 * gb.min() + 1e-3, 6).tag == "pi-a-g"
    # gbar descending to 0 through record lows admits the boundary a = 0
    h = 1.0 / np.arange(1, 41)
    rec = d1_records(gbar(h, 40))
    assert len(rec) > 2
    assert pi_a_g(h, 0.0, 40, g_limit=0.0).note == "prefix-certified"
    with pytest.raises(ParamError):
        pi_a_g(np.ones(10), -2.0, 10, g_limit=1.0)


def test_law_validation_and_csv(tmp_path):
    with pytest.raises(ParamError):
        ProductExpLaw([1.0, 0.0])
    with pytest.raises(ParamError):
        ProductExpLaw([1.0], tag="bogus")
    law = ProductExpLaw([0.1, 1 / 3, 7.0])
    law.to_csv(tmp_path / "r.csv")
    assert np.array_equal(ProductExpLaw.from_csv(tmp_path / "r.csv").rates, law.rates)


def test_sampler_moments_and_ks():
    law = finite_atlas_stationary(3)
    z = sample(law, 40000, 3)
    assert np.allclose(z.mean(0), law.mean, rtol=0.03)
    assert np.allclose(z.var(0), law.mean**2, rtol=0.06)
    assert all(ks_marginal(law, z, i)[0] < 0.01 for i in (1, 2, 3))
    rows = fit_report(law, z)
    assert [r["coord"] for r in rows] == [1, 2, 3] and rows[0]["n"] == 40000
    assert np.array_equal(sample(law, 10, 3), z[:10])


def test_logpdf():
    law = ProductExpLaw([2.0, 1.0])
    assert logpdf(law, [0.5, 1.0]) == pytest.approx(np.log(2) - 1 - 1)
    assert logpdf(law, [-0.1, 1.0]) == -np.inf


def test_integrability_sum():
    r0 = check_satinteg(pi_a(0, 50), 2000, 1)
    assert r0.verdict == "finite-evidence" and np.isfinite(r0.tail)
    assert np.all(np.diff(r0.partial) >= 0)
    r1 = check_satinteg(pi_a(1, 50), 2000, 1)
    assert r1.verdict == "finite-evidence" and r1.estimate > r0.estimate
    huge = ProductExpLaw(np.full(10, 1e6))
    assert check_satinteg(huge, 500, 1).verdict == "inconclusive"
