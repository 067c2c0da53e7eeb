from fractions import Fraction

import numpy as np
import pytest
import sympy
from hypothesis import given
from hypothesis import strategies as st

from rbmkit.reflection import (
    BoundError, ContractionError, ParamError, RankParams, RbmParams, ReflectionError,
    ReflectionSpec, asym_atlas_P, asym_atlas_rinv, atlas_P, atlas_rinv, bc_bound, bc_trel_bound,
    check_bc, check_df, check_harrison_reiman, contraction_coefficient, exact_rinv, generator,
    inverse_via_neumann, rank_bound, rank_trel_bound, rate_constants, stability_vector,
    trel_bound, wasthm_bound,
)


def test_atlas_is_hr():
    rep = check_harrison_reiman(atlas_P(5))
    assert rep.valid and rep.substochastic and rep.transient is True


def test_row_sum_above_one_is_rejected():
    rep = check_harrison_reiman([[0.5, 0.6], [0.5, 0.0]])
    assert not rep.valid and not rep.substochastic
    with pytest.raises(ReflectionError):
        ReflectionSpec([[0.5, 0.6], [0.5, 0.0]])


def test_recurrent_chain_is_not_transient():
    rep = check_harrison_reiman([[0.0, 1.0], [1.0, 0.0]])
    assert rep.substochastic and rep.transient is False and not rep.valid


def test_negative_entry_is_rejected():
    assert not check_harrison_reiman([[0.0, -0.1], [0.2, 0.0]]).substochastic


@given(st.integers(1, 30), st.sampled_from([0.5, 0.55, 2 / 3, 0.9, 0.2]))
def test_closed_form_inverse_matches_solve(d, p):
    refl = ReflectionSpec(asym_atlas_P(d, p))
    direct = np.linalg.inv(np.array(refl.R))
    assert np.allclose(asym_atlas_rinv(d, p), direct, rtol=0, atol=1e-10)
    assert np.allclose(inverse_via_neumann(refl), direct, rtol=0, atol=1e-9)


@pytest.mark.parametrize("d", [1, 2, 5, 9])
def test_symmetric_inverse_exact(d):
    P = [[Fraction(1, 2) if abs(i - j) == 1 else Fraction(0) for j in range(d)] for i in range(d)]
    assert exact_rinv(P) == atlas_rinv(d, exact=True)
    # independent oracle: sympy inverse
    R = sympy.eye(d) - sympy.Matrix(P).T
    assert R.inv().tolist() == [[sympy.Rational(x.numerator, x.denominator) for x in row]
                                for row in atlas_rinv(d, exact=True)]


def test_contraction_coefficient_values():
    assert contraction_coefficient(ReflectionSpec(np.zeros((3, 3)))) == 1
    # 1-D chain with P = 0.9: ||P^n|| <= 1/2 first at n = 7
    assert contraction_coefficient(ReflectionSpec([[0.9]])) == 7
    with pytest.raises(ContractionError):
        contraction_coefficient(np.array([[1.0]]), cap=50)


def test_generator_names(tmp_path):
    assert generator("atlas", 3).d == 3
    assert np.allclose(generator("asym_atlas:3/4", 3).P[0, 1], 0.75)
    assert not generator("identity", 2).P.any()
    f = tmp_path / "P.csv"
    f.write_text("0,0.5\n0.5,0\n")
    assert np.allclose(generator(f"custom:{f}", 0).P, atlas_P(2))
    with pytest.raises(ReflectionError):
        generator("nope", 2)


@pytest.mark.parametrize("d", range(1, 13))
def test_standard_atlas_constants_exact(d):
    rp = RankParams.standard_atlas(d)
    assert rp.rank_b(exact=True) == [Fraction(d + 1 - k, d + 1) for k in range(1, d + 1)]
    assert rp.astar(exact=True) == d * (d + 1)


def test_rbm_drift_vector_is_twice_rank_b():
    rp = RankParams.standard_atlas(6)
    assert np.allclose(rp.to_rbm().b, 2 * rp.rank_b())
    assert rp.to_rbm().stable


def test_param_validation():
    with pytest.raises(ParamError):
        RankParams((1, 0), (1, -1))
    with pytest.raises(ParamError):
        RankParams((1, 0), (1, 1), p=1.0)
    with pytest.raises(ParamError):
        RbmParams([1.0, 2.0], np.eye(3), generator("atlas", 2))


def test_unstable_drift():
    params = RbmParams([1.0], np.eye(1), generator("identity", 1))
    assert not params.stable
    assert stability_vector(params)[0] < 0
    with pytest.raises(BoundError):
        rate_constants(params)


def test_bounds_decrease_in_t():
    rp = RankParams.standard_atlas(4)
    params = rp.to_rbm()
    c = rate_constants(params, rank=rp)
    ts = np.geomspace(1e4, 1e6, 9)
    vals = [wasthm_bound(t, c) for t in ts]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    z = np.zeros(4)
    ts = np.geomspace(1e5, 1e7, 9)
    vals = [rank_bound(t, z, 4, c.astar, c.sigmaBound) for t in ts]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    vals = [bc_bound(t, z, 4) for t in np.geomspace(10, 300, 9)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_bound_below_threshold_raises():
    c = rate_constants(RankParams.standard_atlas(3).to_rbm())
    with pytest.raises(BoundError):
        wasthm_bound(1e-3, c)
    with pytest.raises(BoundError):
        trel_bound(c, {"bogus": 1.0})


def test_trel_bounds_scale_with_free_constants():
    z = np.zeros(8)
    base = bc_trel_bound(z, 8)
    assert bc_trel_bound(z, 8, {"E1": 2.0}) >= base
    r1 = rank_trel_bound(z, 8, 72.0, 1.0)
    r2 = rank_trel_bound(z, 8, 72.0, 1.0, {"F1": 3.0})
    assert r2 >= r1 > 0


def test_bc_holds_for_asymmetric_atlas():
    rep = check_bc(RankParams.standard_atlas(16, 0.75).to_rbm())
    assert rep.holds and 0 < rep.beta < 1


def test_df_witness_for_asymmetric_atlas():
    rep = check_df(RankParams.standard_atlas(10, 2 / 3).to_rbm())
    assert rep.holds
    assert rep.alpha == pytest.approx(0.5, abs=0.05)


def test_df_fails_for_symmetric_atlas():
    rep = check_df(RankParams.standard_atlas(10).to_rbm())
    assert not rep.holds
