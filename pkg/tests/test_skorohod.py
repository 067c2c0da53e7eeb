import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rbmkit.reflection import ReflectionSpec, asym_atlas_P, atlas_P
from rbmkit.skorohod import (
    DiscretePath, HRSolver, lipschitz_probe, load_path, read_path_csv, save_path, sm_1d, sm_hr,
    write_path_csv,
)

steps = st.floats(-1.0, 1.0, allow_nan=False, width=64)


def walk(d, n):
    return arrays(np.float64, (n, d), elements=steps).map(
        lambda inc: DiscretePath(np.arange(n + 1) * 0.01, np.vstack([np.zeros(d), np.cumsum(inc, 0)])))


@st.composite
def hr_matrices(draw, d):
    """Random substochastic P with row sums <= 0.9 (hence transient)."""
    A = draw(arrays(np.float64, (d, d), elements=st.floats(0, 1)))
    s = A.sum(axis=1, keepdims=True)
    scale = draw(st.floats(0, 0.9))
    return np.where(s > 0, A / np.where(s > 0, s, 1) * scale, 0.0)


@given(walk(1, 40), st.floats(0, 2))
def test_hr_map_reduces_to_1d_map(psi, x0):
    a = sm_1d(psi, x0)
    b = sm_hr(psi, ReflectionSpec([[0.0]]), [x0])
    assert np.allclose(a.phi.v, b.phi.v, atol=1e-12)
    assert np.allclose(a.ell.v, b.ell.v, atol=1e-12)


@given(walk(3, 30), hr_matrices(3))
def test_output_in_orthant_with_complementarity(psi, P):
    s = sm_hr(psi, ReflectionSpec(P))
    assert s.phi.v.min() >= -1e-9
    assert np.all(np.diff(s.ell.v, axis=0) >= -1e-12)
    assert s.residual < 1e-8


@given(walk(3, 30), arrays(np.float64, (30, 3), elements=st.floats(0, 1)))
def test_local_time_antitone_in_driver(psi, bump):
    lift = DiscretePath(psi.t, psi.v + np.vstack([np.zeros(3), bump]))
    refl = ReflectionSpec(atlas_P(3))
    lo, hi = sm_hr(psi, refl), sm_hr(lift, refl)
    assert np.all(hi.ell.v <= lo.ell.v + 1e-8)


@given(walk(4, 25))
def test_idempotent(psi):
    refl = ReflectionSpec(asym_atlas_P(4, 0.7))
    s = sm_hr(psi, refl)
    phi = s.phi.v
    again = sm_hr(DiscretePath(psi.t, phi - phi[0]), refl, phi[0])
    assert np.allclose(again.phi.v, phi, atol=1e-9)
    assert np.abs(again.ell.v).max() < 1e-9


@given(st.lists(st.tuples(walk(3, 20), walk(3, 20)), min_size=1, max_size=4))
def test_lipschitz_ratio_bounded(pairs):
    refl = ReflectionSpec(atlas_P(3))
    ratios, worst = lipschitz_probe(refl, pairs)
    R, Rinv = np.array(refl.R), np.array(refl.Rinv)
    L = 1 + np.abs(R).sum(1).max() * np.abs(Rinv).sum(1).max()
    assert all(r <= L + 1e-9 for r in ratios)


@given(walk(3, 20), st.lists(st.floats(0, 2), min_size=3, max_size=3))
def test_exact_solver_matches_fixed_point(psi, x0):
    solver = HRSolver(atlas_P(3), tol=1e-13)
    x0 = np.array(x0)
    ell_fp, _ = solver.solve(x0, psi.v)
    ell_ex = solver.solve_exact(x0, psi.v)
    assert np.allclose(ell_fp, ell_ex, atol=1e-8)


def test_dense_solver_path_for_non_tridiagonal():
    P = np.full((4, 4), 0.2)
    solver = HRSolver(P)
    assert not solver.tridiagonal
    psi = np.cumsum(np.random.default_rng(1).normal(size=(50, 4)), 0)
    psi[0] = 0
    ell = solver.solve_exact(np.zeros(4), psi)
    phi = psi + solver.push(ell)
    assert phi.min() >= -1e-10


def test_reject_bad_input():
    with pytest.raises(ValueError):
        DiscretePath([0.0, 0.0], [[1.0], [2.0]])
    with pytest.raises(ValueError):
        DiscretePath([0.1, 0.2], [[1.0], [2.0]])
    with pytest.raises(ValueError):
        sm_1d(DiscretePath([0.0, 1.0], [[0.0, 0.0], [1.0, 1.0]]))
    with pytest.raises(ValueError):
        sm_hr(DiscretePath([0.0, 1.0], [[0.0], [1.0]]), ReflectionSpec(atlas_P(2)))


@given(walk(2, 15))
def test_csv_round_trip_is_exact(tmp_path_factory, psi):
    f = tmp_path_factory.mktemp("csv") / "p.csv"
    write_path_csv(psi, f)
    back = read_path_csv(f)
    assert np.array_equal(back.t, psi.t) and np.array_equal(back.v, psi.v)


def test_npy_round_trip_is_exact(tmp_path):
    psi = DiscretePath(np.linspace(0, 1, 11), np.random.default_rng(0).normal(size=(11, 3)))
    save_path(psi, tmp_path / "p.npy")
    back = load_path(tmp_path / "p.npy")
    assert np.array_equal(back.t, psi.t) and np.array_equal(back.v, psi.v)
