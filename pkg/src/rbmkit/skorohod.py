"""Skorohod maps on discrete paths.

``sm_1d`` is the explicit one-sided map. ``sm_hr`` solves the
Harrison-Reiman problem phi = x0 + psi + (I - P^T) ell by Picard iteration

    ell^{m+1}_i(t_k) = max_{j<=k} [ (P^T ell^m)_i(t_j) - x0_i - psi_i(t_j) ]_+ ,

which converges geometrically for transient P. The same kernel is used by
the simulators on short per-step paths.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import _banded
from .reflection import ReflectionSpec

log = logging.getLogger(__name__)

FP_TOL = 1e-10
FP_CAP = 10_000


class SkorohodError(RuntimeError):
    def __init__(self, msg, last_increment=None):
        super().__init__(msg)
        self.last_increment = last_increment


@dataclass(frozen=True, eq=False)
class DiscretePath:
    t: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if t.ndim != 1 or v.shape[0] != t.size:
            raise ValueError(f"grid of length {t.size} does not match values {v.shape}")
        if t.size == 0 or t[0] != 0:
            raise ValueError("grid must start at t = 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("grid must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("path has non-finite values")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "v", v)

    @property
    def d(self):
        return self.v.shape[1]

    @property
    def N(self):
        return self.t.size - 1

    def __sub__(self, other):
        return DiscretePath(self.t, self.v - other.v)


@dataclass(frozen=True, eq=False)
class SkorohodSolution:
    phi: DiscretePath
    ell: DiscretePath
    residual: float
    sweeps: int = 0


def activity_threshold(dt, sigma_max=1.0):
    """Discrete stand-in for 'x = 0': sqrt(dt) 1e-3 sigma_max."""
    return float(np.sqrt(dt) * 1e-3 * sigma_max)


def complementarity_residual(phi, ell, eps_act):
    """max_i sum_k 1{phi_i(t_{k+1}) > eps} (ell_i(t_{k+1}) - ell_i(t_k)).

    A push in step k -> k+1 is charged to the point where it lands.
    """
    inc = np.diff(ell, axis=0)
    return float(np.max(np.sum(np.where(phi[1:] > eps_act, inc, 0.0), axis=0), initial=0.0))


class HRSolver:
    """Batched Picard solver for a fixed P.

    ``solve(x0, psi)`` takes x0 of shape (..., d) and driver values psi of
    shape (..., K, d), relative to x0, on K consecutive points.
    """

    def __init__(self, P, tol=FP_TOL, cap=FP_CAP):
        P = P.P if isinstance(P, ReflectionSpec) else np.asarray(P, dtype=float)
        self.PT = np.ascontiguousarray(P.T)
        self.offs = _banded.offsets(self.PT)
        self.tol = tol
        self.cap = cap
        self.tridiagonal = set(self.offs) <= {-1, 0, 1}

    def push(self, ell):
        """(I - P^T) ell."""
        if not self.offs:
            return ell
        return ell - _banded.matvec(self.PT, ell, self.offs)

    def solve(self, x0, psi):
        free = -(x0[..., None, :] + psi)
        ell = np.zeros_like(free)
        if not np.any(free > 0):
            return ell, 0
        inc = np.inf
        for sweep in range(1, self.cap + 1):
            new = np.maximum.accumulate(
                np.maximum(_banded.matvec(self.PT, ell, self.offs) + free, 0.0), axis=-2)
            inc = float(np.max(np.abs(new - ell)))
            ell = new
            if inc < self.tol:
                return ell, sweep
        raise SkorohodError(f"fixed point not reached in {self.cap} sweeps", inc)


    def solve_exact(self, x0, psi):
        """Same minimal solution, computed point by point.

        At each grid point the new push delta solves the linear
        complementarity problem w + R delta >= 0, delta >= 0, with w the
        position before pushing. R is an M-matrix, so growing the active set
        from {w < 0} reaches the solution in at most d pivots.
        """
        K = psi.shape[-2]
        ell = np.zeros(np.broadcast_shapes(x0[..., None, :].shape, psi.shape))
        cur = np.zeros(ell.shape[:-2] + ell.shape[-1:])
        for j in range(K):
            w = x0 + psi[..., j, :] + self.push(cur)
            hit = np.any(w < 0, axis=-1)
            if hit.any():
                cur = cur.copy()
                cur[hit] += self._lcp(w[hit])
            ell[..., j, :] = cur
        return ell

    def _lcp(self, w):
        d = w.shape[-1]
        R = np.eye(d) - self.PT
        act = w < 0
        delta = np.zeros_like(w)
        rows = np.arange(w.shape[0])
        for _ in range(d):
            delta[rows] = self._solve_active(R, act[rows], w[rows])
            wn = w[rows] + delta[rows] - _banded.matvec(self.PT, delta[rows], self.offs)
            new = (wn < -self.tol) & ~act[rows]
            more = new.any(axis=-1)
            if not more.any():
                break
            act[rows[more]] |= new[more]
            rows = rows[more]
        return delta

    def _solve_active(self, R, act, w):
        rhs = np.where(act, -w, 0.0)
        if self.tridiagonal:
            keep = act[:, :-1] & act[:, 1:]
            lo = np.where(keep, np.diagonal(R, -1), 0.0)
            up = np.where(keep, np.diagonal(R, 1), 0.0)
            diag = np.where(act, np.diagonal(R), 1.0)
            return _thomas(lo, diag, up, rhs)
        M = np.where(act[:, :, None] & act[:, None, :], R, np.eye(R.shape[0]))
        return np.linalg.solve(M, rhs[..., None])[..., 0]


def _thomas(lo, diag, up, rhs):
    """Batched tridiagonal solve; lo/up hold the sub/super diagonals."""
    n = diag.shape[-1]
    c = np.empty_like(diag)
    g = np.empty_like(rhs)
    c[:, 0] = diag[:, 0]
    g[:, 0] = rhs[:, 0]
    for i in range(1, n):
        f = lo[:, i - 1] / c[:, i - 1]
        c[:, i] = diag[:, i] - f * up[:, i - 1]
        g[:, i] = rhs[:, i] - f * g[:, i - 1]
    x = np.empty_like(rhs)
    x[:, -1] = g[:, -1] / c[:, -1]
    for i in range(n - 2, -1, -1):
        x[:, i] = (g[:, i] - up[:, i] * x[:, i + 1]) / c[:, i]
    return x


def hr_fixed_point(x0, psi, P, tol=FP_TOL, cap=FP_CAP):
    return HRSolver(P, tol, cap).solve(x0, psi)


def sm_1d(psi, x0=0.0):
    """phi = (x0 + psi) - min(0, running min of (x0 + psi))."""
    if psi.d != 1:
        raise ValueError("sm_1d needs a one-dimensional path")
    if x0 < 0:
        raise ValueError("start must be nonnegative")
    free = x0 + psi.v
    ell = np.maximum(np.maximum.accumulate(-free, axis=0), 0.0)
    phi = free + ell
    eps = activity_threshold(np.min(np.diff(psi.t)) if psi.N else 1.0)
    return SkorohodSolution(DiscretePath(psi.t, phi), DiscretePath(psi.t, ell),
                            complementarity_residual(phi, ell, eps), 1)


def sm_hr(psi, refl, x0=None, tol=FP_TOL, cap=FP_CAP, sigma_max=1.0):
    """Harrison-Reiman Skorohod map of the free path x0 + psi."""
    P = refl.P if isinstance(refl, ReflectionSpec) else np.asarray(refl, dtype=float)
    d = P.shape[0]
    if psi.d != d:
        raise ValueError(f"path dimension {psi.d} does not match P ({d})")
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).reshape(d)
    if np.any(x0 < 0):
        raise ValueError("start must lie in the orthant")
    solver = HRSolver(P, tol, cap)
    ell, sweeps = solver.solve(x0, psi.v)
    phi = (x0 + psi.v) + solver.push(ell)
    eps = activity_threshold(np.min(np.diff(psi.t)) if psi.N else 1.0, sigma_max)
    return SkorohodSolution(DiscretePath(psi.t, phi), DiscretePath(psi.t, ell),
                            complementarity_residual(phi, ell, eps), sweeps)


def lipschitz_probe(refl, pairs, starts=None):
    """Empirical ratios sup|phi1 - phi2| / sup|free1 - free2| for path pairs.

    ``starts`` is a list of (x1, x2) start pairs (default zero). Pairs with
    identical free paths are skipped. Returns (ratios, max ratio).
    """
    ratios = []
    for n, (p1, p2) in enumerate(pairs):
        if p1.t.shape != p2.t.shape or np.any(p1.t != p2.t):
            raise ValueError(f"pair {n}: grids differ")
        x1, x2 = (None, None) if starts is None else starts[n]
        d = p1.d
        x1 = np.zeros(d) if x1 is None else np.asarray(x1, dtype=float)
        x2 = np.zeros(d) if x2 is None else np.asarray(x2, dtype=float)
        den = float(np.max(np.abs((x1 + p1.v) - (x2 + p2.v))))
        if den == 0:
            log.info("lipschitz_probe: pair %d has identical inputs, skipped", n)
            continue
        s1 = sm_hr(p1, refl, x1)
        s2 = sm_hr(p2, refl, x2)
        ratios.append(float(np.max(np.abs(s1.phi.v - s2.phi.v))) / den)
    return ratios, max(ratios, default=float("nan"))


# -- serialization ------------------------------------------------------------

def write_path_csv(path, fname):
    with open(fname, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(path.d)])
        for t, row in zip(path.t, path.v):
            w.writerow([repr(float(t))] + [repr(float(x)) for x in row])


def read_path_csv(fname):
    with open(fname, newline="") as fh:
        rows = list(csv.reader(fh))
    head = rows[0]
    if not head or head[0] != "t":
        raise ValueError(f"{fname}: header must start with 't'")
    data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
    return DiscretePath(data[:, 0], data[:, 1:])


def save_path(path, fname):
    """Bit-exact binary round trip (numpy .npy of [t | v])."""
    np.save(fname, np.column_stack([path.t, path.v]), allow_pickle=False)


def load_path(fname):
    a = np.load(fname, allow_pickle=False)
    return DiscretePath(a[:, 0], a[:, 1:])
