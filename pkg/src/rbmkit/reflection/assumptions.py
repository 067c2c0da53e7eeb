"""Checkers for the Blanchet-Chen conditions and the dimension-free (DF) conditions.

Both are statements about families indexed by d. At a single d any
transient P admits some witnesses, so the checkers fit witnesses and
judge the *trend* across principal restrictions P|_k, k in [d/2, d].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import power_norms

# witnesses are judged bounded if their log-log growth over k in [d/2, d] is
# below this; linearly growing witnesses (symmetric Atlas) sit near 1
GROWTH_TOL = 0.5


def _loglog_slope(k, v):
    k = np.asarray(k, dtype=float)
    v = np.asarray(v, dtype=float)
    ok = (k > 0) & (v > 0)
    if ok.sum() < 2:
        return 0.0
    return float(np.polyfit(np.log(k[ok]), np.log(v[ok]), 1)[0])


def _growth_window(d):
    lo = max(1, d // 2) if d >= 8 else 1
    return np.arange(lo, d + 1)


@dataclass(frozen=True)
class BCReport:
    kappa: float
    beta: float
    nilpotent: bool
    delta: float
    sigma: float
    bc1: bool
    bc2: bool
    bc3: bool
    colnorms: np.ndarray = field(repr=False)

    @property
    def holds(self):
        return self.bc1 and self.bc2 and self.bc3

    def as_record(self):
        return {k: getattr(self, k) for k in
                ("kappa", "beta", "nilpotent", "delta", "sigma", "bc1", "bc2", "bc3")}


def fit_bc1(P, cap=200):
    """Fit ||1^T P^n||_inf <= kappa (1 - beta)^n over n <= cap.

    beta comes from a least-squares slope of log c_n over the upper half of
    the range, kappa is then the smallest constant making the bound hold.
    """
    c = power_norms(P, cap, side="col")
    n = np.arange(cap + 1)
    if np.all(c[1:] == 0):
        return 1.0, 1.0, True, c
    pos = c > 0
    tail = pos & (n >= cap // 2) & (n >= 1)
    if tail.sum() < 2:
        tail = pos & (n >= 1)
    if tail.sum() >= 2:
        slope = np.polyfit(n[tail], np.log(c[tail]), 1)[0]
    else:
        slope = math.log(c[tail][0]) if tail.any() else -np.inf
    beta = float(np.clip(1 - math.exp(slope), 0.0, 1.0))
    if beta >= 1:
        return 1.0, 1.0, True, c
    kappa = float(np.max(c[pos] / (1 - beta) ** n[pos]))
    return kappa, beta, False, c


def check_bc(params, cap=200):
    kappa, beta, nil, c = fit_bc1(params.refl.P, cap)
    delta = float(params.b.min())
    s = params.sigma
    sig = float(max(s.max(), (1 / s).max()))
    return BCReport(kappa, beta, nil, delta, sig, beta > 0, delta > 0, bool(np.all(s > 0)), c)


@dataclass(frozen=True, eq=False)
class DfReport:
    holds_I: bool
    holds_II: bool
    holds_III: bool
    holds_IV: bool
    C: float
    alpha: float
    M: float
    b0: float
    rstar: float
    sigma_low: float
    sigma_high: float
    k0: int
    L1const: float
    blow: np.ndarray = field(repr=False)
    growth_C: float = 0.0
    growth_M: float = 0.0
    violation: tuple | None = None

    @property
    def holds(self):
        return self.holds_I and self.holds_II and self.holds_III and self.holds_IV

    def inS(self, x, B):
        """x in S(b, B): sup_i blow^{(i)} ||x|_i||_inf <= B."""
        x = np.abs(np.asarray(x, dtype=float))
        return bool(np.max(self.blow * np.maximum.accumulate(x)) <= B)

    def as_record(self):
        keys = ("holds_I", "holds_II", "holds_III", "holds_IV", "C", "alpha", "M", "b0",
                "rstar", "sigma_low", "sigma_high", "k0", "L1const", "growth_C", "growth_M")
        rec = {k: getattr(self, k) for k in keys}
        rec["violation"] = "" if self.violation is None else "%d,%d" % self.violation
        return rec


def fit_geometric(Rinv):
    """Witnesses (C, alpha) with (R^-1)_ij <= C alpha^(j-i) for i <= j.

    With m_k the largest entry on the k-th superdiagonal, alpha is the
    smallest rate for which C can be the diagonal maximum m_0:
    alpha = max_k (m_k / m_0)^(1/k). C = max(1, m_0) then bounds every entry.
    alpha = 0 means R^-1 is diagonal (any alpha works).
    """
    d = Rinv.shape[0]
    m = np.array([np.diagonal(Rinv, k).max() for k in range(d)])
    if d == 1 or m[0] <= 0 or not np.any(m[1:] > 0):
        return max(1.0, float(m[0])), 0.0
    k = np.arange(1, d)
    alpha = float(np.max((np.maximum(m[1:], 0) / m[0]) ** (1.0 / k)))
    return max(1.0, float(m[0])), alpha


def restricted_b(params):
    """b^{(k)} = -(R|_k)^{-1} mu|_k for k = 1..d."""
    R = params.refl.R
    mu = params.mu
    return [np.linalg.solve(R[:k, :k], -mu[:k]) for k in range(1, params.d + 1)]


def check_df(params, k0=2):
    d = params.d
    if not 2 <= k0 <= max(d, 2):
        raise ValueError(f"k0 must lie in 2..d, got {k0}")
    Rinv = params.refl.Rinv
    C, alpha = fit_geometric(Rinv)
    M = float(Rinv.max())
    # witness growth across principal restrictions
    ks = _growth_window(d)
    Cs, Ms = [], []
    R = params.refl.R
    for k in ks:
        Ri = np.linalg.inv(R[:k, :k])
        Ms.append(Ri.max())
        Cs.append(fit_geometric(Ri)[0])
    gC = _loglog_slope(ks, Cs) if len(ks) > 2 else 0.0
    gM = _loglog_slope(ks, Ms) if len(ks) > 2 else 0.0
    iu = np.triu_indices(d)
    bound_ok = bool(np.all(Rinv[iu] <= C * alpha ** (iu[1] - iu[0]) * (1 + 1e-12) + 1e-300))
    holds_I = bound_ok and alpha < 1 and gC < GROWTH_TOL
    holds_II = gM < GROWTH_TOL
    blow = np.array([bk.min() for bk in restricted_b(params)])
    kk = np.arange(k0, d + 1)
    tail = blow[k0 - 1:]
    if np.all(tail > 0):
        rstar = max(0.0, -_loglog_slope(kk, tail)) if kk.size > 1 else 0.0
        if rstar < 0.1:
            rstar = 0.0
        b0 = float(np.min(tail * kk**rstar))
    else:
        rstar, b0 = math.inf, 0.0
    holds_III = b0 > 0
    s = params.sigma
    slo, shi = float(s.min()), float(s.max())
    holds_IV = slo > 0
    i = np.arange(k0, d + 1)
    a = alpha if alpha > 0 else 0.0
    L1 = float(k0 ** (rstar + 1) + np.sum(i ** (3 + rstar) * a ** (i / 8))) if holds_III else math.inf
    viol = None
    if not (holds_I and holds_II):
        r, c = np.unravel_index(int(np.argmax(Rinv)), Rinv.shape)
        viol = (int(r) + 1, int(c) + 1)
    return DfReport(holds_I, holds_II, holds_III, holds_IV, C, alpha, M, b0, rstar,
                    slo, shi, k0, L1, blow, gC, gM, viol)
