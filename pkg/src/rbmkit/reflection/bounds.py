"""Explicit rate constants and the Wasserstein / relaxation-time bounds built on them.

The bounds involve universal constants that are only known to exist
(t0, D1, D2 for the general bound, E1..E4, t1 for the Blanchet-Chen class,
F1..F4, t2 for rank-based gaps, C0, C0', C1 for the dimension-free bound).
They default to 1; only the shape of a bound in t and d is meaningful.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import contraction_coefficient


class BoundError(ValueError):
    pass


WAS_FREE = {"t0": 1.0, "D1": 1.0, "D2": 1.0}
BC_FREE = {"E1": 1.0, "E2": 1.0, "E3": 1.0, "E4": 1.0, "t1": 1.0}
RANK_FREE = {"F1": 1.0, "F2": 1.0, "F3": 1.0, "F4": 1.0, "t2": 1.0}
DF_FREE = {"C0": 1.0, "C0p": 1.0, "C1": 1.0}


def _free(defaults, free):
    out = dict(defaults)
    if free:
        unknown = set(free) - set(defaults)
        if unknown:
            raise BoundError(f"unknown free constants {sorted(unknown)}")
        out.update(free)
    if min(out.values()) <= 0:
        raise BoundError("free constants must be strictly positive")
    return out


@dataclass(frozen=True)
class RateConstants:
    d: int
    nR: int
    aTheta: float
    bTheta: float
    R1: float
    R2: float
    C1: float
    C2: float
    kappa: float
    astar: float = math.nan
    sigmaBound: float = math.nan

    def as_record(self):
        return asdict(self)


def rate_constants(params, x=None, kappa=1.0, rank=None):
    """Evaluate n(R), a, b, R1, R2, C1, C2 for the triple in ``params``.

    ``kappa`` enters C2 only; the general bound uses kappa = D2. Pass the
    originating RankParams as ``rank`` to also get a* and sigma.
    """
    if not params.stable:
        raise BoundError("constants undefined for unstable parameters (some b_i <= 0)")
    if kappa <= 0:
        raise BoundError("kappa must be positive")
    d = params.d
    x = np.zeros(d) if x is None else np.asarray(x, dtype=float)
    Rinv = params.refl.Rinv
    s = params.sigma
    b = params.b
    row = Rinv @ s
    a = float(np.max(row / b))
    bt = float(np.max(row / s))
    nR = contraction_coefficient(params.refl)
    R1 = nR * (1 + a * a * math.log(2 * d))
    R2 = a * a * bt
    x1 = float(np.abs(x).sum())
    xstar = float(np.max(x / s)) if d else 0.0
    C1 = 2 * x1 + a * float(row.sum())
    C2 = (2 * x1 * math.exp(3 * xstar / (kappa * a * bt))
          + a * math.sqrt(2 * d * (1 + d) * float((Rinv**2).sum()) * float((s**2).sum())))
    astar = sig = math.nan
    if rank is not None:
        astar = float(rank.astar())
        sig = rank.sigma_bound()
    return RateConstants(d, nR, a, bt, R1, R2, C1, C2, kappa, astar, sig)


def wasthm_threshold(consts, free=None):
    f = _free(WAS_FREE, free)
    return f["t0"] * (1 + consts.aTheta**2 * math.log(2 * consts.d))


def wasthm_bound(t, consts, free=None):
    """C1 (2 e^{-D1 t/R1} + e^{-t/(16 D2 R2)}) + C2 e^{-t/(8 D2 R2)}."""
    f = _free(WAS_FREE, free)
    t_min = wasthm_threshold(consts, f)
    if t < t_min:
        raise BoundError(f"bound not asserted below t0*(1 + a^2 log 2d) = {t_min:.6g}")
    D1, D2 = f["D1"], f["D2"]
    return (consts.C1 * (2 * math.exp(-D1 * t / consts.R1) + math.exp(-t / (16 * D2 * consts.R2)))
            + consts.C2 * math.exp(-t / (8 * D2 * consts.R2)))


def trel_bound(consts, free=None):
    f = _free(WAS_FREE, free)
    D1, D2 = f["D1"], f["D2"]
    main = (consts.R1 / D1 * math.log(8 * consts.C1)
            + 16 * D2 * consts.R2 * math.log(4 * (consts.C1 + consts.C2)))
    return max(main, wasthm_threshold(consts, f))


# -- Blanchet-Chen class ----------------------------------------------------

def bc_bound(t, x, d, free=None):
    f = _free(BC_FREE, free)
    x = np.asarray(x, dtype=float)
    x1, xinf = float(np.abs(x).sum()), float(np.abs(x).max(initial=0.0))
    t_min = f["t1"] * max(xinf, math.log(2 * d))
    if t < t_min:
        raise BoundError(f"bound not asserted below t1*max(|x|_inf, log 2d) = {t_min:.6g}")
    E1, E2, E3, E4 = f["E1"], f["E2"], f["E3"], f["E4"]
    return (2 * (2 * x1 + E1 * d * d) * math.exp(-E2 * t / math.log(2 * d))
            + (4 * x1 + E1 * d * d) * math.exp(-E4 * t / 2) + E3 * d * d * math.exp(-E4 * t))


def bc_trel_bound(x, d, free=None):
    f = _free(BC_FREE, free)
    x = np.asarray(x, dtype=float)
    x1, xinf = float(np.abs(x).sum()), float(np.abs(x).max(initial=0.0))
    E1, E2, E3, E4 = f["E1"], f["E2"], f["E3"], f["E4"]
    main = (math.log(8 * (2 * x1 + E1 * d * d)) * math.log(2 * d) / E2
            + (2 * math.log(8 * (4 * x1 + E1 * d * d)) + math.log(8 * E3 * d * d)) / E4)
    return max(main, f["t1"] * max(xinf, math.log(2 * d)))


# -- rank-based gaps --------------------------------------------------------

def rank_bound(t, z, d, astar, sigma, free=None):
    f = _free(RANK_FREE, free)
    z = np.asarray(z, dtype=float)
    z1, zinf = float(np.abs(z).sum()), float(np.abs(z).max(initial=0.0))
    s2 = sigma * sigma
    t_min = f["t2"] * max(s2 * astar * zinf, 1 + s2 * astar**2 * math.log(2 * d))
    if t < t_min:
        raise BoundError(f"bound not asserted below {t_min:.6g}")
    F1, F2, F3, F4 = f["F1"], f["F2"], f["F3"], f["F4"]
    c = F1 * s2 * astar * d**3
    slow = d * d * (1 + s2 * astar**2 * math.log(2 * d))
    fast = s2 * s2 * astar**2 * (d + 1) ** 2
    return (2 * (2 * z1 + c) * math.exp(-F2 * t / slow)
            + (4 * z1 + c) * math.exp(-F4 * t / (2 * fast))
            + F3 * s2 * astar * d**3.5 * math.exp(-F4 * t / fast))


def rank_trel_bound(z, d, astar, sigma, free=None):
    f = _free(RANK_FREE, free)
    z = np.asarray(z, dtype=float)
    z1, zinf = float(np.abs(z).sum()), float(np.abs(z).max(initial=0.0))
    s2 = sigma * sigma
    F1, F2, F3, F4 = f["F1"], f["F2"], f["F3"], f["F4"]
    c = F1 * s2 * astar * d**3
    slow = d * d * (1 + s2 * astar**2 * math.log(2 * d))
    fast = s2 * s2 * astar**2 * (d + 1) ** 2
    main = (slow / F2 * math.log(8 * (2 * z1 + c))
            + fast / F4 * (2 * math.log(8 * (4 * z1 + c)) + math.log(8 * F3 * s2 * astar * d**3.5)))
    return max(main, f["t2"] * max(s2 * astar * zinf, 1 + s2 * astar**2 * math.log(2 * d)))


# -- dimension-free local bound ---------------------------------------------

def df_bound(t, report, x, B, free=None):
    """Two-regime bound on E||X(t;x) - X(t;X(inf))||_{1, sqrt(alpha)}.

    Requires x in S(b, B) and d > t0'^{1/(4+2r*)} with t0' = C0' (1+r*)^{8+4r*}.
    """
    f = _free(DF_FREE, free)
    x = np.asarray(x, dtype=float)
    d = x.size
    r = report.rstar
    t0p = f["C0p"] * (1 + r) ** (8 + 4 * r)
    expo = 1.0 / (4 + 2 * r)
    if not report.inS(x, B):
        raise BoundError("start is outside S(b, B)")
    if d <= t0p**expo:
        raise BoundError(f"dimension {d} too small for the dimension-free regime")
    if t < t0p:
        raise BoundError(f"bound not asserted below t0' = {t0p:.6g}")
    pre = f["C1"] * (report.L1const * math.sqrt(1 + t**expo)
                     + float(np.abs(x).max(initial=0.0)) * math.exp(B / report.sigma_low**2))
    if t < d ** (4 + 2 * r):
        return pre * math.exp(-f["C0"] * t**expo)
    return pre * math.exp(-f["C0"] * t / d ** (3 + 2 * r))
