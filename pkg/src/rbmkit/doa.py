"""Domain-of-attraction checkers and time-averaged law experiments for
truncated infinite Atlas systems.

Every checker turns a limit statement into a finite-data trend: the
quantity is evaluated on ``d_grid``, the tail {d >= d_max / 4} is kept,
and a least-squares log-log slope decides a three-valued verdict.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .dynamics import SimConfig, run_copies
from .reflection import RankParams
from .stationary import ProductExpLaw

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"
# log-log slopes within +-SLOPE_TOL are read as "flat"
SLOPE_TOL = 0.05
# slopes against log log d are much noisier; use a wider band
LOGLOG_TOL = 0.25


def default_grid(d_max=10**6, n=25):
    return np.unique(np.geomspace(16, d_max, n).astype(np.int64))


def _tail(d_grid):
    d_grid = np.asarray(d_grid)
    return d_grid >= d_grid.max() / 4


def _slope(x, y):
    ok = np.isfinite(x) & np.isfinite(y)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(x[ok], y[ok], 1)[0])


@dataclass(frozen=True, eq=False)
class TrendReport:
    name: str
    d: np.ndarray
    values: np.ndarray  # (replicates, len(d))
    slope: float
    tail_max: float
    tail_min: float
    verdict: str
    notes: dict = field(default_factory=dict)

    def as_record(self):
        return {"name": self.name, "slope": self.slope, "tail_max": self.tail_max,
                "tail_min": self.tail_min, "verdict": self.verdict, **self.notes}


# -- the cube sequence --------------------------------------------------------------

def cube_sequence(d):
    """U_i = i^(-2/3), except U_{n^3} = n (i = 1..d)."""
    i = np.arange(1, d + 1, dtype=float)
    u = i ** (-2.0 / 3.0)
    n = np.arange(1, int(round(d ** (1 / 3))) + 2)
    c = n**3
    keep = c <= d
    u[c[keep] - 1] = n[keep]
    return u


# -- initial gap specifications -------------------------------------------------

KINDS = ("deterministic-sequence", "iid-scaled", "product-exp", "perturbed-stationary",
         "custom-sampler")


@dataclass(frozen=True, eq=False)
class InitialGapSpec:
    """Initial gap law.

    kinds and params:
      deterministic-sequence  values: callable d -> (d,) array, or an array
      iid-scaled              lam: callable i -> scale (1-based, vectorized); theta: "exp" | "uniform"
      product-exp             law: ProductExpLaw
      perturbed-stationary    law: ProductExpLaw; beta: Y_i ~ Exp(i^(1+beta)) added
      custom-sampler          sampler: callable (generator, n, d) -> (n, d)
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}; expected one of {KINDS}")

    def _values(self, d):
        v = self.params["values"]
        v = np.asarray(v(d) if callable(v) else v, dtype=float)
        if v.size < d:
            raise ValueError(f"sequence has {v.size} values, need {d}")
        return v[:d]

    def sample(self, n, d, seed):
        g = rng.stream(seed, 0, rng.EXTRA)
        k, p = self.kind, self.params
        if k == "deterministic-sequence":
            z = np.broadcast_to(self._values(d), (n, d)).copy()
        elif k == "iid-scaled":
            lam = np.asarray(p["lam"](np.arange(1, d + 1)), dtype=float)
            th = p.get("theta", "exp")
            base = g.exponential(1.0, (n, d)) if th == "exp" else g.random((n, d))
            z = lam * base
        elif k == "product-exp":
            z = g.exponential(1.0, (n, d)) / _rates(p["law"], d)
        elif k == "perturbed-stationary":
            r = _rates(p["law"], d)
            y_rates = np.arange(1, d + 1, dtype=float) ** (1 + p.get("beta", 1.0))
            z = g.exponential(1.0, (n, d)) / r + g.exponential(1.0, (n, d)) / y_rates
        else:
            z = np.asarray(p["sampler"](g, n, d), dtype=float)
        if z.shape != (n, d) or np.any(z < 0) or not np.all(np.isfinite(z)):
            raise ValueError("initial gaps must be finite and nonnegative")
        return z

    def quantile(self, w, d):
        """Per-coordinate quantile functions at w (shape (..., d)), where known."""
        k, p = self.kind, self.params
        if k == "deterministic-sequence":
            return np.broadcast_to(self._values(d), np.shape(w)).copy()
        if k == "product-exp":
            return -np.log1p(-w) / _rates(p["law"], d)
        if k == "iid-scaled" and p.get("theta", "exp") == "exp":
            return -np.log1p(-w) * np.asarray(p["lam"](np.arange(1, d + 1)), dtype=float)
        raise ValueError(f"no closed-form quantile for kind {k!r}")

    def membership(self, z, alphas=(0.25, 1.0, 4.0)):
        """sum_j exp(-alpha (z_1 + ... + z_j)^2) per alpha (finite at any truncation)."""
        s = np.cumsum(np.asarray(z, dtype=float), axis=-1)
        return {a: float(np.mean(np.sum(np.exp(-a * s * s), axis=-1))) for a in alphas}


def _rates(law, d):
    if isinstance(law, ProductExpLaw):
        if law.d >= d:
            return law.rates[:d]
        if law.rule is None:
            raise ValueError(f"law has {law.d} rates, need {d}")
        return law.rule(np.arange(1, d + 1))
    return np.asarray(law(np.arange(1, d + 1)), dtype=float)


# -- (star) ---------------------------------------------------------------------

def independent_coupling(u_spec, v_rate=2.0):
    """(U, V) with U from the initial-gap law and V ~ pi (iid Exp(v_rate)) independent."""

    def draw(seed, n, d):
        u = u_spec.sample(n, d, seed)
        v = rng.stream(seed, 1, rng.EXTRA).exponential(1.0 / v_rate, (n, d))
        return u, v
    return draw


def check_star(coupling, d_grid=None, replicates=8, seed=0):
    """S_d = (sqrt(d) log d)^-1 sum_{i<=d} U_i ^ V_i on d_grid.

    coupling: callable (seed, n, d) -> (U, V) arrays (n, d), or an
    InitialGapSpec (independent coupling with pi). Verdict from the tail
    slope of log S_d: > SLOPE_TOL diverging-evidence, < -SLOPE_TOL or
    S = 0 failing, otherwise bounded-evidence.
    """
    if isinstance(coupling, InitialGapSpec):
        coupling = independent_coupling(coupling)
    d_grid = default_grid() if d_grid is None else np.asarray(d_grid)
    dmax = int(d_grid.max())
    U, V = coupling(seed, replicates, dmax)
    c = np.cumsum(np.minimum(U, V), axis=1)[:, d_grid - 1]
    S = c / (np.sqrt(d_grid) * np.log(d_grid))
    tail = _tail(d_grid)
    St = S[:, tail]
    if np.all(St == 0):
        slope, verdict = -math.inf, "failing"
    else:
        slope = float(np.median([_slope(np.log(d_grid[tail]), np.log(r)) for r in St]))
        verdict = ("diverging-evidence" if slope > SLOPE_TOL else
                   "failing" if slope < -SLOPE_TOL else "bounded-evidence")
    return TrendReport("star", d_grid, S, slope, float(St.max()), float(St.min()), verdict)


# -- (d1)-(d3) ------------------------------------------------------------------

def _probe_theta(theta, beta, d_grid):
    m = np.arange(2, int(d_grid.max()) + 1)
    th = np.asarray(theta(m), dtype=float)
    if np.any(th <= 0):
        raise ValueError("theta must be positive on the grid")
    tail = m >= m.max() // 4
    ratio = th[1:] / th[:-1]
    ok_mono = bool(np.all(np.diff(th[tail]) >= -1e-12 * th[tail][1:]))
    ok_ratio = bool(ratio.min() > 0) and bool((th[:-1] / th[1:]).min() > 0)
    ok_log = True
    if beta == 1:
        ok_log = bool(np.all(th >= np.log(m) * (1 - 1e-12)))
    return {"theta_monotone": ok_mono, "theta_ratio": ok_ratio, "theta_ge_log": ok_log}


def check_d1_d3(z_source, beta, theta, d_grid=None, replicates=4, seed=0):
    """Finite surrogates for the three growth conditions on Y_m = sum_{j<=m} Z_j.

    z_source: InitialGapSpec or callable (seed, n, d) -> (n, d).
    (d1), (d2) need bounded ratios: pass if the tail slope is <= SLOPE_TOL,
    fail if >= 5 SLOPE_TOL or infinite, else inconclusive. (d3) needs an
    unbounded ratio: pass if the slope is >= SLOPE_TOL, fail if <= -SLOPE_TOL.
    """
    if not 1 <= beta < 2:
        raise ValueError(f"beta must lie in [1, 2), got {beta}")
    d_grid = default_grid() if d_grid is None else np.asarray(d_grid)
    notes = _probe_theta(theta, beta, d_grid)
    dmax = int(d_grid.max())
    if isinstance(z_source, InitialGapSpec):
        Z = z_source.sample(replicates, dmax, seed)
    else:
        Z = np.asarray(z_source(seed, replicates, dmax), dtype=float)
    m = d_grid.astype(float)
    th = np.asarray(theta(m), dtype=float)
    s1 = np.cumsum(Z, axis=1)[:, d_grid - 1]
    with np.errstate(divide="ignore"):
        neglog = np.maximum(-np.log(Z), 0.0)
    s2 = np.cumsum(neglog, axis=1)[:, d_grid - 1]
    r = {"d1": s1 / (m**beta * th), "d2": s2 / (m**beta * th),
         "d3": s1 / (m ** (beta**2 / (1 + beta)) * th)}
    tail = _tail(d_grid)
    out = {}
    for name, v in r.items():
        vt = v[:, tail]
        if np.any(np.isinf(vt)):
            slope = math.inf
        elif np.all(vt == 0):
            slope = -math.inf
        else:
            slope = float(np.median([_slope(np.log(m[tail]), np.log(row)) for row in vt]))
        if name == "d3":
            verdict = PASS if slope >= SLOPE_TOL else FAIL if slope <= -SLOPE_TOL else INCONCLUSIVE
        else:
            verdict = PASS if slope <= SLOPE_TOL else FAIL if slope >= 5 * SLOPE_TOL else INCONCLUSIVE
        if name == "d3" and not all(notes.values()):
            verdict = INCONCLUSIVE
        out[name] = TrendReport(name, d_grid, v, slope, float(np.max(vt)), float(np.min(vt)),
                                verdict, dict(notes))
    if not all(notes.values()):
        for k in ("d1", "d2"):
            if out[k].verdict == PASS:
                out[k] = TrendReport(k, d_grid, out[k].values, out[k].slope, out[k].tail_max,
                                     out[k].tail_min, INCONCLUSIVE, dict(notes))
    return out


# -- (stara) and (aexp) -------------------------------------------------------------

def _loglog_verdict(x_d, values):
    """Verdict for 'values -> 0' judged against log log d."""
    tail = _tail(x_d)
    vt = values[..., tail]
    if np.all(np.abs(vt) < 1e-12):
        return -math.inf, PASS
    llt = np.log(np.log(np.log(x_d[tail].astype(float))))
    rows = np.atleast_2d(vt)
    slope = float(np.median([_slope(llt, np.log(np.abs(r))) for r in rows]))
    return slope, PASS if slope < -LOGLOG_TOL else FAIL if slope > LOGLOG_TOL else INCONCLUSIVE


def comonotone_coupling(u_spec, a):
    """U and V_a from shared uniforms through their quantile functions."""

    def draw(seed, n, d):
        w = rng.stream(seed, 2, rng.EXTRA).random((n, d))
        u = u_spec.quantile(w, d)
        v = -np.log1p(-w) / (2.0 + a * np.arange(1, d + 1))
        return u, v
    return draw


def check_stara(u_source, a, d_grid=None, replicates=4, seed=0, coupling=None):
    """T_d = (log log d / log d) sum |V_{a,i} - U_i| and M_d = U_d / (d V_{a,d}).

    Default coupling is comonotone. T_d must vanish (slope against log log d
    below -LOGLOG_TOL, or identically zero); M_d must stay bounded (tail
    log-log slope <= SLOPE_TOL).
    """
    if not a > 0:
        raise ValueError(f"need a > 0, got {a}")
    d_grid = default_grid() if d_grid is None else np.asarray(d_grid)
    dmax = int(d_grid.max())
    draw = coupling or comonotone_coupling(u_source, a)
    U, V = draw(seed, replicates, dmax)
    m = d_grid.astype(float)
    T = np.log(np.log(m)) / np.log(m) * np.cumsum(np.abs(V - U), axis=1)[:, d_grid - 1]
    M = U[:, d_grid - 1] / (m * V[:, d_grid - 1])
    sT, vT = _loglog_verdict(d_grid, T)
    tail = _tail(d_grid)
    sM = float(np.median([_slope(np.log(m[tail]), np.log(r)) for r in M[:, tail]]))
    vM = PASS if sM <= SLOPE_TOL else FAIL if sM >= 5 * SLOPE_TOL else INCONCLUSIVE
    return {"T": TrendReport("stara_T", d_grid, T, sT, float(T[:, tail].max()),
                             float(T[:, tail].min()), vT),
            "M": TrendReport("stara_M", d_grid, M, sM, float(M[:, tail].max()),
                             float(M[:, tail].min()), vM)}


def check_aexp(lam, a, d_grid=None):
    """A_d = (log log d / log d) sum_{i<=d} |lambda_i| / i^2 and the window
    -a < liminf lambda_i / i <= limsup lambda_i / i < infinity.

    lam: vectorized callable on 1-based indices.
    """
    d_grid = default_grid() if d_grid is None else np.asarray(d_grid)
    dmax = int(d_grid.max())
    i = np.arange(1, dmax + 1, dtype=float)
    L = np.asarray(lam(i), dtype=float)
    bad = np.nonzero(L <= -(2 + i * a))[0]
    if bad.size:
        raise ValueError(f"rate 2 + i a + lambda_i is not positive at i = {bad[0] + 1}")
    m = d_grid.astype(float)
    A = np.log(np.log(m)) / np.log(m) * np.cumsum(np.abs(L) / i**2)[d_grid - 1]
    slope, verdict = _loglog_verdict(d_grid, A)
    tail_i = i >= dmax / 4
    ratio = L[tail_i] / i[tail_i]
    witness = np.abs(L[tail_i]) * np.log(np.log(np.maximum(i[tail_i], 3))) / i[tail_i]
    grow = _slope(np.log(i[tail_i][::97]), np.log(np.abs(ratio[::97]) + 1e-300))
    window = bool(ratio.min() > -a and np.isfinite(ratio.max()) and not grow > SLOPE_TOL)
    notes = {"window": window, "ratio_min": float(ratio.min()), "ratio_max": float(ratio.max()),
             "witness_max": float(witness.max()), "witness_last": float(witness[-1])}
    if not window:
        verdict = FAIL
    tail = _tail(d_grid)
    return TrendReport("aexp", d_grid, A[None, :], slope, float(A[tail].max()),
                       float(A[tail].min()), verdict, notes)


# -- time-averaged laws ---------------------------------------------------------

def _w1_exp(x, w, lam):
    """W1 between the weighted sample (x, w) and Exp(lam), exactly.

    Integrates |Q_emp(u) - Q(u)| over u with Q(u) = -log(1-u)/lam, using the
    antiderivative A(u) = ((1-u) log(1-u) + u) / lam of Q.
    """
    o = np.argsort(x, kind="stable")
    x = x[o]
    c = np.cumsum(w[o])
    c = c / c[-1]
    u0 = np.r_[0.0, c[:-1]]
    u1 = np.minimum(c, 1.0)

    def A(u):
        v = 1.0 - u
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(v > 0, v * np.log(np.where(v > 0, v, 1.0)), 0.0)
        return (t + u) / lam

    us = np.clip(-np.expm1(-lam * x), u0, u1)  # where Q crosses x, clipped into the cell
    left = x * (us - u0) - (A(us) - A(u0))
    right = (A(u1) - A(us)) - x * (u1 - us)
    return float(np.sum(left + right))


@dataclass(frozen=True, eq=False)
class NuTEstimate:
    t: np.ndarray
    coords: tuple
    w1: np.ndarray  # (len(t), k_watch)
    null_q95: np.ndarray  # (k_watch,)
    snapshots: np.ndarray = field(repr=False)  # (n_paths, n_obs, k_watch)
    weights: np.ndarray = field(repr=False)  # trapezoid weights per t: (n_obs, n_obs)
    d: int = 0

    def cdf(self, j, coord, x):
        """Time-averaged empirical CDF of gap ``coord`` at t[j]."""
        c = self.coords.index(coord)
        s = self.snapshots[:, : j + 1, c]
        w = self.weights[j, : j + 1]
        x = np.asarray(x, dtype=float)
        return np.sum(w[None, :, None] * (s[..., None] <= x), axis=(0, 1)) / s.shape[0]

    def rows(self):
        out = []
        for j, t in enumerate(self.t):
            for c, coord in enumerate(self.coords):
                out.append({"t": float(t), "coord": coord, "w1": float(self.w1[j, c]),
                            "null_q95": float(self.null_q95[c])})
        return out

    def to_csv(self, fname):
        with open(fname, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["t", "coord", "w1", "null_q95"])
            w.writeheader()
            for r in self.rows():
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def trapezoid_weights(n_obs):
    """Row j: weights of snapshots 0..j for (1/t_j) int_0^{t_j} (uniform grid)."""
    W = np.zeros((n_obs, n_obs))
    W[0, 0] = 1.0
    for j in range(1, n_obs):
        W[j, : j + 1] = 1.0
        W[j, 0] = W[j, j] = 0.5
        W[j, : j + 1] /= j
    return W


def run_doa_experiment(initial, target, d, k_watch, cfg, m_obs=64, null_reps=200,
                       model=None):
    """Time-averaged gap laws nu_t of the truncated Atlas model.

    The d-gap standard Atlas (or ``model``, an RbmParams) is started from
    ``initial`` and observed at m_obs + 1 uniformly spaced times. nu_t at
    each observation time is the trapezoid mixture of the snapshots so far.
    Returns per-coordinate W1 distances of nu_t marginals to the target
    marginals, and the 95% quantile of the same distance for iid target
    samples of size n_paths (the sampling-noise null).
    """
    if not 1 <= k_watch <= d:
        raise ValueError("need 1 <= k_watch <= d")
    if cfg.n_steps % m_obs:
        raise ValueError(f"m_obs = {m_obs} must divide the {cfg.n_steps} steps")
    if cfg.n_paths < 50:
        raise ValueError("need at least 50 paths to resolve marginal CDFs")
    cfg = SimConfig(**{**cfg.__dict__, "record_every": cfg.n_steps // m_obs})
    params = model or RankParams.standard_atlas(d).to_rbm()
    if params.d != d:
        raise ValueError("model dimension does not match d")
    z0 = initial.sample(cfg.n_paths, d, cfg.seed)
    out = run_copies(params, z0[:, None, :], cfg)
    snaps = out["state"][:, :, 0, :k_watch]
    t = cfg.obs_times()
    W = trapezoid_weights(t.size)
    rates = _rates(target, k_watch)
    n = cfg.n_paths
    w1 = np.empty((t.size, k_watch))
    for j in range(t.size):
        wj = np.repeat(W[j, : j + 1][None, :], n, axis=0).ravel()
        for c in range(k_watch):
            w1[j, c] = _w1_exp(snaps[:, : j + 1, c].ravel(), wj, rates[c])
    g = rng.stream(cfg.seed, 3, rng.EXTRA)
    null = np.empty((null_reps, k_watch))
    ones = np.ones(n)
    for r in range(null_reps):
        s = g.exponential(1.0, (n, k_watch)) / rates
        null[r] = [_w1_exp(s[:, c], ones, rates[c]) for c in range(k_watch)]
    q95 = np.quantile(null, 0.95, axis=0)
    return NuTEstimate(t, tuple(range(1, k_watch + 1)), w1, q95, snaps, W, d)


def default_truncation(k_watch):
    return 4 * k_watch**2


def star_counterexample(d_grid=None, replicates=8, seed=0):
    """The cube sequence: (star) fails while (d1)-(d3) hold with beta = 1, theta = log."""
    spec = InitialGapSpec("deterministic-sequence", {"values": cube_sequence})
    return {"star": check_star(spec, d_grid, replicates, seed),
            **check_d1_d3(spec, 1.0, np.log, d_grid, replicates, seed)}
