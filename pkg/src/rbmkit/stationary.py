"""Product-exponential stationary laws, samplers and goodness-of-fit tests."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy import stats

from . import rng
from .reflection import ParamError, RankParams

TAGS = ("finite-atlas", "hr-rank", "pi-a", "pi-a-g", "custom")


@dataclass(frozen=True, eq=False)
class ProductExpLaw:
    """Law of independent Exp(rates[i]) coordinates.

    ``rule`` optionally extends the rates beyond the stored prefix (vectorized
    map from 1-based indices to rates); it is used only by tail estimates.
    """

    rates: np.ndarray
    tag: str = "custom"
    rule: Callable | None = None
    exact: tuple | None = None  # rational rates when known
    note: str = ""

    def __post_init__(self):
        r = np.array(self.rates, dtype=float).reshape(-1)
        if r.size == 0 or not np.all(np.isfinite(r)):
            raise ParamError("rates must be finite and non-empty")
        bad = np.nonzero(r <= 0)[0]
        if bad.size:
            raise ParamError(f"rate {r[bad[0]]} at index {bad[0] + 1} is not positive")
        if self.tag not in TAGS:
            raise ParamError(f"unknown tag {self.tag!r}")
        r.setflags(write=False)
        object.__setattr__(self, "rates", r)

    @property
    def d(self):
        return self.rates.size

    @property
    def mean(self):
        return 1.0 / self.rates

    def to_csv(self, fname):
        with open(fname, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "rate"])
            for i, r in enumerate(self.rates, 1):
                w.writerow([i, repr(float(r))])

    @classmethod
    def from_csv(cls, fname, tag="custom"):
        with open(fname, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([float(r["rate"]) for r in rows], tag)


@dataclass(frozen=True)
class NotApplicable:
    reason: str

    def __bool__(self):
        return False


def finite_atlas_stationary(d):
    if d < 1:
        raise ParamError("d must be at least 1")
    ex = tuple(2 * (1 - Fraction(i, d + 1)) for i in range(1, d + 1))
    return ProductExpLaw([float(x) for x in ex], "finite-atlas", exact=ex)


def hr_rank_stationary(rp: RankParams, tol=1e-12):
    """Product law of the gaps of a symmetric-collision rank-based system.

    Requires the skew condition (sigma_i^2 - sigma_{i-1}^2 constant) and
    stability. The rate of gap k is 2 beta_k / (sigma_{k-1}^2 + sigma_k^2)
    with beta = -R^{-1} mu, which equals twice the centred rank-drift sum
    b_k = sum_{i<=k} (delta_{i-1} - mean delta).
    """
    if rp.p != 0.5:
        return NotApplicable("asymmetric collisions; use the gap RBM product form")
    if not rp.skew_ok(tol):
        return NotApplicable("skew condition on sigma^2 increments fails")
    b = rp.rank_b(exact=True)
    if min(b) <= 0:
        k = next(i for i, v in enumerate(b, 1) if v <= 0)
        return NotApplicable(f"unstable: b_{k} = {float(b[k - 1])} <= 0")
    if all(isinstance(s, (int, Fraction)) for s in rp.sigma):
        s2 = [Fraction(s) ** 2 for s in rp.sigma]
        ex = tuple(4 * b[k - 1] / (s2[k - 1] + s2[k]) for k in range(1, rp.d + 1))
        return ProductExpLaw([float(x) for x in ex], "hr-rank", exact=ex)
    s2 = np.asarray(rp.sigma, dtype=float) ** 2
    bf = np.array([float(v) for v in b])
    return ProductExpLaw(4 * bf / (s2[:-1] + s2[1:]), "hr-rank")


def gap_rbm_stationary(params):
    """Product law 2 b_k R_kk / Sigma_kk, b = -R^{-1} mu, for an RBM meeting
    the skew-symmetry condition 2 Sigma = R Lambda + Lambda R^T with
    Lambda = diag(Sigma_kk / R_kk). Returns NotApplicable otherwise."""
    R = np.array(params.refl.R)
    S = np.array(params.Sigma)
    lam = np.diag(S) / np.diag(R)
    if not np.allclose(2 * S, R * lam + (R * lam).T, rtol=0, atol=1e-10):
        return NotApplicable("skew-symmetry condition fails")
    b = params.b
    if b.min() <= 0:
        return NotApplicable("unstable drift")
    return ProductExpLaw(2 * b * np.diag(R) / np.diag(S), "custom", note="gap-rbm")


def pi_a(a, d_trunc):
    """Exp(2 + i a), i = 1..d_trunc (standard Atlas, a >= 0)."""
    if a < 0:
        raise ParamError(f"pi_a needs a >= 0, got {a}")
    i = np.arange(1, d_trunc + 1)
    rule = _PiRule(float(a))
    ex = tuple(2 + i_ * Fraction(a) for i_ in i) if isinstance(a, (int, Fraction)) else None
    return ProductExpLaw(rule(i), "pi-a", rule=rule, exact=ex)


@dataclass(frozen=True)
class _PiRule:
    a: float

    def __call__(self, i):
        return 2.0 + np.asarray(i, dtype=float) * self.a


def gbar(g, n_max):
    g = np.asarray(g, dtype=float)
    if g.size < n_max:
        raise ParamError(f"need {n_max} drift values, got {g.size}")
    return np.cumsum(g[:n_max]) / np.arange(1, n_max + 1)


def d1_records(gb):
    """1-based indices N with gbar_k > gbar_N for all k < N (strict record lows)."""
    run = np.minimum.accumulate(np.r_[np.inf, gb[:-1]])
    return [int(n) + 1 for n in np.nonzero(gb < run)[0] if n > 0]


def pi_a_g(g, a, d_trunc, g_limit=None):
    """Exp(n (2 gbar_n + a)), n = 1..d_trunc, gbar_n = mean of g_0..g_{n-1}.

    Requires a > -2 inf_{n <= d_trunc} gbar_n. The boundary value
    a = -2 g_limit (g_limit the limit of gbar along record lows, supplied by
    the caller) is admitted when the prefix carries at least two record lows
    and gbar stays above g_limit; the law is then marked prefix-certified.
    """
    gb = gbar(g, d_trunc)
    n = np.arange(1, d_trunc + 1)
    note = ""
    if g_limit is not None and a == -2 * g_limit:
        rec = d1_records(gb)
        if len(rec) < 2 or np.any(gb <= g_limit):
            raise ParamError("boundary a rejected: no record-low witness on the prefix")
        note = "prefix-certified"
    elif not a > -2 * gb.min():
        k = int(np.argmin(gb)) + 1
        raise ParamError(f"a = {a} violates a > -2 gbar_n at n = {k} (gbar = {gb[k - 1]})")
    rates = n * (2 * gb + a)
    bad = np.nonzero(rates <= 0)[0]
    if bad.size:
        raise ParamError(f"nonpositive rate at index {bad[0] + 1}")
    return ProductExpLaw(rates, "pi-a-g", note=note)


# -- sampling and tests -------------------------------------------------------

def sample(law, n, seed):
    """n iid draws, shape (n, d), by inverse CDF on a dedicated stream."""
    if n < 1:
        raise ValueError("n must be positive")
    u = rng.stream(seed, 0, rng.SAMPLE).random((n, law.d))
    return -np.log1p(-u) / law.rates


def logpdf(law, z):
    z = np.asarray(z, dtype=float)
    lp = np.sum(np.log(law.rates) - law.rates * z, axis=-1)
    return np.where(np.all(z >= 0, axis=-1), lp, -np.inf)


def ks_marginal(law, samples, i):
    """KS statistic and p-value of coordinate i (1-based) against Exp(rate_i)."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    x = x[:, i - 1]
    x = x[np.isfinite(x)]
    if x.size == 0:
        raise ValueError("no samples")
    r = stats.kstest(x, "expon", args=(0, 1 / law.rates[i - 1]))
    return float(r.statistic), float(r.pvalue)


def fit_report(law, samples):
    """Rows (coord, ks, pvalue, n), one per coordinate."""
    x = np.asarray(samples, dtype=float)
    rows = []
    for i in range(1, law.d + 1):
        ks, pv = ks_marginal(law, x, i)
        rows.append({"coord": i, "ks": ks, "pvalue": pv, "n": int(np.isfinite(x[:, i - 1]).sum())})
    return rows


# -- the integrability sum ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class SatIntegResult:
    terms: np.ndarray  # Monte Carlo E exp(-S_j^2/4), j = 1..d
    se: np.ndarray
    partial: np.ndarray
    tail: float  # majorant for j > d (inf when no decay is certified)
    verdict: str

    @property
    def estimate(self):
        return float(self.partial[-1])


_THETA = np.geomspace(1e-3, 1e3, 49)
_S = np.linspace(0.0, 80.0, 321)


def _majorant(logprod, theta):
    """min over (theta, s) of exp(theta s) prod_i lam_i/(lam_i+theta) + exp(-s^2/4).

    logprod: (n, G) log-products per theta. Chernoff lower-tail bound for the
    partial sum S at level s, plus the value of the integrand above s.
    """
    e1 = logprod[:, :, None] + theta[None, :, None] * _S[None, None, :]
    val = np.exp(np.minimum(e1, 0.0)) + np.exp(-_S**2 / 4)[None, None, :]
    return np.minimum(val.min(axis=(1, 2)), 1.0)


def check_satinteg(law, n_mc, seed, tail_cap=10**6, chunk=1 << 16):
    """Monte Carlo partial sums of sum_j E exp(-(z_1 + ... + z_j)^2 / 4).

    The tail j > d uses ``law.rule`` when present and a Chernoff majorant
    evaluated on a geometric j-grid (the majorant is nonincreasing in j).
    It counts as finite when j * majorant_j has dropped below 1e-2 by
    ``tail_cap``. Without a rule only the prefix is judged: terms must
    have decayed to below 1e-9 / d.
    """
    z = sample(law, n_mc, seed)
    S = np.cumsum(z, axis=1)
    f = np.exp(-S * S / 4)
    terms = f.mean(axis=0)
    se = f.std(axis=0, ddof=1) / math.sqrt(n_mc) if n_mc > 1 else np.zeros_like(terms)
    partial = np.cumsum(terms)
    d = law.d
    if law.rule is None:
        tail = 0.0 if terms[-1] * d < 1e-9 else math.inf
    else:
        theta = _THETA * float(np.median(law.rates))
        grid = np.unique(np.geomspace(d, tail_cap, 200).astype(np.int64))
        lp = np.zeros(theta.size)
        lp += np.sum(np.log(law.rates[:, None] / (law.rates[:, None] + theta)), axis=0)
        at = {}
        j = d
        for g in grid[1:]:
            while j < g:
                hi = min(g, j + chunk)
                lam = law.rule(np.arange(j + 1, hi + 1))[:, None]
                lp += np.sum(np.log(lam / (lam + theta)), axis=0)
                j = hi
            at[int(g)] = lp.copy()
        logp = np.array([at[int(g)] for g in grid[1:]])
        M = _majorant(logp, theta)
        widths = np.diff(grid)
        # block [g_k, g_{k+1}) bounded by its left end; the first block's left end is j = d + 1
        M_left = np.r_[_majorant(_logprod_at(law, theta, d), theta), M[:-1]]
        tail = float(np.sum(widths * M_left))
        if grid[-1] * M[-1] > 1e-2:
            tail = math.inf
    verdict = "finite-evidence" if math.isfinite(tail) else "inconclusive"
    return SatIntegResult(terms, se, partial, tail, verdict)


def _logprod_at(law, theta, d):
    lam = np.r_[law.rates, law.rule(np.array([d + 1]))][:, None]
    return np.sum(np.log(lam / (lam + theta)), axis=0)[None, :]
