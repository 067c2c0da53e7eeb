"""Reflection matrices of Harrison-Reiman type.

A reflection matrix is R = I - P^T with P substochastic and transient.
Everything here works on dense numpy arrays; the dimensions we care about
are at most a few hundred.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

SUBSTOCH_TOL = 1e-12
RADIUS_TOL = 1e-9


class ReflectionError(ValueError):
    """Raised when a matrix is not of Harrison-Reiman type."""


class NeumannError(RuntimeError):
    def __init__(self, msg, last_increment):
        super().__init__(f"{msg} (last increment {last_increment:.3e})")
        self.last_increment = last_increment


class ContractionError(RuntimeError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class HRReport:
    substochastic: bool
    transient: bool | None  # None means undetermined within the cap
    certificate: str
    m: int | None = None
    radius: float | None = None
    reason: str = ""

    @property
    def valid(self):
        return self.substochastic and self.transient is True

    def as_record(self):
        return {
            "substochastic": self.substochastic,
            "transient": "undetermined" if self.transient is None else self.transient,
            "certificate": self.certificate,
            "m": self.m,
            "radius": self.radius,
            "reason": self.reason,
        }


def _as_square(P):
    P = np.array(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ReflectionError(f"P must be square, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise ReflectionError("P has non-finite entries")
    return P


def check_harrison_reiman(P, power_cap=None, tol=SUBSTOCH_TOL):
    """Check substochasticity and certify transience of P.

    Transience is certified by ||P^m 1||_inf < 1 for some m <= power_cap
    (default 10 d), falling back to the spectral radius.
    """
    P = _as_square(P)
    d = P.shape[0]
    if power_cap is None:
        power_cap = 10 * d
    if np.any(P < -tol):
        i, j = np.argwhere(P < -tol)[0]
        return HRReport(False, None, "none", reason=f"not substochastic: P[{i},{j}] < 0")
    rows = P.sum(axis=1)
    if np.any(rows > 1 + tol):
        i = int(np.argmax(rows))
        return HRReport(False, None, "none",
                        reason=f"not substochastic: row {i} sums to {float(rows[i])!r}")
    v = np.ones(d)
    for m in range(1, power_cap + 1):
        v = P @ v
        if v.max(initial=0.0) < 1 - tol:
            return HRReport(True, True, "power", m=m)
    radius = float(np.max(np.abs(np.linalg.eigvals(P)))) if d else 0.0
    if radius < 1 - RADIUS_TOL:
        return HRReport(True, True, "spectral", radius=radius)
    if radius > 1 - tol:
        return HRReport(True, False, "none", radius=radius,
                        reason="spectral radius 1: P^n 1 does not vanish")
    return HRReport(True, None, "none", radius=radius, reason="transience undetermined")


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ReflectionSpec:
    """P together with R = I - P^T and its cached inverse."""

    P: np.ndarray
    R: np.ndarray = field(init=False)
    Rinv: np.ndarray = field(init=False)
    report: HRReport = field(init=False)
    name: str = "custom"

    def __post_init__(self):
        P = _as_square(self.P)
        rep = check_harrison_reiman(P)
        if not rep.substochastic:
            raise ReflectionError(rep.reason)
        if rep.transient is not True:
            raise ReflectionError(rep.reason or "transience undetermined")
        d = P.shape[0]
        R = np.eye(d) - P.T
        Rinv = np.linalg.solve(R, np.eye(d))
        if d and np.max(np.abs(R @ Rinv - np.eye(d))) > 1e-8:
            raise ReflectionError("R is numerically singular")
        # Neumann series has nonnegative terms; clip rounding noise
        Rinv = np.maximum(Rinv, 0.0)
        object.__setattr__(self, "P", _readonly(P))
        object.__setattr__(self, "R", _readonly(R))
        object.__setattr__(self, "Rinv", _readonly(Rinv))
        object.__setattr__(self, "report", rep)

    @property
    def d(self):
        return self.P.shape[0]

    def restrict(self, k):
        """Principal k x k restriction, P|_k."""
        return ReflectionSpec(self.P[:k, :k], name=f"{self.name}|{k}")


def inverse_via_neumann(refl, tol=1e-12, cap=10**6):
    """Partial sums of sum_n (P^T)^n.

    Stops once the estimated remaining tail (last increment times r/(1-r),
    r the observed increment ratio) drops below tol. ``cap`` counts
    matrix-vector products, d per matrix product.
    """
    P = refl.P if isinstance(refl, ReflectionSpec) else _as_square(refl)
    d = P.shape[0]
    PT = P.T
    S = np.eye(d)
    T = np.eye(d)
    prev = 1.0
    used = 0
    inc = 1.0
    while used < cap:
        T = PT @ T
        used += max(d, 1)
        S += T
        inc = float(np.max(np.abs(T), initial=0.0))
        if inc == 0.0:
            return S
        r = inc / prev if prev > 0 else 1.0
        prev = inc
        if inc < tol and r < 1 and inc * r / (1 - r) < tol:
            return S
    raise NeumannError("Neumann series did not converge within cap", inc)


def contraction_coefficient(refl, cap=10**6):
    """n(R) = min{n >= 1 : ||P^n 1||_inf <= 1/2}, by repeated P @ v."""
    P = refl.P if isinstance(refl, ReflectionSpec) else _as_square(refl)
    v = np.ones(P.shape[0])
    trace = []
    for n in range(1, cap + 1):
        v = P @ v
        s = float(v.max(initial=0.0))
        trace.append(s)
        if s <= 0.5:
            return n
    raise ContractionError(f"||P^n 1|| still {trace[-1]:.6g} after {cap} steps", trace[-64:])


def power_norms(P, n_max, side="row"):
    """||P^n 1||_inf (row) or ||1^T P^n||_inf (col) for n = 0..n_max."""
    P = np.asarray(P, dtype=float)
    v = np.ones(P.shape[0])
    out = [float(v.max(initial=0.0))]
    A = P if side == "row" else P.T
    for _ in range(n_max):
        v = A @ v
        out.append(float(v.max(initial=0.0)))
    return np.array(out)


# -- named families ---------------------------------------------------------

def atlas_P(d):
    """Symmetric Atlas gap chain: 1/2 to each neighbour."""
    return asym_atlas_P(d, 0.5)


def asym_atlas_P(d, p):
    if not 0 < p < 1:
        raise ReflectionError(f"p must lie in (0,1), got {p}")
    P = np.zeros((d, d))
    i = np.arange(d - 1)
    P[i, i + 1] = p
    P[i + 1, i] = 1 - p
    return P


def generator(spec, d, loader=None):
    """Build P from a generator name.

    Names: ``atlas``, ``asym_atlas:p``, ``identity`` (P = 0), ``custom:file``.
    """
    name, _, arg = spec.partition(":")
    if name == "atlas":
        return ReflectionSpec(atlas_P(d), name="atlas")
    if name == "asym_atlas":
        p = float(Fraction(arg)) if arg else 0.5
        return ReflectionSpec(asym_atlas_P(d, p), name=f"asym_atlas:{arg}")
    if name == "identity":
        return ReflectionSpec(np.zeros((d, d)), name="identity")
    if name == "custom":
        if loader is None:
            from ..io import read_matrix_csv as loader
        return ReflectionSpec(loader(arg), name=f"custom:{arg}")
    raise ReflectionError(f"unknown generator {spec!r}")


# -- closed forms -----------------------------------------------------------

def asym_atlas_rinv(d, p):
    """Closed-form inverse of R for the asymmetric Atlas chain.

    Each branch is rewritten in powers of min(q/p, p/q) so nothing
    overflows at large d.
    """
    q = 1 - p
    if abs(p - q) < 1e-15:
        return atlas_rinv(d)
    i = np.arange(1, d + 1)[:, None]
    j = np.arange(1, d + 1)[None, :]
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    if p > q:
        r = q / p
        out = (1 - r**lo) * (1 - r ** (d + 1 - hi)) / ((1 - r ** (d + 1)) * (p - q))
        return np.where(i <= j, r ** np.maximum(j - i, 0) * out, out)
    s = p / q
    out = (s**lo - 1) * (s ** (d + 1 - hi) - 1) / ((s ** (d + 1) - 1) * (p - q))
    return np.where(j < i, s ** np.maximum(i - j, 0) * out, out)


def atlas_rinv(d, exact=False):
    """Symmetric Atlas: (R^-1)_ij = 2 min(i,j) (1 - max(i,j)/(d+1))."""
    if exact:
        return [[Fraction(2 * min(i, j)) * (1 - Fraction(max(i, j), d + 1))
                 for j in range(1, d + 1)] for i in range(1, d + 1)]
    i = np.arange(1, d + 1)[:, None]
    j = np.arange(1, d + 1)[None, :]
    return 2.0 * np.minimum(i, j) * (1 - np.maximum(i, j) / (d + 1))


def exact_rinv(P):
    """(I - P^T)^{-1} in rational arithmetic by Gauss-Jordan elimination."""
    d = len(P)
    A = [[(Fraction(int(i == j)) - Fraction(P[j][i])) for j in range(d)]
         + [Fraction(int(i == j)) for j in range(d)] for i in range(d)]
    for c in range(d):
        piv = next(r for r in range(c, d) if A[r][c] != 0)
        A[c], A[piv] = A[piv], A[c]
        inv = 1 / A[c][c]
        A[c] = [x * inv for x in A[c]]
        for r in range(d):
            if r != c and A[r][c] != 0:
                f = A[r][c]
                A[r] = [x - f * y for x, y in zip(A[r], A[c])]
    return [row[d:] for row in A]
