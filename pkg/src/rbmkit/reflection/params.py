"""Model parameters: the triple (mu, Sigma, R) and rank-based particle data."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np

from .core import ReflectionSpec, asym_atlas_P, atlas_P


class ParamError(ValueError):
    pass


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RbmParams:
    """Drift mu, diffusion factor D (d x k) and reflection data.

    Sigma = D D^T must be positive definite unless ``allow_degenerate`` is
    set, which is only meant for deterministic test runs.
    """

    mu: np.ndarray
    D: np.ndarray
    refl: ReflectionSpec
    allow_degenerate: bool = False
    Sigma: np.ndarray = field(init=False)
    sigma: np.ndarray = field(init=False)

    def __post_init__(self):
        d = self.refl.d
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        D = np.asarray(self.D, dtype=float)
        if D.ndim == 1:
            D = np.diag(D)
        if mu.shape != (d,) or D.shape[0] != d:
            raise ParamError(f"shape mismatch: mu {mu.shape}, D {D.shape}, d = {d}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(D))):
            raise ParamError("non-finite drift or diffusion")
        S = D @ D.T
        if not self.allow_degenerate:
            lo = np.linalg.eigvalsh(S).min() if d else 1.0
            if lo <= 0:
                raise ParamError(f"Sigma not positive definite (min eigenvalue {lo:.3e})")
        object.__setattr__(self, "mu", _frozen(mu))
        object.__setattr__(self, "D", _frozen(D))
        object.__setattr__(self, "Sigma", _frozen(S))
        object.__setattr__(self, "sigma", _frozen(np.sqrt(np.diag(S))))

    @property
    def d(self):
        return self.refl.d

    @property
    def k(self):
        return self.D.shape[1]

    @cached_property
    def b(self):
        return -(self.refl.Rinv @ self.mu)

    @property
    def stable(self):
        return bool(self.d and self.b.min() > 0)

    def restrict(self, k):
        """(mu|_k, Sigma|_k, R|_k), keeping the first k rows of D."""
        return RbmParams(self.mu[:k], self.D[:k], self.refl.restrict(k),
                         allow_degenerate=self.allow_degenerate)


def stability_vector(params):
    """b = -R^{-1} mu and the stability flag min b > 0."""
    b = params.b.copy()
    return b, bool(b.size and b.min() > 0)


@dataclass(frozen=True, eq=False)
class RankParams:
    """Rank-based particle system with d + 1 particles.

    ``delta[j]`` and ``sigma[j]`` are the drift and volatility of the particle
    of rank j (rank 0 is the lowest). ``p`` is the collision asymmetry:
    gap i pushes the lower particle with weight q = 1 - p and the upper
    particle with weight p.
    """

    delta: tuple
    sigma: tuple
    p: float = 0.5

    def __post_init__(self):
        delta = tuple(self.delta)
        sigma = tuple(self.sigma)
        if len(delta) != len(sigma) or len(delta) < 2:
            raise ParamError("delta and sigma need equal length >= 2")
        if min(sigma) <= 0:
            raise ParamError("rank volatilities must be positive")
        if not 0 < self.p < 1:
            raise ParamError(f"p must lie in (0,1), got {self.p}")
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def standard_atlas(cls, d, p=0.5):
        return cls((1,) + (0,) * d, (1,) * (d + 1), p)

    @property
    def d(self):
        return len(self.delta) - 1

    @property
    def mu(self):
        dl = np.asarray(self.delta, dtype=float)
        return dl[1:] - dl[:-1]

    @property
    def D(self):
        """Natural d x (d+1) factor: gap i sees sigma_i dB_i - sigma_{i-1} dB_{i-1}."""
        d = self.d
        s = np.asarray(self.sigma, dtype=float)
        D = np.zeros((d, d + 1))
        i = np.arange(d)
        D[i, i + 1] = s[1:]
        D[i, i] = -s[:-1]
        return D

    @property
    def Sigma(self):
        return self.D @ self.D.T

    @cached_property
    def refl(self):
        P = atlas_P(self.d) if self.p == 0.5 else asym_atlas_P(self.d, self.p)
        return ReflectionSpec(P, name="atlas" if self.p == 0.5 else f"asym_atlas:{self.p}")

    def to_rbm(self):
        return RbmParams(self.mu, self.D, self.refl)

    def rank_b(self, exact=False):
        """b_k = sum_{i<=k} (delta_{i-1} - mean(delta)), k = 1..d.

        For symmetric collisions this is half of -R^{-1} mu.
        """
        if exact:
            dl = [Fraction(x) for x in self.delta]
            mean = sum(dl) / len(dl)
            out, acc = [], Fraction(0)
            for k in range(1, self.d + 1):
                acc += dl[k - 1] - mean
                out.append(acc)
            return out
        dl = np.asarray(self.delta, dtype=float)
        return np.cumsum(dl[:-1] - dl.mean())

    def astar(self, exact=False):
        """a* = sup_i i (d+1-i) / b_i with the rank-based b."""
        b = self.rank_b(exact=exact)
        d = self.d
        vals = [Fraction(i * (d + 1 - i)) / b[i - 1] if exact else i * (d + 1 - i) / b[i - 1]
                for i in range(1, d + 1)]
        return max(vals)

    def sigma_bound(self):
        s = np.asarray(self.sigma, dtype=float)
        return float(max(s.max(), (1 / s).max()))

    def skew_ok(self, tol=1e-12):
        s2 = np.asarray(self.sigma, dtype=float) ** 2
        inc = np.diff(s2)
        return bool(np.all(np.abs(inc - inc[0]) <= tol))
