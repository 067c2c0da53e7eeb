"""Synchronous and mirror couplings and the distances built on them."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _banded, rng
from .dynamics import SimulationError, TrajectoryBundle, _bundle, bridge_minimum, reflect_step, run_copies
from .reflection.core import contraction_coefficient
from .skorohod import HRSolver, activity_threshold


class CouplingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CoupledPair:
    """Two copies driven by one noise realization.

    ``ref`` is an optional third synchronous copy started at 0, used by the
    u functional. ``coupling_time`` is inf for paths that never coupled.
    """

    t: np.ndarray
    A: object
    B: object
    Rinv: np.ndarray
    kind: str = "synchronous"
    ref: object | None = None
    coupling_time: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return self.A.state.shape[0]


@dataclass(frozen=True, eq=False)
class DistanceSeries:
    t: np.ndarray
    l1: np.ndarray  # (n_paths, n_obs)
    wl1: np.ndarray
    u: np.ndarray | None
    ubound: np.ndarray | None
    beta: float

    def mean(self):
        """Path averages, in the column order of the CSV output."""
        cols = [self.l1, self.wl1, self.u, self.ubound]
        return {n: (c.mean(axis=0) if c is not None else np.full(self.t.size, np.nan))
                for n, c in zip(("l1", "wl1", "u", "ubound"), cols)}

    def to_csv(self, fname):
        m = self.mean()
        with open(fname, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "l1", "wl1", "u", "ubound"])
            for j, t in enumerate(self.t):
                w.writerow([repr(float(t))] + [repr(float(m[k][j])) for k in ("l1", "wl1", "u", "ubound")])


# -- per-step observers (run inside the simulation kernel) ---------------------

class MonotoneObserver:
    """Tracks v = R^{-1}(x_B - x_A) step by step.

    Per path: largest single-step rise of any coordinate, number of steps
    with a rise above ``floor``, smallest coordinate seen.
    """

    def __init__(self, count, C, d, payload, Rinv, floor, a=0, b=1):
        self.Rinv, self.floor, self.a, self.b = Rinv, floor, a, b
        self.rise = np.full(count, -np.inf)
        self.bad = np.zeros(count, dtype=np.int64)
        self.vmin = np.full(count, np.inf)
        self.steps = 0
        self.v = None

    def _v(self, x):
        return (x[:, self.b] - x[:, self.a]) @ self.Rinv.T

    def start(self, x):
        self.v = self._v(x)
        self.vmin = np.minimum(self.vmin, self.v.min(axis=1))

    def step(self, k, x_prev, x, dL):
        v = self._v(x)
        r = (v - self.v).max(axis=1)
        self.rise = np.maximum(self.rise, r)
        self.bad += r > self.floor
        self.vmin = np.minimum(self.vmin, v.min(axis=1))
        self.v = v
        self.steps += 1

    def result(self):
        return {"rise": self.rise, "bad": self.bad, "vmin": self.vmin,
                "steps": np.full(self.rise.size, self.steps)}


class EpochObserver:
    """Greedy epochs: an epoch closes once every coordinate of copy ``c`` has
    touched the boundary (pushed, or within eps of 0) since it opened.

    Records close times and the l1 distance between copies a and b there.
    """

    def __init__(self, count, C, d, payload, c=1, a=0, b=1, max_epochs=64):
        self.c, self.a, self.b = c, a, b
        self.eps = payload["eps"]
        self.dt = payload["cfg"].dt
        self.touched = np.zeros((count, d), dtype=bool)
        self.n = np.zeros(count, dtype=np.int64)
        self.times = np.full((count, max_epochs), np.inf)
        self.l1 = np.full((count, max_epochs), np.nan)
        self.l10 = None

    def start(self, x):
        self.l10 = np.abs(x[:, self.a] - x[:, self.b]).sum(axis=1)
        # an epoch opens at time 0; a start on the boundary counts as a touch
        self.touched |= x[:, self.c] <= self.eps

    def step(self, k, x_prev, x, dL):
        self.touched |= (dL[:, self.c] > 0) | (x[:, self.c] <= self.eps)
        done = self.touched.all(axis=1) & (self.n < self.times.shape[1])
        if done.any():
            idx = np.nonzero(done)[0]
            self.times[idx, self.n[idx]] = k * self.dt
            self.l1[idx, self.n[idx]] = np.abs(x[idx, self.a] - x[idx, self.b]).sum(axis=1)
            self.n[idx] += 1
            self.touched[idx] = False

    def result(self):
        return {"times": self.times, "l1": self.l1, "l10": self.l10}


# -- synchronous coupling -----------------------------------------------------

def _check_start(x, d, name):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != d or np.any(x < 0) or not np.all(np.isfinite(x)):
        raise SimulationError(f"invalid start {name}")
    return x


def synchronous_pair(params, xA, xB, cfg, reference=True, observers=()):
    """Copies from xA and xB (each (d,) or (n_paths, d)) on one noise stream.

    With ``reference`` a third copy from 0 rides along for u_beta.
    """
    d = params.d
    xA = _check_start(xA, d, "xA")
    xB = _check_start(xB, d, "xB")
    starts = [xA, xB] + ([np.zeros(d)] if reference else [])
    x0 = np.stack([np.broadcast_to(s, (cfg.n_paths, d)) for s in starts], axis=1)
    out = run_copies(params, x0, cfg, observers=observers)
    copies = [_bundle(out, params, cfg, copy=c) for c in range(x0.shape[1])]
    extra = {k: v for k, v in out.items() if k.startswith("obs")}
    return CoupledPair(cfg.obs_times(), copies[0], copies[1], np.array(params.refl.Rinv),
                       ref=copies[2] if reference else None, extra=extra)


def monotonicity_check(params, xA, xB, cfg, floor=None):
    """Step-level monotonicity of R^{-1}(X_B - X_A) along synchronous paths.

    Returns a dict with per-path max rise, the fraction of steps with a rise
    above ``floor`` (default 10 sigma_max sqrt(dt)) and the smallest entry.
    """
    if floor is None:
        floor = 10 * float(params.sigma.max()) * math.sqrt(cfg.dt)
    obs = [(MonotoneObserver, {"Rinv": np.array(params.refl.Rinv), "floor": floor})]
    pair = synchronous_pair(params, xA, xB, cfg, reference=False, observers=obs)
    r = {k[5:]: v for k, v in pair.extra.items() if k.startswith("obs0_")}
    r["floor"] = floor
    r["violation_rate"] = float(r["bad"].sum() / max(1, r["steps"].sum()))
    return r


def contraction_event_counter(pair, refl=None):
    """Epoch counts on the pair's grid: (t, epochs) with epochs (n_paths, n_obs).

    ``pair`` must come from ``epoch_pair`` (which records epochs per step).
    """
    if "obs0_times" not in pair.extra:
        raise CouplingError("pair carries no epoch record; simulate it with epoch_pair")
    times = pair.extra["obs0_times"]
    counts = (times[:, None, :] <= pair.t[None, :, None] + 1e-12).sum(axis=2)
    return pair.t, counts


def epoch_pair(params, xA, xB, cfg, max_epochs=64):
    """Synchronous pair with greedy epoch bookkeeping on the larger start."""
    xA = np.asarray(xA, dtype=float)
    xB = np.asarray(xB, dtype=float)
    c = 1 if np.sum(xB) >= np.sum(xA) else 0
    obs = [(EpochObserver, {"c": c, "max_epochs": max_epochs})]
    return synchronous_pair(params, xA, xB, cfg, reference=False, observers=obs)


def epoch_halving(pair, n=None, refl=None, floor=0.0):
    """l1 at the close of epoch n (default n(R)) against l1(0)/2 + floor.

    Returns (mean l1 at epoch n, mean l1(0), fraction of paths reaching
    epoch n, fraction of those violating the halving).
    """
    if n is None:
        if refl is None:
            raise CouplingError("need n or refl")
        n = contraction_coefficient(refl)
    l1 = pair.extra["obs0_l1"][:, n - 1]
    l10 = pair.extra["obs0_l10"]
    ok = np.isfinite(l1)
    if not ok.any():
        return math.nan, float(l10.mean()), 0.0, math.nan
    viol = l1[ok] > 0.5 * l10[ok] + floor
    return float(l1[ok].mean()), float(l10[ok].mean()), float(ok.mean()), float(viol.mean())


def write_epochs_csv(t, counts, fname):
    with open(fname, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "epochs"])
        for j, tj in enumerate(t):
            w.writerow([repr(float(tj)), repr(float(counts[:, j].mean()))])


# -- distances ---------------------------------------------------------------

def weighted_l1(diff, beta):
    """sum_i beta^i |diff_i| over the last axis, i = 1..d."""
    d = diff.shape[-1]
    w = beta ** np.arange(1, d + 1, dtype=float)
    return np.abs(diff) @ w


def distance_series(pair, beta):
    if not 0 < beta <= 1:
        raise CouplingError(f"beta must lie in (0,1], got {beta}")
    diff = pair.A.state - pair.B.state
    l1 = np.abs(diff).sum(axis=-1)
    wl1 = l1.copy() if beta == 1 else weighted_l1(diff, beta)
    u = ub = None
    if pair.ref is not None:
        RiT = pair.Rinv.T
        u = weighted_l1((pair.A.state - pair.ref.state) @ RiT, beta)
        ub = u + weighted_l1((pair.B.state - pair.ref.state) @ RiT, beta)
    return DistanceSeries(pair.t, l1, wl1, u, ub, beta)


def canonical_beta(p):
    """sqrt(q/p), the weight attached to the asymmetric Atlas rate."""
    return math.sqrt((1 - p) / p)


# -- mirror coupling ----------------------------------------------------------

def _mirror_block(payload, start, count):
    cfg = payload["cfg"]
    mu, D, offs = payload["mu"], payload["D"], payload["offs"]
    d, k, i = payload["d"], payload["k"], payload["i"]
    delta0, sig0, q = payload["delta0"], payload["sigma0"], payload["q"]
    solver = HRSolver(payload["P"], tol=cfg.tol)
    bridge = cfg.scheme == "bridge"
    dt, sdt = cfg.dt, math.sqrt(cfg.dt)
    eps, thr = payload["eps"], payload["thr"]
    obs = cfg.obs_steps()
    n_obs = obs.size

    x = np.broadcast_to(payload["z0"], (count, 2, d)).copy()
    y0 = np.broadcast_to(payload["bottom0"], (count, 2)).copy()
    L = np.zeros_like(x)
    B = np.zeros((count, 2, k))
    st = np.empty((count, n_obs, 2, d))
    Lr = np.empty_like(st)
    Yr = np.empty((count, n_obs, 2))
    Br = np.empty((count, n_obs, 2, k))
    st[:, 0], Lr[:, 0], Yr[:, 0], Br[:, 0] = x, L, y0, B
    res = np.zeros_like(x)

    def ordered_head(x, y0):
        return np.concatenate([y0[..., None], y0[..., None] + np.cumsum(x[..., :i], axis=-1)], axis=-1)

    if i < 0:
        h = np.zeros((count, 2, 1))
    else:
        h = ordered_head(x, y0)
    sign0 = np.sign(h[:, 0] - h[:, 1])
    tau = np.full(count, np.inf)
    coupled = (np.max(np.abs(h[:, 0] - h[:, 1]), axis=1) <= thr) | (i < 0)
    tau[coupled] = 0.0
    hit = np.full(count, np.inf)
    hit[np.any(x <= eps, axis=(1, 2))] = 0.0
    flip = np.ones(k)
    flip[: i + 1] = -1.0
    gz = rng.BlockStreams(cfg.seed, start, count, rng.NORMAL)
    gu = rng.BlockStreams(cfg.seed, start, count, rng.UNIFORM) if bridge else None
    chunk = max(1, min(cfg.n_steps, (1 << 20) // max(1, count * (k + d))))
    step, oi = 0, 1
    s2dt = _banded.rowsq(D, offs) * dt
    while step < cfg.n_steps:
        S = min(chunk, cfg.n_steps - step)
        Z = gz.normal(S, k)
        U = gu.uniform(S, d) if bridge else None
        for s in range(S):
            dB = sdt * Z[s]
            dBB = np.where(coupled[:, None], dB, dB * flip)
            dBc = np.stack([dB, dBB], axis=1)
            xi = mu * dt + _banded.matvec(D, dBc, offs)
            m = bridge_minimum(xi, s2dt, U[s][:, None, :]) if bridge else None
            x, dL, r = reflect_step(solver, x, xi, m, eps)
            L = L + dL
            res += r
            B = B + dBc
            y0 = y0 + delta0 * dt + sig0 * dBc[..., 0] - q * dL[..., 0]
            step += 1
            t = step * dt
            hit[np.isinf(hit) & np.any(x <= eps, axis=(1, 2))] = t
            if not coupled.all():
                h = ordered_head(x, y0)
                diff = h[:, 0] - h[:, 1]
                crossed = np.all((np.sign(diff) != sign0) | (sign0 == 0), axis=1)
                new = ~coupled & ((np.max(np.abs(diff), axis=1) <= thr) | crossed)
                tau[new] = t
                coupled |= new
            if oi < n_obs and obs[oi] == step:
                st[:, oi], Lr[:, oi], Yr[:, oi], Br[:, oi] = x, L, y0, B
                oi += 1
    return {"state": st, "loctime": Lr, "bottom": Yr, "brownian": Br, "tau": tau,
            "hit": hit, "residual": res.max(axis=-1)}


def mirror_pair(rp, i, yA0, yB0, cfg):
    """Mirror coupling of ranked motions 0..i, synchronous for the rest.

    Copy B's increments of B*_0..B*_i are negated until the first i+1 ordered
    particles of the two copies agree to sqrt(dt) 1e-2 (or all of their
    differences have changed sign); then both copies share all increments.
    i = -1 gives the empty mirrored set, i.e. the synchronous coupling.

    Returns a CoupledPair of gap bundles; ``extra`` holds ordered positions
    ("orderedA", "orderedB"), the first time any gap of either copy touched
    zero ("hit") and per-copy Brownian paths.
    """
    d = rp.d
    if not -1 <= i <= d:
        raise CouplingError(f"mirror index must lie in -1..{d}, got {i}")
    yA0 = np.asarray(yA0, dtype=float)
    yB0 = np.asarray(yB0, dtype=float)
    for y in (yA0, yB0):
        if y.shape != (d + 1,) or np.any(np.diff(y) < 0):
            raise SimulationError("starts must be sorted vectors of length d+1")
    params = rp.to_rbm()
    D = np.array(params.D)
    z0 = np.stack([np.diff(yA0), np.diff(yB0)])
    payload = {
        "cfg": cfg, "mu": np.array(params.mu), "D": D, "offs": _banded.offsets(D),
        "P": np.array(params.refl.P), "d": d, "k": d + 1, "i": i,
        "delta0": float(rp.delta[0]), "sigma0": float(rp.sigma[0]), "q": 1 - rp.p,
        "eps": activity_threshold(cfg.dt, float(params.sigma.max())),
        "thr": math.sqrt(cfg.dt) * 1e-2,
        "z0": z0, "bottom0": np.array([yA0[0], yB0[0]]),
    }
    parts = rng.run_blocks(_mirror_block, cfg.n_paths, cfg.block, cfg.workers, payload)
    out = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}
    t = cfg.obs_times()
    mu = np.array(params.mu)
    R = np.array(params.refl.R)
    bundles = []
    for c in range(2):
        drv = out["brownian"][:, :, c, :] @ D.T + t[None, :, None] * mu
        bundles.append(TrajectoryBundle(
            t=t, state=out["state"][:, :, c, :], loctime=out["loctime"][:, :, c, :], driver=drv,
            brownian=out["brownian"][:, :, c, :],
            x0=np.broadcast_to(z0[c], (cfg.n_paths, d)).copy(), R=R,
            residual=out["residual"][:, c], failed=np.zeros(cfg.n_paths, dtype=bool)))
    ordered = [out["bottom"][:, :, c, None] + np.concatenate(
        [np.zeros(out["bottom"].shape[:2] + (1,)), np.cumsum(out["state"][:, :, c, :], axis=-1)],
        axis=-1) for c in range(2)]
    extra = {"orderedA": ordered[0], "orderedB": ordered[1], "hit": out["hit"]}
    return CoupledPair(t, bundles[0], bundles[1], np.array(params.refl.Rinv), kind="mirror",
                       coupling_time=out["tau"], extra=extra)


def coupling_probability(pair):
    """P(coupling strictly before any gap of either copy touches zero), with a standard error."""
    ok = (pair.coupling_time < pair.extra["hit"]) | (pair.coupling_time == 0)
    p = float(ok.mean())
    return p, math.sqrt(p * (1 - p) / ok.size)
