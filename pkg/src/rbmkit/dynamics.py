"""Simulators for reflected Brownian motions and rank-based particle systems.

Each time step solves the Harrison-Reiman Skorohod problem on the step's
driver increment, starting from the current state. Two per-step drivers
are available:

``bridge`` (default)
    The driver is evaluated at the step end and at a per-coordinate
    Brownian-bridge minimum drawn exactly from the step's endpoints. In one
    dimension this makes the step exact; in general it removes most of the
    O(sqrt(dt)) boundary bias of plain projection.
``projection``
    Only the step end is used (plain Euler plus projection).

Randomness comes from per-path counter-based streams (see ``rng``), so
results do not depend on block size or worker count.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _banded, rng
from .reflection import RankParams
from .skorohod import DiscretePath, HRSolver, activity_threshold

log = logging.getLogger(__name__)

SCHEMES = ("bridge", "projection")


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    dt: float
    T: float
    n_paths: int = 1
    seed: int = 0
    scheme: str = "bridge"
    record_every: int | None = None  # steps between stored points; None stores every step
    block: int = 4096  # paths per work unit; never changes results
    workers: int = 1  # never changes results
    retain_noise: bool = False
    tol: float = 1e-10

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.T >= self.dt:
            raise ValueError("need T >= dt")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.n_paths < 1 or self.block < 1:
            raise ValueError("n_paths and block must be positive")
        n = round(self.T / self.dt)
        if abs(n * self.dt - self.T) > 1e-9 * self.T:
            raise ValueError(f"T = {self.T} is not a multiple of dt = {self.dt}")

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    def obs_steps(self):
        r = self.record_every or 1
        s = list(range(0, self.n_steps + 1, r))
        if s[-1] != self.n_steps:
            s.append(self.n_steps)
        return np.array(s)

    def obs_times(self):
        return self.obs_steps() * self.dt


@dataclass(frozen=True, eq=False)
class TrajectoryBundle:
    """Stored trajectories of n paths at the observation times ``t``.

    state, loctime, driver: (n_paths, n_obs, d). ``driver`` is
    D B(t) + mu t and ``brownian`` is B(t), so that
    state = x0 + driver + R loctime holds at every stored time.
    """

    t: np.ndarray
    state: np.ndarray
    loctime: np.ndarray | None
    driver: np.ndarray
    brownian: np.ndarray
    x0: np.ndarray
    R: np.ndarray
    residual: np.ndarray
    failed: np.ndarray
    min_dL: float = 0.0
    noise: dict | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return self.state.shape[0]

    @property
    def d(self):
        return self.state.shape[-1]

    @property
    def final(self):
        return self.state[:, -1, :]

    def path(self, i):
        return DiscretePath(self.t, self.state[i])

    def extracted_loctime(self):
        """R^{-1}(X - x0 - D B - mu t)."""
        rhs = self.state - self.x0[:, None, :] - self.driver
        return np.linalg.solve(self.R, rhs.reshape(-1, self.d).T).T.reshape(rhs.shape)

    def identity_error(self):
        if self.loctime is None:
            raise ValueError("bundle carries no local time")
        lhs = self.state - self.x0[:, None, :] - self.driver
        return float(np.max(np.abs(lhs - self.loctime @ self.R.T)))


@dataclass(frozen=True, eq=False)
class RankSystemState:
    positions: np.ndarray  # unordered particle locations (d+1,)
    ranking: np.ndarray  # ranking[r] = index of the particle holding rank r
    gaps: np.ndarray

    @classmethod
    def from_positions(cls, y):
        y = np.asarray(y, dtype=float)
        order = np.argsort(y, kind="stable")
        return cls(y, order, np.diff(y[order]))


# -- shared step kernel -------------------------------------------------------

def bridge_minimum(xi, s2dt, u):
    """Minimum of a Brownian bridge from 0 to xi with variance s2dt, given U in (0,1]."""
    return 0.5 * (xi - np.sqrt(xi * xi - 2.0 * s2dt * np.log(u)))


def reflect_step(solver, x, xi, m, eps):
    """One HR projection over a step from x.

    x: (..., d); xi, m broadcastable to x (m may be None for plain projection).
    Returns (x_new, dL, residual increment).
    """
    xi = np.broadcast_to(xi, x.shape)
    psi = xi[..., None, :] if m is None else np.stack([np.broadcast_to(m, x.shape), xi], axis=-2)
    need = np.any(x[..., None, :] + psi < 0, axis=(-2, -1))
    x_new = x + xi
    dL = np.zeros_like(x)
    res = np.zeros_like(x)
    if need.any():
        ell = solver.solve_exact(x[need], psi[need])
        end = ell[..., -1, :]
        # pivoting leaves active coordinates at +-1 ulp; clamp onto the face
        xn = np.maximum(x_new[need] + solver.push(end), 0.0)
        dL[need] = end
        r = np.where(xn > eps, end, 0.0)
        if m is not None:
            mid = ell[..., 0, :]
            at_mid = x[need] + psi[need][..., 0, :] + solver.push(mid)
            r = np.where(at_mid > eps, mid, 0.0) + np.where(xn > eps, end - mid, 0.0)
        x_new[need] = xn
        res[need] = r
    return x_new, dL, res


def _coeffs(payload, x):
    if payload["bfun"] is None:
        return payload["mu"], payload["D"]
    b = np.asarray(payload["bfun"](x), dtype=float)
    s = np.asarray(payload["sigfun"](x), dtype=float)
    return b, s


def _rbm_block(payload, start, count):
    cfg = payload["cfg"]
    d, k = payload["d"], payload["k"]
    x0 = payload["x0"][start:start + count]  # (count, C, d)
    C = x0.shape[1]
    solver = HRSolver(payload["P"], tol=cfg.tol)
    offsD = payload["offsD"]
    bridge = cfg.scheme == "bridge"
    n_steps = cfg.n_steps
    obs = cfg.obs_steps()
    n_obs = obs.size
    dt = cfg.dt
    sdt = math.sqrt(dt)
    eps = payload["eps"]

    st = np.empty((count, n_obs, C, d))
    Lr = np.empty((count, n_obs, C, d))
    dr = np.empty((count, n_obs, d))
    Br = np.empty((count, n_obs, k))
    x = x0.copy()
    L = np.zeros_like(x)
    drv = np.zeros((count, d))
    B = np.zeros((count, k))
    res = np.zeros_like(x)
    failed = np.zeros((count, C), dtype=bool)
    st[:, 0], Lr[:, 0], dr[:, 0], Br[:, 0] = x, L, drv, B
    keep = {}
    if cfg.retain_noise:
        keep["normal"] = np.empty((count, n_steps, k))
        if bridge:
            keep["uniform"] = np.empty((count, n_steps, d))
    observers = [cls(count, C, d, payload, **kw) for cls, kw in payload.get("observers", ())]
    for o in observers:
        o.start(x)

    gz = rng.BlockStreams(cfg.seed, start, count, rng.NORMAL)
    gu = rng.BlockStreams(cfg.seed, start, count, rng.UNIFORM) if bridge else None
    chunk = max(1, min(n_steps, (1 << 21) // max(1, count * (k + d))))
    oi = 1
    step = 0
    callbacks = payload["bfun"] is not None
    while step < n_steps:
        S = min(chunk, n_steps - step)
        Z = gz.normal(S, k)
        U = gu.uniform(S, d) if bridge else None
        if cfg.retain_noise:
            keep["normal"][:, step:step + S] = Z.transpose(1, 0, 2)
            if bridge:
                keep["uniform"][:, step:step + S] = U.transpose(1, 0, 2)
        for s in range(S):
            dB = sdt * Z[s]
            xc = x[:, 0, :] if callbacks else None
            drift, Dm = _coeffs(payload, xc)
            xi = drift * dt + _banded.matvec(Dm, dB, offsD)
            m = None
            if bridge:
                s2dt = _banded.rowsq(Dm, offsD) * dt
                m = bridge_minimum(xi, s2dt, U[s])
            xi_c = xi[:, None, :]
            m_c = None if m is None else m[:, None, :]
            x_prev = x
            x, dL, r = reflect_step(solver, x, xi_c, m_c, eps)
            bad = ~np.all(np.isfinite(x), axis=-1)
            if bad.any():
                failed |= bad
                x[bad] = 0.0
                dL[bad] = 0.0
            L = L + dL
            res += r
            drv = drv + xi
            B = B + dB
            step += 1
            for o in observers:
                o.step(step, x_prev, x, dL)
            if oi < n_obs and obs[oi] == step:
                st[:, oi], Lr[:, oi], dr[:, oi], Br[:, oi] = x, L, drv, B
                oi += 1
    out = {"state": st, "loctime": Lr, "driver": dr, "brownian": Br,
           "residual": res.max(axis=-1), "failed": failed}
    out.update({f"noise_{n}": v for n, v in keep.items()})
    for j, o in enumerate(observers):
        out.update({f"obs{j}_{n}": v for n, v in o.result().items()})
    return out


def _merge(parts):
    return {key: np.concatenate([p[key] for p in parts], axis=0) for key in parts[0]}


def run_copies(params, x0, cfg, bfun=None, sigfun=None, observers=()):
    """Simulate C synchronously driven copies per path.

    x0: (d,), (C, d) or (n_paths, C, d). Returns the merged block dict with
    arrays of shape (n_paths, n_obs, C, d) for state and loctime.
    """
    d = params.d
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        x0 = x0[None, :]
    if x0.ndim == 2:
        x0 = np.broadcast_to(x0, (cfg.n_paths,) + x0.shape)
    if x0.shape[0] != cfg.n_paths or x0.shape[-1] != d:
        raise SimulationError(f"start shape {x0.shape} does not fit n_paths={cfg.n_paths}, d={d}")
    if np.any(x0 < 0) or not np.all(np.isfinite(x0)):
        raise SimulationError("invalid start: must be finite and in the orthant")
    D = params.D
    dense = bfun is not None
    payload = {
        "cfg": cfg, "d": d, "k": params.k, "x0": np.ascontiguousarray(x0),
        "P": np.asarray(params.refl.P), "mu": params.mu, "D": D,
        "offsD": _banded.offsets(D, dense=dense), "bfun": bfun, "sigfun": sigfun,
        "eps": activity_threshold(cfg.dt, float(params.sigma.max(initial=0.0)) or 1.0),
        "observers": list(observers),
    }
    parts = rng.run_blocks(_rbm_block, cfg.n_paths, cfg.block, cfg.workers, payload)
    out = _merge(parts)
    out["x0"] = x0
    return out


def _bundle(out, params, cfg, copy=0, meta=None):
    noise = None
    if cfg.retain_noise:
        noise = {n[6:]: v for n, v in out.items() if n.startswith("noise_")}
    failed = out["failed"][:, copy]
    st = out["state"][:, :, copy, :].copy()
    st[failed] = np.nan
    dL = np.diff(out["loctime"][:, :, copy, :], axis=1)
    return TrajectoryBundle(
        t=cfg.obs_times(), state=st, loctime=out["loctime"][:, :, copy, :],
        driver=out["driver"], brownian=out["brownian"], x0=np.array(out["x0"][:, copy, :]),
        R=np.array(params.refl.R), residual=out["residual"][:, copy], failed=failed,
        min_dL=float(dL.min(initial=0.0)), noise=noise, meta=meta or {})


def simulate_rbm(params, x0, cfg):
    """(mu, D, R)-RBM from x0 (shape (d,) or (n_paths, d))."""
    x0 = np.asarray(x0, dtype=float)
    start = x0[:, None, :] if x0.ndim == 2 else x0
    out = run_copies(params, start, cfg)
    if out["failed"].any():
        log.warning("%d paths aborted on non-finite state", int(out["failed"].sum()))
    return _bundle(out, params, cfg, meta={"model": "rbm"})


def simulate_reflected_diffusion(bfun, sigfun, refl, x0, cfg):
    """Reflected diffusion with state-dependent coefficients.

    bfun maps states (n, d) to drifts (n, d); sigfun maps states (n, d) to
    factors (n, d, k) or a constant (d, k). Both are evaluated at step start.
    Constant callbacks reproduce ``simulate_rbm`` bit for bit.
    """
    x0 = np.asarray(x0, dtype=float)
    d = refl.d
    probe = np.atleast_2d(x0)[:1]
    s0 = np.asarray(sigfun(probe), dtype=float)
    D0 = s0 if s0.ndim == 2 else s0[0]

    class _Shape:  # minimal stand-in carrying shapes for run_copies
        pass

    sh = _Shape()
    sh.d, sh.k, sh.refl = d, D0.shape[1], refl
    sh.mu, sh.D = np.zeros(d), D0
    sh.sigma = np.sqrt(np.maximum(np.diag(D0 @ D0.T), 0.0))
    start = x0[:, None, :] if x0.ndim == 2 else x0
    out = run_copies(sh, start, cfg, bfun=bfun, sigfun=sigfun)
    if out["failed"].any():
        log.warning("%d paths aborted on non-finite state", int(out["failed"].sum()))
    return _bundle(out, sh, cfg, meta={"model": "reflected_diffusion"})


# -- rank-based systems -------------------------------------------------------

def _rank_block(payload, start, count):
    cfg = payload["cfg"]
    delta, sig = payload["delta"], payload["sigma"]
    n = delta.size
    dt = cfg.dt
    sdt = math.sqrt(dt)
    obs = cfg.obs_steps()
    n_obs = obs.size
    y = np.broadcast_to(payload["y0"], (count, n)).copy()
    Yr = np.empty((count, n_obs, n))
    rank = np.empty((count, n_obs, n), dtype=np.int64)
    Bs = np.zeros((count, n))
    Br = np.empty((count, n_obs, n))
    order = np.argsort(y, axis=1, kind="stable")
    Yr[:, 0] = np.take_along_axis(y, order, 1)
    rank[:, 0] = order
    Br[:, 0] = Bs
    gz = rng.BlockStreams(cfg.seed, start, count, rng.NORMAL)
    failed = np.zeros(count, dtype=bool)
    rows = np.arange(count)[:, None]
    chunk = max(1, min(cfg.n_steps, (1 << 21) // max(1, count * n)))
    step, oi = 0, 1
    while step < cfg.n_steps:
        S = min(chunk, cfg.n_steps - step)
        Z = gz.normal(S, n)
        for s in range(S):
            dW = sdt * Z[s]
            rk = np.empty_like(order)
            rk[rows, order] = np.arange(n)  # rank of each particle
            y = y + delta[rk] * dt + sig[rk] * dW
            # ranked motions: B*_r picks the increment of the particle holding rank r
            Bs = Bs + np.take_along_axis(dW, order, 1)
            bad = ~np.all(np.isfinite(y), axis=1)
            if bad.any():
                failed |= bad
                y[bad] = 0.0
            order = np.argsort(y, axis=1, kind="stable")
            step += 1
            if oi < n_obs and obs[oi] == step:
                Yr[:, oi] = np.take_along_axis(y, order, 1)
                rank[:, oi] = order
                Br[:, oi] = Bs
                oi += 1
    return {"ordered": Yr, "ranking": rank, "brownian": Br, "failed": failed}


def simulate_rank_based(rp, y0, cfg, route="particles"):
    """Rank-based system from sorted y0.

    route="particles": unordered particles, Euler step with rank-dependent
    coefficients frozen at step start, re-ranked every step (symmetric
    collisions only). route="gap": the induced gap RBM via simulate_rbm, with
    the bottom particle rebuilt from its own driving motion.

    Returns (ordered positions (n_paths, n_obs, d+1), list of RankSystemState
    for path 0, gap TrajectoryBundle).
    """
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (rp.d + 1,):
        raise SimulationError(f"y0 must have length {rp.d + 1}")
    if np.any(np.diff(y0) < 0):
        raise SimulationError("y0 must be sorted (nondecreasing)")
    params = rp.to_rbm()
    z0 = np.diff(y0)
    if route == "gap":
        gb = simulate_rbm(params, z0, cfg)
        q = 1 - rp.p
        bottom = (y0[0] + rp.delta[0] * gb.t[None, :] + rp.sigma[0] * gb.brownian[..., 0]
                  - q * gb.loctime[..., 0])
        ordered = bottom[..., None] + np.concatenate(
            [np.zeros(bottom.shape + (1,)), np.cumsum(gb.state, axis=-1)], axis=-1)
        states = [RankSystemState(ordered[0, j], np.arange(rp.d + 1), gb.state[0, j])
                  for j in range(gb.t.size)]
        return ordered, states, gb
    if route != "particles":
        raise ValueError(f"unknown route {route!r}")
    if rp.p != 0.5:
        raise SimulationError("the particle route has symmetric collisions; use route='gap'")
    payload = {"cfg": cfg, "delta": np.asarray(rp.delta, dtype=float),
               "sigma": np.asarray(rp.sigma, dtype=float), "y0": y0}
    out = _merge(rng.run_blocks(_rank_block, cfg.n_paths, cfg.block, cfg.workers, payload))
    ordered = out["ordered"]
    ordered[out["failed"]] = np.nan
    gaps = np.diff(ordered, axis=-1)
    t = cfg.obs_times()
    drv = out["brownian"] @ params.D.T + t[None, :, None] * params.mu
    x0 = np.broadcast_to(z0, (cfg.n_paths, rp.d)).copy()
    R = np.array(params.refl.R)
    rhs = gaps - x0[:, None, :] - drv
    L = np.linalg.solve(R, rhs.reshape(-1, rp.d).T).T.reshape(rhs.shape)
    gb = TrajectoryBundle(t=t, state=gaps, loctime=L, driver=drv, brownian=out["brownian"],
                          x0=x0, R=R, residual=np.zeros(cfg.n_paths), failed=out["failed"],
                          min_dL=float(np.diff(L, axis=1).min(initial=0.0)),
                          meta={"model": "rank_particles", "loctime": "extracted"})
    rk = out["ranking"][0]
    states = []
    for j in range(t.size):
        pos = np.empty(rp.d + 1)
        pos[rk[j]] = ordered[0, j]
        states.append(RankSystemState(pos, rk[j], gaps[0, j]))
    return ordered, states, gb


def asym_atlas_params(p, d):
    """Gap RBM of the asymmetric Atlas model with d gaps."""
    if not 0 < p < 1:
        raise ValueError(f"p must lie in (0,1), got {p}")
    return RankParams.standard_atlas(d, p).to_rbm()


def simulate_asym_atlas(p, d, z0, cfg):
    return simulate_rbm(asym_atlas_params(p, d), z0, cfg)


def g_atlas_rank_params(g):
    return RankParams(tuple(float(v) for v in g), (1.0,) * len(g), 0.5)


def simulate_truncated_g_atlas(g, z0, cfg, route="particles"):
    """d + 1 ranked unit-variance particles with rank drifts g, symmetric collisions."""
    g = np.asarray(g, dtype=float)
    z0 = np.asarray(z0, dtype=float)
    if g.size != z0.size + 1:
        raise SimulationError(f"g has length {g.size}, expected {z0.size + 1}")
    if not np.isfinite(np.sum(g * g)):
        raise SimulationError("drift prefix is not square summable")
    y0 = np.concatenate([[0.0], np.cumsum(z0)])
    return simulate_rank_based(g_atlas_rank_params(g), y0, cfg, route=route)[2]


def moment_table(bundle):
    """Rows (t, coord, mean, var, n) over non-failed paths."""
    ok = ~bundle.failed
    X = bundle.state[ok]
    n = X.shape[0]
    mean = X.mean(axis=0)
    var = X.var(axis=0, ddof=1) if n > 1 else np.zeros_like(mean)
    rows = []
    for j, t in enumerate(bundle.t):
        for i in range(bundle.d):
            rows.append({"t": float(t), "coord": i + 1, "mean": float(mean[j, i]),
                         "var": float(var[j, i]), "n": n})
    return rows
