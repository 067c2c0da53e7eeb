"""Command-line runner: rbmkit {validate,rates,simulate,couple,stattest,doa}.

Every subcommand takes its options as flags or from ``--config FILE``
(flat ``key = value`` lines, a JSON object, or a manifest from an earlier
run); flags win over the file, the file wins over defaults. Each run writes
its tables to ``--out`` plus ``manifest.json`` and a ``<subcommand>.log``.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__, io
from .reflection import (
    RankParams, RbmParams, ReflectionError, ReflectionSpec, check_bc, check_df,
    check_harrison_reiman, generator,
)
from .reflection import bounds as B

log = logging.getLogger("rbmkit")

EXIT_OK, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_USAGE = 0, 1, 2, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- value parsers --------------------------------------------------------------

def _floats(s):
    if isinstance(s, (list, tuple)):
        return [float(v) for v in s]
    s = str(s).strip()
    if not s:
        return []
    return [float(Fraction(v.strip())) for v in s.split(",")]


def _ints(s):
    if isinstance(s, (list, tuple)):
        return [int(v) for v in s]
    return [int(v) for v in str(s).split(",") if v.strip()]


def _grid(s):
    """'a,b,c' or 'lin:a:b:n' or 'geom:a:b:n'."""
    s = str(s)
    if s.startswith(("lin:", "geom:")):
        kind, a, b, n = s.split(":")
        f = np.linspace if kind == "lin" else np.geomspace
        return [float(v) for v in f(float(a), float(b), int(n))]
    return _floats(s)


def _bool(s):
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off", ""):
        return False
    raise UsageError(f"not a boolean: {s!r}")


def _kv(items):
    out = {}
    for it in items or []:
        for part in str(it).split(","):
            if not part.strip():
                continue
            if "=" not in part:
                raise UsageError(f"expected key=value, got {part!r}")
            k, v = part.split("=", 1)
            out[k.strip()] = float(v)
    return out


# -- option tables ----------------------------------------------------------------
# name: (type, default, help). Names double as config-file keys.

GLOBAL = {
    "seed": (int, 0, "master seed"),
    "workers": (int, 1, "worker processes (never changes results)"),
    "out": (str, ".", "output directory"),
    "format": (str, "csv", "csv or json"),
}

MODEL = {
    "gen": (str, "atlas", "atlas | asym_atlas:p | identity | custom:FILE"),
    "d": (int, 3, "dimension (number of gaps for rank models)"),
    "mu": (str, "", "drift vector for identity/custom (default -1 each)"),
    "sigma": (str, "", "diagonal volatilities for identity/custom (default 1 each)"),
}

SIM = {
    "dt": (float, 1e-2, "step size"),
    "T": (float, 10.0, "horizon"),
    "paths": (int, 1000, "number of paths"),
    "scheme": (str, "bridge", "bridge or projection"),
    "record_every": (int, 0, "steps between stored points (0: 16 points)"),
    "block": (int, 4096, "paths per work unit"),
}

COMMANDS = {
    "validate": {**MODEL, "bc": (_bool, False, "also check the BC conditions"),
                 "df": (_bool, False, "also check the DF conditions"),
                 "k0": (int, 2, "DF start index"),
                 "cap": (int, 0, "power cap for transience (0: 10 d)")},
    "rates": {"preset": (str, "atlas", "atlas | bc | model"), **MODEL,
              "dlist": (str, "2,4,8,16", "dimensions for the scaling study"),
              "t": (str, "geom:1:1e6:7", "time grid"),
              "x": (str, "", "start (default 0)"),
              "free": (str, "", "free constants, key=value,...")},
    "simulate": {**MODEL, **SIM, "x0": (str, "", "start (default 0)"),
                 "paths_csv": (int, 0, "also write this many per-path CSVs")},
    "couple": {**MODEL, **SIM, "xA": (str, "", "start of copy A (default 0)"),
               "xB": (str, "e1", "start of copy B: e<i> or a vector"),
               "beta": (float, 1.0, "weight of the weighted L1 distance"),
               "epochs": (_bool, False, "also count contraction epochs"),
               "mode": (str, "sync", "sync or mirror"),
               "i": (int, 0, "mirror: last mirrored ranked motion"),
               "yA": (str, "", "mirror: sorted start of copy A"),
               "yB": (str, "", "mirror: sorted start of copy B")},
    "stattest": {**MODEL, **SIM, "x0": (str, "", "start (default 0)"),
                 "ks_tol": (float, 0.03, "KS pass threshold")},
    "doa": {"scenario": (str, "star_counterexample", "star_counterexample | nu_t"),
            "dmax": (int, 10**6, "largest d for the checkers"),
            "replicates": (int, 8, "replicates per checker"),
            "initial.kind": (str, "product-exp", "initial gap kind for nu_t"),
            "initial.params": (str, "{\"rates\": 1}", "JSON parameters of the initial law"),
            "target": (str, "pi_a:0", "pi_a:a | finite_atlas"),
            "d": (int, 0, "truncation (0: 4 k_watch^2)"),
            "k_watch": (int, 3, "watched gaps"),
            "horizon": (float, 10.0, "time horizon"),
            "dt": (float, 1e-2, "step size"),
            "m_obs": (int, 64, "observation times"),
            "paths": (int, 2000, "paths")},
}


def _parser():
    p = _Parser(prog="rbmkit", description="Reflected Brownian motion experiments.")
    p.add_argument("--version", action="version", version=f"rbmkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, opts in COMMANDS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="config file (flat keys, JSON or manifest)")
        sp.add_argument("--log-level", default="INFO")
        for key, (typ, default, hlp) in {**GLOBAL, **opts}.items():
            flags = sorted({"--" + key.replace("_", "-"), "--" + key})
            sp.add_argument(*flags, dest=key, type=str, default=argparse.SUPPRESS,
                            help=f"{hlp} (default {default!r})")
    return p


def resolve(command, explicit, config_path=None):
    """Merge defaults < config file < explicit flags and convert types."""
    table = {**GLOBAL, **COMMANDS[command]}
    merged = {k: v[1] for k, v in table.items()}
    if config_path:
        sub, conf = io.load_config(config_path)
        if sub is not None and sub != command:
            raise UsageError(f"config is a manifest of '{sub}', not '{command}'")
        unknown = sorted(set(conf) - set(table))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        merged.update(conf)
    merged.update(explicit)
    out = {}
    for k, (typ, _, _) in table.items():
        v = merged[k]
        try:
            out[k] = v if typ in (int, float, str) and type(v) is typ else typ(v)
        except (TypeError, ValueError, UsageError):
            raise UsageError(f"bad value for {k}: {v!r}") from None
    if out["format"] not in ("csv", "json"):
        raise UsageError("format must be csv or json")
    if out["workers"] < 1:
        raise UsageError("workers must be >= 1")
    return out


# -- model construction -------------------------------------------------------------

def build_model(cfg):
    """(RbmParams, RankParams or None) for the gen/d/mu/sigma keys."""
    gen, d = cfg["gen"], cfg["d"]
    name, _, arg = gen.partition(":")
    if name == "atlas":
        rp = RankParams.standard_atlas(d)
        return rp.to_rbm(), rp
    if name == "asym_atlas":
        p = float(Fraction(arg)) if arg else 0.5
        rp = RankParams.standard_atlas(d, p)
        return rp.to_rbm(), rp
    refl = generator(gen, d)
    d = refl.d
    mu = _floats(cfg["mu"]) or [-1.0] * d
    sig = _floats(cfg["sigma"]) or [1.0] * d
    if len(mu) != d or len(sig) != d:
        raise UsageError(f"mu and sigma need {d} entries")
    return RbmParams(mu, np.diag(sig), refl), None


def _vec(s, d, default=0.0):
    s = str(s).strip()
    if not s:
        return np.full(d, default)
    if s.startswith("e") and s[1:].isdigit():
        v = np.zeros(d)
        v[int(s[1:]) - 1] = 1.0
        return v
    v = np.array(_floats(s))
    if v.size != d:
        raise UsageError(f"vector {s!r} needs {d} entries")
    return v


def _simcfg(cfg, record_points=16):
    from .dynamics import SimConfig
    n = int(round(cfg["T"] / cfg["dt"]))
    re = cfg["record_every"] or max(1, n // record_points)
    return SimConfig(dt=cfg["dt"], T=cfg["T"], n_paths=cfg["paths"], seed=cfg["seed"],
                     scheme=cfg["scheme"], record_every=re, block=cfg["block"],
                     workers=cfg["workers"])


# -- subcommands ------------------------------------------------------------------------

def cmd_validate(cfg, out):
    gen, d = cfg["gen"], cfg["d"]
    name, _, arg = gen.partition(":")
    if name == "custom":
        P = io.read_matrix_csv(arg)
    else:
        P = np.array(generator(gen, d).P)
    rep = check_harrison_reiman(P, power_cap=cfg["cap"] or None)
    rows = [{"check": "HR", "key": k, "value": v} for k, v in rep.as_record().items()]
    status = EXIT_OK if rep.valid else (EXIT_INCONCLUSIVE if rep.substochastic and rep.transient is None
                                        else EXIT_FAIL)
    log.info("HR: %s", "pass" if rep.valid else rep.reason)
    if rep.valid and (cfg["bc"] or cfg["df"]):
        if name == "custom":
            refl = ReflectionSpec(P, name=gen)
            dd = refl.d
            params = RbmParams(_floats(cfg["mu"]) or [-1.0] * dd,
                               np.diag(_floats(cfg["sigma"]) or [1.0] * dd), refl)
        else:
            params, _ = build_model(cfg)
        if cfg["bc"]:
            bc = check_bc(params)
            rows += [{"check": "BC", "key": k, "value": v} for k, v in bc.as_record().items()]
            log.info("BC: %s (kappa %.4g, beta %.4g)", bc.holds, bc.kappa, bc.beta)
            if not bc.holds:
                status = EXIT_FAIL
        if cfg["df"]:
            df = check_df(params, cfg["k0"])
            rows += [{"check": "DF", "key": k, "value": v} for k, v in df.as_record().items()]
            log.info("DF: %s (C %.4g, alpha %.4g)", df.holds, df.C, df.alpha)
            if not df.holds:
                status = EXIT_FAIL
    f = io.write_rows(rows, out / "validate", cfg["format"])
    for r in rows:
        print(f"{r['check']}.{r['key']} = {r['value']}")
    return status, [f]


def _loglog(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def rates_study(preset, dlist, free=None, x=None):
    """t_rel bounds across dimensions for a preset.

    atlas: standard Atlas gaps, rank-based bound (a*, sigma) and the general
    bound. bc: asymmetric Atlas p = 3/4 under the BC bound. Returns rows and
    the log-log slopes of the preset's t_rel column, raw and after dividing
    by (log d)^2.
    """
    rows = []
    for d in dlist:
        z = np.zeros(d) if x is None else np.asarray(x, dtype=float)
        row = {"d": d, "d6log2": d**6 * math.log(d) ** 2 if d > 1 else 0.0, "log2": math.log(d) ** 2}
        if preset == "atlas":
            rp = RankParams.standard_atlas(d)
            astar, sig = float(rp.astar()), rp.sigma_bound()
            row.update(astar=astar, sigma=sig, trel=B.rank_trel_bound(z, d, astar, sig, free))
        elif preset == "bc":
            row.update(trel=B.bc_trel_bound(z, d, free))
        else:
            raise UsageError(f"unknown preset {preset!r}")
        rows.append(row)
    ds = np.array([r["d"] for r in rows], dtype=float)
    tr = np.array([r["trel"] for r in rows])
    slope = _loglog(ds, tr) if ds.size > 1 else math.nan
    norm = _loglog(ds, tr / np.log(ds) ** 2) if ds.size > 1 and ds.min() > 1 else math.nan
    return rows, slope, norm


def cmd_rates(cfg, out):
    free = _kv([cfg["free"]]) or None
    tgrid = _grid(cfg["t"])
    files = []
    preset = cfg["preset"]
    if preset in ("atlas", "bc"):
        dlist = _ints(cfg["dlist"])
        try:
            rows, slope, norm = rates_study(preset, dlist, free)
        except B.BoundError as e:
            raise UsageError(str(e)) from None
        for r in rows:
            d = r["d"]
            z = np.zeros(d)
            if preset == "atlas":
                r["bound_at_t"] = ";".join(repr(_below(B.rank_bound, t, z, d, r["astar"], r["sigma"], free))
                                           for t in tgrid)
            else:
                r["bound_at_t"] = ";".join(repr(_below(B.bc_bound, t, z, d, free)) for t in tgrid)
        files.append(io.write_rows(rows, out / f"rates_{preset}", cfg["format"]))
        summ = [{"preset": preset, "slope": slope, "slope_over_log2": norm, "dlist": cfg["dlist"],
                 **{f"free.{k}": v for k, v in (free or {}).items()}}]
        files.append(io.write_rows(summ, out / f"rates_{preset}_summary", cfg["format"]))
        print(f"{preset}: log-log slope of t_rel bound {slope:.4f}; after (log d)^2 {norm:.4f}")
        return EXIT_OK, files
    params, rp = build_model(cfg)
    x = _vec(cfg["x"], params.d)
    c = B.rate_constants(params, x, kappa=(free or {}).get("D2", 1.0), rank=rp)
    rows = []
    for t in tgrid:
        row = {"t": t, "wasthm": _below(B.wasthm_bound, t, c, _subset(free, B.WAS_FREE)),
               "bc": _below(B.bc_bound, t, x, params.d, _subset(free, B.BC_FREE))}
        if rp is not None:
            row["rank"] = _below(B.rank_bound, t, x, params.d, c.astar, c.sigmaBound,
                                _subset(free, B.RANK_FREE))
        rows.append(row)
    files.append(io.write_rows(rows, out / "rates_bounds", cfg["format"]))
    trel = {**c.as_record(), "trel_wasthm": B.trel_bound(c, _subset(free, B.WAS_FREE)),
            "trel_bc": B.bc_trel_bound(x, params.d, _subset(free, B.BC_FREE))}
    if rp is not None:
        trel["trel_rank"] = B.rank_trel_bound(x, params.d, c.astar, c.sigmaBound,
                                              _subset(free, B.RANK_FREE))
    files.append(io.write_rows([trel], out / "rates_trel", cfg["format"]))
    for k, v in trel.items():
        print(f"{k} = {v}")
    return EXIT_OK, files


def _below(f, *args):
    """Bound value, or nan where the bound is not asserted (t below its threshold)."""
    try:
        return f(*args)
    except B.BoundError as e:
        if "not asserted" in str(e):
            return math.nan
        raise UsageError(str(e)) from None


def _subset(free, table):
    if not free:
        return None
    return {k: v for k, v in free.items() if k in table} or None


def cmd_simulate(cfg, out):
    from .dynamics import moment_table, simulate_rbm
    from .skorohod import DiscretePath, write_path_csv
    params, _ = build_model(cfg)
    sc = _simcfg(cfg)
    t0 = time.perf_counter()
    b = simulate_rbm(params, _vec(cfg["x0"], params.d), sc)
    log.info("simulated %d paths x %d steps in %.2fs", sc.n_paths, sc.n_steps, time.perf_counter() - t0)
    files = [io.write_rows(moment_table(b), out / "moments", cfg["format"])]
    for i in range(min(cfg["paths_csv"], b.n_paths)):
        f = out / f"path_{i}.csv"
        write_path_csv(DiscretePath(b.t, b.state[i]), f)
        files.append(f)
    diag = [{"identity_error": b.identity_error(), "min_dL": b.min_dL,
             "max_residual": float(b.residual.max()), "failed": int(b.failed.sum())}]
    files.append(io.write_rows(diag, out / "diagnostics", cfg["format"]))
    status = EXIT_OK if not b.failed.any() else EXIT_FAIL
    return status, files


def cmd_couple(cfg, out):
    from . import coupling as C
    sc = _simcfg(cfg)
    files = []
    if cfg["mode"] == "mirror":
        _, rp = build_model(cfg)
        if rp is None:
            raise UsageError("mirror coupling needs a rank model (atlas or asym_atlas)")
        yA = _vec(cfg["yA"], rp.d + 1) if cfg["yA"] else np.arange(rp.d + 1, dtype=float)
        yB = _vec(cfg["yB"], rp.d + 1) if cfg["yB"] else yA
        pair = C.mirror_pair(rp, cfg["i"], yA, yB, sc)
        p, se = C.coupling_probability(pair)
        tau = pair.coupling_time
        summary = [{"coupling_probability": p, "se": se,
                    "coupled_fraction": float(np.isfinite(tau).mean()),
                    "median_tau": float(np.median(tau))}]
        files.append(io.write_rows(summary, out / "mirror_summary", cfg["format"]))
        ds = C.distance_series(pair, cfg["beta"])
    elif cfg["mode"] == "sync":
        params, _ = build_model(cfg)
        xA, xB = _vec(cfg["xA"], params.d), _vec(cfg["xB"], params.d)
        if cfg["epochs"]:
            pair = C.epoch_pair(params, xA, xB, sc)
            t, counts = C.contraction_event_counter(pair)
            f = out / "epochs.csv"
            C.write_epochs_csv(t, counts, f)
            files.append(f)
        else:
            pair = C.synchronous_pair(params, xA, xB, sc)
        ds = C.distance_series(pair, cfg["beta"])
    else:
        raise UsageError("mode must be sync or mirror")
    m = ds.mean()
    rows = [{"t": float(t), **{k: float(m[k][j]) for k in ("l1", "wl1", "u", "ubound")}}
            for j, t in enumerate(ds.t)]
    files.append(io.write_rows(rows, out / "distance", cfg["format"]))
    print(f"mean l1: {m['l1'][0]:.6g} at t=0 -> {m['l1'][-1]:.6g} at t={ds.t[-1]:g}")
    return EXIT_OK, files


def stationary_law(params, rp):
    from .stationary import NotApplicable, finite_atlas_stationary, gap_rbm_stationary
    if rp is not None and rp.p == 0.5 and all(v == 0 for v in rp.delta[1:]) and rp.delta[0] == 1:
        return finite_atlas_stationary(rp.d)
    law = gap_rbm_stationary(params)
    if isinstance(law, NotApplicable):
        raise UsageError(f"no product-form stationary law: {law.reason}")
    return law


def cmd_stattest(cfg, out):
    from .dynamics import simulate_rbm
    from .stationary import fit_report
    params, rp = build_model(cfg)
    law = stationary_law(params, rp)
    sc = _simcfg({**cfg, "record_every": int(round(cfg["T"] / cfg["dt"]))})
    t0 = time.perf_counter()
    b = simulate_rbm(params, _vec(cfg["x0"], params.d), sc)
    log.info("simulated %d paths in %.2fs", sc.n_paths, time.perf_counter() - t0)
    rows = fit_report(law, b.final)
    for r in rows:
        r["rate"] = float(law.rates[r["coord"] - 1])
        r["pass"] = bool(r["ks"] < cfg["ks_tol"])
        print(f"gap {r['coord']}: rate {r['rate']:.6g} KS {r['ks']:.5f} p {r['pvalue']:.3g} "
              f"{'pass' if r['pass'] else 'FAIL'}")
    f = io.write_rows(rows, out / "stattest", cfg["format"])
    return (EXIT_OK if all(r["pass"] for r in rows) else EXIT_FAIL), [f]


def _target(spec, d):
    from .stationary import finite_atlas_stationary, pi_a
    name, _, arg = spec.partition(":")
    if name == "pi_a":
        return pi_a(float(Fraction(arg or "0")), d)
    if name == "finite_atlas":
        return finite_atlas_stationary(d)
    raise UsageError(f"unknown target {spec!r}")


def cmd_doa(cfg, out):
    from . import doa
    from .dynamics import SimConfig
    from .stationary import ProductExpLaw
    files = []
    if cfg["scenario"] == "star_counterexample":
        grid = doa.default_grid(cfg["dmax"])
        rep = doa.star_counterexample(grid, cfg["replicates"], cfg["seed"])
        rows = [{"condition": k, "slope": v.slope, "tail_min": v.tail_min, "tail_max": v.tail_max,
                 "verdict": v.verdict} for k, v in rep.items()]
        for r in rows:
            print(f"({r['condition']}): {r['verdict']} (tail slope {r['slope']:.4f})")
        files.append(io.write_rows(rows, out / "doa_verdicts", cfg["format"]))
        return EXIT_OK, files
    if cfg["scenario"] != "nu_t":
        raise UsageError(f"unknown scenario {cfg['scenario']!r}")
    k = cfg["k_watch"]
    d = cfg["d"] or doa.default_truncation(k)
    try:
        params = json.loads(cfg["initial.params"])
    except json.JSONDecodeError as e:
        raise UsageError(f"initial.params is not JSON: {e.msg}") from None
    kind = cfg["initial.kind"]
    if kind in ("product-exp", "perturbed-stationary"):
        r = params.pop("rates", 1)
        params["law"] = _target(r, d) if isinstance(r, str) else ProductExpLaw(
            np.broadcast_to(np.asarray(r, dtype=float), (d,)).copy())
    elif kind == "deterministic-sequence" and params.get("values") == "cube":
        params["values"] = doa.cube_sequence
    init = doa.InitialGapSpec(kind, params)
    target = _target(cfg["target"], d)
    sc = SimConfig(dt=cfg["dt"], T=cfg["horizon"], n_paths=cfg["paths"], seed=cfg["seed"],
                   workers=cfg["workers"])
    est = doa.run_doa_experiment(init, target, d, k, sc, m_obs=cfg["m_obs"])
    files.append(io.write_rows(est.rows(), out / "nu_t", cfg["format"]))
    last = est.w1[-1]
    print("final W1 per watched gap: " + ", ".join(f"{v:.4g}" for v in last)
          + " (null q95: " + ", ".join(f"{v:.4g}" for v in est.null_q95) + ")")
    return EXIT_OK, files


HANDLERS = {"validate": cmd_validate, "rates": cmd_rates, "simulate": cmd_simulate,
            "couple": cmd_couple, "stattest": cmd_stattest, "doa": cmd_doa}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    ns = _parser().parse_args(argv)
    command = ns.command
    explicit = {k: v for k, v in vars(ns).items() if k not in ("command", "config", "log_level")}
    try:
        cfg = resolve(command, explicit, ns.config)
    except (UsageError, io.InputError) as e:
        print(f"rbmkit: {e}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / f"{command}.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("rbmkit")
    root.setLevel(ns.log_level.upper())
    root.addHandler(handler)
    t0 = time.perf_counter()
    try:
        log.info("rbmkit %s %s config=%s", __version__, command, json.dumps(cfg, sort_keys=True))
        status, files = HANDLERS[command](cfg, out)
    except UsageError as e:
        print(f"rbmkit: {e}", file=sys.stderr)
        log.error("usage: %s", e)
        return EXIT_USAGE
    except (io.InputError, ReflectionError, ValueError) as e:
        print(f"rbmkit: {e}", file=sys.stderr)
        log.error("failed: %s", e)
        return EXIT_FAIL
    finally:
        log.info("elapsed %.3fs", time.perf_counter() - t0)
        root.removeHandler(handler)
        handler.close()
    io.write_manifest(io.manifest(command, cfg, files, {"exit": status}), out)
    return status


if __name__ == "__main__":
    sys.exit(main())
