"""Command-line entry point: ``lorentz-lab <command> [options]``.

Every command needs a seed (``--seed`` or ``seed = ...`` in ``--config``).
Flags override config values. With ``--out``, results go to that file and a
manifest ``<out>.manifest.json`` (resolved spec, tool version, seed) is
written next to it.

Exit codes: 0 success, 1 failed check, 2 bad input, 3 geometry validation
failure, 4 too many singular trajectories.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from typing import Any, Optional

import numpy as np

from . import __version__
from .analytics import (clt_diagnostics, collect, msd_curve, return_statistics, scaled_distribution,
                        schmidt_check, table_text)
from .ensemble import Environment, hex_disc_law
from .errors import ExcessiveSingularity, LorentzLabError, MarginViolation, Overlap, SchemaError
from .serialize import env_from_kv, law_from_kv, parse_kv
from .skewprod import SkewState, cocycle, equivalence_check, sample_mu1, trace_records
from .toys import (RotatorLaw, ex3_trial_inputs, ex3_walks_batch, exact_distribution, ex3_sweep, frozen_env,
                   wilson_interval)

EXIT_FAIL, EXIT_SCHEMA, EXIT_GEOMETRY, EXIT_SINGULAR = 1, 2, 3, 4
EXPERIMENT_KEYS = {"seed", "n", "trials", "out", "format", "horizons", "rho_grid", "pi_l", "pi_b", "pi_r",
                   "pi_f", "max_steps", "system", "seeds", "exits", "times", "c", "pi_b_grid", "exact",
                   "require_finite", "samples"}
SWEEP_DEFAULT = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90]


class HorizonUndecided(LorentzLabError):
    pass


def _floats(text: str) -> list[float]:
    return [float(x) for x in str(text).replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in str(text).replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key-value config file (environment law and experiment keys)")
    common.add_argument("--seed", type=int)
    common.add_argument("--n", type=int, help="steps (cell exits) per trajectory")
    common.add_argument("--trials", type=int)
    common.add_argument("--out", help="output file; a manifest is written next to it")
    common.add_argument("--format", choices=("csv", "jsonl"))

    p = argparse.ArgumentParser(prog="lorentz-lab", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bounds-check", parents=[common], help="certify curvature, free-path and horizon bounds")
    b.add_argument("--samples", type=int, help="sampled free paths for the tau_max estimate")
    b.add_argument("--require-finite", action="store_true", help="exit 3 unless the horizon is certified finite")

    s = sub.add_parser("simulate", parents=[common], help="cocycle traces of the skew product")
    s.add_argument("--horizons", help="emit return statistics at these N instead of trace records")

    e = sub.add_parser("equivalence-test", parents=[common], help="skew product vs full-plane billiard")
    e.add_argument("--seeds", type=int)
    e.add_argument("--exits", type=int)

    t = sub.add_parser("toy", parents=[common], help="Examples 1-3")
    t.add_argument("example", choices=("ex1", "ex2", "ex3"))
    t.add_argument("--exact", action="store_true", help="exact distribution of S_n (ex1, ex2)")
    t.add_argument("--horizons")
    for k in "lbrf":
        t.add_argument(f"--pi-{k}", type=float)
    t.add_argument("--max-steps", type=int)

    w = sub.add_parser("sweep", parents=[common], help="rotator walk: recurrent fraction over a pi_B grid")
    w.add_argument("--pi-b-grid")
    w.add_argument("--max-steps", type=int)

    for name, helptext in (("schmidt", "small-ball screen"), ("clt", "moments and KS distances"),
                           ("msd", "mean squared displacement")):
        q = sub.add_parser(name, parents=[common], help=helptext)
        q.add_argument("--system", choices=("lorentz", "ex1", "ex2", "ex3"))
        if name == "schmidt":
            q.add_argument("--times", help="times n_k (default 64,128,256)")
            q.add_argument("--rho-grid")
            q.add_argument("--c", type=float)
    return p


def resolve(args: argparse.Namespace) -> dict[str, Any]:
    """Merge config file and flags into one spec dict (flags win)."""
    spec: dict[str, Any] = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                spec.update(parse_kv(fh.read()))
        except OSError as exc:
            raise SchemaError(f"cannot read config: {exc}") from exc
    for k, v in vars(args).items():
        if k in ("config", "command") or v is None or v is False:
            continue
        spec[k] = v
    spec["command"] = args.command
    if "seed" not in spec or not isinstance(spec["seed"], int) or isinstance(spec["seed"], bool):
        raise SchemaError("a seed is required (--seed or 'seed = ...' in the config)")
    for k in ("n", "trials", "seeds", "exits", "max_steps", "samples"):
        if k in spec and (not isinstance(spec[k], int) or spec[k] < (0 if k == "n" else 1)):
            raise SchemaError(f"{k} must be a positive integer")
    return spec


def _law(spec):
    return law_from_kv(spec) if "law" in spec else hex_disc_law()


def _env_keys(spec):
    from .serialize import ENV_KEYS, LAW_KEYS
    known = ENV_KEYS | {k for ks in LAW_KEYS.values() for k in ks}
    return {k: v for k, v in spec.items() if k in known}


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("LORENTZ_LAB_THREADS", "1")))
    except ValueError:
        return 1


def _pmap(fn, items):
    items = list(items)
    w = min(_workers(), len(items))
    if w <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=w) as pool:
        return list(pool.map(fn, items))


def _rotator(spec) -> RotatorLaw:
    given = {k: float(spec[f"pi_{k}"]) for k in "lbrf" if f"pi_{k}" in spec}
    rest = [k for k in "lbrf" if k not in given]
    share = (1.0 - sum(given.values())) / len(rest) if rest else 0.0
    if rest and share < -1e-12:
        raise SchemaError("rotator probabilities exceed 1")
    p = {**{k: max(share, 0.0) for k in rest}, **given}
    try:
        return RotatorLaw(p["l"], p["b"], p["r"], p["f"])
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc


# ---------------------------------------------------------------- commands


def cmd_bounds_check(spec):
    law = _law(spec)
    cert = law.certify(n_samples=int(spec.get("samples", 20000)), seed=spec["seed"])
    d = cert.as_dict()
    d["tau_bound"] = getattr(law, "tau_bound", None)
    d["tau_within_bound"] = d["tau_bound"] is None or cert.tau_max <= d["tau_bound"]
    rows = [d]
    if spec.get("require_finite") and cert.horizon != "finite":
        raise HorizonUndecided(f"horizon is {cert.horizon}, finite required")
    return rows, "lorentz-lab/bounds/1", {}


def _lorentz_trace(args):
    law, seed, t, n = args
    from .hashing import derive_seed
    env = Environment(law, derive_seed(seed, t))
    x = sample_mu1(law, np.random.default_rng([seed, t]))
    tr = cocycle(SkewState(x, env), n)
    return [{"trial": t, **r} for r in trace_records(tr)], tr.truncated


def cmd_simulate(spec):
    n, trials = int(spec.get("n", 100)), int(spec.get("trials", 1))
    law = _law(spec)
    if "horizons" in spec:
        hs = _ints(spec["horizons"])
        ens = collect("lorentz", max(max(hs), n), trials, spec["seed"], law=law)
        return return_statistics(ens, hs).rows(), "lorentz-lab/returns/1", {"singular": ens.meta["singular"]}
    out = _pmap(_lorentz_trace, [(law, spec["seed"], t, n) for t in range(trials)])
    rows = [r for recs, _ in out for r in recs]
    truncated = sum(1 for _, tr in out if tr)
    if truncated / trials > 0.01:
        raise ExcessiveSingularity(f"{truncated} of {trials} traces truncated")
    return rows, "lorentz-lab/trace/1", {"truncated": truncated}


def _equiv(args):
    law, seed, exits = args
    env = Environment(law, seed)
    start = sample_mu1(law, np.random.default_rng(seed))
    return equivalence_check(env, start, exits)


def cmd_equivalence(spec):
    law = _law(spec)
    seeds = int(spec.get("seeds", 100))
    exits = int(spec.get("exits", 1000))
    base = spec["seed"]
    res = _pmap(_equiv, [(law, base + k, exits) for k in range(seeds)])
    rows = [{"seed": base + k, "steps": s, "mismatches": m, "max_error": e, "truncated": t, "free_run_agreement": a}
            for k, (s, m, e, t, a) in enumerate(res)]
    ok = all(r["mismatches"] == 0 and r["max_error"] <= 1e-9 for r in rows)
    summary = {"verdict": "MATCH" if ok else "MISMATCH", "seeds": seeds, "exits": exits,
               "max_error": max(r["max_error"] for r in rows)}
    return rows, "lorentz-lab/equivalence/1", summary


def cmd_toy(spec):
    ex = spec["example"]
    seed = spec["seed"]
    if ex == "ex3":
        law = _rotator(spec)
        trials = int(spec.get("trials", 1000))
        seeds, dirs = ex3_trial_inputs(seed, trials)
        period, first = ex3_walks_batch(seeds, law, dirs, int(spec.get("max_steps", 100_000)))
        k = int((period > 0).sum())
        lo, hi = wilson_interval(k, trials)
        rows = [{"pi_l": law.pi_l, "pi_b": law.pi_b, "pi_r": law.pi_r, "pi_f": law.pi_f, "trials": trials,
                 "recurrent": k, "fraction": k / trials, "ci_lo": lo, "ci_hi": hi}]
        return rows, "lorentz-lab/ex3/1", {"recurrent_fraction": k / trials}
    example = int(ex[-1])
    n = int(spec.get("n", 4))
    if spec.get("exact"):
        labels = (1, 2, 3) if example == 1 else (1, 2)
        dist = exact_distribution(example, n, frozen_env(seed, labels))
        rows = [{"x": c[0], "y": c[1], "p": str(Fraction(p))} for c, p in sorted(dist.items())]
        return rows, f"lorentz-lab/{ex}-exact/1", {}
    hs = _ints(spec.get("horizons", str(n)))
    ens = collect(ex, max(max(hs), n), int(spec.get("trials", 1000)), seed)
    return return_statistics(ens, hs).rows(), "lorentz-lab/returns/1", {}


def cmd_sweep(spec):
    grid = _floats(spec["pi_b_grid"]) if "pi_b_grid" in spec else SWEEP_DEFAULT
    rows = ex3_sweep([RotatorLaw.sweep_point(p) for p in grid], int(spec.get("trials", 1000)),
                     int(spec.get("max_steps", 100_000)), spec["seed"])
    out = []
    for r in rows:
        lo, hi = r.wilson
        out.append({"pi_l": r.pi_l, "pi_b": r.pi_b, "pi_r": r.pi_r, "pi_f": r.pi_f, "trials": r.trials,
                    "recurrent": r.recurrent, "fraction": r.fraction, "ci_lo": lo, "ci_hi": hi})
    return out, "lorentz-lab/sweep/1", {}


def _ensemble(spec, n, default_trials):
    system = spec.get("system", "ex2")
    law = _law(spec) if system == "lorentz" else None
    return collect(system, n, int(spec.get("trials", default_trials)), spec["seed"], law=law,
                   rotator=_rotator(spec) if system == "ex3" else None)


def cmd_schmidt(spec):
    times = _ints(spec.get("times", "64 128 256"))
    grid = _floats(spec["rho_grid"]) if "rho_grid" in spec else list(np.linspace(0.1, 0.5, 9))
    ens = _ensemble(spec, max(times), 100_000)
    dists = [scaled_distribution(ens, n, 2, grid) for n in times]
    v = schmidt_check(dists, spec.get("c"))
    gap, half = v.margin
    return v.rows(), "lorentz-lab/schmidt/1", {"pass": v.passed_all, "c": v.c, "min_gap": gap, "ci_at_min": half,
                                                "note": v.note}


def cmd_clt(spec):
    n = int(spec.get("n", 400))
    rep = clt_diagnostics(_ensemble(spec, n, 10_000), n)
    return rep.rows(), "lorentz-lab/clt/1", {"cov": rep.cov.tolist()}


def cmd_msd(spec):
    n = int(spec.get("n", 1000))
    rep = msd_curve(_ensemble(spec, n, 1000))
    return rep.rows(), "lorentz-lab/msd/1", {"slope": rep.slope, "slope_ci": list(rep.slope_ci), "r2": rep.r2,
                                               "linear": rep.linear}


COMMANDS = {"bounds-check": cmd_bounds_check, "simulate": cmd_simulate, "equivalence-test": cmd_equivalence,
            "toy": cmd_toy, "sweep": cmd_sweep, "schmidt": cmd_schmidt, "clt": cmd_clt, "msd": cmd_msd}


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x).__name__)


def run(spec: dict[str, Any]) -> int:
    env_keys = _env_keys(spec)
    extra = set(spec) - EXPERIMENT_KEYS - {"command", "example"} - set(env_keys)
    if extra:
        raise SchemaError(f"unknown keys: {sorted(extra)}")
    if "law" in spec:
        env_from_kv({**env_keys, "seed": spec["seed"]})  # validates the law
    rows, schema, summary = COMMANDS[spec["command"]](spec)
    rows = json.loads(json.dumps(rows, default=_jsonable))
    fmt = spec.get("format", "csv")
    text = table_text(rows, schema, fmt)
    summary = json.loads(json.dumps(summary, default=_jsonable))
    out = spec.get("out")
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        manifest = {"tool": "lorentz-lab", "version": __version__, "seed": spec["seed"], "schema": schema,
                    "spec": {k: v for k, v in sorted(spec.items()) if k != "out"}, "summary": summary}
        with open(out + ".manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")
    else:
        sys.stdout.write(text)
    if summary:
        print(json.dumps(summary, sort_keys=True), file=sys.stderr if not out else sys.stdout)
    if "verdict" in summary:
        print(summary["verdict"])
    return EXIT_FAIL if summary.get("verdict") == "MISMATCH" else 0


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(resolve(args))
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (Overlap, MarginViolation, HorizonUndecided) as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except ExcessiveSingularity as exc:
        print(f"singularity error: {exc}", file=sys.stderr)
        return EXIT_SINGULAR


if __name__ == "__main__":
    sys.exit(main())
