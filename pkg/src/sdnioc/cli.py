"""Command-line front end: build problems, simulate, fit, track beliefs, benchmark.

Exit codes: 0 success, 2 usage or input error, 1 numerical failure.  Data goes
to the files named on the command line; stdout only lists the files written.
``SDNIOC_SEED`` and ``SDNIOC_THREADS`` override the default seed and worker
count.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._linalg import NumericalError
from .estimate import FitError, ParamSpec, apply_params, fit_mle
from .likelihood import log_likelihood_dataset, track_beliefs
from .metrics import (additive_noise_baseline, analytic_summary, empirical_summary,
                      fit_convergence_rate, log_errors, mean_skl_over_time)
from .model import ConfigError, fingerprint, load_model, save_model
from .problems import (RandomProblemParams, ReachingParams, position_only, random_problem,
                       reaching_model, saccade_model)
from .simulate import load_dataset_csv, rollout_batch, save_dataset_csv
from .solver import solve_gains

log = logging.getLogger("sdnioc")


class UsageError(Exception):
    pass


def _default_seed():
    return int(os.environ.get("SDNIOC_SEED", 0))


def _default_threads():
    return int(os.environ.get("SDNIOC_THREADS", os.cpu_count() or 1))


def _write_manifest(args, outputs, configs=()):
    manifest = {
        "command": " ".join(["sdnioc"] + args.argv),
        "config_paths": [str(c) for c in configs],
        "seed": getattr(args, "seed", None),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "tool_version": __version__,
        "output_paths": [str(o) for o in outputs],
    }
    path = Path(str(outputs[0]) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=1))
    for o in outputs:
        print(o)


def _spec_path(model_path, explicit=None):
    if explicit:
        return Path(explicit)
    p = Path(model_path)
    return p.with_name(p.stem + ".spec.json")


def _load_spec(model_path, explicit=None):
    path = _spec_path(model_path, explicit)
    if not path.exists():
        raise UsageError(f"parameter spec {path} not found (use --spec)")
    d = json.loads(path.read_text())
    return ParamSpec.from_json(d), d.get("true_params")


def _parse_params(text, spec):
    """``name=value,...`` or a JSON file holding ``{name: value}``."""
    if text is None:
        return None
    if Path(text).is_file():
        d = json.loads(Path(text).read_text())
        d = d.get("theta_mle", d)
    else:
        try:
            d = {k.strip(): float(v) for k, v in (item.split("=") for item in text.split(","))}
        except ValueError:
            raise UsageError(f"cannot parse --params {text!r}; expected name=value,...") from None
    missing = [n for n in spec.names if n not in d]
    if missing:
        raise UsageError(f"--params lacks {missing}")
    return np.array([float(d[n]) for n in spec.names])


def _load_with_params(args):
    model, cost, exp_model = load_model(args.model)
    spec, _ = _load_spec(args.model, getattr(args, "spec", None))
    theta = _parse_params(getattr(args, "params", None), spec)
    if theta is not None:
        model, cost = apply_params(spec, theta, model, cost, check_bounds=False)
    return model, cost, exp_model, spec


# -- commands -------------------------------------------------------------------

def cmd_problem(args):
    if args.kind == "reaching":
        p = ReachingParams(r=args.r, v=args.v, f=args.f, target=args.target, dt=args.dt,
                           duration=args.duration)
        model, cost, spec = reaching_model(p)
        true = {"r": p.r, "v": p.v, "f": p.f}
    elif args.kind == "saccade":
        model, cost, spec = saccade_model(r=args.r_saccade, dt=args.dt_saccade)
        true = {"r": args.r_saccade}
    else:
        p = RandomProblemParams(r_vec=tuple(args.r_vec), seed=args.seed)
        model, cost, spec = random_problem(p)
        true = dict(zip(spec.names, p.r_vec))
    exp_model = position_only(model, args.obs_noise) if args.partial_obs else None
    out = Path(args.out)
    save_model(out, model, cost, exp_model)
    spec_out = _spec_path(out)
    spec_out.write_text(json.dumps({**spec.to_json(), "true_params": true}, indent=1))
    _write_manifest(args, [out, spec_out])


def cmd_simulate(args):
    model, cost, exp_model, _ = _load_with_params(args)
    if args.zero_noise:
        m, k = model.m, model.k
        model = model.replace(V=np.zeros((m, m)), W=np.zeros((k, k)), E=np.zeros((m, m)),
                              C=None, D=None)
    if args.partial_obs and exp_model is None:
        exp_model = position_only(model, args.obs_noise)
    gains = solve_gains(model, cost).gains
    ds = rollout_batch(model, gains, args.trials, args.seed, exp_model,
                       fingerprint(model, cost, exp_model))
    out = Path(args.out)
    save_dataset_csv(out, ds)
    outputs = [out]
    if args.dump_gains:
        Path(args.dump_gains).write_text(json.dumps(gains.to_json(), indent=1))
        outputs.append(Path(args.dump_gains))
    if exp_model is not None:
        obs_out = out.with_name(out.stem + ".observed" + out.suffix)
        save_dataset_csv(obs_out, ds.observed_only(), kinds=("exp_obs",))
        outputs.append(obs_out)
    _write_manifest(args, outputs, [args.model])


def _read_data(path):
    try:
        return load_dataset_csv(path)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def cmd_loglik(args):
    model, cost, exp_model, _ = _load_with_params(args)
    ds = _read_data(args.data)
    if ds.states is None and exp_model is None:
        raise UsageError("data has no state rows; the model config needs M and N")
    if ds.states is not None and not args.partial_obs:
        exp_model = None
    gains = solve_gains(model, cost).gains
    ll = log_likelihood_dataset(model, gains, ds, exp_model, not args.omit_initial)
    out = Path(args.out)
    out.write_text(json.dumps({"loglik": ll, "n_trials": len(ds)}, indent=1))
    _write_manifest(args, [out], [args.model, args.data])


def cmd_fit(args):
    model, cost, exp_model = load_model(args.model)
    spec, true = _load_spec(args.model, args.spec)
    ds = _read_data(args.data)
    if ds.states is None and exp_model is None:
        raise UsageError("data has no state rows; the model config needs M and N")
    if ds.states is not None and not args.partial_obs:
        exp_model = None
    likelihood = "plain" if args.baseline == "plain-lqg" else "approx"
    res = fit_mle(spec, ds, model, cost, exp_model, n_starts=args.starts, seed=args.seed,
                  budget=args.budget, likelihood=likelihood, n_jobs=args.threads,
                  include_initial=not args.omit_initial)
    res.extra["likelihood"] = likelihood
    if true:
        res.extra["log_base"] = args.log_base
        res.extra["log_err"] = dict(zip(spec.names, map(float, log_errors(
            [true[n] for n in spec.names], res.theta_mle, _LOG_BASES[args.log_base]))))
    out = Path(args.out)
    out.write_text(json.dumps(res.to_json(), indent=1))
    _write_manifest(args, [out], [args.model, args.data])


def cmd_track(args):
    if args.params is None:
        raise UsageError("track needs --params")
    model, cost, exp_model, _ = _load_with_params(args)
    ds = _read_data(args.data)
    if ds.states is not None and not args.partial_obs:
        exp_model = None
    elif exp_model is None:
        if not args.partial_obs:
            raise UsageError("data has no state rows; pass --partial-obs or add M and N")
        exp_model = position_only(model, args.obs_noise)
    gains = solve_gains(model, cost).gains
    means, covs = track_beliefs(model, gains, ds, exp_model)
    m = model.m
    sl = slice(m, 2 * m) if exp_model is not None else slice(0, m)
    mu = means[..., sl]
    var = np.diagonal(covs, axis1=-2, axis2=-1)[..., sl]
    out = Path(args.out)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "t", "component", "mean", "var"])
        for n in range(mu.shape[0]):
            for t in range(mu.shape[1]):
                for j in range(m):
                    w.writerow([n, t + 1, j, repr(float(mu[n, t, j])), repr(float(var[n, t, j]))])
    outputs = [out]
    if args.full_cov:
        cov = covs[..., sl, sl]
        Path(args.full_cov).write_text(json.dumps(
            {"component_order": list(range(m)), "mean": mu.tolist(), "cov": cov.tolist()}))
        outputs.append(Path(args.full_cov))
    _write_manifest(args, outputs, [args.model, args.data])


_LOG_BASES = {"e": math.e, "10": 10.0}

# true control costs of the random-problem sweep are log-uniform on this range
RANDOM_LOG10_R_RANGE = (-3.0, -1.0)


def _bench_random(args):
    rows = []
    for i in range(args.count):
        rng = np.random.default_rng([args.seed, i])
        r_true = tuple(10.0 ** rng.uniform(*RANDOM_LOG10_R_RANGE, 2))
        model, cost, spec = random_problem(RandomProblemParams(r_vec=r_true,
                                                               seed=args.seed * 100003 + i))
        ds = rollout_batch(model, solve_gains(model, cost).gains, args.trials, args.seed + i)
        fit = fit_mle(spec, ds, model, cost, n_starts=args.starts, seed=i, n_jobs=args.threads)
        err = log_errors(r_true, fit.theta_mle, _LOG_BASES[args.log_base])
        rows.append({"problem": i, "theta_true": list(r_true),
                     "theta_mle": fit.theta_mle.tolist(), "log_err": err.tolist()})
    errs = np.abs(np.array([r["log_err"] for r in rows]))
    return {"problems": rows, "median_abs_log_err": np.median(errs, axis=0).tolist(),
            "frac_within_0.3": np.mean(errs <= 0.3, axis=0).tolist()}


def _bench_reaching_grid(args):
    base = ReachingParams()
    grid = 10.0 ** np.array([-0.5, 0.0, 0.5])
    names = ("r", "v", "f")
    rows = []
    for a, b in ((0, 1), (0, 2), (1, 2)):
        for ga in grid:
            for gb in grid:
                vals = {"r": base.r, "v": base.v, "f": base.f}
                vals[names[a]] *= ga
                vals[names[b]] *= gb
                p = ReachingParams(**vals)
                model, cost, spec = reaching_model(p)
                true = np.array([vals[n] for n in names])
                sq = []
                for rep in range(args.reps):
                    ds = rollout_batch(model, solve_gains(model, cost).gains, args.trials,
                                       args.seed + rep)
                    fit = fit_mle(spec, ds, model, cost, n_starts=args.starts, seed=rep,
                                  n_jobs=args.threads)
                    sq.append(log_errors(true, fit.theta_mle, _LOG_BASES[args.log_base]) ** 2)
                rmse = np.sqrt(np.mean(sq, axis=0))
                rows.append({"pair": [names[a], names[b]], "theta_true": true.tolist(),
                             "rmse": dict(zip(names, rmse.tolist()))})
    return {"grid": rows}


def _bench_moment_matching(args):
    model, cost, _ = reaching_model(ReachingParams())
    gains = solve_gains(model, cost).gains
    dims = [0, 1, 2, 3]
    t0 = time.perf_counter()
    emp = empirical_summary(rollout_batch(model, gains, args.trials, args.seed), dims=dims)
    ana = analytic_summary(model, gains, dims=dims)
    base_model = additive_noise_baseline(model, gains)
    base = analytic_summary(base_model, solve_gains(base_model, cost).gains, dims=dims)
    ds = rollout_batch(model, gains, 100, args.seed)
    t1 = time.perf_counter()
    log_likelihood_dataset(model, solve_gains(model, cost).gains, ds)
    return {"mean_skl_analytic": mean_skl_over_time(emp, ana),
            "mean_skl_baseline": mean_skl_over_time(emp, base),
            "n_rollouts": args.trials,
            "likelihood_seconds_100_trials": time.perf_counter() - t1,
            "total_seconds": time.perf_counter() - t0}


def _bench_convergence(args):
    model, cost, spec = reaching_model(ReachingParams())
    gains = solve_gains(model, cost).gains
    true = np.array([1e-5, 0.2, 0.02])
    ns = [1, 3, 10, 32, 100]
    meds = []
    for n in ns:
        rm = []
        for rep in range(args.reps):
            ds = rollout_batch(model, gains, n, args.seed + 1000 * rep + n)
            fit = fit_mle(spec, ds, model, cost, n_starts=args.starts, seed=rep, n_jobs=args.threads)
            err = log_errors(true, fit.theta_mle, _LOG_BASES[args.log_base])
            rm.append(math.sqrt(np.mean(err ** 2)))
        meds.append(float(np.median(rm)))
    return {"ns": ns, "median_rmse": meds, "slope": fit_convergence_rate(ns, meds)}


def cmd_bench(args):
    runner = {"random": _bench_random, "reaching-grid": _bench_reaching_grid,
              "moment-matching": _bench_moment_matching, "convergence": _bench_convergence}
    report = runner[args.kind](args)
    report["kind"] = args.kind
    report["log_base"] = args.log_base
    out = Path(args.out)
    out.write_text(json.dumps(report, indent=1))
    _write_manifest(args, [out])


# -- parser ---------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="sdnioc", description=__doc__.splitlines()[0],
                                 allow_abbrev=False)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log diagnostics to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True, threads=False):
        if seed:
            p.add_argument("--seed", type=int, default=_default_seed(),
                           help="random seed (default $SDNIOC_SEED or 0)")
        if threads:
            p.add_argument("--threads", type=int, default=_default_threads(),
                           help="worker processes for multi-start fits (default $SDNIOC_THREADS "
                                "or the core count); results do not depend on it")
        p.add_argument("--out", required=True, help="output file")

    p = sub.add_parser("problem", help="write a benchmark problem as model JSON + parameter spec")
    p.add_argument("kind", choices=["reaching", "saccade", "random"], help="problem family")
    p.add_argument("--r", type=float, default=1e-5, help="reaching control cost")
    p.add_argument("--v", type=float, default=0.2, help="reaching terminal velocity weight")
    p.add_argument("--f", type=float, default=0.02, help="reaching terminal force weight")
    p.add_argument("--target", type=float, default=0.1, help="reaching target position")
    p.add_argument("--dt", type=float, default=0.01, help="reaching time step (s)")
    p.add_argument("--duration", type=float, default=0.35, help="reaching duration (s)")
    p.add_argument("--r-saccade", type=float, default=1e-3, help="saccade effort weight")
    p.add_argument("--dt-saccade", type=float, default=1.25e-3, help="saccade time step (s)")
    p.add_argument("--r-vec", type=float, nargs="+", default=[0.1, 0.1],
                   help="random problem control costs")
    p.add_argument("--partial-obs", action="store_true",
                   help="add a position-only experimenter measurement model")
    p.add_argument("--obs-noise", type=float, default=0.0, help="experimenter measurement noise")
    common(p)
    p.set_defaults(func=cmd_problem)

    p = sub.add_parser("simulate", help="simulate trials to CSV")
    p.add_argument("model", help="model JSON")
    p.add_argument("--params", help="name=value,... or JSON file (default: config values)")
    p.add_argument("--spec", help="parameter spec JSON (default: <model>.spec.json)")
    p.add_argument("--trials", type=int, default=100, help="number of trials (default 100)")
    p.add_argument("--partial-obs", action="store_true",
                   help="also write the experimenter's measurements to <out>.observed.csv")
    p.add_argument("--obs-noise", type=float, default=0.0,
                   help="experimenter measurement noise for --partial-obs")
    p.add_argument("--zero-noise", action="store_true", help="switch every noise source off")
    p.add_argument("--dump-gains", metavar="PATH", help="also write the gain schedule as JSON")
    common(p)
    p.set_defaults(func=cmd_simulate)

    def scoring(p):
        p.add_argument("model", help="model JSON")
        p.add_argument("data", help="trajectory CSV")
        p.add_argument("--spec", help="parameter spec JSON (default: <model>.spec.json)")
        p.add_argument("--partial-obs", action="store_true",
                       help="use the exp_obs rows and the config's experimenter model")

    p = sub.add_parser("loglik", help="approximate log-likelihood of a dataset")
    scoring(p)
    p.add_argument("--params", help="name=value,... or JSON file (default: config values)")
    p.add_argument("--omit-initial", action="store_true",
                   help="drop the density of the first observation (x1 known exactly)")
    p.add_argument("--out", required=True, help="output JSON")
    p.set_defaults(func=cmd_loglik)

    p = sub.add_parser("fit", help="maximum-likelihood fit of the spec parameters")
    scoring(p)
    p.add_argument("--starts", type=int, default=10, help="random starts (default 10)")
    p.add_argument("--budget", type=int, default=None,
                   help="evaluations per start (default 100 * (dim + 1))")
    p.add_argument("--baseline", choices=["none", "plain-lqg"], default="none",
                   help="plain-lqg: ignore signal-dependent noise, exact likelihood")
    p.add_argument("--omit-initial", action="store_true",
                   help="drop the density of the first observation (x1 known exactly)")
    p.add_argument("--log-base", choices=sorted(_LOG_BASES), default="e",
                   help="logarithm for the reported log errors (default e)")
    common(p, threads=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("track", help="belief over the agent's estimate for each trial")
    scoring(p)
    p.add_argument("--params", help="name=value,... or JSON file (required)")
    p.add_argument("--obs-noise", type=float, default=0.0,
                   help="measurement noise when the config has no experimenter model")
    p.add_argument("--full-cov", metavar="PATH",
                   help="also write full belief means and covariances as JSON")
    p.add_argument("--out", required=True, help="output CSV (trial,t,component,mean,var)")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("bench", help="benchmarks; writes a metrics JSON")
    p.add_argument("kind", choices=["random", "reaching-grid", "moment-matching", "convergence"],
                   help="benchmark to run")
    p.add_argument("--count", type=int, default=50, help="random problems (default 50)")
    p.add_argument("--reps", type=int, default=3, help="repetitions per setting (default 3)")
    p.add_argument("--trials", type=int, default=None,
                   help="trials per dataset (default 100; 10000 rollouts for moment-matching)")
    p.add_argument("--starts", type=int, default=10, help="random starts per fit (default 10)")
    p.add_argument("--log-base", choices=sorted(_LOG_BASES), default="e",
                   help="logarithm for the reported log errors (default e)")
    common(p, threads=True)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "trials", 0) is None:
        args.trials = 10000 if args.kind == "moment-matching" else 100
    try:
        args.func(args)
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, FitError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
