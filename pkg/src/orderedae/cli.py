"""Command-line experiment harness.

Verbs: generate, train, sweep, extract, table1, check-grad. Every command
accepts --config pointing at a JSON file whose keys mirror the long flag
names; explicit flags override the file, which overrides built-in defaults.
The seed falls back to the ORDEREDAE_SEED environment variable when neither
source provides one. Exit codes: 0 success, 2 usage error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments, plots
from .autoencoder import LossConfig, build_model, flatten_params, loss_and_grad, model_to_dict, model_from_dict, with_params
from .data import load_csv, normalize, save_csv
from .errors import (
    DataError,
    ExtractionError,
    NumericalError,
    OrderedAEError,
    TrainingError,
    TrivialSolutionError,
    UsageError,
)
from .extraction import build_explicit, build_implicit, explicit_predict, prediction_mse, save_relation
from .linalg import Rng
from .optimize import check_gradient
from .training import (
    config_from_dict,
    config_to_dict,
    report_to_dict,
    retrain_explicit,
    retrain_normalized,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _parse_q_list(text):
    """Accept '10', '1,2,5', or inclusive integer ranges like '1..10'."""
    values = []
    for part in str(text).split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..", 1)
            values.extend(float(v) for v in range(int(lo), int(hi) + 1))
        elif part:
            values.append(float(part))
    if not values:
        raise UsageError(f"could not parse q list from {text!r}")
    return values


def _resolve_seed(args):
    if args.seed is not None:
        return int(args.seed)
    env = os.environ.get("ORDEREDAE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"ORDEREDAE_SEED={env!r} is not an integer") from None
    return 0


def _apply_config_file(args):
    if not getattr(args, "config", None):
        return args
    try:
        with open(args.config) as fh:
            overrides = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {args.config}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file is not valid JSON: {exc}") from None
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise UsageError(f"unknown config key {key!r}")
        if getattr(args, attr) is None or getattr(args, attr) == "":
            setattr(args, attr, value)
    return args


def _out_dir(args, default):
    out = Path(args.out if args.out else default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_experiment_dataset(args, seed):
    """Dataset for a command: from --data CSV when given, else generated."""
    if getattr(args, "data", None):
        return load_csv(args.data)
    return experiments.make_dataset(
        args.experiment, seed,
        n_samples=args.n_samples,
        half_range=args.half_range,
        noise_var=args.noise_var if args.noise_var is not None else 0.1,
    )


def cmd_generate(args):
    seed = _resolve_seed(args)
    out = _out_dir(args, f"runs/{args.experiment}-data")
    paths = experiments.generate_dataset_files(
        args.experiment, seed, out,
        n_samples=args.n_samples, half_range=args.half_range,
        noise_var=args.noise_var if args.noise_var is not None else 0.1,
    )
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return EXIT_OK


def cmd_train(args):
    seed = _resolve_seed(args)
    if args.method not in (experiments.METHOD_AEO, experiments.METHOD_RAEO21):
        raise UsageError("train supports methods 'aeo' and 'raeo21'")
    q = float(args.q) if args.q is not None else 10.0
    out = _out_dir(args, f"runs/{args.experiment}-{args.method}")
    raw = _load_experiment_dataset(args, seed)
    d = normalize(raw)
    cfg = experiments.train_config(
        args.experiment, args.method, q, seed,
        restarts=args.restarts if args.restarts else 5,
        eps=args.eps if args.eps is not None else experiments.PRESET_EPS,
    )
    outcome = train(d, cfg)
    if outcome.trivial and args.retry_normalized:
        outcome = retrain_normalized(d, cfg, outcome)
    data_csv = out / "dataset.csv"
    save_csv(raw, data_csv)
    artifact = {
        "experiment": args.experiment,
        "method": args.method,
        "q": q,
        "dataset": str(data_csv),
        "model": model_to_dict(outcome.model, seed=seed, loss_config=cfg.loss),
        "report": report_to_dict(outcome.report),
        "loss_terms": outcome.loss_terms,
        "trivial": outcome.trivial,
        "converged": outcome.converged,
        "config": config_to_dict(cfg),
        "norm": {"means": d.norm.means.tolist(), "scales": d.norm.scales.tolist()},
    }
    outcome_path = out / "outcome.json"
    with open(outcome_path, "w") as fh:
        json.dump(artifact, fh)
    v = outcome.report.variances
    print(f"trained {args.method} on {args.experiment} at q={q:g} (seed {seed})")
    print("latent variances:", " ".join(f"{x:.3e}" for x in v))
    print(f"loss: J={outcome.loss_terms['J']:.6g} trivial={outcome.trivial}")
    print(f"outcome: {outcome_path}")
    if outcome.trivial:
        print("warning: trivial solution (collapsed residual weights); "
              "rerun with --retry-normalized to retrain under the unit-norm constraint")
    return EXIT_OK


def cmd_sweep(args):
    seed = _resolve_seed(args)
    if args.method not in (experiments.METHOD_AEO, experiments.METHOD_RAEO21):
        raise UsageError("sweep supports methods 'aeo' and 'raeo21'")
    q_values = _parse_q_list(args.q if args.q is not None else "1..10")
    out = _out_dir(args, f"runs/{args.experiment}-{args.method}-sweep")
    paths = experiments.run_sweep(
        args.experiment, args.method, q_values, seed, out,
        restarts=args.restarts if args.restarts else 5,
        eps=args.eps if args.eps is not None else experiments.PRESET_EPS,
        retry_normalized=bool(args.retry_normalized),
        jobs=args.jobs,
        n_samples=args.n_samples, half_range=args.half_range,
        noise_var=args.noise_var if args.noise_var is not None else 0.1,
    )
    figures = plots.plot_sweep(paths["sweep"])
    if "prediction" in paths:
        figures += plots.plot_prediction(paths["prediction"])
    if "reconstruction" in paths:
        figures += plots.plot_reconstruction(paths["reconstruction"])
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    for fig in figures:
        print(f"figure: {fig}")
    return EXIT_OK


def cmd_table1(args):
    seed = _resolve_seed(args)
    out = _out_dir(args, "runs/table1")
    paths = experiments.run_table(
        seed, out,
        q=float(args.q) if args.q is not None else 10.0,
        restarts=args.restarts if args.restarts else 5,
        eps=args.eps if args.eps is not None else experiments.PRESET_EPS,
        jobs=args.jobs,
        n_samples=args.n_samples, half_range=args.half_range,
        noise_var=args.noise_var if args.noise_var is not None else 0.1,
    )
    figures = plots.plot_table(paths["table1"])
    with open(paths["table1"]) as fh:
        print(fh.read().rstrip())
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    for fig in figures:
        print(f"figure: {fig}")
    return EXIT_OK


def cmd_extract(args):
    try:
        with open(args.outcome) as fh:
            artifact = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"outcome file not found: {args.outcome}") from None
    out = _out_dir(args, Path(args.outcome).parent)
    experiment = artifact["experiment"]
    method = artifact["method"]
    cfg = config_from_dict(artifact["config"])
    raw = load_csv(artifact["dataset"])
    d = normalize(raw)

    from .training import LatentReport, TrainOutcome

    report_d = artifact["report"]
    report = LatentReport(
        variances=np.asarray(report_d["variances"]),
        means=np.asarray(report_d["means"]),
        ordered=report_d["ordered"],
        residual_set=tuple(report_d["residual_set"]),
        p=report_d["p"],
        eps=report_d["eps"],
    )
    outcome = TrainOutcome(
        model=model_from_dict(artifact["model"]),
        report=report,
        loss_terms=artifact["loss_terms"],
        trivial=artifact["trivial"],
        converged=artifact["converged"],
        best_seed=artifact["model"].get("seed") or cfg.seed,
    )
    if outcome.trivial:
        if not args.retry_normalized:
            raise TrivialSolutionError(
                "the stored model is a trivial solution (zero residual weights); "
                "pass --retry-normalized to retrain with the unit-norm constraint "
                "on the residual rows before extracting"
            )
        print("trivial solution detected; retraining under the unit-norm constraint")
        outcome = retrain_normalized(d, cfg, outcome)

    p = d.n_vars - experiments.residual_count(experiment)
    rel = build_implicit(outcome, p=p, names=d.names, norm=d.norm)
    rel_path = out / "relation.json"
    save_relation(rel_path, rel)
    print(f"implicit relation: {rel_path}")

    if args.explicit:
        if method != experiments.METHOD_RAEO21:
            raise UsageError(
                "explicit extraction requires the identity-skip variant (raeo21)"
            )
        exp_outcome = retrain_explicit(d, cfg, p)
        if not exp_outcome.explicit_ok:
            print("explicit retrain did not reach the variance tolerance; "
                  "explicit_ok=false (result reported, no relation written)")
            return EXIT_OK
        erel = build_explicit(exp_outcome, p, names=d.names, norm=d.norm)
        erel_path = out / "relation_explicit.json"
        save_relation(erel_path, erel)
        target = experiments.target_variable(experiment)
        sig = list(range(p))
        xfex = explicit_predict(erel, d.X[sig])
        mse = prediction_mse(d, xfex[target - p], target)
        pred_csv = out / "explicit_prediction.csv"
        experiments._write_csv(
            pred_csv,
            [d.names[0], f"{d.names[target]}_actual", f"{d.names[target]}_explicit"],
            zip(d.X[0], d.X[target], xfex[target - p]),
        )
        plots.plot_prediction(pred_csv)
        print(f"explicit relation: {erel_path}")
        print(f"explicit prediction MSE ({d.names[target]}): {mse:.6g}")
    return EXIT_OK


def cmd_check_grad(args):
    seed = _resolve_seed(args)
    cases = args.cases if args.cases else 20
    worst = 0.0
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for case in range(cases):
            rng = Rng(seed + 1000 * case)
            n = [2, 3, 5][case % 3]
            skip = "identity" if case % 2 else "none"
            bias = case % 4 == 3
            mdl = build_model(n, n, (4,), (4,), rng, encoder_skip=skip, use_bias=bias)
            X = rng.uniform(-1.0, 1.0, (n, 12))
            q = np.sort(rng.uniform(0.1, 5.0, n))
            cfg = LossConfig(1.0, 0.5, 0.1, q)
            theta = flatten_params(mdl)
            err = check_gradient(
                lambda t: loss_and_grad(with_params(mdl, t), X, cfg), theta, h=1e-6
            )
            print(f"case {case:2d}: n={n} skip={skip:8s} bias={bias} max rel err={err:.3e}")
            worst = max(worst, err)
    print(f"worst case: {worst:.3e}")
    if worst > 1e-5:
        print("gradient check FAILED (tolerance 1e-5)")
        return EXIT_NUMERIC
    print("gradient check passed (tolerance 1e-5)")
    return EXIT_OK


def _add_common(parser, *, data=False):
    parser.add_argument("--config", help="JSON file of flag overrides")
    parser.add_argument("--seed", type=int, default=None,
                        help="seed (falls back to ORDEREDAE_SEED, then 0)")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--n-samples", type=int, default=None, dest="n_samples")
    parser.add_argument("--half-range", type=float, default=None, dest="half_range",
                        help="uniform half-range for generated inputs")
    parser.add_argument("--noise-var", type=float, default=None, dest="noise_var",
                        help="noise variance for the five-variable benchmark")
    if data:
        parser.add_argument("--data", default=None,
                            help="CSV dataset to use instead of generating one")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="orderedae",
        description="Ordered-variance autoencoder experiments: train, sweep, "
                    "extract relations, and reproduce the comparison table.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a benchmark dataset CSV + manifest")
    p.add_argument("--experiment", choices=experiments.EXPERIMENTS, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model and store the outcome")
    p.add_argument("--experiment", choices=experiments.EXPERIMENTS, required=True)
    p.add_argument("--method", choices=(experiments.METHOD_AEO, experiments.METHOD_RAEO21),
                   default=experiments.METHOD_AEO)
    p.add_argument("--q", default=None, help="ordering weight knob")
    p.add_argument("--eps", type=float, default=None, help="residual variance tolerance")
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--retry-normalized", action="store_true", dest="retry_normalized")
    _add_common(p, data=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train across q values; write report CSV + figures")
    p.add_argument("--experiment", choices=experiments.EXPERIMENTS, required=True)
    p.add_argument("--method", choices=(experiments.METHOD_AEO, experiments.METHOD_RAEO21),
                   default=experiments.METHOD_AEO)
    p.add_argument("--q", default=None, help="list or range, e.g. '1..10' or '1,4,10'")
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--retry-normalized", action="store_true", dest="retry_normalized")
    p.add_argument("--jobs", type=int, default=None,
                   help="parallel workers (default: available cores)")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("table1", help="method comparison table on the 5-variable benchmark")
    p.add_argument("--q", default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_table1)

    p = sub.add_parser("extract", help="materialize relation JSON from a stored outcome")
    p.add_argument("--outcome", required=True, help="outcome.json written by train")
    p.add_argument("--explicit", action="store_true",
                   help="also run the masked retrain and write the closed-form relation")
    p.add_argument("--retry-normalized", action="store_true", dest="retry_normalized")
    p.add_argument("--config", help="JSON file of flag overrides")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("check-grad", help="finite-difference audit of the loss gradient")
    p.add_argument("--cases", type=int, default=None)
    p.add_argument("--config", help="JSON file of flag overrides")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_check_grad)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config_file(args)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, TrainingError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ExtractionError as exc:
        print(f"extraction error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OrderedAEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
