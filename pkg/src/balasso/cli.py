"""Command-line entry point: ``balasso run | fit | predict``.

Every flag can also be given in a YAML or JSON file passed with
``--config``; keys are the long flag names (dashes or underscores).  Flags
on the command line override the file.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import yaml

from . import __version__
from .data import CsvSchema, load_csv, standardize
from .experiment import METHODS, ExperimentSettings, run_experiment
from .gibbs import ChainConfig, PenaltyMode, run_chain_linear
from .inference import (
    compute_pse,
    conditional_modes,
    estimate_pmp,
    predict_bma,
    select_freq,
    select_point,
    write_pmp_csv,
    write_selection_csv,
)
from .persistence import save_chain
from .scenarios import SCENARIOS, ScenarioSpec
from .solvers import SolverConfig

STRATEGIES = ("bma", "mean", "median", "freq", "eb")


def _csv_list(s: str) -> list[str]:
    return [x.strip() for x in s.split(",") if x.strip()]


def _int_list(s: str) -> list[int]:
    return [int(x) for x in _csv_list(s)]


def _add_chain_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=("hierarchical", "eb-em", "eb-sa"), default="hierarchical")
    p.add_argument("--burnin", type=int, default=10_000)
    p.add_argument("--draws", type=int, default=10_000)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--r", type=float, default=0.1, help="shape of the gamma prior on lambda^2")
    p.add_argument("--delta", type=float, default=None,
                   help="rate of the gamma prior on lambda^2 (default: estimated during burn-in)")
    p.add_argument("--seed", type=int, default=0)


def _add_data_flags(p: argparse.ArgumentParser, train_flag: str) -> None:
    p.add_argument(train_flag, dest="data", required=False, help="training CSV with a header row")
    p.add_argument("--response", help="name of the response column")
    p.add_argument("--predictors", type=_csv_list, default=None, help="comma-separated column names")
    p.add_argument("--drop-rows", type=_int_list, default=(), help="1-based data rows to drop")
    p.add_argument("--scale", action="store_true", help="scale predictors to unit s.d.")


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="balasso", description="Bayesian adaptive Lasso")
    top.add_argument("--version", action="version", version=f"balasso {__version__}")
    sub = top.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulation study for one scenario")
    run.add_argument("--config", type=Path)
    run.add_argument("--scenario", choices=SCENARIOS)
    run.add_argument("--n", type=int, default=None)
    run.add_argument("--sigma", type=float, default=None)
    run.add_argument("--n-test", type=int, default=None)
    run.add_argument("--reps", type=int, default=100)
    run.add_argument("--methods", type=_csv_list, default=["freq", "median", "mean", "eb"])
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--burnin", type=int, default=10_000)
    run.add_argument("--draws", type=int, default=10_000)
    run.add_argument("--thin", type=int, default=1)
    run.add_argument("--r", type=float, default=0.1)
    run.add_argument("--delta", type=float, default=None)
    run.add_argument("--eb-kind", choices=("eb-sa", "eb-em"), default="eb-sa")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--save-chains", action="store_true")
    run.add_argument("--out", type=Path, default=Path("balasso-run"))

    fit = sub.add_parser("fit", help="fit one CSV data set and report selections")
    fit.add_argument("--config", type=Path)
    _add_data_flags(fit, "--data")
    _add_chain_flags(fit)
    fit.add_argument("--threshold", type=float, default=0.5)
    fit.add_argument("--top", type=int, default=10, help="patterns to list in pmp.csv")
    fit.add_argument("--out", type=Path, default=Path("balasso-fit"))

    pred = sub.add_parser("predict", help="train on one CSV, predict another")
    pred.add_argument("--config", type=Path)
    _add_data_flags(pred, "--train")
    pred.add_argument("--test", type=Path)
    pred.add_argument("--strategy", choices=STRATEGIES, default="bma")
    _add_chain_flags(pred)
    pred.add_argument("--out", type=Path, default=Path("balasso-predict"))
    return top


def load_config(path) -> dict:
    """Flat key/value mapping from a YAML or JSON file."""
    text = Path(path).read_text()
    cfg = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if cfg is None:
        return {}
    if not isinstance(cfg, dict):
        raise SystemExit(f"{path}: config must be a key/value mapping")
    out = {}
    for k, v in cfg.items():
        key = str(k).replace("-", "_")
        if key in ("methods", "predictors") and isinstance(v, str):
            v = _csv_list(v)
        if key == "drop_rows" and isinstance(v, str):
            v = _int_list(v)
        if key == "burn_in":
            key = "burnin"
        out[key] = v
    return out


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        cfg = load_config(args.config)
        unknown = sorted(set(cfg) - known)
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def _mode(args) -> PenaltyMode:
    return PenaltyMode(kind=args.mode, r=args.r, delta=args.delta)


def _chain(args) -> ChainConfig:
    return ChainConfig(args.burnin, args.draws, args.thin, args.seed)


def _load(args, path):
    if not path or not args.response:
        raise SystemExit("a data file and --response are required")
    return load_csv(path, CsvSchema(args.response, args.predictors, tuple(args.drop_rows)))


def cmd_run(args) -> int:
    if not args.scenario:
        raise SystemExit("--scenario is required")
    bad = [m for m in args.methods if m not in METHODS]
    if bad:
        raise SystemExit(f"unknown methods {bad}; choose from {METHODS}")
    spec = ScenarioSpec(args.scenario, args.n, args.sigma, args.reps, args.seed, args.n_test)
    settings = ExperimentSettings(
        burn_in=args.burnin, kept=args.draws, thin=args.thin, r=args.r,
        delta=args.delta, eb_kind=args.eb_kind,
    )

    def progress(done, total):
        print(f"\rreplication {done}/{total}", end="", file=sys.stderr, flush=True)

    table = run_experiment(
        spec, args.methods, args.out, settings, workers=args.workers,
        save_chains=args.save_chains, progress=progress,
    )
    print(file=sys.stderr)
    print(table.to_text())
    print(f"wrote {args.out}/report.csv")
    return 0


def _fit_chain(args, data):
    return run_chain_linear(data, _mode(args), _chain(args))


def cmd_fit(args) -> int:
    raw = _load(args, args.data)
    data = standardize(raw, "center-and-scale" if args.scale else "center")
    store = _fit_chain(args, data)
    out = args.out
    save_chain(store, out / "chains" / args.mode)
    cfg = SolverConfig()
    results = []
    if args.mode == "hierarchical":
        modes = conditional_modes(store, data, cfg)
        results += [select_point(store, data, s, cfg) for s in ("mean", "median")]
        results.append(select_freq(store, data, args.threshold, cfg, modes=modes))
        pmp = estimate_pmp(store, data, cfg, modes=modes)
        write_pmp_csv(pmp, out / "pmp.csv", top=args.top)
    else:
        results.append(select_point(store, data, "eb-point", cfg))
    write_selection_csv(results, out / "selection.csv")
    names = raw.names or [f"x{j + 1}" for j in range(raw.p)]
    for r in results:
        chosen = [names[j] for j in r.pattern.indices]
        print(f"{r.strategy:>8}: {', '.join(chosen) if chosen else '(empty model)'}")
    (out / "meta.txt").write_text(json.dumps({
        "command": "fit", "data": str(args.data), "data_fingerprint": raw.fingerprint(),
        "chain_config_hash": store.meta["config_hash"], "seed": args.seed,
        "software_version": __version__,
    }, indent=2) + "\n")
    print(f"wrote {out}/selection.csv")
    return 0


def cmd_predict(args) -> int:
    raw = _load(args, args.data)
    if not args.test:
        raise SystemExit("--test is required")
    data = standardize(raw, "center-and-scale" if args.scale else "center")
    with open(args.test, newline="") as fh:
        has_y = args.response in next(csv.reader(fh), [])
    test = load_csv(args.test, CsvSchema(args.response if has_y else None, raw.names))
    X_new = data.transform_X(test.X)
    cfg = SolverConfig()
    mode = args.mode
    if args.strategy == "eb" and mode == "hierarchical":
        mode = "eb-sa"
    elif args.strategy != "eb" and mode != "hierarchical":
        raise SystemExit(f"strategy {args.strategy} needs --mode hierarchical")
    args.mode = mode
    store = _fit_chain(args, data)
    save_chain(store, args.out / "chains" / mode)
    if args.strategy == "bma":
        pred = predict_bma(store, data, X_new, cfg)
    elif args.strategy == "freq":
        pred = X_new @ select_freq(store, data, 0.5, cfg).beta
    else:
        stat = "eb-point" if args.strategy == "eb" else args.strategy
        pred = X_new @ select_point(store, data, stat, cfg).beta
    pred = pred + data.y_mean
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    with (out / "predictions.csv").open("w") as fh:
        fh.write("row,prediction,actual\n")
        for i, (p_, a) in enumerate(zip(pred, test.y), start=1):
            fh.write(f"{i},{float(p_)!r},{float(a)!r}\n")
    pse = compute_pse(pred, test.y) if has_y else None
    if pse is not None:
        print(f"PSE ({args.strategy}) = {pse:.6g} over {len(pred)} rows")
    print(f"wrote {out}/predictions.csv")
    (out / "meta.txt").write_text(json.dumps({
        "command": "predict", "train": str(args.data), "test": str(args.test),
        "strategy": args.strategy, "pse": pse, "seed": args.seed,
        "chain_config_hash": store.meta["config_hash"], "software_version": __version__,
    }, indent=2) + "\n")
    return 0


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        return {"run": cmd_run, "fit": cmd_fit, "predict": cmd_predict}[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"balasso: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
