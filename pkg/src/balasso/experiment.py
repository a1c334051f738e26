"""Replication engine: simulate, fit every requested method, score, tabulate.

Methods
-------
``freq``, ``median``, ``mean``, ``eb``
    BaLasso selection strategies (linear data or the logistic LSA surrogate).
``bma``
    BaLasso model-averaged prediction (scored by PSE only).
``blasso``
    Single-lambda Bayesian Lasso, model-averaged the same way (PSE only).
``lasso``, ``alasso``
    Cross-validated reference fits (linear scenarios only).
``group``, ``cap``
    Group / composite-absolute-penalty BaLasso on the LSA surrogate.
"""
from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .baselines import adaptive_lasso_cv, lasso_cv
from .data import standardize
from .distributions import RngHandle
from .general import fit_linear_lsa, fit_logistic_mle, run_chain_group
from .gibbs import ChainConfig, GaussianKernel, PenaltyMode, config_hash, run_chain
from .inference import (
    SparsityPattern,
    compute_pse,
    conditional_modes,
    predict_bma,
    select_freq,
    select_group,
    select_point,
)
from .scenarios import ScenarioSpec, generate_dataset
from .solvers import SolverConfig

__all__ = ["METHODS", "ExperimentSettings", "ReportRow", "ReportTable", "run_replication", "run_experiment"]

METHODS = ("freq", "median", "mean", "eb", "bma", "blasso", "lasso", "alasso", "group", "cap")
_PREDICT_ONLY = ("bma", "blasso")
_GROUP = ("group", "cap")
_FAILURES = (ArithmeticError, RuntimeError, ValueError)


@dataclass(frozen=True)
class ExperimentSettings:
    burn_in: int = 10_000
    kept: int = 10_000
    thin: int = 1
    r: float = 0.1
    delta: Optional[float] = None
    eb_kind: str = "eb-sa"
    threshold: float = 0.5
    folds: int = 5
    n_lambda: int = 100
    tolerance: float = 1e-8
    max_iterations: int = 100_000

    def __post_init__(self) -> None:
        if self.eb_kind not in ("eb-sa", "eb-em"):
            raise ValueError("eb_kind must be eb-sa or eb-em")

    @property
    def solver(self) -> SolverConfig:
        return SolverConfig(self.tolerance, self.max_iterations)

    def chain(self, seed: int, stream: int) -> ChainConfig:
        return ChainConfig(self.burn_in, self.kept, self.thin, seed, stream)

    def mode(self, **kw) -> PenaltyMode:
        return PenaltyMode(r=self.r, delta=self.delta, **kw)


@dataclass
class MethodScore:
    correct: Optional[bool] = None
    excluded: Optional[int] = None
    pse: Optional[float] = None
    error: Optional[str] = None


def _check_methods(spec: ScenarioSpec, methods: Sequence[str]) -> list[str]:
    methods = list(dict.fromkeys(methods))
    if not methods:
        raise ValueError("at least one method is required")
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown method(s) {unknown}; choose from {METHODS}")
    grouped = spec.scenario in ("ex8", "ex9")
    for m in methods:
        if grouped != (m in _GROUP):
            raise ValueError(f"method {m!r} is not available for scenario {spec.scenario}")
        if m == "cap" and spec.scenario != "ex9":
            raise ValueError("cap needs an ancestry structure (scenario ex9)")
        if spec.scenario == "ex7" and m in ("lasso", "alasso", "blasso", "bma"):
            raise ValueError(f"method {m!r} is only implemented for Gaussian scenarios")
        if m in _PREDICT_ONLY and not spec.n_test:
            raise ValueError(f"method {m!r} needs a prediction set (n_test > 0)")
    return methods


def _score_selection(truth: SparsityPattern, pattern: SparsityPattern) -> tuple[bool, int]:
    diff = [i for i in range(len(truth)) if truth.bits[i] != pattern.bits[i]]
    return not diff, pattern.n_excluded


def run_replication(
    spec: ScenarioSpec,
    rep: int,
    methods: Sequence[str],
    settings: ExperimentSettings = ExperimentSettings(),
    chain_dir: Optional[Path] = None,
) -> dict[str, MethodScore]:
    """Fit every method on replication ``rep``; failures are captured per method."""
    methods = _check_methods(spec, methods)
    base = RngHandle(spec.seed, rep)
    data = generate_dataset(spec, rep, base.child(0))
    cfg = settings.solver
    scores: dict[str, MethodScore] = {}
    chains: dict[str, object] = {}

    def chain_cfg(k: int) -> ChainConfig:
        return settings.chain(spec.seed, base.child(k).stream)

    def keep(name, store):
        chains[name] = store
        if chain_dir is not None:
            from .persistence import save_chain

            save_chain(store, Path(chain_dir) / f"rep{rep:04d}_{name}")
        return store

    if data.likelihood == "logistic":
        target = fit_logistic_mle(data.train)
        kernel = GaussianKernel(target.precision, target.precision @ target.beta, sample_sigma2=False)
        likelihood = "lsa"
    elif spec.scenario in ("ex8", "ex9"):
        centred = standardize(data.train, "center")
        target = fit_linear_lsa(centred)
    else:
        centred = standardize(data.train, "center")
        target = centred
        kernel = GaussianKernel.from_data(centred)
        likelihood = "linear"

    def test_pred(beta):
        X = centred.transform_X(data.test.X)
        return centred.y_mean + X @ beta

    def attempt(name, fn):
        try:
            scores[name] = fn()
        except _FAILURES as exc:
            scores[name] = MethodScore(error=f"{type(exc).__name__}: {exc}")

    main = None
    modes = None

    def main_chain():
        nonlocal main
        if main is None:
            main = keep("hierarchical", run_chain(
                kernel, settings.mode(), chain_cfg(1),
                data_id=data.train.fingerprint(), likelihood=likelihood,
            ))
        return main

    def main_modes():
        nonlocal modes
        if modes is None:
            modes = conditional_modes(main_chain(), target, cfg)
        return modes

    def selection(res):
        ok, excl = _score_selection(data.truth, res.pattern)
        pse = compute_pse(test_pred(res.beta), data.test.y) if data.test is not None else None
        return MethodScore(ok, excl, pse)

    for m in methods:
        if m in ("median", "mean"):
            attempt(m, lambda m=m: selection(select_point(main_chain(), target, m, cfg)))
        elif m == "freq":
            attempt(m, lambda: selection(
                select_freq(main_chain(), target, settings.threshold, cfg, modes=main_modes())
            ))
        elif m == "eb":
            def eb():
                store = keep("eb", run_chain(
                    kernel, settings.mode(kind=settings.eb_kind), chain_cfg(2),
                    data_id=data.train.fingerprint(), likelihood=likelihood,
                ))
                return selection(select_point(store, target, "eb-point", cfg))
            attempt(m, eb)
        elif m == "bma":
            attempt(m, lambda: MethodScore(pse=compute_pse(
                centred.y_mean + predict_bma(
                    main_chain(), target, centred.transform_X(data.test.X), cfg, modes=main_modes()
                ),
                data.test.y,
            )))
        elif m == "blasso":
            def blasso():
                store = keep("blasso", run_chain(
                    kernel, settings.mode(shared=True), chain_cfg(3),
                    data_id=data.train.fingerprint(), likelihood=likelihood,
                ))
                pred = predict_bma(store, target, centred.transform_X(data.test.X), cfg)
                return MethodScore(pse=compute_pse(centred.y_mean + pred, data.test.y))
            attempt(m, blasso)
        elif m in ("lasso", "alasso"):
            def baseline(m=m):
                rng = base.child(10).generator
                fn = lasso_cv if m == "lasso" else adaptive_lasso_cv
                fit = fn(centred, rng, folds=settings.folds, n_lambda=settings.n_lambda, cfg=cfg)
                pattern = SparsityPattern.from_beta(fit.beta)
                ok, excl = _score_selection(data.truth, pattern)
                pse = compute_pse(test_pred(fit.beta), data.test.y) if data.test is not None else None
                return MethodScore(ok, excl, pse)
            attempt(m, baseline)
        elif m in _GROUP:
            def grouped(m=m):
                structure = data.structure if m == "cap" else None
                store = keep(m, run_chain_group(
                    target, data.groups, settings.mode(), chain_cfg(4 if m == "group" else 5),
                    structure=structure,
                ))
                res = select_group(store, target, data.groups, "mean", cfg, structure=structure)
                ok, excl = _score_selection(data.truth, res.pattern)
                return MethodScore(ok, excl)
            attempt(m, grouped)
    return scores


@dataclass
class ReportRow:
    scenario: str
    method: str
    reps: int
    failures: int
    correct: Optional[int] = None
    correct_se: Optional[float] = None
    excluded_mean: Optional[float] = None
    excluded_se: Optional[float] = None
    pse_mean: Optional[float] = None
    pse_se: Optional[float] = None

    @property
    def completed(self) -> int:
        return self.reps - self.failures


@dataclass
class ReportTable:
    spec: ScenarioSpec
    settings: ExperimentSettings
    rows: list[ReportRow]
    scores: list[dict[str, MethodScore]] = field(default_factory=list, repr=False)
    elapsed: float = 0.0

    def row(self, method: str) -> ReportRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def to_csv(self, path) -> Path:
        path = Path(path)
        names = [f for f in ReportRow.__dataclass_fields__]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for r in self.rows:
                w.writerow(["" if getattr(r, k) is None else getattr(r, k) for k in names])
        return path

    def to_text(self) -> str:
        s = self.spec
        lines = [
            f"scenario {s.scenario}: n={s.n} sigma={s.sigma} n_test={s.n_test} "
            f"reps={s.reps} seed={s.seed}",
            f"{'method':<8} {'ok':>4} {'fail':>4} {'correct (se)':>16} "
            f"{'excluded (se)':>16} {'PSE (se)':>20}",
        ]
        for r in self.rows:
            c = "-" if r.correct is None else f"{r.correct} ({r.correct_se:.1f})"
            z = "-" if r.excluded_mean is None else f"{r.excluded_mean:.2f} ({r.excluded_se:.2f})"
            e = "-" if r.pse_mean is None else f"{r.pse_mean:.4f} ({r.pse_se:.4f})"
            lines.append(f"{r.method:<8} {r.completed:>4} {r.failures:>4} {c:>16} {z:>16} {e:>20}")
        return "\n".join(lines)

    def digest(self) -> str:
        blob = json.dumps([asdict(r) for r in self.rows], sort_keys=True)
        return config_hash({"rows": blob})


def _mean_se(v) -> tuple[Optional[float], Optional[float]]:
    v = np.asarray(v, float)
    if v.size == 0:
        return None, None
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def _aggregate(spec, methods, scores) -> list[ReportRow]:
    rows = []
    for m in methods:
        ok = [s[m] for s in scores if s[m].error is None]
        row = ReportRow(spec.scenario, m, len(scores), len(scores) - len(ok))
        if ok and ok[0].correct is not None:
            hits = np.array([s.correct for s in ok], float)
            row.correct = int(hits.sum())
            # binomial s.e. on the count scale
            row.correct_se = float(np.sqrt(hits.size * hits.mean() * (1 - hits.mean())))
            row.excluded_mean, row.excluded_se = _mean_se([s.excluded for s in ok])
        if ok and ok[0].pse is not None:
            row.pse_mean, row.pse_se = _mean_se([s.pse for s in ok])
        rows.append(row)
    return rows


def _rep_task(args):
    spec, rep, methods, settings, chain_dir = args
    return run_replication(spec, rep, methods, settings, chain_dir)


def run_experiment(
    spec: ScenarioSpec,
    methods: Sequence[str],
    out_path=None,
    settings: ExperimentSettings = ExperimentSettings(),
    workers: int = 1,
    save_chains: bool = False,
    progress=None,
) -> ReportTable:
    """Run ``spec.reps`` replications and aggregate.

    Each replication owns the RNG streams derived from ``(spec.seed, rep)``,
    so the table does not depend on ``workers``.  With ``out_path`` the
    directory receives ``report.csv``, ``report.txt``, ``replicates.csv`` and
    ``meta.txt`` (plus ``chains/`` when ``save_chains``).
    """
    methods = _check_methods(spec, methods)
    out = Path(out_path) if out_path is not None else None
    chain_dir = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if save_chains:
            chain_dir = out / "chains"
    t0 = time.perf_counter()
    tasks = [(spec, r, methods, settings, chain_dir) for r in range(spec.reps)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            scores = list(ex.map(_rep_task, tasks))
    else:
        scores = []
        for t in tasks:
            scores.append(_rep_task(t))
            if progress is not None:
                progress(len(scores), spec.reps)
    table = ReportTable(spec, settings, _aggregate(spec, methods, scores), scores)
    table.elapsed = time.perf_counter() - t0
    if out is not None:
        _write_outputs(table, methods, out)
    return table


def _write_outputs(table: ReportTable, methods, out: Path) -> None:
    table.to_csv(out / "report.csv")
    (out / "report.txt").write_text(table.to_text() + "\n")
    with (out / "replicates.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rep", "method", "correct", "excluded", "pse", "error"])
        for r, s in enumerate(table.scores):
            for m in methods:
                sc = s[m]
                w.writerow([
                    r, m,
                    "" if sc.correct is None else int(sc.correct),
                    "" if sc.excluded is None else sc.excluded,
                    "" if sc.pse is None else repr(sc.pse),
                    sc.error or "",
                ])
    config = {"spec": table.spec.to_dict(), "settings": asdict(table.settings), "methods": list(methods)}
    meta = {
        "config": config,
        "config_hash": config_hash(config),
        "seed": table.spec.seed,
        "software_version": __version__,
        "failures": {r.method: r.failures for r in table.rows},
        "elapsed_seconds": round(table.elapsed, 3),
        "report_digest": table.digest(),
    }
    (out / "meta.txt").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
