"""Disorder averages of Gibbs expectations over many realizations and chains."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .fields import CHAIN_STREAM, ModelParams, derive_rng, sample_disorder
from .lattice import build_lattice
from .sampler import ChainConfig, run_chain
from .stats import blocking_stderr

SWEEPABLE = ("beta", "eps", "N", "xi")
TREND_OBSERVABLE = "energy_density"


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to reproduce one disorder-averaged experiment.

    Realization ``i`` draws its field from ``(master, i)`` and chain ``c`` of
    it runs on the stream ``(master, CHAIN_STREAM, i, c)``; a chain whose
    energy density drifts by more than ``trend_sigma`` standard errors
    between the two halves of its measurement window fails the realization.
    """

    d: int
    N: int
    params: ModelParams = field(default_factory=ModelParams)
    chain: ChainConfig = field(default_factory=ChainConfig)
    realizations: int = 8
    chains: int = 1
    master: int = 0
    dist: str = "gaussian"
    periodic: bool = False
    trend_sigma: float = 5.0

    def __post_init__(self):
        if self.realizations < 1 or self.chains < 1:
            raise ValueError("need at least one realization and one chain")
        if not self.chain.observables:
            raise ValueError("no observables requested")


@dataclass
class RealizationResult:
    index: int
    mean: dict[str, float]
    stderr: dict[str, float]
    acceptance: float
    failed: bool = False
    reason: str | None = None


@dataclass(frozen=True)
class ObservableStats:
    mean: float
    between: float
    within: float
    count: int

    @property
    def combined(self) -> float:
        return math.hypot(self.between, self.within)


@dataclass
class EnsembleStats:
    observables: dict[str, ObservableStats]
    table: list[RealizationResult] = field(repr=False)
    failures: int
    master: int

    def __getitem__(self, name: str) -> ObservableStats:
        return self.observables[name]


def energy_trend_failure(series: np.ndarray, sigma: float) -> str | None:
    """Reason string when the two halves of a series disagree by more than ``sigma`` errors."""
    half = len(series) // 2
    if half < 2:
        return None
    a, b = series[:half], series[half : 2 * half]
    err = math.hypot(blocking_stderr(a), blocking_stderr(b))
    diff = abs(float(a.mean() - b.mean()))
    if err == 0.0:
        return None if diff == 0.0 else f"energy trend {diff:.3g} with zero error"
    if diff > sigma * err:
        return f"energy trend {diff / err:.1f} sigma"
    return None


def run_realization(spec: ExperimentSpec, index: int) -> RealizationResult:
    geom = build_lattice(spec.d, spec.N, spec.periodic)
    alpha = sample_disorder(geom, spec.params.k, seed=(spec.master, index), dist=spec.dist)
    names = spec.chain.observables
    chain = spec.chain
    if TREND_OBSERVABLE not in names:
        chain = replace(chain, observables=(*names, TREND_OBSERVABLE))
    means, errs, acc = [], [], []
    reason = None
    for c in range(spec.chains):
        res = run_chain(geom, alpha, spec.params, chain, derive_rng(spec.master, CHAIN_STREAM, index, c))
        means.append(res.mean)
        errs.append(res.stderr)
        acc.append(res.acceptance)
        if reason is None and spec.params.beta > 0:
            why = energy_trend_failure(res.series[TREND_OBSERVABLE], spec.trend_sigma)
            if why:
                reason = f"chain {c}: {why}"
    C = spec.chains
    mean = {n: float(np.mean([m[n] for m in means])) for n in names}
    stderr = {n: math.sqrt(sum(e[n] ** 2 for e in errs)) / C for n in names}
    return RealizationResult(index, mean, stderr, float(np.mean(acc)), reason is not None, reason)


def _job(args):
    spec, index = args
    try:
        return run_realization(spec, index)
    except (ValueError, RuntimeError, FloatingPointError) as exc:
        return RealizationResult(index, {}, {}, float("nan"), True, f"{type(exc).__name__}: {exc}")


def aggregate(table: list[RealizationResult], names, master: int) -> EnsembleStats:
    """Two-level statistics over the non-failed realizations.

    The between-realization error uses realization means only; the thermal
    error is ``sqrt(sum se_i^2) / R``.
    """
    ok = [r for r in table if not r.failed]
    R = len(ok)
    obs = {}
    for n in names:
        vals = np.array([r.mean[n] for r in ok], dtype=float)
        ses = np.array([r.stderr[n] for r in ok], dtype=float)
        if R == 0:
            obs[n] = ObservableStats(float("nan"), float("nan"), float("nan"), 0)
            continue
        between = float(vals.std(ddof=1) / math.sqrt(R)) if R > 1 else 0.0
        within = float(math.sqrt(np.sum(ses**2)) / R)
        obs[n] = ObservableStats(float(vals.mean()), between, within, R)
    return EnsembleStats(obs, table, len(table) - R, master)


def run_ensemble(spec: ExperimentSpec, workers: int = 1) -> EnsembleStats:
    """Run all realizations (in a process pool when ``workers > 1``) and aggregate.

    Results are collected in realization order, so the worker count only
    affects scheduling.
    """
    jobs = [(spec, i) for i in range(spec.realizations)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            table = list(ex.map(_job, jobs))
    else:
        table = [_job(j) for j in jobs]
    return aggregate(table, spec.chain.observables, spec.master)


def with_parameter(spec: ExperimentSpec, name: str, value) -> ExperimentSpec:
    if name == "N":
        return replace(spec, N=int(value))
    if name in ("beta", "eps", "xi"):
        return replace(spec, params=spec.params.with_(**{name: float(value)}))
    raise ValueError(f"cannot sweep {name!r}; choose from {SWEEPABLE}")


def sweep_parameter(spec: ExperimentSpec, name: str, values, workers: int = 1) -> list[tuple[float, EnsembleStats]]:
    """One ensemble per value, all sharing the master seed (common random numbers)."""
    if name not in SWEEPABLE:
        raise ValueError(f"cannot sweep {name!r}; choose from {SWEEPABLE}")
    return [(v, run_ensemble(with_parameter(spec, name, v), workers)) for v in values]


def write_realizations_csv(path, stats: EnsembleStats, version: str, extra: dict | None = None) -> None:
    """Per-realization table; the first line is a ``#`` comment with seed and version."""
    names = list(stats.observables)
    extra = extra or {}
    with open(path, "w", newline="") as fh:
        tags = " ".join(f"{k}={v}" for k, v in {"version": version, "master": stats.master, **extra}.items())
        fh.write(f"# rfo {tags}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["realization", "failed", "acceptance", *names, *[f"{n}_stderr" for n in names]])
        for r in stats.table:
            w.writerow(
                [r.index, int(r.failed), repr(r.acceptance)]
                + [repr(r.mean.get(n, float("nan"))) for n in names]
                + [repr(r.stderr.get(n, float("nan"))) for n in names]
            )


def stats_to_dict(stats: EnsembleStats) -> dict:
    return {
        "master": stats.master,
        "failures": stats.failures,
        "failed": [{"realization": r.index, "reason": r.reason} for r in stats.table if r.failed],
        "observables": {
            n: {"mean": s.mean, "between_stderr": s.between, "within_stderr": s.within, "combined_stderr": s.combined, "count": s.count}
            for n, s in stats.observables.items()
        },
    }


def write_summary_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
