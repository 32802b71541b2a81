"""Command-line entry point: ``rfo <command> [--config PATH] [--seed U64] [--workers INT] [--out DIR]``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error,
3 acceptance check failed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .checks import gaussian_check, gradient_variance_growth, oracle_check
from .config import ConfigError, dumps_resolved, load_file, resolve
from .contour import contour_analysis, contour_report, surgery
from .ensemble import (
    ExperimentSpec,
    run_ensemble,
    stats_to_dict,
    sweep_parameter,
    write_realizations_csv,
    write_summary_json,
)
from .fields import BoundaryCondition, ModelParams, disorder_from_values, sample_disorder
from .groundstate import ordering_projection_profile, relax_multistart
from .io import read_snapshot, write_snapshot
from .lattice import build_lattice
from .sampler import ChainConfig

log = logging.getLogger("rfo")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2, 3
COMMANDS = ("simulate", "groundstate", "contours", "oracle-check", "gaussian-check")


class CheckFailed(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# config -> objects


def _params(cfg: dict) -> ModelParams:
    m = dict(cfg["model"])
    b = m.pop("boundary")
    m.pop("dist")
    vector = b["vector"]
    if vector is None and b["kind"] != "free":
        vector = [1.0] + [0.0] * (m["n"] - 1)
    bc = BoundaryCondition(b["kind"], None if vector is None else tuple(vector), b["strength"])
    try:
        return ModelParams(boundary=bc, **m)
    except ValueError as exc:
        raise ConfigError(str(exc), path="model") from None


def _chain(cfg: dict) -> ChainConfig:
    c = dict(cfg["chain"])
    c["observables"] = tuple(c["observables"])
    c["z"] = None if c["z"] is None else tuple(c["z"])
    try:
        return ChainConfig(**c)
    except ValueError as exc:
        raise ConfigError(str(exc), path="chain") from None


def _geometry(cfg: dict):
    lat = cfg["lattice"]
    try:
        return build_lattice(lat["d"], lat["N"], lat["periodic"])
    except ValueError as exc:
        raise ConfigError(str(exc), path="lattice") from None


def _spec(cfg: dict) -> ExperimentSpec:
    exp = cfg["experiment"]
    _geometry(cfg)
    try:
        return ExperimentSpec(
            d=cfg["lattice"]["d"],
            N=cfg["lattice"]["N"],
            params=_params(cfg),
            chain=_chain(cfg),
            realizations=exp["realizations"],
            chains=exp["chains"],
            master=exp["seed"],
            dist=cfg["model"]["dist"],
            periodic=cfg["lattice"]["periodic"],
            trend_sigma=exp["trend_sigma"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc), path="experiment") from None


# ---------------------------------------------------------------------------
# commands; each returns the list of files it wrote (relative to out)


def cmd_simulate(cfg: dict, out: Path, workers: int) -> list[str]:
    spec = _spec(cfg)
    sweep = cfg["sweep"]
    files = []
    if sweep["parameter"] is not None:
        if not sweep["values"]:
            raise ConfigError("sweep needs a non-empty value list", path="sweep.values")
        try:
            results = sweep_parameter(spec, sweep["parameter"], sweep["values"], workers)
        except ValueError as exc:
            raise ConfigError(str(exc), path="sweep.parameter") from None
        summary = []
        for i, (value, stats) in enumerate(results):
            name = f"realizations_{i:02d}.csv"
            write_realizations_csv(out / name, stats, __version__, {sweep["parameter"]: value})
            files.append(name)
            summary.append({"parameter": sweep["parameter"], "value": value, "file": name, **stats_to_dict(stats)})
        payload = {"version": __version__, "master": spec.master, "sweep": summary}
    else:
        stats = run_ensemble(spec, workers)
        write_realizations_csv(out / "realizations.csv", stats, __version__)
        files.append("realizations.csv")
        payload = {"version": __version__, **stats_to_dict(stats)}
    write_summary_json(out / "summary.json", payload)
    return [*files, "summary.json"]


def cmd_groundstate(cfg: dict, out: Path, workers: int) -> list[str]:
    geom = _geometry(cfg)
    params = _params(cfg)
    gs = cfg["groundstate"]
    master = cfg["experiment"]["seed"]
    alpha = sample_disorder(geom, params.k, seed=(master, gs["realization"]), dist=cfg["model"]["dist"])
    reports = relax_multistart(alpha, params, geom, gs["starts"], master, gs["realization"], gs["tol"], gs["max_sweeps"], workers)
    best = int(np.argmin([r.energy for r in reports]))
    write_snapshot(out / "spins.csv", reports[best].spins, geom, "spins")
    write_snapshot(out / "disorder.csv", alpha.values, geom, "disorder")
    with open(out / "energies.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["start", "sweep", "energy"])
        for i, r in enumerate(reports):
            for t, e in enumerate(r.energies):
                w.writerow([i, t, repr(float(e))])
    profile = ordering_projection_profile(reports[best].spins, params.k)
    payload = {
        "version": __version__,
        "master": master,
        "realization": gs["realization"],
        "best_start": best,
        "starts": [
            {"energy": r.energy, "converged": r.converged, "sweeps": r.sweeps, "grad_norm": r.grad_norm} for r in reports
        ],
        "projection_profile": profile.quantiles,
    }
    write_summary_json(out / "summary.json", payload)
    if not all(r.converged for r in reports):
        log.warning("some relaxations hit max_sweeps before reaching tol")
    return ["spins.csv", "disorder.csv", "energies.csv", "summary.json"]


def cmd_contours(cfg: dict, out: Path, workers: int) -> list[str]:
    c = cfg["contours"]
    if not c["snapshot"]:
        raise ConfigError("a spin snapshot is required (--snapshot or contours.snapshot)", path="contours.snapshot")
    try:
        spins, geom, kind = read_snapshot(c["snapshot"])
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load snapshot: {exc}", path="contours.snapshot") from None
    if kind != "spins" or spins.shape[1] != 2:
        raise ConfigError("contours need an n = 2 spin snapshot", path="contours.snapshot")
    params = _params(cfg)
    if c["disorder"]:
        values, _, _ = read_snapshot(c["disorder"])
        alpha = disorder_from_values(values)
    else:
        alpha = sample_disorder(geom, params.k, seed=(cfg["experiment"]["seed"], c["realization"]), dist=cfg["model"]["dist"])
    cs = contour_analysis(spins, geom, params, c["factor"])
    files = []
    with open(out / "bad_boxes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*[f"anchor{a}" for a in range(geom.d)], "reason", "energy", "threshold", "psi"])
        for r in cs.bad:
            w.writerow([*r.box.anchor, r.reason, repr(r.energy), repr(r.threshold), repr(r.psi)])
    files.append("bad_boxes.csv")
    surgeries = []
    for i, ct in enumerate(cs.contours):
        if c["surgery"] and ct.failure is None:
            res = surgery(spins, ct, alpha, params, geom)
            name = f"surgery_{i:02d}.csv"
            write_snapshot(out / name, res.spins, geom, "spins")
            files.append(name)
            surgeries.append(res)
        else:
            surgeries.append(None)
    payload = {"version": __version__, "snapshot": str(c["snapshot"]), "bad_box_count": len(cs.bad), **contour_report(cs, surgeries)}
    write_summary_json(out / "contours.json", payload)
    return [*files, "contours.json"]


def cmd_oracle_check(cfg: dict, out: Path, workers: int) -> list[str]:
    o = cfg["oracle"]
    cells = oracle_check(
        shapes=[tuple(s) for s in o["shapes"]],
        betas=o["betas"],
        epss=o["eps_values"],
        seeds=o["seeds"],
        sweeps=o["sweeps"],
        therm=o["therm_sweeps"],
        master=cfg["experiment"]["seed"],
        points=o["points"],
        block_eps=o["block_eps"],
    )
    with open(out / "cells.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["shape", "beta", "eps", "seed", "observable", "estimate", "stderr", "exact", "z", "ok"])
        for cell in cells:
            w.writerow(
                ["x".join(map(str, cell.shape)), repr(cell.beta), repr(cell.eps), cell.seed, cell.observable,
                 repr(cell.estimate), repr(cell.stderr), repr(cell.exact), repr(cell.z), int(cell.ok(o["nsigma"]))]
            )
    frac = float(np.mean([cell.ok(o["nsigma"]) for cell in cells]))
    passed = frac >= o["min_fraction"]
    write_summary_json(out / "summary.json", {"version": __version__, "cells": len(cells), "fraction_within": frac, "passed": passed})
    print(f"oracle-check: {frac:.3f} of {len(cells)} cells within {o['nsigma']} stderr -> {'PASS' if passed else 'FAIL'}")
    if not passed:
        raise CheckFailed(f"only {frac:.3f} of cells within tolerance")
    return ["cells.csv", "summary.json"]


def cmd_gaussian_check(cfg: dict, out: Path, workers: int) -> list[str]:
    g = cfg["gaussian"]
    master = cfg["experiment"]["seed"]
    comps = gaussian_check(g["N"], g["eps_values"], g["beta"], g["draws"], master, g["nsigma"])
    grads = gradient_variance_growth(g["gradient_N"], g["gradient_eps"], g["draws"], master)
    with open(out / "covariance.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eps", "entries", "outside", "fraction", "max_z"])
        for c in comps:
            w.writerow([repr(c.eps), c.entries, c.outside, repr(c.fraction), repr(c.max_z)])
    with open(out / "gradient.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["N", "exact", "sampled", "stderr"])
        for r in grads:
            w.writerow([r.N, repr(r.exact), repr(r.sampled), repr(r.stderr)])
    cov_ok = all(c.fraction >= g["min_fraction"] for c in comps)
    grow_ok = all(b.sampled > a.sampled and b.exact > a.exact for a, b in zip(grads, grads[1:]))
    passed = cov_ok and grow_ok
    write_summary_json(
        out / "summary.json",
        {"version": __version__, "covariance_ok": cov_ok, "gradient_growth_ok": grow_ok, "passed": passed},
    )
    print(f"gaussian-check: covariance {'ok' if cov_ok else 'FAIL'}, gradient growth {'ok' if grow_ok else 'FAIL'}")
    if not passed:
        raise CheckFailed("gaussian model check failed")
    return ["covariance.csv", "gradient.csv", "summary.json"]


HANDLERS = {
    "simulate": cmd_simulate,
    "groundstate": cmd_groundstate,
    "contours": cmd_contours,
    "oracle-check": cmd_oracle_check,
    "gaussian-check": cmd_gaussian_check,
}


# ---------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg: dict, workers: int, started: str, files: list[str]) -> None:
    manifest = {
        "command": command,
        "config": cfg,
        "master_seed": cfg["experiment"]["seed"],
        "workers": workers,
        "version": __version__,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "outputs": files,
        "checksums": {f: _sha256(out / f) for f in files},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON experiment file (env RFO_CONFIG)")
    common.add_argument("--seed", type=int, help="master seed, overrides experiment.seed (env RFO_SEED)")
    common.add_argument("--workers", type=int, help="process pool size (env RFO_WORKERS, default 1)")
    common.add_argument("--out", help="output directory (env RFO_OUT, default rfo-<command>)")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="rfo", description="Random-field O(n) model experiments.")
    p.add_argument("--version", action="version", version=f"rfo {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "contours":
            sp.add_argument("--snapshot", help="spin snapshot CSV to analyse")
            sp.add_argument("--disorder", help="disorder snapshot CSV (default: derived from the seed)")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    env = os.environ
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    try:
        config_path = args.config or env.get("RFO_CONFIG")
        data, text, fmt, source = {}, "", "toml", None
        if config_path:
            data, text, fmt = load_file(config_path)
            source = str(config_path)
        overrides = {}
        seed = args.seed if args.seed is not None else env.get("RFO_SEED")
        if seed is not None:
            try:
                overrides["experiment.seed"] = int(seed)
            except ValueError:
                raise ConfigError(f"seed must be an integer, got {seed!r}", path="experiment.seed") from None
        if args.command == "contours":
            if args.snapshot:
                overrides["contours.snapshot"] = args.snapshot
            if args.disorder:
                overrides["contours.disorder"] = args.disorder
        cfg = resolve(data, text, fmt, source, args.command, env, overrides)
        if cfg["experiment"]["seed"] < 0 or cfg["experiment"]["seed"] >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer", path="experiment.seed")
        workers = args.workers if args.workers is not None else int(env.get("RFO_WORKERS", "1"))
        if workers < 1:
            raise ConfigError("workers must be >= 1", path="workers")
        out = Path(args.out or env.get("RFO_OUT") or f"rfo-{args.command}")
        out.mkdir(parents=True, exist_ok=True)
        log.info("resolved config:\n%s", dumps_resolved(cfg))
        files = HANDLERS[args.command](cfg, out, workers)
        write_manifest(out, args.command, cfg, workers, started, files)
    except ConfigError as exc:
        print(f"rfo: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckFailed as exc:
        if "out" in locals() and "cfg" in locals():
            files = sorted(p.name for p in out.iterdir() if p.is_file() and p.name != "manifest.json")
            write_manifest(out, args.command, cfg, workers, started, files)
        print(f"rfo: check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 1
        log.debug("runtime failure", exc_info=True)
        print(f"rfo: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
