"""Command-line entry point: ``bideepkriging <subcommand> --config PATH [--seed N] [--workers N] [--out DIR]``.

Exit codes: 0 success, 2 usage/config/input errors, 3 numerical or runtime failures.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import __version__
from . import cokriging as ck
from . import deepkriging as dk
from . import metrics
from . import uncertainty as uq
from .config import CONFIGS, schema
from .covariance import CovarianceModel
from .errors import DeepKrigingError, NumericError
from .nn import dump_document, load_document
from .simulate import generate, replicate_seed
from .spatial import (CSV_HEADER, BivariateObservations, SiteSet, SplitSpec, read_csv, read_sites,
                      read_table, split_indices, write_csv, write_rows)

log = logging.getLogger("bideepkriging")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    """Bad input detected by the command layer (missing file, mismatched inputs)."""


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


class Run:
    """Shared state of one invocation: resolved config, output directory, produced files."""

    def __init__(self, name: str, cfg, base: Path, out: Path, workers: int):
        self.name, self.cfg, self.base, self.out, self.workers = name, cfg, base, out, workers
        self.outputs: list[tuple[str, bool]] = []
        self.inputs: list[Path] = []

    def path(self, p: str) -> Path:
        q = Path(p)
        q = q if q.is_absolute() else self.base / q
        if not q.exists():
            raise UsageError(f"input file not found: {p}")
        self.inputs.append(q)
        return q

    def output(self, name: str, volatile: bool = False) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs.append((name, volatile))
        return self.out / name

    def manifest(self):
        resolved = self.cfg.model_dump(mode="json")
        _write_json(self.out / "manifest.json", {
            "tool": "bideepkriging",
            "version": __version__,
            "subcommand": self.name,
            "seed": self.cfg.seed,
            "workers": self.workers,
            "config": resolved,
            "config_sha256": hashlib.sha256(_canonical(resolved).encode()).hexdigest(),
            "inputs": {str(p.relative_to(self.base)) if p.is_relative_to(self.base) else str(p): _sha256(p)
                       for p in self.inputs},
            "outputs": {n: (None if vol else _sha256(self.out / n)) for n, vol in self.outputs},
        })


# --- workflows ---------------------------------------------------------------

def cmd_simulate(run: Run):
    cfg = run.cfg
    scenario = cfg.scenario.build(cfg.seed)
    tf = cfg.split.test_fraction
    for r, obs in enumerate(generate(scenario)):
        stem = f"replicate_{r:03d}"
        write_csv(run.output(f"{stem}.csv"), obs)
        if tf is not None:
            split_seed = int(replicate_seed(cfg.seed, r).generate_state(1)[0])
            tr, te = split_indices(len(obs), SplitSpec(split_seed, [1.0 - tf, tf]))
            write_csv(run.output(f"{stem}_train.csv"), obs.take(tr))
            write_csv(run.output(f"{stem}_test.csv"), obs.take(te))
    print(f"wrote {scenario.replicates} replicate(s) of {len(scenario.sites())} sites to {run.out}")


def cmd_fit(run: Run):
    cfg = run.cfg
    obs = read_csv(run.path(cfg.data))
    path = run.output("model.json")
    if cfg.method == "deepkriging":
        spec = cfg.deepkriging
        basis, arch, tcfg = spec.resolve(cfg.seed)
        model = dk.fit(obs, None, basis, arch, tcfg, spec.mode)
        model.save(path)
        print(f"fitted {spec.mode} DeepKriging on {len(obs)} sites ({basis.n_basis} basis functions)")
        return
    spec = cfg.cokriging
    if spec.covariance is not None:
        cov, info = CovarianceModel.from_dict(spec.covariance), {"fitted": False}
    else:
        res = ck.fit_mle(spec.family, obs, budget=spec.budget, fit_nugget=spec.fit_nugget,
                         subsample=spec.subsample, seed=cfg.seed)
        cov = res.model
        info = {"fitted": True, "nll": res.nll, "init_nll": res.init_nll, "n_evals": res.n_evals,
                "converged": res.converged}
    ck.fit_cokriging(cov, obs)
    dump_document(path, "cokriging", {"covariance": cov.to_dict(), "mle": info,
                                      "coords": obs.sites.coords.tolist(),
                                      "z1": obs.z1.tolist(), "z2": obs.z2.tolist()})
    print(f"fitted {cov.kind} cokriging on {len(obs)} sites")


def _model_kind(path: Path) -> str:
    try:
        doc = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError):
        doc = None
    kind = doc.get("kind") if isinstance(doc, dict) else None
    if kind not in ("deepkriging", "cokriging"):
        # let the loader raise its format or version error
        load_document(path, "deepkriging")
    return kind


def cmd_predict(run: Run):
    cfg = run.cfg
    mpath = run.path(cfg.model)
    sites = read_sites(run.path(cfg.sites))
    kind = _model_kind(mpath)
    if kind == "deepkriging":
        model = dk.DeepKrigingModel.load(mpath)
        if cfg.basis is not None and cfg.basis.build() != model.basis:
            raise UsageError("the configured basis differs from the basis the model was trained with")
        pred = dk.predict(model, sites)
    else:
        if cfg.basis is not None:
            raise UsageError("a cokriging model has no basis configuration")
        doc = load_document(mpath, "cokriging")
        obs = BivariateObservations(SiteSet(np.array(doc["coords"])), np.array(doc["z1"]), np.array(doc["z2"]))
        model = ck.fit_cokriging(CovarianceModel.from_dict(doc["covariance"]), obs)
        pred, _ = ck.cokrige_predict(model, sites, include_nugget=cfg.include_nugget)
    write_rows(run.output("predictions.csv"), CSV_HEADER, [sites.x, sites.y, pred[:, 0], pred[:, 1]])
    print(f"predicted {len(sites)} sites with a {kind} model")


def cmd_interval(run: Run):
    cfg = run.cfg
    spec = cfg.ensemble
    obs = read_csv(run.path(cfg.data))
    sites = read_sites(run.path(cfg.sites))
    basis, arch, tcfg = spec.resolve(cfg.seed)
    fit = uq.fit_intervals(obs, basis, arch, tcfg, spec.B, spec.L0, cfg.seed, spec.d11_fraction, run.workers)
    rep = uq.interval(fit.ensemble, fit.residuals, sites, spec.G, spec.alpha)
    rep.to_csv(run.output("intervals.csv"))
    dump_document(run.output("ensemble.json"), "ensemble", {
        "ensemble": fit.ensemble.to_dict(),
        "residuals": {"coords": fit.residuals.sites.coords.tolist(), "r2": fit.residuals.r2.tolist()}})
    print(f"{len(sites)} intervals at alpha={spec.alpha} with B={spec.B}, df={rep.df}")


def cmd_evaluate(run: Run):
    cfg = run.cfg
    truth = read_csv(run.path(cfg.truth))
    if cfg.predictions is not None:
        pred = read_csv(run.path(cfg.predictions))
        coords, mean, lo, hi = pred.sites.coords, pred.Z, None, None
    else:
        header, a = read_table(run.path(cfg.intervals))
        if header != uq.INTERVAL_HEADER:
            raise UsageError(f"interval file header must be {','.join(uq.INTERVAL_HEADER)}")
        coords, mean = a[:, :2], a[:, [2, 5]]
        lo, hi = a[:, [3, 6]], a[:, [4, 7]]
    if coords.shape != truth.sites.coords.shape or not np.allclose(coords, truth.sites.coords, rtol=0, atol=1e-12):
        raise UsageError("prediction sites do not match the truth sites row by row")
    report = metrics.evaluate(cfg.method, truth.Z, mean, lo, hi)
    _write_json(run.output("evaluation.json"), report.to_dict())
    line = f"{cfg.method}: RMSPE {report.rmspe[0]:.4f} / {report.rmspe[1]:.4f}"
    if report.picp is not None:
        line += (f"  PICP {report.picp[0]:.3f} / {report.picp[1]:.3f}"
                 f"  MPIW {report.mpiw[0]:.3f} / {report.mpiw[1]:.3f}")
    print(line)


def cmd_bench(run: Run):
    cfg = run.cfg
    factories = {"cokriging": metrics.cokriging_workload(cfg.mle_evals, cfg.n_test, cfg.seed),
                 "deepkriging": metrics.deepkriging_workload(cfg.profile, cfg.n_test, cfg.seed)}
    res = metrics.bench_scaling({m: factories[m] for m in cfg.methods}, cfg.sizes, cfg.repeats,
                                cfg.timeout, run.workers)
    _write_json(run.output("bench.json", volatile=True), res.to_dict())
    rows = res.rows()
    with run.output("bench.csv", volatile=True).open("w") as fh:
        fh.write("method,n,seconds,censored\n")
        for m, n, t, c in rows:
            fh.write(f"{m},{n},{'' if t is None else repr(t)},{int(c)}\n")
    print(f"{'method':<12}{'N':>7}{'seconds':>12}")
    for m, n, t, c in rows:
        print(f"{m:<12}{n:>7}{'skipped' if t is None else f'{t:.3f}':>12}{' (censored)' if c else ''}")
    for m in res.times:
        print(f"{m}: log-log slope {res.slope(m):.2f}")


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict,
            "interval": cmd_interval, "evaluate": cmd_evaluate, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bideepkriging", description="Bivariate spatial prediction workflows.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} workflow")
        p.add_argument("--config", required=True, type=Path, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--workers", type=int, default=None, help="worker processes (default: CPU count)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("schema", help="print the JSON schema of every config")
    return parser


def _load_config(name: str, path: Path, seed: int | None):
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: the config must be a JSON object")
    if seed is not None:
        raw["seed"] = seed
    return CONFIGS[name].model_validate(raw)


def _format_validation(exc: ValidationError) -> str:
    lines = []
    for e in exc.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"  {loc}: {e['msg']}")
    return "invalid config:\n" + "\n".join(lines)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "schema":
        print(json.dumps(schema(), sort_keys=True, indent=2))
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
    if workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = _load_config(args.command, args.config, args.seed)
        run = Run(args.command, cfg, args.config.resolve().parent, args.out, workers)
        COMMANDS[args.command](run)
        run.manifest()
    except ValidationError as exc:
        print(f"error: {_format_validation(exc)}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DeepKrigingError as exc:
        # configuration, argument and model-format errors
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
