"""Experiment runner: model -> patterns -> counts -> reconstruction -> analysis.

Every run is described by an :class:`ExperimentConfig`, assembled from a
named preset, an optional JSON config file and command-line overrides, in
that order.  All randomness descends from ``master_seed``; replica ``r`` of
basis ``b`` uses ``derive_seed(master_seed, r, stream)`` for its patterns and
its shot noise.  Numeric outputs (CSV/JSON) depend only on the config, so two
runs with the same config are byte-identical; wall-clock timings go to a
separate ``timings.txt``.

Exit codes: 0 success, 1 stage failure, 2 configuration error, 3 solver
non-convergence (artifacts are still written), 4 I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import seeding
from ._io import atomic_write_text
from .analysis import (
    AnalysisReport,
    FitError,
    SteeringVerdict,
    anti_diagonal_profile,
    apply_threshold,
    fit_double_gaussian,
    mse,
    mutual_information,
    profile_width,
    snr_estimate,
    steering_bound,
    steering_test,
    threshold_sweep,
    uncorrelated_profile,
)
from .measure import flux_sweep, noise_margin, simulate_measurements
from .model import Basis, BiphotonParams, GridSpec, ModelWarning, joint_pdf
from .recon import SolverConfig, normalize, solve_bpdn
from .sensing import SensingOperator, generate_patterns

__all__ = ["ExperimentConfig", "RunManifest", "PRESETS", "run_pipeline", "run_flux_sweep",
           "run_steering", "split_bases", "main"]

log = logging.getLogger(__name__)

WORKERS_ENV = "BIPHOTON_CS_WORKERS"
EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_IO = 0, 1, 2, 3, 4

DEFAULT_THRESHOLDS = tuple(round(0.02 * k, 2) for k in range(26))
DEFAULT_FLUX_GRID = tuple(float(f) for f in np.geomspace(50.0, 5e4, 8))


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment.  Widths and pitches share one length unit.

    ``flux`` is the detected pair budget per pattern per second; the
    expected total per pattern is ``flux * t_aq``.  ``pitch_k`` of ``None``
    picks the momentum pitch that mirrors the position grid
    (``pitch_x / (4 sigma_p sigma_c)``).
    """

    name: str = "custom"
    side: int = 16
    bases: tuple[str, ...] = ("position",)
    sigma_p: float = 4.0
    sigma_c: float = 0.1
    pitch_x: float = 1.0
    pitch_k: float | None = None
    m: int = 2500
    flux: float = 5000.0
    t_aq: float = 1.0
    tau: float | str = "auto"
    max_iters: int = 4000
    rel_obj_tol: float = 1e-6
    debias: bool = True
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    replicas: int = 1
    master_seed: int = 0
    flux_grid: tuple[float, ...] = DEFAULT_FLUX_GRID
    out: str = "runs"

    def __post_init__(self):
        def fail(msg):
            raise ConfigError(msg)

        object.__setattr__(self, "bases", tuple(Basis(b).value for b in self.bases))
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        object.__setattr__(self, "flux_grid", tuple(float(f) for f in self.flux_grid))
        if not self.bases or len(set(self.bases)) != len(self.bases):
            fail("bases must be a non-empty list without repeats")
        if self.side < 1:
            fail("side must be >= 1")
        if self.m < 1:
            fail("m must be >= 1")
        if self.replicas < 1:
            fail("replicas must be >= 1")
        if self.master_seed < 0:
            fail("master_seed must be nonnegative")
        for key in ("sigma_p", "sigma_c", "pitch_x", "flux", "t_aq", "rel_obj_tol"):
            if not getattr(self, key) > 0:
                fail(f"{key} must be positive")
        if self.pitch_k is not None and not self.pitch_k > 0:
            fail("pitch_k must be positive")
        if self.max_iters < 1:
            fail("max_iters must be >= 1")
        if self.tau != "auto" and not (isinstance(self.tau, (int, float)) and self.tau > 0):
            fail(f"tau must be positive or 'auto', got {self.tau!r}")
        th = self.thresholds
        if not th or any(not 0 <= t <= 1 for t in th) or any(b <= a for a, b in zip(th, th[1:])):
            fail("thresholds must be strictly ascending fractions in [0, 1]")
        fg = self.flux_grid
        if any(not f > 0 for f in fg) or any(b <= a for a, b in zip(fg, fg[1:])):
            fail("flux_grid must be strictly ascending and positive")

    @property
    def params(self) -> BiphotonParams:
        return BiphotonParams(self.sigma_p, self.sigma_c)

    @property
    def momentum_pitch(self) -> float:
        if self.pitch_k is not None:
            return self.pitch_k
        return self.pitch_x / (4.0 * self.sigma_p * self.sigma_c)

    def grid(self, basis) -> GridSpec:
        basis = Basis(basis)
        pitch = self.pitch_x if basis is Basis.POSITION else self.momentum_pitch
        return GridSpec(self.side, pitch, basis)

    def solver(self, debias: bool | None = None) -> SolverConfig:
        return SolverConfig(tau=self.tau, max_iters=self.max_iters, rel_obj_tol=self.rel_obj_tol,
                            debias=self.debias if debias is None else debias)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["bases"] = list(self.bases)
        d["thresholds"] = list(self.thresholds)
        d["flux_grid"] = list(self.flux_grid)
        return d

    def numeric_dict(self) -> dict:
        """Everything that affects numeric outputs; the output directory does not."""
        d = self.to_dict()
        d.pop("out")
        return d

    def digest(self) -> str:
        d = self.numeric_dict()
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "ExperimentConfig":
        unknown = set(kw) - {f.name for f in dataclasses.fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return dataclasses.replace(self, **kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


# side and m follow the published configurations; the object widths are ours
PRESETS: dict[str, dict] = {
    "paper-16x16-position": dict(side=16, m=2500, flux=5000.0, sigma_p=4.0, sigma_c=0.1),
    "paper-16x16-momentum": dict(side=16, m=2500, flux=5000.0, sigma_p=4.0, sigma_c=0.1,
                                 bases=("momentum",)),
    "paper-24x24": dict(side=24, m=10000, flux=5000.0, sigma_p=6.0, sigma_c=0.1),
    "paper-32x32": dict(side=32, m=30000, flux=5000.0, sigma_p=8.0, sigma_c=0.1),
    # side^2 * pitch_x * pitch_k = 4 pi e puts the classical steering bound at 4 bits
    "desk-steering": dict(side=16, m=2500, flux=5000.0, sigma_p=4.0, sigma_c=0.5,
                          bases=("position", "momentum"), pitch_x=1.0,
                          pitch_k=4 * math.pi * math.e / 256),
}


def preset(name: str, /, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ExperimentConfig(name=name).with_overrides(**{**PRESETS[name], **overrides})


def split_bases(config: ExperimentConfig) -> tuple[ExperimentConfig, ExperimentConfig]:
    """Single-basis position and momentum configs sharing everything else."""
    return (config.with_overrides(bases=("position",)),
            config.with_overrides(bases=("momentum",)))


@dataclass
class RunManifest:
    config_hash: str
    config: dict
    seeds: dict
    artifacts: list[str] = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    converged: bool = True
    failures: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_json(self, timings: bool = False) -> str:
        d = dataclasses.asdict(self)
        if not timings:
            d.pop("timings")
        return json.dumps(d, indent=2, sort_keys=True)


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _streams(basis: str) -> tuple[int, int]:
    if basis == Basis.POSITION.value:
        return seeding.STREAM_PATTERNS, seeding.STREAM_NOISE
    return seeding.STREAM_PATTERNS_MOMENTUM, seeding.STREAM_NOISE_MOMENTUM


def replica_seeds(config: ExperimentConfig, replica: int) -> dict:
    out = {}
    for basis in config.bases:
        sp, sn = _streams(basis)
        out[basis] = {"patterns": seeding.derive_seed(config.master_seed, replica, sp),
                      "noise": seeding.derive_seed(config.master_seed, replica, sn)}
    return out


def _analyze(est, truth, config: ExperimentConfig, grid: GridSpec) -> dict:
    curve = threshold_sweep(est, config.thresholds)
    best = curve.best_fraction
    kept = apply_threshold(est, best)
    widths = [profile_width(p, background=b) for p, b in
              zip(anti_diagonal_profile(est, "difference" if grid.basis is Basis.POSITION else "sum"),
                  uncorrelated_profile(est, "difference" if grid.basis is Basis.POSITION else "sum"))]
    err = mse(est, truth)
    res = {"mi_raw": mutual_information(est), "mi_thresholded": mutual_information(kept),
           "mi_truth": mutual_information(truth), "threshold": best, "mse": err,
           "snr": snr_estimate(grid.n, err), "profile_width": widths,
           "threshold_curve": {"fraction": curve.fractions.tolist(), "mi": curve.mi.tolist()}}
    try:
        fit = fit_double_gaussian(est, grid)
        res.update(sigma_ce=fit.sigma_ce, sigma_pe=fit.sigma_pe, fit_bits=fit.capacity_bits(2))
    except FitError as exc:
        res.update(sigma_ce=None, sigma_pe=None, fit_bits=None, fit_error=str(exc))
    return res


def _run_replica(config: ExperimentConfig, replica: int, root: str) -> dict:
    """Run every basis of one replica; returns results, files, timings, failures."""
    rdir = Path(root) / f"replica-{replica:03d}"
    rdir.mkdir(parents=True, exist_ok=True)
    seeds = replica_seeds(config, replica)
    out = {"replica": replica, "results": {}, "artifacts": [], "timings": {},
           "converged": True, "failures": []}

    def save(obj, name):
        path = obj.save(rdir / name) if hasattr(obj, "save") else atomic_write_text(rdir / name, obj)
        out["artifacts"].append(str(Path(path).relative_to(root)))

    for basis in config.bases:
        grid = config.grid(basis)
        stage = f"{basis}/model"
        try:
            t0 = time.perf_counter()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ModelWarning)
                truth = joint_pdf(config.params, grid)
            save(truth, f"truth_{basis}.csv")
            t1 = time.perf_counter()

            stage = f"{basis}/patterns"
            op = SensingOperator(generate_patterns(seeds[basis]["patterns"], config.m, grid.n))
            t2 = time.perf_counter()

            stage = f"{basis}/measure"
            rec = simulate_measurements(truth, op, config.flux * config.t_aq,
                                        seeds[basis]["noise"], t_aq=config.t_aq)
            save(rec, f"counts_{basis}.txt")
            t3 = time.perf_counter()

            stage = f"{basis}/reconstruct"
            sol = solve_bpdn(op, rec.y, config.solver())
            est = normalize(sol.x_hat, grid, "per_flux", rec.flux)
            save(est, f"recon_{basis}.csv")
            save(_dump(sol.metadata()), f"recon_{basis}.meta.json")
            out["converged"] &= sol.converged
            t4 = time.perf_counter()

            stage = f"{basis}/analyze"
            res = _analyze(est, truth, config, grid)
            res["noise_margin"] = noise_margin(rec)
            res["converged"] = sol.converged
            res["iterations"] = sol.iterations
            out["results"][basis] = res
            t5 = time.perf_counter()
        except OSError:
            raise
        except Exception as exc:  # noqa: BLE001 - recorded with its stage
            log.error("replica %d failed at %s: %s", replica, stage, exc)
            out["failures"].append({"replica": replica, "stage": stage,
                                    "error": f"{type(exc).__name__}: {exc}"})
            return out
        out["timings"][basis] = {"model": t1 - t0, "patterns": t2 - t1, "measure": t3 - t2,
                                 "reconstruct": t4 - t3, "analyze": t5 - t4}

    res = out["results"]
    report = AnalysisReport()
    for basis, key in (("position", "mi_x"), ("momentum", "mi_k")):
        if basis in res:
            setattr(report, key, res[basis]["mi_thresholded"])
    first = res[config.bases[0]]
    report.mse, report.snr, report.threshold_used = first["mse"], first["snr"], first["threshold"]
    report.sigma_ce, report.sigma_pe = first["sigma_ce"], first["sigma_pe"]
    report.fedorov_bits = first["fit_bits"]
    if {"position", "momentum"} <= set(res):
        report.bound = steering_bound(config.side ** 2, config.pitch_x, config.momentum_pitch)
        report.margin = report.mi_x + report.mi_k - report.bound
    save(report, "report.json")
    save(_dump(res), "details.json")
    return out


def _summary(values) -> dict:
    v = np.array([x for x in values if x is not None], dtype=float)
    if v.size == 0:
        return {"mean": None, "std": None, "n": 0}
    return {"mean": float(v.mean()), "std": float(v.std(ddof=1)) if v.size > 1 else 0.0,
            "n": int(v.size)}


def _run_replicas(config: ExperimentConfig, root: Path) -> list[dict]:
    workers = min(_workers(), config.replicas)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_replica, config, r, str(root)) for r in range(config.replicas)]
            return [f.result() for f in futures]
    return [_run_replica(config, r, str(root)) for r in range(config.replicas)]


def _finish(config: ExperimentConfig, root: Path, manifest: RunManifest) -> RunManifest:
    manifest.artifacts.sort()
    atomic_write_text(root / "manifest.json", manifest.to_json() + "\n")
    lines = [f"{k}: {v:.3f}" for k, v in sorted(_flatten(manifest.timings).items())]
    atomic_write_text(root / "timings.txt", "\n".join(lines) + "\n")
    return manifest


def _flatten(d, prefix=""):
    flat = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            flat.update(_flatten(v, key + "/"))
        else:
            flat[key] = float(v)
    return flat


def run_pipeline(config: ExperimentConfig) -> RunManifest:
    """Full pipeline for every replica and basis of ``config``.

    Writes under ``<out>/<name>/``: per replica the truth and reconstruction
    tables, counts, a reconstruction metadata sidecar, ``report.json`` and
    ``details.json``; at the top level ``summary.json`` (replica mean and
    standard deviation), ``manifest.json`` and ``timings.txt``.
    """
    root = Path(config.out) / config.name
    root.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    outs = _run_replicas(config, root)
    manifest = RunManifest(config.digest(), config.numeric_dict(),
                           {f"replica-{r:03d}": replica_seeds(config, r) for r in range(config.replicas)})
    for o in outs:
        manifest.artifacts += o["artifacts"]
        manifest.timings[f"replica-{o['replica']:03d}"] = o["timings"]
        manifest.converged &= o["converged"]
        manifest.failures += o["failures"]

    summary = {}
    for basis in config.bases:
        rows = [o["results"].get(basis) for o in outs]
        rows = [r for r in rows if r is not None]
        summary[basis] = {k: _summary([r[k] for r in rows]) for k in
                          ("mi_thresholded", "mi_raw", "mse", "fit_bits", "noise_margin")}
        if rows:
            summary[basis]["mi_truth"] = rows[0]["mi_truth"]
    atomic_write_text(root / "summary.json", _dump(summary))
    manifest.artifacts.append("summary.json")
    manifest.timings["total"] = time.perf_counter() - t0
    return _finish(config, root, manifest)


def run_flux_sweep(config: ExperimentConfig, flux_grid=None) -> Path:
    """MSE versus flux for the first basis of ``config``; returns the CSV path.

    The debias refit is skipped inside sweeps.  Point ``i`` draws its noise
    from ``derive_seed(derive_seed(master_seed, STREAM_SWEEP), i)``.
    """
    flux_grid = config.flux_grid if flux_grid is None else tuple(float(f) for f in flux_grid)
    config = config.with_overrides(flux_grid=flux_grid)
    root = Path(config.out) / config.name
    root.mkdir(parents=True, exist_ok=True)
    basis = config.bases[0]
    grid = config.grid(basis)
    seeds = replica_seeds(config, 0)[basis]
    sweep_seed = seeding.derive_seed(config.master_seed, seeding.STREAM_SWEEP)

    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ModelWarning)
        truth = joint_pdf(config.params, grid)
    op = SensingOperator(generate_patterns(seeds["patterns"], config.m, grid.n))
    res = flux_sweep(truth, op, [f * config.t_aq for f in flux_grid], config.solver(debias=False),
                     sweep_seed, workers=_workers())
    path = res.save(root / "flux_sweep.csv")

    manifest = RunManifest(config.digest(), config.numeric_dict(),
                           {"patterns": seeds["patterns"], "sweep": sweep_seed},
                           ["flux_sweep.csv"], {"sweep": time.perf_counter() - t0})
    manifest.failures = [{"stage": f"sweep/flux={f}", "error": e}
                         for f, e in zip(flux_grid, res.errors) if e]
    _finish(config, root, manifest)
    return path


def run_steering(config_x: ExperimentConfig, config_k: ExperimentConfig) -> dict:
    """Position and momentum pipelines plus the entropic steering test.

    Returns (and writes as ``steering.json``) the thresholded and fitted
    verdicts per replica and their replica statistics.
    """
    if config_x.bases != ("position",) or config_k.bases != ("momentum",):
        raise ConfigError("run_steering needs a position config and a momentum config")
    if config_x.side != config_k.side:
        raise ConfigError("position and momentum grids must have the same side")
    both = config_x.with_overrides(bases=("position", "momentum"), pitch_k=config_k.momentum_pitch)
    manifest = run_pipeline(both)
    root = Path(both.out) / both.name
    bound = steering_bound(both.side ** 2, both.pitch_x, both.momentum_pitch)

    per_replica = []
    for r in range(both.replicas):
        path = root / f"replica-{r:03d}" / "details.json"
        if not path.exists():
            continue
        det = json.loads(path.read_text())
        if not {"position", "momentum"} <= set(det):
            continue
        x, k = det["position"], det["momentum"]
        thr = steering_test(x["mi_thresholded"], k["mi_thresholded"], bound)
        entry = {"replica": r, "thresholded": dataclasses.asdict(thr)}
        if x.get("fit_bits") is not None and k.get("fit_bits") is not None:
            entry["fitted"] = dataclasses.asdict(steering_test(x["fit_bits"], k["fit_bits"], bound))
        per_replica.append(entry)

    def stats(kind, key):
        return _summary([e[kind][key] for e in per_replica if kind in e])

    report = {
        "bound": bound,
        "bandwidth_product": both.side ** 2 * both.pitch_x * both.momentum_pitch,
        "replicas": per_replica,
        "thresholded": {"i_x": stats("thresholded", "i_x"), "i_k": stats("thresholded", "i_k"),
                        "margin": stats("thresholded", "margin"),
                        "violated": bool(per_replica) and all(
                            e["thresholded"]["violated"] for e in per_replica)},
        "fitted": {"i_x": stats("fitted", "i_x"), "i_k": stats("fitted", "i_k"),
                   "margin": stats("fitted", "margin"),
                   "violated": bool(per_replica) and all(
                       e.get("fitted", {}).get("violated", False) for e in per_replica)},
        "converged": manifest.converged,
        "failures": manifest.failures,
    }
    atomic_write_text(root / "steering.json", _dump(report))
    return report


# -- command line ------------------------------------------------------------

def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _tau(text: str):
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("tau must be 'auto' or a number") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", help="named configuration (default: paper-16x16-position, "
                        "or desk-steering for steer)")
    common.add_argument("--config", type=Path, help="JSON file of config overrides")
    common.add_argument("--seed", type=int, dest="master_seed", help="master seed")
    common.add_argument("--flux", type=float, help="detected pairs per pattern per second")
    common.add_argument("--m", type=int, help="number of pattern pairs")
    common.add_argument("--tau", type=_tau, help="l1 weight, or 'auto'")
    common.add_argument("--threshold", type=_float_list,
                        help="threshold fraction(s); several values are swept")
    common.add_argument("--replicas", type=int)
    common.add_argument("--max-iters", type=int, dest="max_iters")
    common.add_argument("--name", help="run name (output subdirectory)")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="biphoton-cs", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="full pipeline")
    sw = sub.add_parser("sweep", parents=[common], help="MSE versus flux")
    sw.add_argument("--flux-grid", type=_float_list, dest="flux_grid",
                    help="comma-separated ascending flux values")
    sub.add_parser("steer", parents=[common], help="position + momentum steering test")
    sub.add_parser("presets", help="list presets")
    return p


def config_from_args(args) -> ExperimentConfig:
    overrides = {}
    if args.config is not None:
        try:
            overrides.update(json.loads(args.config.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
        if not isinstance(overrides, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
    for key in ("master_seed", "flux", "m", "tau", "replicas", "max_iters", "name", "out"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    if args.threshold is not None:
        overrides["thresholds"] = args.threshold
    if getattr(args, "flux_grid", None) is not None:
        overrides["flux_grid"] = args.flux_grid
    name = args.preset or ("desk-steering" if args.command == "steer" else "paper-16x16-position")
    return preset(name, **overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "presets":
        for name, values in PRESETS.items():
            print(name, json.dumps(values, sort_keys=True))
        return EXIT_OK
    try:
        config = config_from_args(args)
        _workers()
        if args.command == "run":
            manifest = run_pipeline(config)
            converged, failures = manifest.converged, manifest.failures
        elif args.command == "sweep":
            print(run_flux_sweep(config))
            failures = json.loads((Path(config.out) / config.name / "manifest.json").read_text())["failures"]
            converged = True
        else:
            report = run_steering(*split_bases(config))
            print(json.dumps({k: report[k] for k in ("bound", "thresholded", "fitted")}, indent=2))
            converged, failures = report["converged"], report["failures"]
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    if failures:
        for f in failures:
            print(f"failed: {f['stage']}: {f['error']}", file=sys.stderr)
        return EXIT_FAILED
    if not converged:
        print("solver did not converge; artifacts written", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
