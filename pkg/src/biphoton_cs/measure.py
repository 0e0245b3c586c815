"""Photon-counting measurement simulation and acquisition-time bookkeeping."""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write_text, read_header
from .model import JointDistribution
from .seeding import derive_seed, generator
from .sensing import SensingOperator

__all__ = [
    "MeasurementRecord",
    "FluxSweepResult",
    "simulate_measurements",
    "raster_scan_time",
    "compressive_advantage",
    "noise_margin",
    "flux_sweep",
]

log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400.0


@dataclass
class MeasurementRecord:
    """Coincidence counts, one per pattern pair."""

    y: np.ndarray
    flux: float
    t_aq: float = 1.0
    seed: int | None = None
    n: int | None = None
    dark_rate: float = 0.0

    def __post_init__(self):
        self.y = np.asarray(self.y)
        if self.y.ndim != 1:
            raise ValueError("counts must be a vector")
        if not np.issubdtype(self.y.dtype, np.integer):
            if not np.all(self.y == np.round(self.y)):
                raise ValueError("counts must be integers")
            self.y = self.y.astype(np.int64)
        if np.any(self.y < 0):
            raise ValueError("counts must be nonnegative")

    @property
    def m(self) -> int:
        return self.y.size

    def save(self, path) -> Path:
        head = [f"# m: {self.m}", f"# n: {self.n}", f"# flux: {self.flux!r}",
                f"# t_aq: {self.t_aq!r}", f"# seed: {self.seed}"]
        if self.dark_rate:
            head.append(f"# dark_rate: {self.dark_rate!r}")
        return atomic_write_text(path, "\n".join(head + [str(int(v)) for v in self.y]) + "\n")

    @classmethod
    def load(cls, path) -> "MeasurementRecord":
        head = read_header(path)
        y = np.loadtxt(path, comments="#", dtype=np.int64, ndmin=1)
        if "m" in head and int(head["m"]) != y.size:
            raise ValueError(f"{path}: header says m={head['m']}, found {y.size} counts")

        def opt_int(key):
            v = head.get(key, "None")
            return None if v == "None" else int(v)

        return cls(y, float(head["flux"]), float(head.get("t_aq", 1.0)), opt_int("seed"),
                   opt_int("n"), float(head.get("dark_rate", 0.0)))


def simulate_measurements(joint: JointDistribution, op: SensingOperator, flux: float,
                          seed: int, t_aq: float = 1.0, dark_rate: float = 0.0) -> MeasurementRecord:
    """Draw ``y[i] ~ Poisson(flux * (A X)[i] + dark_rate)``.

    ``flux`` is the detected pair budget per pattern interval, so with
    half-density masks the mean count is about ``flux / 4``.
    ``dark_rate`` adds a constant accidental-coincidence rate per pattern.
    """
    if not flux > 0:
        raise ValueError(f"flux must be positive, got {flux}")
    if dark_rate < 0:
        raise ValueError("dark_rate must be nonnegative")
    if joint.n != op.n:
        raise ValueError(f"joint has n={joint.n}, patterns have n={op.n}")
    lam = flux * op.forward(joint.X)
    np.maximum(lam, 0, out=lam)
    if dark_rate:
        lam += dark_rate
    y = generator(seed).poisson(lam)
    return MeasurementRecord(y.astype(np.int64), float(flux), t_aq, int(seed), op.n, dark_rate)


def raster_scan_time(n: int, snr: float, flux: float) -> float:
    """Seconds to jointly raster-scan two n-pixel detectors: n^3 SNR^2 / flux."""
    if not (n > 0 and snr > 0 and flux > 0):
        raise ValueError("n, snr and flux must be positive")
    return float(n) ** 3 * snr ** 2 / flux


def compressive_advantage(n: int) -> float:
    """Acquisition-time gain n^2 / log2(n) over raster scanning."""
    if n < 2:
        raise ValueError("n must be >= 2")
    return n * n / math.log2(n)


def noise_margin(record) -> float:
    """std(y) / sqrt(mean(y)); compare against a margin beta > 1."""
    y = np.asarray(getattr(record, "y", record), dtype=float)
    if y.size < 2:
        raise ValueError("need at least two measurements")
    mean = y.mean()
    if mean == 0:
        raise ValueError("all counts are zero; noise margin undefined")
    return float(y.std() / math.sqrt(mean))


@dataclass
class FluxSweepResult:
    flux_grid: list[float]
    mse: list[float]
    beta_margin: list[float]
    errors: list[str | None] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["flux", "mse", "beta_margin"])
        for f, e, b in zip(self.flux_grid, self.mse, self.beta_margin):
            w.writerow([repr(float(f)), repr(float(e)), repr(float(b))])
        return buf.getvalue()

    def save(self, path) -> Path:
        return atomic_write_text(path, self.to_csv())

    @classmethod
    def load(cls, path) -> "FluxSweepResult":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([float(r["flux"]) for r in rows], [float(r["mse"]) for r in rows],
                   [float(r["beta_margin"]) for r in rows])


def _sweep_point(joint, op, flux, config, seed):
    # local imports keep measure importable without pulling in the solver
    from .analysis import mse
    from .recon import normalize, solve_bpdn

    rec = simulate_measurements(joint, op, flux, seed)
    beta = noise_margin(rec) if rec.y.any() else 0.0
    res = solve_bpdn(op, rec.y, config)
    est = normalize(res.x_hat, joint.grid_signal, "per_flux", flux, joint.grid_idler)
    return mse(est, joint), beta


def flux_sweep(joint: JointDistribution, op: SensingOperator, flux_grid, solver_config,
               seed: int, workers: int = 1) -> FluxSweepResult:
    """MSE of the unit-normalized reconstruction at each flux.

    Point ``i`` uses noise seed ``derive_seed(seed, i)``.  A failing point
    records ``nan`` and its error message instead of aborting the sweep.
    """
    flux_grid = [float(f) for f in flux_grid]
    if any(b <= a for a, b in zip(flux_grid, flux_grid[1:])):
        raise ValueError("flux grid must be strictly ascending")
    seeds = [derive_seed(seed, i) for i in range(len(flux_grid))]
    args = [(joint, op, f, solver_config, s) for f, s in zip(flux_grid, seeds)]

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_sweep_point, *a) for a in args]
            outcomes = []
            for fut in futures:
                try:
                    outcomes.append((fut.result(), None))
                except Exception as exc:  # noqa: BLE001 - recorded per point
                    outcomes.append(((math.nan, math.nan), f"{type(exc).__name__}: {exc}"))
    else:
        outcomes = []
        for a in args:
            try:
                outcomes.append((_sweep_point(*a), None))
            except Exception as exc:  # noqa: BLE001 - recorded per point
                log.warning("flux %g failed: %s", a[2], exc)
                outcomes.append(((math.nan, math.nan), f"{type(exc).__name__}: {exc}"))

    return FluxSweepResult(flux_grid, [o[0][0] for o in outcomes],
                           [o[0][1] for o in outcomes], [o[1] for o in outcomes])
