"""Entropic and statistical analysis of joint distributions."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize, special

from ._io import atomic_write_text
from .model import Basis, GridSpec, JointDistribution, pair_kernel_1d

__all__ = [
    "FitError",
    "GaussianFit",
    "SteeringVerdict",
    "ThresholdCurve",
    "AnalysisReport",
    "mutual_information",
    "entropy_bits",
    "max_capacity",
    "apply_threshold",
    "threshold_sweep",
    "fit_double_gaussian",
    "mse",
    "snr_estimate",
    "steering_bound",
    "steering_test",
    "anti_diagonal_profile",
    "profile_width",
    "uncorrelated_profile",
    "is_unimodal",
]

NORM_TOL = 1e-9
# fitted widths are kept above this (pixels) so the model stays cheap to evaluate
MIN_FIT_WIDTH = 0.02


class FitError(RuntimeError):
    pass


def _matrix(joint) -> np.ndarray:
    return joint.p if isinstance(joint, JointDistribution) else np.asarray(joint, dtype=float)


def entropy_bits(p) -> float:
    """Shannon entropy in bits, with 0 log 0 = 0."""
    return float(special.entr(np.asarray(p, float)).sum() / math.log(2))


def mutual_information(joint) -> float:
    """I(u; v) = H(u) + H(v) - H(u, v) in bits."""
    p = _matrix(joint)
    if np.any(p < 0):
        raise ValueError("joint distribution has negative entries")
    total = p.sum()
    if abs(total - 1.0) > NORM_TOL:
        raise ValueError(f"joint distribution sums to {total!r}; normalize first")
    mi = entropy_bits(p.sum(axis=1)) + entropy_bits(p.sum(axis=0)) - entropy_bits(p)
    # rounding can push a zero-information table a hair below 0
    return max(mi, 0.0)


def max_capacity(n: int) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    return math.log2(n)


def apply_threshold(joint, fraction: float):
    """Zero entries below ``fraction * max(p)`` and renormalize.

    Accepts a JointDistribution (returned as one) or a bare probability table.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    p = _matrix(joint)
    if fraction == 0:
        kept = p.copy()
    else:
        kept = np.where(p >= fraction * p.max(), p, 0.0)
        total = kept.sum()
        if not total > 0:
            raise ValueError(f"threshold {fraction} removes every entry")
        kept /= total
    if isinstance(joint, JointDistribution):
        return JointDistribution(kept, joint.grid_signal, joint.grid_idler, joint.params)
    return kept


@dataclass
class ThresholdCurve:
    fractions: np.ndarray
    mi: np.ndarray

    @property
    def best_fraction(self) -> float:
        return float(self.fractions[int(np.argmax(self.mi))])

    @property
    def peak(self) -> float:
        return float(np.max(self.mi))


def threshold_sweep(joint, fractions) -> ThresholdCurve:
    fractions = np.asarray(fractions, dtype=float)
    if np.any(np.diff(fractions) < 0):
        raise ValueError("fractions must be ascending")
    mi = np.array([mutual_information(apply_threshold(joint, f)) for f in fractions])
    return ThresholdCurve(fractions, mi)


def is_unimodal(values, window: int = 2) -> bool:
    """True if a moving average of ``values`` rises (weakly) and then falls (weakly).

    A monotone sequence counts as unimodal.
    """
    v = np.asarray(values, dtype=float)
    if window > 1 and v.size >= window:
        v = np.convolve(v, np.ones(window) / window, mode="valid")
    d = np.sign(np.diff(v))
    d = d[d != 0]
    # once it starts falling it never rises again
    falling = np.flatnonzero(d < 0)
    return falling.size == 0 or not np.any(d[falling[0]:] > 0)


# -- double-Gaussian fit ----------------------------------------------------

@dataclass
class GaussianFit:
    """Effective widths in pixels of the detector grid.

    ``sigma_ce`` is the width of the narrow (correlated) factor and
    ``sigma_pe`` half the width of the broad one, so that in either basis
    ``sigma_pe / sigma_ce`` estimates ``sigma_p / sigma_c``.
    """

    sigma_ce: float
    sigma_pe: float
    amplitude: float
    residual: float
    basis: Basis

    @property
    def epr_regime(self) -> bool:
        return self.sigma_ce < self.sigma_pe

    def capacity_bits(self, dims: int = 2) -> float:
        return dims * 2.0 * math.log2(self.sigma_pe / self.sigma_ce)


def _fit_kernel(side: int, origin_px: float, sigma_ce: float, sigma_pe: float, basis: Basis):
    centers = origin_px + np.arange(side) - (side - 1) / 2.0
    if basis is Basis.POSITION:
        sum_std, diff_std = 2.0 * sigma_pe, sigma_ce
    else:
        sum_std, diff_std = sigma_ce, 2.0 * sigma_pe
    return pair_kernel_1d(centers, centers, 1.0, 1.0, sum_std, diff_std, order=8)


def fit_double_gaussian(joint: JointDistribution, grid: GridSpec | None = None,
                        starts: int = 5) -> GaussianFit:
    """Least-squares fit of the pixelated double-Gaussian model.

    Nelder-Mead over log widths from ``starts`` starting points; the
    amplitude is solved in closed form at every evaluation.
    """
    grid = joint.grid_signal if grid is None else grid
    basis = grid.basis
    side = grid.side
    p = joint.p
    if p.shape != (side * side, side * side):
        raise ValueError("joint shape does not match the grid")
    if not np.isfinite(p).all() or np.ptp(p) == 0:
        raise FitError("cannot fit a flat or non-finite distribution")

    # <p, kron(k, k)> = vec(k)^T J vec(k) with J indexed [(cs, ci), (rs, ri)]
    J = p.reshape(side, side, side, side).transpose(0, 2, 1, 3).reshape(side * side, side * side)
    pp = float(np.sum(p * p))
    origin_px = grid.origin / grid.pitch

    def resid(theta):
        sce, spe = np.maximum(np.exp(theta), MIN_FIT_WIDTH)
        k = _fit_kernel(side, origin_px, sce, spe, basis).ravel()
        kk = float(k @ k) ** 2
        if not kk > 0:
            return pp
        pk = float(k @ J @ k)
        amp = max(pk / kk, 0.0)
        return pp - 2 * amp * pk + amp * amp * kk

    guesses = [(0.5, side / 4), (1.0, side / 4), (0.25, side / 8), (2.0, side / 2), (1.0, 1.0)]
    best = None
    for sce, spe in guesses[:max(1, starts)]:
        res = optimize.minimize(resid, np.log([sce, spe]), method="Nelder-Mead",
                                options={"xatol": 1e-7, "fatol": 1e-14 * max(pp, 1e-300),
                                         "maxiter": 4000})
        if best is None or res.fun < best.fun:
            best = res
    sce, spe = np.maximum(np.exp(best.x), MIN_FIT_WIDTH)
    k = _fit_kernel(side, origin_px, sce, spe, basis).ravel()
    amp = float(k @ J @ k) / float(k @ k) ** 2
    return GaussianFit(float(sce), float(spe), amp, float(best.fun), basis)


# -- error metrics ----------------------------------------------------------

def mse(recon, ideal) -> float:
    a, b = _matrix(recon), _matrix(ideal)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def snr_estimate(n: int, mse_value: float) -> float:
    """1 / (n sqrt(MSE)); infinite for a perfect reconstruction."""
    if mse_value < 0:
        raise ValueError("mse must be nonnegative")
    if mse_value == 0:
        return math.inf
    return 1.0 / (n * math.sqrt(mse_value))


# -- steering ---------------------------------------------------------------

def steering_bound(n: int, d_x: float, d_k: float) -> float:
    """Classical limit 2 log2(n d_x d_k / (pi e)) on I_x + I_k, in bits."""
    if not (n > 0 and d_x > 0 and d_k > 0):
        raise ValueError("n, d_x and d_k must be positive")
    return 2.0 * math.log2(n * d_x * d_k / (math.pi * math.e))


@dataclass
class SteeringVerdict:
    i_x: float
    i_k: float
    bound: float
    violated: bool
    margin: float


def steering_test(i_x: float, i_k: float, bound: float) -> SteeringVerdict:
    for v in (i_x, i_k, bound):
        if not math.isfinite(v):
            raise ValueError("steering inputs must be finite")
    margin = i_x + i_k - bound
    return SteeringVerdict(i_x, i_k, bound, margin > 0, margin)


# -- profiles ---------------------------------------------------------------

def anti_diagonal_profile(joint, axis: str = "difference", side: int | None = None) -> np.ndarray:
    """Distribution of the signal-idler pixel sum or difference along each axis.

    Returns shape ``(2, 2 * side - 1)``: row 0 for the column (x) coordinate,
    row 1 for the row (y) coordinate.  Difference offsets run from
    ``-(side - 1)`` to ``side - 1``; sums from ``0`` to ``2 * (side - 1)``.
    """
    p = _matrix(joint)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValueError("profile needs a square joint distribution")
    if side is None:
        side = joint.grid_signal.side if isinstance(joint, JointDistribution) else math.isqrt(p.shape[0])
    if side * side != p.shape[0]:
        raise ValueError("joint size is not a square number of pixels")
    if axis not in ("sum", "difference"):
        raise ValueError(f"axis must be 'sum' or 'difference', got {axis!r}")
    p4 = p.reshape(side, side, side, side)          # [c_s, r_s, c_i, r_i]
    per_axis = (p4.sum(axis=(1, 3)), p4.sum(axis=(0, 2)))
    idx = np.arange(side)
    out = np.zeros((2, 2 * side - 1))
    if axis == "difference":
        coord = idx[:, None] - idx[None, :] + side - 1
    else:
        coord = idx[:, None] + idx[None, :]
    for k, m in enumerate(per_axis):
        np.add.at(out[k], coord.ravel(), m.ravel())
    return out


def uncorrelated_profile(joint, axis: str = "difference", side: int | None = None) -> np.ndarray:
    """Profile of the product of the marginals of ``joint``.

    This is the shape an uncorrelated noise floor takes in
    ``anti_diagonal_profile``; ``profile_width`` can fit it as a pedestal.
    """
    p = _matrix(joint)
    prod = np.outer(p.sum(axis=1), p.sum(axis=0))
    if side is None and isinstance(joint, JointDistribution):
        side = joint.grid_signal.side
    return anti_diagonal_profile(prod, axis, side)


def profile_width(profile, offsets=None, background=None) -> float:
    """Standard deviation (pixels) of a Gaussian least-squares fit to a profile.

    If ``background`` (same length as ``profile``) is given, the model is
    the Gaussian plus a nonnegative multiple of it, so a broad pedestal such
    as ``uncorrelated_profile`` does not inflate the fitted peak width.
    """
    prof = np.asarray(profile, float)
    if offsets is None:
        half = (prof.size - 1) / 2.0
        offsets = np.arange(prof.size) - half
    offsets = np.asarray(offsets, float)
    w = prof / prof.sum()
    mu0 = float(w @ offsets)
    sd0 = max(math.sqrt(float(w @ (offsets - mu0) ** 2)), 1e-3)

    def gauss(x, amp, mu, sd):
        return amp * np.exp(-0.5 * ((x - mu) / sd) ** 2)

    try:
        (amp, mu, sd), _ = optimize.curve_fit(
            gauss, offsets, prof, p0=(prof.max(), mu0, sd0),
            bounds=([0, offsets.min(), 1e-6], [np.inf, offsets.max(), np.inf]), maxfev=20000)
    except RuntimeError:
        return sd0
    if background is None:
        return float(abs(sd))

    bg = np.asarray(background, float)
    if bg.shape != prof.shape:
        raise ValueError("background must match the profile length")
    bg = bg / bg.max() if bg.max() > 0 else bg
    peak = offsets[int(np.argmax(prof))]

    def with_floor(x, amp, mu, sd, c):
        return gauss(x, amp, mu, sd) + c * bg

    try:
        (_, _, sd_b, _), _ = optimize.curve_fit(
            with_floor, offsets, prof, p0=(prof.max(), peak, min(sd, 1.0), 0.5 * np.median(prof)),
            bounds=([0, offsets.min(), 1e-6, 0], [np.inf, offsets.max(), np.inf, np.inf]),
            maxfev=20000)
    except RuntimeError:
        return float(abs(sd))
    return float(sd_b)


# -- report -----------------------------------------------------------------

@dataclass
class AnalysisReport:
    mi_x: float | None = None
    mi_k: float | None = None
    bound: float | None = None
    margin: float | None = None
    sigma_ce: float | None = None
    sigma_pe: float | None = None
    fedorov_bits: float | None = None
    mse: float | None = None
    snr: float | None = None
    threshold_used: float | None = None

    def to_dict(self) -> dict:
        return {k: (None if v is None else float(v)) for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path):
        return atomic_write_text(path, self.to_json() + "\n")
