"""Discretized double-Gaussian biphoton joint distributions.

Each transverse axis of the two-photon intensity factors as

    |psi|^2 ~ exp(-(s - i)^2 / (2 d^2)) * exp(-(s + i)^2 / (2 S^2))

with a "difference" width ``d`` and a "sum" width ``S``.  In the position
basis ``d = sigma_c`` and ``S = 2 sigma_p``; in the momentum basis
``d = 1 / (2 sigma_c)`` and ``S = 1 / (4 sigma_p)``.  Pixel-pair probabilities
are obtained by integrating that density over pairs of detector pixels: the
inner (idler) integral is done in closed form with error functions, the outer
(signal) integral by composite Gauss-Legendre quadrature.  Two-dimensional
pixels use the tensor product of the per-axis tables.

Pixels of a ``side x side`` detector are listed in column-major order, i.e.
pixel ``(row r, column c)`` has index ``r + side * c``.
"""
from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from ._io import atomic_write_text, read_header

__all__ = [
    "Basis",
    "BiphotonParams",
    "GridSpec",
    "JointDistribution",
    "ModelWarning",
    "pair_kernel_1d",
    "position_joint_pdf",
    "momentum_joint_pdf",
    "joint_pdf",
    "marginal",
    "fedorov_capacity",
    "kernel_widths",
    "effective_widths",
]

#: sigma_p / sigma_c at or above which the continuous-model capacity applies.
FAR_REGIME_RATIO = 10.0


class ModelWarning(UserWarning):
    pass


class Basis(str, enum.Enum):
    POSITION = "position"
    MOMENTUM = "momentum"


@dataclass(frozen=True)
class BiphotonParams:
    """Pump width ``sigma_p`` and correlation width ``sigma_c`` (length units)."""

    sigma_p: float
    sigma_c: float

    def __post_init__(self):
        if not (self.sigma_p > 0 and self.sigma_c > 0):
            raise ValueError(
                f"widths must be positive, got sigma_p={self.sigma_p}, sigma_c={self.sigma_c}"
            )
        if not (math.isfinite(self.sigma_p) and math.isfinite(self.sigma_c)):
            raise ValueError("widths must be finite")

    @property
    def ratio(self) -> float:
        return self.sigma_p / self.sigma_c

    @property
    def far_regime(self) -> bool:
        return self.ratio >= FAR_REGIME_RATIO


@dataclass(frozen=True)
class GridSpec:
    side: int
    pitch: float
    basis: Basis = Basis.POSITION
    origin: float = 0.0

    def __post_init__(self):
        if int(self.side) != self.side or self.side < 1:
            raise ValueError(f"side must be a positive integer, got {self.side}")
        if not self.pitch > 0:
            raise ValueError(f"pitch must be positive, got {self.pitch}")
        object.__setattr__(self, "side", int(self.side))
        object.__setattr__(self, "basis", Basis(self.basis))

    @property
    def n(self) -> int:
        return self.side * self.side

    @property
    def extent(self) -> float:
        return self.side * self.pitch

    def centers(self) -> np.ndarray:
        """Pixel centers along one transverse axis."""
        return self.origin + (np.arange(self.side) - (self.side - 1) / 2.0) * self.pitch

    def to_dict(self) -> dict:
        return {"side": self.side, "pitch": self.pitch, "basis": self.basis.value,
                "origin": self.origin}


def kernel_widths(params: BiphotonParams, basis: Basis) -> tuple[float, float]:
    """Return the per-axis (sum, difference) Gaussian widths for ``basis``."""
    basis = Basis(basis)
    if basis is Basis.POSITION:
        return 2.0 * params.sigma_p, params.sigma_c
    return 1.0 / (4.0 * params.sigma_p), 1.0 / (2.0 * params.sigma_c)


def effective_widths(params: BiphotonParams, grid: GridSpec) -> tuple[float, float]:
    """Narrow width and half the broad width of the density, in pixels of ``grid``.

    These are the values a double-Gaussian fit should return as
    ``(sigma_ce, sigma_pe)``; their ratio is ``sigma_p / sigma_c`` in both bases.
    """
    S, d = kernel_widths(params, grid.basis)
    narrow, broad = (d, S) if grid.basis is Basis.POSITION else (S, d)
    return narrow / grid.pitch, broad / (2.0 * grid.pitch)


def _erf_diff(a, b):
    """erf(b) - erf(a) for b >= a, without cancellation in either tail."""
    a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
    out = special.erf(b) - special.erf(a)
    hi = a > 0
    lo = b < 0
    out = np.where(hi, special.erfc(a) - special.erfc(b), out)
    out = np.where(lo, special.erfc(-b) - special.erfc(-a), out)
    return out


def pair_kernel_1d(centers_s, centers_i, pitch_s, pitch_i, sum_std, diff_std, order=16):
    """Unnormalized probabilities of landing in signal pixel u and idler pixel v.

    Parameters
    ----------
    centers_s, centers_i : array_like
        Pixel centers of the signal and idler axes.
    pitch_s, pitch_i : float
        Pixel widths.
    sum_std, diff_std : float
        Widths of the ``s + i`` and ``s - i`` Gaussian factors.
    order : int
        Gauss-Legendre nodes per panel.  Each signal pixel is split into
        enough panels that a panel is no wider than the narrower factor.

    Returns
    -------
    ndarray, shape (len(centers_s), len(centers_i))
    """
    cs = np.asarray(centers_s, float)
    ci = np.asarray(centers_i, float)
    S2, d2 = sum_std ** 2, diff_std ** 2
    alpha = 1.0 / d2 + 1.0 / S2
    beta = 1.0 / d2 - 1.0 / S2
    c = math.sqrt(alpha / 2.0)

    panels = int(min(4096, max(1, math.ceil(pitch_s / min(sum_std, diff_std)))))
    t, w = np.polynomial.legendre.leggauss(order)
    # offsets of all quadrature nodes within one pixel, relative to its center
    edges = (np.arange(panels) + 0.5) / panels - 0.5
    offs = (edges[:, None] + t[None, :] / (2 * panels)).ravel() * pitch_s
    wts = np.tile(w, panels) * pitch_s / (2 * panels)

    xs = cs[:, None] + offs[None, :]                       # (ns, q)
    mu = xs * (beta / alpha)
    lo = ci - pitch_i / 2.0
    hi = ci + pitch_i / 2.0
    inner = _erf_diff(c * (lo[None, None, :] - mu[..., None]),
                      c * (hi[None, None, :] - mu[..., None]))
    envelope = np.exp(-2.0 * xs ** 2 / (S2 + d2))
    return np.einsum("uq,uqv->uv", envelope * wts[None, :], inner) * math.sqrt(math.pi / (2 * alpha))


@dataclass
class JointDistribution:
    """Coincidence probabilities ``p[u, v]`` (signal pixel u, idler pixel v)."""

    p: np.ndarray
    grid_signal: GridSpec
    grid_idler: GridSpec
    params: BiphotonParams | None = field(default=None, compare=False)

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        n_s, n_i = self.grid_signal.n, self.grid_idler.n
        if self.p.shape != (n_s, n_i):
            raise ValueError(f"p has shape {self.p.shape}, grids imply {(n_s, n_i)}")

    @property
    def basis(self) -> Basis:
        return self.grid_signal.basis

    @property
    def n(self) -> int:
        return self.grid_signal.n

    @property
    def X(self) -> np.ndarray:
        """Column-major vectorization of ``p`` (length n^2)."""
        return self.p.ravel(order="F")

    @classmethod
    def from_vector(cls, X, grid_signal: GridSpec, grid_idler: GridSpec | None = None,
                    params=None) -> "JointDistribution":
        grid_idler = grid_signal if grid_idler is None else grid_idler
        p = np.asarray(X, float).reshape(grid_signal.n, grid_idler.n, order="F")
        return cls(p, grid_signal, grid_idler, params)

    def check(self, atol: float = 1e-12) -> None:
        """Raise ValueError unless entries are nonnegative and sum to one."""
        if not np.all(np.isfinite(self.p)):
            raise ValueError("joint distribution has non-finite entries")
        if np.any(self.p < 0):
            raise ValueError("joint distribution has negative entries")
        total = self.p.sum()
        if abs(total - 1.0) > atol:
            raise ValueError(f"joint distribution sums to {total!r}, not 1")

    # -- text serialization -------------------------------------------------
    def save(self, path) -> Path:
        head = {
            "side": self.grid_signal.side,
            "pitch": self.grid_signal.pitch,
            "basis": self.basis.value,
            "origin": self.grid_signal.origin,
            "idler_side": self.grid_idler.side,
            "idler_pitch": self.grid_idler.pitch,
            "idler_origin": self.grid_idler.origin,
        }
        if self.params is not None:
            head["params"] = json.dumps(
                {"sigma_p": self.params.sigma_p, "sigma_c": self.params.sigma_c}, sort_keys=True)
        lines = [f"# {k}: {v}" for k, v in head.items()]
        lines += [",".join(format(x, ".17g") for x in row) for row in self.p]
        return atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "JointDistribution":
        head = read_header(path)
        basis = Basis(head["basis"])
        gs = GridSpec(int(head["side"]), float(head["pitch"]), basis, float(head.get("origin", 0.0)))
        gi = GridSpec(int(head.get("idler_side", gs.side)), float(head.get("idler_pitch", gs.pitch)),
                      basis, float(head.get("idler_origin", gs.origin)))
        params = None
        if "params" in head:
            params = BiphotonParams(**json.loads(head["params"]))
        p = np.loadtxt(path, comments="#", delimiter=",", ndmin=2)
        return cls(p, gs, gi, params)


def joint_pdf(params: BiphotonParams, grid: GridSpec, grid_idler: GridSpec | None = None,
              order: int = 16) -> JointDistribution:
    """Pixel-integrated joint distribution in the basis of ``grid``."""
    grid_idler = grid if grid_idler is None else grid_idler
    if grid_idler.basis is not grid.basis:
        raise ValueError("signal and idler grids must share a basis")
    sum_std, diff_std = kernel_widths(params, grid.basis)

    narrow = min(sum_std, diff_std)
    if narrow < grid.pitch / 100:
        warnings.warn(f"narrow width {narrow:g} is below 1/100 pixel; pixel integration "
                      "is dominated by the pixel shape", ModelWarning, stacklevel=3)
    broad = max(sum_std, diff_std)
    if grid.extent < 2 * broad:
        # 2 * broad is 4 sigma_p in the position basis
        warnings.warn(f"grid extent {grid.extent:g} is narrower than twice the broad "
                      f"width {broad:g}", ModelWarning, stacklevel=3)

    k1 = pair_kernel_1d(grid.centers(), grid_idler.centers(), grid.pitch, grid_idler.pitch,
                        sum_std, diff_std, order=order)
    k1 = k1 / k1.sum()
    # u = row + side * column, so the column (x) factor is the slow index
    p = np.kron(k1, k1)
    p /= p.sum()
    return JointDistribution(p, grid, grid_idler, params)


def position_joint_pdf(params: BiphotonParams, grid: GridSpec, **kw) -> JointDistribution:
    if Basis(grid.basis) is not Basis.POSITION:
        raise ValueError("position_joint_pdf needs a position-basis grid")
    return joint_pdf(params, grid, **kw)


def momentum_joint_pdf(params: BiphotonParams, grid: GridSpec, **kw) -> JointDistribution:
    if Basis(grid.basis) is not Basis.MOMENTUM:
        raise ValueError("momentum_joint_pdf needs a momentum-basis grid")
    return joint_pdf(params, grid, **kw)


def marginal(joint: JointDistribution, party: str = "signal") -> np.ndarray:
    """Single-photon distribution; reshape with ``order='F'`` for a side x side image."""
    if party == "signal":
        return joint.p.sum(axis=1)
    if party == "idler":
        return joint.p.sum(axis=0)
    raise ValueError(f"party must be 'signal' or 'idler', got {party!r}")


def fedorov_capacity(params: BiphotonParams, dims: int | str = 2) -> float:
    """Continuous-model mutual information log2(sigma_p^2 / sigma_c^2), in bits.

    Doubled for two transverse dimensions.  Only meaningful when
    sigma_p >> sigma_c; a ModelWarning is issued below ``FAR_REGIME_RATIO``.
    """
    dims = {"1D": 1, "2D": 2, "1d": 1, "2d": 2}.get(dims, dims)
    if dims not in (1, 2):
        raise ValueError(f"dims must be 1 or 2, got {dims!r}")
    if not params.far_regime:
        warnings.warn(f"sigma_p/sigma_c = {params.ratio:g} < {FAR_REGIME_RATIO:g}; "
                      "capacity is approximate", ModelWarning, stacklevel=2)
    return dims * 2.0 * math.log2(params.ratio)
