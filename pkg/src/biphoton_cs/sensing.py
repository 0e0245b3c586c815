"""Random DMD pattern pairs and the Kronecker-structured sensing operator.

Measurement ``i`` places mask ``a[i]`` on the signal DMD and ``b[i]`` on the
idler DMD, so its expected coincidence rate is ``a[i] @ P @ b[i]`` where
``P = sq(X)`` is the column-major reshape of the unknown vector.  Stacked
over all rows this is ``diag(a P b^T)``; the adjoint is ``vec(a^T diag(Y) b)``.
The full ``M x n^2`` matrix is never formed except by ``explicit_matrix``,
which exists for testing.

With column-major ``vec``, row ``i`` of the implied matrix is
``np.kron(b[i], a[i])``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from ._io import atomic_write_text, read_header
from .seeding import SUBSTREAM_A, SUBSTREAM_B, generator

__all__ = ["PatternSet", "SensingOperator", "generate_patterns"]

# rows with a ones-fraction outside this band are redrawn (n >= DENSITY_MIN_N)
DENSITY_BAND = (0.4, 0.6)
DENSITY_MIN_N = 64


def _pack(bits: np.ndarray) -> np.ndarray:
    return np.packbits(np.asarray(bits, dtype=np.uint8), axis=1)


def _unpack(packed: np.ndarray, n: int, dtype=np.uint8) -> np.ndarray:
    return np.unpackbits(packed, axis=1, count=n).astype(dtype, copy=False)


@dataclass(frozen=True, eq=False)
class PatternSet:
    """``m`` pairs of binary masks of length ``n``, stored bit-packed."""

    m: int
    n: int
    a_bits: np.ndarray
    b_bits: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        nb = (self.n + 7) // 8
        for name in ("a_bits", "b_bits"):
            arr = getattr(self, name)
            if arr.shape != (self.m, nb) or arr.dtype != np.uint8:
                raise ValueError(f"{name} must be uint8 of shape {(self.m, nb)}")
            arr.setflags(write=False)

    @classmethod
    def from_masks(cls, a, b, seed=None) -> "PatternSet":
        a = np.atleast_2d(np.asarray(a))
        b = np.atleast_2d(np.asarray(b))
        if a.shape != b.shape:
            raise ValueError("a and b must have the same shape")
        if not (np.isin(a, (0, 1)).all() and np.isin(b, (0, 1)).all()):
            raise ValueError("mask entries must be 0 or 1")
        return cls(a.shape[0], a.shape[1], _pack(a), _pack(b), seed)

    @property
    def a(self) -> np.ndarray:
        return _unpack(self.a_bits, self.n)

    @property
    def b(self) -> np.ndarray:
        return _unpack(self.b_bits, self.n)

    def __eq__(self, other):
        if not isinstance(other, PatternSet):
            return NotImplemented
        return (self.m == other.m and self.n == other.n and self.seed == other.seed
                and np.array_equal(self.a_bits, other.a_bits)
                and np.array_equal(self.b_bits, other.b_bits))

    def save(self, path) -> Path:
        lines = [f"# m: {self.m}", f"# n: {self.n}", f"# seed: {self.seed}"]
        for block in (self.a, self.b):
            lines += ["".join("1" if v else "0" for v in row) for row in block]
        return atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "PatternSet":
        head = read_header(path)
        m, n = int(head["m"]), int(head["n"])
        seed = None if head.get("seed", "None") == "None" else int(head["seed"])
        rows = [ln.strip() for ln in Path(path).read_text().splitlines()
                if ln.strip() and not ln.startswith("#")]
        if len(rows) != 2 * m or any(len(r) != n for r in rows):
            raise ValueError(f"{path}: expected {2 * m} rows of {n} bits")
        bits = np.array([[c == "1" for c in r] for r in rows], dtype=np.uint8).reshape(2 * m, n)
        return cls(m, n, _pack(bits[:m]), _pack(bits[m:]), seed)


def _draw_packed(rng: np.random.Generator, rows: int, n: int) -> np.ndarray:
    nb = (n + 7) // 8
    packed = np.frombuffer(rng.bytes(rows * nb), dtype=np.uint8).reshape(rows, nb).copy()
    if n % 8:
        packed[:, -1] &= np.uint8((0xFF << (8 - n % 8)) & 0xFF)
    return packed


def _draw_masks(rng: np.random.Generator, m: int, n: int) -> np.ndarray:
    packed = _draw_packed(rng, m, n)
    if n >= DENSITY_MIN_N:
        lo, hi = DENSITY_BAND
        while True:
            frac = np.unpackbits(packed, axis=1, count=n).sum(axis=1) / n
            bad = np.flatnonzero((frac < lo) | (frac > hi))
            if bad.size == 0:
                break
            packed[bad] = _draw_packed(rng, bad.size, n)
    return packed


def generate_patterns(seed: int, m: int, n: int) -> PatternSet:
    """Draw ``m`` Bernoulli(1/2) mask pairs of length ``n``.

    ``a`` and ``b`` come from independent Philox streams of ``seed``.  For
    ``n >= 64`` rows whose ones-fraction falls outside [0.4, 0.6] are
    redrawn, and ``b`` is redrawn in the (small-size only) event that it
    equals ``a``.
    """
    if m < 1 or n < 1:
        raise ValueError(f"m and n must be positive, got m={m}, n={n}")
    seed = int(seed)
    a_bits = _draw_masks(generator(seed, SUBSTREAM_A), m, n)
    rng_b = generator(seed, SUBSTREAM_B)
    b_bits = _draw_masks(rng_b, m, n)
    while m * n > 1 and np.array_equal(a_bits, b_bits):
        b_bits = _draw_masks(rng_b, m, n)
    return PatternSet(m, n, a_bits, b_bits, seed)


_BYTE_BITS = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1).astype(np.float64)


@numba.njit(cache=True)
def _forward_sparse(aT_bits, bT_bits, rows, cols, vals, table, out):
    # aT_bits/bT_bits: masks packed along the measurement axis, one row per pixel
    nb = aT_bits.shape[1]
    for k in range(rows.shape[0]):
        u, v, w = rows[k], cols[k], vals[k]
        for j in range(nb):
            c = aT_bits[u, j] & bT_bits[v, j]
            if c:
                for t in range(8):
                    out[8 * j + t] += w * table[c, t]


def _transpose_packed(packed: np.ndarray, n: int, chunk: int = 4096) -> np.ndarray:
    m = packed.shape[0]
    out = np.zeros((n, (m + 7) // 8), dtype=np.uint8)
    for lo in range(0, m, chunk):  # chunk is a multiple of 8
        block = np.unpackbits(packed[lo:lo + chunk], axis=1, count=n)
        out[:, lo // 8:(lo + block.shape[0] + 7) // 8] = np.packbits(block.T, axis=1)
    return out


@dataclass(eq=False)
class SensingOperator:
    """Matrix-free ``A`` with ``A @ X == diag(a sq(X) b^T)``.

    ``forward`` picks a sparse kernel when ``sq(X)`` has at most
    ``sparse_fraction * n^2`` nonzeros (cost ``O(M * (n + nnz))``) and a
    blocked dense product otherwise.  ``n_forward``/``n_adjoint`` count calls.
    """

    patterns: PatternSet
    chunk_rows: int = 2048
    sparse_fraction: float = 1.0 / 16
    # unpacked float masks are kept in memory when they fit in this many bytes
    cache_bytes: int = 128 * 2 ** 20
    n_forward: int = field(default=0, init=False)
    n_adjoint: int = field(default=0, init=False)
    _packed_t: tuple | None = field(default=None, init=False, repr=False)
    _dense: tuple | None = field(default=None, init=False, repr=False)

    @property
    def m(self) -> int:
        return self.patterns.m

    @property
    def n(self) -> int:
        return self.patterns.n

    @property
    def shape(self) -> tuple[int, int]:
        return self.m, self.n * self.n

    def _transposed(self):
        if self._packed_t is None:
            self._packed_t = (_transpose_packed(self.patterns.a_bits, self.n),
                              _transpose_packed(self.patterns.b_bits, self.n))
        return self._packed_t

    def _chunks(self):
        ps = self.patterns
        if self._dense is None and 16 * ps.m * ps.n <= self.cache_bytes:
            self._dense = (_unpack(ps.a_bits, ps.n, np.float64), _unpack(ps.b_bits, ps.n, np.float64))
        for lo in range(0, ps.m, self.chunk_rows):
            hi = min(ps.m, lo + self.chunk_rows)
            if self._dense is not None:
                yield lo, hi, self._dense[0][lo:hi], self._dense[1][lo:hi]
            else:
                yield (lo, hi, _unpack(ps.a_bits[lo:hi], ps.n, np.float64),
                       _unpack(ps.b_bits[lo:hi], ps.n, np.float64))

    def _square(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 1 or X.size != self.n * self.n:
            raise ValueError(f"expected a vector of length {self.n * self.n}, got shape {X.shape}")
        return X.reshape(self.n, self.n, order="F")

    def forward(self, X) -> np.ndarray:
        """Noise-free measurement vector ``A @ X`` (length M)."""
        P = self._square(X)
        self.n_forward += 1
        nnz = np.count_nonzero(P)
        if nnz <= self.sparse_fraction * P.size:
            aT, bT = self._transposed()
            rows, cols = np.nonzero(P)
            buf = np.zeros(aT.shape[1] * 8)
            _forward_sparse(aT, bT, rows.astype(np.int64), cols.astype(np.int64),
                            P[rows, cols], _BYTE_BITS, buf)
            return buf[:self.m]
        out = np.empty(self.m)
        for lo, hi, a, b in self._chunks():
            out[lo:hi] = np.einsum("ij,ij->i", a @ P, b)
        return out

    def adjoint(self, Y) -> np.ndarray:
        """Back-projection ``A^T @ Y`` (length n^2, column-major)."""
        Y = np.asarray(Y, dtype=np.float64)
        if Y.shape != (self.m,):
            raise ValueError(f"expected a vector of length {self.m}, got shape {Y.shape}")
        self.n_adjoint += 1
        G = np.zeros((self.n, self.n))
        for lo, hi, a, b in self._chunks():
            G += a.T @ (Y[lo:hi, None] * b)
        return G.ravel(order="F")

    def explicit_row(self, i: int) -> np.ndarray:
        if not 0 <= i < self.m:
            raise IndexError(f"row {i} out of range for M={self.m}")
        a = _unpack(self.patterns.a_bits[i:i + 1], self.n)[0]
        b = _unpack(self.patterns.b_bits[i:i + 1], self.n)[0]
        return np.kron(b, a)

    def explicit_matrix(self, rows=None) -> np.ndarray:
        """Dense ``A`` (or the listed rows of it) as float64; small sizes only."""
        rows = range(self.m) if rows is None else rows
        return np.array([self.explicit_row(i) for i in rows], dtype=np.float64).reshape(-1, self.n ** 2)


def forward_apply(op: SensingOperator, X) -> np.ndarray:
    return op.forward(X)


def adjoint_apply(op: SensingOperator, Y) -> np.ndarray:
    return op.adjoint(Y)


def explicit_row(op: SensingOperator, i: int) -> np.ndarray:
    return op.explicit_row(i)
