"""Fields on the flat unit torus [0, 1)^2 sampled on a uniform n x n grid.

Fields are plain ``(n, n)`` float arrays indexed ``[i, j]`` with
``x = i/n`` and ``y = j/n``.  Integrals use the uniform area weight
``1/n^2`` (total area 1), which is exact for trigonometric polynomials below
the Nyquist frequency.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp


class NonZeroMean(ValueError):
    pass


@dataclass(frozen=True)
class TorusGrid:
    n: int

    def __post_init__(self):
        n = self.n
        if n < 16 or n & (n - 1):
            raise ValueError(f"grid size must be a power of two >= 16, got {n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def coords(self) -> np.ndarray:
        return np.arange(self.n) / self.n

    def mesh(self):
        x = self.coords
        return np.meshgrid(x, x, indexing="ij")

    @classmethod
    def of(cls, u: np.ndarray) -> "TorusGrid":
        if u.ndim != 2 or u.shape[0] != u.shape[1]:
            raise ValueError(f"expected a square field, got shape {u.shape}")
        return cls(u.shape[0])


@lru_cache(maxsize=8)
def _ksq(n: int) -> np.ndarray:
    """|k|^2 with k = 2*pi*(integer frequency), laid out for ``rfft2``."""
    kx = 2 * np.pi * np.fft.fftfreq(n, 1.0 / n)
    ky = 2 * np.pi * np.fft.rfftfreq(n, 1.0 / n)
    ksq = kx[:, None] ** 2 + ky[None, :] ** 2
    ksq.setflags(write=False)
    return ksq


@lru_cache(maxsize=8)
def _wavenumbers(n: int):
    kx = 2 * np.pi * np.fft.fftfreq(n, 1.0 / n)
    ky = 2 * np.pi * np.fft.rfftfreq(n, 1.0 / n)
    # the Nyquist row/column has no well-defined derivative for real fields
    if n % 2 == 0:
        kx = kx.copy()
        ky = ky.copy()
        kx[n // 2] = 0.0
        ky[-1] = 0.0
    return kx[:, None], ky[None, :]


def integrate(f: np.ndarray) -> float:
    return float(np.mean(f))


def mean_zero(u: np.ndarray) -> np.ndarray:
    return u - np.mean(u)


def laplacian(u: np.ndarray) -> np.ndarray:
    """Spectral Laplacian."""
    n = TorusGrid.of(u).n
    return np.fft.irfft2(-_ksq(n) * np.fft.rfft2(u), s=u.shape)


def poisson_solve(f: np.ndarray) -> np.ndarray:
    """Mean-zero ``u`` with ``-Laplacian(u) = f``, mode by mode."""
    n = TorusGrid.of(f).n
    m = float(np.mean(f))
    if abs(m) > 1e-10:
        raise NonZeroMean(f"source has mean {m:.3e}; -Laplacian is only invertible on mean-zero fields")
    fh = np.fft.rfft2(f)
    ksq = _ksq(n)
    uh = np.zeros_like(fh)
    nz = ksq > 0
    uh[nz] = fh[nz] / ksq[nz]
    return np.fft.irfft2(uh, s=f.shape)


def inverse_laplacian(f: np.ndarray) -> np.ndarray:
    """``(-Laplacian)^{-1}`` on the mean-zero part of ``f`` (mean silently dropped)."""
    return poisson_solve(f - np.mean(f))


def dirichlet_energy(u: np.ndarray) -> float:
    """``(1/2) int |grad u|^2`` via Parseval."""
    n = TorusGrid.of(u).n
    uh = np.fft.rfft2(u) / (n * n)
    w = np.full(uh.shape[1], 2.0)
    # columns without a conjugate partner in the half spectrum
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return float(0.5 * np.sum(w[None, :] * _ksq(n) * np.abs(uh) ** 2))


def gradient(u: np.ndarray):
    """Spectral gradient ``(du/dx, du/dy)``."""
    kx, ky = _wavenumbers(TorusGrid.of(u).n)
    uh = np.fft.rfft2(u)
    return (np.fft.irfft2(1j * kx * uh, s=u.shape), np.fft.irfft2(1j * ky * uh, s=u.shape))


def log_mean_exp(u: np.ndarray, h: np.ndarray | float = 1.0, scale: float = 1.0) -> float:
    """``log int h e^{scale*u}``, evaluated with a max shift."""
    if not 0 < scale <= 1:
        raise ValueError("scale must lie in (0, 1]")
    b = np.broadcast_to(np.asarray(h, dtype=float), u.shape)
    if np.any(b <= 0):
        raise ValueError("weight h must be positive")
    return float(logsumexp(scale * u, b=b) - 2 * math.log(u.shape[0]))


def interpolate(u: np.ndarray, n_new: int) -> np.ndarray:
    """Resample onto an ``n_new`` grid.

    Upsampling is spectral zero-padding (the old Nyquist mode is split
    evenly between +/- frequencies so the result stays real).  Downsampling
    is plain subsampling, exact when ``u`` is band-limited to the coarse grid.
    """
    n = TorusGrid.of(u).n
    TorusGrid(n_new)
    if n_new == n:
        return u.copy()
    if n_new < n:
        step = n // n_new
        return u[::step, ::step].copy()
    half = n // 2
    uh = np.fft.fft2(u)
    out = np.zeros((n_new, n_new), dtype=complex)
    src = np.r_[0:half, n - half + 1 : n]
    dst = np.r_[0:half, n_new - half + 1 : n_new]
    out[np.ix_(dst, dst)] = uh[np.ix_(src, src)]
    for d in (half, n_new - half):
        out[d, dst] = 0.5 * uh[half, src]
        out[dst, d] = 0.5 * uh[src, half]
        for d2 in (half, n_new - half):
            out[d, d2] = 0.25 * uh[half, half]
    return np.real(np.fft.ifft2(out)) * (n_new / n) ** 2


def torus_delta(x, y):
    """Componentwise periodic displacement ``x - y`` folded into [-1/2, 1/2]."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return d - np.round(d)


def torus_distance(x, y):
    """Geodesic distance on the flat unit torus; broadcasts over leading axes."""
    d = torus_delta(x, y)
    return np.sqrt(np.sum(d * d, axis=-1))


def distance_field(grid: TorusGrid, point) -> np.ndarray:
    X, Y = grid.mesh()
    dx = torus_delta(X, point[0])
    dy = torus_delta(Y, point[1])
    return np.sqrt(dx * dx + dy * dy)


@dataclass(frozen=True)
class Barycenter:
    """Atomic probability measure ``sum_i t_i delta_{x_i}`` on the torus."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.mod(np.atleast_2d(np.asarray(self.points, dtype=float)), 1.0)
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if pts.shape != (len(w), 2):
            raise ValueError("need one weight per 2-D atom")
        if np.any(w <= 0):
            raise ValueError("barycenter weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"barycenter weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def k(self) -> int:
        return len(self.weights)

    @classmethod
    def uniform(cls, points):
        points = np.atleast_2d(points)
        return cls(points, np.full(len(points), 1.0 / len(points)))


def density(values: np.ndarray) -> np.ndarray:
    """Normalize a nonnegative grid function into a probability vector on the grid."""
    TorusGrid.of(values)
    if np.any(values < 0):
        raise ValueError("density weights must be nonnegative")
    total = values.sum()
    if not total > 0:
        raise ValueError("density has zero total mass")
    return values / total


# -- serialization ---------------------------------------------------------

_HEADER = struct.Struct("<q")


def write_field_binary(path, u: np.ndarray):
    """Header: n as little-endian int64; then n*n little-endian doubles, row-major."""
    n = TorusGrid.of(u).n
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(n))
        fh.write(np.ascontiguousarray(u, dtype="<f8").tobytes())


def read_field_binary(path) -> np.ndarray:
    with open(path, "rb") as fh:
        (n,) = _HEADER.unpack(fh.read(_HEADER.size))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n * n:
        raise ValueError(f"{path}: expected {n * n} values, found {data.size}")
    return data.reshape(n, n).copy()


def write_field_csv(path, u: np.ndarray):
    grid = TorusGrid.of(u)
    X, Y = grid.mesh()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "value"])
        for x, y, v in zip(X.ravel(), Y.ravel(), u.ravel()):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(v))])
