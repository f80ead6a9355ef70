"""Kantorovich-Rubinstein (Wasserstein-1) distances on the flat torus.

Grid densities are block-summed to at most ``32 x 32`` cells before the
exact transportation LP is solved; each coarse cell is represented by the
centroid of its own mass, so the aggregation moves every unit of mass by at
most one coarse-cell diameter.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

from .torus import Barycenter, TorusGrid, torus_delta, torus_distance

MAX_CELLS = 32


class MassMismatch(ValueError):
    pass


class KRDistance(NamedTuple):
    value: float
    bound: float  # aggregation error bound (coarse-cell diameter)


def downsample(mu: np.ndarray, cells: int = MAX_CELLS):
    """Aggregate a grid measure into at most ``cells x cells`` mass-centroid atoms.

    Returns ``(points, weights, diameter)`` with empty cells dropped.
    """
    n = TorusGrid.of(mu).n
    c = min(n, cells)
    b = n // c
    X, Y = TorusGrid(n).mesh()
    blocks = (c, b, c, b)
    w = mu.reshape(blocks).sum(axis=(1, 3))
    # blocks are contiguous index ranges, so the plain weighted mean is a
    # centroid that never crosses the periodic seam
    with np.errstate(invalid="ignore", divide="ignore"):
        cx = (mu * X).reshape(blocks).sum(axis=(1, 3)) / w
        cy = (mu * Y).reshape(blocks).sum(axis=(1, 3)) / w
    keep = w > 0
    pts = np.column_stack([cx[keep], cy[keep]])
    return pts, w[keep], math.sqrt(2.0) * b / n


def cost_matrix(xs, ys) -> np.ndarray:
    return torus_distance(np.asarray(xs)[:, None, :], np.asarray(ys)[None, :, :])


def wasserstein1(xs, a, ys, b) -> float:
    """Exact W1 between two atomic measures on the torus (HiGHS simplex LP)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if abs(a.sum() - b.sum()) > 1e-8:
        raise MassMismatch(f"total masses differ: {a.sum()!r} vs {b.sum()!r}")
    m, k = len(a), len(b)
    C = cost_matrix(xs, ys)
    if k == 1:
        return float(C[:, 0] @ a)
    if m == 1:
        return float(C[0] @ b)
    # variables P[i, j] flattened row-major; row sums = a, column sums = b.
    # The last column constraint is implied by the others and is dropped.
    rows = np.concatenate([np.repeat(np.arange(m), k), m + np.tile(np.arange(k), m)])
    cols = np.concatenate([np.arange(m * k), np.arange(m * k)])
    A = coo_matrix((np.ones(2 * m * k), (rows, cols)), shape=(m + k, m * k)).tocsr()[: m + k - 1]
    rhs = np.concatenate([a, b])[: m + k - 1]
    res = linprog(C.ravel(), A_eq=A, b_eq=rhs, bounds=(0, None), method="highs-ds")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def kr_distance(mu: np.ndarray, nu: Barycenter, cells: int = MAX_CELLS) -> KRDistance:
    """W1 between a grid probability measure ``mu`` and an atomic measure ``nu``."""
    total = float(mu.sum())
    if abs(total - 1.0) > 1e-8:
        raise MassMismatch(f"grid measure has total mass {total!r}, expected 1")
    pts, w, diam = downsample(mu, cells)
    return KRDistance(wasserstein1(pts, w, nu.points, nu.weights), diam)


def kr_distance_grid(mu: np.ndarray, nu: np.ndarray, cells: int = MAX_CELLS) -> float:
    """W1 between two grid probability measures (aggregated to ``cells`` per side)."""
    p1, w1, _ = downsample(mu, cells)
    p2, w2, _ = downsample(nu, cells)
    return wasserstein1(p1, w1, p2, w2)


def _local_maxima(mu: np.ndarray):
    """Indices of periodic 8-neighbour local maxima, largest first."""
    is_max = mu > 0
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            if dx or dy:
                is_max &= mu >= np.roll(np.roll(mu, dx, 0), dy, 1)
    idx = np.argwhere(is_max)
    order = np.argsort(-mu[is_max], kind="stable")
    return idx[order]


def _kmedian_cost(pts, w, centers):
    d = cost_matrix(pts, centers)
    return float(np.sum(w * d.min(axis=1))), d.argmin(axis=1)


def _weiszfeld(pts, w, start, iters=50):
    """Weighted geometric median on the torus, unwrapped around ``start``."""
    y = np.array(start, dtype=float)
    for _ in range(iters):
        rel = torus_delta(pts, y)
        d = np.sqrt(np.sum(rel * rel, axis=1))
        if np.any(d < 1e-12):
            break
        coef = w / d
        step = coef @ rel / coef.sum()
        y = np.mod(y + step, 1.0)
        if np.hypot(*step) < 1e-10:
            break
    return y


def dist_to_barycenters(mu: np.ndarray, k: int, cells: int = MAX_CELLS, sweeps: int = 20):
    """Upper bound for the KR distance from ``mu`` to the k-point barycenters.

    For fixed atom positions the best weights are the Voronoi masses, which
    turns the problem into a weighted k-median.  Atoms start at the ``k``
    largest local maxima of ``mu`` and are refined block-coordinate-wise
    (Voronoi weights, then a geometric-median step per atom).  The value
    returned is the exact transport cost to the barycenter returned, so it
    always bounds the true distance from above.
    """
    if k not in (1, 2, 3, 4):
        raise ValueError("k must be one of 1, 2, 3, 4")
    n = TorusGrid.of(mu).n
    pts, w, _ = downsample(mu, cells)
    peaks = _local_maxima(mu)
    centers = [peaks[i] / n for i in range(min(k, len(peaks)))]
    # fill missing atoms with the heaviest coarse points not yet used
    for i in np.argsort(-w):
        if len(centers) >= k:
            break
        if all(torus_distance(pts[i], c) > 1e-12 for c in centers):
            centers.append(pts[i])
    centers = np.array(centers, dtype=float)

    cost, assign = _kmedian_cost(pts, w, centers)
    for _ in range(sweeps):
        for j in range(len(centers)):
            mine = assign == j
            if not mine.any():
                continue
            trial = centers.copy()
            trial[j] = _weiszfeld(pts[mine], w[mine], centers[j])
            c_new, a_new = _kmedian_cost(pts, w, trial)
            if c_new < cost:
                centers, cost, assign = trial, c_new, a_new
    weights = np.bincount(assign, weights=w, minlength=len(centers))
    used = weights > 0
    nu = Barycenter(centers[used], weights[used] / weights[used].sum())
    return wasserstein1(pts, w, nu.points, nu.weights), nu
