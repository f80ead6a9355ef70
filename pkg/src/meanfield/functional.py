"""Energy functional of the two-intensity mean field equation on the torus.

    J(u) = 1/2 int |grad u|^2 - rho1 (log int h1 e^u - int u)
                              - rho2 (log int h2 e^{a u} - a int u)

Its L^2 gradient (with respect to the area-weighted inner product
``<f, g> = mean(f g)``) is the Euler-Lagrange residual of the equation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import torus
from .mass_algebra import EIGHT_PI, RhoPair, check_a


@dataclass(frozen=True)
class Weights:
    """Positive weight functions h1, h2 (defaults: identically 1)."""

    h1: np.ndarray | float = 1.0
    h2: np.ndarray | float = 1.0

    def __post_init__(self):
        for name in ("h1", "h2"):
            h = np.asarray(getattr(self, name), dtype=float)
            if np.any(h <= 0):
                raise ValueError(f"{name} must be strictly positive")
            if h.max() / h.min() > 1e6:
                raise ValueError(f"{name} has max/min ratio above 1e6")

    def grids(self, shape):
        return (np.broadcast_to(np.asarray(self.h1, dtype=float), shape),
                np.broadcast_to(np.asarray(self.h2, dtype=float), shape))


class FunctionalValue(NamedTuple):
    total: float
    dirichlet: float
    rho1_term: float
    rho2_term: float


def _rho(rho):
    return (rho.rho1, rho.rho2) if isinstance(rho, RhoPair) else tuple(rho)


def evaluate_J(u, rho, a, h: Weights | None = None) -> FunctionalValue:
    h = h or Weights()
    rho1, rho2 = _rho(rho)
    h1, h2 = h.grids(u.shape)
    mean_u = torus.integrate(u)
    dirichlet = torus.dirichlet_energy(u)
    t1 = rho1 * (torus.log_mean_exp(u, h1) - mean_u)
    t2 = rho2 * (torus.log_mean_exp(u, h2, scale=a) - a * mean_u)
    return FunctionalValue(dirichlet - t1 - t2, dirichlet, t1, t2)


def normalize_components(u, a, h: Weights | None = None):
    """``u1 = u - log int h1 e^u`` and ``u2 = a u - log int h2 e^{a u}``."""
    h = h or Weights()
    h1, h2 = h.grids(u.shape)
    return u - torus.log_mean_exp(u, h1), a * u - torus.log_mean_exp(u, h2, scale=a)


def densities(u, a, h: Weights | None = None):
    """Normalized densities ``h1 e^{u1}`` and ``h2 e^{u2}`` (each with mean 1)."""
    h = h or Weights()
    h1, h2 = h.grids(u.shape)
    u1, u2 = normalize_components(u, a, h)
    return h1 * np.exp(u1), h2 * np.exp(u2)


def el_residual(u, rho, a, h: Weights | None = None) -> np.ndarray:
    """``-Lap u - rho1 (h1 e^u / int h1 e^u - 1) - a rho2 (h2 e^{au} / int h2 e^{au} - 1)``."""
    rho1, rho2 = _rho(rho)
    p1, p2 = densities(u, a, h)
    return -torus.laplacian(u) - rho1 * (p1 - 1.0) - a * rho2 * (p2 - 1.0)


def mt_deficit(u, a, rho2) -> float:
    """``1/2 int |grad u|^2 - 8 pi log int e^u - rho2 log int e^{a u}`` (h = 1)."""
    return (torus.dirichlet_energy(u) - EIGHT_PI * torus.log_mean_exp(u)
            - rho2 * torus.log_mean_exp(u, scale=a))


class AtomPlacement(ValueError):
    pass


def spread_atoms(count: int, min_sep: float = 0.3) -> np.ndarray:
    """``count`` points on the torus pairwise at least ``min_sep`` apart.

    Uses a diagonal lattice offset from grid nodes; feasible for up to 5 atoms.
    """
    layouts = {
        1: [(0.5, 0.5)],
        2: [(0.25, 0.25), (0.75, 0.75)],
        3: [(1 / 6, 1 / 6), (0.5, 0.5), (5 / 6, 5 / 6)],
        4: [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)],
        5: [(0.1, 0.1), (0.5, 0.3), (0.9, 0.5), (0.3, 0.7), (0.7, 0.9)],
    }
    if count not in layouts:
        raise AtomPlacement(f"cannot place {count} atoms at separation {min_sep}")
    pts = np.array(layouts[count])
    if count > 1:
        d = torus.torus_distance(pts[:, None, :], pts[None, :, :])
        if d[~np.eye(count, dtype=bool)].min() < min_sep:
            raise AtomPlacement(f"cannot place {count} atoms at separation {min_sep}")
    return pts


def fit_log_slope(lambdas, values) -> float:
    slope, _ = np.polyfit(np.log(np.asarray(lambdas, dtype=float)), np.asarray(values, dtype=float), 1)
    return float(slope)


FAMILY_HEADER = ["lambda", "J_total", "dirichlet", "rho1_term", "rho2_term"]


def bubble_family(k_atoms, rho1, a, rho2, lambdas, n=None):
    """J along equal-weight bubbles on ``k_atoms`` well separated points.

    Returns the rows ``(lambda, J_total, dirichlet, rho1_term, rho2_term)``.
    """
    from .bubbles import BubbleSpec, build_bubble, grid_for

    check_a(a)
    pts = spread_atoms(k_atoms)
    sigma = torus.Barycenter.uniform(pts)
    grid = torus.TorusGrid(n) if n else grid_for(max(lambdas))
    rows = []
    for lam in lambdas:
        u, _ = build_bubble(BubbleSpec(sigma, lam), grid)
        val = evaluate_J(u, (rho1, rho2), a)
        rows.append((float(lam), *map(float, val)))
    return rows


def improved_mt_family_test(k, rho1, a, rho2, lambdas, n=None, return_rows=False):
    """Fitted slope of J against log(lambda) along (k+1)-atom bubbles.

    Expected ``16 (k+1) pi - 2 rho1``: positive below ``rho1 = 8 (k+1) pi``,
    where the energy cannot be driven down by concentrating at k+1 points.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    lambdas = list(lambdas)
    if min(lambdas) < 10 or any(b <= a_ for a_, b in zip(lambdas, lambdas[1:])):
        raise ValueError("lambdas must be increasing and >= 10")
    rows = bubble_family(k + 1, rho1, a, rho2, lambdas, n=n)
    slope = fit_log_slope([r[0] for r in rows], [r[1] for r in rows])
    return (slope, rows) if return_rows else slope


def write_family_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FAMILY_HEADER)
        for row in rows:
            w.writerow([repr(float(x)) for x in row])


def expected_family_slope(k_atoms: int, rho1: float) -> float:
    return 16.0 * k_atoms * math.pi - 2.0 * rho1
