"""Concentrating bubble test functions on the torus,

    phi(x) = log sum_i t_i (1 + lambda^2 d(x, x_i)^2)^{-2},

and ladder fits of their energy, volume and average asymptotics in log(lambda).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import torus
from .functional import evaluate_J, fit_log_slope
from .torus import Barycenter, TorusGrid


class Underresolved(ValueError):
    pass


@dataclass(frozen=True)
class BubbleSpec:
    sigma: Barycenter
    lam: float

    def __post_init__(self):
        if not self.lam > 1:
            raise ValueError(f"lambda must exceed 1, got {self.lam}")
        pts = self.sigma.points
        if len(pts) > 1:
            d = torus.torus_distance(pts[:, None, :], pts[None, :, :])
            if np.any(d[~np.eye(len(pts), dtype=bool)] == 0):
                raise ValueError("bubble atoms must be pairwise distinct")


def grid_for(lam: float) -> TorusGrid:
    """Smallest power-of-two grid resolving a bubble of concentration ``lam``."""
    n = 16
    while n < 4 * lam:
        n *= 2
    return TorusGrid(n)


def raw_bubble(sigma: Barycenter, lam: float, grid: TorusGrid) -> np.ndarray:
    """The bubble sampled on the grid, before mean-zero projection.

    The convex-combination degenerate case (coincident atoms) is allowed here.
    """
    logs = [
        math.log(t) - 2.0 * np.log1p((lam * torus.distance_field(grid, x)) ** 2)
        for x, t in zip(sigma.points, sigma.weights)
    ]
    return logsumexp(np.stack(logs), axis=0)


def build_bubble(spec: BubbleSpec, grid: TorusGrid):
    """Mean-zero bubble field and the mean that was subtracted."""
    if spec.lam > grid.n / 4:
        raise Underresolved(f"lambda={spec.lam:g} needs n >= {4 * spec.lam:g}, grid has n={grid.n}")
    phi = raw_bubble(spec.sigma, spec.lam, grid)
    mean = float(np.mean(phi))
    return phi - mean, mean


def geometric_ladder(lo=10.0, hi=200.0, count=6):
    return list(np.geomspace(lo, hi, count))


def bubble_ladder(sigma: Barycenter, grid: TorusGrid, lambdas, a=None, rho=None):
    """Per-lambda energy, log-volume and average of the raw bubble.

    Rows are dicts with keys ``lambda, energy, log_int, avg`` and, when
    ``a`` is given, ``log_int_a`` (``log int e^{a phi}``) and, when ``rho`` is
    given too, ``J_total``.
    """
    rows = []
    for lam in lambdas:
        u, mean = build_bubble(BubbleSpec(sigma, lam), grid)
        row = {
            "lambda": float(lam),
            "energy": torus.dirichlet_energy(u),
            "log_int": torus.log_mean_exp(u) + mean,
            "avg": mean,
        }
        if a is not None:
            row["log_int_a"] = torus.log_mean_exp(u, scale=a) + a * mean
            if rho is not None:
                row["J_total"] = evaluate_J(u, rho, a).total
        rows.append(row)
    return rows


def verify_gradient_estimate(sigma: Barycenter, grid: TorusGrid, lambdas=None):
    """Energies over the ladder and the fitted coefficient of log(lambda).

    The coefficient should approach ``16 k pi`` for ``k`` atoms.
    """
    lambdas = lambdas if lambdas is not None else geometric_ladder()
    rows = bubble_ladder(sigma, grid, lambdas)
    energies = [r["energy"] for r in rows]
    return energies, fit_log_slope(lambdas, energies)


def gradient_bound(sigma: Barycenter, grid: TorusGrid, lambdas=None):
    """``max |grad phi| / lambda`` for each ladder point."""
    lambdas = lambdas if lambdas is not None else geometric_ladder()
    out = []
    for lam in lambdas:
        u, _ = build_bubble(BubbleSpec(sigma, lam), grid)
        gx, gy = torus.gradient(u)
        out.append(float(np.sqrt(gx * gx + gy * gy).max() / lam))
    return out


def verify_volume_estimates(sigma: Barycenter, grid: TorusGrid, lambdas=None, a=None):
    """Fitted log(lambda) coefficients of ``log int e^phi`` and ``int phi``.

    Returns ``(p, q)`` (expected about -2 and -4), or ``(p, q, p_a)`` when
    ``a`` is given, with ``p_a`` the coefficient of ``log int e^{a phi}``
    (expected about ``-4a`` for ``a < 1/2``).
    """
    lambdas = lambdas if lambdas is not None else geometric_ladder()
    rows = bubble_ladder(sigma, grid, lambdas, a=a)
    p = fit_log_slope(lambdas, [r["log_int"] for r in rows])
    q = fit_log_slope(lambdas, [r["avg"] for r in rows])
    if a is None:
        return p, q
    return p, q, fit_log_slope(lambdas, [r["log_int_a"] for r in rows])


def concentration(sigma: Barycenter, lam: float, grid: TorusGrid, radius=0.1, atom=0) -> float:
    """Fraction of ``e^phi`` mass inside ``B_radius`` of one atom."""
    phi = raw_bubble(sigma, lam, grid)
    w = np.exp(phi - phi.max())
    inside = torus.distance_field(grid, sigma.points[atom]) < radius
    return float(w[inside].sum() / w.sum())


LADDER_HEADER = ["lambda", "energy", "log_int", "avg", "J_total"]


def write_ladder_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LADDER_HEADER)
        for r in rows:
            w.writerow([repr(float(r.get(k, math.nan))) for k in LADDER_HEADER])
