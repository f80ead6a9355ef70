"""Damped Newton solver for the mean field equation on the torus, parameter
continuation, and blow-up diagnostics on near-singular solutions.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg, minres

from . import torus
from .functional import FunctionalValue, Weights, densities, el_residual, evaluate_J, normalize_components
from .mass_algebra import EIGHT_PI, BlowupType, MassPair, RhoPair, check_a, classify_local_mass, min_mass_rho2

log = logging.getLogger(__name__)


class Diverged(RuntimeError):
    def __init__(self, msg, last_iterate):
        super().__init__(msg)
        self.last_iterate = last_iterate


class SingularJacobian(RuntimeError):
    def __init__(self, msg, last_iterate):
        super().__init__(msg)
        self.last_iterate = last_iterate


class PathStuck(RuntimeError):
    def __init__(self, msg, records):
        super().__init__(msg)
        self.records = records


def _as_rho(rho) -> RhoPair:
    return rho if isinstance(rho, RhoPair) else RhoPair(*map(float, rho))


@dataclass
class SolveConfig:
    rho: RhoPair
    a: float
    n: int = 128
    h: Weights = field(default_factory=Weights)
    max_iter: int = 50
    residual_tol: float = 1e-10
    armijo: float = 1e-4
    damping_floor: float = 1e-4
    path: list = field(default_factory=list)
    step: float = math.pi
    max_backtracks: int = 6
    allow_outside: bool = False

    def __post_init__(self):
        self.rho = _as_rho(self.rho)
        self.path = [_as_rho(p) for p in self.path]
        self.validate()

    def validate(self):
        check_a(self.a)
        torus.TorusGrid(self.n)
        if not 1e-12 <= self.residual_tol <= 1e-6:
            raise ValueError("residual_tol must lie in [1e-12, 1e-6]")
        if not self.step > 0:
            raise ValueError("continuation step must be positive")
        if self.max_iter < 1 or self.max_backtracks < 0:
            raise ValueError("max_iter must be >= 1 and max_backtracks >= 0")
        if not 0 < self.damping_floor < 1:
            raise ValueError("damping_floor must lie in (0, 1)")
        return self

    @property
    def grid(self) -> torus.TorusGrid:
        return torus.TorusGrid(self.n)

    def with_rho(self, rho) -> "SolveConfig":
        from dataclasses import replace

        return replace(self, rho=_as_rho(rho), path=[])


@dataclass(frozen=True)
class SolutionRecord:
    u: np.ndarray
    residual_norm: float
    rho: RhoPair
    iterations: int
    J_value: FunctionalValue
    a: float
    h: Weights = field(default_factory=Weights)
    status: str = "converged"


# -- linearization ----------------------------------------------------------

def jacobian_operator(u, rho: RhoPair, a, h: Weights | None = None) -> LinearOperator:
    """Frechet derivative of :func:`el_residual` at ``u``, on flattened fields.

    The derivative of a normalized exponential ``p = h e^u / int h e^u`` in
    direction ``v`` is ``p v - p <p v>``; the second term comes from the
    denominator and is what keeps Newton quadratic.
    """
    n = u.shape[0]
    p1, p2 = densities(u, a, h)
    c1, c2 = rho.rho1, a * a * rho.rho2

    def matvec(x):
        v = x.reshape(n, n)
        v = v - v.mean()
        out = -torus.laplacian(v)
        q1 = p1 * v
        q2 = p2 * v
        out -= c1 * (q1 - p1 * q1.mean()) + c2 * (q2 - p2 * q2.mean())
        return (out - out.mean()).ravel()

    return LinearOperator((n * n, n * n), matvec=matvec, rmatvec=matvec, dtype=float)


def _preconditioner(n) -> LinearOperator:
    def apply(x):
        return torus.inverse_laplacian(x.reshape(n, n)).ravel()

    return LinearOperator((n * n, n * n), matvec=apply, rmatvec=apply, dtype=float)


def newton_direction(u, r, rho: RhoPair, a, h=None):
    """Solve ``J delta = -r`` on the mean-zero subspace (PCG, then MINRES)."""
    n = u.shape[0]
    A = jacobian_operator(u, rho, a, h)
    M = _preconditioner(n)
    b = -(r - r.mean()).ravel()
    rtol = max(1e-13, min(1e-4, float(np.linalg.norm(b) / n)))
    x, info = cg(A, b, M=M, rtol=rtol, maxiter=400)
    if info != 0 or not np.all(np.isfinite(x)):
        log.info("CG did not converge (info=%s), falling back to MINRES", info)
        x, info = minres(A, b, M=M, rtol=rtol, maxiter=800)
        if info != 0 or not np.all(np.isfinite(x)):
            raise SingularJacobian(f"linearized solve failed (MINRES info={info})", u)
    d = x.reshape(n, n)
    return d - d.mean()


def _check_u0(u0, n):
    if u0.shape != (n, n):
        raise ValueError(f"initial field has shape {u0.shape}, config expects ({n}, {n})")
    if abs(float(np.mean(u0))) > 1e-10:
        raise ValueError("initial field must be mean-zero")


def newton_solve(cfg: SolveConfig, u0=None) -> SolutionRecord:
    """Damped Newton for the mean field equation starting from ``u0``.

    Converged when the sup norm of the Euler-Lagrange residual is below
    ``cfg.residual_tol``.  Step lengths are chosen by Armijo backtracking on
    the L2 residual (halving, down to ``cfg.damping_floor``).
    """
    rho, a, h, n = cfg.rho, cfg.a, cfg.h, cfg.n
    u = np.zeros((n, n)) if u0 is None else np.array(u0, dtype=float)
    _check_u0(u, n)

    def norms(r):
        return float(np.abs(r).max()), float(np.sqrt(np.mean(r * r)))

    r = el_residual(u, rho, a, h)
    rinf, r2 = norms(r)
    for it in range(1, cfg.max_iter + 1):
        if not math.isfinite(rinf):
            raise Diverged("residual became non-finite", u)
        if rinf < cfg.residual_tol:
            return _record(u, rinf, rho, it, a, h)
        d = newton_direction(u, r, rho, a, h)
        t = 1.0
        while True:
            trial = u + t * d
            rt = el_residual(trial, rho, a, h)
            rinf_t, r2_t = norms(rt)
            if math.isfinite(r2_t) and r2_t <= (1.0 - cfg.armijo * t) * r2:
                break
            if t / 2 < cfg.damping_floor:
                # accept the floor step so a stalled line search still moves
                break
            t /= 2
        if not math.isfinite(r2_t):
            raise Diverged("line search produced a non-finite residual", u)
        u = trial - trial.mean()
        r, rinf, r2 = rt, rinf_t, r2_t
        log.debug("newton it=%d step=%.3g |r|inf=%.3e", it, t, rinf)
    if rinf < cfg.residual_tol:
        return _record(u, rinf, rho, cfg.max_iter + 1, a, h)
    raise Diverged(f"no convergence after {cfg.max_iter} iterations (|r|inf={rinf:.3e})", u)


def _record(u, rinf, rho, it, a, h):
    # re-check independently of the loop's bookkeeping
    check = float(np.abs(el_residual(u, rho, a, h)).max())
    return SolutionRecord(u=u, residual_norm=check, rho=rho, iterations=it,
                          J_value=evaluate_J(u, rho, a, h), a=a, h=h)


def refine(rec: SolutionRecord, cfg_fine: SolveConfig) -> SolutionRecord:
    """Inject a solution onto the finer grid of ``cfg_fine`` and re-solve there.

    ``cfg_fine`` carries the weights sampled at the finer resolution.
    """
    u = torus.interpolate(rec.u, cfg_fine.n)
    return newton_solve(cfg_fine, u - u.mean())


# -- continuation -----------------------------------------------------------

def inside_existence_region(rho: RhoPair, a: float) -> bool:
    """``rho1`` off the lattice ``8 pi N`` and ``rho2`` below the threshold."""
    k = rho.rho1 / EIGHT_PI
    off_lattice = abs(k - round(k)) > 1e-9 or round(k) == 0
    below = a >= 0.5 or rho.rho2 < min_mass_rho2(a)
    return off_lattice and below


def _segments(path, step):
    for start, end in zip(path, path[1:]):
        dist = math.hypot(end.rho1 - start.rho1, end.rho2 - start.rho2)
        yield start, end, dist


def continuation_run(cfg: SolveConfig, u0=None) -> list:
    """Natural-parameter continuation along the piecewise linear ``cfg.path``.

    Each point is warm-started from the previous converged state; on failure
    the step is halved (at most ``cfg.max_backtracks`` times in a row), and
    after a success it is allowed to grow back to ``cfg.step``.
    """
    path = cfg.path
    if not path:
        return []
    if not cfg.allow_outside:
        bad = [p for p in path if not inside_existence_region(p, cfg.a)]
        if bad:
            raise ValueError(f"path leaves the existence region at {bad[0]}; set allow_outside")
    records = []
    u = np.zeros((cfg.n, cfg.n)) if u0 is None else np.array(u0, dtype=float)
    try:
        rec = newton_solve(cfg.with_rho(path[0]), u)
    except (Diverged, SingularJacobian) as exc:
        raise PathStuck(f"no solution at path start {path[0]}: {exc}", records) from exc
    records.append(rec)
    for start, end, dist in _segments(path, cfg.step):
        s, step, halvings = 0.0, cfg.step, 0
        while s < dist - 1e-12:
            ds = min(step, dist - s)
            f = (s + ds) / dist
            target = RhoPair(start.rho1 + f * (end.rho1 - start.rho1), start.rho2 + f * (end.rho2 - start.rho2))
            try:
                rec = newton_solve(cfg.with_rho(target), records[-1].u)
            except (Diverged, SingularJacobian) as exc:
                halvings += 1
                log.warning("continuation failed at rho=(%.6g, %.6g), sup|u|=%.4g: %s",
                            target.rho1, target.rho2, float(np.abs(records[-1].u).max()), exc)
                if halvings > cfg.max_backtracks:
                    raise PathStuck(f"step underflow before rho=({target.rho1:.6g}, {target.rho2:.6g})",
                                    records) from exc
                step /= 2
                continue
            records.append(rec)
            s += ds
            halvings = 0
            step = min(cfg.step, 2 * step)
    return records


# -- blow-up diagnostics ----------------------------------------------------

PEAK_DROP = 2.0
MERGE_CELLS = 4
# M = max(u1, u2) must reach this height (density e^3 ~ 20 times its mean)
# before any peak is reported; a bounded solution near u = 0 has none.
MIN_PEAK_HEIGHT = 3.0


@dataclass
class BlowupReport:
    peak_set: np.ndarray
    local_masses: list  # absolute (m1, m2) per peak at ball_radius
    residual_masses: tuple
    sup_norm: float
    selection_bound: float
    radii: tuple = ()
    mass_sequences: list = field(default_factory=list)  # per peak: [(m1, m2) at each radius]
    extrapolated: list = field(default_factory=list)  # Aitken limit per peak
    rho: tuple = ()


def _peaks(M, merge_cells, min_height):
    n = M.shape[0]
    top = float(M.max())
    if top < min_height:
        return np.zeros((0, 2))
    is_max = M >= top - PEAK_DROP
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            if dx or dy:
                is_max &= M >= np.roll(np.roll(M, dx, 0), dy, 1)
    idx = np.argwhere(is_max)
    idx = idx[np.argsort(-M[is_max], kind="stable")]
    kept = []
    for i in idx:
        p = i / n
        if all(torus.torus_distance(p, q) > merge_cells / n for q in kept):
            kept.append(p)
    return np.array(kept).reshape(-1, 2)


def _ball_masses(peaks, grid, dens1, dens2, r):
    """Mass of each density in ``B_r`` of each peak (nearest-peak assignment)."""
    if len(peaks) == 0:
        return []
    d = np.stack([torus.distance_field(grid, p) for p in peaks])
    owner = d.argmin(axis=0)
    near = d.min(axis=0) < r
    out = []
    for j in range(len(peaks)):
        mask = near & (owner == j)
        out.append((float(dens1[mask].sum()), float(dens2[mask].sum())))
    return out


def _aitken(x0, x1, x2):
    d1, d2 = x1 - x0, x2 - x1
    den = d2 - d1
    if abs(den) <= 1e-14 * max(1.0, abs(x2)):
        return x2
    return x2 - d2 * d2 / den


def blowup_diagnostics(rec: SolutionRecord, ball_radius: float, min_height: float = MIN_PEAK_HEIGHT,
                       merge_cells: int = MERGE_CELLS) -> BlowupReport:
    """Peaks of ``max(u1, u2)`` and local masses on shrinking balls around them.

    Masses are ``int_{B_r(p)} rho_i h_i e^{u_i}`` in absolute units at
    ``r = ball_radius, ball_radius/2, ball_radius/4``.  The extrapolated
    column applies Aitken's delta-squared to that sequence, which assumes only
    geometric convergence as the radius halves.
    """
    u, a, h = rec.u, rec.a, rec.h
    grid = torus.TorusGrid.of(u)
    if not 2.0 / grid.n < ball_radius < 0.25:
        raise ValueError(f"ball_radius must lie in ({2.0 / grid.n:g}, 0.25)")
    rho = rec.rho
    u1, u2 = normalize_components(u, a, h)
    M = np.maximum(u1, u2)
    p1, p2 = densities(u, a, h)
    cell = 1.0 / (grid.n * grid.n)
    dens1 = rho.rho1 * p1 * cell
    dens2 = rho.rho2 * p2 * cell
    peaks = _peaks(M, merge_cells, min_height)

    radii = (ball_radius, ball_radius / 2, ball_radius / 4)
    per_radius = [_ball_masses(peaks, grid, dens1, dens2, r) for r in radii]
    local = per_radius[0]
    total1, total2 = float(dens1.sum()), float(dens2.sum())
    residual = (total1 - sum(m[0] for m in local), total2 - sum(m[1] for m in local))
    seqs = [[per_radius[k][j] for k in range(3)] for j in range(len(peaks))]
    rich = [tuple(_aitken(s[0][i], s[1][i], s[2][i]) for i in (0, 1)) for s in seqs]

    if len(peaks):
        dist = np.min(np.stack([torus.distance_field(grid, p) for p in peaks]), axis=0)
        with np.errstate(divide="ignore"):
            sel = M + 2 * np.log(dist)
        selection = float(sel[dist > 0].max())
    else:
        selection = math.nan
    return BlowupReport(peaks, local, residual, float(np.abs(u).max()), selection,
                        radii, seqs, rich, (rho.rho1, rho.rho2))


def classify_blowup(report: BlowupReport, a: float, tol: float = 1e-2) -> list[BlowupType]:
    """Classify each peak's local masses (converted to units of 2 pi)."""
    out = [classify_local_mass(MassPair.from_absolute(*m), a, tol) for m in report.local_masses]
    flag = r1_flag(report)
    if flag:
        log.warning(flag)
    return out


def r1_flag(report: BlowupReport, rel=0.05) -> str:
    """Message when a peak carries first-component mass but residual r1 mass stays large."""
    if any(m[0] > 0 for m in report.local_masses) and report.rho:
        if report.residual_masses[0] > rel * report.rho[0]:
            return (f"residual r1 mass {report.residual_masses[0]:.4g} is not small "
                    f"although a peak carries first-component mass")
    return ""


# -- persistence ------------------------------------------------------------

DIAG_HEADER = ["peak_x", "peak_y", "radius", "m1", "m2"]


def save_run(run_dir, cfg: SolveConfig, rec: SolutionRecord, report: BlowupReport | None = None, extra=None):
    """Write ``config.txt``, ``field.bin`` and, with a report, ``diagnostics.csv``."""
    os.makedirs(run_dir, exist_ok=True)
    items = {
        "rho1_over_pi": repr(cfg.rho.rho1 / math.pi),
        "rho2_over_pi": repr(cfg.rho.rho2 / math.pi),
        "a": repr(cfg.a),
        "n": str(cfg.n),
        "max_iter": str(cfg.max_iter),
        "residual_tol": repr(cfg.residual_tol),
        "residual_norm": repr(rec.residual_norm),
        "iterations": str(rec.iterations),
        "J_total": repr(rec.J_value.total),
    }
    items.update(extra or {})
    with open(os.path.join(run_dir, "config.txt"), "w") as fh:
        for k, v in items.items():
            fh.write(f"{k} = {v}\n")
    torus.write_field_binary(os.path.join(run_dir, "field.bin"), rec.u)
    if report is not None:
        write_diagnostics_csv(report, os.path.join(run_dir, "diagnostics.csv"))


def write_diagnostics_csv(report: BlowupReport, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DIAG_HEADER)
        for p, seq in zip(report.peak_set, report.mass_sequences):
            for r, (m1, m2) in zip(report.radii, seq):
                w.writerow([repr(float(p[0])), repr(float(p[1])), repr(r), repr(m1), repr(m2)])
        w.writerow(["residual", "", "", repr(report.residual_masses[0]), repr(report.residual_masses[1])])
