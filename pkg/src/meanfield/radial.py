"""Radial shooting for the entire limit equation

    v'' + v'/r + rho1 e^v + rho2 a1 e^{a v} = 0,   a1 = a e^{c0},

and its single-component special cases (``rho2 = 0`` or ``rho1 = 0``).

Masses are in units of 2*pi.  The running total mass is
``eta(r) = -r v'(r)``; the component accumulators are
``sigma1(r) = int_0^r s rho1 e^v ds`` and
``sigma2(r) = int_0^r s rho2 e^{c0} e^{a v} ds`` so that
``eta = sigma1 + a*sigma2``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .mass_algebra import admissible_eta_interval, check_a

log = logging.getLogger(__name__)

# r -> log r switch point
R_SWITCH = 1.0
# series start radius, small enough that the O(r^4) term is below rounding
R_START = 1e-5
EXP_MAX = 700.0


class StepFailure(RuntimeError):
    def __init__(self, msg, last_radius):
        super().__init__(f"{msg} (last good radius {last_radius:.6g})")
        self.last_radius = last_radius


class Overflow(RuntimeError):
    pass


class NonConverged(RuntimeError):
    pass


@dataclass
class ShootParams:
    rho1: float = 1.0
    rho2: float = 0.0
    a: float = 0.5
    c0: float = 0.0
    v0: float = 0.0
    r_max: float = 1e4
    rtol: float = 1e-10
    atol: float = 1e-12

    def validate(self):
        check_a(self.a)
        if self.rho1 < 0 or self.rho2 < 0:
            raise ValueError("rho1, rho2 must be nonnegative")
        if self.rho1 == 0 and self.rho2 == 0:
            raise ValueError("at least one of rho1, rho2 must be positive")
        if not self.r_max > R_SWITCH:
            raise ValueError("r_max must exceed 1")
        for name in ("rtol", "atol"):
            tol = getattr(self, name)
            if not 0 < tol <= 1e-3:
                raise ValueError(f"{name} must lie in (0, 1e-3], got {tol!r}")
        return self

    @property
    def a1(self) -> float:
        return self.a * math.exp(self.c0)


@dataclass
class RadialProfile:
    params: ShootParams
    r: np.ndarray
    v: np.ndarray
    eta: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray
    status: str = "ok"
    extra: dict = field(default_factory=dict)

    @property
    def r_max(self) -> float:
        return float(self.r[-1])

    def at_end(self):
        return float(self.eta[-1]), float(self.sigma1[-1]), float(self.sigma2[-1])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "v", "eta", "sigma1", "sigma2"])
            for row in zip(self.r, self.v, self.eta, self.sigma1, self.sigma2):
                w.writerow([repr(float(x)) for x in row])


def shoot(p: ShootParams) -> RadialProfile:
    """Integrate the radial limit equation from the origin out to ``p.r_max``.

    Inner phase in ``r`` on ``[R_START, 1]`` after a series start, outer phase
    in ``t = log r`` where the decay is logarithmic.  The mass accumulators are
    integrated as extra ODE components, so they share the step control of
    ``v``.
    """
    p.validate()
    rho1, rho2, a = p.rho1, p.rho2, p.a
    k2 = rho2 * math.exp(p.c0)  # sigma2 density coefficient
    k2a = rho2 * p.a1  # = a * k2, coefficient in the equation

    if max(p.v0, a * p.v0) + math.log(max(rho1, k2a, 1e-300)) > EXP_MAX:
        raise Overflow(f"e^v overflows at the centre for v0={p.v0}")

    def e1(v):
        return rho1 * np.exp(v)

    def e2(v):
        return k2 * np.exp(a * v)

    # series start: v = v0 - F0 r^2/4, eta = F0 r^2/2, sigma_i = e_i(v0) r^2/2
    F0 = e1(p.v0) + a * e2(p.v0)
    r0 = R_START
    y0 = [
        p.v0 - F0 * r0**2 / 4,
        -F0 * r0 / 2,
        e1(p.v0) * r0**2 / 2,
        e2(p.v0) * r0**2 / 2,
    ]

    def rhs_r(r, y):
        v, w = y[0], y[1]
        if v > EXP_MAX:
            raise Overflow(f"e^v overflows at r={r:.3g}")
        E1, E2 = e1(v), e2(v)
        return [w, -w / r - E1 - a * E2, r * E1, r * E2]

    inner = solve_ivp(rhs_r, (r0, R_SWITCH), y0, method="RK45", rtol=p.rtol, atol=p.atol)
    if inner.status != 0:
        raise StepFailure(inner.message, inner.t[-1])

    # outer phase: V(t) = v(e^t), V' = r v' = -eta
    v1, w1, s1, s2 = inner.y[:, -1]

    def rhs_t(t, y):
        v = y[0]
        if v > EXP_MAX:
            raise Overflow(f"e^v overflows at r={math.exp(t):.3g}")
        r2 = math.exp(2 * t)
        E1, E2 = r2 * e1(v), r2 * e2(v)
        return [y[1], -E1 - a * E2, E1, E2]

    outer = solve_ivp(
        rhs_t, (0.0, math.log(p.r_max)), [v1, R_SWITCH * w1, s1, s2],
        method="RK45", rtol=p.rtol, atol=p.atol,
    )
    if outer.status != 0:
        raise StepFailure(outer.message, math.exp(outer.t[-1]))

    r = np.concatenate([[0.0], inner.t, np.exp(outer.t[1:])])
    v = np.concatenate([[p.v0], inner.y[0], outer.y[0, 1:]])
    eta = np.concatenate([[0.0], -inner.t * inner.y[1], -outer.y[1, 1:]])
    sig1 = np.concatenate([[0.0], inner.y[2], outer.y[2, 1:]])
    sig2 = np.concatenate([[0.0], inner.y[3], outer.y[3, 1:]])
    r[-1] = p.r_max
    return RadialProfile(p, r, v, eta, sig1, sig2)


def limit_mass(profile: RadialProfile, fit_window=(1e3, 1e4)) -> float:
    """Asymptotic total mass from the log-decay ``v ~ -eta log r + c`` over ``fit_window``.

    Raises :class:`NonConverged` when the window is not inside ``(1, r_max]``,
    when ``eta`` still moves by 1% or more across the window, or when the
    fitted slope disagrees with ``eta(r_max)`` by 5% or more.
    """
    lo, hi = fit_window
    r = profile.r
    if not (1.0 < lo < hi <= profile.r_max * (1 + 1e-12)):
        raise NonConverged(f"fit window {fit_window} not inside (1, {profile.r_max:g}]")
    sel = (r >= lo) & (r <= hi)
    if sel.sum() < 3:
        raise NonConverged("fewer than three integrator points in the fit window")
    eta_w = profile.eta[sel]
    drift = (eta_w.max() - eta_w.min()) / eta_w.max()
    if drift >= 0.01:
        raise NonConverged(f"eta drifts by {100 * drift:.2f}% across the fit window")
    slope, _ = np.polyfit(np.log(r[sel]), profile.v[sel], 1)
    eta_end = float(profile.eta[-1])
    if abs(-slope - eta_end) >= 0.05 * eta_end:
        raise NonConverged(f"fitted slope {-slope:.4g} inconsistent with eta(r_max)={eta_end:.4g}")
    return float(-slope)


def verify_pohozaev(profile: RadialProfile) -> float:
    """``|eta^2 - 4(sigma1 + sigma2)|`` at ``r_max``."""
    eta, s1, s2 = profile.at_end()
    return abs(eta * eta - 4.0 * (s1 + s2))


def boundary_term(profile: RadialProfile) -> float:
    """``-2 R^2 G(v(R))`` with ``G(v) = rho1 e^v + rho2 e^{c0} e^{a v}``.

    On a finite disc ``eta^2 - 4(sigma1 + sigma2)`` equals this term exactly,
    so it separates truncation at ``r_max`` from integration error.
    """
    p = profile.params
    R, v = profile.r_max, float(profile.v[-1])
    G = p.rho1 * math.exp(v) + p.rho2 * math.exp(p.c0) * math.exp(p.a * v)
    return -2.0 * R * R * G


def classical_liouville(r, rho1, v0=0.0):
    """Closed-form radial solution of ``v'' + v'/r + rho1 e^v = 0`` with ``v(0) = v0``."""
    lam2 = rho1 * math.exp(v0) / 8.0
    return np.log(8.0 * lam2 / (rho1 * (1.0 + lam2 * np.asarray(r) ** 2) ** 2))


SWEEP_HEADER = ["a", "c0", "ratio", "sigma1", "sigma2", "eta", "pohozaev_residual", "status"]


def sweep_eta(a, c0_grid, rho_ratio_grid, r_max=1e4, fit_window=(1e3, 1e4), rtol=1e-10, atol=1e-12):
    """Shoot over a ``(c0, rho2/rho1)`` grid with ``rho1 = 1``, ``v0 = 0``.

    Returns a list of dict rows with keys :data:`SWEEP_HEADER`.  Status is
    ``converged``, ``nonconverged``, ``interval_violation``, ``step_failure``
    or ``overflow``; failures are recorded and the sweep continues.
    """
    check_a(a)
    c0_grid, rho_ratio_grid = list(c0_grid), list(rho_ratio_grid)
    if not c0_grid or not rho_ratio_grid:
        raise ValueError("c0 and ratio grids must be nonempty")
    lo, hi = admissible_eta_interval(a)
    rows = []
    for c0 in c0_grid:
        for ratio in rho_ratio_grid:
            row = dict(a=a, c0=c0, ratio=ratio, sigma1=math.nan, sigma2=math.nan,
                       eta=math.nan, pohozaev_residual=math.nan)
            try:
                prof = shoot(ShootParams(rho1=1.0, rho2=ratio, a=a, c0=c0, v0=0.0,
                                         r_max=r_max, rtol=rtol, atol=atol))
            except StepFailure as exc:
                log.warning("sweep cell c0=%g ratio=%g: %s", c0, ratio, exc)
                row["status"] = "step_failure"
                rows.append(row)
                continue
            except Overflow as exc:
                log.warning("sweep cell c0=%g ratio=%g: %s", c0, ratio, exc)
                row["status"] = "overflow"
                rows.append(row)
                continue
            eta, s1, s2 = prof.at_end()
            row.update(sigma1=s1, sigma2=s2, eta=eta, pohozaev_residual=verify_pohozaev(prof))
            try:
                limit_mass(prof, fit_window)
            except NonConverged as exc:
                log.info("sweep cell c0=%g ratio=%g not converged: %s", c0, ratio, exc)
                row["status"] = "nonconverged"
            else:
                row["status"] = "converged" if lo < eta < hi else "interval_violation"
                if row["status"] == "interval_violation":
                    log.error("eta=%g outside (%g, %g) at c0=%g ratio=%g", eta, lo, hi, c0, ratio)
            rows.append(row)
    return rows


def write_sweep_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_HEADER)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(float(row[k])) if k != "status" else row[k]) for k in SWEEP_HEADER})
