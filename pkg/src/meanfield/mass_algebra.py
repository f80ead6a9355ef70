"""Closed-form algebra of local blow-up masses and Moser-Trudinger thresholds.

Masses inside this module are measured in units of 2*pi (so the classical
Liouville bubble carries mass 4).  Thresholds returned to callers
(``min_mass_rho2``, ``sharp_threshold``, ``coercive_region``) use absolute
units, i.e. they carry the factor of pi.  Use :func:`to_sigma` and
:func:`to_absolute` to move between the two conventions.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

TWO_PI = 2.0 * math.pi
EIGHT_PI = 8.0 * math.pi


def check_a(a: float) -> float:
    """Validate the intensity parameter, which must lie in the open unit interval."""
    a = float(a)
    if not 0.0 < a < 1.0:
        raise ValueError(f"intensity parameter a must lie in (0, 1), got {a!r}")
    return a


def to_sigma(mass: float) -> float:
    """Absolute mass -> units of 2*pi."""
    return mass / TWO_PI


def to_absolute(sigma: float) -> float:
    """Mass in units of 2*pi -> absolute mass."""
    return sigma * TWO_PI


@dataclass(frozen=True)
class MassPair:
    sigma1: float
    sigma2: float

    def __post_init__(self):
        for name in ("sigma1", "sigma2"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {v!r}")

    @classmethod
    def from_absolute(cls, m1: float, m2: float) -> "MassPair":
        return cls(to_sigma(m1), to_sigma(m2))


@dataclass(frozen=True)
class RhoPair:
    rho1: float
    rho2: float

    def __post_init__(self):
        if not (self.rho1 > 0 and self.rho2 > 0):
            raise ValueError(f"rho1 and rho2 must both be positive, got {self}")


@dataclass(frozen=True)
class AtomicIntensity:
    """Finitely supported intensity distribution ``sum_j w_j delta_{alpha_j}``."""

    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self):
        atoms = tuple((float(al), float(w)) for al, w in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if not atoms:
            raise ValueError("at least one atom is required")
        alphas = [al for al, _ in atoms]
        if any(not -1.0 <= al <= 1.0 for al in alphas):
            raise ValueError("atom positions must lie in [-1, 1]")
        if len(set(alphas)) != len(alphas):
            raise ValueError("atom positions must be distinct")
        if any(w <= 0 for _, w in atoms):
            raise ValueError("atom weights must be positive")
        if abs(math.fsum(w for _, w in atoms) - 1.0) > 1e-12:
            raise ValueError("atom weights must sum to 1")

    @classmethod
    def two_atom(cls, tau: float, a: float) -> "AtomicIntensity":
        """The distribution ``tau*delta_1 + (1 - tau)*delta_a``."""
        return cls(((1.0, tau), (a, 1.0 - tau)))

    @classmethod
    def parse(cls, text: str) -> "AtomicIntensity":
        """Parse ``"alpha:weight,alpha:weight,..."``."""
        atoms = []
        for chunk in text.split(","):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                al, w = chunk.split(":")
                atoms.append((float(al), float(w)))
            except ValueError:
                raise ValueError(f"bad atom {chunk!r}, expected alpha:weight") from None
        return cls(tuple(atoms))


# Blow-up types.  ``kind`` is one of the names below; the remaining fields are
# filled only where they carry information.
PURE1 = "Pure1"
PURE2 = "Pure2"
THRESHOLD = "Threshold"
FULL_LIMIT = "FullLimit"
MULTI_BUBBLE = "MultiBubble"
NOT_ADMISSIBLE = "NotAdmissible"


@dataclass(frozen=True)
class BlowupType:
    kind: str
    alpha: float | None = None
    beta: float | None = None
    m: int | None = None
    gamma_m: float | None = None

    @property
    def admissible(self) -> bool:
        return self.kind != NOT_ADMISSIBLE

    def pair(self, a: float) -> MassPair | None:
        """Canonical mass pair of this type (units of 2*pi)."""
        if self.kind == PURE1:
            return MassPair(4.0, 0.0)
        if self.kind == PURE2:
            return MassPair(0.0, 4.0 / a**2)
        if self.kind == THRESHOLD:
            return MassPair(4.0, threshold_beta(a))
        if self.kind == FULL_LIMIT:
            return MassPair(self.alpha, self.beta)
        if self.kind == MULTI_BUBBLE:
            return MassPair(4.0 * self.m, self.gamma_m)
        return None

    def __str__(self):
        if self.kind == FULL_LIMIT:
            return f"FullLimit({self.alpha:.6g}, {self.beta:.6g})"
        if self.kind == MULTI_BUBBLE:
            return f"MultiBubble({self.m}, {self.gamma_m:.6g})"
        return self.kind


def threshold_beta(a: float) -> float:
    """Second-component mass of the threshold type, ``4/a^2 - 8/a``."""
    return (4.0 - 8.0 * a) / a**2


def pohozaev_residual(mp: MassPair, a: float) -> float:
    """``4(s1 + s2) - (s1 + a*s2)^2``; vanishes on the Pohozaev mass curve."""
    s1, s2 = mp.sigma1, mp.sigma2
    # expanded so the large O(1/a^2) terms cancel before rounding
    return 4.0 * s1 - s1 * s1 - 2.0 * a * s1 * s2 + s2 * (4.0 - a * (a * s2))


def gamma_m_discriminant(m: int, a: float) -> float:
    return 16.0 + 64.0 * m * a * (a - 1.0)


def solve_gamma_m(m: int, a: float, return_multiplicity: bool = False):
    """Real roots of ``(4m + a x)^2 = 4(4m + x)``, ascending.

    The quadratic is ``a^2 x^2 + (8ma - 4) x + 16m(m - 1) = 0``.  A double
    root is listed once; pass ``return_multiplicity=True`` to also get the
    multiplicity of each listed root.  Roots may be negative (e.g. ``m > 1``
    with ``a >= 1/2``); see :func:`admissible_gamma_m` for the physical ones.
    """
    if int(m) != m or m < 1:
        raise ValueError(f"m must be a positive integer, got {m!r}")
    m = int(m)
    A = a * a
    B = 8.0 * m * a - 4.0
    C = 16.0 * m * (m - 1)
    disc = gamma_m_discriminant(m, a)
    if disc < 0:
        roots, mult = [], []
    elif disc == 0:
        roots, mult = [-B / (2.0 * A)], [2]
    else:
        # cancellation-free quadratic formula
        q = -0.5 * (B + math.copysign(math.sqrt(disc), B))
        if q == 0.0:
            roots, mult = [0.0], [2]
        else:
            roots, mult = sorted([q / A, C / q]), [1, 1]
    if return_multiplicity:
        return roots, mult
    return roots


def admissible_gamma_m(m: int, a: float) -> list[float]:
    """Nonnegative roots of :func:`solve_gamma_m` (masses cannot be negative)."""
    return [g for g in solve_gamma_m(m, a) if g >= 0.0]


def min_mass_rho2(a: float) -> float:
    """``8*pi/a^2 - 16*pi/a``: the smallest second-component mass of a fully
    blown-up bubble when ``a < 1/2``."""
    return EIGHT_PI / a**2 - 16.0 * math.pi / a


def admissible_eta_interval(a: float) -> tuple[float, float]:
    """Open interval of total masses of entire solutions of the coupled limit equation."""
    return max(4.0, 4.0 / a - 4.0), 4.0 / a


def _full_limit_bounds(a: float):
    """(beta_low, beta_high, s_low) for the generic coupled type."""
    if a >= 0.5:
        return 0.0, 4.0 / a**2, 4.0
    return threshold_beta(a), 4.0 / a**2, 4.0 / a - 4.0


def classify_local_mass(mp: MassPair, a: float, tol: float = 1e-9) -> BlowupType:
    """Match a local mass pair against the admissible types for the regime of ``a``.

    Point types are matched componentwise within ``tol``; the generic coupled
    type is matched when the Pohozaev residual is within ``tol`` (relative to
    ``max(1, (s1 + a*s2)^2)``) and the open interval constraints hold.
    """
    check_a(a)
    if tol <= 0:
        raise ValueError("tol must be positive")
    s1, s2 = mp.sigma1, mp.sigma2

    def near(x, y):
        return abs(x - y) <= tol * max(1.0, abs(y))

    if near(s1, 4.0) and near(s2, 0.0):
        return BlowupType(PURE1)
    if near(s1, 0.0) and near(s2, 4.0 / a**2):
        return BlowupType(PURE2)
    if a < 0.5 and near(s1, 4.0) and near(s2, threshold_beta(a)):
        return BlowupType(THRESHOLD)

    s = s1 + a * s2
    beta_lo, beta_hi, s_lo = _full_limit_bounds(a)
    on_curve = abs(pohozaev_residual(mp, a)) <= tol * max(1.0, s * s)
    if on_curve and 0.0 < s1 < 4.0 and beta_lo < s2 < beta_hi and s > s_lo:
        return BlowupType(FULL_LIMIT, alpha=s1, beta=s2)

    if a < 0.5:
        m = round(s1 / 4.0)
        if m > 1 and near(s1, 4.0 * m):
            for g in admissible_gamma_m(m, a):
                if near(s2, g):
                    return BlowupType(MULTI_BUBBLE, m=m, gamma_m=g)
    return BlowupType(NOT_ADMISSIBLE)


def full_limit_pair(s: float, a: float) -> MassPair:
    """Point on the Pohozaev curve with ``s1 + a*s2 = s``.

    Solving ``s1 + a s2 = s`` and ``s1 + s2 = s^2/4`` gives
    ``s2 = (s^2/4 - s)/(1 - a)``.
    """
    s2 = (0.25 * s * s - s) / (1.0 - a)
    return MassPair(max(s - a * s2, 0.0), s2)


def _subset_value(subset) -> float:
    weight = math.fsum(w for _, w in subset)
    moment = math.fsum(al * w for al, w in subset)
    if moment == 0.0:
        return math.inf
    return weight / moment**2


def sharp_threshold(P: AtomicIntensity) -> float:
    """Largest ``rho`` keeping the functional bounded below for intensity ``P``.

    Exhaustive over nonempty same-sign subsets of the atoms, so limited to 20
    atoms.
    """
    if len(P.atoms) > 20:
        raise ValueError("sharp_threshold enumerates subsets; at most 20 atoms")
    if all(al == 0.0 for al, _ in P.atoms):
        raise ValueError("all atoms sit at alpha = 0; the threshold is undefined")
    best = math.inf
    for side in ([x for x in P.atoms if x[0] >= 0], [x for x in P.atoms if x[0] < 0]):
        for r in range(1, len(side) + 1):
            for subset in itertools.combinations(side, r):
                best = min(best, _subset_value(subset))
    return EIGHT_PI * best


def sharp_threshold_two_atom(tau: float, a: float) -> float:
    """Closed form of :func:`sharp_threshold` for ``tau*delta_1 + (1-tau)*delta_a``."""
    return EIGHT_PI * min(1.0 / tau, 1.0 / (a * a * (1.0 - tau)), 1.0 / (tau + a * (1.0 - tau)) ** 2)


def coercive_region(rho: RhoPair | Sequence[float], a: float, rtol: float = 1e-12) -> bool:
    """Whether ``(rho1, rho2)`` satisfies all three sharp Moser-Trudinger bounds.

    Boundary points count as inside; ``rtol`` absorbs rounding on the boundary.
    """
    rho1, rho2 = (rho.rho1, rho.rho2) if isinstance(rho, RhoPair) else rho
    slack = 1.0 + rtol
    return (
        rho1 <= EIGHT_PI * slack
        and rho2 <= EIGHT_PI / a**2 * slack
        and (rho1 + a * rho2) ** 2 <= EIGHT_PI * (rho1 + rho2) * slack
    )
