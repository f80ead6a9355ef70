import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meanfield import mass_algebra as ma
from meanfield.mass_algebra import AtomicIntensity, MassPair, RhoPair

unit_a = st.floats(min_value=1e-3, max_value=0.999, allow_nan=False)


@pytest.mark.parametrize(
    "pair, a, expected",
    [
        ((4, 0), 0.3, 0.0),
        ((0, 4 / 0.25**2), 0.25, 0.0),
        # 4*(1+1) - (1+0.3)^2 evaluated in exact rationals
        ((1, 1), 0.3, float(8 - Fraction(13, 10) ** 2)),
    ],
)
def test_pohozaev_residual_examples(pair, a, expected):
    assert ma.pohozaev_residual(MassPair(*pair), a) == pytest.approx(expected, abs=1e-12)


def _numpy_roots(m, a):
    r = np.roots([a * a, 8 * m * a - 4, 16 * m * (m - 1)])
    return sorted(x.real for x in r if abs(x.imag) < 1e-9)


@pytest.mark.parametrize("m, a", [(1, 0.25), (2, 0.1), (3, 0.05), (2, 0.9), (1, 0.7)])
def test_gamma_m_matches_companion_roots(m, a):
    assert ma.solve_gamma_m(m, a) == pytest.approx(_numpy_roots(m, a), rel=1e-9, abs=1e-9)


def test_gamma_m_examples():
    assert ma.solve_gamma_m(1, 0.25) == [0.0, 32.0]
    assert ma.solve_gamma_m(2, 0.25) == []
    lo, hi = ma.solve_gamma_m(2, 0.1)
    # 0.01 x^2 - 2.4 x + 32 = 0
    assert lo == pytest.approx(120 - 10 * math.sqrt(112), rel=1e-12)
    assert hi == pytest.approx(120 + 10 * math.sqrt(112), rel=1e-12)


def test_gamma_m_double_root_reported_once():
    # discriminant 16 + 64 m a (a - 1) vanishes for m=1, a=1/2
    roots, mult = ma.solve_gamma_m(1, 0.5, return_multiplicity=True)
    assert roots == [0.0] and mult == [2]


def test_gamma_m_rejects_bad_m():
    with pytest.raises(ValueError):
        ma.solve_gamma_m(0, 0.3)


def test_admissible_gamma_drops_negative_roots():
    # for a >= 1/2 and m > 1 the real roots are both negative
    assert ma.solve_gamma_m(2, 0.9)
    assert all(g < 0 for g in ma.solve_gamma_m(2, 0.9))
    assert ma.admissible_gamma_m(2, 0.9) == []


@given(a=unit_a, m=st.integers(min_value=1, max_value=40))
def test_gamma_m_emptiness_follows_discriminant(a, m):
    roots = ma.solve_gamma_m(m, a)
    assert (len(roots) == 0) == (16 + 64 * m * a * (a - 1) < 0)


@given(a=unit_a)
def test_m1_root_is_threshold(a):
    t = (4 - 8 * a) / a**2
    assert any(abs(r - t) <= 1e-12 * max(1.0, abs(t)) for r in ma.solve_gamma_m(1, a))


@pytest.mark.parametrize("a, expected_over_pi", [(0.25, 64.0), (0.5, 0.0), (0.1, 640.0)])
def test_min_mass_rho2(a, expected_over_pi):
    assert ma.min_mass_rho2(a) / math.pi == pytest.approx(expected_over_pi, abs=1e-9)


@pytest.mark.parametrize("a, interval", [(0.5, (4, 8)), (0.4, (6, 10)), (0.8, (4, 5))])
def test_eta_interval(a, interval):
    assert ma.admissible_eta_interval(a) == pytest.approx(interval)


def test_classify_examples():
    assert ma.classify_local_mass(MassPair(4, 0), 0.4).kind == ma.PURE1
    beta = (2.4 + math.sqrt(2.4**2 + 4 * 0.16 * 4)) / (2 * 0.16)
    bt = ma.classify_local_mass(MassPair(2, beta), 0.4, tol=1e-6)
    assert bt.kind == ma.FULL_LIMIT and bt.beta == pytest.approx(16.513878, abs=1e-6)
    g = ma.solve_gamma_m(2, 0.1)[0]
    bt = ma.classify_local_mass(MassPair(8, g), 0.1, tol=1e-6)
    assert bt.kind == ma.MULTI_BUBBLE and bt.m == 2


def test_classify_threshold_wins_over_full_limit():
    a = 0.25
    bt = ma.classify_local_mass(MassPair(4, ma.threshold_beta(a)), a)
    assert bt.kind == ma.THRESHOLD


def test_classify_pure2_and_not_admissible():
    assert ma.classify_local_mass(MassPair(0, 4 / 0.49), 0.7).kind == ma.PURE2
    assert ma.classify_local_mass(MassPair(1, 1), 0.3).kind == ma.NOT_ADMISSIBLE


def test_classify_rejects_curve_points_below_interval():
    # on the Pohozaev curve but with s1 + a s2 below 4/a - 4
    a = 0.25
    mp = ma.full_limit_pair(9.0, a)
    assert abs(ma.pohozaev_residual(mp, a)) < 1e-9
    assert ma.classify_local_mass(mp, a).kind == ma.NOT_ADMISSIBLE


@settings(max_examples=200)
@given(a=unit_a, frac=st.floats(min_value=0.01, max_value=0.99))
def test_full_limit_pairs_classify_and_satisfy_pohozaev(a, frac):
    lo, hi = ma.admissible_eta_interval(a)
    s = lo + frac * (hi - lo)
    mp = ma.full_limit_pair(s, a)
    bt = ma.classify_local_mass(mp, a)
    if bt.admissible:
        assert abs(ma.pohozaev_residual(bt.pair(a), a)) < 1e-9 * max(1, s * s)


def test_sharp_threshold_examples():
    assert ma.sharp_threshold(AtomicIntensity(((1.0, 1.0),))) == pytest.approx(8 * math.pi)
    assert ma.sharp_threshold(AtomicIntensity.parse("1:0.5,0.25:0.5")) == pytest.approx(16 * math.pi, rel=1e-14)
    # mixed subset value 1/(0.1 + 0.4*0.9)^2 = 1/0.46^2
    val = ma.sharp_threshold(AtomicIntensity(((1, 0.1), (0.4, 0.9))))
    assert val == pytest.approx(8 * math.pi / 0.46**2, rel=1e-13)


def test_sharp_threshold_all_zero_raises():
    with pytest.raises(ValueError):
        ma.sharp_threshold(AtomicIntensity(((0.0, 1.0),)))


def test_sharp_threshold_opposite_signs_never_mix():
    P = AtomicIntensity(((1.0, 0.5), (-1.0, 0.5)))
    # each side alone gives 0.5/0.25 = 2; mixing would give 1/0 = inf anyway
    assert ma.sharp_threshold(P) == pytest.approx(16 * math.pi)


@given(tau=st.floats(0.001, 0.999), a=unit_a)
def test_two_atom_closed_form(tau, a):
    got = ma.sharp_threshold(AtomicIntensity.two_atom(tau, a))
    assert got == pytest.approx(ma.sharp_threshold_two_atom(tau, a), rel=1e-12)


@pytest.mark.parametrize(
    "rho, a, expected",
    [
        ((8 * math.pi, 0.0), 0.4, True),
        ((8 * math.pi, 8 * math.pi / 0.0625 - 16 * math.pi / 0.25), 0.25, True),
        ((9 * math.pi, 0.0), 0.3, False),
    ],
)
def test_coercive_examples(rho, a, expected):
    assert ma.coercive_region(rho, a) is expected


@given(r1=st.floats(0.01, 30), r2=st.floats(0.01, 300), a=unit_a,
       s1=st.floats(0, 1), s2=st.floats(0, 1))
def test_coercive_monotone(r1, r2, a, s1, s2):
    if ma.coercive_region((r1, r2), a):
        assert ma.coercive_region((r1 * s1, r2 * s2), a)


def test_types_validate():
    with pytest.raises(ValueError):
        MassPair(-1, 0)
    with pytest.raises(ValueError):
        RhoPair(0, 1)
    with pytest.raises(ValueError):
        AtomicIntensity(((1.0, 0.5), (1.0, 0.5)))
    with pytest.raises(ValueError):
        ma.check_a(1.0)
