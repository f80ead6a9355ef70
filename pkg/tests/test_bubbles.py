import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meanfield import bubbles as B
from meanfield import functional as F
from meanfield.torus import Barycenter, TorusGrid

CENTRE = Barycenter.uniform([[0.5, 0.5]])


def test_peak_equals_minus_mean():
    g = TorusGrid(64)
    u, mean = B.build_bubble(B.BubbleSpec(CENTRE, 10.0), g)
    assert u[32, 32] == pytest.approx(-mean, abs=1e-14)
    assert abs(u.mean()) < 1e-13


def test_coincident_atoms_reduce_to_single():
    g = TorusGrid(64)
    twin = Barycenter([[0.5, 0.5], [0.5, 0.5]], [0.5, 0.5])
    assert np.allclose(B.raw_bubble(twin, 10.0, g), B.raw_bubble(CENTRE, 10.0, g), atol=1e-14)
    with pytest.raises(ValueError):
        B.BubbleSpec(twin, 10.0)


def test_raw_value_at_quarter_distance():
    g = TorusGrid(512)
    phi = B.raw_bubble(CENTRE, 100.0, g)
    # grid node (0.75, 0.5) sits at distance 0.25; 2*log(1 + 100^2 * 0.25^2) = 2*log 626
    assert phi[384, 256] == pytest.approx(-2 * math.log(626.0), abs=1e-12)
    assert phi[384, 256] == pytest.approx(-12.89, abs=0.02)


def test_underresolved():
    with pytest.raises(B.Underresolved):
        B.build_bubble(B.BubbleSpec(CENTRE, 20.0), TorusGrid(64))
    with pytest.raises(ValueError):
        B.BubbleSpec(CENTRE, 1.0)


def test_grid_for():
    assert B.grid_for(3).n == 16
    assert B.grid_for(200).n == 1024
    assert B.grid_for(257).n == 2048


@settings(max_examples=15, deadline=None)
@given(perm_seed=st.integers(0, 1000))
def test_permutation_invariance(perm_seed):
    pts = np.array([[0.2, 0.3], [0.7, 0.1], [0.5, 0.8]])
    w = np.array([0.2, 0.3, 0.5])
    p = np.random.default_rng(perm_seed).permutation(3)
    g = TorusGrid(32)
    a = B.raw_bubble(Barycenter(pts, w), 5.0, g)
    b = B.raw_bubble(Barycenter(pts[p], w[p]), 5.0, g)
    assert np.allclose(a, b, atol=1e-13)


@pytest.fixture(scope="module")
def grid1024():
    return TorusGrid(1024)


@pytest.mark.parametrize("k", [1, 2])
def test_gradient_estimate(grid1024, k):
    sigma = Barycenter.uniform(F.spread_atoms(k))
    _, c = B.verify_gradient_estimate(sigma, grid1024)
    assert c == pytest.approx(16 * k * math.pi, rel=0.1)


def test_gradient_pointwise_bound(grid1024):
    sigma = Barycenter.uniform(F.spread_atoms(2))
    assert max(B.gradient_bound(sigma, grid1024)) <= 10


@pytest.mark.parametrize("k", [1, 3])
def test_volume_estimates(grid1024, k):
    sigma = Barycenter.uniform(F.spread_atoms(k))
    p, q, pa = B.verify_volume_estimates(sigma, grid1024, a=0.25)
    assert p == pytest.approx(-2, abs=0.1)
    assert q == pytest.approx(-4, abs=0.2)
    assert pa == pytest.approx(-1.0, abs=0.1)


def test_concentration_monotone(grid1024):
    sigma = Barycenter.uniform(F.spread_atoms(2))
    fr = [B.concentration(sigma, lam, grid1024) for lam in (10, 30, 100, 200)]
    assert all(x <= y for x, y in zip(fr, fr[1:]))
    assert fr[2] >= 0.5 - 0.05


def test_ladder_csv(tmp_path):
    g = TorusGrid(128)
    rows = B.bubble_ladder(CENTRE, g, [5, 10, 20], a=0.25, rho=(12 * math.pi, 0.0))
    path = tmp_path / "ladder.csv"
    B.write_ladder_csv(rows, path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (3, 5)
    assert path.read_text().splitlines()[0].split(",") == B.LADDER_HEADER
