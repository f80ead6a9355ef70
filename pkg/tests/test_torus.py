import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meanfield import torus
from meanfield.torus import Barycenter, TorusGrid


def test_grid_validation():
    for n in (8, 24, 100):
        with pytest.raises(ValueError):
            TorusGrid(n)
    assert TorusGrid(32).h == 1 / 32


@pytest.mark.parametrize("kx, ky", [(1, 0), (2, 3), (0, 5)])
def test_poisson_on_modes(kx, ky):
    X, Y = TorusGrid(64).mesh()
    u = np.cos(2 * np.pi * (kx * X + ky * Y))
    f = 4 * np.pi**2 * (kx**2 + ky**2) * u
    assert np.max(np.abs(torus.poisson_solve(f) - u)) < 1e-12
    assert np.max(np.abs(-torus.laplacian(u) - f)) < 1e-9


def test_poisson_rejects_mean():
    with pytest.raises(torus.NonZeroMean):
        torus.poisson_solve(np.ones((16, 16)))


@pytest.mark.parametrize("kx, ky, expected", [(1, 0, math.pi**2), (1, 2, 5 * math.pi**2)])
def test_dirichlet_energy_modes(kx, ky, expected):
    # (1/2) int |grad sin(2 pi k.x)|^2 = pi^2 |k|^2
    X, Y = TorusGrid(32).mesh()
    u = np.sin(2 * np.pi * (kx * X + ky * Y))
    assert torus.dirichlet_energy(u) == pytest.approx(expected, rel=1e-13)


def test_energy_matches_gradient_quadrature(rng):
    # the spectral gradient drops Nyquist modes, so use a band-limited field
    u2 = torus.interpolate(rng.standard_normal((16, 16)), 32)
    gx, gy = torus.gradient(u2)
    assert torus.dirichlet_energy(u2) == pytest.approx(0.5 * np.mean(gx**2 + gy**2), rel=1e-10)


def test_log_mean_exp_bessel():
    from scipy.special import i0

    X, _ = TorusGrid(16).mesh()
    u = np.sin(2 * np.pi * X)
    assert torus.log_mean_exp(u) == pytest.approx(math.log(i0(1.0)), abs=1e-14)
    assert torus.log_mean_exp(u, scale=0.5) == pytest.approx(math.log(i0(0.5)), abs=1e-14)


def test_log_mean_exp_large_values():
    u = np.zeros((16, 16))
    u[0, 0] = 2000.0
    assert torus.log_mean_exp(u) == pytest.approx(2000.0 - 2 * math.log(16))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_interpolate_round_trip(seed):
    u = np.random.default_rng(seed).standard_normal((16, 16))
    up = torus.interpolate(u, 64)
    assert np.max(np.abs(up[::4, ::4] - u)) < 1e-12
    assert torus.integrate(up) == pytest.approx(torus.integrate(u), abs=1e-12)


def test_distance_wraps():
    assert torus.torus_distance([0.05, 0.0], [0.95, 0.0]) == pytest.approx(0.1)
    assert torus.torus_distance([0.0, 0.0], [0.5, 0.5]) == pytest.approx(math.sqrt(0.5))


def test_barycenter_validation():
    with pytest.raises(ValueError):
        Barycenter([[0.1, 0.1]], [0.5])
    with pytest.raises(ValueError):
        Barycenter([[0.1, 0.1], [0.2, 0.2]], [1.0, 0.0])
    b = Barycenter([[1.25, -0.25]], [1.0])
    assert np.allclose(b.points, [[0.25, 0.75]])


def test_binary_round_trip(tmp_path, rng):
    u = rng.standard_normal((32, 32))
    p = tmp_path / "f.bin"
    torus.write_field_binary(p, u)
    assert p.stat().st_size == 8 + 8 * 32 * 32
    assert np.array_equal(torus.read_field_binary(p), u)


def test_field_csv(tmp_path):
    u = np.arange(256.0).reshape(16, 16)
    p = tmp_path / "f.csv"
    torus.write_field_csv(p, u)
    rows = np.loadtxt(p, delimiter=",", skiprows=1)
    assert rows.shape == (256, 3)
    assert rows[17].tolist() == [1 / 16, 1 / 16, 17.0]


def test_density_normalizes():
    d = torus.density(np.ones((16, 16)))
    assert d.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        torus.density(np.zeros((16, 16)))
