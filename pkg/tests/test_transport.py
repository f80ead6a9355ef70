import math

import numpy as np
import pytest
from scipy.optimize import linprog

from meanfield import transport
from meanfield.torus import Barycenter, TorusGrid, distance_field


def dense_lp(xs, a, ys, b):
    """Textbook transportation LP with a dense constraint matrix (interior point)."""
    m, k = len(a), len(b)
    C = np.array([[transport.cost_matrix([x], [y])[0, 0] for y in ys] for x in xs])
    A = np.zeros((m + k, m * k))
    for i in range(m):
        A[i, i * k:(i + 1) * k] = 1
    for j in range(k):
        A[m + j, j::k] = 1
    res = linprog(C.ravel(), A_eq=A, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs-ipm")
    return res.fun


def test_matches_dense_lp_on_8x8(rng):
    for _ in range(5):
        xs, ys = rng.random((8, 2)), rng.random((8, 2))
        a, b = rng.random(8), rng.random(8)
        a /= a.sum()
        b /= b.sum()
        assert transport.wasserstein1(xs, a, ys, b) == pytest.approx(dense_lp(xs, a, ys, b), abs=1e-6)


def test_single_atom_is_weighted_distance():
    xs = np.array([[0.1, 0.1], [0.9, 0.1]])
    assert transport.wasserstein1(xs, [0.5, 0.5], [[0.0, 0.1]], [1.0]) == pytest.approx(0.1)


def test_mass_mismatch():
    with pytest.raises(transport.MassMismatch):
        transport.wasserstein1([[0, 0]], [1.0], [[0.5, 0.5]], [0.5])
    with pytest.raises(transport.MassMismatch):
        transport.kr_distance(np.ones((16, 16)), Barycenter([[0.5, 0.5]], [1.0]))


def test_point_mass_distance():
    mu = np.zeros((32, 32))
    mu[8, 8] = 1.0
    d = transport.kr_distance(mu, Barycenter([[0.25, 0.5]], [1.0]))
    assert d.value == pytest.approx(0.25, abs=1e-12)


def test_downsample_preserves_mass_and_centroid(rng):
    mu = rng.random((64, 64))
    mu /= mu.sum()
    pts, w, diam = transport.downsample(mu, 8)
    assert w.sum() == pytest.approx(1.0)
    assert len(w) == 64 and diam == pytest.approx(math.sqrt(2) / 8)


def two_gaussians(n=256, s=0.005):
    g = TorusGrid(n)
    mu = sum(np.exp(-distance_field(g, c) ** 2 / (2 * s * s)) for c in ((0.3, 0.3), (0.7, 0.6)))
    return mu / mu.sum()


def test_two_gaussians_k2():
    d, nu = transport.dist_to_barycenters(two_gaussians(), 2)
    assert d < 0.02
    assert sorted(map(tuple, np.round(nu.points, 2))) == [(0.3, 0.3), (0.7, 0.6)]
    assert nu.weights == pytest.approx([0.5, 0.5], abs=1e-6)


def test_two_gaussians_k1_is_half_separation():
    d, _ = transport.dist_to_barycenters(two_gaussians(), 1)
    assert d == pytest.approx(0.5 * math.hypot(0.4, 0.3), abs=0.01)


def test_barycenter_distance_bounds_from_above():
    mu = two_gaussians()
    d, nu = transport.dist_to_barycenters(mu, 2)
    assert d == pytest.approx(transport.kr_distance(mu, nu).value, abs=1e-12)


def test_bad_k():
    with pytest.raises(ValueError):
        transport.dist_to_barycenters(two_gaussians(64, 0.05), 5)
