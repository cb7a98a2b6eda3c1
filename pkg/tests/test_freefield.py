import itertools

import numpy as np
import pytest

from arboreal.frd import decompose
from arboreal.freefield import (
    apply_operator, green, kernel_from_symbol, symbol, symbol_from_kernel, w_kernel, zd_green_constant,
    zd_green_reference,
)
from arboreal.lattice import Torus


@pytest.mark.parametrize("t", [Torus(1, 3, 1), Torus(2, 2, 3), Torus(3, 2, 2)], ids=str)
@pytest.mark.parametrize("m2", [1e-3, 0.5, 7.0])
def test_zero_mode_sum_and_spectral_bound(t, m2):
    g = green(t, m2)
    assert g.values.sum() == pytest.approx(1 / m2, rel=1e-12)
    assert 0 < g.at((0,) * t.d) <= 1 / m2


def test_dense_inverse_small_ring():
    m2 = 0.37
    A = (2 + m2) * np.eye(3) - (np.ones((3, 3)) - np.eye(3))
    dense = np.linalg.inv(A)
    g = green(Torus(1, 3, 1), m2)
    for a in range(3):
        for b in range(3):
            assert g.pair((a,), (b,)) == pytest.approx(dense[a, b], abs=1e-12)


def test_dense_inverse_2d():
    t = Torus(2, 2, 2)
    m2 = 0.8
    n = t.volume
    A = (2 * t.d + m2) * np.eye(n)
    for u, v in t.edges:
        A[u, v] -= 1
        A[v, u] -= 1
    dense = np.linalg.inv(A)
    g = green(t, m2)
    for a in range(n):
        for b in range(n):
            assert g.pair(t.coords(a), t.coords(b)) == pytest.approx(dense[a, b], abs=1e-12)


@pytest.mark.parametrize("m2", [0.01, 1.0])
def test_operator_residual(m2):
    t = Torus(3, 2, 2)
    r = apply_operator(green(t, m2).values, m2)
    delta = np.zeros(t.shape)
    delta[0, 0, 0] = 1.0
    assert np.max(np.abs(r - delta)) <= 1e-10


def test_massless_projection():
    t = Torus(2, 3, 1)
    with pytest.raises(ValueError):
        green(t, 0.0, project_zero_mode=False)
    with pytest.raises(ValueError):
        green(t, -1.0)
    g = green(t, 0.0)
    assert abs(g.values.sum()) < 1e-12
    r = apply_operator(g.values, 0.0)
    delta = np.full(t.shape, -1 / t.volume)
    delta[0, 0] += 1
    assert np.max(np.abs(r - delta)) < 1e-12


def test_automorphism_invariance():
    t = Torus(3, 2, 2)
    v = green(t, 0.3).values
    for perm in itertools.permutations(range(3)):
        assert np.max(np.abs(np.transpose(v, perm) - v)) < 1e-15
    for axis in range(3):
        refl = np.roll(np.flip(v, axis=axis), 1, axis=axis)
        assert np.max(np.abs(refl - v)) < 1e-15


def test_symbol_round_trip(rng):
    t = Torus(2, 3, 1)
    lam = symbol(t)
    assert lam[0, 0] == 0 and lam.max() <= 4 * t.d
    k = rng.normal(size=t.shape)
    k = (k + np.roll(np.flip(k, (0, 1)), 1, (0, 1))) / 2  # even kernel, real symbol
    assert np.max(np.abs(kernel_from_symbol(symbol_from_kernel(k)) - k)) < 1e-13


# ----------------------------------------------------------------- W_N


def test_w_kernel_sum_and_symmetry():
    t = Torus(2, 2, 3)
    m2 = 0.2
    dec = decompose(t, m2)
    w = w_kernel(t, m2, t_N=dec.t_N)
    assert w.sum() == pytest.approx(1 / m2 - dec.t_N, rel=1e-10)
    assert np.max(np.abs(w - np.roll(np.flip(w, (0, 1)), 1, (0, 1)))) < 1e-15
    assert np.max(np.abs(w - w_kernel(t, m2, gap=dec.gap))) < 1e-12
    with pytest.raises(ValueError):
        w_kernel(t, 0.0, t_N=1.0)


def test_w_kernel_massless_limit():
    t = Torus(2, 2, 3)
    W = {m2: w_kernel(t, m2, gap=decompose(t, m2).gap) for m2 in (1e-2, 1e-4, 1e-6, 0.0)}
    diffs = [np.max(np.abs(W[m2] - W[0.0])) for m2 in (1e-2, 1e-4, 1e-6)]
    assert diffs[2] <= 1e-6
    # Lipschitz in m^2: each factor 100 in m^2 shrinks the distance by about 100
    assert diffs[0] / diffs[1] > 50 and diffs[1] / diffs[2] > 50
    assert np.max(np.abs(W[1e-4] - W[1e-6])) <= 1e-4


# ----------------------------------------------------------------- Z^d reference


def test_zd_reference_origin():
    ref = zd_green_reference(3, sides=(32, 64, 128))
    assert ref.value == pytest.approx(0.252731, abs=1e-4)
    ref64 = zd_green_reference(3, sides=(16, 32, 64))
    assert abs(ref.value - ref64.value) <= 1e-4
    assert ref.spread <= 1e-4


def test_zd_reference_decay_and_constant():
    g1 = zd_green_reference(3, (1, 0, 0), sides=(16, 32, 64)).value
    g2 = zd_green_reference(3, (2, 0, 0), sides=(16, 32, 64)).value
    assert g1 > g2 > 0
    c, _ = zd_green_constant(3, radii=range(4, 9), sides=(16, 32, 64))
    assert c > 0
    assert c == pytest.approx(1 / (4 * np.pi), rel=0.05)


def test_zd_reference_needs_d3():
    with pytest.raises(ValueError):
        zd_green_reference(2)
