import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arboreal.frd import decompose
from arboreal.freefield import green
from arboreal.grassmann import GrassmannElement as G, gaussian_convolution
from arboreal.lattice import Torus
from arboreal.rgflow import (
    INFINITE_SCALE, BulkCouplings, ObservableCouplings, RescaledCouplings, StepKernel, ZeroModeState,
    beta_h_from_couplings, bulk_step, coalescence_scale, constant_wick_term, couplings_from_beta_h,
    gradient_cross_shift, green_target, observable_step, rescaled_kappas, rescaled_step, run_flow,
    susceptibility, zero_mode_observables,
)

finite = st.floats(-2, 2, allow_nan=False)


def kernel(t=Torus(2, 2, 3), m2=0.5, j=1, a=(0, 0), b=(1, 0)):
    return StepKernel.from_kernel(decompose(t, m2).kernel(j), a, b)


# ----------------------------------------------------------------- bulk


@given(finite, finite, finite)
@settings(max_examples=25, deadline=None)
def test_zero_b_leaves_couplings(z, y, a):
    c = BulkCouplings(z, y, a, 0.0)
    n = bulk_step(c, kernel())
    assert (n.z, n.y, n.a, n.b) == (z, y, a, 0.0)


def test_first_step_y():
    k = kernel()
    n = bulk_step(BulkCouplings(0, 0, 0, 0.3), k)
    assert n.y == pytest.approx(-k.C0 * 0.3, abs=1e-15)
    assert n.a == pytest.approx(k.lapC0 * 0.3, abs=1e-15)


def test_two_steps_equal_one_with_summed_kernel():
    dec = decompose(Torus(2, 2, 3), 0.5)
    k1, k2 = (StepKernel.from_kernel(dec.kernel(j)) for j in (1, 2))
    k12 = StepKernel.from_kernel(dec.kernel(1) + dec.kernel(2))
    c = BulkCouplings(0.1, -0.2, 0.3, 0.7)
    two = bulk_step(bulk_step(c, k1), k2)
    one = bulk_step(c, k12)
    for f in ("z", "y", "a", "b"):
        assert getattr(two, f) == pytest.approx(getattr(one, f), abs=1e-14)


def test_nonfinite_rejected():
    with pytest.raises(ValueError):
        BulkCouplings(math.nan, 0, 0, 0)


def _potential(t, u, z, y, a, b):
    n = t.volume
    ng = 2 * n
    pb = [G.generator(2 * x, ng) for x in range(n)]
    p = [G.generator(2 * x + 1, ng) for x in range(n)]
    V = G.scalar(u * n, ng)
    for x in range(n):
        grad = G.scalar(0, ng)
        lap_p, lap_pb = p[x] * (2 * t.d), pb[x] * (2 * t.d)
        for v in t.neighbors(t.coords(x)):
            w = t.index(v)
            grad = grad + (p[w] - p[x]) * (pb[w] - pb[x]) * 0.5
            lap_p, lap_pb = lap_p - p[w], lap_pb - pb[w]
        V = V + grad * y + (lap_p * pb[x] + p[x] * lap_pb) * (z / 2) + p[x] * pb[x] * a + p[x] * pb[x] * grad * b
    return V


@pytest.mark.parametrize("t", [Torus(1, 5, 1), Torus(2, 3, 1)], ids=str)
def test_bulk_step_against_gaussian_convolution(t):
    """E_C V re-expanded in the local monomials; gradient coefficients identify only y + z."""
    m2 = 0.7
    C = green(t, m2).values
    n = t.volume
    Cm = np.array([[C[tuple(np.mod(np.subtract(t.coords(j), t.coords(i)), t.side))] for j in range(n)]
                   for i in range(n)])
    c = BulkCouplings(0.2, -0.1, 0.3, 0.8)
    E = gaussian_convolution(Cm, _potential(t, 0, c.z, c.y, c.a, c.b))
    basis = [_potential(t, *row) for row in np.eye(5)[[0, 2, 3, 4]]]  # u, y-type gradient, a, b
    masks = sorted(set(np.concatenate([e.masks for e in basis + [E]]).tolist()))
    M = np.array([[e.coefficient(m) for e in basis] for m in masks])
    rhs = np.array([E.coefficient(m) for m in masks])
    sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    assert np.max(np.abs(M @ sol - rhs)) < 1e-12
    k = StepKernel.from_kernel(C)
    step = bulk_step(c, k)
    assert sol[0] == pytest.approx(step.u, abs=1e-12)
    assert sol[0] == pytest.approx(constant_wick_term(c, k), abs=1e-12)
    assert sol[2] == pytest.approx(step.a, abs=1e-12)
    assert sol[3] == pytest.approx(step.b, abs=1e-12)
    assert sol[1] == pytest.approx(step.s + gradient_cross_shift(k) * c.b, abs=1e-12)
    assert gradient_cross_shift(k) == pytest.approx(-k.lapC0 / (2 * t.d), abs=1e-15)


# ----------------------------------------------------------------- rescaled


@pytest.mark.parametrize("d", [2, 3, 4])
def test_rescaled_agrees_with_bulk(d):
    L, N = 2, 3 if d < 4 else 2
    t = Torus(d, L, N)
    dec = decompose(t, 0.3)
    c = BulkCouplings(0.05, 0.1, -0.2, 0.4)
    r = RescaledCouplings.from_bulk(c, L, d, 0)
    for j in range(N):
        k = StepKernel.from_kernel(dec.kernel(j + 1))
        c = bulk_step(c, k)
        r = rescaled_step(r, k, L, d)
        back = r.to_bulk(L, d)
        for f in ("z", "y", "a", "b"):
            assert getattr(back, f) == pytest.approx(getattr(c, f), rel=1e-12, abs=1e-14)


def test_rescaled_examples():
    k = kernel()
    r = RescaledCouplings(2, 0.0, 0.0, 0.0, 0.64)
    n = rescaled_step(r, k, 2, 4)
    assert n.b == 0.64 / 4 and n.j == 3
    r = RescaledCouplings(2, 0.0, 0.0, 1.5, 0.0)
    assert rescaled_step(r, k, 3, 3).a == 1.5 * 9
    kyb, kab = rescaled_kappas(k, 2, 2, 3)
    assert kyb == pytest.approx(-k.C0) and kab == pytest.approx(2**8 * k.lapC0)


@given(finite, finite, finite, finite, st.integers(0, 5))
@settings(max_examples=25, deadline=None)
def test_rescale_round_trip(z, y, a, b, j):
    c = BulkCouplings(z, y, a, b)
    back = RescaledCouplings.from_bulk(c, 3, 3, j).to_bulk(3, 3)
    for f in ("z", "y", "a", "b"):
        assert getattr(back, f) == pytest.approx(getattr(c, f), rel=1e-14, abs=1e-300)


# ----------------------------------------------------------------- observables


@pytest.mark.parametrize("t,b", [(Torus(2, 2, 3), (1, 0)), (Torus(2, 2, 3), (3, 2)), (Torus(3, 2, 2), (1, 1, 0)),
                                 (Torus(2, 3, 2), (4, 1))], ids=str)
@pytest.mark.parametrize("case", [1, 2])
def test_flow_reproduces_free_correlator(t, b, case):
    m2 = 0.4
    res = run_flow(t, m2, case=case, b=b)
    target = green_target(t, m2, res.a, b, case)
    assert res.two_point() == pytest.approx(target, abs=1e-10)
    assert res.pipeline_gap() <= 1e-10
    if case == 1:
        assert res.zero_mode.two_point(res.final_obs) == pytest.approx(target, abs=1e-10)


def test_case2_gamma_is_diagonal_green():
    t = Torus(2, 2, 3)
    m2 = 0.4
    res = run_flow(t, m2, case=2, b=(1, 1), z0=0.3, a0=0.1, b0=0.2)
    g00 = green(t, m2).at((0, 0))
    assert res.final_obs.gamma_a == pytest.approx(g00, abs=1e-10)
    assert res.final_obs.gamma_b == pytest.approx(g00, abs=1e-10)


def test_same_point_case1():
    t = Torus(2, 2, 3)
    res = run_flow(t, 0.4, case=1, b=(0, 0))
    assert math.isinf(res.j_ab)
    assert res.two_point() == pytest.approx(green(t, 0.4).at((0, 0)), abs=1e-10)


def test_observables_vanish_below_coalescence():
    t = Torus(2, 2, 4)
    for b in [(1, 0), (2, 0), (3, 3), (8, 5)]:
        res = run_flow(t, 0.2, case=2, b=b)
        assert res.j_ab == coalescence_scale((0, 0), b, 2, t)
        for row in res.rows:
            if row.j < res.j_ab:
                # kernels vanish beyond their range up to FFT round-off
                assert abs(row.obs.q) <= 1e-15 and abs(row.obs.eta) <= 1e-15 and row.obs.r == 0.0


def test_coalescence_examples():
    assert coalescence_scale((0, 0), (1, 0), 2) == 1
    assert coalescence_scale((0, 0), (0, 0), 2) == INFINITE_SCALE
    assert coalescence_scale((0,), (3,), 2) == 2
    assert coalescence_scale((0,), (7,), 2, Torus(1, 2, 3)) == 1  # wraps to distance 1


def test_observable_independence_from_u_components():
    base = ObservableCouplings(2, 0.7, 1.3, q=0.0, r=0.2, gamma_a=0.0, gamma_b=0.0, eta=0.1)
    pert = ObservableCouplings(2, 0.7, 1.3, q=5.0, r=0.2, gamma_a=-3.0, gamma_b=2.0, eta=0.1)
    s1, s2 = observable_step(base, 0.03, 0.2), observable_step(pert, 0.03, 0.2)
    assert (s1.lam_a, s1.lam_b, s1.eta, s1.r) == (s2.lam_a, s2.lam_b, s2.eta, s2.r)


@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=6), finite, finite)
@settings(max_examples=30, deadline=None)
def test_observable_flow_affine(cs, r1, r2):
    o1 = ObservableCouplings(1, 1.0, 1.0, q=r1, r=r2)
    o2 = ObservableCouplings(1, 1.0, 1.0, q=r2, r=r1)
    s = ObservableCouplings(1, 2.0, 1.0, q=r1 + r2, r=r1 + r2)
    for cab, c00 in cs:
        o1, o2, s = (observable_step(o, cab, c00) for o in (o1, o2, s))
    assert s.q == pytest.approx(o1.q + o2.q, abs=1e-10)


@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=10), st.floats(0.1, 2))
@settings(max_examples=40, deadline=None)
def test_case2_telescoping(cks, lam):
    o = ObservableCouplings(2, lam, lam)
    for c in cks:
        o = observable_step(o, c, 0.0)
    assert o.q == pytest.approx(-(lam**2) * sum(cks) ** 2, abs=1e-10)


def test_invalid_case():
    with pytest.raises(ValueError):
        ObservableCouplings(3)


def test_zero_couplings_zero_observables():
    o = ObservableCouplings(2, 0.0, 0.0)
    zm = zero_mode_observables(o, ZeroModeState(0.0, 1.0), 16)
    assert (zm.Z_a, zm.Z_b, zm.Z_ab) == (0.0, 0.0, 0.0)


# ----------------------------------------------------------------- zero mode and susceptibility


def test_susceptibility_examples():
    assert susceptibility(0.0, 0.0, 0.5) == 2.0
    assert susceptibility(0.01, 0.0, 1.0) < susceptibility(0.0, 0.0, 1.0) < susceptibility(-0.01, 0.0, 1.0)
    with pytest.raises(ZeroDivisionError):
        susceptibility(0.1, -1.0, 1.0)
    with pytest.raises(ValueError):
        susceptibility(0.1, 0.0, 0.0)


@pytest.mark.parametrize("m2", [0.25, 1.0, 4.0])
def test_susceptibility_quadratic_perturbation(m2):
    a0 = 1e-3
    t = Torus(2, 2, 3)
    res = run_flow(t, m2, a0=a0)
    zm = ZeroModeState(res.rows[-1].bulk.a, res.t_N)
    assert zm.a_tilde == a0
    assert zm.u_tilde == pytest.approx(a0 * res.t_N)
    chi = susceptibility(zm.a_tilde, zm.u_tilde, m2)
    assert chi == pytest.approx(res.chi)
    exact = 1 / (m2 + a0)
    assert abs(chi - exact) / exact <= 5 * a0**2


# ----------------------------------------------------------------- change of variables


def test_change_of_variables_examples():
    beta, h = beta_h_from_couplings(0.0, 0.0, 0.0, 0.1)
    assert beta == pytest.approx(10.0) and h == -1.0
    # h = 0 exactly when (a0 + m^2)(1 + s0) = b0
    assert beta_h_from_couplings(0.3, 0.0, 0.2, 0.5)[1] == 0.0
    with pytest.raises(ZeroDivisionError):
        beta_h_from_couplings(0.1, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        couplings_from_beta_h(1.0, 0.1, 0.0)


@given(st.floats(0, 3), st.floats(-0.5, 2), st.floats(-1, 1), st.floats(0.05, 3))
@settings(max_examples=50, deadline=None)
def test_change_of_variables_round_trip(m2, s0, a0, b0):
    beta, h = beta_h_from_couplings(m2, s0, a0, b0)
    back = couplings_from_beta_h(beta, h, s0, m2=m2)
    assert back["a0"] == pytest.approx(a0, abs=1e-14 * max(1, abs(a0) + m2 + b0))
    assert back["b0"] == pytest.approx(b0, rel=1e-14)
    back = couplings_from_beta_h(beta, h, s0, a0=a0)
    assert back["m2"] == pytest.approx(m2, abs=1e-13 * max(1, abs(a0) + m2 + b0))
