"""Coupling-constant recursions of the renormalisation group at K = 0.

The bulk potential per site is

    y (grad psi)(grad psibar) + z/2 ((-Lap psi) psibar + psi (-Lap psibar))
        + a psi psibar + b psi psibar (grad psi)(grad psibar)

and a step with covariance C_{j+1} maps (z, y, a, b) to

    z~ = z,  y~ = y - C(0) b,  a~ = a + (Lap C)(0) b,  b~ = b,

while the constant Wick term accumulates in u.  Remainder terms coming
from K are kept as explicit zero slots (``r_hat``, ``k0``, ``k2``).

Observable couplings follow the free two-point recursions; zero-mode
formulas integrate the last covariance t_N Q_N explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .frd import CovarianceDecomposition, decompose
from .freefield import green
from .lattice import Torus

INFINITE_SCALE = math.inf


# ------------------------------------------------------------------ kernel data


@dataclass(frozen=True)
class StepKernel:
    """Scalars of one covariance used by a flow step."""

    C0: float            # C(0, 0)
    lapC0: float         # (Lap C)(0)
    Ce: float            # C(0, e), nearest neighbour (isotropic)
    grad_sq: float       # 1/2 sum_e (C(0) - C(e))^2
    Cab: float = 0.0     # C(a, b) for the marked pair

    @classmethod
    def from_kernel(cls, kernel: np.ndarray, a=None, b=None) -> "StepKernel":
        d = kernel.ndim
        zero = (0,) * d
        C0 = float(kernel[zero])
        nbrs = []
        for axis in range(d):
            for s in (1, -1):
                idx = [0] * d
                idx[axis] = s % kernel.shape[axis]
                nbrs.append(float(kernel[tuple(idx)]))
        nbrs = np.array(nbrs)
        lap = float(np.sum(nbrs) - 2 * d * C0)
        cab = 0.0
        if a is not None and b is not None:
            off = np.mod(np.asarray(b) - np.asarray(a), kernel.shape[0])
            cab = float(kernel[tuple(off)])
        return cls(C0, lap, float(np.mean(nbrs)), float(0.5 * np.sum((C0 - nbrs) ** 2)), cab)

    @classmethod
    def zero_mode(cls, t_N: float, volume: int) -> "StepKernel":
        """t_N Q_N: a constant kernel, so every gradient vanishes."""
        c = t_N / volume
        return cls(c, 0.0, c, 0.0, c)


# ------------------------------------------------------------------ bulk flow


@dataclass(frozen=True)
class BulkCouplings:
    z: float = 0.0
    y: float = 0.0
    a: float = 0.0
    b: float = 0.0
    u: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.z, self.y, self.a, self.b, self.u)):
            raise ValueError("couplings must be finite")

    @property
    def s(self) -> float:
        """The identifiable gradient coupling y + z."""
        return self.y + self.z


def constant_wick_term(c: BulkCouplings, k: StepKernel) -> float:
    """Per-site constant part of E_C theta V."""
    return (c.y + c.z) * k.lapC0 - c.a * k.C0 + c.b * (-k.C0 * k.lapC0 - k.grad_sq)


def bulk_step(c: BulkCouplings, k: StepKernel) -> BulkCouplings:
    kyb, kab = -k.C0, k.lapC0
    return BulkCouplings(
        z=c.z,
        y=c.y + kyb * c.b,
        a=c.a + kab * c.b,
        b=c.b,
        u=c.u + constant_wick_term(c, k),
    )


def gradient_cross_shift(k: StepKernel) -> float:
    """Extra z-type coefficient per unit b from contracting psi psibar with a gradient.

    The full Wick expansion of the quartic term on a torus produces the
    gradient coupling y + z shifted by -C(e) b rather than -C(0) b; the
    difference (C(0) - C(e)) b = -(Lap C)(0) b / 2d is of z type.
    """
    return k.C0 - k.Ce


# ------------------------------------------------------------------ rescaled flow


@dataclass(frozen=True)
class RescaledCouplings:
    j: int
    z: float
    y: float
    a: float        # L^{2j} a_j
    b: float        # L^{-(d-2)j} b_j
    r_hat: tuple = (0.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_bulk(cls, c: BulkCouplings, L: int, d: int, j: int) -> "RescaledCouplings":
        return cls(j, c.z, c.y, L ** (2 * j) * c.a, L ** (-(d - 2) * j) * c.b)

    def to_bulk(self, L: int, d: int, u: float = 0.0) -> BulkCouplings:
        j = self.j
        return BulkCouplings(self.z, self.y, self.a * L ** (-2 * j), self.b * L ** ((d - 2) * j), u)


def rescaled_kappas(k: StepKernel, L: int, d: int, j: int) -> tuple[float, float]:
    """(kappa_hat^{yb}, kappa_hat^{ab}) = (L^{(d-2)j} kappa^{yb}, L^{dj+2} kappa^{ab})."""
    return L ** ((d - 2) * j) * (-k.C0), L ** (d * j + 2) * k.lapC0


def rescaled_step(r: RescaledCouplings, k: StepKernel, L: int, d: int) -> RescaledCouplings:
    kyb, kab = rescaled_kappas(k, L, d, r.j)
    rz, ry, ra, rb = r.r_hat
    return RescaledCouplings(
        r.j + 1,
        r.z + rz,
        r.y + kyb * r.b + ry,
        L**2 * r.a + kab * r.b + ra,
        L ** (-(d - 2)) * r.b + rb,
        r.r_hat,
    )


# ------------------------------------------------------------------ observables


@dataclass(frozen=True)
class ObservableCouplings:
    case: int
    lam_a: float = 1.0
    lam_b: float = 1.0
    q: float = 0.0
    r: float = 0.0
    gamma_a: float = 0.0
    gamma_b: float = 0.0
    eta: float = 0.0

    def __post_init__(self):
        if self.case not in (1, 2):
            raise ValueError("case must be 1 or 2")


def observable_step(o: ObservableCouplings, C_ab: float, C_00: float) -> ObservableCouplings:
    """One free step; right-hand sides read the pre-update couplings."""
    if o.case == 1:
        return replace(o, q=o.q + o.lam_a * o.lam_b * C_ab + o.r * C_00)
    return replace(
        o,
        gamma_a=o.gamma_a + o.lam_a * C_00,
        gamma_b=o.gamma_b + o.lam_b * C_00,
        eta=o.eta - 2.0 * o.lam_a * o.lam_b * C_ab,
        q=o.q + o.eta * C_ab + o.r * C_00 - o.lam_a * o.lam_b * C_ab**2,
    )


def coalescence_scale(a, b, L: int, torus: Torus | None = None) -> float:
    """floor(log_L(2 |a - b|_inf)), or +inf when a == b."""
    diff = np.asarray(b) - np.asarray(a)
    if torus is not None:
        diff = torus.minimal_image(diff)
    r = int(np.max(np.abs(diff))) if diff.size else 0
    if r == 0:
        return INFINITE_SCALE
    j, p = 0, L
    while p <= 2 * r:
        j += 1
        p *= L
    return j


# ------------------------------------------------------------------ zero mode


@dataclass(frozen=True)
class ZeroModeState:
    a_tilde: float
    t_N: float
    k0: float = 0.0
    k2: float = 0.0

    @property
    def u_tilde(self) -> float:
        return self.k0 + self.a_tilde * self.t_N


def susceptibility(a_tilde: float, u_tilde: float, m2: float) -> float:
    """chi = 1/m^2 - a~ / (m^4 (1 + u~))."""
    if m2 <= 0:
        raise ValueError("m^2 must be positive")
    if 1.0 + u_tilde == 0.0:
        raise ZeroDivisionError("1 + u~ vanishes")
    return 1.0 / m2 - a_tilde / (m2 * m2 * (1.0 + u_tilde))


@dataclass(frozen=True)
class ZeroModeObservables:
    case: int
    Z_a: float | None        # Z~^{sigma_a}, case 2
    Z_b: float | None
    Z_ab: float              # Z~^{sigma_a sigma_b} (case 2) or Z~^{sigmabar_b sigma_a} (case 1)
    u_tilde: float

    def two_point(self, o: ObservableCouplings) -> float:
        """Normalised correlator: Z_ab / (lam_a lam_b (1 + u~)) in case 1."""
        return self.Z_ab / (o.lam_a * o.lam_b * (1.0 + self.u_tilde))


def zero_mode_observables(o: ObservableCouplings, zm: ZeroModeState, volume: int) -> ZeroModeObservables:
    w = zm.t_N / volume
    u1 = 1.0 + zm.u_tilde
    if o.case == 1:
        return ZeroModeObservables(1, None, None, o.q * u1 + (o.lam_a * o.lam_b + o.r) * w, zm.u_tilde)
    Za = o.gamma_a * u1 + o.lam_a * w
    Zb = o.gamma_b * u1 + o.lam_b * w
    Zab = (o.q + o.gamma_a * o.gamma_b) * u1 + (
        o.eta + o.r + o.lam_a * o.gamma_b + o.lam_b * o.gamma_a
    ) * w
    return ZeroModeObservables(2, Za, Zb, Zab, zm.u_tilde)


# ------------------------------------------------------------------ change of variables


def beta_h_from_couplings(m2: float, s0: float, a0: float, b0: float) -> tuple[float, float]:
    """beta = (1+s0)^2 / b0 and h = -1 + (a0 + m^2)(1+s0) / b0."""
    if b0 == 0:
        raise ZeroDivisionError("b0 must be non-zero")
    if 1.0 + s0 <= 0:
        raise ValueError("need 1 + s0 > 0")
    return (1.0 + s0) ** 2 / b0, -1.0 + (a0 + m2) * (1.0 + s0) / b0


def couplings_from_beta_h(beta: float, h: float, s0: float, *, a0: float | None = None,
                          m2: float | None = None) -> dict:
    """Invert the change of variables; exactly one of ``a0``, ``m2`` must be given."""
    if (a0 is None) == (m2 is None):
        raise ValueError("give exactly one of a0 and m2")
    if beta == 0:
        raise ZeroDivisionError("beta must be non-zero")
    b0 = (1.0 + s0) ** 2 / beta
    total = (1.0 + h) * b0 / (1.0 + s0)       # a0 + m^2
    if a0 is None:
        a0 = total - m2
    else:
        m2 = total - a0
    return {"m2": m2, "s0": s0, "a0": a0, "b0": b0}


# ------------------------------------------------------------------ pipelines


@dataclass
class FlowRow:
    j: int
    bulk: BulkCouplings
    rescaled: RescaledCouplings
    obs: ObservableCouplings
    C00: float
    lapC0: float
    Cab: float


@dataclass
class FlowResult:
    torus: Torus
    m2: float
    a: tuple
    b: tuple
    rows: list[FlowRow]
    t_N: float
    j_ab: float
    final_obs: ObservableCouplings          # after the extra step with C_{N+1} = t_N Q_N
    zero_mode: ZeroModeObservables          # (N, N) pipeline
    chi: float
    extra: dict = field(default_factory=dict)

    def two_point(self) -> float:
        """Free correlator from the (N+1) pipeline (case 1) or q_{N+1} (case 2)."""
        o = self.final_obs
        return o.q / (o.lam_a * o.lam_b) if o.case == 1 else o.q

    def pipeline_gap(self) -> float:
        """|(N+1) pipeline - (N,N) pipeline| for the sigma_a sigma_b coefficient.

        The two agree when u~ = 0 (no quadratic coupling at the last scale).
        """
        o, zm = self.final_obs, self.zero_mode
        lhs = o.q if o.case == 1 else o.q + o.gamma_a * o.gamma_b
        return abs(lhs - zm.Z_ab)


def run_flow(torus: Torus, m2: float, *, case: int = 1, a=None, b=None, z0: float = 0.0,
             y0: float = 0.0, a0: float = 0.0, b0: float = 0.0, lam: float = 1.0,
             decomposition: CovarianceDecomposition | None = None, backend: str = "polynomial") -> FlowResult:
    """Iterate bulk, rescaled and observable flows through scales 1..N.

    The observable couplings are also pushed through C_{N+1} = t_N Q_N
    (the (N+1) pipeline), and separately evaluated by the zero-mode
    formulas at scale N (the (N, N) pipeline).
    """
    if m2 <= 0:
        raise ValueError("the flow pipelines need m^2 > 0")
    d, L, N = torus.d, torus.L, torus.N
    a = (0,) * d if a is None else tuple(int(v) for v in a)
    b = (1,) + (0,) * (d - 1) if b is None else tuple(int(v) for v in b)
    dec = decomposition or decompose(torus, m2, backend)
    bulk = BulkCouplings(z0, y0, a0, b0)
    resc = RescaledCouplings.from_bulk(bulk, L, d, 0)
    obs = ObservableCouplings(case, lam, lam)
    rows = [FlowRow(0, bulk, resc, obs, 0.0, 0.0, 0.0)]
    for j in range(N):
        k = StepKernel.from_kernel(dec.kernel(j + 1), a, b)
        bulk = bulk_step(bulk, k)
        resc = rescaled_step(resc, k, L, d)
        obs = observable_step(obs, k.Cab, k.C0)
        rows.append(FlowRow(j + 1, bulk, resc, obs, k.C0, k.lapC0, k.Cab))
    zm_state = ZeroModeState(bulk.a, dec.t_N)
    zm = zero_mode_observables(obs, zm_state, torus.volume)
    kz = StepKernel.zero_mode(dec.t_N, torus.volume)
    final = observable_step(obs, kz.Cab, kz.C0)
    chi = susceptibility(zm_state.a_tilde, zm_state.u_tilde, m2)
    return FlowResult(torus, float(m2), a, b, rows, dec.t_N, coalescence_scale(a, b, L, torus),
                      final, zm, chi)


def green_target(torus: Torus, m2: float, a, b, case: int) -> float:
    """Free correlator the flow should reproduce: G(a,b) or -G(a,b)^2."""
    g = green(torus, m2).pair(a, b)
    return g if case == 1 else -g * g
