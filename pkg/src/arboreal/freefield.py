"""Lattice Green functions on tori via FFT, and infinite-lattice references."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .lattice import Torus


def symbol(torus: Torus) -> np.ndarray:
    """lambda(k) = 4 sum_j sin^2(k_j / 2) on the dual torus, shape torus.shape."""
    k = 2 * np.pi * np.fft.fftfreq(torus.side)
    s = 4 * np.sin(k / 2) ** 2
    lam = np.zeros(torus.shape)
    for axis in range(torus.d):
        shape = [1] * torus.d
        shape[axis] = torus.side
        lam = lam + s.reshape(shape)
    return lam


def kernel_from_symbol(sym: np.ndarray) -> np.ndarray:
    """Translation-invariant kernel K(x) = |Lambda|^-1 sum_k sym(k) e^{ikx}."""
    return np.fft.ifftn(sym).real


def symbol_from_kernel(kern: np.ndarray) -> np.ndarray:
    return np.fft.fftn(kern).real


def apply_operator(kern: np.ndarray, m2: float) -> np.ndarray:
    """(-Delta + m^2) applied to a kernel in real space."""
    out = (2 * kern.ndim + m2) * kern
    for axis in range(kern.ndim):
        out -= np.roll(kern, 1, axis=axis) + np.roll(kern, -1, axis=axis)
    return out


def laplacian(kern: np.ndarray) -> np.ndarray:
    return -apply_operator(kern, 0.0)


@dataclass(frozen=True, eq=False)
class GreenKernel:
    torus: Torus
    m2: float
    values: np.ndarray          # G(x) = (-Delta + m^2)^{-1}(0, x)
    zero_mode_removed: bool

    def at(self, offset) -> float:
        idx = tuple(np.mod(np.asarray(offset), self.torus.side))
        return float(self.values[idx])

    def pair(self, a, b) -> float:
        return self.at(np.asarray(b) - np.asarray(a))


@lru_cache(maxsize=16)
def _green_values(d: int, L: int, N: int, m2: float, project: bool) -> np.ndarray:
    torus = Torus(d, L, N)
    mu = symbol(torus) + m2
    if project:
        mu.flat[0] = np.inf
    vals = kernel_from_symbol(1.0 / mu)
    vals.setflags(write=False)
    return vals


def green(torus: Torus, m2: float, project_zero_mode: bool | None = None) -> GreenKernel:
    """(-Delta + m^2)^{-1} on the torus; at m^2 = 0 the zero mode must be projected."""
    if m2 < 0:
        raise ValueError("m^2 must be non-negative")
    project = (m2 == 0) if project_zero_mode is None else bool(project_zero_mode)
    if m2 == 0 and not project:
        raise ValueError("the massless Laplacian is singular; project out the zero mode")
    vals = _green_values(torus.d, torus.L, torus.N, float(m2), project)
    return GreenKernel(torus, float(m2), vals, project)


def w_kernel(torus: Torus, m2: float, t_N: float | None = None, gap: float | None = None) -> np.ndarray:
    """W_N(x) = G(x) - t_N / |Lambda|.

    Written as the zero-mode-free Green function plus ``gap / |Lambda|``
    with ``gap = 1/m^2 - t_N``.  Passing ``gap`` directly (as supplied by
    a decomposition) avoids cancellation and allows m^2 = 0.
    """
    if gap is None:
        if t_N is None or m2 <= 0:
            raise ValueError("need t_N with m^2 > 0, or the gap 1/m^2 - t_N")
        gap = 1.0 / m2 - t_N
    g0 = green(torus, m2, project_zero_mode=True).values
    return g0 + gap / torus.volume


@dataclass(frozen=True)
class ZdGreenReference:
    d: int
    x: tuple[int, ...]
    value: float
    sides: tuple[int, ...]
    raw: tuple[float, ...]           # massless torus values per side
    spread: float                    # |extrapolation(small pair) - extrapolation(large pair)|


def _massless_torus_value(d: int, side: int, x) -> float:
    t = Torus(d, side, 1)
    return green(t, 0.0).at(x)


def zd_green_reference(d: int, x=None, sides=(32, 64, 128)) -> ZdGreenReference:
    """(-Delta)^{-1}(0, x) on Z^d from massless tori, extrapolated in the side.

    The zero-mode-free torus Green function approaches the lattice value
    as G_L = G - A L^{2-d} + O(L^{-d}); two Richardson steps with those
    exponents use three sides.  ``spread`` compares the one-step
    extrapolations from the two adjacent pairs.
    """
    if d < 3:
        raise ValueError("the lattice Green function is finite only for d >= 3")
    x = tuple([0] * d) if x is None else tuple(int(c) for c in x)
    sides = tuple(int(s) for s in sides)
    if len(sides) < 2:
        raise ValueError("need at least two sides")
    vals = [_massless_torus_value(d, s, x) for s in sides]
    p1 = d - 2

    def step(s_lo, s_hi, g_lo, g_hi, p):
        r = (s_hi / s_lo) ** p
        return (r * g_hi - g_lo) / (r - 1)

    first = [step(sides[i], sides[i + 1], vals[i], vals[i + 1], p1) for i in range(len(sides) - 1)]
    if len(first) >= 2:
        value = step(sides[-2], sides[-1], first[-2], first[-1], d)
        spread = abs(first[-1] - first[-2])
    else:
        value = first[0]
        spread = float("nan")
    return ZdGreenReference(d, x, float(value), sides, tuple(vals), float(spread))


def zd_green_constant(d: int, radii=range(4, 13), sides=(32, 64, 128)) -> tuple[float, float]:
    """Fit G(r e_1) = c_d / r^{d-2} + c' / r^d over ``radii``; returns (c_d, c')."""
    radii = np.asarray(list(radii), dtype=float)
    g = np.array([zd_green_reference(d, (int(r),) + (0,) * (d - 1), sides).value for r in radii])
    A = np.stack([radii ** (2 - d), radii ** (-d)], axis=1)
    coef, *_ = np.linalg.lstsq(A, g, rcond=None)
    return float(coef[0]), float(coef[1])
