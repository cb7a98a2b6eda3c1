"""Sparse Grassmann algebra, Berezin integration and the H^{0|2} model.

An element is a sum of ordered monomials ``c_S g^S`` where ``S`` is a
bitmask over the generator set and ``g^S`` the product of the selected
generators in increasing index order.  Masks are kept sorted and unique.

Vertex ``x`` owns generators ``2x`` and ``2x+1``: read as (xi_x, eta_x)
for the H^{0|2} model and as (psibar_x, psi_x) for Gaussian convolution.
Extra generators (observable sources) are appended after the vertex
block by :class:`GeneratorTable`.

Convention for the Berezin integral: with the default derivative order
``prod_x d_eta_x d_xi_x`` the canonical top monomial
``xi_0 eta_0 xi_1 eta_1 ...`` integrates to +1, which makes the one-vertex
model at h = 0 have partition function 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .lattice import Graph

PRUNE = 1e-300


def _popcount(a: np.ndarray) -> np.ndarray:
    return np.bitwise_count(a.astype(np.uint64)).astype(np.int64)


def _combine(masks: np.ndarray, coeffs: np.ndarray):
    if masks.size == 0:
        return masks.astype(np.int64), coeffs.astype(float)
    uniq, inv = np.unique(masks, return_inverse=True)
    acc = np.zeros(len(uniq))
    np.add.at(acc, inv, coeffs)
    keep = np.abs(acc) > PRUNE
    return uniq[keep], acc[keep]


def _product_sign(a: np.ndarray, b: np.ndarray, ngen: int) -> np.ndarray:
    """Sign of g^A g^B relative to the ordered monomial g^(A|B) (A, B disjoint)."""
    parity = np.zeros(a.shape, dtype=np.int64)
    for j in range(ngen):
        has = (b >> j) & 1
        if not has.any():
            continue
        parity += has * _popcount(a >> (j + 1))
    return 1 - 2 * (parity & 1)


class GrassmannElement:
    __slots__ = ("masks", "coeffs", "ngen")

    def __init__(self, masks, coeffs, ngen: int, *, _canonical: bool = False):
        masks = np.asarray(masks, dtype=np.int64).ravel()
        coeffs = np.asarray(coeffs, dtype=float).ravel()
        if not _canonical:
            masks, coeffs = _combine(masks, coeffs)
        self.masks = masks
        self.coeffs = coeffs
        self.ngen = int(ngen)

    # -- constructors
    @classmethod
    def scalar(cls, c: float, ngen: int) -> "GrassmannElement":
        return cls([0], [c], ngen)

    @classmethod
    def generator(cls, i: int, ngen: int, c: float = 1.0) -> "GrassmannElement":
        if not 0 <= i < ngen:
            raise IndexError(f"generator {i} outside 0..{ngen - 1}")
        return cls([1 << i], [c], ngen)

    @classmethod
    def monomial(cls, gens: Sequence[int], ngen: int, c: float = 1.0) -> "GrassmannElement":
        """Product of the listed generators in the listed order."""
        out = cls.scalar(c, ngen)
        for g in gens:
            out = out * cls.generator(g, ngen)
        return out

    def zero_like(self) -> "GrassmannElement":
        return GrassmannElement(np.zeros(0, np.int64), np.zeros(0), self.ngen, _canonical=True)

    # -- inspection
    def __repr__(self):
        terms = ", ".join(f"{m:#b}:{c:.6g}" for m, c in zip(self.masks[:6], self.coeffs[:6]))
        more = "" if len(self.masks) <= 6 else f", ... ({len(self.masks)} terms)"
        return f"GrassmannElement({terms}{more})"

    def coefficient(self, mask: int) -> float:
        i = np.searchsorted(self.masks, mask)
        if i < len(self.masks) and self.masks[i] == mask:
            return float(self.coeffs[i])
        return 0.0

    @property
    def scalar_part(self) -> float:
        return self.coefficient(0)

    def is_even(self) -> bool:
        return bool(np.all(_popcount(self.masks) % 2 == 0))

    def is_odd(self) -> bool:
        return bool(np.all(_popcount(self.masks) % 2 == 1))

    def support(self) -> int:
        """Union of all masks (generators that appear)."""
        return int(np.bitwise_or.reduce(self.masks)) if len(self.masks) else 0

    def max_abs_diff(self, other: "GrassmannElement") -> float:
        d = self - other
        return float(np.max(np.abs(d.coeffs))) if len(d.coeffs) else 0.0

    # -- arithmetic
    def _check(self, other):
        if isinstance(other, GrassmannElement):
            if other.ngen != self.ngen:
                raise ValueError("generator count mismatch")
            return other
        return GrassmannElement.scalar(float(other), self.ngen)

    def __add__(self, other):
        other = self._check(other)
        return GrassmannElement(
            np.concatenate([self.masks, other.masks]),
            np.concatenate([self.coeffs, other.coeffs]),
            self.ngen,
        )

    __radd__ = __add__

    def __neg__(self):
        return GrassmannElement(self.masks, -self.coeffs, self.ngen, _canonical=True)

    def __sub__(self, other):
        return self + (-self._check(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, GrassmannElement):
            c = float(other)
            if c == 0.0:
                return self.zero_like()
            return GrassmannElement(self.masks, self.coeffs * c, self.ngen, _canonical=True)
        other = self._check(other)
        if len(self.masks) == 0 or len(other.masks) == 0:
            return self.zero_like()
        a = np.repeat(self.masks, len(other.masks))
        b = np.tile(other.masks, len(self.masks))
        ca = np.repeat(self.coeffs, len(other.masks))
        cb = np.tile(other.coeffs, len(self.masks))
        ok = (a & b) == 0
        a, b, c = a[ok], b[ok], ca[ok] * cb[ok]
        sign = _product_sign(a, b, self.ngen)
        return GrassmannElement(a | b, sign * c, self.ngen)

    def __rmul__(self, other):
        # scalars commute with everything
        return self * other

    def __truediv__(self, c: float):
        return self * (1.0 / c)

    def __pow__(self, k: int):
        out = GrassmannElement.scalar(1.0, self.ngen)
        for _ in range(k):
            out = out * self
        return out


def deriv(a: GrassmannElement, g: int) -> GrassmannElement:
    """Left derivative d/dg: moves g to the front, then deletes it."""
    bit = 1 << g
    hit = (a.masks & bit) != 0
    m = a.masks[hit]
    sign = 1 - 2 * (_popcount(m & (bit - 1)) & 1)
    return GrassmannElement(m ^ bit, a.coeffs[hit] * sign, a.ngen)


def exp_even_nilpotent(a: GrassmannElement) -> GrassmannElement:
    """exp(a) for even ``a``; the nilpotent part's series is finite."""
    if not a.is_even():
        raise ValueError("exponential is defined here for even elements only")
    c0 = a.scalar_part
    nil = a - c0
    out = GrassmannElement.scalar(1.0, a.ngen)
    term = out
    k = 0
    while len(term.masks):
        k += 1
        term = term * nil / k
        out = out + term
        if k > a.ngen // 2 + 1:
            raise AssertionError("nilpotent series did not terminate")
    return out * math.exp(c0)


def integrate(a: GrassmannElement, order: Sequence[int]) -> GrassmannElement:
    """Apply the derivatives ``order[0] order[1] ...`` (rightmost first)."""
    out = a
    for g in reversed(list(order)):
        out = deriv(out, g)
    return out


def default_order(n_vertices: int) -> list[int]:
    """prod_x d_eta_x d_xi_x, written left to right."""
    out = []
    for x in range(n_vertices):
        out += [2 * x + 1, 2 * x]
    return out


def berezin(a: GrassmannElement, order: Sequence[int]) -> float:
    """Full Berezin integral: ``order`` must list every generator once."""
    order = list(order)
    if sorted(order) != list(range(a.ngen)):
        raise ValueError("order must be a permutation of all generators")
    return integrate(a, order).scalar_part


def top_sign(order: Sequence[int], ngen: int) -> float:
    full = GrassmannElement.monomial(range(ngen), ngen)
    return integrate(full, order).scalar_part


def paired_top(rho: GrassmannElement, f: GrassmannElement, order: Sequence[int] | None = None) -> float:
    """Berezin integral of rho*f without forming the full product."""
    full = (1 << rho.ngen) - 1
    need = full ^ f.masks
    idx = np.searchsorted(rho.masks, need)
    idx = np.minimum(idx, max(len(rho.masks) - 1, 0))
    hit = (rho.masks[idx] == need) if len(rho.masks) else np.zeros(len(need), bool)
    s = _product_sign(rho.masks[idx][hit], f.masks[hit], rho.ngen)
    total = math.fsum((s * rho.coeffs[idx][hit] * f.coeffs[hit]).tolist())
    sign = 1.0 if order is None else top_sign(order, rho.ngen)
    return sign * total


# ---------------------------------------------------------------- generator table


@dataclass
class GeneratorTable:
    """Ordered generator names: two per vertex, then named extras."""

    n_vertices: int
    pair_names: tuple[str, str] = ("xi", "eta")
    extras: list[str] = field(default_factory=list)

    @property
    def ngen(self) -> int:
        return 2 * self.n_vertices + len(self.extras)

    def first(self, x: int) -> int:
        return 2 * x

    def second(self, x: int) -> int:
        return 2 * x + 1

    def add_extra(self, name: str) -> int:
        if name in self.extras:
            raise ValueError(f"duplicate generator {name}")
        self.extras.append(name)
        return 2 * self.n_vertices + len(self.extras) - 1

    def index(self, name: str) -> int:
        if name in self.extras:
            return 2 * self.n_vertices + self.extras.index(name)
        base, _, x = name.partition("_")
        if base in self.pair_names and x.isdigit() and int(x) < self.n_vertices:
            return 2 * int(x) + self.pair_names.index(base)
        raise KeyError(name)

    def names(self) -> list[str]:
        a, b = self.pair_names
        out = []
        for x in range(self.n_vertices):
            out += [f"{a}_{x}", f"{b}_{x}"]
        return out + list(self.extras)

    def gen(self, name_or_index, c: float = 1.0) -> GrassmannElement:
        i = name_or_index if isinstance(name_or_index, int) else self.index(name_or_index)
        return GrassmannElement.generator(i, self.ngen, c)


# ---------------------------------------------------------------- H^{0|2} model


class H02Model:
    """Fermionic sigma model on a finite graph at couplings (beta, h).

    Density: prod_x (1 + xi_x eta_x) * exp(sum_edges w_xy (u_x.u_y + 1)
    + sum_x h_x xi_x eta_x), with u_x.u_y = -xi_x eta_y - xi_y eta_x - z_x z_y
    and z_x = 1 - xi_x eta_x.
    """

    MAX_VERTICES = 10

    def __init__(self, graph: Graph, beta: float, h: float, extras: Iterable[str] = ()):
        if graph.n > self.MAX_VERTICES:
            raise ValueError(f"{graph.n} vertices exceeds limit {self.MAX_VERTICES}")
        self.graph = graph
        self.table = GeneratorTable(graph.n, ("xi", "eta"), list(extras))
        self.ngen = self.table.ngen
        self.w, self.hx = graph.effective(beta, h)
        self.density = self._density()
        self.Z = paired_top(self.density, GrassmannElement.scalar(1.0, self.ngen))
        if not self.Z > 0:
            raise AssertionError("non-positive partition function")

    # -- fields
    def xi(self, x):
        return self.table.gen(2 * x)

    def eta(self, x):
        return self.table.gen(2 * x + 1)

    def xieta(self, x):
        return self.xi(x) * self.eta(x)

    def z(self, x):
        return 1.0 - self.xieta(x)

    def udot(self, x, y):
        return -(self.xi(x) * self.eta(y)) - self.xi(y) * self.eta(x) - self.z(x) * self.z(y)

    def _density(self) -> GrassmannElement:
        one = GrassmannElement.scalar(1.0, self.ngen)
        rho = one
        for x in range(self.graph.n):
            rho = rho * (one + self.xieta(x))
            if self.hx[x] != 0.0:
                rho = rho * exp_even_nilpotent(self.xieta(x) * self.hx[x])
        for (x, y), w in zip(self.graph.edges.tolist(), self.w):
            if w != 0.0:
                rho = rho * exp_even_nilpotent((self.udot(x, y) + 1.0) * w)
        return rho

    def integral(self, f: GrassmannElement) -> float | GrassmannElement:
        """Integrate out all vertex generators of density * f."""
        if not self.table.extras:
            return paired_top(self.density, f)
        return integrate(self.density * f, default_order(self.graph.n))

    def expect(self, f: GrassmannElement) -> float:
        return paired_top(self.density, f) / self.Z

    # -- symmetry generators
    def T(self, f: GrassmannElement) -> GrassmannElement:
        out = f.zero_like()
        for x in range(self.graph.n):
            out = out + self.z(x) * deriv(f, 2 * x)
        return out

    def Tbar(self, f: GrassmannElement) -> GrassmannElement:
        out = f.zero_like()
        for x in range(self.graph.n):
            out = out + self.z(x) * deriv(f, 2 * x + 1)
        return out


def h02_expectation(graph: Graph, beta: float, h: float, observable) -> float:
    """<F>_{beta,h}; ``observable`` is an element or a callable model -> element."""
    model = H02Model(graph, beta, h)
    f = observable(model) if callable(observable) else observable
    return model.expect(f)


def psi_form_density(graph: Graph, beta: float, h: float, neighbours: Sequence[Sequence[int]]) -> GrassmannElement:
    """Density rewritten in psi = sqrt(beta) eta, psibar = sqrt(beta) xi.

    exp[-(psi, -Lap psibar) - (1+h)/beta sum psi_x psibar_x
        - 1/(2 beta) sum_x psi_x psibar_x sum_e psi_{x+e} psibar_{x+e}]
    expressed back in xi, eta.  ``neighbours[x]`` lists x+e for every unit
    vector e (both orientations), so each edge is seen twice in the quartic
    sum.  Valid for uniform beta and h on a vertex-transitive lattice.
    """
    n = graph.n
    ngen = 2 * n
    sb = math.sqrt(beta)
    psi = [GrassmannElement.generator(2 * x + 1, ngen, sb) for x in range(n)]
    psibar = [GrassmannElement.generator(2 * x, ngen, sb) for x in range(n)]
    expo = GrassmannElement.scalar(0.0, ngen)
    for x, y in graph.edges.tolist():
        expo = expo - (psi[x] - psi[y]) * (psibar[x] - psibar[y])
    for x in range(n):
        pp = psi[x] * psibar[x]
        expo = expo - pp * ((1.0 + h) / beta)
        quart = GrassmannElement.scalar(0.0, ngen)
        for y in neighbours[x]:
            quart = quart + psi[y] * psibar[y]
        expo = expo - pp * quart / (2.0 * beta)
    return exp_even_nilpotent(expo)


# ---------------------------------------------------------------- Gaussian convolution


def gaussian_convolution(C: np.ndarray, f: GrassmannElement) -> GrassmannElement:
    """e^{L_C} f with L_C = sum_{x,y} C_xy d_{psi_y} d_{psibar_x}.

    Generators 2x (psibar_x) and 2x+1 (psi_x); extra generators beyond the
    vertex block are left untouched.
    """
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    if C.shape != (n, n) or 2 * n > f.ngen:
        raise ValueError("covariance does not match the generator table")
    pairs = [(x, y, C[x, y]) for x in range(n) for y in range(n) if C[x, y] != 0.0]

    def apply(g: GrassmannElement) -> GrassmannElement:
        out = g.zero_like()
        for x, y, c in pairs:
            out = out + deriv(deriv(g, 2 * x), 2 * y + 1) * c
        return out

    out = f
    term = f
    k = 0
    while len(term.masks):
        k += 1
        term = apply(term) / k
        out = out + term
        if k > f.ngen:
            raise AssertionError("Laplacian series did not terminate")
    return out


def wick_moment(C: np.ndarray, pairs: Sequence[tuple[int, int]], ngen: int | None = None) -> float:
    """Scalar part of e^{L_C} applied to prod_i psibar_{x_i} psi_{y_i}."""
    n = np.asarray(C).shape[0]
    ngen = 2 * n if ngen is None else ngen
    gens = []
    for x, y in pairs:
        gens += [2 * x, 2 * y + 1]
    f = GrassmannElement.monomial(gens, ngen)
    return gaussian_convolution(C, f).scalar_part


def random_even_element(rng: np.random.Generator, ngen: int, n_terms: int, support: int | None = None) -> GrassmannElement:
    """Random even element whose masks lie inside ``support`` (default: all)."""
    support = (1 << ngen) - 1 if support is None else support
    allowed = [m for m in range(1 << ngen) if (m & ~support) == 0 and bin(m).count("1") % 2 == 0]
    pick = rng.choice(len(allowed), size=min(n_terms, len(allowed)), replace=False)
    masks = np.array([allowed[i] for i in pick], dtype=np.int64)
    return GrassmannElement(masks, rng.normal(size=len(masks)), ngen)


# ---------------------------------------------------------------- dictionary


def dictionary_check(graph: Graph, beta: float, h: float) -> dict[str, float]:
    """Max absolute discrepancy of each fermion/forest identity.

    Compares the Grassmann engine against :mod:`arboreal.exact` for all
    vertex pairs (the identities are stated for a marked vertex 0; every
    vertex is used in turn).
    """
    from .exact import ExactMeasure

    mu = ExactMeasure(graph, beta, h)
    mod = H02Model(graph, beta, h)
    n = graph.n
    E = mod.expect
    z = [mod.z(x) for x in range(n)]
    ez = np.array([E(z[x]) for x in range(n)])
    xe = np.array([[E(mod.xi(x) * mod.eta(y)) for y in range(n)] for x in range(n)])
    uu = np.array([[E(mod.udot(x, y)) for y in range(n)] for x in range(n)])
    zz = np.array([[E(z[x] * z[y]) for y in range(n)] for x in range(n)])
    four = np.array([[E(mod.xieta(x) * mod.xieta(y)) for y in range(n)] for x in range(n)])

    conn = mu.connection()
    gh = mu.ghost()
    rep = {}
    rep["partition_function"] = abs(mod.Z - mu.Z)
    rep["z_is_ghost_connection"] = float(np.max(np.abs(ez - gh)))
    rep["xieta_is_unrooted_connection"] = float(np.max(np.abs(xe - mu.connected_unrooted())))
    rep["udot_is_amended_connection"] = float(np.max(np.abs(-uu - (conn + mu.both_rooted_apart()))))
    rep["ward"] = float(np.max(np.abs(ez - xe @ mod.hx)))
    # ghost-edge forms: h_0 <1 - z_0> = P[0g], covariance of (z - 1)
    root = mu.root_at()
    pair = mu.root_pair()
    rep["ghost_edge"] = float(np.max(np.abs(mod.hx * (1.0 - ez) - root)))
    # distinct vertices only: (1 - z_0)^2 = 0 kills the diagonal
    off = ~np.eye(n, dtype=bool)
    cov = zz - np.outer(ez, ez)
    resid = np.outer(mod.hx, mod.hx) * cov - (pair - np.outer(root, root))
    rep["ghost_edge_covariance"] = float(np.max(np.abs(resid[off]), initial=0.0))
    # four-point: <xi eta xi eta> is the probability that x, y are apart and unrooted
    rep["four_point_is_unrooted_apart"] = float(
        np.max(np.abs((four - mu.none_rooted_apart())[off]), initial=0.0)
    )
    # h = 0 chain of equalities, evaluated at (beta, 0)
    m0 = H02Model(graph, beta, 0.0)
    mu0 = ExactMeasure(graph, beta, 0.0, table=mu.table)
    c0 = mu0.connection()
    chain = []
    for x in range(n):
        for y in range(n):
            if x == y:
                continue
            vals = (
                -m0.expect(m0.udot(x, y)),
                -m0.expect(m0.z(x) * m0.z(y)),
                m0.expect(m0.xi(x) * m0.eta(y)),
                1.0 - m0.expect(m0.xieta(x) * m0.xieta(y)),
            )
            chain.append(max(abs(v - c0[x, y]) for v in vals))
    rep["zero_field_chain"] = max(chain, default=0.0)
    return rep


def ward_check(graph: Graph, beta: float, h: float) -> dict[str, float]:
    """<z_0> = sum_x h_x <xi_0 eta_x>, and <z_0> = 0 at zero field."""
    mod = H02Model(graph, beta, h)
    n = graph.n
    worst = 0.0
    for o in range(n):
        lhs = mod.expect(mod.z(o))
        rhs = math.fsum(mod.hx[x] * mod.expect(mod.xi(o) * mod.eta(x)) for x in range(n))
        worst = max(worst, abs(lhs - rhs))
    m0 = H02Model(graph, beta, 0.0)
    zero = max(abs(m0.expect(m0.z(o))) for o in range(n))
    return {"ward": worst, "z_at_zero_field": zero}
