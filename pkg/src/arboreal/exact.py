"""Brute-force oracle: every forest of a small graph, exactly weighted.

The enumeration walks the edge list depth first, branching on "skip" and
"take" and taking an edge only when its endpoints lie in different
components, so each acyclic subset is produced exactly once.  Component
labels are kept canonical (smallest vertex of the tree).

All expectations are formed from a :class:`ForestTable` and summed with
``math.fsum``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .forest import ForestState
from .lattice import Graph

MAX_EDGES = 24
MAX_KERNEL_EDGES = 14


class EnumerationTooLarge(ValueError):
    pass


def _fsum_rows(x: np.ndarray) -> float:
    return math.fsum(np.asarray(x, dtype=float).ravel().tolist())


@dataclass(frozen=True, eq=False)
class ForestTable:
    graph: Graph
    masks: np.ndarray      # (F,) int64 edge bitmasks, ascending
    labels: np.ndarray     # (F, n) canonical component label per vertex

    @cached_property
    def edge_bits(self) -> np.ndarray:
        m = self.graph.m
        return ((self.masks[:, None] >> np.arange(m)) & 1).astype(bool)

    @cached_property
    def edge_counts(self) -> np.ndarray:
        return self.edge_bits.sum(axis=1)

    @cached_property
    def tree_sizes(self) -> np.ndarray:
        """(F, n): size of the tree containing each vertex."""
        F, n = self.labels.shape
        cnt = np.zeros((F, n), dtype=np.int64)
        rows = np.repeat(np.arange(F), n)
        np.add.at(cnt, (rows, self.labels.ravel()), 1)
        return np.take_along_axis(cnt, self.labels, axis=1)

    def field_sums(self, hx: np.ndarray) -> np.ndarray:
        """(F, n): sum of ``hx`` over the tree containing each vertex."""
        F, n = self.labels.shape
        acc = np.zeros((F, n))
        rows = np.repeat(np.arange(F), n)
        np.add.at(acc, (rows, self.labels.ravel()), np.tile(hx, F))
        return np.take_along_axis(acc, self.labels, axis=1)

    def root_mask(self) -> np.ndarray:
        return self.labels == np.arange(self.labels.shape[1])

    def weights(self, beta: float, h: float) -> np.ndarray:
        w, hx = self.graph.effective(beta, h)
        edge_part = np.prod(np.where(self.edge_bits, w, 1.0), axis=1)
        H = self.field_sums(hx)
        tree_part = np.prod(np.where(self.root_mask(), 1.0 + H, 1.0), axis=1)
        return edge_part * tree_part

    def index_of(self, masks: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.masks, masks)
        idx = np.minimum(idx, len(self.masks) - 1)
        ok = self.masks[idx] == masks
        return np.where(ok, idx, -1)

    def state(self, i: int) -> ForestState:
        bits = np.flatnonzero(self.edge_bits[i])
        return ForestState(self.graph, bits)


def forest_table(graph: Graph, max_edges: int = MAX_EDGES) -> ForestTable:
    m, n = graph.m, graph.n
    if m > max_edges:
        raise EnumerationTooLarge(f"{m} edges exceeds enumeration limit {max_edges}")
    edges = graph.edges.tolist()
    masks: list[int] = []
    labs: list[tuple[int, ...]] = []

    def rec(i: int, mask: int, lab: tuple[int, ...]):
        if i == m:
            masks.append(mask)
            labs.append(lab)
            return
        rec(i + 1, mask, lab)
        u, v = edges[i]
        lu, lv = lab[u], lab[v]
        if lu != lv:
            keep, drop = (lu, lv) if lu < lv else (lv, lu)
            rec(i + 1, mask | (1 << i), tuple(keep if c == drop else c for c in lab))

    rec(0, 0, tuple(range(n)))
    masks_a = np.array(masks, dtype=np.int64)
    labs_a = np.array(labs, dtype=np.int64).reshape(len(masks), n)
    order = np.argsort(masks_a, kind="stable")
    return ForestTable(graph, masks_a[order], labs_a[order])


def enumerate_forests(graph: Graph):
    """Yield every forest of ``graph`` as a :class:`ForestState`."""
    table = forest_table(graph)
    for i in range(len(table.masks)):
        yield table.state(i)


# ---------------------------------------------------------------- measure


class ExactMeasure:
    """Normalised arboreal-gas measure on an enumerated graph."""

    def __init__(self, graph: Graph, beta: float, h: float, table: ForestTable | None = None):
        self.graph = graph
        self.beta = float(beta)
        self.h = float(h)
        self.table = table if table is not None else forest_table(graph)
        self.w = self.table.weights(beta, h)
        self.Z = _fsum_rows(self.w)
        self.p = self.w / self.Z
        _, self.hx = graph.effective(beta, h)
        self.H = self.table.field_sums(self.hx)         # (F, n)
        self.unrooted = 1.0 / (1.0 + self.H)             # P[tree of x not rooted | F]
        lab = self.table.labels
        self.same = lab[:, :, None] == lab[:, None, :]   # (F, n, n)

    def expect(self, values: np.ndarray) -> float | np.ndarray:
        """E[values] over the forest axis (axis 0), compensated."""
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            return _fsum_rows(self.p * v)
        flat = v.reshape(len(self.p), -1)
        out = np.array([_fsum_rows(self.p * flat[:, j]) for j in range(flat.shape[1])])
        return out.reshape(v.shape[1:])

    # -- primitive events (rooted picture: ghost edges integrated out)
    def connection(self) -> np.ndarray:
        """P[x <-> y] for all pairs."""
        return self.expect(self.same)

    def ghost(self) -> np.ndarray:
        """P[x <-> ghost] = E[H_x / (1 + H_x)]."""
        return self.expect(self.H * self.unrooted)

    def root_at(self) -> np.ndarray:
        """P[edge x-ghost present] = E[h_x / (1 + H_x)]."""
        return self.expect(self.hx[None, :] * self.unrooted)

    def root_pair(self) -> np.ndarray:
        """P[x-ghost and y-ghost both present]."""
        r = self.hx[None, :] * self.unrooted
        both = np.where(self.same, 0.0, r[:, :, None] * r[:, None, :])
        diag = np.einsum("fxx->fx", both)
        diag[...] = r
        return self.expect(both)

    def connected_unrooted(self) -> np.ndarray:
        """P[x <-> y, x not<-> ghost]."""
        return self.expect(self.same * self.unrooted[:, :, None])

    def both_rooted_apart(self) -> np.ndarray:
        """P[x not<-> y, x <-> ghost, y <-> ghost]."""
        g = self.H * self.unrooted
        return self.expect(~self.same * g[:, :, None] * g[:, None, :])

    def none_rooted_apart(self) -> np.ndarray:
        """P[x not<-> y, x not<-> ghost, y not<-> ghost]."""
        u = self.unrooted
        return self.expect(~self.same * u[:, :, None] * u[:, None, :])

    def mean_tree_size(self) -> np.ndarray:
        return self.expect(self.table.tree_sizes)


@dataclass(frozen=True)
class ExactSummary:
    Z: float
    connection: np.ndarray       # P[x <-> y]
    ghost: np.ndarray            # P[x <-> ghost]
    mean_tree_size: float        # E|T_origin|
    tau: np.ndarray              # P[o <-> x, o not<-> ghost]
    sigma: np.ndarray            # P[o not<-> g]^2 - P[o,x apart, neither rooted]
    origin: int = 0


def summarize(graph: Graph, beta: float, h: float, origin: int = 0) -> ExactSummary:
    mu = ExactMeasure(graph, beta, h)
    conn = mu.connection()
    gh = mu.ghost()
    tau = mu.connected_unrooted()[origin]
    sigma = (1.0 - gh[origin]) ** 2 - mu.none_rooted_apart()[origin]
    return ExactSummary(
        mu.Z, conn, gh, float(mu.mean_tree_size()[origin]), tau, sigma, origin
    )


def partition_function(graph: Graph, beta: float, h: float) -> float:
    return ExactMeasure(graph, beta, h).Z


def connection_probability(graph: Graph, beta: float, h: float, x: int, y: int) -> float:
    return float(ExactMeasure(graph, beta, h).connection()[x, y])


def ghost_probability(graph: Graph, beta: float, h: float, x: int) -> float:
    return float(ExactMeasure(graph, beta, h).ghost()[x])


def rooted_forest_sum(graph: Graph, beta: float, h: float) -> float:
    """Sum over forests of prod_e w_e prod_T (sum_{x in T} h_x)."""
    table = forest_table(graph)
    w, hx = graph.effective(beta, h)
    edge_part = np.prod(np.where(table.edge_bits, w, 1.0), axis=1)
    H = table.field_sums(hx)
    tree_part = np.prod(np.where(table.root_mask(), H, 1.0), axis=1)
    return _fsum_rows(edge_part * tree_part)


def matrix_forest_determinant(graph: Graph, beta: float, h: float) -> float:
    w, hx = graph.effective(beta, h)
    return float(np.linalg.det(graph.laplacian(w) + np.diag(hx)))


# ---------------------------------------------------------------- sampler kernel


def sampler_transition_matrix(graph: Graph, beta: float, h: float, table: ForestTable | None = None):
    """Single-edge Metropolis kernel over all forests (CSR, row-stochastic).

    Each step picks an edge uniformly; a cycle-closing addition is
    rejected, otherwise the toggle is accepted with probability
    min(1, ratio) of the two forest weights.
    Returns (P, table).
    """
    if graph.m > MAX_KERNEL_EDGES:
        raise EnumerationTooLarge(f"{graph.m} edges exceeds kernel limit {MAX_KERNEL_EDGES}")
    table = table if table is not None else forest_table(graph)
    F, m = len(table.masks), graph.m
    w, hx = graph.effective(beta, h)
    H = table.field_sums(hx)
    lab = table.labels
    rows, cols, vals = [], [], []
    stay = np.ones(F)
    for e, (u, v) in enumerate(graph.edges.tolist()):
        present = table.edge_bits[:, e]
        target = table.index_of(table.masks ^ (1 << e))
        acc = np.zeros(F)
        add = ~present & (lab[:, u] != lab[:, v])
        a, b = H[add, u], H[add, v]
        acc[add] = np.minimum(1.0, w[e] * (1.0 + a + b) / ((1.0 + a) * (1.0 + b)))
        # removals: field sums of the two trees after the split (target forest)
        j = target[present]
        a, b = H[j, u], H[j, v]
        num = w[e] * (1.0 + a + b)
        with np.errstate(divide="ignore"):
            acc[present] = np.where(num > 0, np.minimum(1.0, (1.0 + a) * (1.0 + b) / np.where(num > 0, num, 1.0)), 1.0)
        moving = np.flatnonzero(acc > 0)
        if np.any(target[moving] < 0):
            raise AssertionError("toggle left the forest set")
        rows.append(moving)
        cols.append(target[moving])
        vals.append(acc[moving] / m)
        stay[moving] -= acc[moving] / m
    rows.append(np.arange(F))
    cols.append(np.arange(F))
    vals.append(stay)
    P = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(F, F)
    )
    return P, table
