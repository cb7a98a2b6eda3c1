"""Forest configurations with incremental connectivity.

A forest is a subset of the edge list with no cycle.  Components carry
integer labels drawn from a free list; each label has a vertex count and
a field sum (the sum of vertex field values over the tree).

* Adding an edge between two trees relabels the smaller tree.
* Removing an edge runs a breadth-first search from both endpoints in
  lockstep; the side that is exhausted first is the smaller one and is
  the only side relabelled, so a split costs O(size of smaller part).

The low-level kernels are numba functions operating on plain arrays so
that the sampler can call them from inside its compiled loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .lattice import Graph

ADDED, REMOVED, REJECTED = 1, 2, 0


@dataclass(frozen=True)
class ForestToggleOutcome:
    kind: str  # "added" | "removed" | "rejected"
    sizes: tuple[int, ...]


@dataclass(frozen=True)
class ForestWeight:
    log_weight: float
    edge_count: int
    tree_sizes: tuple[int, ...]
    tree_fields: tuple[float, ...]

    @property
    def value(self) -> float:
        return math.exp(self.log_weight)


def csr_adjacency(graph: Graph):
    """Adjacency in CSR form: (ptr, neighbour, edge index)."""
    n, edges = graph.n, graph.edges
    deg = np.bincount(edges.ravel(), minlength=n)
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(deg, out=ptr[1:])
    nbr = np.empty(2 * len(edges), dtype=np.int64)
    eid = np.empty(2 * len(edges), dtype=np.int64)
    fill = ptr[:-1].copy()
    for k, (u, v) in enumerate(edges.tolist()):
        nbr[fill[u]], eid[fill[u]] = v, k
        fill[u] += 1
        nbr[fill[v]], eid[fill[v]] = u, k
        fill[v] += 1
    return ptr, nbr, eid


# ----------------------------------------------------------------- kernels
# State arrays:
#   present[m] uint8     edge in forest
#   label[n]  int64      component label of each vertex
#   size[n]   int64      vertex count per label
#   fsum[n]   float64    field sum per label
#   free[n]   int64      stack of unused labels, free_top[0] = stack height
#   qa, qb    int64[n]   BFS queues; mark int64[n] with stamp[0]


@nb.njit(cache=True)
def _split_search(e, edges, ptr, nbr, eid, present, qa, qb, mark, stamp):
    """Explore both sides of present edge e as if it were removed.

    Returns (side, count): side 0 means the u-side finished first and
    occupies qa[:count]; side 1 the v-side in qb[:count].
    """
    stamp[0] += 2
    sa = stamp[0]
    sb = sa + 1
    u = edges[e, 0]
    v = edges[e, 1]
    qa[0] = u
    qb[0] = v
    mark[u] = sa
    mark[v] = sb
    ha = 0
    ta = 1
    hb = 0
    tb = 1
    while True:
        # one expansion on side a
        if ha == ta:
            return 0, ta
        x = qa[ha]
        ha += 1
        for p in range(ptr[x], ptr[x + 1]):
            k = eid[p]
            if k == e or present[k] == 0:
                continue
            y = nbr[p]
            if mark[y] != sa:
                mark[y] = sa
                qa[ta] = y
                ta += 1
        if hb == tb:
            return 1, tb
        x = qb[hb]
        hb += 1
        for p in range(ptr[x], ptr[x + 1]):
            k = eid[p]
            if k == e or present[k] == 0:
                continue
            y = nbr[p]
            if mark[y] != sb:
                mark[y] = sb
                qb[tb] = y
                tb += 1


@nb.njit(cache=True)
def _side_field(queue, count, field):
    s = 0.0
    for i in range(count):
        s += field[queue[i]]
    return s


@nb.njit(cache=True)
def _commit_split(e, side, count, qa, qb, present, label, size, fsum, free, free_top, sub_field):
    old = label[qa[0]]
    new = free[free_top[0] - 1]
    free_top[0] -= 1
    q = qa if side == 0 else qb
    for i in range(count):
        label[q[i]] = new
    size[new] = count
    size[old] -= count
    fsum[new] = sub_field
    fsum[old] -= sub_field
    present[e] = 0


@nb.njit(cache=True)
def _commit_merge(e, edges, ptr, nbr, eid, present, label, size, fsum, free, free_top, qa, mark, stamp):
    u = edges[e, 0]
    v = edges[e, 1]
    lu = label[u]
    lv = label[v]
    if size[lu] < size[lv]:
        small, big, start = lu, lv, u
    else:
        small, big, start = lv, lu, v
    # relabel the smaller tree (edge e not yet present, so BFS stays inside it)
    stamp[0] += 2
    s = stamp[0]
    qa[0] = start
    mark[start] = s
    head = 0
    tail = 1
    while head < tail:
        x = qa[head]
        head += 1
        label[x] = big
        for p in range(ptr[x], ptr[x + 1]):
            if present[eid[p]] == 0:
                continue
            y = nbr[p]
            if mark[y] != s:
                mark[y] = s
                qa[tail] = y
                tail += 1
    size[big] += size[small]
    fsum[big] += fsum[small]
    size[small] = 0
    fsum[small] = 0.0
    free[free_top[0]] = small
    free_top[0] += 1
    present[e] = 1


@nb.njit(cache=True)
def _toggle(e, edges, ptr, nbr, eid, field, present, label, size, fsum, free, free_top, qa, qb, mark, stamp, out):
    """Unconditional toggle. out receives the relevant tree sizes."""
    u = edges[e, 0]
    v = edges[e, 1]
    if present[e]:
        side, count = _split_search(e, edges, ptr, nbr, eid, present, qa, qb, mark, stamp)
        q = qa if side == 0 else qb
        sub = _side_field(q, count, field)
        total = size[label[u]]
        _commit_split(e, side, count, qa, qb, present, label, size, fsum, free, free_top, sub)
        out[0] = size[label[u]]
        out[1] = size[label[v]]
        out[2] = total
        return REMOVED
    if label[u] == label[v]:
        return REJECTED
    out[0] = size[label[u]]
    out[1] = size[label[v]]
    _commit_merge(e, edges, ptr, nbr, eid, present, label, size, fsum, free, free_top, qa, mark, stamp)
    out[2] = size[label[u]]
    return ADDED


# ----------------------------------------------------------------- state


class ForestState:
    """Mutable forest on a fixed graph."""

    def __init__(self, graph: Graph, edges_present=()):
        self.graph = graph
        n, m = graph.n, graph.m
        self._edges = np.ascontiguousarray(graph.edges)
        self._ptr, self._nbr, self._eid = csr_adjacency(graph)
        self._field = np.ascontiguousarray(graph.field, dtype=float)
        self.present = np.zeros(m, dtype=np.uint8)
        self.label = np.arange(n, dtype=np.int64)
        self.size = np.ones(n, dtype=np.int64)
        self.fsum = self._field.copy()
        self.free = np.zeros(n, dtype=np.int64)
        self.free_top = np.zeros(1, dtype=np.int64)
        self._qa = np.zeros(n, dtype=np.int64)
        self._qb = np.zeros(n, dtype=np.int64)
        self._mark = np.zeros(n, dtype=np.int64)
        self._stamp = np.zeros(1, dtype=np.int64)
        self._out = np.zeros(3, dtype=np.int64)
        for e in edges_present:
            if self.toggle_edge(int(e)).kind != "added":
                raise ValueError(f"edge set is not a forest (edge {e})")

    # -- mutation
    def toggle_edge(self, e: int) -> ForestToggleOutcome:
        code = _toggle(
            e, self._edges, self._ptr, self._nbr, self._eid, self._field,
            self.present, self.label, self.size, self.fsum, self.free, self.free_top,
            self._qa, self._qb, self._mark, self._stamp, self._out,
        )
        o = self._out
        if code == ADDED:
            return ForestToggleOutcome("added", (int(o[2]),))
        if code == REMOVED:
            return ForestToggleOutcome("removed", (int(o[0]), int(o[1])))
        return ForestToggleOutcome("rejected", ())

    # -- queries
    def tree_of(self, x: int) -> tuple[int, int]:
        lab = int(self.label[x])
        return lab, int(self.size[lab])

    def connected(self, x: int, y: int) -> bool:
        return self.label[x] == self.label[y]

    @property
    def edge_indices(self) -> np.ndarray:
        return np.flatnonzero(self.present)

    def trees(self) -> dict[int, np.ndarray]:
        labs = np.unique(self.label)
        return {int(l): np.flatnonzero(self.label == l) for l in labs}

    def serialize(self) -> str:
        return "".join(f"{e}\n" for e in self.edge_indices.tolist())

    @classmethod
    def deserialize(cls, graph: Graph, text: str) -> "ForestState":
        return cls(graph, [int(t) for t in text.split()])


def weight(forest: ForestState, beta: float, h: float) -> ForestWeight:
    """Unnormalised weight prod_e beta*w_e * prod_T (1 + h * sum_{x in T} field_x)."""
    w, hx = forest.graph.effective(beta, h)
    idx = forest.edge_indices
    with np.errstate(divide="ignore"):
        logw = float(np.sum(np.log(w[idx])))
    sizes, fields = [], []
    for verts in forest.trees().values():
        sizes.append(len(verts))
        fields.append(float(np.sum(hx[verts])))
    logw += math.fsum(math.log1p(f) for f in fields)
    order = np.argsort(sizes, kind="stable")
    return ForestWeight(logw, len(idx), tuple(sizes[i] for i in order), tuple(fields[i] for i in order))


def is_forest(graph: Graph, edge_indices) -> bool:
    """Independent acyclicity check by union-find (scipy components count)."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    idx = np.asarray(list(edge_indices), dtype=np.int64)
    e = graph.edges[idx]
    a = coo_matrix((np.ones(len(idx)), (e[:, 0], e[:, 1])), shape=(graph.n, graph.n))
    ncomp, _ = connected_components(a, directed=False)
    return graph.n - ncomp == len(idx)


@nb.njit(cache=True)
def toggle_ratio(adding, w_e, a, b):
    """Target-weight ratio for toggling an edge of weight ``w_e``.

    ``a`` and ``b`` are the (h-scaled) field sums of the two trees on
    either side of the edge: before merging when adding, after splitting
    when removing.
    """
    num = w_e * (1.0 + a + b)
    den = (1.0 + a) * (1.0 + b)
    if adding:
        return num / den
    if num == 0.0:
        return np.inf
    return den / num
