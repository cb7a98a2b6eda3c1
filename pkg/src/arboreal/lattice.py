"""Finite weighted graphs, periodic tori and the ghost amendment.

A :class:`Graph` carries per-edge weights and per-vertex field values.
Everywhere in the package a global ``beta`` multiplies the base edge
weights and a global ``h`` multiplies the vertex field, so the plain
arboreal gas at couplings ``(beta, h)`` is obtained from unit weights.
Ghost edges (created by :func:`amend_with_ghost`) keep their own weight
and are not scaled by ``beta``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np


class GraphError(ValueError):
    """Invalid graph or torus construction."""


@dataclass(frozen=True, eq=False)
class Graph:
    n: int
    edges: np.ndarray
    weights: np.ndarray
    field: np.ndarray
    ghost: int | None = None

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        m = len(edges)
        weights = np.ones(m) if self.weights is None else np.asarray(self.weights, dtype=float)
        fld = np.ones(self.n) if self.field is None else np.asarray(self.field, dtype=float)
        if weights.shape != (m,) or fld.shape != (self.n,):
            raise GraphError("weight/field shape mismatch")
        if m and (edges.min() < 0 or edges.max() >= self.n):
            raise GraphError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise GraphError("self-loops are not allowed")
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        if len(set(zip(lo.tolist(), hi.tolist()))) != m:
            raise GraphError("parallel edges are not allowed")
        if not (np.all(np.isfinite(weights)) and np.all(weights >= 0)):
            raise GraphError("edge weights must be finite and non-negative")
        if not (np.all(np.isfinite(fld)) and np.all(fld >= 0)):
            raise GraphError("vertex field must be finite and non-negative")
        edges.setflags(write=False)
        weights.setflags(write=False)
        fld.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "field", fld)

    @property
    def m(self) -> int:
        return len(self.edges)

    @cached_property
    def base_edge_mask(self) -> np.ndarray:
        """True for edges not touching the ghost vertex."""
        if self.ghost is None:
            return np.ones(self.m, dtype=bool)
        return (self.edges[:, 0] != self.ghost) & (self.edges[:, 1] != self.ghost)

    def effective(self, beta: float, h: float) -> tuple[np.ndarray, np.ndarray]:
        """Edge weights and vertex weights at global couplings ``beta``, ``h``."""
        w = np.where(self.base_edge_mask, beta * self.weights, self.weights)
        return w, h * self.field

    def laplacian(self, weights: np.ndarray | None = None) -> np.ndarray:
        w = self.weights if weights is None else weights
        lap = np.zeros((self.n, self.n))
        u, v = self.edges[:, 0], self.edges[:, 1]
        np.add.at(lap, (u, v), -w)
        np.add.at(lap, (v, u), -w)
        np.add.at(lap, (u, u), w)
        np.add.at(lap, (v, v), w)
        return lap

    def adjacency_lists(self) -> list[list[tuple[int, int]]]:
        """Per-vertex list of (neighbour, edge index)."""
        adj: list[list[tuple[int, int]]] = [[] for _ in range(self.n)]
        for k, (u, v) in enumerate(self.edges.tolist()):
            adj[u].append((v, k))
            adj[v].append((u, k))
        return adj

    def with_field(self, field) -> "Graph":
        return Graph(self.n, self.edges, self.weights, field, self.ghost)


def make_graph(n: int, edges, weights=None, field=None) -> Graph:
    return Graph(int(n), np.asarray(list(edges), dtype=np.int64).reshape(-1, 2), weights, field)


@dataclass(frozen=True)
class Torus:
    """The discrete torus Z^d / (L^N Z)^d with row-major vertex order."""

    d: int
    L: int
    N: int = 1

    def __post_init__(self):
        if self.d < 1 or self.L < 2 or self.N < 1:
            raise GraphError("need d >= 1, L >= 2, N >= 1")
        if self.L**self.N < 3:
            raise GraphError(f"side {self.L ** self.N} < 3 gives a multigraph torus")

    @property
    def side(self) -> int:
        return self.L**self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.d

    @property
    def volume(self) -> int:
        return self.side**self.d

    def index(self, x) -> int:
        return int(np.ravel_multi_index(tuple(np.mod(x, self.side)), self.shape))

    def coords(self, i) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unravel_index(i, self.shape))

    @cached_property
    def edges(self) -> np.ndarray:
        """Axis by axis; within an axis, lexicographic in the lower endpoint."""
        idx = np.arange(self.volume).reshape(self.shape)
        blocks = []
        for axis in range(self.d):
            nb = np.roll(idx, -1, axis=axis)
            blocks.append(np.stack([idx.ravel(), nb.ravel()], axis=1))
        return np.concatenate(blocks)

    def graph(self) -> Graph:
        return Graph(self.volume, self.edges, None, None)

    def neighbors(self, x) -> list[tuple[int, ...]]:
        x = np.asarray(x)
        out = []
        for axis in range(self.d):
            for s in (1, -1):
                y = x.copy()
                y[axis] = (y[axis] + s) % self.side
                out.append(tuple(int(c) for c in y))
        return out

    def minimal_image(self, x) -> np.ndarray:
        x = np.mod(np.asarray(x), self.side)
        return np.where(x > self.side // 2, x - self.side, x)

    def offset_grid(self) -> np.ndarray:
        """Minimal-image offsets of all vertices from 0, shape (volume, d)."""
        coords = np.indices(self.shape).reshape(self.d, -1).T
        return self.minimal_image(coords)


def distances(torus: Torus, x, y) -> tuple[int, float]:
    """(l-infinity distance, Euclidean norm) of the minimal image of ``y - x``."""
    r = torus.minimal_image(np.asarray(y) - np.asarray(x))
    return int(np.max(np.abs(r))), float(np.sqrt(np.sum(r.astype(float) ** 2)))


def build_torus(d: int, L: int, N: int = 1) -> Torus:
    return Torus(d, L, N)


def amend_with_ghost(graph: Graph, h) -> Graph:
    """Add a vertex joined to every base vertex; edge x-ghost has weight h_x."""
    if graph.ghost is not None:
        raise GraphError("graph already has a ghost vertex")
    hx = np.broadcast_to(np.asarray(h, dtype=float), (graph.n,))
    g = graph.n
    ghost_edges = np.stack([np.arange(g), np.full(g, g)], axis=1)
    return Graph(
        g + 1,
        np.concatenate([graph.edges, ghost_edges]),
        np.concatenate([graph.weights, hx]),
        np.concatenate([np.zeros(g), [0.0]]),
        ghost=g,
    )


# ---------------------------------------------------------------- small graphs


def cycle(n: int) -> Graph:
    return make_graph(n, [(i, (i + 1) % n) for i in range(n)])


def path(n: int) -> Graph:
    return make_graph(n, [(i, i + 1) for i in range(n - 1)])


def complete(n: int) -> Graph:
    return make_graph(n, itertools.combinations(range(n), 2))


def builtin_graph(name: str) -> Graph:
    """Named graphs: ``edge``, ``cN``, ``pN``, ``kN``, ``torus:d,L,N``."""
    name = name.removeprefix("builtin:").lower()
    if name == "edge":
        return path(2)
    if name.startswith("torus:"):
        d, L, N = (int(t) for t in name[6:].split(","))
        return Torus(d, L, N).graph()
    kind, num = name[0], name[1:]
    if num.isdigit():
        n = int(num)
        if kind == "c" and n >= 3:
            return cycle(n)
        if kind == "p" and n >= 1:
            return path(n)
        if kind == "k" and n >= 1:
            return complete(n)
    raise GraphError(f"unknown builtin graph {name!r}")


def connected_graphs(max_vertices: int, max_edges: int | None = None, min_vertices: int = 1):
    """All connected simple graphs up to isomorphism (networkx atlas, <= 7 vertices)."""
    import networkx as nx

    if max_vertices > 7:
        raise GraphError("the graph atlas covers at most 7 vertices")
    out = []
    for g in nx.graph_atlas_g():
        n = g.number_of_nodes()
        if n < min_vertices or n > max_vertices or not nx.is_connected(g):
            continue
        if max_edges is not None and g.number_of_edges() > max_edges:
            continue
        out.append(make_graph(n, sorted(tuple(sorted(e)) for e in g.edges())))
    return out


# ---------------------------------------------------------------- text format


def read_edgelist(path_or_text) -> Graph:
    """Parse "n m", then m lines "u v beta", then optional "h x value" lines."""
    text = path_or_text
    if isinstance(path_or_text, Path) or "\n" not in str(path_or_text):
        text = Path(path_or_text).read_text()
    lines = [ln.split("#", 1)[0].strip() for ln in str(text).splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise GraphError("empty edge list")
    n, m = (int(t) for t in lines[0].split())
    edges, weights = [], []
    fld = np.zeros(n)
    for ln in lines[1:]:
        tok = ln.split()
        if tok[0] == "h":
            fld[int(tok[1])] = float(tok[2])
        else:
            edges.append((int(tok[0]), int(tok[1])))
            weights.append(float(tok[2]) if len(tok) > 2 else 1.0)
    if len(edges) != m:
        raise GraphError(f"header says {m} edges, found {len(edges)}")
    has_h = any(ln.split()[0] == "h" for ln in lines[1:])
    return make_graph(n, edges, weights, fld if has_h else None)


def format_edgelist(graph: Graph) -> str:
    rows = [f"{graph.n} {graph.m}"]
    rows += [f"{u} {v} {w:.17g}" for (u, v), w in zip(graph.edges.tolist(), graph.weights)]
    rows += [f"h {x} {v:.17g}" for x, v in enumerate(graph.field)]
    return "\n".join(rows) + "\n"
