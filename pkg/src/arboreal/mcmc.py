"""Metropolis single-edge sampler for the arboreal gas.

The state is a spanning forest of the base graph; the ghost vertex is
integrated out, so a tree T with field sum F_T = h sum_{x in T} field_x
is rooted with probability F_T / (1 + F_T).  Observables use that
reweighting:

    theta_hat  = mean F_0 / (1 + F_0)
    tau_hat(x) = mean 1{0 <-> x} / (1 + F_0)
    P[0 !<-> g] = mean 1 / (1 + F_0)
    P[0 !<-> x, 0 !<-> g, x !<-> g] = mean 1{0 !<-> x} / ((1 + F_0)(1 + F_x))

Error bars are batch means over a fixed number of batches.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .forest import ForestState, _commit_merge, _commit_split, _side_field, _split_search, csr_adjacency
from .lattice import Graph, Torus

MIN_BATCHES = 32


@dataclass(frozen=True)
class ChainConfig:
    graph: Graph
    beta: float
    h: float
    seed: int = 0
    sweeps: int = 10_000
    burnin: int = 1_000
    stride: int = 1
    origin: int = 0
    points: tuple = ()              # vertices x for P[0<->x], tau(x), sigma(x)
    profile_shifts: np.ndarray | None = None   # (R, k, n) neighbour tables for decay profiles
    batches: int = 64

    def __post_init__(self):
        if not (self.beta >= 0 and self.h >= 0):
            raise ValueError("need beta >= 0 and h >= 0")
        if self.sweeps <= self.burnin:
            raise ValueError("sweeps must exceed burn-in")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.batches < MIN_BATCHES:
            raise ValueError(f"need at least {MIN_BATCHES} batches")
        if (self.sweeps - self.burnin) // self.stride < self.batches:
            raise ValueError("fewer measurements than batches")
        if not 0 <= self.origin < self.graph.n:
            raise ValueError("origin out of range")


@dataclass
class Estimate:
    value: float
    stderr: float


@dataclass
class EstimatorSet:
    config: ChainConfig
    batches: int
    measurements: int
    theta: Estimate
    unrooted: Estimate                    # P[0 !<-> g]
    mean_tree_size: Estimate
    connection: dict[int, Estimate]
    tau: dict[int, Estimate]
    sigma: dict[int, Estimate]
    profile: list[Estimate]
    size_histogram: np.ndarray
    connection_counts: np.ndarray         # integer counts of 0 <-> x per point
    size_total: int                       # integer sum of |T_0| over measurements
    acceptance: float
    extra: dict = field(default_factory=dict)

    def rows(self):
        """(observable, argument, estimate, stderr) in a fixed order."""
        out = [("theta", "", self.theta), ("unrooted", "", self.unrooted), ("mean_tree_size", "", self.mean_tree_size)]
        for name, table in (("connection", self.connection), ("tau", self.tau), ("sigma", self.sigma)):
            out += [(name, str(x), est) for x, est in table.items()]
        out += [("profile", str(r + 1), est) for r, est in enumerate(self.profile)]
        return out


# ------------------------------------------------------------------ kernels


@nb.njit(cache=True)
def _mh_step(e, U, we, h, edges, ptr, nbr, eid, field, present, label, size, fsum, free, free_top,
             qa, qb, mark, stamp):
    u = edges[e, 0]
    v = edges[e, 1]
    if present[e]:
        if h == 0.0:
            # ratio 1 / we does not depend on the split; decide before searching
            if not (U * we < 1.0):
                return False
            side, count = _split_search(e, edges, ptr, nbr, eid, present, qa, qb, mark, stamp)
            q = qa if side == 0 else qb
            _commit_split(e, side, count, qa, qb, present, label, size, fsum, free, free_top,
                          _side_field(q, count, field))
            return True
        side, count = _split_search(e, edges, ptr, nbr, eid, present, qa, qb, mark, stamp)
        q = qa if side == 0 else qb
        sub = _side_field(q, count, field)
        A = h * sub
        B = h * (fsum[label[u]] - sub)
        num = we * (1.0 + A + B)
        den = (1.0 + A) * (1.0 + B)
        if U * num < den:
            _commit_split(e, side, count, qa, qb, present, label, size, fsum, free, free_top, sub)
            return True
        return False
    lu = label[u]
    lv = label[v]
    if lu == lv:
        return False
    A = h * fsum[lu]
    B = h * fsum[lv]
    if U * (1.0 + A) * (1.0 + B) < we * (1.0 + A + B):
        _commit_merge(e, edges, ptr, nbr, eid, present, label, size, fsum, free, free_top, qa, mark, stamp)
        return True
    return False


@nb.njit(cache=True)
def _measure(row, origin, points, shifts, h, label, size, fsum, conn_counts, hist):
    """Fill one measurement row; returns |T_0|."""
    l0 = label[origin]
    s0 = size[l0]
    F0 = h * fsum[l0]
    w0 = 1.0 / (1.0 + F0)
    row[0] = F0 * w0
    row[1] = w0
    row[2] = s0
    hist[s0] += 1
    k = 3
    for i in range(len(points)):
        x = points[i]
        lx = label[x]
        if lx == l0:
            conn_counts[i] += 1
            row[k] = 1.0
            row[k + 1] = w0
            row[k + 2] = 0.0
        else:
            row[k] = 0.0
            row[k + 1] = 0.0
            row[k + 2] = w0 / (1.0 + h * fsum[lx])
        k += 3
    n = label.shape[0]
    for r in range(shifts.shape[0]):
        hits = 0
        for a in range(shifts.shape[1]):
            for y in range(n):
                if label[y] == label[shifts[r, a, y]]:
                    hits += 1
        row[k] = hits / (shifts.shape[1] * n)
        k += 1
    return s0


@nb.njit(cache=True)
def _run_block(n_sweeps, sweep0, burnin, stride, per_batch, n_batches, uniforms, wts, h,
               edges, ptr, nbr, eid, field, present, label, size, fsum, free, free_top, qa, qb, mark, stamp,
               origin, points, shifts, sums, row, conn_counts, hist, totals):
    """Run ``n_sweeps`` sweeps; totals = [accepted, proposals, measurements, size_sum]."""
    m = edges.shape[0]
    p = 0
    for s in range(n_sweeps):
        for _ in range(m):
            e = int(uniforms[p] * m)
            if e == m:
                e = m - 1
            U = uniforms[p + 1]
            p += 2
            if _mh_step(e, U, wts[e], h, edges, ptr, nbr, eid, field, present, label, size, fsum,
                        free, free_top, qa, qb, mark, stamp):
                totals[0] += 1
            totals[1] += 1
        g = sweep0 + s + 1
        if g > burnin and (g - burnin) % stride == 0:
            k = totals[2]
            b = k // per_batch
            if b < n_batches:
                totals[3] += _measure(row, origin, points, shifts, h, label, size, fsum, conn_counts, hist)
                for i in range(row.shape[0]):
                    sums[b, i] += row[i]
                totals[2] += 1


# ------------------------------------------------------------------ public API


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; one independent stream per seed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def metropolis_step(state: ForestState, rng: np.random.Generator, beta: float, h: float) -> bool:
    """Propose toggling a uniform base edge and accept with the Metropolis rule."""
    g = state.graph
    w, _ = g.effective(beta, h)
    base = np.flatnonzero(g.base_edge_mask)
    e = int(base[rng.integers(len(base))])
    return bool(_mh_step(
        e, rng.random(), float(w[e]), float(h), state._edges, state._ptr, state._nbr, state._eid,
        state._field, state.present, state.label, state.size, state.fsum, state.free, state.free_top,
        state._qa, state._qb, state._mark, state._stamp,
    ))


def _batch_estimate(batch_means: np.ndarray) -> Estimate:
    nb_ = len(batch_means)
    return Estimate(float(np.mean(batch_means)), float(np.std(batch_means, ddof=1) / np.sqrt(nb_)))


def run_chain(config: ChainConfig, initial: ForestState | None = None) -> EstimatorSet:
    g = config.graph
    if g.ghost is not None:
        raise ValueError("the sampler integrates the ghost out; pass the base graph")
    state = initial if initial is not None else ForestState(g)
    w, _ = g.effective(config.beta, config.h)
    wts = np.ascontiguousarray(w, dtype=float)
    points = np.asarray(config.points, dtype=np.int64).reshape(-1)
    shifts = (np.zeros((0, 1, g.n), dtype=np.int64) if config.profile_shifts is None
              else np.ascontiguousarray(config.profile_shifts, dtype=np.int64))
    ncols = 3 + 3 * len(points) + shifts.shape[0]
    n_meas = (config.sweeps - config.burnin) // config.stride
    per_batch = n_meas // config.batches
    sums = np.zeros((config.batches, ncols))
    row = np.zeros(ncols)
    conn_counts = np.zeros(len(points), dtype=np.int64)
    hist = np.zeros(g.n + 1, dtype=np.int64)
    totals = np.zeros(4, dtype=np.int64)
    rng = make_rng(config.seed)
    m = g.m
    chunk = max(1, (1 << 20) // max(1, 2 * m))
    done = 0
    while done < config.sweeps:
        k = min(chunk, config.sweeps - done)
        if m:
            uniforms = rng.random(2 * m * k)
        else:
            uniforms = np.zeros(0)
        _run_block(k, done, config.burnin, config.stride, per_batch, config.batches, uniforms, wts,
                   float(config.h), state._edges, state._ptr, state._nbr, state._eid, state._field,
                   state.present, state.label, state.size, state.fsum, state.free, state.free_top,
                   state._qa, state._qb, state._mark, state._stamp, config.origin, points, shifts,
                   sums, row, conn_counts, hist, totals)
        done += k
    means = sums / per_batch
    col = 3
    conn, tau, sigma = {}, {}, {}
    unrooted_b = means[:, 1]
    for x in points.tolist():
        conn[x] = _batch_estimate(means[:, col])
        tau[x] = _batch_estimate(means[:, col + 1])
        sigma[x] = _batch_estimate(unrooted_b**2 - means[:, col + 2])
        col += 3
    profile = [_batch_estimate(means[:, col + r]) for r in range(shifts.shape[0])]
    return EstimatorSet(
        config=config,
        batches=config.batches,
        measurements=int(totals[2]),
        theta=_batch_estimate(means[:, 0]),
        unrooted=_batch_estimate(unrooted_b),
        mean_tree_size=_batch_estimate(means[:, 2]),
        connection=conn,
        tau=tau,
        sigma=sigma,
        profile=profile,
        size_histogram=hist,
        connection_counts=conn_counts,
        size_total=int(totals[3]),
        acceptance=float(totals[0] / max(1, totals[1])),
        extra={"state": state},
    )


# ------------------------------------------------------------------ experiments


@dataclass(frozen=True)
class ThetaPoint:
    beta: float
    theta: float
    stderr: float
    mean_tree_size: float
    acceptance: float


def _theta_job(args):
    d, side, beta, h, sweeps, burnin, seed, batches = args
    g = Torus(d, side, 1).graph()
    est = run_chain(ChainConfig(g, beta, h, seed=seed, sweeps=sweeps, burnin=burnin, batches=batches))
    return ThetaPoint(beta, est.theta.value, est.theta.stderr, est.mean_tree_size.value, est.acceptance)


def theta_scan(d: int, side: int, betas, h: float, sweeps: int, *, burnin: int | None = None,
               seed: int = 0, batches: int = 32, workers: int = 1) -> list[ThetaPoint]:
    """theta_hat(beta) on the torus of the given side, one independent chain per beta."""
    if h <= 0:
        raise ValueError("theta scan needs h > 0")
    burnin = sweeps // 5 if burnin is None else burnin
    seeds = np.random.SeedSequence(seed).generate_state(len(betas)).tolist()
    jobs = [(d, side, float(b), h, sweeps, burnin, s, batches) for b, s in zip(betas, seeds)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_theta_job, jobs))
    return [_theta_job(j) for j in jobs]


def axis_shift_tables(torus: Torus, radii) -> np.ndarray:
    """shifts[r, a, y] = index of y + radii[r] e_a on the torus."""
    idx = np.arange(torus.volume).reshape(torus.shape)
    out = np.empty((len(radii), torus.d, torus.volume), dtype=np.int64)
    for i, r in enumerate(radii):
        for a in range(torus.d):
            out[i, a] = np.roll(idx, -int(r), axis=a).ravel()
    return out


@dataclass(frozen=True)
class DecayFit:
    slope: float
    intercept: float
    r2: float
    radii: tuple
    estimates: tuple
    stderr: tuple
    flagged: bool            # too few radii above the noise floor for a fit


def decay_fit(d: int, side: int, beta: float, h: float, radii=range(1, 7), *, sweeps: int = 20_000,
              burnin: int | None = None, seed: int = 0, batches: int = 32) -> DecayFit:
    """Least-squares fit of log P[0 <-> r e_1] against r (translation and axis averaged)."""
    radii = tuple(int(r) for r in radii)
    torus = Torus(d, side, 1)
    burnin = sweeps // 5 if burnin is None else burnin
    est = run_chain(ChainConfig(torus.graph(), beta, h, seed=seed, sweeps=sweeps, burnin=burnin,
                                batches=batches, profile_shifts=axis_shift_tables(torus, radii)))
    vals = np.array([e.value for e in est.profile])
    errs = np.array([e.stderr for e in est.profile])
    usable = vals > np.maximum(2.0 * errs, 0.0)
    usable &= vals > 0
    if usable.sum() < 2:
        return DecayFit(float("nan"), float("nan"), float("nan"), radii, tuple(vals), tuple(errs), True)
    x = np.asarray(radii, dtype=float)[usable]
    y = np.log(vals[usable])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return DecayFit(float(slope), float(intercept), float(r2), radii, tuple(vals), tuple(errs), False)
