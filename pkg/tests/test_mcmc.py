import numpy as np
import pytest

from arboreal.exact import ExactMeasure
from arboreal.forest import ForestState
from arboreal.lattice import Torus, cycle, make_graph, path
from arboreal.mcmc import (
    MIN_BATCHES, ChainConfig, axis_shift_tables, decay_fit, make_rng, metropolis_step, run_chain, theta_scan,
)


def test_h0_addition_ratio_is_beta():
    # P_3 holding edge 01: proposing 12 merges two trees and is accepted with probability beta
    g = path(3)
    beta = 0.37
    rng = make_rng(5)
    trials = 4000
    added = 0
    for _ in range(trials):
        s = ForestState(g, [0])
        metropolis_step(s, rng, beta, 0.0)
        added += bool(s.present[1])
    p = 0.5 * beta   # edge 12 is proposed half of the time
    assert added / trials == pytest.approx(p, abs=4 * np.sqrt(p * (1 - p) / trials))


def test_beta_zero_rejects_additions():
    g = cycle(4)
    s = ForestState(g)
    rng = make_rng(1)
    assert not any(metropolis_step(s, rng, 0.0, 0.5) for _ in range(500))
    assert not s.present.any()


def test_single_edge_flip_occupation():
    g = path(2)
    s = ForestState(g)
    rng = make_rng(2)
    occ = np.empty(64 * 1600)
    for i in range(len(occ)):
        metropolis_step(s, rng, 1.0, 0.0)
        occ[i] = s.present[0]
    batch = occ.reshape(64, -1).mean(axis=1)
    se = batch.std(ddof=1) / np.sqrt(64)
    assert abs(occ.mean() - 0.5) <= 3 * se + 1e-12


def test_config_validation():
    g = cycle(3)
    with pytest.raises(ValueError):
        ChainConfig(g, -1.0, 0.0)
    with pytest.raises(ValueError):
        ChainConfig(g, 1.0, 0.0, sweeps=10, burnin=10)
    with pytest.raises(ValueError):
        ChainConfig(g, 1.0, 0.0, batches=MIN_BATCHES - 1)
    with pytest.raises(ValueError):
        ChainConfig(g, 1.0, 0.0, sweeps=100, burnin=90)


def test_cycle3_connection():
    est = run_chain(ChainConfig(cycle(3), 1.0, 0.0, seed=7, sweeps=200_000, burnin=1000, points=(1,)))
    p = est.connection[1]
    assert abs(p.value - 4 / 7) <= 3 * p.stderr
    assert p.stderr < 0.005
    assert est.theta.value == 0.0 and est.theta.stderr == 0.0


def test_small_torus_against_enumeration():
    g = Torus(2, 3, 1).graph()
    beta, h = 0.7, 0.2
    mu = ExactMeasure(g, beta, h)
    exact_conn = mu.connection()[0]
    exact_tau = mu.connected_unrooted()[0]
    est = run_chain(ChainConfig(g, beta, h, seed=11, sweeps=60_000, burnin=2000, points=tuple(range(1, 9))))
    for x in range(1, 9):
        for got, ref in ((est.connection[x], exact_conn[x]), (est.tau[x], exact_tau[x])):
            assert abs(got.value - ref) <= 4 * got.stderr + 1e-12
    assert abs(est.theta.value - mu.ghost()[0]) <= 4 * est.theta.stderr
    assert abs(est.mean_tree_size.value - mu.mean_tree_size()[0]) <= 4 * est.mean_tree_size.stderr


def test_sigma_against_enumeration():
    g = cycle(4)
    beta, h = 1.2, 0.5
    mu = ExactMeasure(g, beta, h)
    est = run_chain(ChainConfig(g, beta, h, seed=3, sweeps=100_000, burnin=1000, points=(2,)))
    ref = mu.none_rooted_apart()
    unr = 1 - mu.ghost()
    sigma_ref = unr[0] ** 2 - ref[0, 2]
    assert abs(est.sigma[2].value - sigma_ref) <= 4 * est.sigma[2].stderr + 1e-12


def test_mean_size_is_sum_of_connections():
    g = Torus(2, 3, 1).graph()
    est = run_chain(ChainConfig(g, 0.9, 0.1, seed=4, sweeps=5000, burnin=100, points=tuple(range(g.n))))
    assert int(est.connection_counts.sum()) == est.size_total
    assert est.size_total == int(np.dot(np.arange(len(est.size_histogram)), est.size_histogram))
    assert sum(e.value for e in est.connection.values()) == pytest.approx(est.mean_tree_size.value, rel=1e-12)


def test_seed_determinism():
    g = Torus(2, 4, 1).graph()
    cfg = ChainConfig(g, 1.1, 0.3, seed=99, sweeps=3000, burnin=300, points=(1, 5))
    a, b = run_chain(cfg), run_chain(cfg)
    assert a.rows() == b.rows()
    assert np.array_equal(a.size_histogram, b.size_histogram)
    c = run_chain(ChainConfig(g, 1.1, 0.3, seed=100, sweeps=3000, burnin=300, points=(1, 5)))
    assert c.rows() != a.rows()


def test_stderr_shrinks_like_inverse_sqrt():
    g = Torus(2, 4, 1).graph()
    short = run_chain(ChainConfig(g, 0.8, 0.2, seed=8, sweeps=8_000, burnin=500, points=(1,)))
    long = run_chain(ChainConfig(g, 0.8, 0.2, seed=8, sweeps=32_500, burnin=500, points=(1,)))
    ratio = short.connection[1].stderr / long.connection[1].stderr
    assert 1.3 < ratio < 3.0


def test_chain_rejects_ghost_graph():
    from arboreal.lattice import amend_with_ghost
    with pytest.raises(ValueError):
        run_chain(ChainConfig(amend_with_ghost(cycle(3), 1.0), 1.0, 0.5))


def test_estimates_in_unit_interval():
    g = make_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)])
    est = run_chain(ChainConfig(g, 2.0, 0.4, seed=1, sweeps=4000, burnin=100, points=(1, 3)))
    for name, _, e in est.rows():
        if name != "mean_tree_size":
            assert -1e-12 <= e.value <= 1 + 1e-12
    assert 0 < est.acceptance < 1


def test_axis_shift_tables():
    t = Torus(2, 4, 1)
    tab = axis_shift_tables(t, [1, 2])
    assert tab.shape == (2, 2, 16)
    assert tab[0, 0, t.index((3, 1))] == t.index((0, 1))
    assert tab[1, 1, t.index((2, 3))] == t.index((2, 1))


def test_theta_scan_requires_field():
    with pytest.raises(ValueError):
        theta_scan(2, 4, [1.0], 0.0, 100)


def test_theta_scan_small():
    pts = theta_scan(2, 4, [0.1, 3.0], 0.5, 2000, seed=1)
    assert pts[0].theta < pts[1].theta


def test_decay_cycle():
    fit = decay_fit(1, 64, 1.0, 1.0, sweeps=4000, seed=2)
    assert not fit.flagged and fit.slope < 0


def test_decay_flagged_without_signal():
    fit = decay_fit(1, 64, 0.01, 5.0, radii=range(4, 8), sweeps=500, seed=1)
    assert fit.flagged


def test_subcritical_decay_at_zero_field():
    # Bernoulli bond percolation with p = beta/(1+beta) < 1/2 dominates the forest
    fit = decay_fit(2, 16, 0.3, 0.0, radii=range(1, 5), sweeps=4000, seed=5)
    v = fit.estimates
    assert all(a > b for a, b in zip(v, v[1:]))


@pytest.mark.slow
def test_two_dimensions_below_three_at_matched_beta():
    d2 = theta_scan(2, 64, [8.0], 0.02, 1000, seed=3)[0]
    d3 = theta_scan(3, 12, [8.0], 0.02, 1000, seed=3)[0]
    assert d2.theta < d3.theta
