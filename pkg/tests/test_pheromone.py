from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import line_network
from macosim.netgraph import bundled_network, generate_grid
from macosim.pheromone import (SCALE, PheromoneField, PheromoneParams, aco_deposit, evaporate, init_random,
                               maco_update, maco_update_batch)


def params(**kw) -> PheromoneParams:
    return PheromoneParams(**kw)


# -- init --------------------------------------------------------------------

def test_degenerate_init_range():
    net = generate_grid(3, 3, 100)
    f = init_random(net, params(tau_init_lo=5, tau_init_hi=5), seed=1)
    assert np.all(f.tau == 5.0) and len(f) == net.m


def test_init_deterministic():
    net = bundled_network()
    assert init_random(net, params(), 42) == init_random(net, params(), 42)
    assert init_random(net, params(), 42) != init_random(net, params(), 43)


def test_init_mean_large_field():
    net = line_network([10.0] * 10_000)
    f = init_random(net, params(tau_init_lo=0, tau_init_hi=10, tau_min=0), seed=3)
    assert abs(f.tau.mean() - 5.0) < 0.2
    assert f.tau.min() >= 0 and f.tau.max() <= 10


def test_init_prefix_stability():
    # edge e's draw depends on (seed, e) only, not on how many edges there are
    small = init_random(generate_grid(2, 2, 10), params(), 9)
    big = init_random(generate_grid(5, 5, 10), params(), 9)
    assert np.array_equal(small.levels, big.levels[: len(small)])


# -- maco update -------------------------------------------------------------

def test_single_edge_increment():
    f = maco_update(PheromoneField.from_tau([3.0]), 0, params(delta_inc=1))
    assert f.tau.tolist() == [4.0]


def test_floor_clamp():
    f = maco_update(PheromoneField.uniform(3, 0.0), 1, params(tau_min=0, tau_init_lo=0))
    assert f.tau.tolist() == [0.0, 1.0, 0.0]


def test_iterated_increment_closed_form():
    p = params(delta_inc=1, tau_max=10, tau_init_lo=1, tau_init_hi=10)
    rnd = np.random.default_rng(0)
    f = PheromoneField.from_tau(rnd.uniform(0, 10, 6).round(3))
    f = PheromoneField(np.where(np.arange(6) == 2, 3 * SCALE, f.levels))
    for k in range(1, 15):
        f = maco_update(f, 2, p)
        assert f[2] == min(3 + k, 10)


def test_invalid_edge():
    with pytest.raises(IndexError):
        maco_update(PheromoneField.uniform(3, 1.0), 3, params())


def test_update_is_pure():
    f = PheromoneField.from_tau([1.0, 2.0])
    before = f.levels.copy()
    maco_update(f, 0, params())
    assert np.array_equal(f.levels, before)
    with pytest.raises(ValueError):
        f.levels[0] = 5


def test_sibling_scope_only_touches_listed_edges():
    f = PheromoneField.from_tau([5.0, 5.0, 5.0, 5.0])
    g = maco_update(f, 1, params(delta_dec=0.5), others=[0, 1, 2])
    assert g.tau.tolist() == [4.5, 6.0, 4.5, 5.0]


def literal(levels: list[int], chosen: int, p: PheromoneParams, others) -> list[int]:
    """Reference rule in plain Python integers."""
    out = list(levels)
    dec_set = range(len(levels)) if others is None else others
    for e in dec_set:
        if e != chosen:
            out[e] = max(levels[e] - p.dec_units, p.min_units)
    out[chosen] = min(levels[chosen] + p.inc_units, p.max_units)
    return out


ops_params = st.builds(
    lambda lo, span, inc, dec: PheromoneParams(tau_init_lo=lo, tau_init_hi=lo + span, tau_min=lo / 2,
                                               tau_max=lo + span + 5, delta_inc=inc, delta_dec=dec),
    st.floats(0, 5).map(lambda x: round(x, 3)), st.floats(0, 10).map(lambda x: round(x, 3)),
    st.floats(0.001, 3).map(lambda x: round(x, 3)), st.floats(0.001, 3).map(lambda x: round(x, 3)))


@settings(max_examples=200, deadline=None)
@given(ops_params, st.integers(1, 12), st.data())
def test_batch_fold_equals_literal_network_scope(p, m, data):
    levels = data.draw(st.lists(st.integers(p.min_units, p.max_units), min_size=m, max_size=m))
    picks = data.draw(st.lists(st.integers(0, m - 1), max_size=40))
    ref = list(levels)
    f = PheromoneField(np.array(levels))
    for c in picks:
        ref = literal(ref, c, p, None)
        f = maco_update(f, c, p)
    assert f.levels.tolist() == ref
    batch = maco_update_batch(PheromoneField(np.array(levels)), [(c, None) for c in picks], p)
    assert batch.levels.tolist() == ref


@settings(max_examples=200, deadline=None)
@given(ops_params, st.integers(2, 10), st.data())
def test_batch_fold_equals_literal_sibling_scope(p, m, data):
    levels = data.draw(st.lists(st.integers(p.min_units, p.max_units), min_size=m, max_size=m))
    decisions = data.draw(st.lists(st.tuples(st.integers(0, m - 1), st.lists(st.integers(0, m - 1), unique=True)),
                                   max_size=30))
    ref = list(levels)
    for c, others in decisions:
        ref = literal(ref, c, p, others)
    batch = maco_update_batch(PheromoneField(np.array(levels)), [(c, tuple(o)) for c, o in decisions], p)
    assert batch.levels.tolist() == ref


def test_batch_rejects_mixed_scope():
    with pytest.raises(ValueError):
        maco_update_batch(PheromoneField.uniform(3, 1.0), [(0, None), (1, (0,))], params())


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 100).map(lambda x: round(x, 2)), min_size=2, max_size=8), st.data())
def test_chosen_never_loses_rank(taus, data):
    f = PheromoneField.from_tau(taus)
    c = data.draw(st.integers(0, len(taus) - 1))
    g = maco_update(f, c, params())
    for e in range(len(taus)):
        if f[c] >= f[e]:
            assert g[c] >= g[e]


# -- evaporation -------------------------------------------------------------

def test_evaporate_identity():
    f = PheromoneField.from_tau([8.0, 2.0])
    assert evaporate(f, params(rho=0)) == f


def test_evaporate_arithmetic():
    assert evaporate(PheromoneField.from_tau([8.0, 2.0]), params(rho=0.5)).tau.tolist() == [4.0, 1.0]


def test_evaporate_matches_exact_rational():
    p = params(rho=0.1, tau_min=0.5, tau_init_lo=0.5)
    f = PheromoneField.from_tau([7.123456, 0.6, 99.0])
    keep = Fraction(9, 10)
    expect = [max(int(Fraction(int(v)) * keep), p.min_units) for v in f.levels]
    assert evaporate(f, p).levels.tolist() == expect


@pytest.mark.parametrize("rho", [0.1, 0.3, 0.5])
def test_evaporation_converges_geometrically(rho):
    p = params(rho=rho)
    f = PheromoneField.from_tau([100.0, 37.5, 1.0, 0.0])
    eps = 1e-6
    # steps for 100 * (1 - rho)^k to fall under eps
    k = math.ceil(math.log(eps / 100.0) / math.log(1 - rho))
    prev = f.levels
    for _ in range(k):
        f = evaporate(f, p)
        assert np.all(f.levels <= prev)
        prev = f.levels
    assert np.all(np.abs(f.tau - p.tau_min) <= eps)


# -- ACO deposit ---------------------------------------------------------------

def test_deposit_empty_path():
    f = PheromoneField.from_tau([1.0, 2.0])
    assert aco_deposit(f, [], 100.0, params()) == f


def test_deposit_clamps():
    f = aco_deposit(PheromoneField.from_tau([1.0]), [0], 1000.0, params(aco_deposit_q=100, tau_max=100))
    assert f.tau.tolist() == [100.0]


def test_deposit_amount():
    f = aco_deposit(PheromoneField.from_tau([1.0, 1.0, 1.0]), [0, 2], 4000.0, params(tau_max=1000))
    assert f.tau.tolist() == [26.0, 1.0, 26.0]


def test_deposit_invalid_length():
    with pytest.raises(ValueError):
        aco_deposit(PheromoneField.from_tau([1.0]), [0], 0.0, params())


@settings(max_examples=150, deadline=None)
@given(st.lists(st.integers(0, 100 * SCALE), min_size=1, max_size=8), st.data(),
       st.floats(100, 50_000), st.sampled_from([0.1, 0.25, 0.5]))
def test_deposit_evaporate_order(levels, data, length, rho):
    """Deposit then evaporate never exceeds evaporate then deposit.

    Without clamps the gap on a path edge is exactly rho * deposit (up to
    flooring); off the path the two orders agree.
    """
    p = params(rho=rho, tau_max=100)
    path = data.draw(st.lists(st.integers(0, len(levels) - 1), unique=True, min_size=1))
    f = PheromoneField(np.array(levels))
    a = evaporate(aco_deposit(f, path, length, p), p)
    b = aco_deposit(evaporate(f, p), path, length, p)
    assert np.all(a.levels <= b.levels)
    dep = int(p.aco_deposit_q * 1000 * SCALE // length)
    unclamped = all(int(f.levels[e]) + dep <= p.max_units for e in path)
    if unclamped:
        gap = Fraction(rho).limit_denominator(100) * dep
        for e in path:
            assert abs((int(b.levels[e]) - int(a.levels[e])) - gap) <= 1
    diff = b.levels - a.levels
    assert np.all(diff[[e for e in range(len(levels)) if e not in path]] == 0)


# -- bounds under random operation sequences --------------------------------

def random_ops_stay_bounded(seed: int, n_ops: int = 20) -> bool:
    rnd = np.random.default_rng(seed)
    m = int(rnd.integers(1, 10))
    lo_min = float(rnd.integers(0, 3))
    p = PheromoneParams(tau_init_lo=lo_min + 1, tau_init_hi=lo_min + 5, tau_min=lo_min, tau_max=lo_min + 8,
                        delta_inc=float(rnd.uniform(0.1, 3)), delta_dec=float(rnd.uniform(0.01, 2)),
                        rho=float(rnd.uniform(0, 0.9)), decrement_scope="network")
    net = generate_grid(2, 2, 10)
    f = init_random(net, p, seed) if m >= 8 else PheromoneField(
        rnd.integers(p.min_units, p.max_units + 1, m))
    for _ in range(n_ops):
        op = rnd.integers(0, 4)
        if op == 0:
            f = maco_update(f, int(rnd.integers(0, len(f))), p)
        elif op == 1:
            f = evaporate(f, p)
        elif op == 2:
            path = rnd.choice(len(f), size=int(rnd.integers(0, len(f) + 1)), replace=False).tolist()
            f = aco_deposit(f, path, float(rnd.uniform(1, 5000)), p)
        else:
            picks = [(int(c), None) for c in rnd.integers(0, len(f), int(rnd.integers(0, 6)))]
            f = maco_update_batch(f, picks, p)
        if not (np.all(f.levels >= p.min_units) and np.all(f.levels <= p.max_units)):
            return False
    return True


def test_bounds_random_sequences_small():
    assert all(random_ops_stay_bounded(s) for s in range(500))


def test_csv_snapshot(tmp_path):
    f = PheromoneField.from_tau([1.5, 0.25])
    f.to_csv(tmp_path / "tau.csv")
    assert (tmp_path / "tau.csv").read_text().splitlines() == ["edge_id,tau", "0,1.5", "1,0.25"]


@pytest.mark.parametrize("kw", [dict(tau_init_lo=11), dict(delta_inc=0), dict(delta_dec=-1), dict(rho=1.0),
                                dict(tau_min=2, tau_init_lo=1), dict(decrement_scope="all")])
def test_invalid_params(kw):
    with pytest.raises(ValueError):
        PheromoneParams(**kw)
