import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dseg.games import GameSynthesisParams, synthesize_game
from dseg.rng import make_rng
from dseg.sampling import (CHUNK, PlayerMask, Sampler, SamplerConfigError, VrStateError, VrTable,
                           masked_estimate, parse_sampler, vr_estimate)


def game(n=4, noise=0.0, seed=0):
    return synthesize_game(GameSynthesisParams(n, 3, 0.7, 0.01, seed), reg_l1=0.05, noise_std=noise)


def test_parse_sampler():
    assert parse_sampler("full", 7) == ("full", 7)
    assert parse_sampler("uniform:3", 7) == ("uniform", 3)
    assert parse_sampler("uniform", 7) == ("uniform", 1)
    assert parse_sampler("cyclic", 7) == ("cyclic", 1)
    for bad in ("uniform:x", "random"):
        with pytest.raises(SamplerConfigError):
            parse_sampler(bad, 7)


def test_invalid_batch_sizes():
    with pytest.raises(SamplerConfigError):
        Sampler("uniform", 4, 0)
    with pytest.raises(SamplerConfigError):
        Sampler("uniform", 4, 5)
    with pytest.raises(SamplerConfigError):
        Sampler("cyclic", 1)
    with pytest.raises(SamplerConfigError):
        PlayerMask((1, 1), 3)


def test_mask_scale():
    m = PlayerMask((2, 0), 6)
    assert m.selected == (0, 2) and m.scale == 3.0 and not m.is_full
    assert PlayerMask.full(4).scale == 1.0


def test_full_sampler_consumes_no_randomness():
    rng = make_rng(0)
    ref = make_rng(0).random(4)
    s = Sampler("full", 5, rng=rng)
    for _ in range(10):
        e, u = s.next_masks()
        assert e.is_full and u.is_full
    assert np.array_equal(rng.random(4), ref)


def test_uniform_single_frequencies():
    n, draws = 5, 100_000
    s = Sampler("uniform", n, 1, rng=make_rng(1))
    ids = s.take(draws)
    for step in range(2):
        freq = np.bincount(ids[:, step, 0], minlength=n) / draws
        assert np.all(np.abs(freq - 1 / n) < 0.01)


def test_uniform_subset_frequencies():
    n, b = 4, 2
    s = Sampler("uniform", n, b, rng=make_rng(2))
    ids = s.take(60_000)
    counts = Counter(tuple(r) for r in ids[:, 0])
    assert set(counts) == set(itertools.combinations(range(n), b))
    assert all(abs(c / 60_000 - 1 / 6) < 0.01 for c in counts.values())


def test_extrapolation_and_update_independent():
    s = Sampler("uniform", 3, 1, rng=make_rng(3))
    ids = s.take(90_000)[:, :, 0]
    joint = np.zeros((3, 3))
    np.add.at(joint, (ids[:, 0], ids[:, 1]), 1)
    assert np.all(np.abs(joint / 90_000 - 1 / 9) < 0.01)


@settings(max_examples=20, deadline=None)
@given(n=st.integers(2, 6), b=st.integers(1, 5), seed=st.integers(0, 1000),
       split=st.integers(1, 2 * CHUNK))
def test_draws_do_not_depend_on_request_sizes(n, b, seed, split):
    b = min(b, n - 1)
    total = 2 * CHUNK + 17
    a = Sampler("uniform", n, b, rng=make_rng(seed)).take(total)
    s = Sampler("uniform", n, b, rng=make_rng(seed))
    parts = [s.take(min(split, total))]
    while sum(len(p) for p in parts) < total:
        parts.append(s.take(min(3, total - sum(len(p) for p in parts))))
    assert np.array_equal(a, np.concatenate(parts))
    s2 = Sampler("uniform", n, b, rng=make_rng(seed))
    one = np.array([[m.selected for m in s2.next_masks()] for _ in range(40)])
    assert np.array_equal(one, a[:40])


def test_cyclic_covers_every_ordered_pair():
    n = 4
    s = Sampler("cyclic", n, rng=make_rng(5))
    m = n * (n - 1)
    seq = [tuple(x) for x in s.take(3 * m)[:, :, 0]]
    expected = {(i, j) for i in range(n) for j in range(n) if i != j}
    for p in range(3):
        block = seq[p * m:(p + 1) * m]
        assert set(block) == expected and len(block) == m
    for p in range(1, 3):
        assert seq[p * m] != seq[p * m - 1]


def test_cyclic_pairs_distinct_players():
    s = Sampler("cyclic", 3, rng=make_rng(0))
    for _ in range(20):
        e, u = s.next_masks()
        assert e.selected != u.selected


def exhaustive_mean(g, theta, b):
    n = g.n
    subsets = list(itertools.combinations(range(n), b))
    return sum(masked_estimate(g, theta, PlayerMask(s, n), make_rng(0)).values
               for s in subsets) / len(subsets)


@pytest.mark.parametrize("b", [1, 2, 3])
def test_masked_estimate_unbiased_exhaustive(b):
    g = game(4)
    theta = g.sample_domain(make_rng(0), 1)[0]
    assert np.allclose(exhaustive_mean(g, theta, b), g.simultaneous_gradient(theta), atol=1e-12)


def test_masked_estimate_zero_outside_selection():
    g = game(4)
    theta = g.layout.centers()
    est = masked_estimate(g, theta, PlayerMask((1,), 4), make_rng(0)).values
    s = g.layout.slice(1)
    assert np.count_nonzero(est[:s.start]) == 0 and np.count_nonzero(est[s.stop:]) == 0
    assert np.allclose(est[s], 4 * g.subgradient(1, theta))


def test_full_mask_equals_exact_gradient():
    g = game(4)
    theta = g.layout.centers()
    est = masked_estimate(g, theta, PlayerMask.full(4), make_rng(0)).values
    assert np.array_equal(est, g.simultaneous_gradient(theta))


@pytest.mark.parametrize("b", [1, 2])
def test_vr_estimate_unbiased_exhaustive(b):
    g = game(4)
    rng = make_rng(9)
    theta = g.sample_domain(rng, 1)[0]
    table = VrTable(rng.standard_normal(g.d))
    subsets = list(itertools.combinations(range(4), b))
    mean = sum(vr_estimate(g, theta, PlayerMask(s, 4), table, make_rng(0))[0].values
               for s in subsets) / len(subsets)
    assert np.allclose(mean, g.simultaneous_gradient(theta), atol=1e-12)


def test_vr_table_refresh_and_copy_semantics():
    g = game(3)
    theta = g.layout.centers()
    table = VrTable(np.arange(g.d, dtype=float))
    before = table.values.copy()
    est, new = vr_estimate(g, theta, PlayerMask((2,), 3), table, make_rng(0))
    assert np.array_equal(table.values, before)
    s = g.layout.slice(2)
    assert np.allclose(new.values[s], g.subgradient(2, theta))
    assert np.array_equal(new.values[:s.start], before[:s.start])
    assert np.array_equal(est.values[:s.start], before[:s.start])


def test_vr_exact_when_table_is_current():
    g = game(4)
    theta = g.sample_domain(make_rng(1), 1)[0]
    table = VrTable.initialized(g, theta, make_rng(0))
    est, _ = vr_estimate(g, theta, PlayerMask((0, 3), 4), table, make_rng(0))
    assert np.allclose(est.values, g.simultaneous_gradient(theta), atol=1e-12)


def test_vr_full_mask_matches_masked_bitwise():
    g = game(4, noise=0.5)
    theta = g.layout.centers()
    table = VrTable(np.ones(g.d))
    a, _ = vr_estimate(g, theta, PlayerMask.full(4), table, make_rng(3))
    b = masked_estimate(g, theta, PlayerMask.full(4), make_rng(3))
    assert np.array_equal(a.values, b.values)


def test_vr_requires_initialized_table():
    g = game(3)
    with pytest.raises(VrStateError):
        vr_estimate(g, g.layout.centers(), PlayerMask((0,), 3), VrTable(), make_rng(0))


def test_noisy_estimate_variance_scales_with_selection():
    g = game(4, noise=1.0)
    theta = g.layout.centers()
    rng = make_rng(4)
    draws = np.array([masked_estimate(g, theta, PlayerMask((0,), 4), rng).values[:3]
                      for _ in range(40_000)])
    assert np.allclose(draws.var(0), 16.0, rtol=0.05)
