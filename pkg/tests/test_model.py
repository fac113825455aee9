import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cutoff_lab.lattice import SpinConfiguration, build_torus
from cutoff_lab.model import (ModelSpec, check_detailed_balance, flip_rate,
                              gibbs_log_weight, gibbs_table, order_extremes,
                              parity_mask, partial_order_leq)


def test_model_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec("potts", 0.4)
    with pytest.raises(ValueError):
        ModelSpec("ising_ferro", -0.1)
    with pytest.raises(ValueError):
        ModelSpec("hardcore", 1.0, h=0.3)
    with pytest.raises(ValueError):
        ModelSpec("ising_ferro", 0.4, rate_rule="glauber")


def test_gibbs_log_weight_explicit_formula():
    g = build_torus([4])
    m = ModelSpec("ising_ferro", 0.3, h=0.1)
    x = SpinConfiguration.from_array(np.array([1, 1, -1, 1], dtype=np.int8))
    s = x.to_array().astype(float)
    edges = sum(s[v] * s[(v + 1) % 4] for v in range(4))
    want = 0.3 * edges + 0.1 * s.sum()
    assert math.isclose(gibbs_log_weight(m, g, x), want, rel_tol=1e-12)


def test_hardcore_excludes_adjacent_occupied():
    g = build_torus([4])
    m = ModelSpec("hardcore", 1.5)
    bad = SpinConfiguration.from_array(np.array([1, 1, -1, -1], dtype=np.int8))
    ok = SpinConfiguration.from_array(np.array([1, -1, 1, -1], dtype=np.int8))
    assert gibbs_log_weight(m, g, bad) is None
    assert gibbs_log_weight(m, g, ok) is not None
    table = gibbs_table(m, g)
    assert table.probs[bad.bits] == 0.0
    assert table.probs[ok.bits] > 0.0


def test_gibbs_table_normalized():
    g = build_torus([3, 3])
    for m in (ModelSpec("ising_ferro", 0.25, 0.1),
              ModelSpec("ising_antiferro", 0.7),
              ModelSpec("hardcore", 2.0)):
        table = gibbs_table(m, g)
        assert math.isclose(table.probs.sum(), 1.0, rel_tol=1e-12)


def test_heat_bath_rates_sum_to_one():
    g = build_torus([5])
    m = ModelSpec("ising_ferro", 0.6, h=-0.2)
    x = SpinConfiguration.from_array(
        np.array([1, -1, 1, 1, -1], dtype=np.int8))
    for v in range(5):
        c_stay = flip_rate(m, g, x, v)
        c_flip = flip_rate(m, g, x.flip(v), v)
        assert math.isclose(c_stay + c_flip, 1.0, rel_tol=1e-12)


def test_metropolis_rate_is_capped():
    g = build_torus([5])
    m = ModelSpec("ising_ferro", 0.6, rate_rule="metropolis")
    for bits in range(32):
        x = SpinConfiguration(5, bits)
        for v in range(5):
            r = flip_rate(m, g, x, v)
            assert 0.0 <= r <= 1.0


@settings(max_examples=12, deadline=None)
@given(family=st.sampled_from(["ising_ferro", "ising_antiferro", "hardcore"]),
       rule=st.sampled_from(["heat_bath", "metropolis"]),
       beta=st.floats(0.05, 1.5),
       n=st.integers(4, 8))
def test_detailed_balance_random_instances(family, rule, beta, n):
    m = ModelSpec(family, beta, rate_rule=rule)
    assert check_detailed_balance(m, build_torus([n])) < 1e-12


def test_parity_mask_alternates():
    g = build_torus([4, 6])
    mask = parity_mask(g)
    coords = g.coords_array()
    assert np.all(mask == np.where(coords.sum(axis=1) % 2 == 0, 1, -1))
    with pytest.raises(ValueError):
        parity_mask(build_torus([5, 4]))


def test_partial_order_plain_and_masked():
    a = np.array([-1, -1, 1, -1], dtype=np.int8)
    b = np.array([1, -1, 1, 1], dtype=np.int8)
    assert partial_order_leq(a, b)
    assert not partial_order_leq(b, a)
    mask = np.array([1, -1, 1, -1], dtype=np.int8)
    lo = np.array([-1, 1, -1, 1], dtype=np.int8)
    hi = np.array([1, -1, 1, -1], dtype=np.int8)
    assert partial_order_leq(lo, hi, mask)
    assert not partial_order_leq(hi, lo, mask)


def test_order_extremes_bound_everything():
    g = build_torus([4, 4])
    m = ModelSpec("hardcore", 1.0)
    mask = parity_mask(g)
    bot, top = order_extremes(m, g)
    assert partial_order_leq(bot, top, mask)
    empty = -np.ones(g.n_sites, dtype=np.int8)
    assert partial_order_leq(bot, empty, mask)
    assert partial_order_leq(empty, top, mask)


def test_is_monotone_rules():
    g_even = build_torus([4, 4])
    g_odd = build_torus([5])
    assert ModelSpec("ising_ferro", 0.4).is_monotone(g_odd)
    assert not ModelSpec("ising_ferro", 0.4,
                         rate_rule="metropolis").is_monotone(g_odd)
    assert ModelSpec("ising_antiferro", 0.4).is_monotone(g_even)
    assert not ModelSpec("ising_antiferro", 0.4).is_monotone(g_odd)
    assert ModelSpec("hardcore", 1.0).is_monotone(g_even)
