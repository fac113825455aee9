import math

import numpy as np
import pytest

from cutoff_lab.estimators import (FitRefused, XiCurve, gap_from_xi,
                                   mixing_profile, ssm_decay_fit,
                                   stationary_sample,
                                   tv_lower_via_statistic,
                                   tv_upper_via_coalescence, xi_t_curve)
from cutoff_lab.lattice import build_torus
from cutoff_lab.model import ModelSpec
from cutoff_lab.oracle import (build_generator, heat_kernel_row,
                               spectral_data, tv_distance, worst_start_tv)


def _synthetic_curve(rate, grid):
    grid = np.asarray(grid, dtype=np.float64)
    return XiCurve(grid, np.exp(-rate * grid), np.zeros_like(grid),
                   replicas=0, origin=0, wrap_ok=True)


def test_synthetic_rate_recovered_exactly():
    grid = np.linspace(0.25, 16.0, 64)
    fit = gap_from_xi(_synthetic_curve(0.37, grid))
    assert abs(fit.rate - 0.37) < 1e-12
    assert fit.resid_rms < 1e-12
    assert fit.n_points >= 4


def test_gap_fit_refusals():
    grid = np.linspace(0.5, 4.0, 6)
    noise = XiCurve(grid, np.full(6, 1e-6), np.full(6, 1e-3),
                    replicas=0, origin=0, wrap_ok=True)
    with pytest.raises(FitRefused):
        gap_from_xi(noise)
    with pytest.raises(FitRefused):
        gap_from_xi(_synthetic_curve(0.5, grid), window=(100.0, 200.0))
    flat = XiCurve(grid, np.full(6, 0.5), np.zeros(6),
                   replicas=0, origin=0, wrap_ok=True)
    with pytest.raises(FitRefused):
        gap_from_xi(flat)


def test_xi_curve_shape_and_determinism():
    g = build_torus([10])
    m = ModelSpec("ising_ferro", 0.3)
    grid = np.linspace(0.5, 6.0, 8)
    c1 = xi_t_curve(m, g, grid, replicas=2000, seed=12)
    c2 = xi_t_curve(m, g, grid, replicas=2000, seed=12)
    assert np.array_equal(c1.xi, c2.xi) and np.array_equal(c1.se, c2.se)
    assert np.all(c1.xi >= 0) and np.all(c1.xi <= 1)
    for i in range(7):
        slack = 2 * (c1.se[i] + c1.se[i + 1])
        assert c1.xi[i + 1] <= c1.xi[i] + slack


def test_upper_curve_is_survival_function():
    g = build_torus([12])
    m = ModelSpec("ising_ferro", 0.35)
    curve = tv_upper_via_coalescence(m, g, np.linspace(0.5, 14.0, 12),
                                     replicas=600, seed=9)
    assert np.all(np.diff(curve.upper) <= 0)
    assert np.all((curve.upper >= 0) & (curve.upper <= 1))
    finite = np.isfinite(curve.taus)
    want = (curve.taus[finite] > curve.grid[3]).sum() / 600
    extra = (~finite).sum() / 600
    assert abs(curve.upper[3] - (want + extra)) < 1e-12
    with pytest.raises(ValueError):
        tv_upper_via_coalescence(ModelSpec("ising_ferro", 0.3,
                                           rate_rule="metropolis"),
                                 g, [1.0], 10, 0)


def test_magnetization_lower_near_time_zero():
    g = build_torus([10])
    m = ModelSpec("ising_ferro", 0.3)
    curve = tv_lower_via_statistic(m, g, [0.05, 1.0, 30.0], replicas=1500,
                                   seed=21)
    assert curve.lower[0] > 0.9
    assert curve.lower[-1] < 0.15
    assert np.all(curve.lower <= 1.0)


def test_single_tile_lower_is_unbiased_for_exact_tv():
    """The whole-torus product statistic estimates the exact top-start
    total variation; across seeds the estimate should stay within noise
    of the oracle value at every grid time."""
    g = build_torus([6])
    m = ModelSpec("ising_ferro", 0.3)
    gen = build_generator(m, g)
    sd = spectral_data(gen)
    top_index = gen.state_index((1 << 6) - 1)
    grid = np.array([0.5, 1.0, 2.0])
    exact = np.array([tv_distance(heat_kernel_row(sd, top_index, t), gen.mu)
                      for t in grid])
    hits = 0
    for s in range(100):
        curve = tv_lower_via_statistic(m, g, grid, replicas=400, seed=s,
                                       mode="product_blocks", block_period=6)
        se = np.maximum(curve.se, 1.0 / 400)
        if np.all(np.abs(curve.lower - exact) <= 3 * se):
            hits += 1
    assert hits >= 95, f"only {hits}/100 seeds within 3 standard errors"


def test_mixing_profile_brackets_and_consistency():
    g = build_torus([16])
    m = ModelSpec("ising_ferro", 0.3)
    prof = mixing_profile(m, g, replicas=800, seed=6)
    assert prof.n_sites == 16
    assert prof.consistency_margin() >= 0
    lo, hi = prof.brackets[0.25]
    assert 0 < lo <= hi < math.inf
    assert prof.ratio_quarter_three_quarter >= 1.0
    assert prof.normalized_location == pytest.approx(lo / math.log(16))


def test_mixing_bracket_contains_exact_threshold_time():
    g = build_torus([8])
    m = ModelSpec("ising_ferro", 0.0)
    gen = build_generator(m, g)
    sd = spectral_data(gen)
    lo_t, hi_t = 0.0, 50.0
    for _ in range(60):
        mid = 0.5 * (lo_t + hi_t)
        if worst_start_tv(sd, mid)[0] > 0.25:
            lo_t = mid
        else:
            hi_t = mid
    t_exact = 0.5 * (lo_t + hi_t)
    prof = mixing_profile(m, g, replicas=3000, seed=14)
    lo, hi = prof.brackets[0.25]
    assert lo <= t_exact <= hi, (lo, t_exact, hi)


def test_ssm_oracle_fit_decays():
    g = build_torus([10])
    m = ModelSpec("ising_ferro", 0.4)
    fit = ssm_decay_fit(m, g, [0], mode="oracle")
    assert fit.c2 > 0 and fit.c1 > 0
    assert fit.mode == "oracle"
    assert np.all(fit.influence >= 0)
    assert fit.influence[0] > fit.influence[-1]


def test_ssm_refuses_at_infinite_temperature():
    g = build_torus([10])
    with pytest.raises(FitRefused):
        ssm_decay_fit(ModelSpec("ising_ferro", 0.0), g, [0], mode="oracle")


def test_stationary_sample_methods_agree():
    g = build_torus([5])
    m = ModelSpec("ising_ferro", 0.4)
    a = stationary_sample(m, g, 4000, seed=1, method="oracle")
    b = stationary_sample(m, g, 1200, seed=2, method="cftp")
    assert set(np.unique(a)) <= {-1, 1} and set(np.unique(b)) <= {-1, 1}
    bits_a = (a > 0) @ (1 << np.arange(5))
    bits_b = (b > 0) @ (1 << np.arange(5))
    pa = np.bincount(bits_a, minlength=32) / len(bits_a)
    pb = np.bincount(bits_b, minlength=32) / len(bits_b)
    assert tv_distance(pa, pb) < 0.08
    with pytest.raises(ValueError):
        stationary_sample(m, g, 10, seed=0, method="bogus")
