"""Monte Carlo mixing estimators: coalescence upper bounds, distinguishing
statistic lower bounds, influence-decay rate fits, and spatial mixing fits.

All estimators draw through the seed discipline in rng.py: a run is a pure
function of (instance, parameters, seed). Batched replays share fixed-size
chunks whose layout depends only on the instance and horizon, never on
worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .dynamics import batch_event_arrays, cftp_sample, kernel_params
from .lattice import CapExceeded, SpinConfiguration, TorusGeometry, build_torus
from .model import GIBBS_CAP, ModelSpec, gibbs_table, order_extremes
from .oracle import (ORACLE_CAP, build_generator, heat_kernel_row,
                     projected_law, spectral_data)
from .rng import child_rng, derive_seed

CHUNK_EVENT_BUDGET = 1 << 22


class FitRefused(RuntimeError):
    """A decay fit declined to report a rate; the message says why."""


def _chunk_plan(g: TorusGeometry, t_end: float, replicas: int) -> list[int]:
    """Replica chunk sizes: a deterministic function of the instance and
    horizon only, so reruns with the same seed reproduce every draw."""
    expected = max(1.0, g.n_sites * t_end)
    per = int(np.clip(CHUNK_EVENT_BUDGET // int(expected), 1, 4096))
    sizes = []
    left = replicas
    while left > 0:
        take = min(per, left)
        sizes.append(take)
        left -= take
    return sizes


def _run_chunks(fn, n_chunks: int, workers: int) -> list:
    if workers <= 1 or n_chunks <= 1:
        return [fn(i) for i in range(n_chunks)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_chunks)))


@dataclass(frozen=True)
class CoalescenceCurve:
    """P(extreme chains not yet coalesced) over a grid; a TV upper bound."""

    grid: np.ndarray
    upper: np.ndarray
    se: np.ndarray
    taus: np.ndarray
    replicas: int


def tv_upper_via_coalescence(m: ModelSpec, g: TorusGeometry, grid, replicas: int,
                             seed: int, workers: int = 1) -> CoalescenceCurve:
    """Coupled extreme chains per replica; the survival curve of the
    coalescence time dominates worst-start total variation pointwise."""
    if not m.is_monotone(g):
        raise ValueError("coalescence bounds require a monotone instance")
    grid = np.asarray(sorted(grid), dtype=np.float64)
    t_end = float(grid[-1])
    fam, rule, jb, h, beta = kernel_params(m)
    bot, top = order_extremes(m, g)
    nbr = g.neighbor_table()
    plan = _chunk_plan(g, t_end, replicas)

    def one(i):
        offs, times, sites, us = batch_event_arrays(g, t_end, seed, plan[i], stream=i)
        return _kernels.coalescence_batch(offs, times, sites, us, nbr,
                                          bot, top, fam, rule, jb, h, beta)

    taus = np.concatenate(_run_chunks(one, len(plan), workers))
    taus = np.where(taus < 0, np.inf, taus)
    upper = np.array([(taus > t).mean() for t in grid])
    se = np.sqrt(upper * (1 - upper) / replicas)
    return CoalescenceCurve(grid, upper, se, taus, replicas)


def stationary_sample(m: ModelSpec, g: TorusGeometry, n_samples: int, seed: int,
                      method: str = "auto") -> np.ndarray:
    """(n_samples, n_sites) stationary draws: exact enumeration sampling for
    small systems, coupling from the past otherwise.

    Auto mode switches to CFTP well below the hard enumeration cap:
    tabulating 2^n configurations costs ~2^n * n bytes, which near the
    cap is hundreds of megabytes for a one-shot sampling table.
    """
    if method == "auto":
        method = "oracle" if g.n_sites <= min(GIBBS_CAP, 18) else "cftp"
    if method == "oracle":
        table = gibbs_table(m, g)
        rng = child_rng(seed, 10)
        picks = rng.choice(len(table.probs), size=n_samples, p=table.probs)
        states = table.support_states[picks]
        out = np.empty((n_samples, g.n_sites), dtype=np.int8)
        for v in range(g.n_sites):
            out[:, v] = np.where((states >> v) & 1, 1, -1)
        return out
    if method == "cftp":
        out = np.empty((n_samples, g.n_sites), dtype=np.int8)
        for r in range(n_samples):
            out[r] = cftp_sample(m, g, derive_seed(seed, 11, r)).to_array()
        return out
    raise ValueError(f"unknown stationary sampling method: {method}")


@dataclass(frozen=True)
class LowerCurve:
    """Distinguishing-statistic TV lower bound over a grid."""

    grid: np.ndarray
    lower: np.ndarray
    se: np.ndarray
    mode: str
    detail: dict = field(default_factory=dict, compare=False)


def _binned_tv(chain_bins, stat_bins, n_bins) -> float:
    pc = np.bincount(chain_bins, minlength=n_bins) / len(chain_bins)
    ps = np.bincount(stat_bins, minlength=n_bins) / len(stat_bins)
    return 0.5 * float(np.abs(pc - ps).sum())


def _magnetization_lower(m, g, grid, replicas, seed, stationary, workers):
    t_end = float(grid[-1])
    fam, rule, jb, h, beta = kernel_params(m)
    _, top = order_extremes(m, g)
    nbr = g.neighbor_table()
    plan = _chunk_plan(g, t_end, replicas)

    def one(i):
        offs, times, sites, us = batch_event_arrays(g, t_end, seed, plan[i], stream=i)
        return _kernels.mag_grid_batch(offs, times, sites, us, nbr, grid,
                                       top, fam, rule, jb, h, beta)

    mags = np.vstack(_run_chunks(one, len(plan), workers))
    stat_states = stationary_sample(m, g, replicas, seed, stationary)
    stat_mags = stat_states.sum(axis=1, dtype=np.int64)

    # Common bin edges from the stationary sample; integer magnetizations
    # bin exactly when few enough, quantile edges otherwise.
    values = np.unique(stat_mags)
    if len(values) <= 64:
        edges = np.concatenate(([-np.inf], (values[:-1] + values[1:]) / 2, [np.inf]))
    else:
        qs = np.quantile(stat_mags, np.linspace(0, 1, 33)[1:-1])
        edges = np.concatenate(([-np.inf], np.unique(qs), [np.inf]))
    n_bins = len(edges) - 1
    chain_bins = np.searchsorted(edges, mags, side="right") - 1
    stat_bins = np.searchsorted(edges, stat_mags, side="right") - 1

    # Null bias: TV between two disjoint halves of the stationary sample
    # estimates sqrt(2) times the empirical-vs-truth bias at matched size.
    rng = child_rng(seed, 12)
    n_splits = 8
    bias = 0.0
    for _ in range(n_splits):
        perm = rng.permutation(replicas)
        half = replicas // 2
        bias += _binned_tv(stat_bins[perm[:half]], stat_bins[perm[half:2 * half]],
                           n_bins) / math.sqrt(2)
    bias /= n_splits

    raw = np.array([_binned_tv(chain_bins[:, k], stat_bins, n_bins)
                    for k in range(len(grid))])
    lower = np.maximum(0.0, raw - bias)

    boots = 100
    brng = child_rng(seed, 13)
    bvals = np.empty((boots, len(grid)))
    for b in range(boots):
        ci = brng.integers(0, replicas, size=replicas)
        si = brng.integers(0, replicas, size=replicas)
        sb = stat_bins[si]
        for k in range(len(grid)):
            bvals[b, k] = max(0.0, _binned_tv(chain_bins[ci, k], sb, n_bins) - bias)
    se = bvals.std(axis=0)
    return LowerCurve(grid, lower, se, "magnetization",
                      {"bias": bias, "n_bins": n_bins, "raw": raw})


def _product_blocks_lower(m, g, grid, replicas, seed, block_period):
    r = block_period
    d = g.dimension
    for s in g.sides:
        if s % r:
            raise ValueError("block period must divide every side")
    if r == min(g.sides) and g.sides == tuple([r] * d):
        box, halo = r, 0
    else:
        if r % 6:
            raise ValueError("block period must be a multiple of 6 (or the full side)")
        box, halo = (2 * r) // 3, r // 6
    if m.family == "ising_antiferro" and r % 2:
        raise ValueError("antiferromagnetic tiles need an even period")
    if r ** d > ORACLE_CAP:
        raise CapExceeded("tile state space exceeds the exact-solver cap")
    n_blocks = 1
    for s in g.sides:
        n_blocks *= s // r

    tile = build_torus([r] * d)
    mt = ModelSpec(m.family, m.beta, m.h, m.rate_rule)
    gen = build_generator(mt, tile)
    sd = spectral_data(gen)
    _, top = order_extremes(mt, tile)
    x0 = SpinConfiguration.from_array(top)
    region = [v for v in range(tile.n_sites)
              if all(halo <= c < halo + box for c in tile.site_coords(v))]
    mu_b = projected_law(gen, gen.mu, region)
    supp = mu_b > 0
    rng = child_rng(seed, 14)
    draws = rng.choice(len(mu_b), size=(replicas, n_blocks), p=mu_b)

    lower = np.empty(len(grid))
    se = np.empty(len(grid))
    for k, t in enumerate(grid):
        row = heat_kernel_row(sd, x0.bits, float(t))
        p_b = projected_law(gen, row, region)
        with np.errstate(divide="ignore"):
            log_y = np.where(supp, np.log(np.maximum(p_b, 1e-300)) - np.log(
                np.where(supp, mu_b, 1.0)), 0.0)
        z = np.exp(np.minimum(log_y[draws].sum(axis=1), 700.0))
        vals = np.maximum(0.0, 1.0 - z)
        lower[k] = vals.mean()
        se[k] = vals.std(ddof=1) / math.sqrt(replicas)
    return LowerCurve(np.asarray(grid, dtype=np.float64), lower, se,
                      "product_blocks",
                      {"block_period": r, "box": box, "halo": halo,
                       "n_blocks": n_blocks})


def tv_lower_via_statistic(m: ModelSpec, g: TorusGeometry, grid, replicas: int,
                           seed: int, mode: str = "magnetization",
                           stationary: str = "auto", block_period: int | None = None,
                           workers: int = 1) -> LowerCurve:
    """Total variation lower bound from a distinguishing statistic.

    magnetization: binned empirical law of the total magnetization started
    from the top extreme, against a stationary sample, with a null-split
    bias subtraction and bootstrap errors. Conservative and assumption-free.

    product_blocks: the chain is compared tile by tile. Widely separated
    boxes evolve nearly independently, so the product over boxes of the
    exactly solved tile law is compared to the product stationary law; the
    reported value is a Monte Carlo estimate of the total variation between
    the two product laws, E[(1 - prod_i Y_i)+] under stationarity, with Y_i
    the per-tile likelihood ratio at the drawn pattern. With one tile
    spanning the whole torus (block_period = side) this is an unbiased
    estimate of the exact worst-start total variation from the top extreme.
    """
    grid = np.asarray(sorted(grid), dtype=np.float64)
    if grid.size == 0 or grid[0] < 0:
        raise ValueError("grid times must be nonnegative")
    if mode == "magnetization":
        return _magnetization_lower(m, g, grid, replicas, seed, stationary, workers)
    if mode == "product_blocks":
        if block_period is None:
            raise ValueError("product_blocks mode needs block_period")
        return _product_blocks_lower(m, g, grid, replicas, seed, block_period)
    raise ValueError(f"unknown lower-bound mode: {mode}")


@dataclass(frozen=True)
class XiCurve:
    """Influence of the initial condition at one site over a grid.

    xi(t) = P(top-start chain is plus at the origin) minus the same for the
    bottom start, under the shared-variate coupling; for monotone instances
    this is the per-site disagreement probability.
    """

    grid: np.ndarray
    xi: np.ndarray
    se: np.ndarray
    replicas: int
    origin: int
    wrap_ok: bool


def _wraparound_ok(g: TorusGeometry, t_max: float, eps: float = 0.05) -> bool:
    """Advisory light-cone check: a disagreement path must make floor(s/2)
    ordered jumps to wrap; the per-site path-count bound is Poisson-ish and
    extremely crude, so failures flag, never forbid."""
    from scipy import stats
    ell = min(g.sides) // 2
    rate = 2 * g.dimension * t_max
    return float(g.n_sites * stats.poisson.sf(ell - 1, rate)) <= eps


def xi_t_curve(m: ModelSpec, g: TorusGeometry, grid, replicas: int, seed: int,
               origin: int = 0, workers: int = 1) -> XiCurve:
    grid = np.asarray(sorted(grid), dtype=np.float64)
    t_end = float(grid[-1])
    fam, rule, jb, h, beta = kernel_params(m)
    bot, top = order_extremes(m, g)
    nbr = g.neighbor_table()
    plan = _chunk_plan(g, t_end, replicas)

    def one(i):
        offs, times, sites, us = batch_event_arrays(g, t_end, seed, plan[i], stream=i)
        return _kernels.pair_grid_spins_batch(offs, times, sites, us, nbr, grid,
                                              origin, bot, top,
                                              fam, rule, jb, h, beta)

    parts = _run_chunks(one, len(plan), workers)
    sa = np.vstack([p[0] for p in parts])
    sb = np.vstack([p[1] for p in parts])
    diff = (sb == 1).astype(np.float64) - (sa == 1).astype(np.float64)
    xi = diff.mean(axis=0)
    se = diff.std(axis=0, ddof=1) / math.sqrt(replicas)
    return XiCurve(grid, xi, se, replicas, origin, _wraparound_ok(g, t_end))


@dataclass(frozen=True)
class GapEstimate:
    """Weighted least squares fit of log xi against time."""

    rate: float
    se: float
    intercept: float
    window: tuple[float, float]
    n_points: int
    used: np.ndarray
    resid_rms: float


def gap_from_xi(curve: XiCurve, window: tuple[float, float] | None = None,
                min_points: int = 4, snr: float = 5.0) -> GapEstimate:
    """Exponential decay rate of an influence curve.

    Points enter the fit when xi exceeds snr times its standard error. The
    window defaults to (2, 6) relaxation times of a pilot unweighted fit.
    Refuses (FitRefused) when no decay is visible or fewer than min_points
    usable points land in the window.
    """
    usable = (curve.xi > snr * curve.se) & (curve.xi > 0)
    exact_input = bool(np.all(curve.se[usable] == 0)) if usable.any() else False
    if usable.sum() < min_points:
        raise FitRefused(f"only {int(usable.sum())} points clear the "
                         f"signal-to-noise floor {snr}")
    t_u = curve.grid[usable]
    ly = np.log(curve.xi[usable])
    if window is None:
        slope0 = np.polyfit(t_u, ly, 1)[0]
        if slope0 >= 0:
            raise FitRefused("pilot fit finds no decay")
        lam0 = -slope0
        window = (2.0 / lam0, 6.0 / lam0)
    lo, hi = window
    sel = usable & (curve.grid >= lo) & (curve.grid <= hi)
    if sel.sum() < min_points:
        raise FitRefused(f"only {int(sel.sum())} usable points inside "
                         f"window ({lo:.3g}, {hi:.3g})")
    t = curve.grid[sel]
    y = np.log(curve.xi[sel])
    if exact_input:
        w = np.ones(int(sel.sum()))
    else:
        w = (curve.xi[sel] / np.maximum(curve.se[sel], 1e-300)) ** 2
    tbar = np.average(t, weights=w)
    ybar = np.average(y, weights=w)
    sxx = float(np.sum(w * (t - tbar) ** 2))
    slope = float(np.sum(w * (t - tbar) * (y - ybar)) / sxx)
    intercept = ybar - slope * tbar
    resid = y - (intercept + slope * t)
    rms = math.sqrt(float(np.average(resid ** 2, weights=w)))
    # weights are inverse variances of log xi; for exact curves fall back
    # to the residual-scaled ordinary expression
    se_slope = rms / math.sqrt(sxx) if exact_input else math.sqrt(1.0 / sxx)
    return GapEstimate(-slope, se_slope, intercept, (float(lo), float(hi)),
                       int(sel.sum()), sel, rms)


@dataclass(frozen=True)
class SsmFit:
    """Distance decay of single-flip boundary influence on a region."""

    distances: np.ndarray
    influence: np.ndarray
    c1: float
    c2: float
    resid_rms: float
    mode: str


def _conditional_projected_law(m: ModelSpec, g: TorusGeometry, free: np.ndarray,
                               pin_values: dict[int, int],
                               delta: np.ndarray) -> np.ndarray:
    """Law of the delta-pattern under Gibbs on the free sites given pinned
    spins elsewhere, by enumerating the free patterns."""
    n_f = len(free)
    pos = {int(v): i for i, v in enumerate(free)}
    inside = []
    cross = []
    for v in free:
        for u in g.neighbors(int(v)):
            if u in pos:
                if pos[u] > pos[int(v)]:
                    inside.append((pos[int(v)], pos[u]))
            else:
                cross.append((pos[int(v)], pin_values[int(u)]))
    idx = np.arange(1 << n_f)
    spins = np.where((idx[:, None] >> np.arange(n_f)) & 1, 1, -1).astype(np.int8)
    if m.family == "hardcore":
        occ = spins > 0
        ok = np.ones(len(idx), dtype=bool)
        for a, b in inside:
            ok &= ~(occ[:, a] & occ[:, b])
        for a, val in cross:
            if val > 0:
                ok &= ~occ[:, a]
        logw = np.where(ok, occ.sum(axis=1) * math.log(m.beta), -np.inf)
    else:
        jb = m.coupling_sign * m.beta
        energy = np.zeros(len(idx))
        for a, b in inside:
            energy += spins[:, a] * spins[:, b]
        for a, val in cross:
            energy = energy + spins[:, a] * val
        logw = jb * energy + m.h * spins.sum(axis=1)
    logw -= logw.max()
    wts = np.exp(logw)
    wts /= wts.sum()
    dcol = np.array([pos[int(v)] for v in delta])
    pat = np.zeros(len(idx), dtype=np.int64)
    for j, c in enumerate(dcol):
        pat |= ((idx >> int(c)) & 1) << j
    out = np.zeros(1 << len(delta))
    np.add.at(out, pat, wts)
    return out


def _empirical_projected_law(samples: np.ndarray, delta: np.ndarray) -> np.ndarray:
    pat = np.zeros(len(samples), dtype=np.int64)
    for j, v in enumerate(delta):
        pat |= (samples[:, int(v)] > 0).astype(np.int64) << j
    return np.bincount(pat, minlength=1 << len(delta)) / len(samples)


def _sup_flip_influence_oracle(m, g, free, boundary, flips, delta) -> float:
    """Largest TV between conditional delta laws over all boundary
    configurations and a single flip at one of the listed boundary indices."""
    n_b = len(boundary)
    laws = []
    for tau in range(1 << n_b):
        pins = {int(boundary[j]): (1 if (tau >> j) & 1 else -1)
                for j in range(n_b)}
        laws.append(_conditional_projected_law(m, g, free, pins, delta))
    best = 0.0
    for tau in range(1 << n_b):
        for j in flips:
            other = laws[tau ^ (1 << int(j))]
            best = max(best, 0.5 * float(np.abs(laws[tau] - other).sum()))
    return best


def _sup_flip_influence_mc(m, g, boundary, flips, delta, replicas,
                           tau_samples, flip_cap, seed, tag) -> float:
    rng = child_rng(seed, 15, tag)
    flips = np.asarray(flips)
    if len(flips) > flip_cap:
        flips = rng.choice(flips, size=flip_cap, replace=False)
    best = 0.0
    for k in range(tau_samples):
        tau_vals = rng.choice(np.array([-1, 1], dtype=np.int8), size=len(boundary))
        pins_a = {int(v): int(s) for v, s in zip(boundary, tau_vals)}
        for j in flips:
            pins_b = dict(pins_a)
            pins_b[int(boundary[j])] = -pins_b[int(boundary[j])]
            emp = []
            for which, pins in enumerate((pins_a, pins_b)):
                draws = np.stack([
                    cftp_sample(m, g, derive_seed(seed, 16, tag, k, int(j), which, r),
                                pinned=pins).to_array()
                    for r in range(replicas)])
                emp.append(_empirical_projected_law(draws, delta))
            best = max(best, 0.5 * float(np.abs(emp[0] - emp[1]).sum()))
    return best


def ssm_decay_fit(m: ModelSpec, g: TorusGeometry, delta, boundary=None,
                  distances=None, mode: str = "oracle", replicas: int = 200,
                  tau_samples: int = 16, flip_cap: int = 4,
                  seed: int = 0) -> SsmFit:
    """Decay of boundary-flip influence with distance.

    The influence at distance d is the largest total variation between the
    conditional laws of the delta spin pattern under a pinned boundary
    configuration tau and under tau with one boundary spin flipped at graph
    distance d from delta, with everything inside the boundary left free.
    By default the boundary probed at distance d is the distance-d sphere
    around delta, which separates the ball from the rest of the torus, so
    the conditional law needs only the ball interior; an explicit boundary
    set fixes one geometry instead, with distances read off its sites
    (boundary sites screened from delta by other pinned sites contribute
    zero influence and fall below the fit floor).

    oracle mode enumerates configurations exactly; mc mode samples boundary
    configurations and flip sites and estimates each conditional law by
    coupling from the past with the boundary pinned. The per-distance
    suprema are fitted to c1 * exp(-c2 d); the fit refuses when fewer than
    two distances carry influence above the noise floor (at infinite
    temperature the influence vanishes identically) or when no decay is
    present.
    """
    from .lattice import as_region, torus_distance
    delta = as_region(delta, g)
    dist_all = np.array([min(torus_distance(g, int(y), int(v)) for v in delta)
                         for y in range(g.n_sites)])
    if mode == "oracle" and g.n_sites > 14:
        raise CapExceeded("oracle spatial-mixing fit capped at 14 sites")
    if mode not in ("oracle", "mc"):
        raise ValueError(f"unknown mode: {mode}")

    jobs = []
    if boundary is None:
        if distances is None:
            distances = list(range(1, int(dist_all.max()) + 1))
        distances = sorted(int(d) for d in distances)
        for dist in distances:
            sphere = np.flatnonzero(dist_all == dist)
            if not len(sphere):
                raise ValueError(f"no sites at distance {dist}")
            ball = np.flatnonzero(dist_all < dist)
            jobs.append((dist, ball, sphere))
    else:
        boundary = as_region(boundary, g)
        if np.intersect1d(delta, boundary).size:
            raise ValueError("delta and boundary must be disjoint")
        free_mask = np.ones(g.n_sites, dtype=bool)
        free_mask[boundary] = False
        free = np.flatnonzero(free_mask)
        dist_b = dist_all[boundary]
        if distances is None:
            distances = sorted(set(int(d) for d in dist_b))
        distances = sorted(int(d) for d in distances)
        for dist in distances:
            jobs.append((dist, free, boundary))

    sup = []
    for dist, free, bset in jobs:
        flips = np.flatnonzero(dist_all[bset] == dist)
        if mode == "oracle":
            sup.append(_sup_flip_influence_oracle(m, g, free, bset, flips, delta))
        else:
            sup.append(_sup_flip_influence_mc(m, g, bset, flips, delta, replicas,
                                              tau_samples, flip_cap, seed, dist))

    infl = np.array(sup)
    floor = 1e-12 if mode == "oracle" else 4.0 * math.sqrt((1 << len(delta)) / replicas) / 2
    live = infl > floor
    if live.sum() < 2:
        raise FitRefused("influence vanishes at all probed distances; "
                         "nothing to fit")
    dist_live = np.asarray(distances, dtype=np.float64)[live]
    ly = np.log(infl[live])
    slope, logc1 = np.polyfit(dist_live, ly, 1)
    if slope >= 0:
        raise FitRefused("influence does not decay over the probed range")
    resid = ly - (logc1 + slope * dist_live)
    return SsmFit(np.asarray(distances), infl, float(np.exp(logc1)),
                  float(-slope), float(np.sqrt(np.mean(resid ** 2))), mode)


@dataclass(frozen=True)
class MixingProfile:
    """Two-sided mixing profile with threshold crossings."""

    n_sites: int
    upper: CoalescenceCurve
    lower: LowerCurve
    brackets: dict
    ratio_quarter_three_quarter: float
    normalized_location: float

    def consistency_margin(self) -> float:
        """min over the grid of (upper + 2 se) - (lower - 2 se); negative
        values mean the two bounds contradict beyond joint noise."""
        ub = self.upper.upper + 2 * self.upper.se
        lb = self.lower.lower - 2 * self.lower.se
        return float((ub - lb).min())


def _cross_below(grid, values, eps):
    idx = np.flatnonzero(values < eps)
    return float(grid[idx[0]]) if len(idx) else math.inf


def _cross_above(grid, values, eps):
    idx = np.flatnonzero(values > eps)
    return float(grid[idx[-1]]) if len(idx) else 0.0


def mixing_profile(m: ModelSpec, g: TorusGeometry, replicas: int, seed: int,
                   eps=(0.25, 0.75), grid=None, lower_mode: str = "magnetization",
                   stationary: str = "auto", pilot_replicas: int = 64,
                   workers: int = 1) -> MixingProfile:
    """Upper and lower mixing-time estimates at the requested thresholds.

    The grid defaults to 48 points spanning a pilot coalescence run. Each
    threshold maps to a bracket: the last time the lower bound still
    exceeds eps and the first time the coalescence bound drops below it.
    The point estimate used for locations and ratios is the lower-bound
    crossing; the coalescence side is a union-bound style certificate that
    roughly doubles the location and closes the bracket from above.
    """
    if grid is None:
        horizon = max(4.0, 2.0 * math.log(max(3, g.n_sites)))
        for _ in range(12):
            pilot = tv_upper_via_coalescence(
                m, g, np.linspace(horizon / 48, horizon, 16),
                pilot_replicas, derive_seed(seed, 17), workers)
            finite = np.isfinite(pilot.taus)
            if finite.mean() >= 0.95:
                break
            horizon *= 2
        top = 1.1 * float(np.quantile(pilot.taus[finite], 0.99)) if finite.any() \
            else horizon
        grid = np.linspace(top / 48, top, 48)
    grid = np.asarray(sorted(grid), dtype=np.float64)
    upper = tv_upper_via_coalescence(m, g, grid, replicas, seed, workers)
    lower = tv_lower_via_statistic(m, g, grid, replicas, derive_seed(seed, 18),
                                   mode=lower_mode, stationary=stationary,
                                   workers=workers)
    brackets = {}
    for e in eps:
        brackets[float(e)] = (_cross_above(grid, lower.lower, e),
                              _cross_below(grid, upper.upper, e))
    t_q = brackets.get(0.25, (math.nan,))[0]
    t_3q = brackets.get(0.75, (math.nan,))[0]
    ratio = t_q / t_3q if t_3q and not math.isnan(t_3q) else math.nan
    norm = t_q / math.log(g.n_sites) if not math.isnan(t_q) else math.nan
    return MixingProfile(g.n_sites, upper, lower, brackets, ratio, norm)
