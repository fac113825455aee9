"""End-to-end verification suite behind `cutoff-lab verify`.

Each numbered criterion is a standalone check with frozen seeds and
parameters, returning a pass flag plus a one-line detail string. The
registry at the bottom is shared by the CLI and the acceptance tests,
so both always run exactly the same checks.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .dynamics import run_grand_coupling, sample_update_sequence
from .estimators import (gap_from_xi, mixing_profile, tv_lower_via_statistic,
                         tv_upper_via_coalescence, xi_t_curve)
from .lattice import build_torus
from .model import (ModelSpec, check_detailed_balance, order_extremes,
                    parity_mask, partial_order_leq)
from .oracle import (build_generator, heat_kernel_row, m_t_exact,
                     product_generator, spectral_data, spectral_gap_exact,
                     tv_distance, worst_start_tv)
from .rng import child_rng, derive_seed
from .support import (BlockPartition, block_coalescence_times, classify_sparse,
                      coupling_discrepancy, default_tiling, exact_support,
                      support_map, support_superset_blocks,
                      support_superset_paths)

MASTER_SEED = 20260816


@dataclass
class CriterionResult:
    number: int
    slug: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return (f"[{mark}] {self.number:2d} {self.slug}: {self.detail} "
                f"({self.seconds:.1f}s)")


def crit_exact_1d_gap(workers: int = 1):
    """1D heat-bath gap equals 1 - tanh(2 beta), independent of n."""
    worst = 0.0
    for beta in (0.0, 0.2, 0.4, 0.7):
        want = 1.0 - math.tanh(2.0 * beta)
        for n in range(4, 11):
            got = spectral_gap_exact(ModelSpec("ising_ferro", beta),
                                     build_torus([n]))
            worst = max(worst, abs(got - want))
    return worst < 1e-8, f"max |gap - (1 - tanh 2b)| = {worst:.2e}, tol 1e-08"


def crit_detailed_balance(workers: int = 1):
    """Reversibility and stationarity residuals across families and rules."""
    cases = [
        ("ising_ferro", 0.4, 0.0, [12]),
        ("ising_ferro", 0.3, 0.2, [3, 4]),
        ("ising_antiferro", 0.5, 0.0, [10]),
        ("ising_antiferro", 0.35, -0.15, [12]),
        ("hardcore", 1.7, 0.0, [3, 4]),
        ("hardcore", 0.8, 0.0, [11]),
    ]
    worst_db = worst_stat = 0.0
    for rule in ("heat_bath", "metropolis"):
        for family, beta, h, sides in cases:
            m = ModelSpec(family, beta, h, rule)
            g = build_torus(sides)
            worst_db = max(worst_db, check_detailed_balance(m, g))
            gen = build_generator(m, g)
            resid = np.abs(gen.mu @ gen.rates).max()
            worst_stat = max(worst_stat, float(resid))
    ok = worst_db < 1e-12 and worst_stat < 1e-12
    return ok, (f"max reversibility residual {worst_db:.2e}, "
                f"max stationarity residual {worst_stat:.2e}, tol 1e-12")


def crit_product_min_gap(workers: int = 1):
    """Gap of a two-torus product chain equals the smaller factor gap."""
    pairs = [
        (ModelSpec("ising_ferro", 0.3), [5], ModelSpec("ising_antiferro", 0.6), [4]),
        (ModelSpec("hardcore", 1.4), [4], ModelSpec("ising_ferro", 0.5), [5]),
    ]
    worst = 0.0
    for ma, sa, mb, sb in pairs:
        A = build_generator(ma, build_torus(sa))
        B = build_generator(mb, build_torus(sb))
        got = spectral_data(product_generator(A, B)).gap
        want = min(spectral_data(A).gap, spectral_data(B).gap)
        worst = max(worst, abs(got - want))
    return worst < 1e-9, f"max |product gap - min factor gap| = {worst:.2e}, tol 1e-09"


def _random_middle_hardcore(g, rng):
    """A uniform-ish random independent set (occupied = +1)."""
    x = -np.ones(g.n_sites, dtype=np.int8)
    nbr = g.neighbor_table()
    for v in rng.permutation(g.n_sites):
        if rng.random() < 0.5 and not np.any(x[nbr[v]] == 1):
            x[v] = 1
    return x


def crit_monotone_order(workers: int = 1):
    """Grand coupling preserves the order on 2 x 10^3 random instances."""
    violations = 0
    checked = 0
    for k in range(1000):
        rng = child_rng(MASTER_SEED, 4, k)
        if k % 2 == 0:
            sides = [int(rng.integers(4, 65))]
        else:
            a = int(rng.integers(3, 9))
            sides = [a, int(rng.integers(3, 64 // a + 1))]
        g = build_torus(sides)
        beta = float(rng.uniform(0.02, 1.0))
        h = float(rng.uniform(-0.5, 0.5)) if k % 3 == 0 else 0.0
        m = ModelSpec("ising_ferro", beta, h)
        w = sample_update_sequence(g, 1.5, derive_seed(MASTER_SEED, 4, k, 1))
        bot, top = order_extremes(m, g)
        mid = np.where(rng.random(g.n_sites) < 0.5, 1, -1).astype(np.int8)
        for t in (0.7, None):
            lo, me, hi = run_grand_coupling(
                m, g, [bot, mid, top], w if t is None else w.restrict(t))
            if not (partial_order_leq(lo, me) and partial_order_leq(me, hi)):
                violations += 1
            checked += 1
    for k in range(1000):
        rng = child_rng(MASTER_SEED, 4, 2000 + k)
        if k % 2 == 0:
            sides = [2 * int(rng.integers(2, 33))]
        else:
            a = 2 * int(rng.integers(2, 5))
            sides = [a, 2 * int(rng.integers(2, 64 // (2 * a) + 1))]
        g = build_torus(sides)
        m = ModelSpec("hardcore", float(rng.uniform(0.05, 1.0)))
        mask = parity_mask(g)
        w = sample_update_sequence(g, 1.5, derive_seed(MASTER_SEED, 4, k, 3))
        bot, top = order_extremes(m, g)
        mid = _random_middle_hardcore(g, rng)
        for t in (0.7, None):
            lo, me, hi = run_grand_coupling(
                m, g, [bot, mid, top], w if t is None else w.restrict(t))
            if not (partial_order_leq(lo, me, mask)
                    and partial_order_leq(me, hi, mask)):
                violations += 1
            checked += 1
    return violations == 0, f"{violations} order violations in {checked} checks"


def crit_support_soundness(workers: int = 1):
    """exact support inside both supersets; never-updated sites inside exact."""
    bad_paths = bad_blocks = bad_unupdated = 0
    n_blocks_checked = 0
    for k in range(1000):
        rng = child_rng(MASTER_SEED, 5, k)
        if k % 3 == 2:
            a = (3, 4)[int(rng.integers(0, 2))]
            sides = [a, (3, 4)[int(rng.integers(0, 2))]]
        else:
            sides = [int(rng.integers(4, 13))]
        g = build_torus(sides)
        family = ("ising_ferro", "ising_antiferro", "hardcore")[k % 3]
        rule = ("heat_bath", "metropolis")[int(rng.integers(0, 2))]
        beta = float(rng.uniform(0.3, 2.0)) if family == "hardcore" \
            else float(rng.uniform(0.1, 0.9))
        h = 0.0 if family == "hardcore" or k % 2 else float(rng.uniform(-0.4, 0.4))
        m = ModelSpec(family, beta, h, rule)
        w = sample_update_sequence(g, float(rng.uniform(0.3, 1.5)),
                                   derive_seed(MASTER_SEED, 5, k, 1))
        exact = exact_support(m, g, w)
        paths = support_superset_paths(g, w, self_reading=(rule == "metropolis"))
        if not set(exact.sites) <= set(paths.sites):
            bad_paths += 1
        updated = set(int(v) for v in w.sites)
        if any(v not in exact for v in range(g.n_sites) if v not in updated):
            bad_unupdated += 1
        if len(sides) == 1 and m.is_monotone(g):
            n = sides[0]
            if family == "ising_ferro":
                b = n if n <= 8 else (n // 2 if n % 2 == 0 else n)
            else:
                b = n
            halo = 1 if b + 2 > 5 else 2
            if (n // b) * (b + 2 * halo) <= 64:
                p = BlockPartition(g, b, halo)
                tiled_exact = exact_support(m, p, w)
                blocks = support_superset_blocks(m, p, w)
                if not set(tiled_exact.sites) <= set(blocks.sites):
                    bad_blocks += 1
                n_blocks_checked += 1
    ok = bad_paths == 0 and bad_blocks == 0 and bad_unupdated == 0
    return ok, (f"paths violations {bad_paths}/1000, block-certificate "
                f"violations {bad_blocks}/{n_blocks_checked}, "
                f"never-updated misses {bad_unupdated}/1000")


def crit_barrier_discrepancy(workers: int = 1):
    """Tiled-vs-plain divergence fraction falls in the halo width."""
    m = ModelSpec("ising_ferro", 0.4)
    g = build_torus([48])
    fracs = []
    for w in (1, 2, 4, 8):
        rep = coupling_discrepancy(m, BlockPartition(g, 8, w), 2.0, 1000,
                                   derive_seed(MASTER_SEED, 6))
        fracs.append(rep.fraction)
    decreasing = all(fracs[i] > fracs[i + 1] for i in range(len(fracs) - 1))
    ok = decreasing and fracs[-1] == 0.0
    txt = ", ".join(f"w={w}: {f:.3f}" for w, f in zip((1, 2, 4, 8), fracs))
    return ok, txt + " (strictly decreasing, 0 at w=8)"


def crit_estimator_oracle(workers: int = 1):
    """TV upper above and lowers below the exact curve, within 2 SE."""
    replicas = 4000
    worst = []
    for n in (6, 8, 10):
        for beta in (0.2, 0.4):
            m = ModelSpec("ising_ferro", beta)
            g = build_torus([n])
            gap = 1.0 - math.tanh(2 * beta)
            grid = np.linspace(0.3, 6.0 / gap, 10)
            gen = build_generator(m, g)
            sd = spectral_data(gen)
            exact_worst = np.array([worst_start_tv(sd, t)[0] for t in grid])
            top = int(np.searchsorted(gen.states, (1 << n) - 1))
            exact_top = np.array([
                tv_distance(heat_kernel_row(sd, top, t), gen.mu) for t in grid])
            seed = derive_seed(MASTER_SEED, 7, n, int(beta * 10))
            up = tv_upper_via_coalescence(m, g, grid, replicas, seed, workers)
            se_up = np.maximum(up.se, 1.0 / replicas)
            worst.append(float((up.upper + 2 * se_up - exact_worst).min()))
            for mode in ("magnetization", "product_blocks"):
                lo = tv_lower_via_statistic(m, g, grid, replicas,
                                            derive_seed(seed, 1), mode=mode,
                                            block_period=n, workers=workers)
                se_lo = np.maximum(lo.se, 1.0 / replicas)
                worst.append(float((exact_top - (lo.lower - 2 * se_lo)).min()))
    margin = min(worst)
    return margin >= 0.0, (f"min two-sided slack over 6 instances x 10 grid "
                           f"points = {margin:+.4f} (needs >= 0)")


def crit_gap_extraction(workers: int = 1):
    """Decay-rate recovery at beta = 0 (rate 1) and beta = 0.4 (1D, r=64)."""
    g = build_torus([64])
    c0 = xi_t_curve(ModelSpec("ising_ferro", 0.0), g,
                    np.linspace(0.25, 7.0, 28), 100_000,
                    derive_seed(MASTER_SEED, 8, 0), workers=workers)
    f0 = gap_from_xi(c0)
    want = 0.335963
    c4 = xi_t_curve(ModelSpec("ising_ferro", 0.4), g,
                    np.linspace(0.5, 20.0, 40), 100_000,
                    derive_seed(MASTER_SEED, 8, 4), workers=workers)
    f4 = gap_from_xi(c4)
    ok0 = abs(f0.rate - 1.0) <= 0.05
    ok4 = abs(f4.rate - want) <= 0.10 * want
    return ok0 and ok4, (f"beta=0: rate {f0.rate:.4f} (want 1 within 5%); "
                         f"beta=0.4: rate {f4.rate:.4f} (want {want} within 10%)")


def crit_gap_stabilization(workers: int = 1):
    """|rate(2r) - rate(r)| shrinks as r doubles, up to joint noise."""
    m = ModelSpec("ising_ferro", 0.4)
    fits = {}
    for r in (16, 32, 64):
        curve = xi_t_curve(m, build_torus([r]), np.linspace(0.5, 20.0, 40),
                           40_000, derive_seed(MASTER_SEED, 9, r),
                           workers=workers)
        fits[r] = gap_from_xi(curve)
    d1 = abs(fits[32].rate - fits[16].rate)
    d2 = abs(fits[64].rate - fits[32].rate)
    se1 = math.hypot(fits[16].se, fits[32].se)
    se2 = math.hypot(fits[32].se, fits[64].se)
    joint = math.hypot(se1, se2)
    ok = d2 <= d1 + 2 * joint
    return ok, (f"|d32-d16| = {d1:.4f}, |d64-d32| = {d2:.4f}, "
                f"2 x joint SE = {2 * joint:.4f}")


def crit_cutoff_diagnostics(workers: int = 1):
    """Sharpening mixing profile in n, and its location against 1/(2 gap)."""
    m = ModelSpec("ising_ferro", 0.3)
    ratios, norms = [], []
    for n in (64, 128, 256, 512):
        g = build_torus([n])
        seed = derive_seed(MASTER_SEED, 10, n)
        # light pass to learn the horizon, then a dense grid: the ratio
        # compares two nearby crossing times, so grid resolution is what
        # limits it, not replica noise alone
        pilot = mixing_profile(m, g, 256, seed, eps=(0.25, 0.75),
                               workers=workers)
        top = float(pilot.upper.grid[-1])
        prof = mixing_profile(m, g, 6000, seed, eps=(0.25, 0.75),
                              grid=np.linspace(top / 144, top, 144),
                              workers=workers)
        ratios.append(prof.ratio_quarter_three_quarter)
        norms.append(prof.normalized_location)
    decreasing = all(ratios[i] > ratios[i + 1] for i in range(len(ratios) - 1))
    target = 1.0 / (2.0 * (1.0 - math.tanh(0.6)))
    ok = decreasing and abs(norms[-1] - target) <= 0.25 * target
    txt = ", ".join(f"n={n}: ratio {r:.3f}" for n, r in
                    zip((64, 128, 256, 512), ratios))
    return ok, (txt + f"; normalized location at n=512: {norms[-1]:.3f} "
                f"(want {target:.4f} within 25%)")


def crit_support_sparsification(workers: int = 1):
    """Support fraction falls along the grid and the verdict turns sparse."""
    m = ModelSpec("ising_ferro", 0.4)
    g = build_torus([128, 128])
    b, w = default_tiling(g)
    p = BlockPartition(g, b, w)
    seed = derive_seed(MASTER_SEED, 11)
    horizon = 64.0
    for _ in range(8):
        probe = support_map(m, p, [horizon], seed)
        taus = probe.block_taus
        if np.isfinite(taus).all():
            break
        horizon *= 2
    out_times = probe._block_out_time()
    # grid points sit strictly between distinct out-time values (so each
    # fraction is a different survivor count), and the final point is the
    # probe horizon itself: the map below replays the identical stream,
    # inherits the probe's coalescence times, and ends with empty support
    uniq = np.unique(out_times)
    mids = (uniq[:-1] + uniq[1:]) / 2.0
    fr = np.array([(out_times > t).mean() for t in mids])
    idx = sorted({int(np.argmin(np.abs(fr - target)))
                  for target in (0.7, 0.4, 0.15)})
    for fill in np.linspace(0, mids.size - 1, 3).astype(int):
        if len(idx) >= 3:
            break
        if int(fill) not in idx:
            idx = sorted(idx + [int(fill)])
    grid = [float(mids[i]) for i in idx] + [horizon]
    smap = support_map(m, p, grid, seed)
    fracs = smap.fraction_curve()
    decreasing = all(fracs[i] > fracs[i + 1] for i in range(len(fracs) - 1))
    first = classify_sparse(g, smap.support_at(grid[0]))
    final = classify_sparse(g, smap.support_at(grid[-1]))
    ok = decreasing and final.sparse
    txt = ", ".join(f"{f:.3f}" for f in fracs)
    return ok, (f"b={b}, w={w}; fractions [{txt}] over grid "
                f"[{', '.join(f'{t:.1f}' for t in grid)}]; verdict "
                f"{'sparse' if final.sparse else 'not sparse'} at the end "
                f"(start: {'sparse' if first.sparse else 'not sparse'})")


def crit_mt_contraction(workers: int = 1):
    """Exact regional L2 divergence shrinks to zero on the cycle."""
    m = ModelSpec("ising_ferro", 0.3)
    g = build_torus([8])
    region = [0, 1, 2, 3]
    gen = build_generator(m, g)
    grid = np.arange(0.0, 8.01, 0.5)
    vals = np.array([m_t_exact(m, g, region, t, gen=gen) for t in grid])
    nonincreasing = bool(np.all(np.diff(vals) <= 1e-10))
    ok = nonincreasing and vals[-1] < 0.05 * vals[0] and vals[-1] < 0.1
    return ok, (f"m_0 = {vals[0]:.4f}, m_8 = {vals[-1]:.2e}, "
                f"nonincreasing: {nonincreasing}")


CRITERIA = {
    1: ("exact-1d-gap", crit_exact_1d_gap),
    2: ("detailed-balance", crit_detailed_balance),
    3: ("product-min-gap", crit_product_min_gap),
    4: ("monotone-order", crit_monotone_order),
    5: ("support-soundness", crit_support_soundness),
    6: ("barrier-discrepancy", crit_barrier_discrepancy),
    7: ("estimator-oracle", crit_estimator_oracle),
    8: ("gap-extraction", crit_gap_extraction),
    9: ("gap-stabilization", crit_gap_stabilization),
    10: ("cutoff-diagnostics", crit_cutoff_diagnostics),
    11: ("support-sparsification", crit_support_sparsification),
    12: ("mt-contraction", crit_mt_contraction),
}

QUICK_SUBSET = (1, 2, 3, 12)


def run_criteria(numbers=None, workers: int = 1,
                 progress=None) -> list[CriterionResult]:
    """Run the requested criteria (all by default), capturing failures."""
    results = []
    for num in numbers if numbers is not None else sorted(CRITERIA):
        slug, fn = CRITERIA[num]
        t0 = time.perf_counter()
        try:
            passed, detail = fn(workers=workers)
        except Exception as e:
            passed, detail = False, f"error: {type(e).__name__}: {e}"
        res = CriterionResult(num, slug, passed, detail,
                              time.perf_counter() - t0)
        results.append(res)
        if progress is not None:
            progress(res)
    return results
