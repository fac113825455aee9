"""Tiled (barrier) dynamics and update-support certificates.

The torus is tiled by congruent blocks of side b (b divides every side);
each block B is enlarged by a halo of width w and materialized as an
independent torus of side b + 2w. One shared event stream drives
everything: an event at lattice site s applies, with the same variate, at
every image position of s inside every enlarged block containing s, and
the tiled state pulls back to the lattice by reading each site from its
own block's image.

The update support of a sequence W is the set of sites whose initial spin
can change the final state of the map driven by W. It is computed exactly
by tabulating the map over all starts (small systems), or bounded from
above by block coalescence certificates or by a reverse-time dependency
closure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .dynamics import UpdateSequence, kernel_params, sample_update_sequence
from .lattice import (CapExceeded, SpinConfiguration, TorusGeometry, as_region,
                      build_torus, region_diameter, region_min_distance)
from .model import ModelSpec, order_extremes

EXACT_SUPPORT_CAP = 20


@dataclass(frozen=True)
class BlockPartition:
    """Tiling of a torus into blocks of side b with halo width w >= 0."""

    g: TorusGeometry
    block_side: int
    halo: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        b, w = self.block_side, self.halo
        if b < 1:
            raise ValueError("block side must be positive")
        if w < 0:
            raise ValueError("halo width must be nonnegative")
        if b + 2 * w < 3:
            raise ValueError("enlarged block side b + 2w must be at least 3")
        for s in self.g.sides:
            if s % b:
                raise ValueError(f"block side {b} does not divide torus side {s}")

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return tuple(s // self.block_side for s in self.g.sides)

    @property
    def n_blocks(self) -> int:
        n = 1
        for s in self.grid_shape:
            n *= s
        return n

    @property
    def plus_geometry(self) -> TorusGeometry:
        geo = self._cache.get("plus")
        if geo is None:
            side = self.block_side + 2 * self.halo
            geo = build_torus([side] * self.g.dimension)
            self._cache["plus"] = geo
        return geo

    def block_origin(self, block: int) -> tuple[int, ...]:
        shape = self.grid_shape
        coords = []
        rem = block
        for k in range(len(shape) - 1, -1, -1):
            coords.append(rem % shape[k])
            rem //= shape[k]
        coords.reverse()
        return tuple(c * self.block_side for c in coords)

    def block_of_site(self, site: int) -> int:
        coords = self.g.site_coords(site)
        shape = self.grid_shape
        idx = 0
        for c, n_axis in zip(coords, shape):
            idx = idx * n_axis + c // self.block_side
        return idx

    def own_position(self, site: int) -> int:
        """Image position of a block's own site inside its enlarged torus."""
        origin = self.block_origin(self.block_of_site(site))
        coords = self.g.site_coords(site)
        side = self.block_side + 2 * self.halo
        pos = 0
        for c, o in zip(coords, origin):
            pos = pos * side + (c - o + self.halo)
        return pos

    def _site_maps(self):
        """own_block, own_pos arrays plus per-block CSR image tables."""
        cached = self._cache.get("maps")
        if cached is not None:
            return cached
        g = self.g
        n = g.n_sites
        b, w = self.block_side, self.halo
        side_p = b + 2 * w
        coords = g.coords_array()
        shape = self.grid_shape

        block_axis = [coords[:, k] // b for k in range(g.dimension)]
        own_block = np.zeros(n, dtype=np.int64)
        for k in range(g.dimension):
            own_block = own_block * shape[k] + block_axis[k]
        own_pos = np.zeros(n, dtype=np.int64)
        for k in range(g.dimension):
            own_pos = own_pos * side_p + (coords[:, k] - block_axis[k] * b + w)

        # Per-axis image positions of a lattice coordinate inside a block
        # whose origin is o: every p in [0, b + 2w) with
        # (o - w + p) mod side == c. Multiple images appear only when
        # b + 2w exceeds the torus side.
        csr = []
        for blk in range(self.n_blocks):
            origin = self.block_origin(blk)
            axis_imgs = []
            for k in range(g.dimension):
                s_k = g.sides[k]
                imgs = [[] for _ in range(s_k)]
                for p in range(side_p):
                    c = (origin[k] - w + p) % s_k
                    imgs[c].append(p)
                axis_imgs.append(imgs)
            counts = np.zeros(n, dtype=np.int64)
            chunks = []
            for v in range(n):
                cv = coords[v]
                pos_lists = [axis_imgs[k][cv[k]] for k in range(g.dimension)]
                if any(len(pl) == 0 for pl in pos_lists):
                    continue
                acc = [0]
                for pl in pos_lists:
                    acc = [a * side_p + p for a in acc for p in pl]
                acc.sort()
                counts[v] = len(acc)
                chunks.append((v, acc))
            indptr = np.zeros(n + 1, dtype=np.int64)
            np.cumsum(counts, out=indptr[1:])
            data = np.empty(int(indptr[-1]), dtype=np.int64)
            for v, acc in chunks:
                data[indptr[v]:indptr[v] + len(acc)] = acc
            csr.append((indptr, data))
        maps = (own_block, own_pos, csr)
        self._cache["maps"] = maps
        return maps

    def block_event_arrays(self, block: int, w_seq: UpdateSequence):
        """Events of a sequence mapped into one enlarged block.

        Events at sites with several images expand to one kernel event per
        image, same time and variate, ascending image position.
        """
        _, _, csr = self._site_maps()
        indptr, data = csr[block]
        sites = w_seq.sites
        cnt = indptr[sites + 1] - indptr[sites]
        sel = cnt > 0
        cnt_s = cnt[sel]
        times = np.repeat(w_seq.times[sel], cnt_s)
        us = np.repeat(w_seq.us[sel], cnt_s)
        starts = indptr[sites[sel]]
        base = np.repeat(np.cumsum(cnt_s) - cnt_s, cnt_s)
        idx = np.repeat(starts, cnt_s) + (np.arange(times.size) - base)
        return times, data[idx], us

    def neighborhood(self, block: int) -> list[int]:
        """Blocks adjacent to a block in the block grid, itself included."""
        shape = self.grid_shape
        coords = []
        rem = block
        for k in range(len(shape) - 1, -1, -1):
            coords.append(rem % shape[k])
            rem //= shape[k]
        coords.reverse()
        out = {block}
        offs = [(-1, 0, 1)] * len(shape)
        stack = [()]
        for k in range(len(shape)):
            stack = [t + (o,) for t in stack for o in offs[k]]
        for off in stack:
            idx = 0
            for k in range(len(shape)):
                idx = idx * shape[k] + (coords[k] + off[k]) % shape[k]
            out.add(idx)
        return sorted(out)


def default_tiling(g: TorusGeometry) -> tuple[int, int]:
    """Desk-scale block side and halo: the divisor of the side nearest
    log^2(side) (ties to the larger divisor), and halo ceil(log^(3/2) side)."""
    side = min(g.sides)
    target = math.log(side) ** 2
    divisors = [b for b in range(1, side + 1)
                if all(s % b == 0 for s in g.sides)]
    b = min(divisors, key=lambda x: (abs(x - target), -x))
    w = math.ceil(math.log(side) ** 1.5)
    return b, w


@dataclass(frozen=True)
class BarrierResult:
    """Final tiled state: one configuration per enlarged block."""

    partition: BlockPartition
    block_states: np.ndarray

    def pulled_back(self) -> SpinConfiguration:
        p = self.partition
        own_block, own_pos, _ = p._site_maps()
        return SpinConfiguration.from_array(
            self.block_states[own_block, own_pos])

    def block_configuration(self, block: int) -> SpinConfiguration:
        return SpinConfiguration.from_array(self.block_states[block])


def _pull_start(p: BlockPartition, x0: np.ndarray, block: int) -> np.ndarray:
    """Initial state of an enlarged block torus, read from the lattice.

    Positions map to lattice sites by (origin - w + position) mod side per
    axis; when several positions share a lattice site they share its spin.
    """
    g = p.g
    side_p = p.block_side + 2 * p.halo
    origin = p.block_origin(block)
    n_p = side_p ** g.dimension
    pos = np.arange(n_p)
    g_site = np.zeros(n_p, dtype=np.int64)
    for k in range(g.dimension):
        stride = side_p ** (g.dimension - 1 - k)
        pk = (pos // stride) % side_p
        coord = (origin[k] - p.halo + pk) % g.sides[k]
        g_site += coord * g.strides[k]
    return x0[g_site].astype(np.int8)


def run_barrier_dynamics(m: ModelSpec, p: BlockPartition, x0,
                         w_seq: UpdateSequence) -> BarrierResult:
    """Replay a shared stream through every enlarged block independently."""
    g = p.g
    if w_seq.g.sides != g.sides:
        raise ValueError("update sequence was sampled on a different lattice")
    x_arr = (x0.to_array() if isinstance(x0, SpinConfiguration)
             else np.asarray(x0, dtype=np.int8))
    fam, rule, jb, h, beta = kernel_params(m)
    nbr_p = p.plus_geometry.neighbor_table()
    n_p = p.plus_geometry.n_sites
    out = np.empty((p.n_blocks, n_p), dtype=np.int8)
    for blk in range(p.n_blocks):
        state = _pull_start(p, x_arr, blk)
        _, pos, us = p.block_event_arrays(blk, w_seq)
        _kernels.replay(state, nbr_p, pos, us, fam, rule, jb, h, beta)
        out[blk] = state
    return BarrierResult(p, out)


@dataclass(frozen=True)
class DiscrepancyReport:
    """Fraction of replicas where tiled and plain dynamics ever differ."""

    fraction: float
    ci_low: float
    ci_high: float
    replicas: int
    first_divergence_times: np.ndarray


def _wilson(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    ph = k / n
    den = 1 + z * z / n
    center = (ph + z * z / (2 * n)) / den
    half = z * math.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n)) / den
    return max(0.0, center - half), min(1.0, center + half)


def coupling_discrepancy(m: ModelSpec, p: BlockPartition, t_end: float,
                         replicas: int, seed: int) -> DiscrepancyReport:
    """Monte Carlo probability that the tiled run deviates from the plain run.

    Each replica draws a fresh stream and a fresh uniform start (empty
    configuration for hardcore), replays both dynamics jointly, and flags
    the replica if the pulled-back tiled state differs from the plain state
    after any event up to t_end. States are compared at event granularity;
    the comparison is exact, not sampled. The interval is Wilson at 95%.
    """
    g = p.g
    if p.block_side + 2 * p.halo > min(g.sides):
        raise ValueError("discrepancy scan requires b + 2w <= torus side")
    own_block, own_pos, csr = p._site_maps()
    counts = np.stack([ptr[1:] - ptr[:-1] for ptr, _ in csr])
    img_indptr = np.zeros(g.n_sites + 1, dtype=np.int64)
    np.cumsum(counts.sum(axis=0), out=img_indptr[1:])
    img_block = np.empty(int(img_indptr[-1]), dtype=np.int64)
    img_pos = np.empty_like(img_block)
    cursor = img_indptr[:-1].copy()
    for blk, (ptr, data) in enumerate(csr):
        for v in range(g.n_sites):
            lo, hi = ptr[v], ptr[v + 1]
            if hi > lo:
                c = cursor[v]
                img_block[c:c + hi - lo] = blk
                img_pos[c:c + hi - lo] = data[lo:hi]
                cursor[v] += hi - lo
    fam, rule, jb, h, beta = kernel_params(m)
    nbr_g = g.neighbor_table()
    nbr_p = p.plus_geometry.neighbor_table()
    n_p = p.plus_geometry.n_sites
    from .rng import child_rng, derive_seed
    firsts = np.empty(replicas)
    hits = 0
    for r in range(replicas):
        w_seq = sample_update_sequence(g, t_end, derive_seed(seed, 5, r))
        rng = child_rng(seed, 4, r)
        if m.family == "hardcore":
            x0 = np.full(g.n_sites, -1, dtype=np.int8)
        else:
            x0 = rng.choice(np.array([-1, 1], dtype=np.int8), size=g.n_sites)
        true_state = x0.copy()
        block_states = np.empty((p.n_blocks, n_p), dtype=np.int8)
        for blk in range(p.n_blocks):
            block_states[blk] = _pull_start(p, x0, blk)
        t = _kernels.barrier_discrepancy_scan(
            true_state, block_states, nbr_g, nbr_p,
            w_seq.times, w_seq.sites, w_seq.us,
            img_indptr, img_block, img_pos, own_block, own_pos,
            fam, rule, jb, h, beta)
        firsts[r] = t
        if t >= 0:
            hits += 1
    lo, hi = _wilson(hits, replicas)
    return DiscrepancyReport(hits / replicas, lo, hi, replicas, firsts)


@dataclass(frozen=True)
class SupportSet:
    """A set of sites covering the update support, with its provenance."""

    sites: np.ndarray
    method: str
    detail: dict = field(default_factory=dict, compare=False)

    def __contains__(self, site: int) -> bool:
        i = int(np.searchsorted(self.sites, site))
        return i < len(self.sites) and self.sites[i] == site


def _packed_outputs_plain(m: ModelSpec, g: TorusGeometry,
                          w_seq: UpdateSequence) -> np.ndarray:
    from .model import _all_spin_matrix
    n = g.n_sites
    states = _all_spin_matrix(n).copy()
    fam, rule, jb, h, beta = kernel_params(m)
    _kernels.replay_rows(states, g.neighbor_table(), w_seq.sites, w_seq.us,
                         fam, rule, jb, h, beta)
    packed = np.zeros(1 << n, dtype=np.uint64)
    for v in range(n):
        packed |= (states[:, v] > 0).astype(np.uint64) << np.uint64(v)
    return packed


def _packed_outputs_barrier(m: ModelSpec, p: BlockPartition,
                            w_seq: UpdateSequence) -> np.ndarray:
    from .model import _all_spin_matrix
    g = p.g
    n = g.n_sites
    n_p = p.plus_geometry.n_sites
    total_bits = p.n_blocks * n_p
    if total_bits > 64:
        raise ValueError(f"tiled output needs {total_bits} bits; exact support "
                         "tabulation supports at most 64")
    inits = _all_spin_matrix(n)
    fam, rule, jb, h, beta = kernel_params(m)
    nbr_p = p.plus_geometry.neighbor_table()
    packed = np.zeros(1 << n, dtype=np.uint64)
    side_p = p.block_side + 2 * p.halo
    for blk in range(p.n_blocks):
        origin = p.block_origin(blk)
        pos = np.arange(n_p)
        g_site = np.zeros(n_p, dtype=np.int64)
        rem = pos
        for k in range(g.dimension):
            stride = side_p ** (g.dimension - 1 - k)
            pk = (rem // stride) % side_p
            coord = (origin[k] - p.halo + pk) % g.sides[k]
            g_site += coord * g.strides[k]
        states = inits[:, g_site].copy()
        _, epos, eus = p.block_event_arrays(blk, w_seq)
        _kernels.replay_rows(states, nbr_p, epos, eus, fam, rule, jb, h, beta)
        for q in range(n_p):
            packed |= (states[:, q] > 0).astype(np.uint64) << np.uint64(blk * n_p + q)
    return packed


def exact_support(m: ModelSpec, target, w_seq: UpdateSequence,
                  cap: int = EXACT_SUPPORT_CAP) -> SupportSet:
    """Exact update support by tabulating the map over all starts.

    target is the lattice (plain dynamics) or a BlockPartition (tiled
    dynamics, whose output is the full tiled state including halos). A site
    belongs to the support iff flipping it in some start changes the final
    output.
    """
    g = target.g if isinstance(target, BlockPartition) else target
    n = g.n_sites
    if n > cap:
        raise CapExceeded(f"exact support on {n} sites exceeds cap {cap}")
    if isinstance(target, BlockPartition):
        packed = _packed_outputs_barrier(m, target, w_seq)
    else:
        packed = _packed_outputs_plain(m, target, w_seq)
    support = []
    idx = np.arange(1 << n)
    for v in range(n):
        flipped = idx ^ (1 << v)
        if np.any(packed != packed[flipped]):
            support.append(v)
    return SupportSet(np.array(support, dtype=np.int64), "exact")


def block_coalescence_times(m: ModelSpec, p: BlockPartition,
                            w_seq: UpdateSequence) -> np.ndarray:
    """Per-block first agreement time of extreme starts under the mapped
    stream; +inf when a block has not coalesced by the end of the stream."""
    fam, rule, jb, h, beta = kernel_params(m)
    geo = p.plus_geometry
    bot, top = order_extremes(m, geo)
    nbr_p = geo.neighbor_table()
    taus = np.empty(p.n_blocks)
    for blk in range(p.n_blocks):
        times, pos, us = p.block_event_arrays(blk, w_seq)
        tau = _kernels.pair_coalescence(bot.copy(), top.copy(), nbr_p,
                                        times, pos, us, fam, rule, jb, h, beta)
        taus[blk] = math.inf if tau < 0 else tau
    return taus


def support_superset_blocks(m: ModelSpec, p: BlockPartition,
                            w_seq: UpdateSequence,
                            taus: np.ndarray | None = None) -> SupportSet:
    """Coalescence certificate: a block drops out of the support when every
    block in its neighborhood (itself and its 3^d - 1 block-grid neighbors)
    has coalescing extreme chains under the shared stream. The union of the
    remaining blocks contains the exact tiled-dynamics support.

    The extreme chains live on the enlarged per-block torus, so the
    instance must be monotone there: for the checkerboard-ordered
    families this needs b + 2w even, not just even sides of the base
    torus."""
    if not m.is_monotone(p.plus_geometry):
        raise ValueError(
            "block certificates require a monotone instance on the "
            "enlarged block torus (checkerboard families need even b + 2w)")
    if taus is None:
        taus = block_coalescence_times(m, p, w_seq)
    horizon = w_seq.t_end
    failed = taus > horizon
    own_block, _, _ = p._site_maps()
    keep_block = np.zeros(p.n_blocks, dtype=bool)
    for blk in range(p.n_blocks):
        if any(failed[nb] for nb in p.neighborhood(blk)):
            keep_block[blk] = True
    sites = np.flatnonzero(keep_block[own_block])
    return SupportSet(sites, "blocks",
                      {"taus": taus, "kept_blocks": np.flatnonzero(keep_block)})


def support_superset_paths(g: TorusGeometry, w_seq: UpdateSequence,
                           self_reading: bool = False) -> SupportSet:
    """Reverse-time dependency closure over the event list.

    Sweeping events backward, a site is live when its value at that moment
    can still reach the final state. An update of a live site imports the
    site's neighbors into the live set and drops the site itself: a site's
    initial value reaches the final state only along a forward chain of
    updates at adjacent sites, each reading the previous value before it is
    overwritten. The closure uses only the event list, never the rates.

    The default treats an update as overwriting the site (exact structure
    for rules that resample a site from its neighbors and variate alone,
    the heat-bath convention). With self_reading=True the updated site also
    stays live, the sound reading for rules whose new spin depends on the
    old one (Metropolis keeps the spin when the proposal is rejected); that
    variant can never shrink the live set below the full lattice.
    """
    n = g.n_sites
    nbr_mask = [0] * n
    for v in range(n):
        acc = 0
        for y in g.neighbors(v):
            acc |= 1 << y
        nbr_mask[v] = acc
    live = (1 << n) - 1
    for x in w_seq.sites[::-1]:
        x = int(x)
        if (live >> x) & 1:
            if self_reading:
                live |= nbr_mask[x]
            else:
                live = (live & ~(1 << x)) | nbr_mask[x]
    sites = np.array([v for v in range(n) if (live >> v) & 1], dtype=np.int64)
    return SupportSet(sites, "paths", {"self_reading": self_reading})


@dataclass(frozen=True)
class SparsityReport:
    """Component census of a support set against desk-scale thresholds."""

    n_components: int
    component_sizes: tuple[int, ...]
    diameters: tuple[int, ...]
    max_components: int
    max_diameter: int
    min_separation_required: int
    min_separation_observed: int | None
    pairwise_distances: np.ndarray | None
    sparse: bool
    first_violation: str | None


def default_sparse_thresholds(g: TorusGeometry) -> tuple[int, int, int]:
    """(max diameter D, min separation S, max component count L)."""
    n = min(g.sides)
    d = g.dimension
    ln = math.log(n)
    D = math.ceil(ln ** 3)
    S = math.ceil(2 * d * ln ** 2)
    L = math.ceil(max(0.0, (n / ln ** 5)) ** d)
    return D, S, max(1, L)


def classify_sparse(g: TorusGeometry, support: SupportSet | Iterable[int],
                    thresholds: tuple[int, int, int] | None = None,
                    pair_cap: int = 64) -> SparsityReport:
    """Decide whether a support set is sparse: components under the linkage
    S - 1 closure, at most L of them, every diameter at most D. Separation
    at least S between distinct components holds by construction of the
    closure; observed pairwise distances are reported when the component
    count is small enough to enumerate them."""
    if thresholds is None:
        thresholds = default_sparse_thresholds(g)
    D, S, L = thresholds
    sites = support.sites if isinstance(support, SupportSet) else as_region(support, g)
    from .lattice import region_components
    comps = region_components(g, sites, max(0, S - 1)) if len(sites) else []
    sizes = tuple(len(c) for c in comps)
    diameters = tuple(region_diameter(g, c) for c in comps)
    first = None
    if len(comps) > L:
        first = "count"
    elif any(dm > D for dm in diameters):
        first = "diameter"
    pd = None
    min_sep = None
    if 2 <= len(comps) <= pair_cap:
        pd = np.zeros((len(comps), len(comps)), dtype=np.int64)
        for i in range(len(comps)):
            for j in range(i + 1, len(comps)):
                pd[i, j] = pd[j, i] = region_min_distance(g, comps[i], comps[j])
        min_sep = int(pd[np.triu_indices(len(comps), 1)].min())
    return SparsityReport(len(comps), sizes, diameters, L, D, S, min_sep, pd,
                          first is None, first)


@dataclass(frozen=True)
class SupportMap:
    """Per-site last grid time in the block-certificate support."""

    partition: BlockPartition
    grid: np.ndarray
    last_time: np.ndarray
    block_taus: np.ndarray

    def fraction_curve(self) -> np.ndarray:
        return np.array([(self.last_time >= t).mean() for t in self.grid])

    def support_at(self, t: float) -> SupportSet:
        p = self.partition
        own_block, _, _ = p._site_maps()
        out_time = self._block_out_time()
        keep = out_time > t
        return SupportSet(np.flatnonzero(keep[own_block]), "blocks",
                          {"taus": self.block_taus})

    def _block_out_time(self) -> np.ndarray:
        p = self.partition
        out = np.empty(p.n_blocks)
        for blk in range(p.n_blocks):
            out[blk] = max(self.block_taus[nb] for nb in p.neighborhood(blk))
        return out


def support_map(m: ModelSpec, p: BlockPartition, t_grid: Sequence[float],
                seed: int) -> SupportMap:
    """Block-certificate support across a time grid under one stream.

    One shared stream spans the full horizon; each block's extreme chains
    are replayed once to record their coalescence time, and a site remains
    in the support at grid time t while any block in its neighborhood has
    not coalesced by t. last_time is the largest grid time at which a site
    is still in the support (0 when it is out already at the first grid
    point: the certificate is monotone along nested prefixes of a single
    stream).
    """
    grid = np.asarray(sorted(t_grid), dtype=np.float64)
    if grid.size == 0 or grid[0] <= 0:
        raise ValueError("grid times must be positive")
    if not m.is_monotone(p.plus_geometry):
        raise ValueError(
            "block certificates require a monotone instance on the "
            "enlarged block torus (checkerboard families need even b + 2w)")
    w_seq = sample_update_sequence(p.g, float(grid[-1]), seed)
    taus = block_coalescence_times(m, p, w_seq)
    own_block, _, _ = p._site_maps()
    out_time = np.empty(p.n_blocks)
    for blk in range(p.n_blocks):
        out_time[blk] = max(taus[nb] for nb in p.neighborhood(blk))
    site_out = out_time[own_block]
    last = np.zeros(p.g.n_sites)
    for t in grid:
        last[site_out > t] = t
    return SupportMap(p, grid, last, taus)
