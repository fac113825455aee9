"""Event streams and trajectory replay.

A chain on n sites is driven by a single Poisson stream of rate n whose
events carry a uniform site label and a uniform variate in [0, 1); this is
equivalent in law to independent rate-1 clocks per site. Replaying a fixed
stream is deterministic, and running several chains against one stream is
the grand coupling: under the heat-bath convention (spin set to +1 iff
u < p_plus) the coupling preserves the coordinatewise order for ferro
Ising and the checkerboard order for hardcore and antiferro on bipartite
tori.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels
from .lattice import SpinConfiguration, TorusGeometry, build_torus
from .model import ModelSpec, order_extremes
from .rng import child_rng

MAGIC = b"CUTLSEQ1"

_RECORD = np.dtype([("time", "<f8"), ("site", "<u4"), ("u", "<f8")])


class UpdateEvent(NamedTuple):
    time: float
    site: int
    u: float


def kernel_params(m: ModelSpec) -> tuple[int, int, float, float, float]:
    """(family, rule, J*beta, h, beta) scalars consumed by the compiled loops."""
    family = 1 if m.family == "hardcore" else 0
    rule = 0 if m.rate_rule == "heat_bath" else 1
    jb = float(m.coupling_sign) * m.beta
    return family, rule, jb, m.h, m.beta


@dataclass(frozen=True)
class UpdateSequence:
    """Time-sorted update events on a fixed lattice over [0, t_end]."""

    g: TorusGeometry
    t_end: float
    times: np.ndarray
    sites: np.ndarray
    us: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        if not (len(self.times) == len(self.sites) == len(self.us)):
            raise ValueError("event arrays disagree in length")
        if len(self.times) and np.any(np.diff(self.times) < 0):
            raise ValueError("event times must be nondecreasing")

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self):
        for t, x, u in zip(self.times, self.sites, self.us):
            yield UpdateEvent(float(t), int(x), float(u))

    def restrict(self, t: float) -> "UpdateSequence":
        """The prefix of events with time <= t."""
        k = int(np.searchsorted(self.times, t, side="right"))
        return UpdateSequence(self.g, min(t, self.t_end), self.times[:k],
                              self.sites[:k], self.us[:k], self.seed)

    def to_bytes(self) -> bytes:
        head = struct.pack("<8sI", MAGIC, self.g.dimension)
        head += struct.pack(f"<{self.g.dimension}I", *self.g.sides)
        seed_hash = 0 if self.seed is None else (int(self.seed) & (2**64 - 1))
        head += struct.pack("<dQQ", self.t_end, seed_hash, len(self.times))
        rec = np.empty(len(self.times), dtype=_RECORD)
        rec["time"] = self.times
        rec["site"] = self.sites
        rec["u"] = self.us
        return head + rec.tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "UpdateSequence":
        magic, dim = struct.unpack_from("<8sI", raw, 0)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r}; not an update-sequence stream")
        off = struct.calcsize("<8sI")
        sides = struct.unpack_from(f"<{dim}I", raw, off)
        off += 4 * dim
        t_end, seed_hash, count = struct.unpack_from("<dQQ", raw, off)
        off += struct.calcsize("<dQQ")
        rec = np.frombuffer(raw, dtype=_RECORD, count=count, offset=off)
        g = build_torus(sides)
        return cls(g, t_end, rec["time"].copy(), rec["site"].astype(np.int64),
                   rec["u"].copy(), seed_hash if seed_hash else None)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "UpdateSequence":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def sample_update_sequence(g: TorusGeometry, t_end: float, seed: int,
                           sites_subset: np.ndarray | None = None) -> UpdateSequence:
    """Draw the Poisson event stream over [0, t_end].

    With `sites_subset` the stream runs at rate |subset| and labels events
    only with those sites (the remaining sites are frozen), which is how
    pinned-boundary chains are driven.
    """
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    rng = child_rng(seed, 0)
    n_active = g.n_sites if sites_subset is None else len(sites_subset)
    count = int(rng.poisson(n_active * t_end))
    times = np.sort(rng.random(count)) * t_end
    labels = rng.integers(0, n_active, size=count)
    sites = labels if sites_subset is None else np.asarray(sites_subset, dtype=np.int64)[labels]
    us = rng.random(count)
    return UpdateSequence(g, float(t_end), times, sites.astype(np.int64), us, seed)


def _as_state(g: TorusGeometry, x) -> np.ndarray:
    if isinstance(x, SpinConfiguration):
        if x.n_sites != g.n_sites:
            raise ValueError("configuration size does not match the lattice")
        return x.to_array().copy()
    arr = np.asarray(x, dtype=np.int8).copy()
    if arr.shape != (g.n_sites,):
        raise ValueError("state array has the wrong shape")
    return arr


def apply_updates(m: ModelSpec, g: TorusGeometry, x0, w: UpdateSequence,
                  t: float | None = None) -> SpinConfiguration:
    """Deterministic replay of x0 through the events of w (up to time t)."""
    if w.g.sides != g.sides:
        raise ValueError("update sequence was sampled on a different lattice")
    seq = w if t is None else w.restrict(t)
    state = _as_state(g, x0)
    fam, rule, jb, h, beta = kernel_params(m)
    _kernels.replay(state, g.neighbor_table(), seq.sites, seq.us, fam, rule, jb, h, beta)
    return SpinConfiguration.from_array(state)


def run_grand_coupling(m: ModelSpec, g: TorusGeometry, starts: Sequence,
                       w: UpdateSequence) -> list[SpinConfiguration]:
    """Evolve several starts under one shared stream (the grand coupling)."""
    states = np.stack([_as_state(g, x) for x in starts])
    fam, rule, jb, h, beta = kernel_params(m)
    _kernels.replay_rows(states, g.neighbor_table(), w.sites, w.us, fam, rule, jb, h, beta)
    return [SpinConfiguration.from_array(row) for row in states]


def coalescence_time(m: ModelSpec, g: TorusGeometry, seed: int,
                     t_cap: float) -> float | None:
    """First agreement time of the two extreme-start coupled chains.

    None when the chains still differ at t_cap. Requires a monotone
    instance, where agreement of the extremes certifies coalescence of
    every start.
    """
    if not m.is_monotone(g):
        raise ValueError("coalescence of extremes certifies mixing only for monotone instances")
    w = sample_update_sequence(g, t_cap, seed)
    bot, top = order_extremes(m, g)
    fam, rule, jb, h, beta = kernel_params(m)
    tau = _kernels.pair_coalescence(bot.copy(), top.copy(), g.neighbor_table(),
                                    w.times, w.sites, w.us, fam, rule, jb, h, beta)
    return None if tau < 0 else float(tau)


def batch_event_arrays(g: TorusGeometry, t_end: float, seed: int, replicas: int,
                       stream: int = 0, sites_subset: np.ndarray | None = None):
    """Concatenated per-replica event arrays plus offsets, one seeded draw.

    Replica r occupies [offsets[r], offsets[r+1]). The layout is a fixed
    function of (seed, stream, replicas), independent of how callers chunk
    or parallelize the replay.
    """
    rng = child_rng(seed, 1, stream)
    n_active = g.n_sites if sites_subset is None else len(sites_subset)
    counts = rng.poisson(n_active * t_end, size=replicas)
    offsets = np.zeros(replicas + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    total = int(offsets[-1])
    times = rng.random(total) * t_end
    for r in range(replicas):
        seg = times[offsets[r]:offsets[r + 1]]
        seg.sort()
    labels = rng.integers(0, n_active, size=total)
    sites = labels if sites_subset is None else np.asarray(sites_subset, dtype=np.int64)[labels]
    us = rng.random(total)
    return offsets, times, sites.astype(np.int64), us


def _cftp_segment(g: TorusGeometry, seed: int, level: int,
                  sites_subset: np.ndarray | None):
    """Events of the window segment (-2^level, -2^(level-1)] (level 0: (-1, 0])."""
    duration = 1.0 if level == 0 else float(2 ** (level - 1))
    rng = child_rng(seed, 2, level)
    n_active = g.n_sites if sites_subset is None else len(sites_subset)
    count = int(rng.poisson(n_active * duration))
    times = np.sort(rng.random(count)) * duration
    labels = rng.integers(0, n_active, size=count)
    sites = labels if sites_subset is None else np.asarray(sites_subset, dtype=np.int64)[labels]
    us = rng.random(count)
    return times, sites.astype(np.int64), us


def cftp_sample(m: ModelSpec, g: TorusGeometry, seed: int,
                max_doublings: int = 40,
                pinned: dict[int, int] | None = None) -> SpinConfiguration:
    """Exact stationary sample by coupling from the past.

    Doubling windows -1, -2, -4, ...; the randomness of each window segment
    is cached by level, so earlier randomness is reused unchanged as the
    window grows (the correctness requirement of the scheme). Monotone
    instances only: the extreme starts sandwich every trajectory, and their
    agreement at time 0 yields the stationary draw.

    With `pinned`, the listed sites are frozen to the given spins and the
    sample is drawn from the stationary law of the chain on the remaining
    sites (the conditional Gibbs measure given the pinned spins).
    """
    if not m.is_monotone(g):
        raise ValueError("coupling from the past requires a monotone instance")
    subset = None
    if pinned:
        mask = np.ones(g.n_sites, dtype=bool)
        for v in pinned:
            mask[v] = False
        subset = np.flatnonzero(mask)
    bot, top = order_extremes(m, g)
    if pinned:
        for v, s in pinned.items():
            if s not in (-1, 1):
                raise ValueError("pinned spins must be +1 or -1")
            bot[v] = s
            top[v] = s
    fam, rule, jb, h, beta = kernel_params(m)
    nbr = g.neighbor_table()
    segments = []
    for level in range(max_doublings + 1):
        segments.append(_cftp_segment(g, seed, level, subset))
        sa = bot.copy()
        sb = top.copy()
        for times, sites, us in reversed(segments):
            _kernels.replay(sa, nbr, sites, us, fam, rule, jb, h, beta)
            _kernels.replay(sb, nbr, sites, us, fam, rule, jb, h, beta)
        if np.array_equal(sa, sb):
            return SpinConfiguration.from_array(sa)
    raise RuntimeError(f"no coalescence within 2^{max_doublings} time units before 0")
