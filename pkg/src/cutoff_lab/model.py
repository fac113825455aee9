"""Spin models and single-site update rates.

Three families share one interface: ferromagnetic Ising, antiferromagnetic
Ising, and the hardcore (independent set) model with occupied sites encoded
as spin +1. The unnormalized log weight of a configuration sigma is

    ising:    J * beta * sum_edges sigma(u) sigma(v) + h * sum_u sigma(u)
              with J = +1 (ferro) or -1 (antiferro),
    hardcore: log(beta) * #occupied, and exactly zero weight when two
              adjacent sites are occupied (beta is the fugacity, h must be 0).

Rates follow the convention forced by reversibility: with
R = mu(sigma^x) / mu(sigma) the heat-bath rate is R / (1 + R) and the
Metropolis rate is min(1, R). Some treatments write the exponent in these
formulas with the opposite sign, which gives the rate of flipping toward
the current state; that variant does not satisfy detailed balance with
respect to mu as written above.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import CapExceeded, SpinConfiguration, TorusGeometry

FAMILIES = ("ising_ferro", "ising_antiferro", "hardcore")
RATE_RULES = ("heat_bath", "metropolis")

GIBBS_CAP = 24


@dataclass(frozen=True)
class ModelSpec:
    """Model family plus parameters plus the single-site rate rule."""

    family: str
    beta: float
    h: float = 0.0
    rate_rule: str = "heat_bath"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.rate_rule not in RATE_RULES:
            raise ValueError(f"unknown rate rule {self.rate_rule!r}; expected one of {RATE_RULES}")
        if not math.isfinite(self.beta) or self.beta < 0:
            raise ValueError("beta must be finite and nonnegative")
        if self.family == "hardcore":
            if self.beta <= 0:
                raise ValueError("hardcore requires a positive fugacity beta")
            if self.h != 0.0:
                raise ValueError("hardcore does not take an external field")
        if not math.isfinite(self.h):
            raise ValueError("h must be finite")

    @property
    def coupling_sign(self) -> int:
        """Edge coupling sign J: +1 ferro, -1 antiferro, 0 for hardcore."""
        if self.family == "ising_ferro":
            return 1
        if self.family == "ising_antiferro":
            return -1
        return 0

    def is_monotone(self, g: TorusGeometry) -> bool:
        """Whether the shared-variate heat-bath coupling preserves an order.

        Ferro Ising is monotone in the coordinatewise order on any torus.
        Hardcore and antiferro Ising are monotone in the checkerboard order,
        which exists only when every side is even.
        """
        if self.rate_rule != "heat_bath":
            return False
        if self.family == "ising_ferro":
            return True
        return all(s % 2 == 0 for s in g.sides)


def _plus_edge_columns(g: TorusGeometry) -> np.ndarray:
    """Neighbor-table columns that enumerate each undirected edge once."""
    return g.neighbor_table()[:, 0::2]


def gibbs_log_weight(m: ModelSpec, g: TorusGeometry, x: SpinConfiguration) -> float | None:
    """Unnormalized log weight of one configuration; None marks excluded states.

    Hardcore configurations with two adjacent occupied sites have weight
    exactly zero and are reported as None rather than -inf, so that no
    infinities enter arithmetic downstream.
    """
    if x.n_sites != g.n_sites:
        raise ValueError("configuration size does not match the lattice")
    arr = x.to_array().astype(np.int64)
    plus = _plus_edge_columns(g)
    if m.family == "hardcore":
        occ = arr > 0
        if bool(np.any(occ[:, None] & occ[plus])):
            return None
        return float(np.count_nonzero(occ)) * math.log(m.beta)
    edge_sum = int((arr[:, None] * arr[plus]).sum())
    return m.coupling_sign * m.beta * edge_sum + m.h * float(arr.sum())


@dataclass(frozen=True)
class GibbsTable:
    """Exact stationary law over packed configuration indices.

    probs[i] is the stationary probability of the configuration with packed
    integer i; excluded hardcore states carry probability exactly 0.
    """

    g: TorusGeometry
    probs: np.ndarray
    log_z: float

    @property
    def support_states(self) -> np.ndarray:
        return np.flatnonzero(self.probs > 0)


def _all_spin_matrix(n: int) -> np.ndarray:
    """(2^n, n) matrix of spins, row i holding the configuration packed as i."""
    idx = np.arange(1 << n, dtype=np.uint32)
    bits = (idx[:, None] >> np.arange(n, dtype=np.uint32)[None, :]) & 1
    return (bits.astype(np.int8) * 2 - 1)


def gibbs_table(m: ModelSpec, g: TorusGeometry, cap: int = GIBBS_CAP) -> GibbsTable:
    """Enumerate the stationary law exactly. Refuses lattices above the cap."""
    n = g.n_sites
    if n > cap:
        raise CapExceeded(f"gibbs_table on {n} sites exceeds cap {cap}")
    spins = _all_spin_matrix(n)
    plus = _plus_edge_columns(g)
    if m.family == "hardcore":
        occ = spins > 0
        blocked = np.zeros(1 << n, dtype=bool)
        for k in range(plus.shape[1]):
            blocked |= (occ & occ[:, plus[:, k]]).any(axis=1)
        logw = np.where(blocked, -np.inf, occ.sum(axis=1) * math.log(m.beta))
    else:
        edge_sum = np.zeros(1 << n, dtype=np.int64)
        for k in range(plus.shape[1]):
            edge_sum += (spins.astype(np.int64) * spins[:, plus[:, k]].astype(np.int64)).sum(axis=1)
        logw = m.coupling_sign * m.beta * edge_sum + m.h * spins.sum(axis=1, dtype=np.int64)
    finite = np.isfinite(logw)
    shift = logw[finite].max()
    w = np.zeros(logw.size)
    w[finite] = np.exp(logw[finite] - shift)
    z = w.sum()
    return GibbsTable(g, w / z, float(math.log(z) + shift))


def local_gibbs_log_ratio(m: ModelSpec, g: TorusGeometry, x: SpinConfiguration, site: int) -> float | None:
    """log of mu(sigma^site) / mu(sigma); None when the flip lands on an
    excluded state, and +inf is never produced because flips out of excluded
    states are not queried by the dynamics."""
    s = x.spin(site)
    nbrs = g.neighbors(site)
    if m.family == "hardcore":
        if s == -1:
            if any(x.spin(y) == 1 for y in nbrs):
                return None
            return math.log(m.beta)
        return -math.log(m.beta)
    nbr_sum = sum(x.spin(y) for y in nbrs)
    return -2.0 * s * (m.coupling_sign * m.beta * nbr_sum + m.h)


def flip_rate(m: ModelSpec, g: TorusGeometry, x: SpinConfiguration, site: int) -> float:
    """Rate of the single-site flip at `site` from configuration `x`.

    Flips into excluded hardcore states have rate exactly 0; flips out of
    excluded states vacate at rate 1 under either rule (such states are
    never visited by a chain started in the support).
    """
    ratio = local_gibbs_log_ratio(m, g, x, site)
    if ratio is None:
        return 0.0
    if m.family == "hardcore" and x.spin(site) == 1:
        if any(x.spin(y) == 1 for y in g.neighbors(site)):
            return 1.0
    if m.rate_rule == "heat_bath":
        return 1.0 / (1.0 + math.exp(-ratio))
    return min(1.0, math.exp(ratio))


def heat_bath_p_plus(m: ModelSpec, g: TorusGeometry, x: SpinConfiguration, site: int) -> float:
    """Conditional probability of spin +1 at `site` given its neighbors.

    The shared-variate update convention sets the spin to +1 exactly when
    the update variate u falls below this value.
    """
    nbrs = g.neighbors(site)
    if m.family == "hardcore":
        if any(x.spin(y) == 1 for y in nbrs):
            return 0.0
        return m.beta / (1.0 + m.beta)
    nbr_sum = sum(x.spin(y) for y in nbrs)
    f = m.coupling_sign * m.beta * nbr_sum + m.h
    return 1.0 / (1.0 + math.exp(-2.0 * f))


def check_detailed_balance(m: ModelSpec, g: TorusGeometry, samples: int | None = None,
                           seed: int = 0, cap: int = GIBBS_CAP) -> float:
    """Largest reversibility residual |mu(x) c(v,x) - mu(x^v) c(v,x^v)|.

    Exhaustive over all (configuration, site) pairs when the state space is
    small enough, otherwise over `samples` seeded draws. Excluded hardcore
    configurations are skipped; flips into them contribute zero from the
    allowed side by construction.
    """
    table = gibbs_table(m, g, cap=cap)
    n = g.n_sites
    total_pairs = (1 << n) * n
    worst = 0.0
    if samples is None or total_pairs <= samples:
        states = table.support_states
        sites = range(n)
        pairs = ((int(b), v) for b in states for v in sites)
    else:
        rng = np.random.default_rng(seed)
        states = table.support_states
        bs = rng.choice(states, size=samples)
        vs = rng.integers(0, n, size=samples)
        pairs = zip((int(b) for b in bs), (int(v) for v in vs))
    for b, v in pairs:
        x = SpinConfiguration(n, b)
        y = x.flip(v)
        lhs = table.probs[x.bits] * flip_rate(m, g, x, v)
        rhs = table.probs[y.bits] * flip_rate(m, g, y, v)
        worst = max(worst, abs(lhs - rhs))
    return worst


def parity_mask(g: TorusGeometry) -> np.ndarray:
    """Checkerboard signs (+1 on even coordinate sum) for bipartite tori.

    Requires every side even; odd cycles break the two-coloring.
    """
    if any(s % 2 for s in g.sides):
        raise ValueError("checkerboard parity requires all sides even")
    return np.where(g.coords_array().sum(axis=1) % 2 == 0, 1, -1).astype(np.int8)


def partial_order_leq(a, b, mask: np.ndarray | None = None) -> bool:
    """Coordinatewise order a <= b, optionally twisted by a parity mask.

    With a mask the comparison is a <= b on +1 sites and a >= b on -1
    sites, the order in which hardcore and antiferro heat-bath dynamics
    are monotone on bipartite tori.
    """
    ax = a.to_array() if isinstance(a, SpinConfiguration) else np.asarray(a)
    bx = b.to_array() if isinstance(b, SpinConfiguration) else np.asarray(b)
    if ax.shape != bx.shape:
        raise ValueError("configurations differ in size")
    if mask is None:
        return bool(np.all(ax <= bx))
    return bool(np.all(ax * mask <= bx * mask))


def order_extremes(m: ModelSpec, g: TorusGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Bottom and top states of the order in which the model is monotone.

    Ferro Ising: all-minus and all-plus. Hardcore and antiferro on even
    tori: the two checkerboard states (in the twisted order the top state
    is +1 on even-parity sites and -1 on odd ones).
    """
    if m.family == "ising_ferro":
        bot = np.full(g.n_sites, -1, dtype=np.int8)
        top = np.full(g.n_sites, 1, dtype=np.int8)
        return bot, top
    mask = parity_mask(g)
    return (-mask).copy(), mask.copy()
