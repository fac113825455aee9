"""Exact finite-state analysis of the single-site dynamics.

For lattices small enough to enumerate, the generator L acts on functions
of the configuration space by (Lf)(x) = sum_v c(v, x) (f(x^v) - f(x)).
Reversibility makes D^(1/2) L D^(-1/2) symmetric (D = diag(mu)), so a dense
symmetric eigensolve yields the full spectrum; the spectral gap is the
smallest positive eigenvalue of -L, and heat-kernel rows, worst-start
distances, and Dirichlet forms all follow from the same decomposition.

Hardcore chains are built on the restricted space of independent sets;
excluded configurations never enter the matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.sparse

from .lattice import CapExceeded, SpinConfiguration, TorusGeometry, as_region
from .model import GibbsTable, ModelSpec, gibbs_table
from .rng import child_rng

ORACLE_CAP = 14

_NORM_TOL = 1e-9


@dataclass(frozen=True)
class GeneratorMatrix:
    """Exact generator on the enumerated (restricted) state space.

    states holds the packed configurations indexing the rows; mu is the
    stationary law on those states; rates is the sparse generator with
    nonnegative off-diagonal single-flip rates and row sums zero.
    """

    n_sites: int
    states: np.ndarray
    rates: scipy.sparse.csr_matrix
    mu: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_states(self) -> int:
        return len(self.states)

    def state_index(self, x: SpinConfiguration | int) -> int:
        bits = x.bits if isinstance(x, SpinConfiguration) else int(x)
        i = int(np.searchsorted(self.states, bits))
        if i >= len(self.states) or self.states[i] != bits:
            raise KeyError("configuration is not in the generator's state space")
        return i


@dataclass(frozen=True)
class SpectralData:
    """Eigendecomposition of -D^(1/2) L D^(-1/2) (ascending eigenvalues)."""

    gen: GeneratorMatrix
    eigenvalues: np.ndarray
    basis: np.ndarray
    sqrt_mu: np.ndarray

    @property
    def gap(self) -> float:
        return float(self.eigenvalues[1])


def _spin_matrix_for(states: np.ndarray, n: int) -> np.ndarray:
    bits = (states[:, None] >> np.arange(n, dtype=np.int64)[None, :]) & 1
    return (bits.astype(np.int8) * 2 - 1)


def _rate_table(m: ModelSpec, g: TorusGeometry, spins: np.ndarray) -> np.ndarray:
    """(n_states, n_sites) single-flip rates, zero for flips into excluded states."""
    nbr = g.neighbor_table()
    n = g.n_sites
    s64 = spins.astype(np.int64)
    nsum = s64[:, nbr].sum(axis=2)
    if m.family == "hardcore":
        occ = spins > 0
        blocked = occ[:, nbr].any(axis=2)
        p_occ = m.beta / (1.0 + m.beta)
        if m.rate_rule == "heat_bath":
            up = np.where(blocked, 0.0, p_occ)
            down = 1.0 - np.where(blocked, 0.0, p_occ)
        else:
            up = np.where(blocked, 0.0, min(1.0, m.beta))
            down = np.where(blocked, 1.0, min(1.0, 1.0 / m.beta))
        return np.where(occ, down, up)
    lam = -2.0 * s64 * (m.coupling_sign * m.beta * nsum + m.h)
    if m.rate_rule == "heat_bath":
        return 1.0 / (1.0 + np.exp(-lam))
    return np.minimum(1.0, np.exp(lam))


def build_generator(m: ModelSpec, g: TorusGeometry, cap: int = ORACLE_CAP,
                    table: GibbsTable | None = None) -> GeneratorMatrix:
    """Assemble the exact generator. Refuses lattices above the cap."""
    n = g.n_sites
    if n > cap:
        raise CapExceeded(f"exact generator on {n} sites exceeds cap {cap}")
    if table is None:
        table = gibbs_table(m, g)
    states = table.support_states.astype(np.int64)
    mu = table.probs[states]
    spins = _spin_matrix_for(states, n)
    rates = _rate_table(m, g, spins)
    targets = states[:, None] ^ (np.int64(1) << np.arange(n, dtype=np.int64))[None, :]
    pos = np.searchsorted(states, targets)
    pos_c = np.minimum(pos, len(states) - 1)
    valid = states[pos_c] == targets
    if np.any(~valid & (rates > 1e-300)):
        raise AssertionError("positive rate into an excluded state")
    rows = np.repeat(np.arange(len(states)), n)[valid.ravel()]
    cols = pos_c.ravel()[valid.ravel()]
    vals = rates.ravel()[valid.ravel()]
    keep = vals > 0
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    diag = np.zeros(len(states))
    np.add.at(diag, rows, vals)
    L = scipy.sparse.coo_matrix(
        (np.concatenate([vals, -diag]),
         (np.concatenate([rows, np.arange(len(states))]),
          np.concatenate([cols, np.arange(len(states))]))),
        shape=(len(states), len(states))).tocsr()
    return GeneratorMatrix(n, states, L, mu)


def stationarity_residual(gen: GeneratorMatrix) -> float:
    """max |mu^T L|, zero in exact arithmetic for a reversible chain."""
    return float(np.abs(gen.rates.T @ gen.mu).max())


def spectral_data(gen: GeneratorMatrix) -> SpectralData:
    cached = gen._cache.get("spectral")
    if cached is not None:
        return cached
    sq = np.sqrt(gen.mu)
    A = (-gen.rates).multiply(sq[:, None]).multiply(1.0 / sq[None, :]).toarray()
    A = 0.5 * (A + A.T)
    lam, vec = scipy.linalg.eigh(A)
    lam[np.abs(lam) < 1e-12] = np.maximum(lam[np.abs(lam) < 1e-12], 0.0)
    sd = SpectralData(gen, lam, vec, sq)
    gen._cache["spectral"] = sd
    return sd


def spectral_gap_exact(m: ModelSpec, g: TorusGeometry, cap: int = ORACLE_CAP) -> float:
    """Smallest positive eigenvalue of -L (the relaxation rate)."""
    return spectral_data(build_generator(m, g, cap=cap)).gap


def product_generator(a: GeneratorMatrix, b: GeneratorMatrix) -> GeneratorMatrix:
    """Generator of two chains run independently side by side.

    The state space is the product, the stationary law the tensor product,
    and the generator the Kronecker sum L_a (+) L_b, which is exactly the
    dynamics on the disjoint union of the two lattices. Eigenvalues add
    pairwise, so the product gap is the smaller factor gap.
    """
    ia = scipy.sparse.identity(a.n_states, format="csr")
    ib = scipy.sparse.identity(b.n_states, format="csr")
    L = scipy.sparse.kron(a.rates, ib, format="csr") + scipy.sparse.kron(ia, b.rates, format="csr")
    mu = np.kron(a.mu, b.mu)
    states = (a.states[:, None] << b.n_sites | b.states[None, :]).ravel()
    order = np.argsort(states, kind="stable")
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    perm = scipy.sparse.csr_matrix(
        (np.ones(order.size), (inv, np.arange(order.size))),
        shape=(order.size, order.size))
    return GeneratorMatrix(a.n_sites + b.n_sites, states[order],
                           (perm @ L @ perm.T).tocsr(), mu[order])


def heat_kernel_row(sd: SpectralData, x0, t: float) -> np.ndarray:
    """P_{x0}(X_t = .) over the generator's state list."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    i = sd.gen.state_index(x0) if not isinstance(x0, (int, np.integer)) else int(x0)
    w = sd.basis[i] * np.exp(-sd.eigenvalues * t)
    row = (sd.basis @ w) * sd.sqrt_mu / sd.sqrt_mu[i]
    low = row.min()
    if low < -1e-9:
        raise ArithmeticError(f"heat kernel row dips to {low}; eigensolve unreliable")
    row = np.maximum(row, 0.0)
    return row / row.sum()


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Total variation distance between two laws on the same state list."""
    for v in (p, q):
        if abs(float(np.sum(v)) - 1.0) > _NORM_TOL or np.any(v < -_NORM_TOL):
            raise ValueError("arguments must be probability vectors")
    return 0.5 * float(np.abs(p - q).sum())


def l2_distance(p: np.ndarray, mu: np.ndarray) -> float:
    """Chi-square style L2(mu) norm of p/mu - 1."""
    if abs(float(np.sum(p)) - 1.0) > _NORM_TOL or abs(float(np.sum(mu)) - 1.0) > _NORM_TOL:
        raise ValueError("arguments must be probability vectors")
    mask = mu > 0
    if np.any(p[~mask] > _NORM_TOL):
        raise ValueError("p places mass outside the support of mu")
    d = p[mask] / mu[mask] - 1.0
    return float(np.sqrt(np.sum(mu[mask] * d * d)))


def dirichlet_form(gen: GeneratorMatrix, f: np.ndarray) -> tuple[float, float, float]:
    """(energy, variance, entropy) of a function on the state space.

    energy = (1/2) sum_x mu(x) sum_v c(v,x) (f(x^v) - f(x))^2, the
    quadratic form of -L; entropy is Ent(f^2) with the convention
    0 log 0 = 0.
    """
    f = np.asarray(f, dtype=np.float64)
    coo = gen.rates.tocoo()
    off = coo.row != coo.col
    r, c, v = coo.row[off], coo.col[off], coo.data[off]
    energy = 0.5 * float(np.sum(gen.mu[r] * v * (f[c] - f[r]) ** 2))
    mean = float(np.dot(gen.mu, f))
    variance = float(np.dot(gen.mu, (f - mean) ** 2))
    sq = f * f
    mean_sq = float(np.dot(gen.mu, sq))
    if mean_sq <= 0:
        return energy, variance, 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        logterm = np.where(sq > 0, np.log(sq / mean_sq), 0.0)
    entropy = float(np.dot(gen.mu, sq * logterm))
    return energy, variance, max(entropy, 0.0)


@dataclass(frozen=True)
class LogSobolevEstimate:
    alpha: float
    restart_values: np.ndarray
    gap: float

    @property
    def certificate_ok(self) -> bool:
        # alpha is an optimizer upper estimate, so when the true constant
        # sits exactly at gap / 2 the estimate can overshoot by the solver
        # tolerance; absorb that with a relative margin
        return 0.0 < 2.0 * self.alpha <= self.gap * (1.0 + 1e-6) + 1e-12


def log_sobolev_upper_estimate(gen: GeneratorMatrix, restarts: int = 12,
                               seed: int = 0, maxiter: int = 800) -> LogSobolevEstimate:
    """Multistart upper estimate of the log-Sobolev constant.

    Minimizes energy(f) / Ent(f^2) with analytic gradients from random
    starts plus the spectral-gap eigenvector. Any admissible f gives an
    upper bound on the constant, so the returned value is a certified
    upper estimate; the 2 * alpha <= gap ordering is checked downstream.

    Capped at 10 sites: the optimizer works on the full 2^n state space
    and the multistart loop is much heavier per state than a single
    eigensolve.
    """
    if gen.n_sites > 10:
        raise CapExceeded(
            f"log-Sobolev estimate on {gen.n_sites} sites exceeds cap 10")
    sd = spectral_data(gen)
    mu = gen.mu
    coo = gen.rates.tocoo()
    off = coo.row != coo.col
    r, c, v = coo.row[off], coo.col[off], coo.data[off]
    weights = mu[r] * v

    def ratio_and_grad(f):
        df = f[c] - f[r]
        energy = 0.5 * float(np.sum(weights * df * df))
        grad_e = np.zeros_like(f)
        np.add.at(grad_e, r, -weights * df)
        np.add.at(grad_e, c, weights * df)
        sq = f * f
        mean_sq = float(np.dot(mu, sq))
        if mean_sq <= 1e-300:
            return np.inf, np.zeros_like(f)
        with np.errstate(divide="ignore"):
            logterm = np.where(sq > 0, np.log(sq / mean_sq), 0.0)
        ent = float(np.dot(mu, sq * logterm))
        if ent <= 1e-12:
            return np.inf, np.zeros_like(f)
        grad_ent = 2.0 * mu * f * logterm
        val = energy / ent
        grad = (grad_e * ent - energy * grad_ent) / (ent * ent)
        return val, grad

    rng = child_rng(seed, 3)
    starts = [sd.basis[:, 1] / sd.sqrt_mu + 1.0]
    for _ in range(max(0, restarts - 1)):
        starts.append(rng.standard_normal(gen.n_states) + rng.normal(0, 2))
    values = []
    for f0 in starts:
        res = scipy.optimize.minimize(ratio_and_grad, f0, jac=True,
                                      method="L-BFGS-B",
                                      options={"maxiter": maxiter})
        val = float(res.fun)
        if math.isfinite(val) and val > 0:
            values.append(val)
    if not values:
        raise ArithmeticError("log-Sobolev search failed from every start")
    values = np.array(sorted(values))
    return LogSobolevEstimate(float(values[0]), values, sd.gap)


def _pattern_index(states: np.ndarray, region: np.ndarray) -> np.ndarray:
    pat = np.zeros(len(states), dtype=np.int64)
    for j, site in enumerate(region):
        pat |= ((states >> int(site)) & 1) << j
    return pat


def projected_law(gen: GeneratorMatrix, p: np.ndarray, region: Iterable[int]) -> np.ndarray:
    """Push a law on configurations forward to the spin patterns of a region."""
    reg = as_region(region)
    pat = _pattern_index(gen.states, reg)
    out = np.zeros(1 << len(reg))
    np.add.at(out, pat, p)
    return out


def m_t_exact(m: ModelSpec, g: TorusGeometry, region: Iterable[int], t: float,
              cap: int = ORACLE_CAP, gen: GeneratorMatrix | None = None) -> float:
    """Worst-start L2(mu) distance of the law projected onto a region.

    max over starts x0 of || P_{x0}(X_t(region) = .) / mu_region - 1 ||
    in L2 of the projected stationary law. The maximization is exact over
    all starts in the generator's state space.
    """
    if gen is None:
        gen = build_generator(m, g, cap=cap)
    sd = spectral_data(gen)
    reg = as_region(region, g)
    pat = _pattern_index(gen.states, reg)
    n_pat = 1 << len(reg)
    proj = np.zeros((gen.n_states, n_pat))
    proj[np.arange(gen.n_states), pat] = 1.0
    mu_b = gen.mu @ proj
    w = sd.basis.T @ (sd.sqrt_mu[:, None] * proj)
    rows = (sd.basis @ (np.exp(-sd.eigenvalues * t)[:, None] * w)) / sd.sqrt_mu[:, None]
    mask = mu_b > 0
    if np.any(np.abs(rows[:, ~mask]) > 1e-9):
        raise ArithmeticError("projected kernel leaks onto impossible patterns")
    dev = rows[:, mask] / mu_b[mask][None, :] - 1.0
    dist = np.sqrt(np.maximum(0.0, (dev * dev) @ mu_b[mask]))
    return float(dist.max())


def worst_start_tv(sd: SpectralData, t: float) -> tuple[float, int]:
    """max over starts of TV(P_{x0}(X_t = .), mu), with the packed worst start."""
    scale = np.exp(-sd.eigenvalues * t)
    K = (sd.basis * scale[None, :]) @ sd.basis.T
    K *= sd.sqrt_mu[None, :] / sd.sqrt_mu[:, None]
    K = np.maximum(K, 0.0)
    K /= K.sum(axis=1, keepdims=True)
    tv = 0.5 * np.abs(K - sd.gen.mu[None, :]).sum(axis=1)
    i = int(np.argmax(tv))
    return float(tv[i]), int(sd.gen.states[i])


@dataclass(frozen=True)
class DsBoundReport:
    """Slack of the entropy-time L2 bound over starts and a time grid."""

    grid: np.ndarray
    min_slack: float
    worst_start: int
    worst_time: float
    n_starts: int

    @property
    def holds(self) -> bool:
        return self.min_slack >= 0.0


def ds_bound_check(gen: GeneratorMatrix, alpha: float, s_grid: Iterable[float]) -> DsBoundReport:
    """Check exp(1 - gap * (s - loglog(1 / mu(x0)) / (4 alpha))) against the
    exact L2 distance from every start with mu(x0) <= 1/e.

    alpha should be an upper estimate of the log-Sobolev constant: a larger
    alpha shrinks the right-hand side, so passing the check with an upper
    estimate certifies the bound with the true constant.
    """
    sd = spectral_data(gen)
    grid = np.asarray(sorted(s_grid), dtype=np.float64)
    if grid.size == 0 or grid[0] < 0:
        raise ValueError("s_grid must be nonempty and nonnegative")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    lam = sd.gap
    starts = np.flatnonzero(gen.mu <= math.exp(-1.0))
    if starts.size == 0:
        raise ValueError("no start satisfies mu(x0) <= 1/e")
    min_slack = math.inf
    worst = (int(gen.states[starts[0]]), float(grid[0]))
    for i in starts:
        burn = math.log(math.log(1.0 / gen.mu[i])) / (4.0 * alpha)
        for s in grid:
            row = heat_kernel_row(sd, int(i), float(s))
            lhs = l2_distance(row, gen.mu)
            rhs = math.exp(1.0 - lam * (s - burn))
            slack = rhs - lhs
            if slack < min_slack:
                min_slack = slack
                worst = (int(gen.states[i]), float(s))
    return DsBoundReport(grid, float(min_slack), worst[0], worst[1], int(starts.size))
