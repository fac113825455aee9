"""Compiled event-replay loops.

Every simulation path in the package funnels through these kernels. States
are int8 arrays of -1/+1, neighbor tables are int64 (n_sites, 2d), events
arrive as parallel arrays (times f64, sites int64, variates f64) already
sorted by time. Model parameters travel as scalars: family (0 Ising,
1 hardcore), rule (0 heat-bath, 1 Metropolis), jb = J * beta with J the
coupling sign, h the external field, beta the hardcore fugacity.

The shared-variate convention: heat-bath sets the spin to +1 exactly when
u < p_plus(neighbors); Metropolis flips exactly when u < flip rate. All
coupled chains consume the same (site, u) stream.
"""

from __future__ import annotations

import numba
import numpy as np

_SIG_CACHE = dict(cache=True, nogil=True)


@numba.njit(inline="always", **_SIG_CACHE)
def _update_site(state, nbr, x, u, family, rule, jb, h, beta):
    deg = nbr.shape[1]
    if family == 1:
        occ = False
        for j in range(deg):
            if state[nbr[x, j]] == 1:
                occ = True
                break
        if rule == 0:
            p = 0.0 if occ else beta / (1.0 + beta)
            state[x] = 1 if u < p else -1
        else:
            s = state[x]
            if s == -1:
                c = 0.0 if occ else min(1.0, beta)
            else:
                c = 1.0 if occ else min(1.0, 1.0 / beta)
            if u < c:
                state[x] = -s
    else:
        ssum = 0.0
        for j in range(deg):
            ssum += state[nbr[x, j]]
        f = jb * ssum + h
        if rule == 0:
            p = 1.0 / (1.0 + np.exp(-2.0 * f))
            state[x] = 1 if u < p else -1
        else:
            s = state[x]
            c = min(1.0, np.exp(-2.0 * s * f))
            if u < c:
                state[x] = -s


@numba.njit(**_SIG_CACHE)
def replay(state, nbr, sites, us, family, rule, jb, h, beta):
    for k in range(sites.shape[0]):
        _update_site(state, nbr, sites[k], us[k], family, rule, jb, h, beta)


@numba.njit(**_SIG_CACHE)
def replay_rows(states, nbr, sites, us, family, rule, jb, h, beta):
    """Replay the same event list over every row of a (R, n) state matrix."""
    for r in range(states.shape[0]):
        row = states[r]
        for k in range(sites.shape[0]):
            _update_site(row, nbr, sites[k], us[k], family, rule, jb, h, beta)


@numba.njit(**_SIG_CACHE)
def pair_coalescence(sa, sb, nbr, times, sites, us, family, rule, jb, h, beta):
    """Coupled evolution of two chains under one stream; first agreement time.

    Returns -1.0 when the chains still differ after the last event. Once
    states agree they remain equal forever (shared variates), so the scan
    stops at the first agreement.
    """
    n = sa.shape[0]
    diff = 0
    for i in range(n):
        if sa[i] != sb[i]:
            diff += 1
    if diff == 0:
        return 0.0
    for k in range(sites.shape[0]):
        x = sites[k]
        before = sa[x] != sb[x]
        _update_site(sa, nbr, x, us[k], family, rule, jb, h, beta)
        _update_site(sb, nbr, x, us[k], family, rule, jb, h, beta)
        after = sa[x] != sb[x]
        if before and not after:
            diff -= 1
        elif after and not before:
            diff += 1
        if diff == 0:
            return times[k]
    return -1.0


@numba.njit(**_SIG_CACHE)
def coalescence_batch(offsets, times, sites, us, nbr, sa0, sb0,
                      family, rule, jb, h, beta):
    """pair_coalescence over replicas packed in concatenated event arrays."""
    reps = offsets.shape[0] - 1
    n = sa0.shape[0]
    out = np.empty(reps, dtype=np.float64)
    for r in range(reps):
        sa = sa0.copy()
        sb = sb0.copy()
        lo, hi = offsets[r], offsets[r + 1]
        out[r] = pair_coalescence(sa, sb, nbr, times[lo:hi], sites[lo:hi],
                                  us[lo:hi], family, rule, jb, h, beta)
    return out


@numba.njit(**_SIG_CACHE)
def pair_grid_spins(sa, sb, nbr, times, sites, us, grid, origin,
                    family, rule, jb, h, beta, out_a, out_b):
    """Record the two coupled chains' spins at one site over a time grid."""
    g_i = 0
    n_grid = grid.shape[0]
    for k in range(sites.shape[0]):
        t = times[k]
        while g_i < n_grid and t > grid[g_i]:
            out_a[g_i] = sa[origin]
            out_b[g_i] = sb[origin]
            g_i += 1
        x = sites[k]
        _update_site(sa, nbr, x, us[k], family, rule, jb, h, beta)
        _update_site(sb, nbr, x, us[k], family, rule, jb, h, beta)
    while g_i < n_grid:
        out_a[g_i] = sa[origin]
        out_b[g_i] = sb[origin]
        g_i += 1


@numba.njit(**_SIG_CACHE)
def pair_grid_spins_batch(offsets, times, sites, us, nbr, grid, origin,
                          sa0, sb0, family, rule, jb, h, beta):
    reps = offsets.shape[0] - 1
    out_a = np.empty((reps, grid.shape[0]), dtype=np.int8)
    out_b = np.empty((reps, grid.shape[0]), dtype=np.int8)
    for r in range(reps):
        sa = sa0.copy()
        sb = sb0.copy()
        lo, hi = offsets[r], offsets[r + 1]
        pair_grid_spins(sa, sb, nbr, times[lo:hi], sites[lo:hi], us[lo:hi],
                        grid, origin, family, rule, jb, h, beta,
                        out_a[r], out_b[r])
    return out_a, out_b


@numba.njit(**_SIG_CACHE)
def mag_grid(state, nbr, times, sites, us, grid, family, rule, jb, h, beta, out):
    """Record total magnetization at each grid time for one chain."""
    g_i = 0
    n_grid = grid.shape[0]
    for k in range(sites.shape[0]):
        t = times[k]
        while g_i < n_grid and t > grid[g_i]:
            m = 0
            for i in range(state.shape[0]):
                m += state[i]
            out[g_i] = m
            g_i += 1
        _update_site(state, nbr, sites[k], us[k], family, rule, jb, h, beta)
    while g_i < n_grid:
        m = 0
        for i in range(state.shape[0]):
            m += state[i]
        out[g_i] = m
        g_i += 1


@numba.njit(**_SIG_CACHE)
def mag_grid_batch(offsets, times, sites, us, nbr, grid, s0,
                   family, rule, jb, h, beta):
    reps = offsets.shape[0] - 1
    out = np.empty((reps, grid.shape[0]), dtype=np.int64)
    for r in range(reps):
        st = s0.copy()
        lo, hi = offsets[r], offsets[r + 1]
        mag_grid(st, nbr, times[lo:hi], sites[lo:hi], us[lo:hi], grid,
                 family, rule, jb, h, beta, out[r])
    return out


@numba.njit(**_SIG_CACHE)
def snapshot_rows(states, nbr, times, sites, us, grid, family, rule, jb, h, beta):
    """Full-state snapshots for every row; out shape (R, len(grid), n)."""
    reps = states.shape[0]
    n = states.shape[1]
    n_grid = grid.shape[0]
    out = np.empty((reps, n_grid, n), dtype=np.int8)
    for r in range(reps):
        row = states[r]
        g_i = 0
        for k in range(sites.shape[0]):
            while g_i < n_grid and times[k] > grid[g_i]:
                out[r, g_i] = row
                g_i += 1
            _update_site(row, nbr, sites[k], us[k], family, rule, jb, h, beta)
        while g_i < n_grid:
            out[r, g_i] = row
            g_i += 1
    return out


@numba.njit(**_SIG_CACHE)
def snapshot_batch(offsets, times, sites, us, nbr, grid, s0,
                   family, rule, jb, h, beta):
    """Full-state snapshots, one independent event stream per replica."""
    reps = offsets.shape[0] - 1
    n = s0.shape[0]
    n_grid = grid.shape[0]
    out = np.empty((reps, n_grid, n), dtype=np.int8)
    for r in range(reps):
        st = s0.copy()
        lo, hi = offsets[r], offsets[r + 1]
        g_i = 0
        for k in range(lo, hi):
            while g_i < n_grid and times[k] > grid[g_i]:
                out[r, g_i] = st
                g_i += 1
            _update_site(st, nbr, sites[k], us[k], family, rule, jb, h, beta)
        while g_i < n_grid:
            out[r, g_i] = st
            g_i += 1
    return out


@numba.njit(**_SIG_CACHE)
def barrier_discrepancy_scan(true_state, block_states, nbr_g, nbr_plus,
                             times, sites, us,
                             img_indptr, img_block, img_pos,
                             own_block, own_pos,
                             family, rule, jb, h, beta):
    """Tiled dynamics against the plain chain, compared after every event.

    block_states is (n_blocks, n_plus_sites); img_* give, per lattice site,
    the CSR list of (block, position) images inside enlarged blocks. The
    pulled-back configuration reads site v from its owning block's image.
    Requires every lattice site to have at most one image per block, i.e.
    block side + 2 * halo <= torus side.

    Returns the first event time at which the pulled-back state differs
    from the plain chain anywhere, or -1.0 if they agree through the end.
    """
    diff = 0
    n = true_state.shape[0]
    for v in range(n):
        if block_states[own_block[v], own_pos[v]] != true_state[v]:
            diff += 1
    first = -1.0
    if diff > 0:
        first = 0.0
        return first
    for k in range(sites.shape[0]):
        s = sites[k]
        u = us[k]
        for e in range(img_indptr[s], img_indptr[s + 1]):
            _update_site(block_states[img_block[e]], nbr_plus, img_pos[e], u,
                         family, rule, jb, h, beta)
        _update_site(true_state, nbr_g, s, u, family, rule, jb, h, beta)
        if block_states[own_block[s], own_pos[s]] != true_state[s]:
            return times[k]
    return -1.0
