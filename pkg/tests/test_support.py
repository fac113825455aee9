import numpy as np
import pytest

from cutoff_lab.dynamics import (UpdateSequence, apply_updates,
                                 sample_update_sequence)
from cutoff_lab.lattice import CapExceeded, build_torus
from cutoff_lab.model import ModelSpec
from cutoff_lab.support import (BlockPartition, classify_sparse,
                                coupling_discrepancy, default_sparse_thresholds,
                                default_tiling, exact_support,
                                run_barrier_dynamics, support_map,
                                support_superset_blocks,
                                support_superset_paths)


def test_partition_validation():
    g = build_torus([12])
    with pytest.raises(ValueError):
        BlockPartition(g, 5, 1)
    with pytest.raises(ValueError):
        BlockPartition(g, 1, 0)
    with pytest.raises(ValueError):
        BlockPartition(g, 4, -1)
    p = BlockPartition(g, 4, 2)
    assert p.n_blocks == 3
    assert p.plus_geometry.n_sites == 8


def test_whole_torus_block_matches_plain_dynamics():
    g = build_torus([3, 3])
    m = ModelSpec("ising_ferro", 0.5, h=0.1)
    p = BlockPartition(g, 3, 0)
    assert p.n_blocks == 1
    rng = np.random.default_rng(4)
    for s in range(5):
        w = sample_update_sequence(g, 1.2, seed=s)
        x0 = rng.choice(np.array([-1, 1], dtype=np.int8), size=9)
        tiled = run_barrier_dynamics(m, p, x0, w).pulled_back()
        plain = apply_updates(m, g, x0, w)
        assert tiled == plain


def _footprint(p, blk):
    """Lattice sites the enlarged block torus reads from."""
    g = p.g
    origin = p.block_origin(blk)
    axes = []
    for k in range(g.dimension):
        lo = origin[k] - p.halo
        axes.append({(lo + j) % g.sides[k]
                     for j in range(p.block_side + 2 * p.halo)})
    sites = set()
    for v in range(g.n_sites):
        if all(g.site_coords(v)[k] in axes[k] for k in range(g.dimension)):
            sites.add(v)
    return sites


def test_barrier_output_is_local_to_footprint():
    g = build_torus([12])
    m = ModelSpec("ising_ferro", 0.6)
    p = BlockPartition(g, 3, 2)
    rng = np.random.default_rng(7)
    for s in range(4):
        w = sample_update_sequence(g, 1.0, seed=s)
        x0 = rng.choice(np.array([-1, 1], dtype=np.int8), size=12)
        x1 = x0.copy()
        x1[0] = -x1[0]
        a = run_barrier_dynamics(m, p, x0, w).pulled_back()
        b = run_barrier_dynamics(m, p, x1, w).pulled_back()
        for v in range(12):
            if 0 not in _footprint(p, p.block_of_site(v)):
                assert a.spin(v) == b.spin(v)


def test_paths_closure_golden():
    g = build_torus([6])
    w = UpdateSequence(g, 2.0, np.array([0.5, 1.0, 1.5]),
                       np.array([2, 3, 2]), np.array([0.3, 0.6, 0.9]))
    sup = support_superset_paths(g, w)
    assert set(sup.sites) == {0, 1, 3, 4, 5}
    full = support_superset_paths(g, w, self_reading=True)
    assert set(full.sites) == set(range(6))


def test_single_update_erases_exactly_one_site():
    g = build_torus([5])
    w = UpdateSequence(g, 1.0, np.array([0.4]), np.array([3]),
                       np.array([0.5]))
    sup = support_superset_paths(g, w)
    assert set(sup.sites) == {0, 1, 2, 4}
    assert 3 not in sup
    assert set(support_superset_paths(g, w, self_reading=True).sites) == set(range(5))


def test_empty_stream_supports_are_everything():
    g = build_torus([6])
    m = ModelSpec("ising_ferro", 0.4)
    w = UpdateSequence(g, 0.0, np.array([]), np.array([], dtype=np.int64),
                       np.array([]))
    assert set(support_superset_paths(g, w).sites) == set(range(6))
    assert set(exact_support(m, g, w).sites) == set(range(6))
    p = BlockPartition(g, 3, 0)
    assert set(support_superset_blocks(m, p, w).sites) == set(range(6))


def test_block_certificate_preconditions():
    g = build_torus([12])
    w = sample_update_sequence(g, 1.0, seed=0)
    p = BlockPartition(g, 3, 1)
    with pytest.raises(ValueError):
        support_superset_blocks(ModelSpec("ising_ferro", 0.4,
                                          rate_rule="metropolis"), p, w)
    # base torus side is even but the enlarged block side 3 + 2 is odd,
    # so the checkerboard order does not exist there
    with pytest.raises(ValueError):
        support_superset_blocks(ModelSpec("ising_antiferro", 0.4), p, w)
    even = BlockPartition(g, 4, 1)
    sup = support_superset_blocks(ModelSpec("ising_antiferro", 0.4), even, w)
    assert sup.method == "blocks"


def test_exact_support_within_paths_closure():
    rng = np.random.default_rng(11)
    for k in range(30):
        n = int(rng.integers(4, 9))
        g = build_torus([n])
        family = ("ising_ferro", "ising_antiferro", "hardcore")[k % 3]
        rule = ("heat_bath", "metropolis")[k % 2]
        m = ModelSpec(family, float(rng.uniform(0.1, 0.8)),
                      rate_rule=rule)
        w = sample_update_sequence(g, float(rng.uniform(0.2, 1.5)),
                                   seed=1000 + k)
        exact = exact_support(m, g, w)
        paths = support_superset_paths(g, w,
                                       self_reading=(rule == "metropolis"))
        assert set(exact.sites) <= set(paths.sites)


def test_tiled_exact_support_within_block_certificate():
    g = build_torus([8])
    m = ModelSpec("ising_ferro", 0.5)
    p = BlockPartition(g, 4, 1)
    for s in range(6):
        w = sample_update_sequence(g, 2.0, seed=40 + s)
        exact = exact_support(m, p, w)
        blocks = support_superset_blocks(m, p, w)
        assert set(exact.sites) <= set(blocks.sites)


def test_support_map_fraction_curve():
    g = build_torus([12])
    m = ModelSpec("ising_ferro", 0.3)
    p = BlockPartition(g, 3, 1)
    grid = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0]
    sm = support_map(m, p, grid, seed=5)
    frac = sm.fraction_curve()
    assert np.all(np.diff(frac) <= 1e-12)
    for i, t in enumerate(grid):
        assert abs(frac[i] - len(sm.support_at(t).sites) / 12) < 1e-12
    with pytest.raises(ValueError):
        support_map(m, p, [0.0, 1.0], seed=5)


def test_classify_sparse_translation_invariance():
    g = build_torus([8, 8])
    base = [0, 1, 8, 36]
    thresholds = (3, 3, 2)
    rep = classify_sparse(g, base, thresholds)
    assert rep.sparse and rep.n_components == 2
    for dr, dc in [(2, 3), (5, 1), (7, 7)]:
        shifted = [g.site_index([(v // 8 + dr) % 8, (v % 8 + dc) % 8])
                   for v in base]
        rep2 = classify_sparse(g, shifted, thresholds)
        assert rep2.sparse == rep.sparse
        assert rep2.n_components == rep.n_components
        assert sorted(rep2.component_sizes) == sorted(rep.component_sizes)
        assert sorted(rep2.diameters) == sorted(rep.diameters)


def test_classify_sparse_violations_are_reported():
    g = build_torus([8, 8])
    rep = classify_sparse(g, [0, 1, 8, 36], (1, 3, 2))
    assert not rep.sparse and rep.first_violation == "diameter"
    rep = classify_sparse(g, [0, 1, 8, 36], (3, 3, 1))
    assert not rep.sparse and rep.first_violation == "count"


def test_desk_scale_defaults():
    g = build_torus([128, 128])
    assert default_tiling(g) == (16, 11)
    assert default_sparse_thresholds(g) == (115, 95, 1)
    g16 = build_torus([16, 16])
    b, w = default_tiling(g16)
    assert 16 % b == 0


def test_coupling_discrepancy_report():
    g = build_torus([12])
    m = ModelSpec("ising_ferro", 0.4)
    p = BlockPartition(g, 4, 2)
    rep = coupling_discrepancy(m, p, 1.5, replicas=200, seed=3)
    assert rep.replicas == 200
    assert 0.0 <= rep.ci_low <= rep.fraction <= rep.ci_high <= 1.0
    assert len(rep.first_divergence_times) == 200
    assert abs(rep.fraction - np.mean(rep.first_divergence_times >= 0)) < 1e-12
    with pytest.raises(ValueError):
        coupling_discrepancy(m, BlockPartition(g, 6, 4), 1.0, 10, 0)


def test_exact_support_cap():
    g = build_torus([25])
    m = ModelSpec("ising_ferro", 0.4)
    w = sample_update_sequence(g, 0.1, seed=0)
    with pytest.raises(CapExceeded):
        exact_support(m, g, w)
