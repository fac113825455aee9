import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cutoff_lab.lattice import (CapExceeded, SpinConfiguration, build_torus,
                                enumerate_configurations, region_components,
                                region_diameter, region_min_distance,
                                torus_distance)


def test_build_torus_basics():
    g = build_torus([4, 6])
    assert g.n_sites == 24
    assert g.dimension == 2
    nbr = g.neighbor_table()
    assert nbr.shape == (24, 4)
    for v in range(g.n_sites):
        assert len(set(nbr[v])) == 4


def test_build_torus_rejects_tiny_sides():
    with pytest.raises(ValueError):
        build_torus([2, 4])
    with pytest.raises(ValueError):
        build_torus([])


def test_neighbor_table_symmetric():
    g = build_torus([5, 3])
    nbr = g.neighbor_table()
    for u in range(g.n_sites):
        for v in nbr[u]:
            assert u in nbr[v]


def test_torus_distance_cycle():
    g = build_torus([10])
    assert torus_distance(g, 0, 1) == 1
    assert torus_distance(g, 0, 5) == 5
    assert torus_distance(g, 0, 7) == 3
    assert torus_distance(g, 3, 3) == 0


def test_torus_distance_2d_wraps():
    g = build_torus([4, 6])
    a = 0
    b = g.site_index((3, 5))
    assert torus_distance(g, a, b) == 1 + 1


def test_coords_roundtrip():
    g = build_torus([3, 4, 5])
    coords = g.coords_array()
    for v in (0, 7, 59):
        assert g.site_index(tuple(coords[v])) == v


def test_enumerate_configurations_count():
    g = build_torus([4])
    confs = list(enumerate_configurations(g))
    assert len(confs) == 16
    packed = {c.bits for c in confs}
    assert packed == set(range(16))


def test_enumeration_cap():
    g = build_torus([5, 5])
    with pytest.raises(CapExceeded):
        list(enumerate_configurations(g))


def test_spin_configuration_pack_unpack():
    arr = np.array([1, -1, -1, 1, 1], dtype=np.int8)
    c = SpinConfiguration.from_array(arr)
    assert np.array_equal(c.to_array(), arr)
    assert c.bits == 0b11001


def _brute_components(g, region, linkage):
    """Reference implementation: BFS over the <= linkage proximity graph."""
    region = sorted(region)
    seen = set()
    comps = []
    for start in region:
        if start in seen:
            continue
        comp, queue = {start}, [start]
        while queue:
            u = queue.pop()
            for v in region:
                if v not in comp and torus_distance(g, u, v) <= linkage:
                    comp.add(v)
                    queue.append(v)
        seen |= comp
        comps.append(sorted(comp))
    return sorted(comps)


@settings(max_examples=30, deadline=None)
@given(st.data())
def test_region_components_matches_brute_force(data):
    g = build_torus([7, 5])
    sites = data.draw(st.sets(st.integers(0, g.n_sites - 1), max_size=12))
    linkage = data.draw(st.integers(1, 4))
    got = sorted(sorted(int(x) for x in comp)
                 for comp in region_components(g, sites, linkage))
    assert got == _brute_components(g, sites, linkage)


def test_region_components_partition():
    g = build_torus([8])
    region = [0, 1, 2, 5, 6]
    comps = region_components(g, region, 1)
    flat = sorted(int(v) for comp in comps for v in comp)
    assert flat == region
    assert sorted(map(len, comps)) == [2, 3]


def test_region_diameter_and_separation():
    g = build_torus([12])
    assert region_diameter(g, [0]) == 0
    assert region_diameter(g, [0, 3]) == 3
    assert region_diameter(g, [0, 11]) == 1
    assert region_min_distance(g, [0, 1], [5, 6]) == 4
