import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mosaicroute.errors import DomainError
from mosaicroute.router import (
    check_mappable,
    compute_occupancy,
    is_legal_path,
    path_turns,
    route_axon,
)
from mosaicroute.topology import (
    GridConfig,
    NeuronId,
    TileKind,
    build_lattice,
    default_placement,
    input_mask,
    input_placement,
)

from oracles import brute_force_occupancy, independent_union


def lattice(rows, cols, npt=2, nt_in=None, rt=64):
    return build_lattice(GridConfig(rows, cols, npt, nt_in or npt * 8, rt))


def test_local_destination_gives_empty_tree():
    lat = lattice(3, 3)
    tree = route_axon(NeuronId((1, 1), 0), {(1, 1)}, lat)
    assert tree.tiles == frozenset()
    assert len(tree) == 0


def test_adjacent_destination_uses_shared_rt0():
    lat = lattice(3, 3)
    tree = route_axon(NeuronId((0, 0), 0), {(0, 1)}, lat)
    assert len(tree) == 1
    (t,) = tree.tiles
    assert t.kind is TileKind.RT0 and (t.x, t.y) == (1, 0)


def test_same_column_destinations_share_prefix():
    lat = lattice(4, 4)
    src = NeuronId((0, 0), 0)
    a, b = (2, 2), (3, 2)
    tree = route_axon(src, {a, b}, lat)
    ta = route_axon(src, {a}, lat)
    tb = route_axon(src, {b}, lat)
    assert len(tree) < len(ta) + len(tb)
    assert tree.tiles == ta.tiles | tb.tiles
    # horizontal run and the turning RT1 are common to both
    turn = path_turns(tree.paths[a])[0]
    assert turn.kind is TileKind.RT1
    assert turn in ta.tiles and turn in tb.tiles
    # the branch: the shorter path is a prefix of the longer one
    assert tree.paths[b][: len(tree.paths[a])] == tree.paths[a]


def test_empty_destination_set_rejected():
    with pytest.raises(DomainError):
        route_axon(NeuronId((0, 0), 0), set(), lattice(2, 2))


def test_out_of_grid_destination_rejected():
    with pytest.raises(DomainError):
        route_axon(NeuronId((0, 0), 0), {(5, 5)}, lattice(2, 2))


def _random_instances(n, seed, max_side=4):
    rng = np.random.default_rng(seed)
    shapes = [(r, c) for r in range(2, max_side + 1) for c in range(2, max_side + 1)] + [(1, 2), (2, 1)]
    for _ in range(n):
        r, c = shapes[rng.integers(len(shapes))]
        lat = lattice(r, c)
        tiles = list(itertools.product(range(r), range(c)))
        src = tiles[rng.integers(len(tiles))]
        k = int(rng.integers(1, len(tiles) + 1))
        dests = {tiles[i] for i in rng.choice(len(tiles), size=k, replace=False)}
        yield lat, NeuronId(src, 0), dests


def test_every_tree_path_is_legal():
    for lat, src, dests in _random_instances(200, seed=1):
        tree = route_axon(src, dests, lat)
        for d, path in tree.paths.items():
            assert is_legal_path(path), (src, d, path)
            assert set(path) <= tree.tiles
            for t in path:
                assert t.kind is not TileKind.NT
            for t in path_turns(path):
                assert t.kind is TileKind.RT1


def test_tree_equals_union_of_independent_paths():
    for lat, src, dests in _random_instances(200, seed=2):
        tree = route_axon(src, dests, lat)
        assert tree.tiles == independent_union(src, dests, lat)


def test_paths_start_and_end_next_to_their_tiles():
    lat = lattice(4, 4)
    for s in itertools.product(range(4), range(4)):
        for d in itertools.product(range(4), range(4)):
            if s == d:
                continue
            path = lat.xy_path(s, d)
            sx, sy = lat.nt_site(s)
            tx, ty = lat.nt_site(d)
            assert abs(path[0].x - sx) + abs(path[0].y - sy) == 1
            assert abs(path[-1].x - tx) + abs(path[-1].y - ty) == 1
            assert path[0].kind is TileKind.RT0 and path[-1].kind is TileKind.RT0


def test_legality_checker_rejects_bad_paths():
    lat = lattice(3, 3)
    assert is_legal_path((lat.tile(0, 1), lat.tile(1, 1), lat.tile(1, 2)))
    # vertical move before the horizontal one
    assert not is_legal_path((lat.tile(1, 0), lat.tile(1, 1), lat.tile(2, 1)))
    # two turns
    two = (lat.tile(0, 1), lat.tile(1, 1), lat.tile(1, 2), lat.tile(1, 3), lat.tile(2, 3))
    assert not is_legal_path(two)
    # not contiguous
    assert not is_legal_path((lat.tile(0, 1), lat.tile(2, 1)))


# -- occupancy ---------------------------------------------------------------


def test_empty_mask_occupancy():
    lat = lattice(3, 3, npt=4)
    pl = default_placement(lat.config)
    occ = compute_occupancy(np.zeros((36, 36), bool), pl, lat)
    assert occ.rt_load.sum() == 0
    assert occ.nt_remote.sum() == 0 and occ.nt_local.sum() == 0 and occ.nt_input.sum() == 0
    assert occ.memory_elements() == 0
    # local rows are hard-wired, so the requirement is still one row per hosted neuron
    assert np.all(occ.nt_fanin == 4)


def test_single_adjacent_connection():
    lat = lattice(2, 2, npt=4)
    pl = default_placement(lat.config)
    mask = np.zeros((16, 16), bool)
    mask[0, 4] = True  # NT(0,0) -> NT(0,1)
    occ = compute_occupancy(mask, pl, lat)
    assert occ.rt_load[0, 1] == 1
    assert occ.rt_load.sum() == 1
    assert occ.nt_fanin[1] == 4 + 1
    assert occ.nt_fanin[0] == 4


def test_full_single_tile():
    lat = lattice(1, 1, npt=6, nt_in=6)
    mask = ~np.eye(6, dtype=bool)
    occ = compute_occupancy(mask, default_placement(lat.config), lat)
    assert occ.nt_fanin.tolist() == [6]
    assert occ.nt_local.tolist() == [6]
    assert occ.rt_load.sum() == 0


def test_one_row_per_remote_source_not_per_synapse():
    lat = lattice(2, 2, npt=4)
    pl = default_placement(lat.config)
    mask = np.zeros((16, 16), bool)
    mask[0, 4:8] = True  # one source, four targets in the same remote tile
    occ = compute_occupancy(mask, pl, lat)
    assert occ.nt_remote[1] == 1
    assert occ.rt_load.sum() == 1


def _random_mask(rng, n, density):
    m = rng.random((n, n)) < density
    np.fill_diagonal(m, False)
    return m


def test_occupancy_matches_brute_force_recount():
    rng = np.random.default_rng(3)
    shapes = [(2, 2), (2, 3), (3, 3), (3, 4), (4, 4), (1, 2)]
    for k in range(50):
        r, c = shapes[k % len(shapes)]
        npt = int(rng.integers(1, 5))
        lat = lattice(r, c, npt=npt)
        g = lat.config
        mask = _random_mask(rng, g.n_neurons, float(rng.uniform(0.0, 0.4)))
        occ = compute_occupancy(mask, default_placement(g), lat)
        grid, remote, local = brute_force_occupancy(mask, g, lat)
        np.testing.assert_array_equal(occ.rt_load, grid)
        np.testing.assert_array_equal(occ.nt_remote, remote)
        np.testing.assert_array_equal(occ.nt_local, local)


def test_occupancy_conservation():
    rng = np.random.default_rng(4)
    lat = lattice(3, 3, npt=3)
    g = lat.config
    mask = _random_mask(rng, g.n_neurons, 0.2)
    occ = compute_occupancy(mask, default_placement(g), lat)
    per_axon = 0
    for pre in range(g.n_neurons):
        src = divmod(pre // 3, 3)
        dests = {divmod(int(j) // 3, 3) for j in np.flatnonzero(mask[pre])} - {src}
        if dests:
            per_axon += len(route_axon(NeuronId(src, pre % 3), dests, lat))
    assert occ.rt_load.sum() == per_axon


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 35), st.integers(0, 35))
def test_adding_a_connection_never_lowers_occupancy(seed, i, j):
    rng = np.random.default_rng(seed)
    lat = lattice(3, 3, npt=4)
    g = lat.config
    pl = default_placement(g)
    mask = _random_mask(rng, g.n_neurons, 0.1)
    before = compute_occupancy(mask, pl, lat)
    mask[i, j] = True
    after = compute_occupancy(mask, pl, lat)
    assert np.all(after.rt_load >= before.rt_load)
    assert np.all(after.nt_fanin >= before.nt_fanin)
    assert after.memory_elements() >= before.memory_elements()


def test_input_rows_count_at_assigned_tile_only():
    lat = lattice(2, 2, npt=4)
    g = lat.config
    pl = default_placement(g)
    im = input_mask(input_placement(6, g), pl)
    occ = compute_occupancy(np.zeros((16, 16), bool), pl, lat, input_mask=im)
    assert occ.nt_input.tolist() == [2, 2, 1, 1]
    assert occ.rt_load.sum() == 0
    dense = compute_occupancy(np.zeros((16, 16), bool), pl, lat,
                              input_mask=input_mask(input_placement(6, g), pl, dense=True))
    assert dense.nt_input.tolist() == [6, 6, 6, 6]


def test_shape_mismatch_rejected():
    lat = lattice(2, 2, npt=2)
    with pytest.raises(DomainError):
        compute_occupancy(np.zeros((4, 4), bool), default_placement(lat.config), lat)
    with pytest.raises(DomainError):
        compute_occupancy(np.zeros((8, 8), bool), np.full(8, 9), lat)


# -- mappability -------------------------------------------------------------


def test_empty_network_is_mappable():
    for r, c in [(1, 1), (2, 2), (3, 4)]:
        lat = build_lattice(GridConfig(r, c, 3, 3, 1))
        n = lat.config.n_neurons
        rep = check_mappable(np.zeros((n, n), bool), default_placement(lat.config), lat)
        assert rep.mappable and rep.violations == []


def test_full_single_tile_zero_slack():
    g = GridConfig(1, 1, 5, 5, 1)
    lat = build_lattice(g)
    rep = check_mappable(~np.eye(5, dtype=bool), default_placement(g), lat, g)
    assert rep.mappable
    assert rep.peak_nt_fanin == g.nt_input_size


def _crossing_traffic(k, npt):
    """k sources per corner tile of a 2x2 grid, each sending to the opposite corner.

    Every diagonal path turns on the single central RT1, so it carries 4k
    axons while every RT0 carries 2k.
    """
    n = 4 * npt
    mask = np.zeros((n, n), bool)
    corners = {0: 3, 3: 0, 1: 2, 2: 1}
    for s, d in corners.items():
        for local in range(k):
            mask[s * npt + local, d * npt] = True
    return mask


def test_oversubscribed_rt1_is_the_only_violation():
    k, npt = 3, 4
    g = GridConfig(2, 2, npt, 64, 3 * k)
    lat = build_lattice(g)
    mask = _crossing_traffic(k, npt)
    rep = check_mappable(mask, default_placement(g), lat, g)
    assert not rep.mappable
    assert len(rep.violations) == 1
    v = rep.violations[0]
    assert v.tile.kind is TileKind.RT1 and (v.tile.x, v.tile.y) == (1, 1)
    assert v.required == 4 * k and v.capacity == 3 * k
    assert rep.peak_rt_load == 4 * k
    # the oracle agrees on the load of that tile
    grid, _, _ = brute_force_occupancy(mask, g, lat)
    assert grid[1, 1] == 4 * k and grid.max() == 4 * k
    assert sorted(set(grid[grid > 0].tolist())) == [2 * k, 4 * k]


def test_nt_fanin_violation_reported():
    g = GridConfig(2, 2, 2, 3, 64)
    lat = build_lattice(g)
    mask = np.zeros((8, 8), bool)
    mask[2, 0] = mask[3, 0] = True  # two remote sources into NT 0
    rep = check_mappable(mask, default_placement(g), lat, g)
    assert not rep.mappable
    assert [v.tile.kind for v in rep.violations] == [TileKind.NT]
    assert rep.violations[0].required == 4
    assert "NOT MAPPABLE" in rep.summary()


def test_report_roundtrips_to_dict():
    g = GridConfig(2, 2, 2, 8, 8)
    lat = build_lattice(g)
    rep = check_mappable(np.ones((8, 8), bool) & ~np.eye(8, dtype=bool), default_placement(g), lat)
    d = rep.to_dict()
    assert d["mappable"] == rep.mappable
    assert d["memory_elements"] == rep.occupancy.memory_elements()
    assert len(d["occupancy"]["rt_load"]) == lat.height
