import numpy as np
import pytest

from bruteforce import (brute_minima, brute_watershed_partitions,
                        canonical_partition)
from conftest import make_grid_graph, random_grid_graph
from hierxai.hierarchy import (build_bpt, build_watershed, cut_labels,
                               filter_min_area, load_hierarchy, node_mask,
                               save_hierarchy)


def chain_graph(weights):
    return make_grid_graph(1, len(weights) + 1, weights)


class TestBPT:
    def test_chain_merge_order(self):
        # weights (p0p1)=2, (p1p2)=5, (p2p3)=1: merges at 1, 2, then root at 5
        h = build_bpt(chain_graph([2.0, 5.0, 1.0]))
        assert h.altitude[4:].tolist() == [1.0, 2.0, 5.0]
        assert node_mask(h, 4).bits.ravel().tolist() == [False, False, True, True]
        assert node_mask(h, 5).bits.ravel().tolist() == [True, True, False, False]
        assert h.area[h.root] == 4

    def test_equal_weights_tie_break_is_canonical(self):
        h1 = build_bpt(chain_graph([3.0, 3.0, 3.0]))
        h2 = build_bpt(chain_graph([3.0, 3.0, 3.0]))
        assert np.array_equal(h1.parent, h2.parent)
        assert np.all(h1.altitude[4:] == 3.0)
        # canonical order merges edge 0 first, then edge 1, then edge 2
        assert h1.parent[0] == h1.parent[1] == 4

    def test_2x2_grid_uses_three_cheapest_edges(self):
        # canonical edges: (0,1), (0,2), (1,3), (2,3) with weights 1, 2, 3, 4
        g = make_grid_graph(2, 2, [1.0, 2.0, 3.0, 4.0])
        h = build_bpt(g)
        assert h.altitude[4:].tolist() == [1.0, 2.0, 3.0]

    def test_altitudes_are_sorted_merge_weights(self, rng):
        for _ in range(50):
            g = random_grid_graph(rng, integer=False)
            h = build_bpt(g)
            merge_alts = sorted(h.altitude[h.n_leaves:].tolist())
            # the merge weights form a subset (the MST) of all edge weights
            assert merge_alts == sorted(merge_alts)
            h.validate()
            internal = np.arange(h.n_nodes) >= h.n_leaves
            kid_counts = np.bincount(h.parent[:-1], minlength=h.n_nodes)[internal]
            assert np.all(kid_counts == 2)

    def test_children_partition_parent(self, rng):
        g = random_grid_graph(rng)
        h = build_bpt(g)
        kids = h.children()
        for node in range(h.n_leaves, h.n_nodes):
            whole = node_mask(h, node).bits
            parts = [node_mask(h, c).bits for c in kids[node]]
            assert np.array_equal(whole, np.logical_or.reduce(parts))
            for i, a in enumerate(parts):
                for b in parts[i + 1:]:
                    assert not np.any(a & b)


class TestWatershed:
    def test_chain_two_basins(self):
        h = build_watershed(chain_graph([2.0, 5.0, 1.0]), "area")
        # two basins {p0,p1}, {p2,p3} merging at the top
        finest = canonical_partition(cut_labels(h, 0.0).tolist())
        assert finest == frozenset({frozenset({0, 1}), frozenset({2, 3})})
        assert h.altitude[h.root] == 2.0  # min basin area

    def test_constant_graph_single_flat_zone(self):
        h = build_watershed(chain_graph([3.0, 3.0, 3.0]), "area")
        assert h.n_nodes == h.n_leaves + 1

    @pytest.mark.parametrize("attr", ["area", "volume"])
    def test_random_3x3_matches_flooding_oracle(self, rng, attr):
        for _ in range(60):
            g = random_grid_graph(rng, 3, 3, lo=1, hi=3)
            h = build_watershed(g, attr)
            h.validate()
            edges = list(zip(g.edges_u.tolist(), g.edges_v.tolist()))
            expected = brute_watershed_partitions(
                g.n_vertices, edges, g.weights.tolist(), attr)
            for level, part in expected.items():
                assert canonical_partition(cut_labels(h, level).tolist()) == part

    def test_basin_count_equals_minima_count(self, rng):
        for _ in range(40):
            g = random_grid_graph(rng, 3, 3, lo=1, hi=4)
            h = build_watershed(g, "area")
            basins = canonical_partition(cut_labels(h, 0.0).tolist())
            edges = list(zip(g.edges_u.tolist(), g.edges_v.tolist()))
            minima = brute_minima(g.n_vertices, edges, g.weights.tolist())
            assert len(basins) == len(minima)


class TestFilterMinArea:
    def test_identity_at_one(self, rng):
        g = random_grid_graph(rng)
        h = build_bpt(g)
        f = filter_min_area(h, 1)
        assert np.array_equal(f.parent, h.parent)
        assert not np.any(f.sub_minimal)

    def test_everything_subminimal_leaves_root(self, rng):
        g = random_grid_graph(rng)
        h = build_bpt(g)
        f = filter_min_area(h, h.n_leaves)
        assert f.n_nodes == f.n_leaves + 1
        assert np.all(f.sub_minimal[:f.n_leaves])
        assert not f.sub_minimal[f.root]

    def test_chain_contraction_by_hand(self):
        h = build_bpt(chain_graph([2.0, 5.0, 1.0]))
        f = filter_min_area(h, 2)
        # the two 2-pixel nodes and the root survive; leaves are flagged
        assert f.n_nodes == 7
        assert np.all(f.sub_minimal[:4])
        assert not np.any(f.sub_minimal[4:])
        f.validate()

    def test_monotone_in_min_area(self, rng):
        g = random_grid_graph(rng, 4, 4)
        h = build_bpt(g)
        counts = []
        for min_area in range(1, h.n_leaves + 1):
            f = filter_min_area(h, min_area)
            counts.append(int(np.sum(~f.sub_minimal)))
            f.validate()
        assert counts == sorted(counts, reverse=True)

    def test_out_of_range(self, rng):
        h = build_bpt(random_grid_graph(rng))
        with pytest.raises(ValueError):
            filter_min_area(h, 0)
        with pytest.raises(ValueError):
            filter_min_area(h, h.n_leaves + 1)


class TestNodeMask:
    def test_leaf_and_root(self, rng):
        g = random_grid_graph(rng)
        h = build_bpt(g)
        assert node_mask(h, 3).popcount() == 1
        assert node_mask(h, h.root).popcount() == h.n_leaves

    def test_mask_size_equals_area(self, rng):
        g = random_grid_graph(rng, 3, 4)
        h = build_watershed(g, "area")
        for node in range(h.n_nodes):
            assert node_mask(h, node).popcount() == h.area[node]

    def test_invalid_node(self, rng):
        h = build_bpt(random_grid_graph(rng))
        with pytest.raises(ValueError):
            node_mask(h, h.n_nodes)


class TestSerialization:
    def test_round_trip(self, tmp_path, rng):
        g = random_grid_graph(rng, 3, 3)
        h = filter_min_area(build_watershed(g, "area"), 2)
        path = tmp_path / "tree.hxt"
        save_hierarchy(path, h)
        back = load_hierarchy(path)
        assert np.array_equal(back.parent, h.parent)
        assert np.array_equal(back.area, h.area)
        assert np.array_equal(back.sub_minimal, h.sub_minimal)
        assert np.allclose(back.altitude, h.altitude)
        assert back.kind == h.kind and back.height == h.height

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.hxt"
        path.write_bytes(b"NOPE" + b"\x00" * 30)
        with pytest.raises(ValueError):
            load_hierarchy(path)
