import numpy as np
import pytest

from bruteforce import brute_rank_position
from conftest import make_grid_graph, make_image, random_grid_graph
from hierxai.hierarchy import build_bpt, build_watershed, filter_min_area, node_mask
from hierxai.image import FillPolicy, Mask
from hierxai.oracle import ConstantOracle, LinearOracle, PlantedPatchOracle
from hierxai.scoring import (RankingContext, caoc_movement, occ_impact,
                             ranking_position, score_hierarchy)

FILL0 = FillPolicy("constant", 0.0)


class TestOccImpact:
    def test_constant_oracle_zero_for_any_mask(self, rng):
        toy = ConstantOracle([0.5, 1.5], (1, 4, 4))
        img = make_image(rng.rand(4, 4))
        mask = Mask(rng.rand(4, 4) > 0.5)
        if mask.popcount() == 0:
            mask = Mask(np.ones((4, 4), dtype=bool))
        assert occ_impact(toy, img, mask, 0, FILL0) == 0.0

    def test_linear_closed_form(self, rng):
        weights = rng.randn(2, 1, 4, 4).astype(np.float32)
        toy = LinearOracle(weights)
        img = make_image(rng.rand(4, 4))
        bits = rng.rand(4, 4) > 0.4
        bits[0, 0] = True
        impact = occ_impact(toy, img, Mask(bits), 1, FILL0)
        expected = abs(float((weights[1, 0] * img.data[0] * bits).sum()))
        assert impact == pytest.approx(expected, abs=1e-5)

    def test_additivity_over_disjoint_halves(self, rng):
        weights = rng.randn(2, 1, 4, 4).astype(np.float32)
        toy = LinearOracle(weights)
        img = make_image(np.ones((4, 4)))
        top = np.zeros((4, 4), dtype=bool); top[:2] = True
        bottom = ~top
        whole = occ_impact(toy, img, Mask(np.ones((4, 4), dtype=bool)), 0, FILL0)
        part1 = float((weights[0, 0] * top).sum())
        part2 = float((weights[0, 0] * bottom).sum())
        assert whole == pytest.approx(abs(part1 + part2), abs=1e-5)

    def test_empty_mask_rejected(self, rng):
        toy = ConstantOracle([0, 1], (1, 4, 4))
        with pytest.raises(ValueError):
            occ_impact(toy, make_image(rng.rand(4, 4)), Mask(np.zeros((4, 4), bool)), 0, FILL0)


class TestRanking:
    def test_position_from_spec_example(self):
        ctx = RankingContext(0, [0.9, 0.5, 0.1])
        assert ranking_position(ctx, 0.6) == 2
        assert ranking_position(ctx, 0.05) == 4

    def test_tie_ranks_first(self):
        ctx = RankingContext(0, [0.9, 0.5, 0.1])
        assert ranking_position(ctx, 0.5) == 2  # before the tied reference

    def test_matches_resort_brute_force(self, rng):
        for _ in range(200):
            refs = np.round(rng.randn(rng.randint(1, 30)), 2)
            value = float(np.round(rng.randn(), 2))
            ctx = RankingContext(0, refs)
            assert ranking_position(ctx, value) == brute_rank_position(refs.tolist(), value)

    def test_unchanged_logit_moves_zero(self, rng):
        toy = ConstantOracle([0.3, 0.4], (1, 4, 4))
        ctx = RankingContext(1, [1.0, 0.5, 0.2])
        img = make_image(rng.rand(4, 4))
        move = caoc_movement(ctx, toy, img, Mask(np.ones((4, 4), bool)), 1, FILL0)
        assert move == 0.0

    def test_movement_between_neighbours_is_zero(self):
        # both logits fall between the same two references
        weights = np.zeros((2, 1, 2, 2), dtype=np.float32)
        weights[1, 0, 0, 0] = 0.01
        toy = LinearOracle(weights)
        ctx = RankingContext(1, [10.0, -5.0])
        img = make_image(np.ones((2, 2)))
        bits = np.zeros((2, 2), dtype=bool); bits[0, 0] = True
        assert caoc_movement(ctx, toy, img, Mask(bits), 1, FILL0) == 0.0

    def test_movement_is_integer_and_bounded(self, rng):
        weights = rng.randn(2, 1, 3, 3).astype(np.float32) * 5
        toy = LinearOracle(weights)
        refs = rng.randn(7)
        ctx = RankingContext(1, refs)
        for _ in range(20):
            img = make_image(rng.rand(3, 3))
            bits = rng.rand(3, 3) > 0.5
            bits[1, 1] = True
            move = caoc_movement(ctx, toy, img, Mask(bits), 1, FILL0)
            assert move == int(move)
            assert 0 <= move <= len(refs)


class TestScoreHierarchy:
    def test_min_area_above_everything_scores_only_root(self, rng):
        g = random_grid_graph(rng, 3, 3)
        h = build_bpt(g)
        biggest_child = max(int(h.area[c]) for c in range(h.n_nodes - 1))
        toy = LinearOracle(rng.rand(2, 1, 3, 3).astype(np.float32))
        attrs = score_hierarchy(toy, make_image(rng.rand(3, 3)), h, "occ", 0,
                                biggest_child + 1, FILL0)
        nonzero = np.nonzero(attrs.values)[0]
        assert nonzero.tolist() == [h.root]

    def test_constant_oracle_all_zero(self, rng):
        g = random_grid_graph(rng, 3, 3)
        h = build_watershed(g, "area")
        toy = ConstantOracle([1.0, 2.0], (1, 3, 3))
        attrs = score_hierarchy(toy, make_image(rng.rand(3, 3)), h, "occ", 0, 1, FILL0)
        assert np.all(attrs.values == 0.0)

    def test_planted_patch_node_dominates(self):
        # hierarchy from guidance that isolates the patch block exactly
        data = np.zeros((4, 4), dtype=np.float32)
        data[:2, :2] = 1.0
        img = make_image(data)
        from hierxai.graph import grid_edges
        us, vs = grid_edges(4, 4)
        edge_vals = []
        flat = data.ravel()
        for u, v in zip(us, vs):
            edge_vals.append(abs(float(flat[u]) - float(flat[v])))
        g = make_grid_graph(4, 4, edge_vals)
        h = build_bpt(g)
        toy = PlantedPatchOracle((0, 0, 2, 2), (1, 4, 4), gain=4.0, margin=1.0)
        attrs = score_hierarchy(toy, img, h, "occ", 1, 2, FILL0)
        patch_nodes = [n for n in range(h.n_nodes)
                       if node_mask(h, n).popcount() == 4
                       and np.all(node_mask(h, n).bits[:2, :2])]
        assert patch_nodes, "BPT should isolate the flat patch block"
        best = int(np.argmax(attrs.values))
        assert best in patch_nodes

    def test_batch_size_invariance_bitwise(self, rng):
        g = random_grid_graph(rng, 3, 4)
        h = filter_min_area(build_bpt(g), 2)
        toy = LinearOracle(rng.randn(2, 1, 3, 4).astype(np.float32))
        img = make_image(rng.rand(3, 4))
        vectors = [score_hierarchy(toy, img, h, "occ", 0, 2, FILL0,
                                   batch_size=bs).values for bs in (1, 7, 64)]
        assert np.array_equal(vectors[0], vectors[1])
        assert np.array_equal(vectors[1], vectors[2])

    def test_linear_toy_exact_attribute(self, rng):
        # fill 0, image of ones: attribute = |sum of class weights in region|
        g = random_grid_graph(rng, 3, 3)
        h = build_bpt(g)
        weights = rng.randn(2, 1, 3, 3).astype(np.float32)
        toy = LinearOracle(weights)
        attrs = score_hierarchy(toy, make_image(np.ones((3, 3))), h, "occ", 1, 1, FILL0)
        for node in range(h.n_nodes):
            region = node_mask(h, node).bits
            expected = abs(float(weights[1, 0][region].sum()))
            assert attrs.values[node] == pytest.approx(expected, abs=1e-5)

    def test_subminimal_nodes_get_zero(self, rng):
        g = random_grid_graph(rng, 3, 3)
        h = filter_min_area(build_bpt(g), 3)
        toy = LinearOracle(rng.rand(2, 1, 3, 3).astype(np.float32) + 0.5)
        attrs = score_hierarchy(toy, make_image(np.ones((3, 3))), h, "occ", 0, 3, FILL0)
        assert np.all(attrs.values[h.sub_minimal] == 0.0)
        scored = (~h.sub_minimal) & (h.area >= 3)
        assert np.all(attrs.values[scored] > 0.0)

    def test_caoc_requires_context(self, rng):
        g = random_grid_graph(rng, 2, 2)
        h = build_bpt(g)
        toy = ConstantOracle([0, 1], (1, 2, 2))
        with pytest.raises(ValueError):
            score_hierarchy(toy, make_image(np.ones((2, 2))), h, "caoc", 0, 1, FILL0)
