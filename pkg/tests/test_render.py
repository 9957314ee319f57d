from pathlib import Path

import numpy as np
import pytest
from PIL import Image as PILImage

from conftest import make_image
from hierxai.render import ThresholdSpec, render_overlay, threshold_map, write_png
from hierxai.shaping import ScoreMap

GOLDEN = Path(__file__).parent / "data" / "overlay_two_band.png"


def smap(values):
    return ScoreMap(np.asarray(values, dtype=np.float32))


class TestThresholdMap:
    def test_full_percent_selects_all_positive(self, rng):
        scores = rng.rand(4, 4).astype(np.float32)
        scores[scores < 0.3] = 0.0
        mask = threshold_map(smap(scores), ThresholdSpec(100.0))
        assert np.array_equal(mask.bits, scores > 0)

    def test_all_zero_map_gives_empty_mask(self):
        for mode in ("score_rank", "score_range"):
            mask = threshold_map(smap(np.zeros((3, 3))), ThresholdSpec(50.0, mode))
            assert mask.popcount() == 0

    def test_quarter_of_four_pixels(self):
        mask = threshold_map(smap([[4.0, 3.0], [2.0, 1.0]]), ThresholdSpec(25.0))
        assert mask.bits.tolist() == [[True, False], [False, False]]

    def test_rank_ties_resolved_by_pixel_index(self):
        mask = threshold_map(smap([[1.0, 1.0], [1.0, 1.0]]), ThresholdSpec(50.0))
        assert mask.bits.tolist() == [[True, True], [False, False]]

    def test_range_mode_uses_score_fraction(self):
        mask = threshold_map(smap([[10.0, 9.0], [5.0, 1.0]]),
                             ThresholdSpec(20.0, "score_range"))
        # cutoff = 0.8 * 10 = 8
        assert mask.bits.tolist() == [[True, True], [False, False]]

    def test_monotone_in_percent(self, rng):
        scores = rng.rand(6, 6).astype(np.float32)
        prev = np.zeros((6, 6), dtype=bool)
        for t in (5, 10, 25, 50, 75, 100):
            cur = threshold_map(smap(scores), ThresholdSpec(float(t))).bits
            assert np.all(prev <= cur)
            prev = cur

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            ThresholdSpec(0.0)
        with pytest.raises(ValueError):
            ThresholdSpec(101.0)
        with pytest.raises(ValueError):
            ThresholdSpec(50.0, "nope")


class TestOverlay:
    def test_zero_scores_uniformly_dimmed(self, rng):
        img = make_image(np.full((4, 4), 0.8))
        png = render_overlay(img, smap(np.zeros((4, 4))), levels=3)
        decoded = np.asarray(PILImage.open(_bytes_io(png)))
        assert decoded.shape == (4, 4, 3)
        assert len(np.unique(decoded)) == 1  # one dim level everywhere

    def test_single_hot_pixel_full_brightness(self):
        img = make_image(np.full((3, 3), 1.0))
        scores = np.zeros((3, 3), dtype=np.float32)
        scores[1, 1] = 5.0
        decoded = np.asarray(PILImage.open(_bytes_io(render_overlay(img, smap(scores), levels=1))))
        assert decoded[1, 1, 0] == 255
        others = decoded[np.arange(3) != 1][:, :, 0]
        assert np.all(decoded[0, :, 0] < 255)

    def test_outside_never_brighter_than_inside(self, rng):
        base = np.full((5, 5), 0.6, dtype=np.float32)
        img = make_image(base)
        scores = rng.rand(5, 5).astype(np.float32)
        scores[scores < 0.5] = 0.0
        png = render_overlay(img, smap(scores), levels=4)
        decoded = np.asarray(PILImage.open(_bytes_io(png))).astype(int)
        inside = decoded[scores > 0, 0]
        outside = decoded[scores == 0, 0]
        if inside.size and outside.size:
            assert outside.max() <= inside.min()

    def test_deterministic_bytes(self, rng):
        img = make_image(rng.rand(4, 4))
        scores = rng.rand(4, 4).astype(np.float32)
        assert render_overlay(img, smap(scores)) == render_overlay(img, smap(scores))

    def test_two_band_golden_file(self):
        img = make_image(np.tile(np.linspace(0.2, 1.0, 6, dtype=np.float32), (6, 1)))
        scores = np.zeros((6, 6), dtype=np.float32)
        scores[1:3, 1:5] = 1.0
        scores[4:6, 2:4] = 2.0
        png = render_overlay(img, smap(scores), levels=2)
        assert png == GOLDEN.read_bytes()

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            render_overlay(make_image(rng.rand(3, 3)), smap(np.zeros((4, 4))))


class TestPngWriter:
    def test_round_trip_gray_and_rgb(self, rng):
        gray = rng.randint(0, 256, size=(5, 7)).astype(np.uint8)
        rgb = rng.randint(0, 256, size=(4, 6, 3)).astype(np.uint8)
        for arr in (gray, rgb):
            decoded = np.asarray(PILImage.open(_bytes_io(write_png(arr))))
            assert np.array_equal(decoded, arr)


def _bytes_io(data):
    import io
    return io.BytesIO(data)
