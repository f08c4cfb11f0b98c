import numpy as np

from dclose import SaliencyMap
from dclose.render import (
    diff_rgb,
    heatmap_rgb,
    load_image,
    overlay_rgb,
    save_heatmap_png,
    save_image,
    save_overlay_png,
)


class TestImageIO:
    def test_png_round_trip(self, tmp_path, rng):
        img = rng.uniform(0, 1, size=(9, 13, 3)).astype(np.float32)
        path = tmp_path / "img.png"
        save_image(img, path)
        back = load_image(path)
        assert back.shape == img.shape
        assert np.abs(back - img).max() <= 1.0 / 255.0 + 1e-6


class TestHeatmaps:
    def test_heatmap_shape_and_range(self, rng):
        m = SaliencyMap(rng.uniform(0, 1, size=(6, 8)))
        rgb = heatmap_rgb(m)
        assert rgb.shape == (6, 8, 3)
        assert rgb.min() >= 0.0 and rgb.max() <= 1.0

    def test_unnormalized_input_normalized_first(self, rng):
        values = rng.uniform(0, 5, size=(6, 8))
        a = heatmap_rgb(SaliencyMap(values))
        b = heatmap_rgb(SaliencyMap((values - values.min()) / (values.max() - values.min()), normalized=True))
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_overlay_blends(self, rng):
        img = rng.uniform(0, 1, size=(6, 8, 3)).astype(np.float32)
        m = SaliencyMap(np.zeros((6, 8)), normalized=True)
        out = overlay_rgb(img, m, alpha=0.5)
        heat = heatmap_rgb(m)
        np.testing.assert_allclose(out, 0.5 * img + 0.5 * heat, atol=1e-6)

    def test_diff_centered(self):
        diff = np.array([[1.0, -1.0], [0.0, 0.5]])
        rgb = diff_rgb(diff)
        assert rgb.shape == (2, 2, 3)
        zero_color = diff_rgb(np.zeros((1, 1)))[0, 0]
        assert np.allclose(rgb[1, 0], zero_color, atol=1e-6)  # 0 maps to the center color

    def test_save_helpers(self, tmp_path, rng):
        img = rng.uniform(0, 1, size=(6, 8, 3)).astype(np.float32)
        m = SaliencyMap(rng.uniform(0, 1, size=(6, 8)))
        save_heatmap_png(m, tmp_path / "h.png")
        save_overlay_png(img, m, tmp_path / "o.png")
        assert (tmp_path / "h.png").exists() and (tmp_path / "o.png").exists()
