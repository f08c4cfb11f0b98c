"""Heatmap and overlay rendering, plus PNG image IO.

Saliency uses a perceptually uniform sequential colormap (viridis), signed
difference maps a divergent one (coolwarm) centered on zero, and overlays
alpha-blend the heatmap onto the image at 0.5.
"""

from __future__ import annotations

import matplotlib
import numpy as np
from PIL import Image

from .core import SaliencyMap, minmax_normalize

__all__ = [
    "load_image",
    "save_image",
    "heatmap_rgb",
    "overlay_rgb",
    "diff_rgb",
    "save_heatmap_png",
    "save_overlay_png",
    "save_diff_png",
]


def load_image(path) -> np.ndarray:
    """Read an image file as float32 RGB in [0, 1]."""
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        return np.asarray(rgb, dtype=np.float32) / 255.0


def save_image(img: np.ndarray, path) -> None:
    """Write a float [0, 1] RGB array as an 8-bit PNG."""
    arr = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def _apply_cmap(values01: np.ndarray, name: str) -> np.ndarray:
    cmap = matplotlib.colormaps[name]
    rgba = cmap(np.clip(values01, 0.0, 1.0))
    return rgba[..., :3].astype(np.float32)


def heatmap_rgb(m: SaliencyMap, cmap: str = "viridis") -> np.ndarray:
    """Colormapped map as float RGB; normalizes first if needed."""
    values = m.values if m.normalized else minmax_normalize(m).values
    return _apply_cmap(values, cmap)


def overlay_rgb(img: np.ndarray, m: SaliencyMap, alpha: float = 0.5, cmap: str = "viridis") -> np.ndarray:
    heat = heatmap_rgb(m, cmap)
    return (1.0 - alpha) * np.asarray(img, dtype=np.float32) + alpha * heat


def diff_rgb(diff: np.ndarray, cmap: str = "coolwarm") -> np.ndarray:
    """Signed grid to divergent colors, symmetric about zero."""
    diff = np.asarray(diff, dtype=np.float64)
    scale = float(np.abs(diff).max())
    centered = 0.5 if scale == 0.0 else 0.5 + diff / (2.0 * scale)
    if np.isscalar(centered):
        centered = np.full(diff.shape, centered)
    return _apply_cmap(centered, cmap)


def save_heatmap_png(m: SaliencyMap, path, cmap: str = "viridis") -> None:
    save_image(heatmap_rgb(m, cmap), path)


def save_overlay_png(img: np.ndarray, m: SaliencyMap, path, alpha: float = 0.5, cmap: str = "viridis") -> None:
    save_image(overlay_rgb(img, m, alpha, cmap), path)


def save_diff_png(diff: np.ndarray, path, cmap: str = "coolwarm") -> None:
    save_image(diff_rgb(diff, cmap), path)
