"""Seeded synthetic radiograph-like images so every pipeline runs without external data."""
import logging
import math
from pathlib import Path
from typing import List, Union

import numpy as np
from scipy.ndimage import gaussian_filter

from radsmith.core.errors import ArgumentError
from radsmith.services.imagecore import Image, save_image
from radsmith.utils.file_utils import ensure_dir_exists
from radsmith.utils.rng import generator, mix_seed

logger = logging.getLogger(__name__)

DEFAULT_COUNT = 64
DEFAULT_SIZE = 96


def _bone(xx: np.ndarray, yy: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Elongated ellipse with a brighter cortical rim"""
    cx, cy = rng.uniform(0.25, 0.75, size=2)
    angle = rng.uniform(0.0, math.pi)
    half_length = rng.uniform(0.2, 0.4)
    half_width = rng.uniform(0.04, 0.1)
    u = (xx - cx) * math.cos(angle) + (yy - cy) * math.sin(angle)
    v = -(xx - cx) * math.sin(angle) + (yy - cy) * math.cos(angle)
    r = (u / half_length) ** 2 + (v / half_width) ** 2
    inside = r <= 1.0
    rim = inside & (r > 0.5)
    return 0.3 * inside + 0.25 * rim


def _lines(xx: np.ndarray, yy: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    out = np.zeros_like(xx)
    for _ in range(int(rng.integers(3, 8))):
        angle = rng.uniform(0.0, math.pi)
        offset = rng.uniform(-0.4, 0.4)
        dist = np.abs((xx - 0.5) * math.cos(angle) + (yy - 0.5) * math.sin(angle) - offset)
        out += rng.uniform(0.05, 0.12) * (dist < 0.6 / size)
    return out


def _glyph(canvas: np.ndarray, rng: np.random.Generator) -> None:
    """Stamp a 5x3 block letter (2 px per cell) near a corner, like a side marker"""
    size = canvas.shape[0]
    bits = rng.random((5, 3)) < 0.6
    bits[:, 0] = True
    glyph = np.kron(bits, np.ones((2, 2)))
    gh, gw = glyph.shape
    top = int(rng.choice([2, size - gh - 2]))
    left = int(rng.choice([2, size - gw - 2]))
    region = canvas[top:top + gh, left:left + gw]
    region[glyph > 0] = 0.9


def radiograph_like(size: int, rng: np.random.Generator) -> Image:
    """Smooth background gradient, bone-like shapes, thin line structures and a text glyph"""
    if size < 16:
        raise ArgumentError(f"fixture images must be at least 16 pixels, got {size}")
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    angle = rng.uniform(0.0, 2.0 * math.pi)
    img = 0.12 + 0.12 * (math.cos(angle) * (xx - 0.5) + math.sin(angle) * (yy - 0.5))
    for _ in range(int(rng.integers(1, 4))):
        img = img + _bone(xx, yy, rng)
    img = img + _lines(xx, yy, size, rng)
    img = img + 0.02 * gaussian_filter(rng.standard_normal((size, size)), 2.0)
    img = gaussian_filter(img, 0.7)
    _glyph(img, rng)
    return Image.from_array(img, clamp=True)


def generate_fixture(count: int = DEFAULT_COUNT, size: int = DEFAULT_SIZE, seed: int = 0) -> List[Image]:
    if count < 1:
        raise ArgumentError(f"count must be >= 1, got {count}")
    return [radiograph_like(size, generator(mix_seed(seed, i))) for i in range(count)]


def write_fixture(out_dir: Union[str, Path], count: int = DEFAULT_COUNT, size: int = DEFAULT_SIZE,
                  seed: int = 0) -> List[Path]:
    """Write the fixture as 8-bit PNGs named fixture_0000.png, ..."""
    out_dir = ensure_dir_exists(out_dir)
    paths = []
    for i, img in enumerate(generate_fixture(count, size, seed)):
        path = out_dir / f"fixture_{i:04d}.png"
        save_image(img, path)
        paths.append(path)
    logger.info("Wrote %d fixture images (%dx%d) to %s", len(paths), size, size, out_dir)
    return paths
