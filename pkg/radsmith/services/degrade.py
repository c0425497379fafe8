"""Composite radiograph degradation: noise stack, bicubic downsampling, DCT compression.

    y  = C(D(L_N(x)))      noisy LR
    y' = D(x)              clean LR

Every random draw comes from PCG64 substreams of the per-image seed stored in
DegradationParams, so `replay(x, params)` regenerates y bit-exactly.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import correlate

from radsmith.core.errors import ArgumentError
from radsmith.models.schemas import (
    DegradationConfig,
    DegradationParams,
    GaussianParams,
    MotionParams,
    PoissonParams,
)
from radsmith.services.imagecore import Image, resample
from radsmith.utils.rng import NOISE_STREAM, SAMPLING_STREAM, generator

logger = logging.getLogger(__name__)

BLOCK = 8

# Standard JPEG luminance quantization table
LUMINANCE_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


@dataclass(frozen=True)
class Kernel:
    """Odd-sized, nonnegative correlation kernel summing to one"""
    size: int
    weights: np.ndarray

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64, copy=True)
        if self.size < 1 or self.size % 2 == 0 or weights.shape != (self.size, self.size):
            raise ArgumentError(f"kernel must be odd-sized square, got size {self.size} / {weights.shape}")
        if np.any(weights < 0):
            raise ArgumentError("kernel weights must be nonnegative")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise ArgumentError(f"kernel weights must sum to 1, got {weights.sum()}")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)


@dataclass(frozen=True)
class DegradedPair:
    y: Image
    y_clean: Image
    params: DegradationParams


def _check_odd(size: int, name: str) -> None:
    if not isinstance(size, (int, np.integer)) or size < 1 or size % 2 == 0:
        raise ArgumentError(f"{name} must be an odd integer >= 1, got {size}")


def gaussian_kernel(size: int, sigma: float) -> Kernel:
    """Isotropic Gaussian sampled at integer offsets, normalized to sum 1"""
    _check_odd(size, "size")
    if sigma <= 0:
        raise ArgumentError(f"sigma must be > 0, got {sigma}")
    radius = (size - 1) / 2.0
    offsets = np.arange(size) - radius
    xx, yy = np.meshgrid(offsets, offsets)
    weights = np.exp(-(xx * xx + yy * yy) / (2.0 * sigma * sigma))
    return Kernel(size, weights / weights.sum())


def motion_kernel(length: int, angle: float) -> Kernel:
    """Line of `length` unit samples through the center, bilinearly splatted"""
    _check_odd(length, "length")
    center = (length - 1) // 2
    t = np.arange(length, dtype=np.float64) - center
    # rounding removes trig residue so axis-aligned angles rasterize exactly
    cols = np.round(center + t * math.cos(angle), 12)
    rows = np.round(center - t * math.sin(angle), 12)

    c0 = np.floor(cols)
    r0 = np.floor(rows)
    fc = cols - c0
    fr = rows - r0
    weights = np.zeros((length, length))
    for dr, dc, w in (
        (0, 0, (1 - fr) * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 0, fr * (1 - fc)),
        (1, 1, fr * fc),
    ):
        r = np.clip(r0 + dr, 0, length - 1).astype(np.int64)
        c = np.clip(c0 + dc, 0, length - 1).astype(np.int64)
        np.add.at(weights, (r, c), w)
    return Kernel(length, weights / weights.sum())


def convolve(img: Image, k: Kernel) -> Image:
    """2-D correlation with clamp-to-edge padding, same size output"""
    if k.size == 1:
        return img
    out = np.stack([correlate(plane, k.weights, mode="nearest") for plane in img.data])
    return Image(np.clip(out, 0.0, 1.0))


def poisson_noise(img: Image, peak: float, rng: np.random.Generator) -> Image:
    """Shot noise: each sample s becomes Poisson(s * peak) / peak"""
    if peak <= 0:
        raise ArgumentError(f"peak must be > 0, got {peak}")
    counts = rng.poisson(img.data * peak)
    return Image(np.clip(counts / peak, 0.0, 1.0))


def sample_params(cfg: DegradationConfig, rng: np.random.Generator, seed: int = 0) -> DegradationParams:
    """Draw one parameter realization.

    Draw order is fixed (gaussian, motion, poisson; every field drawn even
    when the stage is skipped) so the stream layout never depends on flags.
    """
    sizes = cfg.kernel_size_choices
    probs = cfg.apply_prob_choices

    def gate() -> bool:
        prob = float(probs[int(rng.integers(len(probs)))])
        return bool(rng.random() < prob)

    g_apply = gate()
    g_size = int(sizes[int(rng.integers(len(sizes)))])
    g_sigma = float(rng.uniform(*cfg.gaussian_sigma_range))

    m_apply = gate()
    m_length = int(sizes[int(rng.integers(len(sizes)))])
    m_angle = float(rng.uniform(*cfg.motion_angle_range))

    p_apply = gate()
    p_peak = float(rng.uniform(*cfg.poisson_peak_range))

    return DegradationParams(
        gaussian=GaussianParams(apply=g_apply, size=g_size, sigma=g_sigma),
        motion=MotionParams(apply=m_apply, length=m_length, angle=m_angle),
        poisson=PoissonParams(apply=p_apply, peak=p_peak),
        jpeg_quality=cfg.jpeg_quality,
        scale=cfg.scale,
        seed=seed,
    )


def apply_noise_stack(img: Image, p: DegradationParams, rng: np.random.Generator) -> Image:
    """Gaussian blur -> motion blur -> Poisson noise, skipping stages whose flag is off"""
    out = img
    if p.gaussian.apply:
        out = convolve(out, gaussian_kernel(p.gaussian.size, p.gaussian.sigma))
    if p.motion.apply:
        out = convolve(out, motion_kernel(p.motion.length, p.motion.angle))
    if p.poisson.apply:
        out = poisson_noise(out, p.poisson.peak, rng)
    return out


def bicubic_resize(img: Image, out_w: int, out_h: int) -> Image:
    """Antialiased cubic resampling (a = -0.5), clamped to [0, 1]"""
    if out_w < 1 or out_h < 1:
        raise ArgumentError(f"output dimensions must be >= 1, got {out_w}x{out_h}")
    if out_w == img.width and out_h == img.height:
        return img
    return Image(np.clip(resample(img.data, out_h, out_w), 0.0, 1.0))


def quantization_table(quality: int) -> np.ndarray:
    """Luminance table scaled by the libjpeg quality rule, entries in [1, 255]"""
    if not 1 <= quality <= 100:
        raise ArgumentError(f"quality must be in 1..100, got {quality}")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    table = np.floor((LUMINANCE_TABLE * scale + 50.0) / 100.0)
    return np.clip(table, 1.0, 255.0)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _to_blocks(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    ph, pw = -(-h // BLOCK) * BLOCK, -(-w // BLOCK) * BLOCK
    padded = np.pad(plane, ((0, ph - h), (0, pw - w)), mode="edge")
    shifted = (padded - 0.5) * 255.0
    return shifted.reshape(ph // BLOCK, BLOCK, pw // BLOCK, BLOCK).transpose(0, 2, 1, 3)


def quantized_levels(img: Image, quality: int) -> np.ndarray:
    """Integer DCT levels per 8x8 block, shape (rows, cols, 8, 8)"""
    if img.channels != 1:
        raise ArgumentError("compression simulation expects a grayscale image")
    table = quantization_table(quality)
    coeffs = dctn(_to_blocks(img.plane), type=2, norm="ortho", axes=(-2, -1))
    return _round_half_away(coeffs / table)


def compress_sim(img: Image, quality: int) -> Image:
    """Deterministic JPEG-style quantization artifacts (no entropy coding)"""
    table = quantization_table(quality)
    levels = quantized_levels(img, quality)
    blocks = idctn(levels * table, type=2, norm="ortho", axes=(-2, -1))
    rows, cols = blocks.shape[:2]
    plane = blocks.transpose(0, 2, 1, 3).reshape(rows * BLOCK, cols * BLOCK) / 255.0 + 0.5
    plane = plane[:img.height, :img.width]
    return Image(np.clip(plane, 0.0, 1.0)[np.newaxis])


def replay(x: Image, params: DegradationParams) -> DegradedPair:
    """Regenerate (y, y') from stored parameters without resampling them"""
    scale = params.scale
    if x.channels != 1:
        raise ArgumentError("degradation expects a grayscale HR image")
    if x.width % scale or x.height % scale:
        raise ArgumentError(f"HR size {x.width}x{x.height} is not divisible by scale {scale}")
    out_w, out_h = x.width // scale, x.height // scale

    noisy = apply_noise_stack(x, params, generator(params.seed, NOISE_STREAM))
    y = compress_sim(bicubic_resize(noisy, out_w, out_h), params.jpeg_quality)
    y_clean = bicubic_resize(x, out_w, out_h)
    return DegradedPair(y=y, y_clean=y_clean, params=params)


def degrade_pair(x: Image, cfg: DegradationConfig, seed: int) -> DegradedPair:
    """Sample parameters for `seed` and produce the noisy and clean LR images"""
    if x.width % cfg.scale or x.height % cfg.scale:
        raise ArgumentError(f"HR size {x.width}x{x.height} is not divisible by scale {cfg.scale}")
    params = sample_params(cfg, generator(seed, SAMPLING_STREAM), seed=seed)
    logger.debug("Sampled degradation %s", params.model_dump())
    return replay(x, params)
