"""Image container, PNG/PGM codec, luma conversion and shared resampling math."""
import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image as PILImage

from radsmith.core.errors import ArgumentError, DecodeError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# Pillow mode -> full-scale value of the stored samples
_MODE_MAX = {
    "L": 255.0,
    "RGB": 255.0,
    "I;16": 65535.0,
    "I;16B": 65535.0,
    "I;16L": 65535.0,
    "I": 65535.0,
}
_SUPPORTED_FORMATS = ("PNG", "PPM")
# PNG (bit depth, color type) pairs: 8/16-bit grayscale, 8-bit RGB
_PNG_LAYOUTS = {(8, 0), (16, 0), (8, 2)}

# BT.601 studio-swing luma on [0, 1] inputs
_LUMA_WEIGHTS = np.array([65.481, 128.553, 24.966])
_LUMA_OFFSET = 16.0


@dataclass(frozen=True)
class Image:
    """Planar float image, shape (channels, height, width), samples in [0, 1]"""
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 3 or data.shape[0] not in (1, 3):
            raise ArgumentError(f"image data must have shape (1|3, H, W), got {data.shape}")
        if data.shape[1] < 1 or data.shape[2] < 1:
            raise ArgumentError(f"image dimensions must be >= 1, got {data.shape[1:]}")
        if not np.all(np.isfinite(data)):
            raise ArgumentError("image samples must be finite")
        if data.min() < 0.0 or data.max() > 1.0:
            raise ArgumentError("image samples must lie in [0, 1]")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, array: np.ndarray, clamp: bool = False) -> "Image":
        """Build from (H, W) or (C, H, W) samples, optionally clamping into [0, 1]"""
        arr = np.asarray(array, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[np.newaxis]
        if clamp:
            arr = np.clip(arr, 0.0, 1.0)
        return cls(arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def plane(self) -> np.ndarray:
        """The single plane of a grayscale image"""
        if self.channels != 1:
            raise ArgumentError("plane is only defined for grayscale images")
        return self.data[0]

    def crop(self, top: int, left: int, height: int, width: int) -> "Image":
        if top < 0 or left < 0 or top + height > self.height or left + width > self.width:
            raise ArgumentError(f"crop ({top}, {left}, {height}, {width}) exceeds {self.height}x{self.width}")
        return Image(self.data[:, top:top + height, left:left + width])

    def center_crop_to_multiple(self, multiple: int) -> "Image":
        """Center crop so both dimensions are divisible by `multiple`"""
        height = self.height - self.height % multiple
        width = self.width - self.width % multiple
        if height < 1 or width < 1:
            raise ArgumentError(f"image {self.height}x{self.width} is smaller than {multiple}")
        top = (self.height - height) // 2
        left = (self.width - width) // 2
        return self.crop(top, left, height, width)


def _png_layout(path: PathLike) -> Tuple[int, int]:
    """Bit depth and color type from the IHDR chunk (Pillow narrows 16-bit RGB to 8 bits)"""
    try:
        with open(path, "rb") as f:
            header = f.read(26)
    except OSError as e:
        raise DecodeError(path, str(e)) from e
    if len(header) < 26 or header[12:16] != b"IHDR":
        raise DecodeError(path, "PNG has no IHDR chunk")
    return header[24], header[25]


def load_image(path: PathLike) -> Image:
    """Read an 8/16-bit grayscale or 8-bit RGB PNG, or a P2/P5 PGM, scaled to [0, 1]"""
    try:
        with PILImage.open(path) as im:
            im.load()
            fmt, mode = im.format, im.mode
            samples = np.asarray(im)
    except (OSError, ValueError) as e:
        raise DecodeError(path, str(e)) from e

    if fmt not in _SUPPORTED_FORMATS:
        raise DecodeError(path, f"unsupported format {fmt}")
    if mode not in _MODE_MAX:
        raise DecodeError(path, f"unsupported pixel mode {mode}")
    if fmt == "PPM" and mode == "RGB":
        raise DecodeError(path, "only grayscale PGM is supported")
    if fmt == "PNG":
        depth, color_type = _png_layout(path)
        if (depth, color_type) not in _PNG_LAYOUTS:
            raise DecodeError(path, f"unsupported PNG bit depth {depth} (color type {color_type})")

    full_scale = _MODE_MAX[mode]
    data = samples.astype(np.float64)
    if data.min() < 0 or data.max() > full_scale:
        raise DecodeError(path, f"samples outside 0..{int(full_scale)}")
    data = data / full_scale

    if data.ndim == 2:
        data = data[np.newaxis]
    else:
        data = np.transpose(data, (2, 0, 1))
    logger.debug("Loaded %s (%s, %s) %s", path, fmt, mode, data.shape)
    return Image(data)


def to_bytes(img: Image) -> np.ndarray:
    """Quantize to uint8 with round-half-away-from-zero, clamped to [0, 255]"""
    return np.clip(np.floor(img.data * 255.0 + 0.5), 0, 255).astype(np.uint8)


def save_image(img: Image, path: PathLike) -> None:
    """Write an 8-bit PNG (grayscale when the image has one channel)"""
    quantized = to_bytes(img)
    if img.channels == 1:
        pil = PILImage.fromarray(quantized[0])
    else:
        pil = PILImage.fromarray(np.ascontiguousarray(np.transpose(quantized, (1, 2, 0))))
    pil.save(str(path), format="PNG")


def to_luma(img: Image) -> Image:
    """BT.601 Y channel; grayscale images pass through unchanged"""
    if img.channels == 1:
        return img
    y = (np.tensordot(_LUMA_WEIGHTS, img.data, axes=(0, 0)) + _LUMA_OFFSET) / 255.0
    return Image(np.clip(y, 0.0, 1.0)[np.newaxis])


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def cubic(x: np.ndarray) -> np.ndarray:
    """Keys cubic convolution kernel with a = -0.5"""
    absx = np.abs(x)
    absx2 = absx * absx
    absx3 = absx2 * absx
    inner = (absx <= 1).astype(np.float64)
    outer = ((absx > 1) & (absx <= 2)).astype(np.float64)
    return (1.5 * absx3 - 2.5 * absx2 + 1) * inner + (-0.5 * absx3 + 2.5 * absx2 - 4 * absx + 2) * outer


@lru_cache(maxsize=64)
def resize_matrix(in_size: int, out_size: int) -> np.ndarray:
    """Dense (out_size, in_size) resampling operator along one axis.

    Downscaling widens the kernel by the scale ratio (antialiasing); indices
    outside the input are clamped to the edge.
    """
    if in_size < 1 or out_size < 1:
        raise ArgumentError(f"resize sizes must be >= 1, got {in_size} -> {out_size}")
    scale = out_size / in_size
    kernel_width = 4.0 / scale if scale < 1 else 4.0

    x = np.arange(1, out_size + 1, dtype=np.float64)
    u = x / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(u - kernel_width / 2)
    taps = int(np.ceil(kernel_width)) + 2
    indices = left[:, np.newaxis] + np.arange(taps)[np.newaxis, :]
    distance = u[:, np.newaxis] - indices

    if scale < 1:
        weights = scale * cubic(distance * scale)
    else:
        weights = cubic(distance)
    weights = weights / weights.sum(axis=1, keepdims=True)

    columns = np.clip(indices, 1, in_size).astype(np.int64) - 1
    rows = np.repeat(np.arange(out_size), taps)
    matrix = np.zeros((out_size, in_size))
    np.add.at(matrix, (rows, columns.ravel()), weights.ravel())
    matrix.setflags(write=False)
    return matrix


def resample(array: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable cubic resampling of the last two axes (no clamping)"""
    wh = resize_matrix(array.shape[-2], out_h)
    ww = resize_matrix(array.shape[-1], out_w)
    return np.matmul(np.matmul(wh, array), ww.T)
