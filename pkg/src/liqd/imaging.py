"""Image containers, file I/O and the fused dual grayscale conversion.

Images are plain numpy arrays: ``uint8`` with shape ``(H, W)`` for grayscale
or ``(H, W, 3)`` for RGB. Every conversion is evaluated in float64 first and
only rounded (half-up) when written back to 8-bit storage.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


@dataclass(frozen=True)
class GrayParams:
    """Weights of the luminance/chrominance and normalized-rgb intensities."""

    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError(f"alpha and beta must lie in [0, 1], got {self.alpha}, {self.beta}")
        if abs(self.alpha + self.beta - 1.0) > 1e-12:
            raise ValueError(f"alpha + beta must equal 1, got {self.alpha + self.beta}")


def check_image(image: np.ndarray) -> np.ndarray:
    """Validate an 8-bit raster and return it unchanged."""
    image = np.asarray(image)
    if image.ndim not in (2, 3) or (image.ndim == 3 and image.shape[2] != 3):
        raise ValueError(f"expected (H, W) or (H, W, 3) image, got shape {image.shape}")
    if image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError("image must be at least 1x1")
    if image.dtype != np.uint8:
        raise ValueError(f"expected uint8 storage, got {image.dtype}")
    return image


def is_rgb(image: np.ndarray) -> bool:
    return image.ndim == 3


def round_half_up(values) -> np.ndarray:
    return np.floor(np.asarray(values, dtype=np.float64) + 0.5)


def to_storage(values) -> np.ndarray:
    """Clamp real intensities to [0, 255] and round half-up into uint8."""
    return np.clip(round_half_up(values), 0, 255).astype(np.uint8)


def _channels(rgb) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rgb = np.asarray(rgb, dtype=np.float64)
    return rgb[..., 0], rgb[..., 1], rgb[..., 2]


def intensity_i1(rgb, clamp: bool = True):
    """Luminance/chrominance intensity ``(R/3 + G/3 + B/3 + U + V) / 4``.

    ``Y = 0.299R + 0.587G + 0.114B``, ``U = 0.565(B - Y)``, ``V = 0.713(R - Y)``.
    Saturated hues can push the raw value outside [0, 255]; it is clamped
    unless ``clamp`` is False.

    Works on a single ``(R, G, B)`` triple or any ``(..., 3)`` array.
    """
    r, g, b = _channels(rgb)
    y = 0.299 * r + 0.587 * g + 0.114 * b
    u = 0.565 * (b - y)
    v = 0.713 * (r - y)
    out = (r / 3 + g / 3 + b / 3 + u + v) / 4
    if clamp:
        out = np.clip(out, 0.0, 255.0)
    return out[()] if np.ndim(out) == 0 else out


def intensity_i2(rgb):
    """Normalized-rgb intensity ``(R^2 + G^2 + B^2) / (R + G + B)``; 0 for black."""
    r, g, b = _channels(rgb)
    total = r + g + b
    safe = np.where(total > 0, total, 1.0)
    out = np.where(total > 0, (r / safe) * r + (g / safe) * g + (b / safe) * b, 0.0)
    return out[()] if np.ndim(out) == 0 else out


def fused_intensity(image, params: GrayParams = GrayParams()) -> np.ndarray:
    """Real-valued ``alpha * I1 + beta * I2`` before any rounding."""
    image = np.asarray(image)
    if image.ndim == 0 or image.shape[-1] != 3:
        raise ValueError("fused intensity needs an RGB input")
    return params.alpha * intensity_i1(image) + params.beta * intensity_i2(image)


def to_grayscale(image: np.ndarray, params: GrayParams = GrayParams()) -> np.ndarray:
    """Convert an RGB image to 8-bit grayscale with the weighted fusion.

    Raises:
        ValueError: if ``image`` is already single-channel.
    """
    image = check_image(image)
    if not is_rgb(image):
        raise ValueError("to_grayscale expects a 3-channel RGB image, got a grayscale one")
    return to_storage(fused_intensity(image, params))


# -- masks <-> images -------------------------------------------------------

def mask_to_image(mask: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)


def image_to_mask(image: np.ndarray) -> np.ndarray:
    """Foreground wherever the gray level is at least 128."""
    image = check_image(image)
    if is_rgb(image):
        image = image.max(axis=2)
    return image >= 128


# -- file I/O -------------------------------------------------------------

_ACCEPTED_MODES = {"1", "L", "P", "RGB", "RGBA", "LA"}


def read_image(path) -> np.ndarray:
    """Decode a PNG or binary PGM/PPM into an 8-bit array.

    Raises:
        ValueError: for 16-bit (or otherwise non-8-bit) files.
        OSError: if the file cannot be read or decoded.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode not in _ACCEPTED_MODES:
                raise ValueError(f"{path}: unsupported pixel mode {mode!r}; only 8-bit images are accepted")
            if mode in ("1", "L"):
                data = np.array(im.convert("L"))
            elif mode == "LA":
                data = np.array(im.convert("L"))
            else:
                data = np.array(im.convert("RGB"))
    except (OSError, SyntaxError) as exc:
        raise OSError(f"{path}: cannot decode image ({exc})") from exc
    return data.astype(np.uint8)


def write_image(path, image: np.ndarray) -> None:
    """Encode by extension: ``.png``, ``.pgm`` or ``.ppm``."""
    path = Path(path)
    image = check_image(np.asarray(image))
    suffix = path.suffix.lower()
    if suffix == ".pgm" and is_rgb(image):
        raise ValueError("PGM output needs a grayscale image")
    if suffix == ".ppm" and not is_rgb(image):
        image = np.repeat(image[..., None], 3, axis=2)
    path.parent.mkdir(parents=True, exist_ok=True)
    fmt = {".png": "PNG", ".pgm": "PPM", ".ppm": "PPM"}.get(suffix)
    if fmt is None:
        raise ValueError(f"unsupported image extension {suffix!r}")
    Image.fromarray(image).save(path, format=fmt)


def read_mask(path) -> np.ndarray:
    return image_to_mask(read_image(path))


def write_mask(path, mask: np.ndarray) -> None:
    write_image(path, mask_to_image(mask))
