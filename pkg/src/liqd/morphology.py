"""Binary morphology and container-mask compensation.

Masks are 2-D boolean arrays. Both dilation and erosion treat pixels outside
the frame as background, so foreground touching the border erodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

MAX_REACH = 15


@dataclass(frozen=True)
class StructuringElement:
    """Set of ``(dy, dx)`` offsets probed around the anchor ``(0, 0)``."""

    offsets: tuple[tuple[int, int], ...]

    def __post_init__(self):
        offsets = tuple(sorted({(int(dy), int(dx)) for dy, dx in self.offsets}))
        if (0, 0) not in offsets:
            raise ValueError("structuring element must contain the anchor (0, 0)")
        if any(abs(dy) > MAX_REACH or abs(dx) > MAX_REACH for dy, dx in offsets):
            raise ValueError(f"structuring element offsets must stay within +/-{MAX_REACH}")
        object.__setattr__(self, "offsets", offsets)

    def __len__(self):
        return len(self.offsets)

    @property
    def reach(self) -> int:
        return max(max(abs(dy), abs(dx)) for dy, dx in self.offsets)

    def to_array(self) -> np.ndarray:
        r = self.reach
        grid = np.zeros((2 * r + 1, 2 * r + 1), dtype=bool)
        for dy, dx in self.offsets:
            grid[dy + r, dx + r] = True
        return grid


SINGLETON = StructuringElement(((0, 0),))


def ellipse_se(size: int) -> StructuringElement:
    """Filled ellipse inscribed in a ``size x size`` square.

    Row ``dy`` spans ``|dx| <= round(sqrt(r^2 - dy^2))`` with ``r = size // 2``,
    which gives the 17-pixel 5x5 ellipse and the 3x3 plus.
    """
    if not isinstance(size, (int, np.integer)) or size % 2 == 0 or not 3 <= size <= 31:
        raise ValueError(f"ellipse size must be an odd integer in [3, 31], got {size!r}")
    r = size // 2
    offsets = []
    for dy in range(-r, r + 1):
        half = int(round(math.sqrt(r * r - dy * dy)))
        offsets.extend((dy, dx) for dx in range(-half, half + 1))
    return StructuringElement(tuple(offsets))


def _check_mask(mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2 or mask.size == 0:
        raise ValueError(f"expected a non-empty 2-D mask, got shape {mask.shape}")
    return mask


def _probe(mask: np.ndarray, se: StructuringElement, combine) -> np.ndarray:
    h, w = mask.shape
    r = se.reach
    padded = np.zeros((h + 2 * r, w + 2 * r), dtype=bool)
    padded[r:r + h, r:r + w] = mask
    out = None
    for dy, dx in se.offsets:
        shifted = padded[r + dy:r + dy + h, r + dx:r + dx + w]
        out = shifted.copy() if out is None else combine(out, shifted, out=out)
    return out


def dilate(mask, se: StructuringElement) -> np.ndarray:
    """Set (y, x) wherever the element translated to (y, x) hits foreground."""
    return _probe(_check_mask(mask), se, np.logical_or)


def erode(mask, se: StructuringElement) -> np.ndarray:
    """Keep (y, x) only where every translated offset lands on foreground."""
    return _probe(_check_mask(mask), se, np.logical_and)


def close(mask, se: StructuringElement) -> np.ndarray:
    return erode(dilate(mask, se), se)


def fill_holes(mask) -> np.ndarray:
    """Fill background regions not 4-connected to the frame border."""
    mask = _check_mask(mask)
    return ndimage.binary_fill_holes(mask, structure=ndimage.generate_binary_structure(2, 1))


def compensate(mask, se: StructuringElement | None = None) -> np.ndarray:
    """Repair a defective container mask: closing, then hole filling.

    Never removes foreground that lies at least the element's reach away
    from the frame edge; closer than that, the background padding of the
    erosion can trim it.
    """
    if se is None:
        se = ellipse_se(5)
    return fill_holes(close(mask, se))


def apply_mask(image: np.ndarray, mask) -> np.ndarray:
    """Black out everything outside the mask."""
    image = np.asarray(image)
    mask = _check_mask(mask)
    if image.shape[:2] != mask.shape:
        raise ValueError(f"image {image.shape[:2]} and mask {mask.shape} dimensions differ")
    keep = mask if image.ndim == 2 else mask[..., None]
    return np.where(keep, image, 0).astype(image.dtype)


def boundary(mask) -> np.ndarray:
    """Foreground pixels with at least one 4-neighbour in the background (or off-frame)."""
    mask = _check_mask(mask)
    return mask & ~erode(mask, ellipse_se(3))


def iou(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union
