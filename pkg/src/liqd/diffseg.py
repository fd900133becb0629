"""Adjacent-frame threshold differencing and block-level change extraction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class DiffParams:
    threshold: float = 50
    block_size: int = 8
    block_fill_ratio: float = 0.1

    def __post_init__(self):
        if not 1 <= self.threshold <= 254:
            raise ValueError(f"threshold must lie in [1, 254], got {self.threshold}")
        if int(self.block_size) != self.block_size or self.block_size < 1:
            raise ValueError(f"block_size must be a positive integer, got {self.block_size}")
        if not 0 < self.block_fill_ratio <= 1:
            raise ValueError(f"block_fill_ratio must lie in (0, 1], got {self.block_fill_ratio}")


@dataclass(frozen=True)
class DiffResult:
    """Signed threshold-exceedance planes for one frame pair.

    ``pos_plane`` marks brightening (curr - prev > T), ``neg_plane`` darkening;
    ``abs_plane`` is their union, i.e. the classic white-on-black change image.
    """

    pos_plane: np.ndarray
    neg_plane: np.ndarray
    abs_plane: np.ndarray
    block_map: np.ndarray
    white_count: int
    block_size: int = 8

    @property
    def shape(self):
        return self.abs_plane.shape


@dataclass(frozen=True)
class BandSummary:
    top_row: Optional[int]
    bottom_row: Optional[int]
    centroid_row: Optional[float]
    sign_balance: float

    def to_dict(self) -> dict:
        return {
            "top": self.top_row,
            "bottom": self.bottom_row,
            "centroid": self.centroid_row,
            "sign_balance": self.sign_balance,
        }


def _check_gray(frame) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim != 2:
        raise ValueError(f"expected a grayscale frame, got shape {frame.shape}")
    return frame


def _block_sums(plane: np.ndarray, block_size: int) -> np.ndarray:
    h, w = plane.shape
    rows = -(-h // block_size)
    cols = -(-w // block_size)
    padded = np.zeros((rows * block_size, cols * block_size), dtype=np.int64)
    padded[:h, :w] = plane
    return padded.reshape(rows, block_size, cols, block_size).sum(axis=(1, 3))


def classify_blocks(abs_plane, params: DiffParams = DiffParams()) -> np.ndarray:
    """Mark blocks whose white-pixel count exceeds ``ratio * block area``.

    Partial blocks on the right/bottom edges use their true pixel count.
    """
    abs_plane = np.asarray(abs_plane, dtype=bool)
    if abs_plane.ndim != 2 or abs_plane.size == 0:
        raise ValueError("abs_plane must be a non-empty 2-D mask")
    bs = int(params.block_size)
    counts = _block_sums(abs_plane, bs)
    areas = _block_sums(np.ones(abs_plane.shape, dtype=bool), bs)
    return counts > params.block_fill_ratio * areas


def frame_diff(prev, curr, params: DiffParams = DiffParams()) -> DiffResult:
    prev = _check_gray(prev)
    curr = _check_gray(curr)
    if prev.shape != curr.shape:
        raise ValueError(f"frame dimensions differ: {prev.shape} vs {curr.shape}")
    delta = curr.astype(np.float64) - prev.astype(np.float64)
    pos = delta > params.threshold
    neg = -delta > params.threshold
    union = pos | neg
    return DiffResult(
        pos_plane=pos,
        neg_plane=neg,
        abs_plane=union,
        block_map=classify_blocks(union, params),
        white_count=int(np.count_nonzero(union)),
        block_size=int(params.block_size),
    )


def motion_pixels(result: DiffResult) -> np.ndarray:
    """White pixels that fall inside motion blocks."""
    block_size = result.block_size
    expanded = np.repeat(np.repeat(result.block_map, block_size, axis=0), block_size, axis=1)
    h, w = result.abs_plane.shape
    return result.abs_plane & expanded[:h, :w]


def sign_balance(pos_count: int, neg_count: int) -> float:
    total = pos_count + neg_count
    return 0.0 if total == 0 else (pos_count - neg_count) / total


def change_band(result: DiffResult) -> BandSummary:
    """Summarize where the change happened.

    ``top_row``/``bottom_row`` bound the white pixels that lie in motion
    blocks; ``centroid_row`` is the mean row of every white pixel.
    """
    balance = sign_balance(int(np.count_nonzero(result.pos_plane)), int(np.count_nonzero(result.neg_plane)))
    if result.white_count == 0:
        return BandSummary(None, None, None, balance)
    rows = np.nonzero(result.abs_plane)[0]
    centroid = float(rows.mean())
    moving_rows = np.nonzero(motion_pixels(result).any(axis=1))[0]
    if moving_rows.size == 0:
        return BandSummary(None, None, centroid, balance)
    return BandSummary(int(moving_rows[0]), int(moving_rows[-1]), centroid, balance)

