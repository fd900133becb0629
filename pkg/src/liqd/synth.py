"""Deterministic synthetic container scenes with ground truth.

A scene is a rectangular container (walls + interior) on a flat background.
The interior holds bright air above a darker liquid; frames of a sequence
differ by the liquid level row, or by a horizontal container shift. Rows grow
downward, so a rising liquid has a decreasing level row.

Rectangles are ``(top, left, bottom, right)`` with exclusive bottom/right.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from liqd.classifier import LevelState
from liqd.imaging import to_storage, write_image, write_mask
from liqd.morphology import StructuringElement, erode
from liqd.rng import SplitMix64

MARGIN = 2


@dataclass(frozen=True)
class SceneSpec:
    width: int = 80
    height: int = 64
    container_rect: tuple[int, int, int, int] = (8, 26, 58, 54)
    wall_thickness: int = 3
    gray_background: int = 90
    gray_wall: int = 30
    gray_air: int = 200
    gray_liquid: int = 70
    noise_sigma: float = 4.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "container_rect", tuple(int(v) for v in self.container_rect))
        top, left, bottom, right = self.container_rect
        if self.width < 1 or self.height < 1:
            raise ValueError("scene must be at least 1x1")
        if top < MARGIN or left < MARGIN or bottom > self.height - MARGIN or right > self.width - MARGIN:
            raise ValueError(f"container {self.container_rect} must sit {MARGIN} px inside the frame")
        if self.wall_thickness < 1:
            raise ValueError("wall_thickness must be at least 1")
        if bottom - top <= self.wall_thickness + 1 or right - left <= 2 * self.wall_thickness + 1:
            raise ValueError("container too small for its walls")
        if abs(self.gray_liquid - self.gray_air) < 80:
            raise ValueError("air/liquid contrast must be at least 80 gray levels")
        if not self.gray_liquid < self.gray_air:
            raise ValueError("liquid must be darker than air")
        for name in ("gray_background", "gray_wall", "gray_air", "gray_liquid"):
            if not 0 <= getattr(self, name) <= 255:
                raise ValueError(f"{name} must lie in [0, 255]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    @property
    def interior_rows(self) -> tuple[int, int]:
        """Interior row span (open top, walled bottom)."""
        top, _, bottom, _ = self.container_rect
        return top, bottom - self.wall_thickness

    @property
    def interior_height(self) -> int:
        lo, hi = self.interior_rows
        return hi - lo

    def level_row(self, fill: float) -> float:
        """Row of the liquid surface for a fill fraction (0 = empty, 1 = full)."""
        _, hi = self.interior_rows
        return hi - fill * self.interior_height

    def fill_fraction(self, level_row: float) -> float:
        _, hi = self.interior_rows
        return (hi - level_row) / self.interior_height


STATIC_KINDS = (LevelState.LowStatic, LevelState.HighStatic)


@dataclass(frozen=True)
class Scenario:
    kind: LevelState
    frames: int = 6
    level_start: float = 0.3
    level_end: float = 0.3
    jitter: float = 0.0
    shift_px: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", LevelState.parse(self.kind))
        if self.frames < 2:
            raise ValueError("a scenario needs at least 2 frames")
        if not (0 <= self.level_start <= 1 and 0 <= self.level_end <= 1):
            raise ValueError("levels are fill fractions in [0, 1]")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")
        if self.kind is LevelState.Rising and not self.level_end > self.level_start:
            raise ValueError("Rising needs level_end > level_start")
        if self.kind is LevelState.Falling and not self.level_end < self.level_start:
            raise ValueError("Falling needs level_end < level_start")
        if self.kind in STATIC_KINDS and self.level_end != self.level_start:
            raise ValueError("static scenarios need level_end == level_start")

    def pair_label(self) -> LevelState:
        if self.kind in STATIC_KINDS:
            return LevelState.LowStatic if self.level_start < 0.5 else LevelState.HighStatic
        return self.kind

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d


@dataclass
class Sequence:
    frames: list[np.ndarray]
    masks: list[np.ndarray]
    levels: list[float]
    labels: list[LevelState]
    spec: SceneSpec
    scenario: Scenario = field(repr=False)


def _container_mask(spec: SceneSpec, shift: int) -> np.ndarray:
    top, left, bottom, right = spec.container_rect
    mask = np.zeros((spec.height, spec.width), dtype=bool)
    mask[top:bottom, left + shift:right + shift] = True
    return mask


def render_frame(spec: SceneSpec, level_row: float, shift: int = 0, noise: np.ndarray | None = None):
    """Paint one RGB frame; returns ``(frame, container_mask)``."""
    top, left, bottom, right = spec.container_rect
    left += shift
    right += shift
    t = spec.wall_thickness
    gray = np.full((spec.height, spec.width), float(spec.gray_background))
    gray[top:bottom, left:right] = spec.gray_wall
    lo, hi = spec.interior_rows
    surface = int(np.floor(level_row + 0.5))
    surface = min(max(surface, lo), hi)
    gray[lo:surface, left + t:right - t] = spec.gray_air
    gray[surface:hi, left + t:right - t] = spec.gray_liquid
    rgb = np.repeat(gray[..., None], 3, axis=2)
    if noise is not None:
        rgb = rgb + noise
    return to_storage(rgb), _container_mask(spec, shift)


def render_sequence(spec: SceneSpec, scenario: Scenario) -> Sequence:
    """Render every frame of a scenario with its ground truth."""
    n = scenario.frames
    shifts = [k * int(scenario.shift_px) for k in range(n)]
    _, left, _, right = spec.container_rect
    if min(shifts) + left < MARGIN or max(shifts) + right > spec.width - MARGIN:
        raise ValueError("container shift pushes the container out of the frame")
    rng = SplitMix64(spec.seed)
    fills = np.linspace(scenario.level_start, scenario.level_end, n)
    jitter = rng.uniform_range(-scenario.jitter, scenario.jitter, n) if scenario.jitter > 0 else np.zeros(n)
    frames, masks, levels = [], [], []
    for k in range(n):
        level = float(spec.level_row(fills[k]) + jitter[k])
        noise = None
        if spec.noise_sigma > 0:
            noise = spec.noise_sigma * rng.normal(spec.height * spec.width * 3).reshape(spec.height, spec.width, 3)
        frame, mask = render_frame(spec, level, shifts[k], noise)
        frames.append(frame)
        masks.append(mask)
        levels.append(level)
    labels = [scenario.pair_label()] * (n - 1)
    return Sequence(frames, masks, levels, labels, spec, scenario)


# -- corpus ---------------------------------------------------------------

KIND_ORDER = (
    LevelState.LowStatic,
    LevelState.Rising,
    LevelState.HighStatic,
    LevelState.Falling,
    LevelState.ContainerMoved,
)


def random_scenario(kind: LevelState, seed: int, frames: int = 6, jitter: float = 0.25) -> Scenario:
    """Draw scenario parameters for ``kind`` from a seeded stream.

    Static fills stay clear of the 0.5 Low/High boundary; level changes are
    large enough that each frame step exceeds twice the jitter.
    """
    rng = SplitMix64(seed ^ 0x5EED5CE7A710)
    kind = LevelState.parse(kind)
    if kind is LevelState.LowStatic:
        lvl = rng.uniform_range(0.1, 0.4)
        return Scenario(kind, frames, lvl, lvl, jitter)
    if kind is LevelState.HighStatic:
        lvl = rng.uniform_range(0.6, 0.9)
        return Scenario(kind, frames, lvl, lvl, jitter)
    if kind is LevelState.Rising:
        start = rng.uniform_range(0.1, 0.45)
        return Scenario(kind, frames, start, start + rng.uniform_range(0.3, 0.45), jitter)
    if kind is LevelState.Falling:
        start = rng.uniform_range(0.55, 0.9)
        return Scenario(kind, frames, start, start - rng.uniform_range(0.3, 0.45), jitter)
    lvl = rng.uniform_range(0.1, 0.9)
    step = rng.integers(2, 5) * (1 if rng.random() < 0.5 else -1)
    return Scenario(kind, frames, lvl, lvl, jitter, shift_px=int(step))


def standard_corpus(per_class: int = 40, seed_base: int = 0, frames: int = 6, spec: SceneSpec = SceneSpec()):
    """Yield ``(name, Sequence)`` for ``5 * per_class`` sequences, classes interleaved.

    Sequence ``i`` uses seed ``seed_base + i`` for both its scenario and its
    rendering noise.
    """
    for i in range(5 * per_class):
        seed = seed_base + i
        kind = KIND_ORDER[i % 5]
        scenario = random_scenario(kind, seed, frames)
        yield f"seq_{seed:05d}", render_sequence(replace(spec, seed=seed), scenario)


def write_sequence(directory, seq: Sequence) -> None:
    """Write ``frames/NNNN.png``, ``masks/NNNN.png`` and ``truth.json``."""
    directory = Path(directory)
    for k, (frame, mask) in enumerate(zip(seq.frames, seq.masks)):
        write_image(directory / "frames" / f"{k:04d}.png", frame)
        write_mask(directory / "masks" / f"{k:04d}.png", mask)
    truth = {
        "levels": seq.levels,
        "labels": [label.value for label in seq.labels],
        "spec": asdict(seq.spec),
        "scenario": seq.scenario.to_dict(),
    }
    (directory / "truth.json").write_text(json.dumps(truth, indent=2))


def write_corpus(directory, sequences) -> list[str]:
    """Write every ``(name, Sequence)`` plus a ``corpus.json`` manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for name, seq in sequences:
        write_sequence(directory / name, seq)
        names.append(name)
    (directory / "corpus.json").write_text(json.dumps({"sequences": names}, indent=2))
    return names


# -- mask corruption ----------------------------------------------------------

def _disk(radius: int) -> StructuringElement:
    """Euclidean disk ``dy^2 + dx^2 <= radius^2`` (13 pixels for radius 2)."""
    if radius > 15:
        raise ValueError("hole radius must be at most 15")
    return StructuringElement(tuple(
        (dy, dx)
        for dy in range(-radius, radius + 1)
        for dx in range(-radius, radius + 1)
        if dy * dy + dx * dx <= radius * radius
    ))


def corrupt_mask(mask, holes: int = 0, hole_radius: int = 2, breaks: int = 0, seed: int = 0) -> np.ndarray:
    """Punch round holes and thin wall breaks into a container mask.

    Holes are disks centred far enough inside the foreground to stay
    enclosed. A break is a 1-px-thick horizontal cut running inward from the
    left or right edge of the mask, the kind of crack closing reconnects.
    """
    if holes < 0 or breaks < 0 or hole_radius < 0:
        raise ValueError("hole/break counts and radius must be non-negative")
    out = np.asarray(mask, dtype=bool).copy()
    if not out.any() or (holes == 0 and breaks == 0):
        return out
    rng = SplitMix64(seed)
    h, w = out.shape
    if holes:
        disk = _disk(hole_radius)
        safe = erode(out, _disk(min(hole_radius + 1, 15)))
        candidates = np.argwhere(safe) if safe.any() else np.argwhere(out)
        for _ in range(holes):
            cy, cx = candidates[rng.integers(0, len(candidates))]
            for dy, dx in disk.offsets:
                y, x = cy + dy, cx + dx
                if 0 <= y < h and 0 <= x < w:
                    out[y, x] = False
    rows = np.nonzero(out.any(axis=1))[0]
    usable = rows[2:-3] if rows.size > 5 else rows
    for _ in range(breaks):
        if usable.size == 0:
            break
        y = int(usable[rng.integers(0, len(usable))])
        cols = np.nonzero(out[y])[0]
        if cols.size == 0:
            continue
        length = rng.integers(2, 7)
        if rng.random() < 0.5:
            out[y, cols[0]:cols[0] + length] = False
        else:
            out[y, max(cols[-1] - length + 1, 0):cols[-1] + 1] = False
    return out
