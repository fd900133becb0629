"""Five-state liquid-level classification of frame-difference results.

Two classifiers share one feature representation: a rule-based
``heuristic_classify`` and a small 2-layer perceptron trained with
mini-batch SGD on cross-entropy.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from liqd.diffseg import DiffResult, change_band
from liqd.morphology import boundary, dilate, ellipse_se
from liqd.rng import SplitMix64


class LevelState(str, enum.Enum):
    LowStatic = "LowStatic"
    Rising = "Rising"
    HighStatic = "HighStatic"
    Falling = "Falling"
    ContainerMoved = "ContainerMoved"

    @property
    def index(self) -> int:
        return STATES.index(self)

    @classmethod
    def parse(cls, value) -> "LevelState":
        if isinstance(value, cls):
            return value
        if isinstance(value, (int, np.integer)):
            return STATES[int(value)]
        try:
            return cls(value)
        except ValueError:
            raise ValueError(f"unknown level state {value!r}; expected one of {[s.value for s in STATES]}") from None


STATES = tuple(LevelState)
N_CLASSES = len(STATES)

GRID = 16
N_GLOBALS = 6
FEATURE_LENGTH = 2 * GRID * GRID + N_GLOBALS
GLOBAL_NAMES = (
    "white_count_rate",
    "sign_balance",
    "band_top_fraction",
    "band_height_fraction",
    "boundary_overlap_fraction",
    "prev_fill_fraction",
)

BOUNDARY_ZONE = ellipse_se(5)


# -- features ---------------------------------------------------------------

def bounding_box(mask: np.ndarray) -> tuple[int, int, int, int]:
    """``(top, left, bottom, right)`` with exclusive bottom/right."""
    rows = np.nonzero(mask.any(axis=1))[0]
    cols = np.nonzero(mask.any(axis=0))[0]
    if rows.size == 0:
        raise ValueError("container mask is empty")
    return int(rows[0]), int(cols[0]), int(rows[-1]) + 1, int(cols[-1]) + 1


def _grid_density(plane: np.ndarray, box) -> np.ndarray:
    top, left, bottom, right = box
    crop = plane[top:bottom, left:right].astype(np.int64)
    h, w = crop.shape
    integral = np.zeros((h + 1, w + 1), dtype=np.int64)
    integral[1:, 1:] = crop.cumsum(axis=0).cumsum(axis=1)
    re = (np.arange(GRID + 1) * h) // GRID
    ce = (np.arange(GRID + 1) * w) // GRID
    sums = (integral[np.ix_(re[1:], ce[1:])] - integral[np.ix_(re[:-1], ce[1:])]
            - integral[np.ix_(re[1:], ce[:-1])] + integral[np.ix_(re[:-1], ce[:-1])])
    areas = np.outer(np.diff(re), np.diff(ce))
    return np.divide(sums, areas, out=np.zeros((GRID, GRID)), where=areas > 0)


def boundary_zone(mask: np.ndarray) -> np.ndarray:
    """Pixels within 2 px of the mask boundary, on either side."""
    return dilate(boundary(mask), BOUNDARY_ZONE)


def extract_features(diff: DiffResult, container_mask, prev_fill_fraction: float, prev_mask=None) -> np.ndarray:
    """Feature vector of length ``FEATURE_LENGTH`` with entries in [-1, 1].

    Layout: 16x16 densities of ``pos_plane`` then of ``neg_plane`` over the
    container bounding box, followed by the globals in ``GLOBAL_NAMES``.
    When ``prev_mask`` is given (moving containers), the boundary zone covers
    both the previous and the current container outline.
    """
    mask = np.asarray(container_mask, dtype=bool)
    if mask.shape != diff.abs_plane.shape:
        raise ValueError(f"mask {mask.shape} and diff {diff.abs_plane.shape} dimensions differ")
    if not 0.0 <= prev_fill_fraction <= 1.0:
        raise ValueError(f"prev_fill_fraction must lie in [0, 1], got {prev_fill_fraction}")
    box = bounding_box(mask)
    top, _, bottom, _ = box
    box_h = bottom - top

    feats = np.zeros(FEATURE_LENGTH)
    feats[:GRID * GRID] = _grid_density(diff.pos_plane, box).ravel()
    feats[GRID * GRID:2 * GRID * GRID] = _grid_density(diff.neg_plane, box).ravel()

    band = change_band(diff)
    area = int(np.count_nonzero(mask))
    zone = boundary_zone(mask)
    if prev_mask is not None:
        zone |= boundary_zone(np.asarray(prev_mask, dtype=bool))
    g = 2 * GRID * GRID
    feats[g] = min(1.0, diff.white_count / area)
    feats[g + 1] = band.sign_balance
    if band.top_row is not None:
        feats[g + 2] = np.clip((band.top_row - top) / box_h, 0.0, 1.0)
        feats[g + 3] = np.clip((band.bottom_row - band.top_row + 1) / box_h, 0.0, 1.0)
    if diff.white_count:
        feats[g + 4] = np.count_nonzero(diff.abs_plane & zone) / diff.white_count
    feats[g + 5] = prev_fill_fraction
    return feats


def globals_of(features: np.ndarray) -> dict[str, float]:
    return dict(zip(GLOBAL_NAMES, (float(v) for v in features[2 * GRID * GRID:])))


def heuristic_classify(
    diff: DiffResult,
    container_mask,
    prev_fill_fraction: float,
    noise_floor: int = 24,
    prev_mask=None,
) -> LevelState:
    """Rule-based labelling used as an oracle for the trained model.

    Below the noise floor the pair is static and the previous fill decides
    Low vs High. Change concentrated on the container outline means the
    container moved. Otherwise the sign of the change gives the direction:
    liquid is darker than air, so a rising surface darkens pixels.
    """
    g = globals_of(extract_features(diff, container_mask, prev_fill_fraction, prev_mask))
    if diff.white_count <= noise_floor:
        return LevelState.LowStatic if prev_fill_fraction < 0.5 else LevelState.HighStatic
    if g["boundary_overlap_fraction"] > 0.5:
        return LevelState.ContainerMoved
    return LevelState.Rising if g["sign_balance"] < 0 else LevelState.Falling


# -- model ------------------------------------------------------------------

@dataclass
class MlpModel:
    """``n_in -> hidden (ReLU) -> 5 (softmax)``; weights stored as ``(fan_in, fan_out)``."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def layer_sizes(self) -> tuple[int, int, int]:
        return self.w1.shape[0], self.w1.shape[1], self.w2.shape[1]

    @classmethod
    def initialize(cls, seed: int, n_in: int = FEATURE_LENGTH, n_hidden: int = 32, n_out: int = N_CLASSES):
        """Glorot-uniform weights from SplitMix64(seed), zero biases."""
        rng = SplitMix64(seed)
        r1 = np.sqrt(6.0 / (n_in + n_hidden))
        r2 = np.sqrt(6.0 / (n_hidden + n_out))
        w1 = rng.uniform_range(-r1, r1, n_in * n_hidden).reshape(n_in, n_hidden)
        w2 = rng.uniform_range(-r2, r2, n_hidden * n_out).reshape(n_hidden, n_out)
        return cls(w1, np.zeros(n_hidden), w2, np.zeros(n_out))

    @classmethod
    def zeros(cls, n_in: int = FEATURE_LENGTH, n_hidden: int = 32, n_out: int = N_CLASSES):
        return cls(np.zeros((n_in, n_hidden)), np.zeros(n_hidden), np.zeros((n_hidden, n_out)), np.zeros(n_out))

    def copy(self) -> "MlpModel":
        return MlpModel(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, x: np.ndarray) -> np.ndarray:
        hidden = np.maximum(0.0, x @ self.w1 + self.b1)
        return softmax(hidden @ self.w2 + self.b2)

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray):
        """Mean cross-entropy over the batch and its parameter gradients."""
        x = np.atleast_2d(x)
        y = np.atleast_1d(y)
        n = x.shape[0]
        pre = x @ self.w1 + self.b1
        hidden = np.maximum(0.0, pre)
        probs = softmax(hidden @ self.w2 + self.b2)
        loss = -np.mean(np.log(np.maximum(probs[np.arange(n), y], 1e-300)))
        err = probs.copy()
        err[np.arange(n), y] -= 1.0
        err /= n
        dw2 = hidden.T @ err
        db2 = err.sum(axis=0)
        dhidden = err @ self.w2.T
        dhidden[pre <= 0] = 0.0
        dw1 = x.T @ dhidden
        db1 = dhidden.sum(axis=0)
        return loss, [dw1, db1, dw2, db2]

    def mean_loss(self, x: np.ndarray, y: np.ndarray) -> float:
        probs = self.forward(x)
        return float(-np.mean(np.log(np.maximum(probs[np.arange(len(y)), y], 1e-300))))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class TrainResult:
    model: MlpModel
    losses: list[float]


def _as_arrays(dataset) -> tuple[np.ndarray, np.ndarray]:
    if len(dataset) == 0:
        raise ValueError("training set is empty")
    x = np.stack([np.asarray(f, dtype=np.float64) for f, _ in dataset])
    y = np.array([LevelState.parse(label).index for _, label in dataset])
    return x, y


def train(dataset, lr: float = 0.05, epochs: int = 100, batch_size: int = 32, seed: int = 0, n_hidden: int = 32) -> TrainResult:
    """Fit an ``MlpModel`` on ``(features, label)`` pairs with mini-batch SGD.

    ``losses[0]`` is the mean loss of the initialization and ``losses[k]``
    the mean loss after epoch ``k``. Deterministic for a given seed.

    Raises:
        ValueError: if the set is empty or any of the five classes is missing.
    """
    x, y = _as_arrays(dataset)
    missing = [s.value for s in STATES if s.index not in set(y.tolist())]
    if missing:
        raise ValueError(f"training set lacks examples of: {', '.join(missing)}")
    model = MlpModel.initialize(seed, x.shape[1], n_hidden)
    rng = SplitMix64(seed ^ 0xD1B54A32D192ED03)
    losses = [model.mean_loss(x, y)]
    for _ in range(epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            idx = order[start:start + batch_size]
            _, grads = model.loss_and_grads(x[idx], y[idx])
            for p, g in zip(model.params(), grads):
                p -= lr * g
        losses.append(model.mean_loss(x, y))
    return TrainResult(model, losses)


def predict(model: MlpModel, features) -> tuple[LevelState, float]:
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (model.layer_sizes[0],):
        raise ValueError(f"expected {model.layer_sizes[0]} features, got shape {features.shape}")
    probs = model.forward(features[None, :])[0]
    k = int(np.argmax(probs))
    return STATES[k], float(probs[k])


def predict_batch(model: MlpModel, x: np.ndarray) -> tuple[list[LevelState], np.ndarray]:
    probs = model.forward(np.atleast_2d(x))
    k = probs.argmax(axis=1)
    return [STATES[i] for i in k], probs[np.arange(len(k)), k]


# -- serialization ------------------------------------------------------------

MAGIC = b"LIQD"
FORMAT_VERSION = 1


def save_model(path, model: MlpModel) -> None:
    """``LIQD``, u16 version, u16 layer count, u32 sizes, then f64 LE params."""
    sizes = model.layer_sizes
    header = MAGIC + struct.pack("<HH", FORMAT_VERSION, len(sizes)) + struct.pack(f"<{len(sizes)}I", *sizes)
    body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.params())
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(header + body)


def load_model(path) -> MlpModel:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a model file (bad magic)")
    version, n_layers = struct.unpack_from("<HH", raw, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    if n_layers != 3:
        raise ValueError(f"{path}: expected 3 layer sizes, got {n_layers}")
    n_in, n_hidden, n_out = struct.unpack_from("<3I", raw, 8)
    offset = 8 + 4 * n_layers
    shapes = [(n_in, n_hidden), (n_hidden,), (n_hidden, n_out), (n_out,)]
    params = []
    for shape in shapes:
        count = int(np.prod(shape))
        chunk = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        params.append(chunk.astype(np.float64).reshape(shape))
        offset += 8 * count
    if offset != len(raw):
        raise ValueError(f"{path}: trailing or missing parameter bytes")
    return MlpModel(*params)


# -- dataset manifest ---------------------------------------------------------

def write_dataset(directory, records) -> Path:
    """Store ``(pair_id, features, label)`` as .npy files plus ``dataset.ndjson``."""
    directory = Path(directory)
    (directory / "features").mkdir(parents=True, exist_ok=True)
    lines = []
    for pair_id, feats, label in records:
        rel = Path("features") / (pair_id.replace("/", "_").replace(":", "_") + ".npy")
        np.save(directory / rel, np.asarray(feats, dtype=np.float64))
        lines.append(json.dumps({"pair_id": pair_id, "features_path": str(rel), "label": LevelState.parse(label).value}))
    manifest = directory / "dataset.ndjson"
    manifest.write_text("\n".join(lines) + ("\n" if lines else ""))
    return manifest


def read_dataset(manifest) -> list[tuple[str, np.ndarray, LevelState]]:
    manifest = Path(manifest)
    out = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        feats = np.load(manifest.parent / rec["features_path"])
        out.append((rec["pair_id"], feats, LevelState.parse(rec["label"])))
    return out
