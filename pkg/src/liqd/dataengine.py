"""Pseudo-label data engine: mask-quality scoring, losses, metrics, augmentation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from liqd.classifier import STATES, LevelState
from liqd.imaging import to_storage
from liqd.rng import SplitMix64

EPS = 1e-7


# -- losses ---------------------------------------------------------------

@dataclass(frozen=True)
class LossWeights:
    side_weights: tuple[float, ...] = (1.0,)
    fuse_weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "side_weights", tuple(float(w) for w in self.side_weights))
        if len(self.side_weights) < 1:
            raise ValueError("need at least one side-output weight")
        if any(w < 0 for w in self.side_weights) or self.fuse_weight < 0:
            raise ValueError("loss weights must be non-negative")

    @classmethod
    def uniform(cls, m: int) -> "LossWeights":
        return cls((1.0,) * m, 1.0)


def bce_loss(pred, truth) -> float:
    """Pixel-averaged binary cross-entropy of a saliency map against a mask.

    Probabilities are clipped to ``[1e-7, 1 - 1e-7]`` first, so hard 0/1
    predictions are allowed. Lower is better; never negative.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction {pred.shape} and truth {truth.shape} dimensions differ")
    if pred.size == 0:
        raise ValueError("empty saliency map")
    p = np.clip(pred, EPS, 1.0 - EPS)
    per_pixel = truth * np.log(p) + (1.0 - truth) * np.log1p(-p)
    return float(-per_pixel.sum() / pred.size)


def fused_loss(side_losses: Sequence[float], fuse_loss: float, weights: LossWeights) -> float:
    """Weighted sum of side-output losses plus the weighted fusion loss."""
    if len(side_losses) != len(weights.side_weights):
        raise ValueError(f"got {len(side_losses)} side losses for {len(weights.side_weights)} weights")
    total = sum(w * l for w, l in zip(weights.side_weights, side_losses))
    return total + weights.fuse_weight * fuse_loss


# -- metrics ------------------------------------------------------------------

@dataclass
class MetricsReport:
    acc: float
    precision: float
    recall: float
    f1: float
    mae: Optional[float] = None
    mse: Optional[float] = None
    confusion: Optional[np.ndarray] = field(default=None, repr=False)
    per_class: dict = field(default_factory=dict, repr=False)

    COLUMNS = ("Acc", "P", "R", "F1-score", "MAE", "MSE")

    def row(self) -> list[Optional[float]]:
        return [self.acc, self.precision, self.recall, self.f1, self.mae, self.mse]

    def to_dict(self) -> dict:
        d = dict(zip(("acc", "precision", "recall", "f1", "mae", "mse"), self.row()))
        if self.confusion is not None:
            d["confusion"] = {
                "labels": [s.value for s in STATES],
                "matrix": self.confusion.tolist(),
            }
        if self.per_class:
            d["per_class"] = self.per_class
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self, name: str = "liqd") -> str:
        """Aligned text table in the column order Acc, P, R, F1-score, MAE, MSE."""
        cells = ["-" if v is None else f"{v:.3f}" for v in self.row()]
        width = max(len(name), 5)
        header = f"{'Model':<{width}}  " + "  ".join(f"{c:>8}" for c in self.COLUMNS)
        line = f"{name:<{width}}  " + "  ".join(f"{c:>8}" for c in cells)
        return header + "\n" + line


def confusion_matrix(pred_labels, true_labels) -> np.ndarray:
    """5x5 counts, rows = truth, columns = prediction."""
    cm = np.zeros((len(STATES), len(STATES)), dtype=np.int64)
    for p, t in zip(pred_labels, true_labels):
        cm[LevelState.parse(t).index, LevelState.parse(p).index] += 1
    return cm


def classification_metrics(pred_labels, true_labels) -> MetricsReport:
    """Accuracy plus macro-averaged precision, recall and F1.

    Classes absent from both predictions and truth are left out of the
    macro average. Macro F1 is the mean of the per-class F1 scores.
    """
    if len(pred_labels) != len(true_labels):
        raise ValueError(f"{len(pred_labels)} predictions for {len(true_labels)} labels")
    if not pred_labels:
        raise ValueError("no labels to score")
    cm = confusion_matrix(pred_labels, true_labels)
    tp = np.diag(cm).astype(float)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    present = (predicted + actual) > 0
    per_class = {}
    precisions, recalls, f1s = [], [], []
    for k, state in enumerate(STATES):
        if not present[k]:
            continue
        p = tp[k] / predicted[k] if predicted[k] else 0.0
        r = tp[k] / actual[k] if actual[k] else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        precisions.append(p)
        recalls.append(r)
        f1s.append(f)
        per_class[state.value] = {"precision": p, "recall": r, "f1": f, "support": int(actual[k])}
    return MetricsReport(
        acc=float(tp.sum() / len(true_labels)),
        precision=float(np.mean(precisions)),
        recall=float(np.mean(recalls)),
        f1=float(np.mean(f1s)),
        confusion=cm,
        per_class=per_class,
    )


def regression_errors(pred_levels, true_levels) -> tuple[float, float]:
    pred = np.asarray(pred_levels, dtype=np.float64)
    true = np.asarray(true_levels, dtype=np.float64)
    if pred.shape != true.shape:
        raise ValueError(f"{pred.size} predictions for {true.size} targets")
    if pred.size == 0:
        raise ValueError("no values to compare")
    err = pred - true
    return float(np.mean(np.abs(err))), float(np.mean(err ** 2))


# -- mask quality -------------------------------------------------------------

QUALITY_FEATURES = ("fill_ratio", "component_count", "solidity", "compactness", "bce_vs_consensus")

_EIGHT = np.ones((3, 3), dtype=bool)


def perimeter(mask: np.ndarray) -> int:
    """Foreground pixels with a 4-neighbour in the background (off-frame counts)."""
    padded = np.pad(mask, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:])
    return int(np.count_nonzero(mask & ~interior))


def mask_features(mask, consensus) -> np.ndarray:
    """Quality features of a candidate mask, ordered as ``QUALITY_FEATURES``.

    An empty mask gets fill 0, no components, solidity 0 and compactness 0.
    """
    mask = np.asarray(mask, dtype=bool)
    consensus = np.asarray(consensus, dtype=np.float64)
    if mask.shape != consensus.shape:
        raise ValueError(f"mask {mask.shape} and consensus {consensus.shape} dimensions differ")
    area = int(np.count_nonzero(mask))
    bce = bce_loss(consensus, mask)
    if area == 0:
        return np.array([0.0, 0.0, 0.0, 0.0, bce])
    _, n_components = ndimage.label(mask, structure=_EIGHT)
    rows = np.nonzero(mask.any(axis=1))[0]
    cols = np.nonzero(mask.any(axis=0))[0]
    box_area = (rows[-1] - rows[0] + 1) * (cols[-1] - cols[0] + 1)
    return np.array([
        area / mask.size,
        float(n_components),
        area / box_area,
        perimeter(mask) ** 2 / area,
        bce,
    ])


@dataclass
class LinearScorer:
    """Linear IoU predictor over quality features, clamped to [0, 1]."""

    weights: np.ndarray
    bias: float
    tau: float = 0.7

    def score(self, features) -> float:
        return float(np.clip(np.dot(self.weights, features) + self.bias, 0.0, 1.0))

    def to_json(self) -> str:
        return json.dumps({"weights": [float(w) for w in self.weights], "bias": float(self.bias), "tau": float(self.tau)})

    @classmethod
    def from_json(cls, text: str) -> "LinearScorer":
        d = json.loads(text)
        return cls(np.asarray(d["weights"], dtype=np.float64), float(d["bias"]), float(d.get("tau", 0.7)))


def fit_scorer(seed_set, ridge: float = 1e-6, tau: float = 0.7) -> LinearScorer:
    """Ridge least-squares fit of IoU on quality features.

    The bias is not penalized (features are centred before the solve).
    """
    if len(seed_set) < 6:
        raise ValueError(f"need at least 6 seed examples, got {len(seed_set)}")
    x = np.stack([np.asarray(f, dtype=np.float64) for f, _ in seed_set])
    y = np.array([float(v) for _, v in seed_set])
    mean_x = x.mean(axis=0)
    mean_y = y.mean()
    xc = x - mean_x
    gram = xc.T @ xc + ridge * np.eye(x.shape[1])
    w = np.linalg.solve(gram, xc.T @ (y - mean_y))
    return LinearScorer(w, float(mean_y - mean_x @ w), tau)


@dataclass
class ScoredMask:
    mask: np.ndarray = field(repr=False)
    features: np.ndarray
    score: float
    accepted: bool
    name: str = ""


def score_mask(mask, consensus, scorer: LinearScorer, tau: float | None = None, name: str = "") -> ScoredMask:
    tau = scorer.tau if tau is None else tau
    feats = mask_features(mask, consensus)
    s = scorer.score(feats)
    return ScoredMask(np.asarray(mask, dtype=bool), feats, s, s >= tau, name)


def filter_masks(candidates: Sequence[ScoredMask], tau: float) -> tuple[list[ScoredMask], list[ScoredMask]]:
    """Split candidates into ``score >= tau`` and the rest, keeping order."""
    accepted, rejected = [], []
    for c in candidates:
        (accepted if c.score >= tau else rejected).append(c)
    return accepted, rejected


def consensus_map(masks) -> np.ndarray:
    """Per-pixel agreement of several candidate masks, a soft saliency map."""
    return np.mean([np.asarray(m, dtype=np.float64) for m in masks], axis=0)


# -- augmentation -------------------------------------------------------------

def augment_noise(image: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Add seeded Gaussian noise to every channel, then clamp and round."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    image = np.asarray(image)
    if sigma == 0:
        return image.copy()
    noise = SplitMix64(seed).normal(image.size).reshape(image.shape)
    return to_storage(image.astype(np.float64) + sigma * noise)


def augment_mixup(a, b, lam: float):
    """Convex blend of two ``(image, saliency_map)`` pairs.

    The image is rounded back to 8-bit; the map stays real-valued.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    img_a, map_a = np.asarray(a[0]), np.asarray(a[1], dtype=np.float64)
    img_b, map_b = np.asarray(b[0]), np.asarray(b[1], dtype=np.float64)
    if img_a.shape != img_b.shape or map_a.shape != map_b.shape:
        raise ValueError("mixup inputs must share dimensions")
    img = to_storage(lam * img_a.astype(np.float64) + (1.0 - lam) * img_b.astype(np.float64))
    return img, lam * map_a + (1.0 - lam) * map_b


def sample_mixup_lambda(rng: SplitMix64) -> float:
    """Beta(1, 1), i.e. uniform on [0, 1)."""
    return rng.random()
