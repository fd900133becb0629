"""End-to-end orchestration over a corpus of frame sequences.

Per frame: compensate the container mask, black out everything else, convert
to grayscale. Per adjacent pair (at the configured stride): threshold
difference, features, classification.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Optional

import numpy as np

from liqd.classifier import (
    LevelState,
    MlpModel,
    bounding_box,
    extract_features,
    globals_of,
    heuristic_classify,
    load_model,
    predict,
)
from liqd.dataengine import MetricsReport, classification_metrics, regression_errors
from liqd.diffseg import DiffParams, change_band, frame_diff
from liqd.imaging import GrayParams, mask_to_image, read_image, read_mask, to_grayscale, write_image
from liqd.morphology import apply_mask, compensate, ellipse_se

log = logging.getLogger(__name__)

DEFAULT_SWEEP = (20, 25, 30, 35, 40, 45, 50, 55, 60)


class CorpusError(Exception):
    """A corpus directory or one of its files is missing or unreadable."""


@dataclass(frozen=True)
class PipelineConfig:
    gray: GrayParams = GrayParams()
    diff: DiffParams = DiffParams()
    se_size: int = 5
    classifier_path: Optional[str] = None
    noise_floor: int = 24
    stride: int = 1
    jobs: int = 1
    seed: int = 0
    dump_dir: Optional[str] = None

    def __post_init__(self):
        ellipse_se(self.se_size)
        if self.stride < 1:
            raise ValueError("stride must be at least 1")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")
        if self.noise_floor < 0:
            raise ValueError("noise_floor must be non-negative")

    def with_threshold(self, threshold: float) -> "PipelineConfig":
        return replace(self, diff=replace(self.diff, threshold=threshold))


# -- config precedence ----------------------------------------------------------

_CONFIG_KEYS = {
    "alpha": float,
    "beta": float,
    "threshold": float,
    "block_size": int,
    "block_fill_ratio": float,
    "se_size": int,
    "classifier_path": str,
    "noise_floor": int,
    "stride": int,
    "jobs": int,
    "seed": int,
}


def resolve_config(cli: dict | None = None, env: dict | None = None, config_file=None) -> PipelineConfig:
    """Merge settings with precedence CLI flag > ``LIQD_*`` env > JSON file > default.

    When only one of alpha/beta is set at the winning level, the other is
    derived so the pair still sums to one.
    """
    env = os.environ if env is None else env
    layers = []  # lowest precedence first
    if config_file:
        path = Path(config_file)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CorpusError(f"{path}: cannot read config ({exc})") from exc
        unknown = set(data) - set(_CONFIG_KEYS)
        if unknown:
            raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
        layers.append(data)
    layers.append({k: env[f"LIQD_{k.upper()}"] for k in _CONFIG_KEYS if f"LIQD_{k.upper()}" in env})
    layers.append({k: v for k, v in (cli or {}).items() if k in _CONFIG_KEYS and v is not None})

    values: dict = {}
    level: dict = {}
    for rank, layer in enumerate(layers):
        for k, v in layer.items():
            values[k] = None if v is None else _CONFIG_KEYS[k](v)
            level[k] = rank
    alpha, beta = values.get("alpha"), values.get("beta")
    if alpha is not None and (beta is None or level["alpha"] > level["beta"]):
        beta = 1.0 - alpha
    elif beta is not None and (alpha is None or level["beta"] > level["alpha"]):
        alpha = 1.0 - beta
    gray = GrayParams(0.5 if alpha is None else alpha, 0.5 if beta is None else beta)
    diff = DiffParams(
        threshold=values.get("threshold", DiffParams.threshold),
        block_size=values.get("block_size", DiffParams.block_size),
        block_fill_ratio=values.get("block_fill_ratio", DiffParams.block_fill_ratio),
    )
    rest = {k: values[k] for k in ("se_size", "classifier_path", "noise_floor", "stride", "jobs", "seed") if k in values}
    return PipelineConfig(gray=gray, diff=diff, **rest)


# -- corpus -------------------------------------------------------------------

@dataclass
class SequenceData:
    name: str
    directory: Path
    frame_paths: list[Path]
    mask_paths: list[Path]
    truth: Optional[dict] = None


def _frame_files(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in (".png", ".pgm", ".ppm"))


def load_sequence(directory, name: str | None = None) -> SequenceData:
    directory = Path(directory)
    frames_dir, masks_dir = directory / "frames", directory / "masks"
    if not frames_dir.is_dir():
        raise CorpusError(f"{frames_dir}: missing frames directory")
    if not masks_dir.is_dir():
        raise CorpusError(f"{masks_dir}: missing masks directory")
    frames = _frame_files(frames_dir)
    masks = _frame_files(masks_dir)
    if not frames:
        raise CorpusError(f"{frames_dir}: no frames")
    if [p.stem for p in frames] != [p.stem for p in masks]:
        raise CorpusError(f"{masks_dir}: masks do not match frames one-to-one")
    truth = None
    truth_path = directory / "truth.json"
    if truth_path.exists():
        try:
            truth = json.loads(truth_path.read_text())
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{truth_path}: invalid JSON ({exc})") from exc
    return SequenceData(name or directory.name, directory, frames, masks, truth)


def load_corpus(corpus_dir) -> list[SequenceData]:
    """Sequences listed in ``corpus.json``, or the directory itself as one sequence."""
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise CorpusError(f"{corpus_dir}: corpus directory does not exist")
    manifest = corpus_dir / "corpus.json"
    if manifest.exists():
        try:
            names = json.loads(manifest.read_text())["sequences"]
        except (json.JSONDecodeError, KeyError) as exc:
            raise CorpusError(f"{manifest}: malformed manifest ({exc})") from exc
        if not names:
            raise CorpusError(f"{manifest}: corpus lists no sequences")
        return [load_sequence(corpus_dir / n, n) for n in names]
    if (corpus_dir / "frames").is_dir():
        return [load_sequence(corpus_dir)]
    raise CorpusError(f"{corpus_dir}: empty corpus (no corpus.json and no frames/)")


# -- per-sequence processing ------------------------------------------------------

def estimate_fill_fraction(gray: np.ndarray, mask: np.ndarray, min_contrast: float = 10.0) -> float:
    """Fill fraction read off one masked grayscale frame.

    Takes the mean row profile of the central half of the container and
    fits a bright-over-dark two-segment step. Without a clear step the
    container is reported as empty.
    """
    top, left, bottom, right = bounding_box(mask)
    quarter = (right - left) // 4
    cols = slice(left + quarter, max(right - quarter, left + quarter + 1))
    profile = gray[top:bottom, cols].astype(np.float64).mean(axis=1)
    n = profile.size
    if n < 2:
        return 0.0
    csum = np.concatenate([[0.0], np.cumsum(profile)])
    csq = np.concatenate([[0.0], np.cumsum(profile ** 2)])
    k = np.arange(1, n)
    mean_top = csum[k] / k
    mean_bot = (csum[n] - csum[k]) / (n - k)
    sse = (csq[k] - k * mean_top ** 2) + (csq[n] - csq[k] - (n - k) * mean_bot ** 2)
    sse = np.where(mean_top - mean_bot >= min_contrast, sse, np.inf)
    if not np.isfinite(sse).any():
        return 0.0
    split = int(k[np.argmin(sse)])
    return (n - split) / n


@dataclass
class PreparedSequence:
    name: str
    grays: list[np.ndarray]
    masks: list[np.ndarray]
    fills: list[float]
    truth: Optional[dict] = None


def prepare_sequence(seq: SequenceData, config: PipelineConfig) -> PreparedSequence:
    """Threshold-independent stages: mask repair, masking, grayscale, fill estimate."""
    se = ellipse_se(config.se_size)
    grays, masks, fills = [], [], []
    for fpath, mpath in zip(seq.frame_paths, seq.mask_paths):
        try:
            frame = read_image(fpath)
        except (OSError, ValueError) as exc:
            raise CorpusError(f"{fpath}: {exc}") from exc
        try:
            raw_mask = read_mask(mpath)
        except (OSError, ValueError) as exc:
            raise CorpusError(f"{mpath}: {exc}") from exc
        if frame.ndim == 2:
            frame = np.repeat(frame[..., None], 3, axis=2)
        if frame.shape[:2] != raw_mask.shape:
            raise CorpusError(f"{mpath}: mask size {raw_mask.shape} does not match frame {frame.shape[:2]}")
        if not raw_mask.any():
            raise CorpusError(f"{mpath}: empty container mask")
        mask = compensate(raw_mask, se)
        gray = to_grayscale(apply_mask(frame, mask), config.gray)
        grays.append(gray)
        masks.append(mask)
        fills.append(estimate_fill_fraction(gray, mask))
    return PreparedSequence(seq.name, grays, masks, fills, seq.truth)


def pair_indices(n_frames: int, stride: int) -> list[tuple[int, int]]:
    return [(k * stride, (k + 1) * stride) for k in range((n_frames - 1) // stride)]


@dataclass
class PairOutcome:
    pair_id: str
    label: LevelState
    confidence: float
    white_count: int
    band: dict
    features: np.ndarray = field(repr=False)
    true_label: Optional[LevelState] = None
    true_level: Optional[float] = None

    def record(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "label": self.label.value,
            "confidence": round(self.confidence, 12),
            "white_count": self.white_count,
            "band": self.band,
        }


def _pair_truth(truth: Optional[dict], i: int, j: int):
    if not truth:
        return None, None
    labels = truth.get("labels", [])
    levels = truth.get("levels", [])
    # pairs spanning several frames inherit the label of their first step
    label = LevelState.parse(labels[i]) if i < len(labels) else None
    level = 0.5 * (levels[i] + levels[j]) if j < len(levels) else None
    return label, level


def classify_sequence(prep: PreparedSequence, config: PipelineConfig, model: Optional[MlpModel]) -> list[PairOutcome]:
    outcomes = []
    dump = Path(config.dump_dir) / prep.name if config.dump_dir else None
    for i, j in pair_indices(len(prep.grays), config.stride):
        diff = frame_diff(prep.grays[i], prep.grays[j], config.diff)
        feats = extract_features(diff, prep.masks[j], prep.fills[i], prev_mask=prep.masks[i])
        if model is None:
            label = heuristic_classify(diff, prep.masks[j], prep.fills[i], config.noise_floor, prev_mask=prep.masks[i])
            conf = 1.0
        else:
            label, conf = predict(model, feats)
        band = change_band(diff)
        true_label, true_level = _pair_truth(prep.truth, i, j)
        pair_id = f"{prep.name}/{i:04d}-{j:04d}"
        outcomes.append(PairOutcome(pair_id, label, conf, diff.white_count, band.to_dict(), feats, true_label, true_level))
        if dump is not None:
            write_image(dump / f"gray_{j:04d}.png", prep.grays[j])
            write_image(dump / f"mask_{j:04d}.png", mask_to_image(prep.masks[j]))
            write_image(dump / f"diff_{i:04d}-{j:04d}.png", mask_to_image(diff.abs_plane))
    return outcomes


def _process(seq: SequenceData, config: PipelineConfig, thresholds) -> list[list[PairOutcome]]:
    model = load_model(config.classifier_path) if config.classifier_path else None
    prep = prepare_sequence(seq, config)
    return [classify_sequence(prep, config.with_threshold(t), model) for t in thresholds]


def _run(config: PipelineConfig, corpus_dir, thresholds) -> list[list[PairOutcome]]:
    """Outcomes per threshold, in canonical corpus order regardless of ``jobs``."""
    sequences = load_corpus(corpus_dir)
    work = partial(_process, config=config, thresholds=tuple(thresholds))
    if config.jobs > 1 and len(sequences) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            per_seq = list(pool.map(work, sequences))
    else:
        per_seq = [work(s) for s in sequences]
    return [[o for seq_out in per_seq for o in seq_out[t]] for t in range(len(thresholds))]


def run_pipeline(config: PipelineConfig, corpus_dir) -> list[PairOutcome]:
    return _run(config, corpus_dir, [config.diff.threshold])[0]


def records_ndjson(outcomes: list[PairOutcome]) -> str:
    return "".join(json.dumps(o.record(), sort_keys=True) + "\n" for o in outcomes)


def _require_truth(outcomes: list[PairOutcome], corpus_dir) -> None:
    if not outcomes:
        raise CorpusError(f"{corpus_dir}: no frame pairs to score")
    if any(o.true_label is None for o in outcomes):
        raise CorpusError(f"{corpus_dir}: corpus lacks truth.json labels")


def score_outcomes(outcomes: list[PairOutcome]) -> MetricsReport:
    report = classification_metrics([o.label for o in outcomes], [o.true_label for o in outcomes])
    est, true = [], []
    for o in outcomes:
        moving = o.true_label in (LevelState.Rising, LevelState.Falling)
        if moving and o.band["centroid"] is not None and o.true_level is not None:
            # pixel row r covers [r, r + 1); level rows are boundaries
            est.append(o.band["centroid"] + 0.5)
            true.append(o.true_level)
    if est:
        report.mae, report.mse = regression_errors(est, true)
    return report


def evaluate(config: PipelineConfig, corpus_dir) -> MetricsReport:
    outcomes = run_pipeline(config, corpus_dir)
    _require_truth(outcomes, corpus_dir)
    return score_outcomes(outcomes)


@dataclass
class SweepRow:
    threshold: float
    accuracy: float
    white_pixel_rate: float
    report: MetricsReport = field(repr=False)


def sweep_threshold(config: PipelineConfig, corpus_dir, thresholds=DEFAULT_SWEEP) -> list[SweepRow]:
    """Accuracy at each threshold, in input order.

    Mask repair and grayscale conversion run once per frame and are shared
    across thresholds.
    """
    thresholds = list(thresholds)
    if not thresholds:
        raise ValueError("no thresholds to sweep")
    rows = []
    for t, outcomes in zip(thresholds, _run(config, corpus_dir, thresholds)):
        _require_truth(outcomes, corpus_dir)
        report = score_outcomes(outcomes)
        rows.append(SweepRow(t, report.acc, _white_rate(outcomes), report))
    return rows


def _white_rate(outcomes: list[PairOutcome]) -> float:
    return float(np.mean([globals_of(o.features)["white_count_rate"] for o in outcomes]))


def sweep_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["threshold", "accuracy", "white_pixel_rate"])
    for r in rows:
        writer.writerow([f"{r.threshold:g}", f"{r.accuracy:.6f}", f"{r.white_pixel_rate:.6f}"])
    return buf.getvalue()


def build_dataset(config: PipelineConfig, corpus_dir) -> list[tuple[str, np.ndarray, LevelState]]:
    """Features and true labels for every pair of a labelled corpus."""
    outcomes = run_pipeline(replace(config, classifier_path=None), corpus_dir)
    _require_truth(outcomes, corpus_dir)
    return [(o.pair_id, o.features, o.true_label) for o in outcomes]
