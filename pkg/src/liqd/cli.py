"""Command-line entry point: ``liqd <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from liqd import classifier, dataengine, pipeline, synth
from liqd.diffseg import change_band, frame_diff
from liqd.imaging import is_rgb, mask_to_image, read_image, read_mask, to_grayscale, write_image, write_mask
from liqd.morphology import apply_mask, compensate, ellipse_se

log = logging.getLogger("liqd")


def _global_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", help="JSON file with pipeline settings")
    g.add_argument("--seed", type=int)
    g.add_argument("--jobs", type=int)
    g.add_argument("--alpha", type=float, help="weight of the luminance/chrominance intensity")
    g.add_argument("--beta", type=float, help="weight of the normalized-rgb intensity")
    g.add_argument("--threshold", type=float, help="difference threshold (gray levels)")
    g.add_argument("--se-size", type=int, help="elliptical structuring element size (odd)")
    g.add_argument("--block-size", type=int)
    g.add_argument("--block-fill-ratio", type=float)
    g.add_argument("--stride", type=int, help="frame distance between paired frames")
    g.add_argument("--noise-floor", type=int, help="white-pixel count treated as no change")
    g.add_argument("--model", dest="classifier_path", help="trained classifier file")
    g.add_argument("--out", help="output file or directory (default: stdout)")
    g.add_argument("--dump-intermediates", action="store_true", help="write masks/gray/diff PNGs to intermediates/ beside --out")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def _config(args) -> pipeline.PipelineConfig:
    config = pipeline.resolve_config(vars(args), config_file=args.config)
    if args.dump_intermediates:
        if not args.out:
            raise ValueError("--dump-intermediates needs --out")
        out = Path(args.out)
        base = out if out.suffix == "" else out.parent
        config = replace(config, dump_dir=str(base / "intermediates"))
    return config


def _emit(args, text: str, filename: str) -> None:
    """Write to ``--out`` (a directory gets ``filename``) or stdout."""
    if not args.out:
        sys.stdout.write(text)
        return
    out = Path(args.out)
    if out.suffix == "":
        out.mkdir(parents=True, exist_ok=True)
        out = out / filename
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    log.info("wrote %s", out)


def _require_out(args) -> Path:
    if not args.out:
        raise ValueError("this command needs --out")
    return Path(args.out)


# -- subcommands ----------------------------------------------------------------

def cmd_synth(args) -> int:
    out = _require_out(args)
    seed = args.seed if args.seed is not None else 0
    if args.kind:
        kind = classifier.LevelState.parse(args.kind)
        spec = synth.SceneSpec(noise_sigma=args.noise_sigma)

        def sequences():
            for i in range(args.sequences):
                s = seed + i
                yield f"seq_{s:05d}", synth.render_sequence(
                    replace(spec, seed=s),
                    synth.random_scenario(kind, s, args.frames),
                )

        names = synth.write_corpus(out, sequences())
    else:
        spec = synth.SceneSpec(noise_sigma=args.noise_sigma)
        names = synth.write_corpus(out, synth.standard_corpus(args.per_class, seed, args.frames, spec))
    print(f"wrote {len(names)} sequences to {out}")
    return 0


def cmd_corrupt(args) -> int:
    out = _require_out(args)
    mask = read_mask(args.mask)
    seed = args.seed if args.seed is not None else 0
    write_mask(out, synth.corrupt_mask(mask, args.holes, args.radius, args.breaks, seed))
    return 0


def cmd_compensate(args) -> int:
    out = _require_out(args)
    config = _config(args)
    write_mask(out, compensate(read_mask(args.mask), ellipse_se(config.se_size)))
    return 0


def _gray_frame(path, mask_path, config):
    image = read_image(path)
    mask = None
    if mask_path:
        mask = compensate(read_mask(mask_path), ellipse_se(config.se_size))
        image = apply_mask(image, mask)
    if is_rgb(image):
        image = to_grayscale(image, config.gray)
    return image, mask


def cmd_diff(args) -> int:
    config = _config(args)
    prev, _ = _gray_frame(args.prev, args.prev_mask, config)
    curr, _ = _gray_frame(args.curr, args.curr_mask, config)
    result = frame_diff(prev, curr, config.diff)
    summary = {
        "white_count": result.white_count,
        "pos_count": int(result.pos_plane.sum()),
        "neg_count": int(result.neg_plane.sum()),
        "motion_blocks": int(result.block_map.sum()),
        "band": change_band(result).to_dict(),
    }
    if args.out:
        out = Path(args.out)
        write_image(out / "abs.png", mask_to_image(result.abs_plane))
        write_image(out / "pos.png", mask_to_image(result.pos_plane))
        write_image(out / "neg.png", mask_to_image(result.neg_plane))
        (out / "diff.json").write_text(json.dumps(summary, indent=2) + "\n")
    else:
        print(json.dumps(summary, indent=2))
    return 0


def _load_training_set(source, config):
    source = Path(source)
    if source.is_file():
        return classifier.read_dataset(source)
    return pipeline.build_dataset(config, source)


def cmd_train(args) -> int:
    config = _config(args)
    if not config.classifier_path:
        raise ValueError("train needs --model PATH to write the classifier to")
    records = _load_training_set(args.source, config)
    if args.dataset_out:
        classifier.write_dataset(args.dataset_out, records)
    result = classifier.train(
        [(f, label) for _, f, label in records],
        lr=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=config.seed,
    )
    classifier.save_model(config.classifier_path, result.model)
    x = np.stack([f for _, f, _ in records])
    predicted, _ = classifier.predict_batch(result.model, x)
    acc = float(np.mean([p is label for p, (_, _, label) in zip(predicted, records)]))
    summary = {"examples": len(records), "train_accuracy": acc, "losses": result.losses}
    _emit(args, json.dumps(summary) + "\n", "train.json")
    return 0


def cmd_classify(args) -> int:
    config = _config(args)
    if not config.classifier_path:
        raise ValueError("classify needs --model PATH")
    model = classifier.load_model(config.classifier_path)
    lines = []
    for pair_id, feats, _ in classifier.read_dataset(args.manifest):
        label, conf = classifier.predict(model, feats)
        lines.append(json.dumps({"pair_id": pair_id, "label": label.value, "confidence": conf}, sort_keys=True))
    _emit(args, "".join(line + "\n" for line in lines), "predictions.ndjson")
    return 0


def _read_map(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        probs = np.load(path).astype(np.float64)
    else:
        img = read_image(path)
        probs = (img.max(axis=2) if img.ndim == 3 else img) / 255.0
    if probs.min() < 0 or probs.max() > 1:
        raise ValueError(f"{path}: saliency values must lie in [0, 1]")
    return probs


def cmd_score_masks(args) -> int:
    if args.fit:
        seed_set = []
        base = Path(args.fit).parent
        for line in Path(args.fit).read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                feats = dataengine.mask_features(read_mask(base / rec["mask_path"]), _read_map(base / rec["consensus_path"]))
                seed_set.append((feats, float(rec["iou"])))
        scorer = dataengine.fit_scorer(seed_set, tau=args.tau)
        Path(args.scorer).write_text(scorer.to_json() + "\n")
        print(f"fitted scorer on {len(seed_set)} masks -> {args.scorer}")
        if not args.masks:
            return 0
    scorer = dataengine.LinearScorer.from_json(Path(args.scorer).read_text())
    if args.consensus:
        consensus = _read_map(args.consensus)
    else:
        consensus = dataengine.consensus_map([read_mask(m) for m in args.masks])
    lines = []
    for m in args.masks:
        scored = dataengine.score_mask(read_mask(m), consensus, scorer, args.tau, name=str(m))
        lines.append(json.dumps({
            "path": scored.name,
            "features": dict(zip(dataengine.QUALITY_FEATURES, scored.features.tolist())),
            "score": scored.score,
            "accepted": bool(scored.accepted),
        }))
    _emit(args, "".join(line + "\n" for line in lines), "scores.ndjson")
    return 0


def cmd_filter(args) -> int:
    records = [json.loads(line) for line in Path(args.scores).read_text().splitlines() if line.strip()]
    candidates = [dataengine.ScoredMask(None, np.array([]), r["score"], r["score"] >= args.tau, r["path"]) for r in records]
    accepted, rejected = dataengine.filter_masks(candidates, args.tau)
    by_name = {r["path"]: r for r in records}

    def dump(items):
        return "".join(json.dumps({**by_name[c.name], "accepted": c.score >= args.tau}) + "\n" for c in items)

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "accepted.ndjson").write_text(dump(accepted))
        (out / "rejected.ndjson").write_text(dump(rejected))
    print(f"accepted {len(accepted)}, rejected {len(rejected)} at tau={args.tau}")
    return 0


def cmd_pipeline(args) -> int:
    config = _config(args)
    outcomes = pipeline.run_pipeline(config, args.corpus)
    if not outcomes:
        raise pipeline.CorpusError(f"{args.corpus}: no frame pairs at stride {config.stride}")
    _emit(args, pipeline.records_ndjson(outcomes), "records.ndjson")
    return 0


def cmd_sweep(args) -> int:
    config = _config(args)
    thresholds = [float(t) for t in args.thresholds.split(",")] if args.thresholds else pipeline.DEFAULT_SWEEP
    rows = pipeline.sweep_threshold(config, args.corpus, thresholds)
    _emit(args, pipeline.sweep_csv(rows), "sweep.csv")
    return 0


def cmd_evaluate(args) -> int:
    config = _config(args)
    report = pipeline.evaluate(config, args.corpus)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json() + "\n")
        (out / "report.txt").write_text(report.table() + "\n")
    print(report.table())
    if not args.out:
        print(report.to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="liqd", description="Container liquid-level detection toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic corpus")
    p.add_argument("--per-class", type=int, default=40)
    p.add_argument("--frames", type=int, default=6)
    p.add_argument("--kind", help="render only this level state")
    p.add_argument("--sequences", type=int, default=1, help="sequence count with --kind")
    p.add_argument("--noise-sigma", type=float, default=synth.SceneSpec.noise_sigma)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("corrupt", parents=[common], help="punch holes and breaks into a mask")
    p.add_argument("mask")
    p.add_argument("--holes", type=int, default=3)
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--breaks", type=int, default=1)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("compensate", parents=[common], help="repair a mask by closing and hole filling")
    p.add_argument("mask")
    p.set_defaults(func=cmd_compensate)

    p = sub.add_parser("diff", parents=[common], help="threshold difference of two frames")
    p.add_argument("prev")
    p.add_argument("curr")
    p.add_argument("--prev-mask")
    p.add_argument("--curr-mask")
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("train", parents=[common], help="train the level-state classifier")
    p.add_argument("source", help="labelled corpus directory or dataset.ndjson manifest")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--dataset-out", help="also write the feature dataset here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", parents=[common], help="classify a feature dataset")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("score-masks", parents=[common], help="score candidate masks (optionally fit the scorer)")
    p.add_argument("masks", nargs="*")
    p.add_argument("--scorer", required=True, help="scorer JSON (read, or written with --fit)")
    p.add_argument("--consensus", help="saliency map (.png or .npy); default: mean of the given masks")
    p.add_argument("--fit", help="seed-set NDJSON of {mask_path, consensus_path, iou}")
    p.add_argument("--tau", type=float, default=0.7)
    p.set_defaults(func=cmd_score_masks)

    p = sub.add_parser("filter", parents=[common], help="split scored masks at tau")
    p.add_argument("scores")
    p.add_argument("--tau", type=float, default=0.7)
    p.set_defaults(func=cmd_filter)

    for name, func, helptext in (
        ("pipeline", cmd_pipeline, "classify every frame pair of a corpus"),
        ("evaluate", cmd_evaluate, "score pipeline output against truth"),
        ("sweep", cmd_sweep, "accuracy across difference thresholds"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("corpus")
        if name == "sweep":
            p.add_argument("--thresholds", help="comma-separated list (default 20..60 step 5)")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (pipeline.CorpusError, ValueError, OSError) as exc:
        print(f"liqd {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
