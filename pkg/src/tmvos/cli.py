"""Command-line entry points: ``run``, ``eval`` and ``features``.

Masks are 8-bit indexed PNGs whose pixel values are object ids, matching the
usual video-segmentation dataset layout. Frames are numbered image files
processed in name order. Config precedence: flags > config file > preset
defaults. The FRTM_THREADS environment variable caps worker threads.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from .features_io import extract_handcrafted_features, feature_file_name, write_feature_map
from .metrics import evaluate_sequence
from .pipeline import PipelineConfig, RunStats, run_sequence

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".ppm"}

# bit-reversal colormap used by the common segmentation datasets
def _index_palette() -> bytes:
    palette = bytearray(768)
    for i in range(256):
        c, r, g, b = i, 0, 0, 0
        for j in range(8):
            r |= ((c >> 0) & 1) << (7 - j)
            g |= ((c >> 1) & 1) << (7 - j)
            b |= ((c >> 2) & 1) << (7 - j)
            c >>= 3
        palette[3 * i:3 * i + 3] = bytes((r, g, b))
    return bytes(palette)


def read_image(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def read_mask(path) -> np.ndarray:
    with Image.open(path) as img:
        if img.mode not in ("P", "L", "1"):
            raise ValueError(f"mask {path} must be an indexed or grayscale image, got {img.mode}")
        return np.asarray(img.convert("P") if img.mode == "1" else img).astype(np.uint8)


def write_mask(path, mask: np.ndarray) -> None:
    img = Image.fromarray(np.asarray(mask, dtype=np.uint8), mode="P")
    img.putpalette(_index_palette())
    img.save(path)


def list_frames(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"frame directory {directory} does not exist")
    frames = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not frames:
        raise FileNotFoundError(f"no image files in {directory}")
    return frames


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

_FLAG_TO_FIELD = {
    "preset": "preset",
    "update_interval": "update_interval",
    "eta": "eta",
    "kmax": "k_max",
    "kappa_min": "kappa_min",
    "lambda1": "lambda1",
    "lambda2": "lambda2",
    "threshold": "threshold",
    "initial_samples": "n_initial_samples",
    "feature_source": "feature_source",
    "stride": "feature_stride",
    "seed": "rng_seed",
}


def resolve_config(args) -> PipelineConfig:
    values: dict = {}
    if args.config:
        with open(args.config) as f:
            file_values = json.load(f)
        unknown = set(file_values) - {f.name for f in dataclasses.fields(PipelineConfig)}
        if unknown:
            raise ValueError(f"unknown config file keys: {sorted(unknown)}")
        values.update(file_values)
    for flag, field in _FLAG_TO_FIELD.items():
        given = getattr(args, flag, None)
        if given is not None:
            values[field] = given
    if getattr(args, "features", None):
        values["feature_dir"] = str(args.features)
    return PipelineConfig(**values)


def cmd_run(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    marker = out_dir / ".failed"
    try:
        config = resolve_config(args)
        frame_paths = list_frames(args.frames)
        first_mask = read_mask(args.mask)
        frames = [read_image(p) for p in frame_paths]

        stats = RunStats()
        t0 = time.perf_counter()
        masks = run_sequence(frames, first_mask, config, stats)
        total_ms = (time.perf_counter() - t0) * 1e3

        for i, mask in enumerate(masks):
            write_mask(out_dir / f"{i:05d}.png", mask)
        timing = {
            "phase_ms": stats.phase_ms,
            "init_ms": stats.init_ms,
            "total_ms": total_ms,
            "update_frames": stats.update_frames,
            "n_frames": len(masks),
        }
        (out_dir / "timing.json").write_text(json.dumps(timing, indent=2))
        (out_dir / "config.json").write_text(
            json.dumps(dataclasses.asdict(config), indent=2))
        if marker.exists():
            marker.unlink()
        print(f"wrote {len(masks)} masks to {out_dir}")
        return 0
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        marker.write_text(f"{type(exc).__name__}: {exc}\n")
        print(f"error: {exc}", file=sys.stderr)
        return 1


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _sequence_dirs(root: Path) -> dict[str, Path] | None:
    """Subdirectories as sequences, or None when the root is one sequence."""
    subdirs = sorted(d for d in root.iterdir() if d.is_dir())
    return {d.name: d for d in subdirs} if subdirs else None


def _load_mask_dir(directory: Path) -> list[np.ndarray]:
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise FileNotFoundError(f"no mask files in {directory}")
    return [read_mask(p) for p in files]


def cmd_eval(args) -> int:
    try:
        pred_root, gt_root = Path(args.pred), Path(args.gt)
        preds = _sequence_dirs(pred_root)
        gts = _sequence_dirs(gt_root)
        if (preds is None) != (gts is None):
            raise ValueError("prediction and ground-truth directories have different layouts")
        if preds is None:
            preds = {pred_root.name: pred_root}
            gts = {pred_root.name: gt_root}
        if set(preds) != set(gts):
            raise ValueError(
                f"mismatched sequences: predictions {sorted(preds)} vs ground truth {sorted(gts)}"
            )

        per_sequence, per_object = {}, {}
        all_j, all_f = [], []
        for name in sorted(preds):
            pred_masks = _load_mask_dir(preds[name])
            gt_masks = _load_mask_dir(gts[name])
            if len(pred_masks) != len(gt_masks):
                raise ValueError(
                    f"sequence {name}: {len(pred_masks)} predictions vs {len(gt_masks)} ground truths"
                )
            report = evaluate_sequence(pred_masks, gt_masks,
                                       exclude_first=args.exclude_first,
                                       tolerance_px=args.tolerance)
            doc = report.to_dict()
            per_object[name] = doc["per_object"]
            per_sequence[name] = doc["means"]
            all_j.extend(report.j_mean_per_object.values())
            all_f.extend(report.f_mean_per_object.values())

        j_mean = float(np.mean(all_j)) if all_j else 0.0
        f_mean = float(np.mean(all_f)) if all_f else 0.0
        result = {
            "per_sequence": per_sequence,
            "per_object": per_object,
            "means": {"J": j_mean, "F": f_mean, "JF": 0.5 * (j_mean + f_mean)},
        }
        report_path = Path(args.report) if args.report else pred_root / "eval_report.json"
        report_path.write_text(json.dumps(result, indent=2))

        print(f"{'sequence':<24}{'object':>8}{'J':>10}{'F':>10}")
        for name in sorted(per_object):
            for oid, scores in per_object[name].items():
                print(f"{name:<24}{oid:>8}{scores['J_mean']:>10.4f}{scores['F_mean']:>10.4f}")
        print(f"{'mean':<24}{'':>8}{j_mean:>10.4f}{f_mean:>10.4f}   "
              f"J&F {result['means']['JF']:.4f}")
        return 0
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------

def cmd_features(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    marker = out_dir / ".failed"
    try:
        frame_paths = list_frames(args.frames)
        for i, path in enumerate(frame_paths):
            fm = extract_handcrafted_features(read_image(path), args.stride)
            write_feature_map(out_dir / feature_file_name(i), fm)
        if marker.exists():
            marker.unlink()
        print(f"wrote {len(frame_paths)} feature files to {out_dir}")
        return 0
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        marker.write_text(f"{type(exc).__name__}: {exc}\n")
        print(f"error: {exc}", file=sys.stderr)
        return 1


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _str2bool(value: str) -> bool:
    if value.lower() in ("true", "1", "yes"):
        return True
    if value.lower() in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {value!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tmvos",
        description="Online-learned target-model video object segmentation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="segment a sequence from a first-frame mask")
    run.add_argument("--frames", required=True, help="directory of numbered frame images")
    run.add_argument("--mask", required=True, help="first-frame indexed mask PNG")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--features", help="directory of .frtm files (files feature source)")
    run.add_argument("--config", help="JSON config file")
    run.add_argument("--preset", choices=("default", "fast"))
    run.add_argument("--update-interval", dest="update_interval", type=int)
    run.add_argument("--eta", type=float)
    run.add_argument("--kmax", type=int)
    run.add_argument("--kappa-min", dest="kappa_min", type=float)
    run.add_argument("--lambda1", type=float)
    run.add_argument("--lambda2", type=float)
    run.add_argument("--threshold", type=float)
    run.add_argument("--initial-samples", dest="initial_samples", type=int)
    run.add_argument("--feature-source", dest="feature_source", choices=("files", "builtin"))
    run.add_argument("--stride", type=int)
    run.add_argument("--seed", type=int)
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="score predictions against ground truth")
    ev.add_argument("--pred", required=True, help="directory of predicted masks (or of sequences)")
    ev.add_argument("--gt", required=True, help="directory of ground-truth masks (or of sequences)")
    ev.add_argument("--tolerance", type=float, default=None,
                    help="boundary match tolerance in pixels (default 0.008 x diagonal)")
    ev.add_argument("--exclude-first", dest="exclude_first", type=_str2bool, default=True)
    ev.add_argument("--report", help="path of the JSON report (default <pred>/eval_report.json)")
    ev.set_defaults(func=cmd_eval)

    feat = sub.add_parser("features", help="extract built-in features to .frtm files")
    feat.add_argument("--frames", required=True)
    feat.add_argument("--out", required=True)
    feat.add_argument("--stride", type=int, default=16)
    feat.set_defaults(func=cmd_features)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
