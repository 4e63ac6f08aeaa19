"""Command-line interface: normalize, train, segment, evaluate, synth."""

import functools
import hashlib
import sys
from pathlib import Path

import click
import numpy as np

from . import data, metrics
from .config import load_config
from .errors import FundusnetError
from .modelio import load_model, save_model
from .normalize import normalize_fundus
from .segment import overlay, segment_image
from .synth import synth_fundus
from .training import Hyperparams, train_select, write_log_csv


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            fn(*args, **kwargs)
        except (FundusnetError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except Exception as exc:  # internal failure
            click.echo(f"internal error: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out_dir, config_digest, files):
    lines = [f"config_sha256 {config_digest}"]
    for path in sorted(files):
        rel = Path(path).relative_to(out_dir)
        lines.append(f"{_sha256(path)} {rel}")
    (Path(out_dir) / "manifest.txt").write_text("\n".join(lines) + "\n")


@click.group()
def main():
    """Retinal fundus segmentation: vessels, optic disc and fovea."""


@main.command()
@click.argument("src", type=click.Path())
@click.argument("dst", type=click.Path())
@click.option("--mask", "mask_path", type=click.Path(), default=None,
              help="PGM mask of effective points; default: all pixels.")
@click.option("--window", default=69, show_default=True,
              help="Odd background mean-filter window in pixels.")
@_guarded
def normalize(src, dst, mask_path, window):
    """Normalize background lighting of a colour fundus PPM."""
    raw = data.read_pnm(src)
    if raw.ndim != 3:
        raise FundusnetError(f"{src}: expected a colour PPM")
    image = data.image_from_raster(raw)
    if mask_path is not None:
        mask = data.read_pnm(mask_path) > 127
    else:
        mask = np.ones(image.shape[1:], dtype=bool)
    out = normalize_fundus(image, mask, window)
    data.write_pnm(dst, data.raster_from_image(out))
    click.echo(f"wrote {dst}")


@main.command()
@click.option("--seed", default=0, show_default=True)
@click.option("--count", default=1, show_default=True)
@click.option("--size", default=256, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@_guarded
def synth(seed, count, size, out_dir):
    """Generate synthetic fundus records (image + mask + truth per record)."""
    out_dir = Path(out_dir)
    files = []
    for sub in ("images", "mask", "truth"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    for i in range(count):
        rec = synth_fundus(seed + i, size)
        rec_id = f"{i + 1:02d}"
        paths = (
            out_dir / "images" / f"{rec_id}.ppm",
            out_dir / "mask" / f"{rec_id}.pgm",
            out_dir / "truth" / f"{rec_id}.pgm",
        )
        data.write_pnm(paths[0], data.raster_from_image(rec.image))
        data.write_pnm(paths[1], rec.mask.astype(np.uint8) * 255)
        data.write_pnm(paths[2], rec.truth)
        files.extend(paths)
    _write_manifest(out_dir, f"seed={seed},count={count},size={size}", files)
    click.echo(f"wrote {len(files)} files to {out_dir}")


@main.command()
@click.option("--data", "data_dir", type=click.Path(), required=True,
              help="DRIVE root (training/ + test/) or flat labeled dir.")
@click.option("--test-data", "test_dir", type=click.Path(), default=None,
              help="Flat labeled dir for epoch evaluation (flat layout only).")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--set", "overrides", multiple=True,
              help="Override a config key, e.g. --set epochs=10.")
@_guarded
def train(data_dir, test_dir, out_dir, config_path, overrides):
    """Train the network and keep the best epoch's model."""
    cfg = load_config(config_path, overrides)
    root = Path(data_dir)
    if (root / "training").is_dir():
        train_records = data.load_drive(root, "train")
        test_records = data.load_drive(root, "test")
    else:
        train_records = data.load_labeled_dir(root)
        if test_dir is None:
            raise FundusnetError("flat layout needs --test-data for evaluation")
        test_records = data.load_labeled_dir(test_dir)

    hp = Hyperparams(
        eta=cfg.eta, lam=cfg.lam, kappa=cfg.kappa, epochs=cfg.epochs, seed=cfg.seed
    )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train_select(
        train_records, test_records, hp, cfg.targets(),
        norm_window=cfg.norm_window, out_dir=out_dir,
        eval_stride=cfg.eval_stride,
    )
    model_path = out_dir / "best_model.fseg"
    log_path = out_dir / "training_log.csv"
    save_model(result.best_net, model_path)
    write_log_csv(result.log, log_path)
    artifacts = [model_path, log_path] + sorted(out_dir.glob("checkpoint_*.fseg"))
    _write_manifest(out_dir, cfg.digest(), artifacts)
    click.echo(
        f"best epoch {result.best_epoch} "
        f"accuracy {result.best_accuracy:.4f}"
    )


@main.command()
@click.option("--model", "model_path", type=click.Path(), required=True)
@click.option("--image", "image_path", type=click.Path(), required=True)
@click.option("--mask", "mask_path", type=click.Path(), default=None)
@click.option("--out-label", type=click.Path(), required=True)
@click.option("--out-overlay", type=click.Path(), default=None)
@click.option("--workers", default=1, show_default=True)
@click.option("--window", default=69, show_default=True)
@_guarded
def segment(model_path, image_path, mask_path, out_label, out_overlay, workers, window):
    """Classify every effective pixel of one image."""
    net = load_model(model_path)
    raw = data.read_pnm(image_path)
    if raw.ndim != 3:
        raise FundusnetError(f"{image_path}: expected a colour PPM")
    image = data.image_from_raster(raw)
    if mask_path is not None:
        mask = data.read_pnm(mask_path) > 127
    else:
        mask = np.ones(image.shape[1:], dtype=bool)
    labels = segment_image(net, image, mask, norm_window=window, workers=workers)
    data.write_pnm(out_label, labels)
    if out_overlay is not None:
        data.write_pnm(out_overlay, overlay(image, labels))
    click.echo(f"wrote {out_label}")


@main.command()
@click.option("--pred", "pred_dir", type=click.Path(), required=True)
@click.option("--truth", "truth_dir", type=click.Path(), required=True)
@click.option("--mask", "mask_dir", type=click.Path(), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@_guarded
def evaluate(pred_dir, truth_dir, mask_dir, out_dir):
    """Score predicted label maps against ground truths."""
    preds = data._index_by_id(Path(pred_dir))
    truths = data._index_by_id(Path(truth_dir))
    masks = data._index_by_id(Path(mask_dir))
    if not truths:
        raise FundusnetError(f"no truth rasters in {truth_dir}")
    entries = []
    for rec_id in sorted(truths, key=int):
        if rec_id not in preds:
            raise FundusnetError(f"missing prediction for image id {rec_id}")
        if rec_id not in masks:
            raise FundusnetError(f"missing mask for image id {rec_id}")
        cm = metrics.confusion(
            data.read_pnm(preds[rec_id]),
            data.read_pnm(truths[rec_id]),
            data.read_pnm(masks[rec_id]) > 127,
        )
        entries.append((rec_id, cm))
    report = metrics.per_image_report(entries)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {
        "per_image.csv": metrics.report_csv_rows(report),
        "confusion_counts.csv": metrics.confusion_csv_rows(report.aggregate),
        "confusion_percent.csv": metrics.confusion_csv_rows(
            report.aggregate, percentages=True
        ),
        "class_stats.csv": metrics.class_stats_csv_rows(report.aggregate),
    }
    files = []
    for name, rows in outputs.items():
        path = out_dir / name
        path.write_text("\n".join(rows) + "\n")
        files.append(path)
    text_path = out_dir / "report.txt"
    text_path.write_text(metrics.report_text(report) + "\n")
    files.append(text_path)
    _write_manifest(out_dir, "-", files)
    click.echo(metrics.report_text(report))


if __name__ == "__main__":
    main()
