"""Whole-image segmentation over a worker pool.

Pixels are classified in fixed-size batches; batches are distributed to
workers but results are assembled by batch index, so the output is identical
at any worker count. Workers share the immutable model and channel through
fork; each rebuilds its patch extractor once.
"""

import multiprocessing as mp

import numpy as np

from .network import Cnn  # noqa: F401  (re-export convenience for callers)
from .normalize import DEFAULT_WINDOW, normalize_fundus, standardize_channel
from .patches import PatchExtractor, effective_points
from .training import predict_points

LABEL_COLORS = {
    3: (255, 0, 0),  # vessels: red
    1: (255, 255, 0),  # optic disc: yellow
    2: (0, 255, 255),  # fovea: cyan
}

_WORKER_STATE = {}


def _init_worker(net, std_green, coords):
    _WORKER_STATE["net"] = net
    _WORKER_STATE["extractor"] = PatchExtractor(std_green)
    _WORKER_STATE["coords"] = coords


def _run_chunk(span):
    start, end = span
    pred = predict_points(
        _WORKER_STATE["net"],
        _WORKER_STATE["extractor"],
        _WORKER_STATE["coords"][start:end],
    )
    return start, pred


def segment_channel(net, std_green, mask, workers=1, chunk=4096):
    """Classify every effective point of a prepared (standardized) channel.
    Returns a uint8 label map; non-effective pixels are background."""
    labels = np.zeros(std_green.shape, dtype=np.uint8)
    coords = effective_points(mask)
    if len(coords) == 0:
        return labels
    spans = [(s, min(s + chunk, len(coords))) for s in range(0, len(coords), chunk)]
    preds = np.empty(len(coords), dtype=np.uint8)
    if workers <= 1:
        extractor = PatchExtractor(std_green)
        for start, end in spans:
            preds[start:end] = predict_points(net, extractor, coords[start:end])
    else:
        ctx = mp.get_context("fork")
        with ctx.Pool(
            workers, initializer=_init_worker, initargs=(net, std_green, coords)
        ) as pool:
            for start, pred in pool.imap(_run_chunk, spans):
                preds[start : start + len(pred)] = pred
    labels[coords[:, 1], coords[:, 0]] = preds
    return labels


def segment_image(net, image, mask, norm_window=DEFAULT_WINDOW, workers=1):
    """Full pipeline for a raw colour image: normalize background lighting,
    standardize the green channel, classify every effective point."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return np.zeros(mask.shape, dtype=np.uint8)
    normalized = normalize_fundus(image, mask, norm_window)
    std_green = standardize_channel(normalized[1], mask)
    return segment_channel(net, std_green, mask, workers=workers)


def overlay(image, labels):
    """Colour overlay: background keeps the input pixel, the other classes
    get fixed tints (vessels red, disc yellow, fovea cyan)."""
    out = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    out = np.moveaxis(out, 0, 2).copy()
    for label, color in LABEL_COLORS.items():
        out[labels == label] = color
    return out
