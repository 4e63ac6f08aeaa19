"""Stratified sampling, the decay-coupled SGD update, and epoch-level
training with best-model selection.

Weight update per batch (eta = learning rate, lam = regularization,
phi = total training samples, kappa = batch size):

    w <- (1 - eta*lam/phi) * w - (eta/kappa) * sum of batch gradients

Biases skip the decay factor. The final short batch, if any, uses its
actual size in place of kappa, keeping mean-gradient semantics.
"""

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, TrainingDivergedError
from .modelio import save_model
from .network import WEIGHT_KEYS, Cnn
from .normalize import DEFAULT_WINDOW, normalize_fundus, standardize_channel
from .patches import PatchExtractor, effective_points

N_CLASSES = 4

# default per-class selection targets (background, disc, fovea, vessel)
DEFAULT_TARGETS = {0: 300_000, 1: 150_000, 2: 150_000, 3: 150_000}


@dataclass
class Hyperparams:
    eta: float = 0.01
    lam: float = 0.1
    kappa: int = 10
    phi: int | None = None
    epochs: int = 40
    seed: int = 0

    def __post_init__(self):
        if self.eta <= 0:
            raise InvalidInputError("eta must be positive")
        if self.kappa < 1:
            raise InvalidInputError("kappa must be >= 1")
        if self.phi is not None and self.phi < self.kappa:
            raise InvalidInputError("phi must be >= kappa")


def preprocess_record(record, norm_window=DEFAULT_WINDOW):
    """Normalized, standardized green channel wrapped in a PatchExtractor."""
    img = normalize_fundus(record.image, record.mask, norm_window)
    green = standardize_channel(img[1], record.mask)
    return PatchExtractor(green)


def class_pools(records):
    """Per-class pools of (image index, x, y) over all effective points."""
    pools = {c: [] for c in range(N_CLASSES)}
    for i, rec in enumerate(records):
        if rec.truth is None:
            raise InvalidInputError(f"record {rec.record_id} has no ground truth")
        pts = effective_points(rec.mask)
        labels = rec.truth[pts[:, 1], pts[:, 0]]
        for c in range(N_CLASSES):
            sel = pts[labels == c]
            if sel.size:
                rows = np.column_stack([np.full(len(sel), i, dtype=np.int64), sel])
                pools[c].append(rows)
    return {
        c: (np.concatenate(v) if v else np.empty((0, 3), dtype=np.int64))
        for c, v in pools.items()
    }


def stratified_sample(pools, targets, seed):
    """Draw the per-class targets: subsample large pools without replacement,
    keep small pools whole and top up with replacement. Returns a shuffled
    (N, 4) array with columns (image index, x, y, label)."""
    rng = np.random.default_rng(seed)
    parts = []
    for c in sorted(targets):
        target = int(targets[c])
        if target <= 0:
            raise InvalidInputError(f"target for class {c} must be positive")
        pool = pools.get(c)
        if pool is None or len(pool) == 0:
            raise InvalidInputError(f"empty pool for requested class {c}")
        if len(pool) >= target:
            take = pool[rng.choice(len(pool), size=target, replace=False)]
        else:
            extra = pool[rng.choice(len(pool), size=target - len(pool), replace=True)]
            take = np.concatenate([pool, extra])
        parts.append(
            np.column_stack([take, np.full(len(take), c, dtype=np.int64)])
        )
    samples = np.concatenate(parts)
    return samples[rng.permutation(len(samples))]


def sgd_step(net, grads, batch_size, hp):
    """Apply one decay-coupled update in place; returns the net."""
    phi = hp.phi
    if phi is None:
        raise InvalidInputError("hp.phi must be set before updates")
    decay = 1.0 - hp.eta * hp.lam / phi
    scale = hp.eta / batch_size
    for key, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise TrainingDivergedError(f"non-finite gradient in {key}")
        if key in WEIGHT_KEYS:
            net.params[key] *= decay
        net.params[key] -= scale * grad
    return net


def _batch_inputs(samples, extractors):
    return np.stack(
        [extractors[img].build(x, y) for img, x, y, _ in samples]
    )


def run_epoch(net, samples, extractors, hp, rng):
    """One pass over the shuffled samples in batches of kappa. Returns the
    mean nll loss."""
    if len(samples) == 0:
        raise InvalidInputError("no training samples")
    order = rng.permutation(len(samples))
    loss_sum = 0.0
    for start in range(0, len(samples), hp.kappa):
        batch = samples[order[start : start + hp.kappa]]
        x = _batch_inputs(batch, extractors)
        labels = batch[:, 3]
        probs, cache = net.forward(x, want_cache=True)
        picked = np.clip(probs[np.arange(len(batch)), labels], 1e-300, None)
        loss_sum += -np.log(picked).sum()
        grads = net.backward(cache, labels, probs)
        sgd_step(net, grads, len(batch), hp)
    return loss_sum / len(samples)


def predict_points(net, extractor, coords, batch=512):
    """Class ids for an (N, 2) array of pixels of one image."""
    out = np.empty(len(coords), dtype=np.uint8)
    for start in range(0, len(coords), batch):
        chunk = coords[start : start + batch]
        probs = net.forward(extractor.build_batch(chunk))
        out[start : start + len(chunk)] = probs.argmax(axis=1)
    return out


def epoch_eval(net, test_pools, extractors, stride=4):
    """Accuracy over every stride-th point of each class pool (index 0
    first), the per-epoch subsampled test."""
    total = 0
    correct = 0
    for c in sorted(test_pools):
        pool = test_pools[c]
        sel = pool[::stride]
        if len(sel) == 0:
            continue
        # evaluate image by image so windows come from the right raster
        for img in np.unique(sel[:, 0]):
            rows = sel[sel[:, 0] == img]
            pred = predict_points(net, extractors[img], rows[:, 1:3])
            correct += int((pred == c).sum())
            total += len(rows)
    return correct / total if total else 0.0


@dataclass
class TrainResult:
    best_net: Cnn
    best_epoch: int
    best_accuracy: float
    log: list = field(default_factory=list)


def train_select(
    train_records,
    test_records,
    hp,
    targets,
    norm_window=DEFAULT_WINDOW,
    out_dir=None,
    start_epoch=0,
    net=None,
    eval_stride=4,
):
    """Sample once, train `hp.epochs` epochs, evaluate after each, and return
    the best checkpoint (ties broken toward the earliest epoch).

    All randomness derives from hp.seed: sampling, initialization and each
    epoch's shuffle use fixed sub-seeds, so a resume from a checkpoint at
    `start_epoch` replays the identical stream.
    """
    root = np.random.SeedSequence(hp.seed)
    sample_seed, init_seed, shuffle_seed = root.spawn(3)

    pools = class_pools(train_records)
    samples = stratified_sample(pools, targets, sample_seed)
    if hp.phi is None:
        hp = replace(hp, phi=len(samples))
    extractors = [preprocess_record(r, norm_window) for r in train_records]

    test_pools = class_pools(test_records)
    test_extractors = [preprocess_record(r, norm_window) for r in test_records]

    if net is None:
        net = Cnn().init(init_seed)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    result = TrainResult(net.copy(), -1, -1.0)
    epoch_seeds = shuffle_seed.spawn(hp.epochs)
    for epoch in range(start_epoch, hp.epochs):
        t0 = time.perf_counter()
        epoch_rng = np.random.default_rng(epoch_seeds[epoch])
        mean_loss = run_epoch(net, samples, extractors, hp, epoch_rng)
        acc = epoch_eval(net, test_pools, test_extractors, stride=eval_stride)
        wall = time.perf_counter() - t0
        result.log.append(
            {
                "epoch": epoch,
                "mean_loss": mean_loss,
                "eval_accuracy": acc,
                "wall_seconds": wall,
            }
        )
        if out_dir is not None:
            save_model(net, out_dir / f"checkpoint_epoch_{epoch:03d}.fseg")
        if acc > result.best_accuracy:
            result.best_accuracy = acc
            result.best_epoch = epoch
            result.best_net = net.copy()
    return result


def write_log_csv(log, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["epoch", "mean_loss", "eval_accuracy", "wall_seconds"]
        )
        writer.writeheader()
        for row in log:
            writer.writerow(
                {
                    "epoch": row["epoch"],
                    "mean_loss": f"{row['mean_loss']:.12g}",
                    "eval_accuracy": f"{row['eval_accuracy']:.12g}",
                    "wall_seconds": f"{row['wall_seconds']:.3f}",
                }
            )
