"""Acceptance suite: one test per release criterion.

Each test prints a single PASS line with its measured values (visible with
`pytest -s`, and always collected in `acceptance_report.txt` next to the
package root); the pytest verdict line itself is the pass/fail signal.
The heavyweight desk-scale training run is shared between the end-to-end
and determinism criteria through a module-scoped fixture.
"""

import csv
import io
import math
import time
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from fundusnet import data
from fundusnet.cli import main as cli_main
from fundusnet.metrics import accuracy, class_stats
from fundusnet.modelio import save_model
from fundusnet.network import BIAS_KEYS, WEIGHT_KEYS, Cnn, CnnGeometry, nll_loss
from fundusnet.patches import effective_points
from fundusnet.resample import keys_kernel, resize_bicubic
from fundusnet.synth import synth_fundus
from fundusnet.training import (
    Hyperparams,
    class_pools,
    predict_points,
    preprocess_record,
    run_epoch,
    sgd_step,
    stratified_sample,
    train_select,
    write_log_csv,
)

REPORT_PATH = Path(__file__).resolve().parent.parent / "acceptance_report.txt"


@pytest.fixture(scope="module", autouse=True)
def _fresh_report():
    REPORT_PATH.write_text("")


def _report(line):
    print(line, flush=True)
    with REPORT_PATH.open("a") as fh:
        fh.write(line + "\n")


# --------------------------------------------------------------------------
# criterion 1: architecture fidelity


def test_criterion_1_architecture():
    t0 = time.perf_counter()
    net = Cnn()
    extents = net.geometry.layer_extents()
    assert extents == (
        (29, 29, 30),
        (14, 14, 30),
        (10, 10, 45),
        (5, 5, 45),
        (100,),
        (4,),
    )
    counts = net.layer_param_counts()
    assert counts == (780, 11295, 112600, 404)
    assert net.param_count() == 125_079
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    _report(
        "PASS criterion 1 (architecture): extents "
        "29x29x30 / 14x14x30 / 10x10x45 / 5x5x45 / 100 / 4, "
        f"params 780+11295+112600+404 = 125079, {elapsed:.3f}s"
    )


# --------------------------------------------------------------------------
# criterion 2: gradient correctness

GRAD_GEOMETRY = CnnGeometry(
    input_size=13, kernel=3, maps1=2, maps2=3, hidden=6, classes=4
)


def _grad_check(net, x, label, eps=1e-5, floor=1e-4):
    """Max relative and absolute error between backprop and central finite
    differences. The denominator floor covers the roundoff noise floor of
    the finite differences (absolute ~1e-10 on a float64 loss), which makes
    a pure relative bound unattainable for near-zero gradients."""
    probs, cache = net.forward(x, want_cache=True)
    grads = net.backward(cache, [label], probs)
    worst_rel = worst_abs = 0.0
    for key, arr in net.params.items():
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + eps
            lp = nll_loss(net.forward(x), label)
            arr[idx] = orig - eps
            lm = nll_loss(net.forward(x), label)
            arr[idx] = orig
            fd = (lp - lm) / (2 * eps)
            g = grads[key][idx]
            worst_abs = max(worst_abs, abs(fd - g))
            worst_rel = max(worst_rel, abs(fd - g) / max(abs(fd), abs(g), floor))
    return worst_rel, worst_abs


def test_criterion_2_gradients():
    t0 = time.perf_counter()
    worst_rel = worst_abs = 0.0
    for seed in range(5):
        rng = np.random.default_rng(1000 + seed)
        net = Cnn(GRAD_GEOMETRY).init(seed)
        x = rng.normal(size=(3, 13, 13))
        rel, ab = _grad_check(net, x, label=seed % 4)
        worst_rel = max(worst_rel, rel)
        worst_abs = max(worst_abs, ab)
    elapsed = time.perf_counter() - t0
    assert worst_rel < 1e-5
    assert worst_abs < 1e-8
    assert elapsed < 60.0
    _report(
        "PASS criterion 2 (gradients): 5 seeds, max rel err "
        f"{worst_rel:.2e}, max abs err {worst_abs:.2e}, {elapsed:.1f}s"
    )


# --------------------------------------------------------------------------
# criterion 3: metric oracle against the published aggregate counts

PUBLISHED_CM = np.array(
    [
        [3_642_327, 17_757, 36_073, 118_825],
        [7_995, 69_032, 0, 1_508],
        [6_829, 0, 59_295, 853],
        [125_304, 14_864, 2_168, 435_609],
    ],
    dtype=np.int64,
)

PUBLISHED_SENS_SPEC = {
    0: (0.9547, 0.8063),
    1: (0.8790, 0.9927),
    2: (0.8853, 0.9914),
    3: (0.7537, 0.9694),
}


def test_criterion_3_metric_oracle():
    t0 = time.perf_counter()
    for c, (sens, spec) in PUBLISHED_SENS_SPEC.items():
        stats = class_stats(PUBLISHED_CM, c)
        assert abs(stats.sensitivity - sens) < 5e-5
        assert abs(stats.specificity - spec) < 5e-5
    assert abs(class_stats(PUBLISHED_CM, 1).overlap - 0.6210) < 5e-4
    assert abs(accuracy(PUBLISHED_CM) - 0.9268) < 5e-5
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    _report(
        "PASS criterion 3 (metric oracle): 8 sensitivity/specificity values, "
        f"disc overlap 0.6210, pooled accuracy 92.68%, {elapsed:.3f}s"
    )


# --------------------------------------------------------------------------
# criterion 4: update-rule exactness


def test_criterion_4_update_rule():
    net = Cnn(GRAD_GEOMETRY).init(8)
    before = {k: v.copy() for k, v in net.params.items()}
    grads = {k: np.zeros_like(v) for k, v in net.params.items()}
    hp = Hyperparams(eta=0.01, lam=0.1, kappa=10, phi=750_000)
    sgd_step(net, grads, 10, hp)
    decay = 1.0 - hp.eta * hp.lam / hp.phi
    worst = 0.0
    for key in WEIGHT_KEYS:
        want = before[key] * decay
        nonzero = want != 0
        worst = max(
            worst,
            np.max(
                np.abs(net.params[key][nonzero] - want[nonzero])
                / np.abs(want[nonzero])
            ),
        )
        assert np.array_equal(net.params[key] == 0, want == 0)
    for key in BIAS_KEYS:
        assert np.array_equal(net.params[key], before[key])
    assert worst <= 1e-15
    _report(
        "PASS criterion 4 (update rule): zero-gradient step scales weights "
        f"by (1 - eta*lam/phi), biases untouched, max rel dev {worst:.1e}"
    )


# --------------------------------------------------------------------------
# criterion 5: overfit check


def test_criterion_5_overfit():
    t0 = time.perf_counter()
    rec = synth_fundus(7, 256)
    pools = class_pools([rec])
    samples = stratified_sample(pools, {c: 25 for c in range(4)}, 5)
    extractors = [preprocess_record(rec)]
    net = Cnn().init(2)
    hp = Hyperparams(phi=len(samples))
    reached = None
    for epoch in range(200):
        run_epoch(net, samples, extractors, hp, np.random.default_rng(epoch))
        pred = predict_points(net, extractors[0], samples[:, 1:3])
        acc = (pred == samples[:, 3]).mean()
        if acc >= 0.99:
            reached = epoch
            break
    elapsed = time.perf_counter() - t0
    assert reached is not None, "training accuracy never reached 0.99"
    assert elapsed < 300.0
    _report(
        "PASS criterion 5 (overfit): 100 samples, accuracy >= 0.99 after "
        f"epoch {reached}, {elapsed:.1f}s"
    )


# --------------------------------------------------------------------------
# criteria 6 + 7: desk-scale end-to-end run, shared

DESK_TARGETS = {0: 6_000, 1: 3_000, 2: 3_000, 3: 4_000}  # 16,000 <= 20,000
DESK_HP = Hyperparams(epochs=3, seed=42)


def _desk_train(out_dir):
    train_records = [synth_fundus(seed, 256) for seed in range(10)]
    test_records = [synth_fundus(100 + seed, 256) for seed in range(5)]
    result = train_select(
        train_records,
        test_records,
        DESK_HP,
        DESK_TARGETS,
        out_dir=out_dir,
        eval_stride=16,
    )
    save_model(result.best_net, Path(out_dir) / "best_model.fseg")
    write_log_csv(result.log, Path(out_dir) / "training_log.csv")
    return result, test_records


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk_run_a")
    t0 = time.perf_counter()
    result, test_records = _desk_train(out)
    train_seconds = time.perf_counter() - t0
    cm = np.zeros((4, 4), dtype=np.int64)
    for rec in test_records:
        extractor = preprocess_record(rec)
        pts = effective_points(rec.mask)[::4]
        pred = predict_points(result.best_net, extractor, pts)
        truth = rec.truth[pts[:, 1], pts[:, 0]].astype(np.int64)
        cm += np.bincount(truth * 4 + pred.astype(np.int64), minlength=16).reshape(
            4, 4
        )
    return {
        "out": out,
        "result": result,
        "cm": cm,
        "train_seconds": train_seconds,
    }


def test_criterion_6_desk_scale(desk_run):
    cm = desk_run["cm"]
    acc = accuracy(cm)
    disc_sens = class_stats(cm, 1).sensitivity
    fovea_sens = class_stats(cm, 2).sensitivity
    assert acc >= 0.90
    assert disc_sens >= 0.70
    assert fovea_sens >= 0.70
    assert desk_run["train_seconds"] < 1800.0
    _report(
        "PASS criterion 6 (desk scale): 16000 patches, 3 epochs, held-out "
        f"accuracy {acc:.4f}, disc sensitivity {disc_sens:.3f}, fovea "
        f"sensitivity {fovea_sens:.3f}, training {desk_run['train_seconds']:.0f}s"
    )


def _log_without_wall(path):
    rows = list(csv.DictReader(io.StringIO(Path(path).read_text())))
    return [
        (row["epoch"], row["mean_loss"], row["eval_accuracy"]) for row in rows
    ]


def test_criterion_7_determinism(desk_run, tmp_path_factory):
    out_b = tmp_path_factory.mktemp("desk_run_b")
    _desk_train(out_b)
    out_a = desk_run["out"]
    model_a = (out_a / "best_model.fseg").read_bytes()
    model_b = (out_b / "best_model.fseg").read_bytes()
    assert model_a == model_b
    for epoch in range(DESK_HP.epochs):
        name = f"checkpoint_epoch_{epoch:03d}.fseg"
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()
    log_a = _log_without_wall(out_a / "training_log.csv")
    log_b = _log_without_wall(out_b / "training_log.csv")
    assert log_a == log_b
    # training takes no worker count: only segmentation is parallel, and the
    # worker-count invariance of segmentation output is asserted in
    # tests/test_segment.py::test_worker_count_does_not_change_output
    _report(
        "PASS criterion 7 (determinism): repeated run reproduced the model "
        "and every checkpoint byte-for-byte and the log minus wall_seconds"
    )


# --------------------------------------------------------------------------
# criterion 8: resampling oracle


def _keys_scalar(t):
    t = abs(float(t))
    if t <= 1.0:
        return (1.5 * t - 2.5) * t * t + 1.0
    if t < 2.0:
        return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    return 0.0


def _resize_oracle(src, n_out):
    """Direct per-sample evaluation: center-aligned grid, kernel widened by
    the scale on downscale, edge clamping, per-row normalization."""
    src = np.asarray(src, dtype=np.float64)
    out = np.empty((n_out, src.shape[1]))
    n_in = src.shape[0]
    scale = n_in / n_out
    width = max(scale, 1.0)
    for k in range(n_out):
        center = (k + 0.5) * scale - 0.5
        lo = math.floor(center - 2.0 * width) + 1
        hi = math.floor(center + 2.0 * width)
        acc = np.zeros(src.shape[1])
        norm = 0.0
        for j in range(lo, hi + 1):
            w = _keys_scalar((j - center) / width)
            acc += w * src[min(max(j, 0), n_in - 1)]
            norm += w
        out[k] = acc / norm
    return out


def test_criterion_8_resampling_oracle():
    rng = np.random.default_rng(88)
    worst = 0.0
    for i in range(100):
        n_in = 7 if i % 2 == 0 else 165
        src = rng.normal(size=(n_in, n_in))
        got = resize_bicubic(src, 33, 33)
        want = _resize_oracle(_resize_oracle(src, 33).T, 33).T
        worst = max(worst, np.max(np.abs(got - want)))
    assert worst < 1e-12
    _report(
        "PASS criterion 8 (resampling oracle): 100 random matrices "
        f"(7->33 and 165->33), max abs diff {worst:.2e}"
    )


# --------------------------------------------------------------------------
# criterion 9: whole-image segmentation performance


def test_criterion_9_segmentation_time(tmp_path):
    rng = np.random.default_rng(9)
    raster = rng.integers(20, 236, size=(584, 565, 3), dtype=np.uint8)
    image_path = tmp_path / "image.ppm"
    data.write_pnm(image_path, raster)
    model_path = tmp_path / "model.fseg"
    save_model(Cnn().init(0), model_path)
    out_label = tmp_path / "labels.pgm"
    runner = CliRunner()
    t0 = time.perf_counter()
    result = runner.invoke(
        cli_main,
        [
            "segment",
            "--model", str(model_path),
            "--image", str(image_path),
            "--out-label", str(out_label),
        ],
    )
    elapsed = time.perf_counter() - t0
    assert result.exit_code == 0, result.output
    labels = data.read_pnm(out_label)
    assert labels.shape == (584, 565)
    assert elapsed <= 1200.0
    verdict = "within" if elapsed <= 300.0 else "above"
    _report(
        "PASS criterion 9 (performance): 565x584 full-mask segmentation in "
        f"{elapsed:.0f}s on this host ({verdict} the 300s single-box target, "
        "hard limit 1200s)"
    )
