"""The 7-layer multi-scale patch classifier, implemented from scratch.

Each of the three input channels is processed by its own tower
(conv -> LReLU -> maxpool -> conv -> LReLU -> maxpool); the flattened tower
outputs are concatenated and fed through two fully connected layers with a
softmax output. All arithmetic is float64. Forward/backward are vectorized
over the batch dimension; gradient accumulation reduces in index order, so
results are deterministic.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

CLASS_NAMES = ("background", "optic_disc", "fovea", "vessel")

WEIGHT_KEYS = ("conv1_w", "conv2_w", "fc1_w", "fc2_w")
BIAS_KEYS = ("conv1_b", "conv2_b", "fc1_b", "fc2_b")
PARAM_KEYS = WEIGHT_KEYS + BIAS_KEYS


def lrelu(x, slope):
    return np.where(x > 0, x, slope * x)


def lrelu_grad(x, slope):
    return np.where(x > 0, 1.0, slope)


def softmax(z):
    """Row-wise softmax with max-subtraction; z has shape (..., C)."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def nll_loss(probs, label):
    """-ln p[label]; saturated probabilities are clamped, not NaN'd."""
    p = max(float(probs[label]), 1e-300)
    return -np.log(p)


def _conv_forward(x, w, b):
    """Valid cross-correlation. x: (B, D, H, W); w: (M, D, k, k); b: (M,)."""
    k = w.shape[-1]
    windows = sliding_window_view(x, (k, k), axis=(2, 3))
    out = np.einsum("bdijuv,mduv->bmij", windows, w, optimize=True)
    return out + b[None, :, None, None]


def _conv_grads(x, dz, kernel):
    """Gradients of a valid cross-correlation.

    Returns (dw, db, dx) for input x (B, D, H, W), upstream dz (B, M, h, w)
    and kernel (M, D, k, k). Gradients are summed over the batch.
    """
    k = kernel.shape[-1]
    windows = sliding_window_view(x, (k, k), axis=(2, 3))
    dw = np.einsum("bdijuv,bmij->mduv", windows, dz, optimize=True)
    db = dz.sum(axis=(0, 2, 3))
    pad = k - 1
    dz_pad = np.pad(dz, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dz_windows = sliding_window_view(dz_pad, (k, k), axis=(2, 3))
    flipped = kernel[:, :, ::-1, ::-1]
    dx = np.einsum("bmijuv,mduv->bdij", dz_windows, flipped, optimize=True)
    return dw, db, dx


def maxpool_2x2(x):
    """Non-overlapping 2x2 max over (..., H, W); trailing odd row/column is
    dropped. Returns (pooled, argmax index in 0..3 per output cell)."""
    h, w = x.shape[-2], x.shape[-1]
    h2, w2 = h // 2, w // 2
    cropped = x[..., : 2 * h2, : 2 * w2]
    tiles = cropped.reshape(*x.shape[:-2], h2, 2, w2, 2)
    tiles = np.moveaxis(tiles, -3, -2).reshape(*x.shape[:-2], h2, w2, 4)
    idx = tiles.argmax(axis=-1)
    pooled = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]
    return pooled, idx


def maxpool_backprop(dpooled, idx, in_shape):
    """Route pooled gradients back to the argmax positions."""
    h, w = in_shape[-2], in_shape[-1]
    h2, w2 = h // 2, w // 2
    tiles = np.zeros((*in_shape[:-2], h2, w2, 4))
    np.put_along_axis(tiles, idx[..., None], dpooled[..., None], axis=-1)
    tiles = tiles.reshape(*in_shape[:-2], h2, w2, 2, 2)
    tiles = np.moveaxis(tiles, -2, -3)
    dx = np.zeros(in_shape)
    dx[..., : 2 * h2, : 2 * w2] = tiles.reshape(*in_shape[:-2], 2 * h2, 2 * w2)
    return dx


@dataclass
class CnnGeometry:
    """Layer extents derived from the input/kernel sizes."""

    input_size: int = 33
    channels: int = 3
    kernel: int = 5
    maps1: int = 10
    maps2: int = 15
    hidden: int = 100
    classes: int = 4
    conv1_out: int = field(init=False)
    pool1_out: int = field(init=False)
    conv2_out: int = field(init=False)
    pool2_out: int = field(init=False)
    flat: int = field(init=False)

    def __post_init__(self):
        self.conv1_out = self.input_size - self.kernel + 1
        self.pool1_out = self.conv1_out // 2
        self.conv2_out = self.pool1_out - self.kernel + 1
        self.pool2_out = self.conv2_out // 2
        if self.conv2_out < 1 or self.pool2_out < 1:
            raise ShapeError(
                f"input size {self.input_size} too small for kernel {self.kernel}"
            )
        self.flat = self.channels * self.maps2 * self.pool2_out**2

    def layer_extents(self):
        """Output extents of the six parameterized/pooling layers, with map
        counts summed over the towers."""
        c = self.channels
        return (
            (self.conv1_out, self.conv1_out, c * self.maps1),
            (self.pool1_out, self.pool1_out, c * self.maps1),
            (self.conv2_out, self.conv2_out, c * self.maps2),
            (self.pool2_out, self.pool2_out, c * self.maps2),
            (self.hidden,),
            (self.classes,),
        )


class Cnn:
    """Parameter container plus forward/backward passes."""

    def __init__(self, geometry=None, slope=0.01):
        self.geometry = geometry or CnnGeometry()
        self.slope = slope
        g = self.geometry
        k = g.kernel
        self.params = {
            "conv1_w": np.zeros((g.channels, g.maps1, 1, k, k)),
            "conv1_b": np.zeros((g.channels, g.maps1)),
            "conv2_w": np.zeros((g.channels, g.maps2, g.maps1, k, k)),
            "conv2_b": np.zeros((g.channels, g.maps2)),
            "fc1_w": np.zeros((g.hidden, g.flat)),
            "fc1_b": np.zeros(g.hidden),
            "fc2_w": np.zeros((g.classes, g.hidden)),
            "fc2_b": np.zeros(g.classes),
        }

    def init(self, seed):
        """Xavier-uniform weights; conv and hidden-layer biases set to 1,
        output biases standard Gaussian. Deterministic per seed."""
        g = self.geometry
        rng = np.random.default_rng(seed)
        k2 = g.kernel**2

        def xavier(shape, fan_in, fan_out):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-bound, bound, size=shape)

        p = self.params
        p["conv1_w"] = xavier(p["conv1_w"].shape, k2, g.maps1 * k2)
        p["conv2_w"] = xavier(p["conv2_w"].shape, g.maps1 * k2, g.maps2 * k2)
        p["fc1_w"] = xavier(p["fc1_w"].shape, g.flat, g.hidden)
        p["fc2_w"] = xavier(p["fc2_w"].shape, g.hidden, g.classes)
        p["conv1_b"] = np.ones_like(p["conv1_b"])
        p["conv2_b"] = np.ones_like(p["conv2_b"])
        p["fc1_b"] = np.ones_like(p["fc1_b"])
        p["fc2_b"] = rng.standard_normal(p["fc2_b"].shape)
        return self

    def param_count(self):
        return sum(v.size for v in self.params.values())

    def layer_param_counts(self):
        """Trainable parameter totals for the conv1, conv2, fc1, fc2 blocks."""
        p = self.params
        return (
            p["conv1_w"].size + p["conv1_b"].size,
            p["conv2_w"].size + p["conv2_b"].size,
            p["fc1_w"].size + p["fc1_b"].size,
            p["fc2_w"].size + p["fc2_b"].size,
        )

    def forward(self, x, want_cache=False):
        """Class probabilities for a batch of inputs (B, channels, n, n)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 3
        if single:
            x = x[None]
        g = self.geometry
        if x.shape[1:] != (g.channels, g.input_size, g.input_size):
            raise ShapeError(
                f"expected inputs of shape (B, {g.channels}, {g.input_size}, "
                f"{g.input_size}), got {x.shape}"
            )
        p = self.params
        cache = {"x": x, "towers": []}
        flats = []
        for c in range(g.channels):
            z1 = _conv_forward(x[:, c : c + 1], p["conv1_w"][c], p["conv1_b"][c])
            a1 = lrelu(z1, self.slope)
            p1, idx1 = maxpool_2x2(a1)
            z2 = _conv_forward(p1, p["conv2_w"][c], p["conv2_b"][c])
            a2 = lrelu(z2, self.slope)
            p2, idx2 = maxpool_2x2(a2)
            flats.append(p2.reshape(x.shape[0], -1))
            if want_cache:
                cache["towers"].append((z1, idx1, a1.shape, p1, z2, idx2, a2.shape))
        flat = np.concatenate(flats, axis=1)
        z3 = flat @ p["fc1_w"].T + p["fc1_b"]
        a3 = lrelu(z3, self.slope)
        z4 = a3 @ p["fc2_w"].T + p["fc2_b"]
        probs = softmax(z4)
        if want_cache:
            cache.update(flat=flat, z3=z3, a3=a3)
            return (probs[0], cache) if single else (probs, cache)
        return probs[0] if single else probs

    def backward(self, cache, labels, probs):
        """Gradients of the summed nll loss over the batch, same shapes as
        the parameters."""
        if not cache or "flat" not in cache:
            raise ShapeError("forward cache required; call forward(want_cache=True)")
        g = self.geometry
        p = self.params
        labels = np.atleast_1d(np.asarray(labels))
        probs = np.atleast_2d(probs)
        batch = labels.shape[0]

        dz4 = probs.copy()
        dz4[np.arange(batch), labels] -= 1.0

        grads = {}
        grads["fc2_w"] = dz4.T @ cache["a3"]
        grads["fc2_b"] = dz4.sum(axis=0)
        da3 = dz4 @ p["fc2_w"]
        dz3 = da3 * lrelu_grad(cache["z3"], self.slope)
        grads["fc1_w"] = dz3.T @ cache["flat"]
        grads["fc1_b"] = dz3.sum(axis=0)
        dflat = dz3 @ p["fc1_w"]

        per_tower = g.maps2 * g.pool2_out**2
        grads["conv1_w"] = np.zeros_like(p["conv1_w"])
        grads["conv1_b"] = np.zeros_like(p["conv1_b"])
        grads["conv2_w"] = np.zeros_like(p["conv2_w"])
        grads["conv2_b"] = np.zeros_like(p["conv2_b"])
        for c in range(g.channels):
            z1, idx1, a1_shape, p1, z2, idx2, a2_shape = cache["towers"][c]
            dp2 = dflat[:, c * per_tower : (c + 1) * per_tower].reshape(
                batch, g.maps2, g.pool2_out, g.pool2_out
            )
            da2 = maxpool_backprop(dp2, idx2, a2_shape)
            dz2 = da2 * lrelu_grad(z2, self.slope)
            dw2, db2, dp1 = _conv_grads(p1, dz2, p["conv2_w"][c])
            grads["conv2_w"][c] = dw2
            grads["conv2_b"][c] = db2
            da1 = maxpool_backprop(dp1, idx1, a1_shape)
            dz1 = da1 * lrelu_grad(z1, self.slope)
            dw1, db1, _ = _conv_grads(
                cache["x"][:, c : c + 1], dz1, p["conv1_w"][c]
            )
            grads["conv1_w"][c] = dw1
            grads["conv1_b"][c] = db1
        return grads

    def copy(self):
        dup = Cnn(self.geometry, self.slope)
        dup.params = {k: v.copy() for k, v in self.params.items()}
        return dup
