"""Bicubic resampling with the Keys kernel (a = -0.5) and mirror padding.

Resampling is separable; each axis is a dense weight matrix applied by
matmul. The sampling grid is center-aligned: output index k maps to source
coordinate (k + 0.5) * (n_in / n_out) - 0.5. On downscale the kernel is
widened by the scale factor (antialiasing) and renormalized. Source indices
outside the image are clamped to the nearest edge sample.
"""

import math

import numpy as np

from .errors import InvalidInputError


def keys_kernel(t):
    """Cubic convolution kernel of Keys with a = -0.5."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    out = np.zeros_like(t)
    near = t <= 1.0
    far = (t > 1.0) & (t < 2.0)
    out[near] = (1.5 * t[near] - 2.5) * t[near] * t[near] + 1.0
    out[far] = ((-0.5 * t[far] + 2.5) * t[far] - 4.0) * t[far] + 2.0
    return out


def resample_weights(n_in, n_out):
    """Dense (n_out, n_in) weight matrix mapping a length-n_in signal to
    length n_out. Rows sum to 1."""
    if n_in < 2:
        raise InvalidInputError(f"need at least 2 source samples, got {n_in}")
    if n_out < 1:
        raise InvalidInputError(f"output length must be >= 1, got {n_out}")
    scale = n_in / n_out
    width = max(scale, 1.0)
    weights = np.zeros((n_out, n_in))
    for k in range(n_out):
        center = (k + 0.5) * scale - 0.5
        lo = math.floor(center - 2.0 * width) + 1
        hi = math.floor(center + 2.0 * width)
        idx = np.arange(lo, hi + 1)
        w = keys_kernel((idx - center) / width)
        np.add.at(weights[k], np.clip(idx, 0, n_in - 1), w)
        weights[k] /= weights[k].sum()
    return weights


def resize_bicubic(src, out_w, out_h):
    """Resize a 2-D matrix to (out_h, out_w)."""
    src = np.asarray(src, dtype=np.float64)
    if src.ndim != 2 or src.shape[0] < 2 or src.shape[1] < 2:
        raise InvalidInputError(f"source must be at least 2x2, got shape {src.shape}")
    if out_w < 1 or out_h < 1:
        raise InvalidInputError(f"output size {out_w}x{out_h} is invalid")
    wv = resample_weights(src.shape[0], out_h)
    wh = resample_weights(src.shape[1], out_w)
    return wv @ src @ wh.T


def mirror_pad(channel, radius):
    """Reflect-101 padding: mirrored across each border without repeating the
    edge sample."""
    channel = np.asarray(channel, dtype=np.float64)
    if channel.ndim != 2:
        raise InvalidInputError(f"expected a (H, W) channel, got shape {channel.shape}")
    if radius < 0:
        raise InvalidInputError(f"radius must be >= 0, got {radius}")
    if radius >= min(channel.shape):
        raise InvalidInputError(
            f"radius {radius} too large for shape {channel.shape}"
        )
    if radius == 0:
        return channel.copy()
    return np.pad(channel, radius, mode="reflect")
