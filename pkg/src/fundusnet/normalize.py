"""Background-lighting normalization and channel standardization.

Single-channel rasters are float64 arrays of shape (H, W); masks are boolean
arrays of the same shape, true at effective fundus points.
"""

import numpy as np

from .colorspace import luv_to_rgb, rgb_to_luv
from .errors import DegenerateInputError, InvalidInputError, ShapeError

DEFAULT_WINDOW = 69


def _check_channel_mask(channel, mask):
    channel = np.asarray(channel, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if channel.ndim != 2:
        raise ShapeError(f"expected a (H, W) channel, got shape {channel.shape}")
    if mask.shape != channel.shape:
        raise ShapeError(
            f"mask shape {mask.shape} does not match channel shape {channel.shape}"
        )
    return channel, mask


def _box_sums(values, window):
    """Sum of `values` over the window x window box around each pixel,
    clipped to the image bounds, via a summed-area table."""
    h, w = values.shape
    r = window // 2
    sat = np.zeros((h + 1, w + 1))
    np.cumsum(np.cumsum(values, axis=0), axis=1, out=sat[1:, 1:])
    y0 = np.clip(np.arange(h) - r, 0, h)
    y1 = np.clip(np.arange(h) + r + 1, 0, h)
    x0 = np.clip(np.arange(w) - r, 0, w)
    x1 = np.clip(np.arange(w) + r + 1, 0, w)
    return (
        sat[np.ix_(y1, x1)]
        - sat[np.ix_(y0, x1)]
        - sat[np.ix_(y1, x0)]
        + sat[np.ix_(y0, x0)]
    )


def normalize_background(channel, mask, window=DEFAULT_WINDOW):
    """Subtract the local masked-mean background and re-center to the global
    masked mean. Pixels outside the mask pass through unchanged."""
    channel, mask = _check_channel_mask(channel, mask)
    if window < 3 or window % 2 == 0:
        raise InvalidInputError(f"window must be odd and >= 3, got {window}")
    h, w = channel.shape
    if window > 2 * min(w, h):
        raise InvalidInputError(
            f"window {window} too large for a {w}x{h} image"
        )
    n_eff = int(mask.sum())
    if n_eff == 0:
        return channel.copy()

    masked = np.where(mask, channel, 0.0)
    counts = _box_sums(mask.astype(np.float64), window)
    sums = _box_sums(masked, window)
    background = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    recenter = masked.sum() / n_eff
    return np.where(mask, channel - background + recenter, channel)


def standardize_channel(channel, mask):
    """Masked z-score: zero mean, unit population std over effective points.
    Non-mask pixels are set to 0."""
    channel, mask = _check_channel_mask(channel, mask)
    n_eff = int(mask.sum())
    if n_eff < 2:
        raise DegenerateInputError("need at least 2 effective points to standardize")
    vals = channel[mask]
    mean = vals.mean()
    std = vals.std()
    if std == 0.0:
        raise DegenerateInputError("zero variance over the mask")
    out = np.zeros_like(channel)
    out[mask] = (vals - mean) / std
    return out


def normalize_fundus(img, mask, window=DEFAULT_WINDOW):
    """Run background normalization on the luminance plane only: RGB -> Luv,
    correct L, back to RGB. Pixels outside the mask are returned untouched."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"expected a (3, H, W) image, got shape {img.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.shape[1:]:
        raise ShapeError(
            f"mask shape {mask.shape} does not match image plane shape {img.shape[1:]}"
        )
    if not mask.any():
        return img.copy()
    luv = rgb_to_luv(img)
    luv[0] = normalize_background(luv[0], mask, window)
    out = luv_to_rgb(luv)
    return np.where(mask[None, :, :], out, img)
