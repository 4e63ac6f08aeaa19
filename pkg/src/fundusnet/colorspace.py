"""CIE 1976 L*u*v* conversions for sRGB images.

Images are float64 arrays of shape (3, H, W). RGB samples live in [0, 1];
Luv planes hold L* in [0, 100] and unbounded u*, v*.
"""

import numpy as np

from .errors import InvalidInputError

# sRGB (IEC 61966-2-1) linear RGB -> XYZ, D65 white.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)

# Reference white taken as the image of (1,1,1) so that white round-trips
# to L*=100, u*=v*=0 exactly.
_WHITE = _RGB_TO_XYZ @ np.ones(3)
_DEN_W = _WHITE[0] + 15.0 * _WHITE[1] + 3.0 * _WHITE[2]
_UN = 4.0 * _WHITE[0] / _DEN_W
_VN = 9.0 * _WHITE[1] / _DEN_W

_EPS = (6.0 / 29.0) ** 3


def _check_3ch(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise InvalidInputError(f"expected a (3, H, W) image, got shape {img.shape}")
    return img


def _srgb_to_linear(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c):
    c = np.clip(c, 0.0, None)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1.0 / 2.4) - 0.055)


def rgb_to_luv(img):
    """Convert an sRGB image (samples in [0,1]) to L*u*v* planes."""
    img = _check_3ch(img)
    lin = _srgb_to_linear(img)
    xyz = np.einsum("ij,jhw->ihw", _RGB_TO_XYZ, lin)
    x, y, z = xyz[0], xyz[1], xyz[2]

    t = y / _WHITE[1]
    lum = np.where(t > _EPS, 116.0 * np.cbrt(t) - 16.0, (29.0 / 3.0) ** 3 * t)

    den = x + 15.0 * y + 3.0 * z
    safe = den > 0.0
    up = np.where(safe, 4.0 * x / np.where(safe, den, 1.0), _UN)
    vp = np.where(safe, 9.0 * y / np.where(safe, den, 1.0), _VN)
    return np.stack([lum, 13.0 * lum * (up - _UN), 13.0 * lum * (vp - _VN)])


def luv_to_rgb(img):
    """Invert rgb_to_luv; out-of-gamut results are clamped to [0, 1]."""
    img = _check_3ch(img)
    lum, us, vs = img[0], img[1], img[2]

    nonzero = lum > 0.0
    ldiv = np.where(nonzero, lum, 1.0)
    up = us / (13.0 * ldiv) + _UN
    vp = vs / (13.0 * ldiv) + _VN

    y = np.where(
        lum > 8.0,
        _WHITE[1] * ((lum + 16.0) / 116.0) ** 3,
        _WHITE[1] * lum * (3.0 / 29.0) ** 3,
    )
    vsafe = np.where(vp != 0.0, vp, 1.0)
    x = y * 9.0 * up / (4.0 * vsafe)
    z = y * (12.0 - 3.0 * up - 20.0 * vp) / (4.0 * vsafe)
    x = np.where(nonzero, x, 0.0)
    z = np.where(nonzero, z, 0.0)

    lin = np.einsum("ij,jhw->ihw", _XYZ_TO_RGB, np.stack([x, y, z]))
    return np.clip(_linear_to_srgb(lin), 0.0, 1.0)
