"""Desk-scale synthetic fundus images with exact ground truth.

Each image carries a circular field of view, a bright optic disc, dark
vessels radiating from the disc, and a low-contrast diffuse fovea blob at
about 2.5 disc diameters from the disc center. The label map is emitted from
the generating geometry, never re-segmented. Class proportions track the
DRIVE break-down: background majority, vessels around a tenth, disc and
fovea a couple of percent each.
"""

import numpy as np

from .data import FundusRecord, compose_truth, image_from_raster, raster_from_image
from .errors import InvalidInputError


def _disk(shape, cy, cx, radius):
    ys, xs = np.ogrid[: shape[0], : shape[1]]
    return (ys - cy) ** 2 + (xs - cx) ** 2 <= radius**2


def _stamp_path(canvas, points, widths):
    h, w = canvas.shape
    for (py, px), width in zip(points, widths):
        r = width / 2.0
        ri = int(np.ceil(r))
        y0, y1 = max(int(py) - ri, 0), min(int(py) + ri + 1, h)
        x0, x1 = max(int(px) - ri, 0), min(int(px) + ri + 1, w)
        if y0 >= y1 or x0 >= x1:
            continue
        ys, xs = np.ogrid[y0:y1, x0:x1]
        canvas[y0:y1, x0:x1] |= (ys - py) ** 2 + (xs - px) ** 2 <= r**2


def _trace_vessel(rng, start, direction, max_len, width0, width1, bounds_r, center):
    points, widths = [], []
    pos = np.array(start, dtype=np.float64)
    ang = direction
    steps = int(max_len)
    curve = rng.normal(0.0, 0.045)
    for i in range(steps):
        points.append(pos.copy())
        widths.append(width0 + (width1 - width0) * i / max(steps - 1, 1))
        ang += curve + rng.normal(0.0, 0.03)
        pos += np.array([np.sin(ang), np.cos(ang)])
        if np.hypot(pos[0] - center[0], pos[1] - center[1]) > bounds_r:
            break
    return points, widths


def _smooth3(field, passes=2):
    for _ in range(passes):
        padded = np.pad(field, 1, mode="edge")
        acc = np.zeros_like(field)
        for dy in range(3):
            for dx in range(3):
                acc += padded[dy : dy + field.shape[0], dx : dx + field.shape[1]]
        field = acc / 9.0
    return field


def synth_fundus(seed, size=256):
    """Generate one synthetic FundusRecord with exact truth."""
    if size < 128:
        raise InvalidInputError(f"size must be >= 128, got {size}")
    rng = np.random.default_rng(seed)
    s = float(size)
    shape = (size, size)
    cy = cx = s / 2.0

    r_fov = 0.47 * s
    mask = _disk(shape, cy, cx, r_fov)

    r_od = 0.070 * s
    od_cy = cy + rng.uniform(-0.03, 0.03) * s
    od_cx = cx - 0.25 * s + rng.uniform(-0.02, 0.02) * s
    od = _disk(shape, od_cy, od_cx, r_od)

    # fovea sits ~2.5 disc diameters from the disc center
    r_fovea = 0.058 * s
    f_ang = rng.uniform(-0.12, 0.12)
    f_dist = 2.5 * 2.0 * r_od
    fov_cy = od_cy + f_dist * np.sin(f_ang)
    fov_cx = od_cx + f_dist * np.cos(f_ang)
    fovea = _disk(shape, fov_cy, fov_cx, r_fovea)

    vessels = np.zeros(shape, dtype=bool)
    n_main = 14
    for i in range(n_main):
        ang = 2.0 * np.pi * i / n_main + rng.uniform(-0.2, 0.2)
        start = (od_cy + 1.0 * r_od * np.sin(ang), od_cx + 1.0 * r_od * np.cos(ang))
        width0 = rng.uniform(0.012, 0.018) * s
        pts, ws = _trace_vessel(
            rng, start, ang, max_len=0.55 * s, width0=width0, width1=0.45 * width0,
            bounds_r=0.97 * r_fov, center=(cy, cx),
        )
        _stamp_path(vessels, pts, ws)
        if rng.random() < 0.7 and len(pts) > 20:
            j = rng.integers(10, len(pts) - 5)
            pts2, ws2 = _trace_vessel(
                rng, pts[j], ang + rng.choice([-1.0, 1.0]) * rng.uniform(0.4, 0.8),
                max_len=0.3 * s, width0=0.7 * ws[j], width1=0.35 * ws[j],
                bounds_r=0.97 * r_fov, center=(cy, cx),
            )
            _stamp_path(vessels, pts2, ws2)

    truth = compose_truth(vessels, od, fovea, mask)

    ys, xs = np.mgrid[:size, :size]
    d_fov2 = ((ys - fov_cy) ** 2 + (xs - fov_cx) ** 2) / (2.0 * (0.9 * r_fovea) ** 2)
    d_od = np.hypot(ys - od_cy, xs - od_cx)
    d_c = np.hypot(ys - cy, xs - cx)

    green = np.full(shape, 0.52)
    gx, gy = rng.uniform(-0.06, 0.06, size=2)
    green += gx * (xs / s - 0.5) + gy * (ys / s - 0.5)
    green -= 0.06 * (d_c / r_fov) ** 2
    green += 0.22 / (1.0 + np.exp((d_od - r_od) / (0.008 * s)))
    green -= 0.12 * np.exp(-d_fov2)
    green = np.where(vessels, green - 0.17, green)
    green = _smooth3(green, passes=1)
    green += rng.normal(0.0, 0.015, size=shape)
    green = np.clip(green, 0.02, 0.98)
    green = np.where(mask, green, 0.03)

    red = np.clip(green * 1.15 + 0.18, 0.0, 1.0)
    blue = np.clip(green * 0.35, 0.0, 1.0)
    image = np.where(mask[None], np.stack([red, green, blue]), 0.03)

    # quantize to 8 bits so in-memory and on-disk pipelines agree exactly
    image = image_from_raster(raster_from_image(image))
    return FundusRecord(str(seed), image, mask, truth)
