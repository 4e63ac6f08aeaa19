"""Multi-scale network inputs for single pixels.

For a pixel (x, y) the network sees three 33x33 planes extracted from the
standardized green channel: a 7x7 neighbourhood upscaled, the raw 33x33
neighbourhood, and a 165x165 neighbourhood downscaled. All windows are read
from a reflect-101 padded copy of the channel so corner pixels get full
windows.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidInputError
from .resample import resample_weights


def _reflect_indices(n, radius):
    """Reflect-101 source indices for positions -radius .. n-1+radius,
    with repeated reflection so any radius is valid."""
    idx = np.arange(-radius, n + radius)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    idx = np.mod(idx, period)
    return np.minimum(idx, period - idx)

SMALL_WINDOW = 7
PATCH_SIZE = 33
LARGE_WINDOW = 165


def effective_points(mask):
    """All (x, y) pixels where the mask is true, row-major order.
    Returns an (N, 2) int array with columns x, y."""
    mask = np.asarray(mask, dtype=bool)
    ys, xs = np.nonzero(mask)
    return np.column_stack([xs, ys]).astype(np.int64)


class PatchExtractor:
    """Builds 3x33x33 inputs for pixels of one standardized channel.

    Padding and the per-scale resampling matrices are computed once at
    construction and shared by every build call; the instance is read-only
    afterwards and safe to use from several workers.
    """

    def __init__(self, std_green, small=SMALL_WINDOW, mid=PATCH_SIZE, large=LARGE_WINDOW):
        std_green = np.asarray(std_green, dtype=np.float64)
        if std_green.ndim != 2:
            raise InvalidInputError(
                f"expected a (H, W) channel, got shape {std_green.shape}"
            )
        for name, win in (("small", small), ("mid", mid), ("large", large)):
            if win < 1 or win % 2 == 0:
                raise InvalidInputError(f"{name} window must be odd, got {win}")
        self.height, self.width = std_green.shape
        self.small = small
        self.mid = mid
        self.large = large
        self.radius = large // 2
        iy = _reflect_indices(self.height, self.radius)
        ix = _reflect_indices(self.width, self.radius)
        self.padded = std_green[np.ix_(iy, ix)]
        self._w_small = resample_weights(small, mid)
        self._w_large = resample_weights(large, mid)
        # When the downscale stride is integral the resize rows repeat their
        # tap pattern at integer offsets, so the whole resize is precomputable
        # as a small set of separable correlations over the padded channel;
        # each patch then reduces to an indexed gather.
        self._filtered = None
        if large != mid and large % mid == 0:
            self._precompute_large()

    def _precompute_large(self):
        """Factor the large-window resize into shared 1-D correlations.

        Row k of the resize matrix has a short tap segment; interior rows are
        exact translates of one another, edge rows (index clamping) are their
        own shapes. For vertical shape a and horizontal shape b the patch
        sample (k, l) equals the (a, b) cross-correlated image evaluated at
        the window origin plus each segment's start offset.
        """
        w = self._w_large
        shapes = {}
        shape_ids = np.empty(self.mid, dtype=np.int64)
        starts = np.empty(self.mid, dtype=np.int64)
        kernels = []
        for k in range(self.mid):
            (nz,) = np.nonzero(w[k])
            seg = w[k, nz[0] : nz[-1] + 1]
            key = seg.tobytes()
            if key not in shapes:
                shapes[key] = len(kernels)
                kernels.append(seg)
            shape_ids[k] = shapes[key]
            starts[k] = nz[0]
        hp, wp = self.padded.shape
        nsh = len(kernels)
        vert = np.zeros((nsh, hp, wp))
        for a, g in enumerate(kernels):
            n = hp - len(g) + 1
            for t, gt in enumerate(g):
                vert[a, :n] += gt * self.padded[t : t + n]
        cross = np.zeros((nsh, nsh, hp, wp))
        for a in range(nsh):
            for b, g in enumerate(kernels):
                n = wp - len(g) + 1
                for t, gt in enumerate(g):
                    cross[a, b, :, :n] += gt * vert[a, :, t : t + n]
        self._filtered = (cross, shape_ids, starts)

    def _check_coords(self, xs, ys):
        if np.any((xs < 0) | (xs >= self.width) | (ys < 0) | (ys >= self.height)):
            raise InvalidInputError("pixel coordinates outside image bounds")

    def build(self, x, y):
        """The 3x33x33 input for one pixel."""
        return self.build_batch(np.array([[x, y]]))[0]

    def build_batch(self, coords):
        """Inputs for an (N, 2) array of (x, y) pixels, shape (N, 3, mid, mid)."""
        coords = np.asarray(coords, dtype=np.int64)
        xs, ys = coords[:, 0], coords[:, 1]
        self._check_coords(xs, ys)
        r = self.radius
        rs, rm, rl = self.small // 2, self.mid // 2, self.large // 2

        win_s = self._windows(self.small)[ys + r - rs, xs + r - rs]
        win_m = self._windows(self.mid)[ys + r - rm, xs + r - rm]
        ch1 = np.einsum("ij,bjk,lk->bil", self._w_small, win_s, self._w_small)

        if self._filtered is not None:
            cross, shape_ids, starts = self._filtered
            ch3 = cross[
                shape_ids[None, :, None],
                shape_ids[None, None, :],
                (ys + r - rl)[:, None, None] + starts[None, :, None],
                (xs + r - rl)[:, None, None] + starts[None, None, :],
            ]
        else:
            win_l = self._windows(self.large)[ys + r - rl, xs + r - rl]
            ch3 = np.einsum("ij,bjk,lk->bil", self._w_large, win_l, self._w_large)
        return np.stack([ch1, win_m.astype(np.float64), ch3], axis=1)

    def _windows(self, size):
        return sliding_window_view(self.padded, (size, size))


def build_input(std_green, x, y):
    """One-shot convenience wrapper around PatchExtractor."""
    return PatchExtractor(std_green).build(x, y)
