"""Stereo evaluation: disparity errors, SSIM/PSNR, and right-to-left view synthesis."""
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .exceptions import DataError

C1 = 0.01 ** 2
C2 = 0.03 ** 2
MAXI = 255.0


@dataclass
class DisparityMap:
    """Disparities in pixels with an explicit validity mask."""

    values: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise DataError(f"disparity map must be 2-D, got shape {self.values.shape}")
        if self.valid is None:
            self.valid = np.isfinite(self.values)
        else:
            self.valid = np.asarray(self.valid, dtype=bool) & np.isfinite(self.values)

    @property
    def shape(self):
        return self.values.shape


def _as_disp(x):
    return x if isinstance(x, DisparityMap) else DisparityMap(x)


def _pair(pred, gt):
    pred, gt = _as_disp(pred), _as_disp(gt)
    if pred.shape != gt.shape:
        raise DataError(f"dimension mismatch: prediction {pred.shape} vs ground truth {gt.shape}")
    mask = gt.valid
    if not mask.any():
        raise DataError("ground truth has no valid pixels")
    err = np.abs(pred.values.astype(np.float64) - gt.values.astype(np.float64))
    # an invalid prediction at a valid ground-truth pixel counts as an unbounded error
    err = np.where(pred.valid, err, np.inf)
    return err[mask], gt.values[mask].astype(np.float64)


def epe(pred, gt):
    """Mean absolute disparity error over pixels valid in ``gt`` (Avg-all)."""
    err, _ = _pair(pred, gt)
    return float(np.mean(err))


def d1_all(pred, gt):
    """Percentage of valid pixels with error above 3 px and above 5% of ``gt``."""
    err, g = _pair(pred, gt)
    bad = (err > 3.0) & (err > 0.05 * g)
    return 100.0 * np.count_nonzero(bad) / len(err)


def valid_pixels(gt):
    return int(np.count_nonzero(_as_disp(gt).valid))


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    """Weighted local means at every position where the window fits entirely."""
    out = ndimage.correlate1d(img, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    h = len(g) // 2
    return out[h:img.shape[0] - h, h:img.shape[1] - h]


def ssim_map(x, y, window=11, sigma=1.5):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DataError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if x.ndim != 2 or min(x.shape) < window:
        raise DataError(f"image of shape {x.shape} is smaller than the {window}x{window} window")
    g = gaussian_window(window, sigma)
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + C1) * (2 * sxy + C2)
    den = (mx * mx + my * my + C1) * (sxx + syy + C2)
    return num / den


def ssim(x, y, mask=None, window=11, sigma=1.5):
    """Mean SSIM over all full windows of two images normalised to [0, 1].

    With ``mask``, only windows lying entirely on valid pixels contribute.
    """
    m = ssim_map(x, y, window, sigma)
    if mask is None:
        return float(np.mean(m))
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != np.shape(x):
        raise DataError("mask shape does not match the images")
    box = np.ones(window)
    full = _filter_valid(mask.astype(np.float64), box) > window * window - 0.5
    if not full.any():
        raise DataError("no fully valid SSIM window")
    return float(np.mean(m[full]))


def psnr(x, y, mask=None):
    """PSNR in dB on the 0-255 scale for images given in [0, 1]; +inf when identical."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DataError(f"dimension mismatch: {x.shape} vs {y.shape}")
    diff = (x - y) * MAXI
    if mask is not None:
        diff = diff[np.asarray(mask, dtype=bool)]
        if diff.size == 0:
            raise DataError("mask selects no pixels")
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return float("inf")
    return 20.0 * np.log10(MAXI / np.sqrt(mse))


def warp_right_to_left(right, disp, sign=1):
    """Synthesize the left view: ``left(x, y) = right(x - sign * d(x, y), y)``.

    Linear interpolation along x.  Returns ``(image, valid)``; pixels whose
    source falls outside the image or whose disparity is invalid are
    invalid (and set to 0).
    """
    right = np.asarray(right, dtype=np.float64)
    disp = _as_disp(disp)
    if right.shape != disp.shape:
        raise DataError(f"dimension mismatch: image {right.shape} vs disparity {disp.shape}")
    h, w = right.shape
    d = np.where(disp.valid, disp.values.astype(np.float64), 0.0)
    xs = np.arange(w, dtype=np.float64)[None, :] - sign * d
    valid = disp.valid & (xs >= 0) & (xs <= w - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    a = np.clip(xs - x0, 0.0, 1.0)
    rows = np.arange(h)[:, None]
    out = (1.0 - a) * right[rows, x0] + a * right[rows, x1]
    out = np.where(valid, out, 0.0)
    return out, valid
