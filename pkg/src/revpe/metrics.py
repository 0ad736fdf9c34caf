"""Image quality metrics (PSNR, SSIM) and the masked comparison protocol."""

from __future__ import annotations

import numpy as np
from scipy import ndimage
from scipy.signal import fftconvolve

from .core import InvalidInputError, check_same_shape, check_slice

__all__ = ["psnr", "ssim", "mask_median_otsu", "otsu_threshold"]

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
MIN_COMPONENT = 16  # pixels; smaller mask components are discarded


def _check_mask(mask, shape) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    if m.shape != shape:
        raise InvalidInputError(f"mask shape {m.shape} != image shape {shape}")
    if not m.any():
        raise InvalidInputError("mask selects no pixels")
    return m


def psnr(reference: np.ndarray, test: np.ndarray, mask=None) -> float:
    """Peak SNR in dB over the (masked) region; +inf for identical inputs."""
    ref = check_slice(reference, "reference")
    tst = check_slice(test, "test")
    check_same_shape(ref, tst, "reference/test")
    if mask is not None:
        m = _check_mask(mask, ref.shape)
        ref_v = ref[m]
        tst_v = tst[m]
    else:
        ref_v = ref.ravel()
        tst_v = tst.ravel()
    peak = float(ref_v.max())
    if peak == 0.0:
        raise InvalidInputError("reference peak is 0 in the evaluated region")
    rmse = float(np.sqrt(np.mean((ref_v - tst_v) ** 2)))
    if rmse == 0.0:
        return float("inf")
    return 20.0 * np.log10(peak / rmse)


def _ssim_window() -> np.ndarray:
    r = SSIM_WINDOW // 2
    offs = np.arange(-r, r + 1, dtype=float)
    w = np.exp(-0.5 * (offs / SSIM_SIGMA) ** 2)
    k = np.outer(w, w)
    return k / k.sum()


def _local_mean(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # Valid-mode windowed average: statistics only where the window fits.
    return fftconvolve(x, kernel[::-1, ::-1], mode="valid")


def ssim(reference: np.ndarray, test: np.ndarray, mask=None) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5).

    Dynamic range is the reference max minus min; a zero-range reference falls
    back to unit range so identical constants score 1.  Local statistics are
    computed only where the full window fits; a mask is evaluated at the
    window centers.
    """
    ref = check_slice(reference, "reference")
    tst = check_slice(test, "test")
    check_same_shape(ref, tst, "reference/test")
    if min(ref.shape) < SSIM_WINDOW:
        raise InvalidInputError(
            f"image {ref.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    kernel = _ssim_window()
    drange = float(ref.max() - ref.min())
    if drange == 0.0:
        drange = 1.0
    c1 = (SSIM_K1 * drange) ** 2
    c2 = (SSIM_K2 * drange) ** 2
    mu_x = _local_mean(ref, kernel)
    mu_y = _local_mean(tst, kernel)
    xx = _local_mean(ref * ref, kernel) - mu_x**2
    yy = _local_mean(tst * tst, kernel) - mu_y**2
    xy = _local_mean(ref * tst, kernel) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    smap = num / den
    if mask is not None:
        m = _check_mask(mask, ref.shape)
        r = SSIM_WINDOW // 2
        mc = m[r:-r, r:-r]
        if not mc.any():
            raise InvalidInputError("mask selects no window-center pixels")
        return float(smap[mc].mean())
    return float(smap.mean())


def otsu_threshold(values: np.ndarray, bins: int = 256) -> float:
    """Histogram threshold maximizing between-class variance (256 bins over
    the observed range)."""
    v = np.asarray(values, dtype=float).ravel()
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        raise InvalidInputError("cannot threshold a constant image")
    hist, edges = np.histogram(v, bins=bins, range=(lo, hi))
    hist = hist.astype(float)
    centers = (edges[:-1] + edges[1:]) / 2.0
    w0 = np.cumsum(hist)
    w1 = w0[-1] - w0
    m0 = np.cumsum(hist * centers)
    m_total = m0[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = m0 / w0
        mu1 = (m_total - m0) / w1
        between = w0 * w1 * (mu0 - mu1) ** 2
    between[~np.isfinite(between)] = -1.0
    k = int(np.argmax(between))
    return float(edges[k + 1])


def mask_median_otsu(reference: np.ndarray) -> np.ndarray:
    """Foreground mask: 3x3 median filter, Otsu threshold, then removal of
    connected components smaller than 16 pixels."""
    ref = check_slice(reference, "reference")
    if np.unique(ref).size < 2:
        raise InvalidInputError("constant image has no foreground")
    med = ndimage.median_filter(ref, size=3)
    thresh = otsu_threshold(med)
    mask = med > thresh
    labels, n = ndimage.label(mask)
    if n:
        sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, n + 1))
        keep = np.flatnonzero(sizes >= MIN_COMPONENT) + 1
        mask = np.isin(labels, keep)
    return mask
