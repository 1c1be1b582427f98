"""Image- and marker-level comparison metrics.

Image metrics treat images as float intensities in [0, 255] and average over
all pixels and channels; SSIM uses the standard 11x11 Gaussian window (sigma
1.5, K1 = 0.01, K2 = 0.03, L = 255) evaluated where the window fits entirely
inside the image, averaged over channels.
"""

import numpy as np
from dataclasses import dataclass

from .errors import ConfigError

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_C1 = (0.01 * 255.0) ** 2
_SSIM_C2 = (0.03 * 255.0) ** 2


@dataclass
class MarkerErrorReport:
    """Marker-field discrepancy: mean |magnitude difference| and mean angle.

    magnitude_l1_mm compares full 3-D displacement lengths; the angular error
    (degrees) is between in-plane displacement directions, weighted by the
    reference in-plane magnitude so static markers do not dilute it.
    """

    magnitude_l1_mm: float
    angular_error_deg: float


def _check_pair(reference, candidate):
    reference = np.asarray(reference)
    candidate = np.asarray(candidate)
    for img in (reference, candidate):
        if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
            raise ConfigError("images must be (H, W, 3) uint8")
    if reference.shape != candidate.shape:
        raise ConfigError(
            "image shapes differ: %s vs %s" % (reference.shape, candidate.shape)
        )
    return reference, candidate


def _gaussian_window():
    half = (_SSIM_WINDOW - 1) / 2.0
    t = np.arange(_SSIM_WINDOW) - half
    g = np.exp(-(t * t) / (2.0 * _SSIM_SIGMA**2))
    return g / g.sum()


def _window_mean(img, win):
    from scipy.ndimage import correlate1d

    half = _SSIM_WINDOW // 2
    out = correlate1d(img, win, axis=0, mode="constant")
    out = correlate1d(out, win, axis=1, mode="constant")
    return out[half:-half, half:-half]


def _ssim_channel(x, y, win):
    mu_x = _window_mean(x, win)
    mu_y = _window_mean(y, win)
    ex2 = _window_mean(x * x, win)
    ey2 = _window_mean(y * y, win)
    exy = _window_mean(x * y, win)
    var_x = ex2 - mu_x * mu_x
    var_y = ey2 - mu_y * mu_y
    cov = exy - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + _SSIM_C1) * (2.0 * cov + _SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + _SSIM_C1) * (var_x + var_y + _SSIM_C2)
    return float(np.mean(num / den))


def image_metrics(reference, candidate, crop=None):
    """L1, MSE, PSNR and SSIM between two uint8 RGB images.

    crop, when given, is an (x, y, width, height) pixel rectangle applied to
    both images before comparison.  PSNR of identical images is float('inf').
    """
    reference, candidate = _check_pair(reference, candidate)
    if crop is not None:
        x, y, w, h = (int(v) for v in crop)
        if w <= 0 or h <= 0:
            raise ConfigError("crop size must be positive")
        if x < 0 or y < 0 or x + w > reference.shape[1] or y + h > reference.shape[0]:
            raise ConfigError("crop rectangle leaves the image")
        reference = reference[y : y + h, x : x + w]
        candidate = candidate[y : y + h, x : x + w]
    if reference.shape[0] < _SSIM_WINDOW or reference.shape[1] < _SSIM_WINDOW:
        raise ConfigError("compared region smaller than the %dpx SSIM window" % _SSIM_WINDOW)
    a = reference.astype(np.float64)
    b = candidate.astype(np.float64)
    diff = a - b
    mse = float(np.mean(diff * diff))
    psnr = float("inf") if mse == 0.0 else 10.0 * np.log10(255.0**2 / mse)
    win = _gaussian_window()
    ssim = np.mean([_ssim_channel(a[:, :, c], b[:, :, c], win) for c in range(3)])
    return {
        "l1": float(np.mean(np.abs(diff))),
        "mse": mse,
        "psnr": psnr,
        "ssim": float(ssim),
    }


def marker_errors(reference, candidate):
    """Compare two marker fields sampled at identical positions.

    Angles between in-plane displacements are undefined when either vector is
    zero; such markers contribute zero angle, and the weighting by reference
    in-plane magnitude removes statically positioned markers entirely.
    """
    if reference.positions_mm.shape != candidate.positions_mm.shape or not np.array_equal(
        reference.positions_mm, candidate.positions_mm
    ):
        raise ConfigError("marker fields must share identical positions")
    if len(reference.positions_mm) == 0:
        raise ConfigError("marker fields are empty")
    ref_u = reference.displacements_mm
    cand_u = candidate.displacements_mm
    mag = float(
        np.mean(
            np.abs(
                np.linalg.norm(ref_u, axis=1) - np.linalg.norm(cand_u, axis=1)
            )
        )
    )
    ref2 = ref_u[:, :2]
    cand2 = cand_u[:, :2]
    wn = np.linalg.norm(ref2, axis=1)
    cn = np.linalg.norm(cand2, axis=1)
    ok = (wn > 0) & (cn > 0)
    angles = np.zeros(len(wn))
    if ok.any():
        cosang = np.sum(ref2[ok] * cand2[ok], axis=1) / (wn[ok] * cn[ok])
        angles[ok] = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    total = wn.sum()
    weighted = float(np.sum(wn * angles) / total) if total > 0 else 0.0
    return MarkerErrorReport(mag, weighted)
