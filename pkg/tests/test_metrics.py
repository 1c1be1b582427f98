"""Metric tests against brute-force references.

The SSIM reference here extracts every fully-interior 11x11 window with
sliding_window_view and evaluates the similarity formula with centered
(weighted) moments, whereas the library uses separable correlation and
uncentered moments -- agreement to 1e-9 checks both routes.  L1/MSE/PSNR are
recomputed with elementary numpy expressions.
"""

import numpy as np
import pytest
from numpy.lib.stride_tricks import sliding_window_view

from gelsim import ConfigError, MarkerField, image_metrics, marker_errors

_WIN = 11
_C1 = (0.01 * 255.0) ** 2
_C2 = (0.03 * 255.0) ** 2


def _reference_ssim(a, b):
    """Windowed SSIM evaluated one explicit window stack at a time."""
    t = np.arange(_WIN) - (_WIN - 1) / 2.0
    g = np.exp(-(t * t) / (2.0 * 1.5**2))
    g /= g.sum()
    w2 = np.outer(g, g)
    scores = []
    for c in range(3):
        x = sliding_window_view(a[:, :, c].astype(np.float64), (_WIN, _WIN))
        y = sliding_window_view(b[:, :, c].astype(np.float64), (_WIN, _WIN))
        mu_x = np.tensordot(x, w2, axes=([2, 3], [0, 1]))
        mu_y = np.tensordot(y, w2, axes=([2, 3], [0, 1]))
        dx = x - mu_x[:, :, None, None]
        dy = y - mu_y[:, :, None, None]
        var_x = np.tensordot(dx * dx, w2, axes=([2, 3], [0, 1]))
        var_y = np.tensordot(dy * dy, w2, axes=([2, 3], [0, 1]))
        cov = np.tensordot(dx * dy, w2, axes=([2, 3], [0, 1]))
        num = (2 * mu_x * mu_y + _C1) * (2 * cov + _C2)
        den = (mu_x**2 + mu_y**2 + _C1) * (var_x + var_y + _C2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


def _reference_metrics(a, b):
    d = a.astype(np.float64) - b.astype(np.float64)
    mse = float((d * d).sum() / d.size)
    return {
        "l1": float(np.abs(d).sum() / d.size),
        "mse": mse,
        "psnr": float("inf") if mse == 0 else float(20 * np.log10(255.0) - 10 * np.log10(mse)),
        "ssim": _reference_ssim(a, b),
    }


def test_metrics_match_the_brute_force_reference(rng):
    for _ in range(10):
        a = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
        b = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
        got = image_metrics(a, b)
        want = _reference_metrics(a, b)
        for key in ("l1", "mse", "psnr", "ssim"):
            assert got[key] == pytest.approx(want[key], rel=1e-9, abs=1e-9)


def test_small_perturbations_match_the_reference_too(rng):
    a = rng.integers(80, 160, size=(40, 25, 3), dtype=np.uint8)
    b = a.astype(np.int16)
    b[::3, ::2] += rng.integers(-3, 4, size=b[::3, ::2].shape, dtype=np.int16)
    b = np.clip(b, 0, 255).astype(np.uint8)
    got = image_metrics(a, b)
    want = _reference_metrics(a, b)
    for key in ("l1", "mse", "psnr", "ssim"):
        assert got[key] == pytest.approx(want[key], rel=1e-9, abs=1e-9)
    assert 0.0 < got["ssim"] <= 1.0


def test_identical_images_score_perfectly(rng):
    a = rng.integers(0, 256, size=(24, 24, 3), dtype=np.uint8)
    got = image_metrics(a, a.copy())
    assert got["l1"] == 0.0
    assert got["mse"] == 0.0
    assert got["psnr"] == float("inf")
    assert got["ssim"] == 1.0


def test_crop_equals_metrics_of_the_sliced_images(rng):
    a = rng.integers(0, 256, size=(40, 50, 3), dtype=np.uint8)
    b = rng.integers(0, 256, size=(40, 50, 3), dtype=np.uint8)
    got = image_metrics(a, b, crop=(7, 5, 20, 14))
    want = image_metrics(a[5:19, 7:27], b[5:19, 7:27])
    assert got == want


def test_image_and_crop_validation(rng):
    a = rng.integers(0, 256, size=(24, 24, 3), dtype=np.uint8)
    with pytest.raises(ConfigError):
        image_metrics(a.astype(np.float32), a)
    with pytest.raises(ConfigError):
        image_metrics(a[:, :, 0], a[:, :, 0])
    with pytest.raises(ConfigError):
        image_metrics(a, a[:20])
    with pytest.raises(ConfigError):
        image_metrics(a, a, crop=(0, 0, 0, 5))
    with pytest.raises(ConfigError):
        image_metrics(a, a, crop=(20, 0, 10, 10))  # leaves the image
    with pytest.raises(ConfigError):
        image_metrics(a, a, crop=(0, 0, 10, 12))  # narrower than the window
    with pytest.raises(ConfigError):
        image_metrics(a[:8], a[:8])


def test_marker_errors_match_a_hand_computation():
    pos = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
    ref = MarkerField(pos, [[1.0, 0.0, 0.0], [0.0, 0.0, 0.5], [0.5, 0.5, 0.0]])
    cand = MarkerField(pos, [[0.0, 1.0, 0.0], [0.0, 0.0, 0.3], [0.5, 0.5, 0.0]])
    report = marker_errors(ref, cand)
    # magnitudes: |1-1|, |0.5-0.3|, |sqrt(.5)-sqrt(.5)| -> mean 0.2/3
    assert report.magnitude_l1_mm == pytest.approx(0.2 / 3)
    # angles: 90 deg with weight 1, rest weightless or zero-angle
    assert report.angular_error_deg == pytest.approx(90.0 / (1.0 + np.sqrt(0.5)))


def test_zero_displacements_do_not_produce_angles():
    pos = [[0.0, 0.0], [1.0, 0.0]]
    ref = MarkerField(pos, [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    cand = MarkerField(pos, [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    report = marker_errors(ref, cand)
    assert report.angular_error_deg == 0.0
    assert report.magnitude_l1_mm == pytest.approx(0.5)
    still = marker_errors(MarkerField(pos, np.zeros((2, 3))), MarkerField(pos, np.zeros((2, 3))))
    assert still.angular_error_deg == 0.0 and still.magnitude_l1_mm == 0.0


def test_marker_error_weighting_uses_reference_magnitudes():
    pos = [[0.0, 0.0], [1.0, 0.0]]
    # big reference motion at 0 deg error, tiny one at 90 deg error
    ref = MarkerField(pos, [[2.0, 0.0, 0.0], [0.1, 0.0, 0.0]])
    cand = MarkerField(pos, [[2.0, 0.0, 0.0], [0.0, 0.1, 0.0]])
    report = marker_errors(ref, cand)
    assert report.angular_error_deg == pytest.approx(90.0 * 0.1 / 2.1)


def test_marker_field_comparison_validation():
    a = MarkerField([[0.0, 0.0]], [[0.0, 0.0, -0.1]])
    b = MarkerField([[1.0, 0.0]], [[0.0, 0.0, -0.1]])
    with pytest.raises(ConfigError):
        marker_errors(a, b)
    empty = MarkerField(np.zeros((0, 2)), np.zeros((0, 3)))
    with pytest.raises(ConfigError):
        marker_errors(empty, empty)
    with pytest.raises(ConfigError):
        MarkerField([[0.0, 0.0]], [[0.0, 0.0, -0.1]] * 2)
