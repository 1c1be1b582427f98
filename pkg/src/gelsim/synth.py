"""Synthetic ground truth: planted tables, ball/pin datasets, and meshes.

Everything here is deterministic given its arguments, so generated datasets
can serve as oracles: calibrate against them and compare with the planted
truth.  The same generators feed the test suite, the demo scripts, and the
benchmark command.
"""

import json
import os

import numpy as np

from .errors import ConfigError
from .geometry import TriangleMesh
from .optics import (
    DEFAULT_BINS,
    DEFAULT_THETA_MAX,
    FILL_CALIBRATED,
    CalibrationRecord,
    PolynomialTable,
    render_optics,
)
from .shadow import PinPressRecord
from .elastic import DEFAULT_PRESCRIPTIONS, TensorKernel, UnitLoadField

SHADOW_DIRECTIONS = (
    (1.0, 0.0),
    (-0.5, np.sqrt(3.0) / 2.0),
    (-0.5, -np.sqrt(3.0) / 2.0),
)


def make_sphere_mesh(radius_mm, n_theta=48, n_phi=96, center=(0.0, 0.0, 0.0)):
    """Closed UV sphere; pole quads degenerate to zero-area triangles."""
    if not (radius_mm > 0):
        raise ConfigError("sphere radius must be positive")
    th = np.linspace(0.0, np.pi, n_theta + 1)
    ph = np.linspace(0.0, 2.0 * np.pi, n_phi, endpoint=False)
    tt, pp = np.meshgrid(th, ph, indexing="ij")
    verts = np.stack(
        [
            radius_mm * np.sin(tt) * np.cos(pp),
            radius_mm * np.sin(tt) * np.sin(pp),
            radius_mm * np.cos(tt),
        ],
        axis=-1,
    ).reshape(-1, 3) + np.asarray(center, dtype=np.float64)
    faces = []
    for i in range(n_theta):
        for j in range(n_phi):
            a = i * n_phi + j
            b = i * n_phi + (j + 1) % n_phi
            c = (i + 1) * n_phi + j
            d = (i + 1) * n_phi + (j + 1) % n_phi
            faces.append((a, b, c))
            faces.append((b, d, c))
    return TriangleMesh(verts, np.array(faces, dtype=np.int64))


def gradient_background(config, base=(150, 130, 110), slope=12.0):
    """Smooth uint8 background with a gentle per-channel diagonal ramp."""
    xn = np.linspace(-1.0, 1.0, config.width_px)
    yn = np.linspace(-1.0, 1.0, config.height_px)
    xx, yy = np.meshgrid(xn, yn)
    img = np.empty((config.height_px, config.width_px, 3))
    for ch in range(3):
        img[:, :, ch] = base[ch] + slope * (0.5 * xx + 0.3 * yy * (-1) ** ch)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def planted_polytable(bins=DEFAULT_BINS, theta_max=DEFAULT_THETA_MAX, plateau=0.2):
    """Smooth location-dependent intensity model with known coefficients.

    The linear terms make intensity drift by over ten levels across the image
    so the polynomial model has a real advantage over a plain lookup.  Below
    the plateau (a fraction of theta_max) every coefficient is constant in
    the bin indices: near-flat normals are so rare in press data that their
    bins are interpolated, and a locally constant truth is the one surface
    neighbor-average interpolation reconstructs exactly.  All achievable
    values stay inside roughly [30, 230], clear of the uint8 clamp.
    """
    tt = (np.arange(bins) + 0.5) / bins
    pp = 2.0 * np.pi * (np.arange(bins) + 0.5) / bins
    tg, pg = np.meshgrid(tt, pp, indexing="ij")
    ramp = np.clip((tg - plateau) / (1.0 - plateau), 0.0, 1.0)
    coeffs = np.zeros((bins, bins, 3, 6))
    base = (150.0, 130.0, 110.0)
    d0 = (6.0, -4.0, 5.0)
    e0 = (-5.0, 6.0, 4.0)
    for ch in range(3):
        phase = ch * 2.0 * np.pi / 3.0
        coeffs[:, :, ch, 0] = 2.0 + 4.0 * np.sin(pg) * ramp
        coeffs[:, :, ch, 1] = -2.0 + 4.0 * np.cos(2.0 * pg) * ramp
        coeffs[:, :, ch, 2] = 1.5 + 3.0 * np.sin(pg + 1.0) * ramp
        coeffs[:, :, ch, 3] = d0[ch] + 8.0 * ramp * np.cos(pg - 0.7 * ch)
        coeffs[:, :, ch, 4] = e0[ch] + 8.0 * ramp * np.sin(pg + 0.3 + ch)
        coeffs[:, :, ch, 5] = base[ch] + 35.0 * ramp * np.cos(pg - phase)
    fill = np.full((bins, bins), FILL_CALIBRATED, dtype=np.uint8)
    return PolynomialTable(coeffs, fill, bins, theta_max)


def sphere_normal_map(config, center_px, ball_radius_mm, depth_mm):
    """Exact normal map of a ball pressed depth_mm into flat gel."""
    contact_mm = np.sqrt(max(2.0 * ball_radius_mm * depth_mm - depth_mm**2, 0.0))
    r_px = contact_mm / config.pixel_pitch_mm
    cx, cy = center_px
    cols, rows = np.meshgrid(np.arange(config.width_px), np.arange(config.height_px))
    x_mm = (cols - cx) * config.pixel_pitch_mm
    y_mm = (rows - cy) * config.pixel_pitch_mm
    inside = (cols - cx) ** 2 + (rows - cy) ** 2 < r_px**2
    normals = np.zeros((config.height_px, config.width_px, 3))
    normals[:, :, 2] = 1.0
    nz = np.sqrt(np.maximum(ball_radius_mm**2 - x_mm**2 - y_mm**2, 0.0)) / ball_radius_mm
    normals[inside, 0] = (-x_mm / ball_radius_mm)[inside]
    normals[inside, 1] = (-y_mm / ball_radius_mm)[inside]
    normals[inside, 2] = nz[inside]
    return normals, r_px


def sphere_press_record(table, config, background, center_px, ball_radius_mm, depth_mm):
    """Render one synthetic ball press through a known table."""
    normals, r_px = sphere_normal_map(config, center_px, ball_radius_mm, depth_mm)
    image = render_optics(normals, table, background)
    return CalibrationRecord(image, center_px, r_px, ball_radius_mm)


def make_optics_dataset(
    table,
    config,
    background,
    presses=((40, 6.0, 4.05), (10, 30.0, 0.138)),
    seed=7,
):
    """Synthetic ball-press calibration set scattered over the image.

    Each press group is ``(count, ball_radius_mm, depth_mm)``.  The sample
    count a press feeds into a tilt bin grows with the square of the ball
    radius, so the defaults combine two ball sizes: deep presses of a
    medium ball whose contact rim tilts past the steepest bin (covering the
    whole tilt range, with the rim clamped into the last bin by every
    record), and shallow presses of a large ball whose contact is almost
    flat (flooding the near-vertical bins that small contacts barely
    touch).  Together every bin that any record pixel lands in collects
    enough samples to be fitted rather than interpolated.
    """
    rng = np.random.default_rng(seed)
    records = []
    for count, ball_radius_mm, depth_mm in presses:
        contact_px = (
            np.sqrt(2.0 * ball_radius_mm * depth_mm - depth_mm**2)
            / config.pixel_pitch_mm
        )
        margin = contact_px + 3.0
        for _ in range(count):
            cx = rng.uniform(margin, config.width_px - 1 - margin)
            cy = rng.uniform(margin, config.height_px - 1 - margin)
            records.append(
                sphere_press_record(
                    table, config, background, (cx, cy), ball_radius_mm, depth_mm
                )
            )
    return records


def write_optics_dataset(directory, records, background, ball_radius_mm):
    """Write a ball-press dataset as PNGs plus records.json."""
    from .io import save_png

    os.makedirs(directory, exist_ok=True)
    save_png(os.path.join(directory, "background.png"), background)
    entries = []
    for i, rec in enumerate(records):
        name = "press_%03d.png" % i
        save_png(os.path.join(directory, name), rec.image)
        entries.append(
            {
                "image": name,
                "center_px": [float(rec.center_px[0]), float(rec.center_px[1])],
                "radius_px": float(rec.radius_px),
                "ball_radius_mm": float(rec.ball_radius_mm),
            }
        )
    meta = {
        "ball_radius_mm": float(ball_radius_mm),
        "background": "background.png",
        "records": entries,
    }
    with open(os.path.join(directory, "records.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def pin_press_image(
    config,
    background,
    center_px,
    depth_mm,
    pin_diameter_mm=1.0,
    attenuation=None,
    length_px_per_mm=60.0,
    width_px=5.0,
    gap_px=3.0,
):
    """Planted pin press: dark contact disk plus one wedge shadow per light.

    Each light g darkens only channel g along SHADOW_DIRECTIONS[g], with a
    constant attenuation ratio and a length proportional to depth.
    """
    if attenuation is None:
        attenuation = (0.55, 0.6, 0.65)
    cx, cy = center_px
    cols, rows = np.meshgrid(np.arange(config.width_px), np.arange(config.height_px))
    vx = cols - cx
    vy = rows - cy
    pin_r = pin_diameter_mm / 2.0 / config.pixel_pitch_mm
    img = background.astype(np.float64).copy()
    contact = vx**2 + vy**2 <= pin_r**2
    img[contact] = 40.0
    start = pin_r + gap_px
    length = length_px_per_mm * depth_mm
    for g, (dx, dy) in enumerate(SHADOW_DIRECTIONS):
        along = vx * dx + vy * dy
        across = np.abs(-vx * dy + vy * dx)
        wedge = (along >= start) & (along <= start + length) & (across <= width_px / 2.0)
        img[:, :, g] = np.where(wedge, img[:, :, g] * attenuation[g], img[:, :, g])
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def make_shadow_records(config, background, depths, pin_diameter_mm=1.0, center_px=None):
    """Pin presses at several depths for shadow calibration."""
    if center_px is None:
        center_px = ((config.width_px - 1) / 2.0, (config.height_px - 1) / 2.0)
    records = []
    for depth in depths:
        image = pin_press_image(config, background, center_px, depth, pin_diameter_mm)
        records.append(PinPressRecord(image, background, center_px, pin_diameter_mm, depth))
    return records


def write_shadow_dataset(directory, records, background, pin_diameter_mm):
    """Write a pin-press dataset as PNGs plus records.json."""
    from .io import save_png

    os.makedirs(directory, exist_ok=True)
    save_png(os.path.join(directory, "background.png"), background)
    entries = []
    for i, rec in enumerate(records):
        name = "pin_%03d.png" % i
        save_png(os.path.join(directory, name), rec.image)
        entries.append(
            {
                "image": name,
                "center_px": [float(rec.center_px[0]), float(rec.center_px[1])],
                "depth_mm": float(rec.depth_mm),
            }
        )
    meta = {
        "pin_diameter_mm": float(pin_diameter_mm),
        "background": "background.png",
        "records": entries,
    }
    with open(os.path.join(directory, "records.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def planted_kernel(radius=10, spacing_mm=0.12):
    """Smooth decaying tensor kernel with identity self-response."""
    side = 2 * radius + 1
    dr, dc = np.meshgrid(
        np.arange(side) - radius, np.arange(side) - radius, indexing="ij"
    )
    rho = np.hypot(dr, dc)
    g = np.exp(-rho / (radius / 2.5))
    xn = dc / radius
    yn = dr / radius
    t = np.zeros((side, side, 3, 3))
    t[:, :, 0, 0] = g * (1.0 + 0.1 * xn * xn)
    t[:, :, 1, 1] = g * (1.0 + 0.1 * yn * yn)
    t[:, :, 2, 2] = g * (1.0 + 0.05 * (xn * xn + yn * yn))
    t[:, :, 0, 1] = 0.15 * g * xn * yn
    t[:, :, 1, 0] = 0.15 * g * xn * yn
    t[:, :, 0, 2] = -0.25 * g * xn
    t[:, :, 2, 0] = 0.2 * g * xn
    t[:, :, 1, 2] = -0.25 * g * yn
    t[:, :, 2, 1] = 0.2 * g * yn
    return TensorKernel(t, radius, spacing_mm)


def fields_from_kernel(kernel, prescriptions=DEFAULT_PRESCRIPTIONS, extent=None):
    """Exact unit-load fields a given kernel would produce (zero past radius)."""
    extent = kernel.radius if extent is None else int(extent)
    if extent < kernel.radius:
        raise ConfigError("field extent must cover the kernel radius")
    side = 2 * extent + 1
    fields = []
    for presc in np.asarray(prescriptions, dtype=np.float64):
        arr = np.zeros((side, side, 3))
        block = np.einsum("rcab,b->rca", kernel.tensors, presc)
        lo, hi = extent - kernel.radius, extent + kernel.radius + 1
        arr[lo:hi, lo:hi] = block
        fields.append(UnitLoadField(presc, arr, kernel.spacing_mm, (extent, extent)))
    return fields
