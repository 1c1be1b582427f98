"""Example-based shading: normal-binned intensity tables and the renderer.

The mapping from surface normal to RGB intensity is learned from presses of a
ball of known radius, where every contact pixel's normal is known in closed
form.  Normals are indexed by polar angle theta (0 = facing the camera) and
azimuth phi on a bins x bins grid.  Two table flavours exist: a lookup table
(per-bin mean intensity) and a polynomial table that additionally models the
smooth variation of intensity across the image with a quadratic in normalized
pixel coordinates, per bin and channel:

    I(x, y) = a x^2 + b y^2 + c x y + d x + e y + f
"""

import numpy as np
from dataclasses import dataclass, field

from .errors import CalibrationError, ConfigError, InputRangeError

DEFAULT_BINS = 125
DEFAULT_THETA_MAX = np.deg2rad(70.0)
DEFAULT_MIN_SAMPLES = 15

_TWO_PI = 2.0 * np.pi

# fill-mask codes
FILL_INTERPOLATED = 0
FILL_CALIBRATED = 1
FILL_CONSTANT = 2  # enough samples but rank-deficient fit; constant fallback


@dataclass
class CalibrationRecord:
    """One ball press: the image plus the annotated contact circle.

    center_px is (cx, cy) in pixel coordinates (cx along columns, cy along
    rows), radius_px the contact circle radius in pixels, ball_radius_mm the
    radius of the pressed ball.
    """

    image: np.ndarray
    center_px: tuple
    radius_px: float
    ball_radius_mm: float

    def __post_init__(self):
        self.image = np.asarray(self.image)
        if self.image.ndim != 3 or self.image.shape[2] != 3 or self.image.dtype != np.uint8:
            raise ConfigError("record image must be (H, W, 3) uint8")
        if not (self.radius_px > 0):
            raise ConfigError("contact radius must be positive")
        if not (self.ball_radius_mm > 0):
            raise ConfigError("ball radius must be positive")


def _table_post_init(table, payload, payload_shape_tail):
    if table.bins < 2:
        raise ConfigError("bin count must be at least 2")
    if not (0 < table.theta_max <= np.pi / 2):
        raise ConfigError("theta_max must lie in (0, pi/2]")
    shape = (table.bins, table.bins) + payload_shape_tail
    if payload.shape != shape:
        raise ConfigError("table payload shape %s, expected %s" % (payload.shape, shape))
    if not np.all(np.isfinite(payload)):
        raise ConfigError("table payload contains non-finite values")
    if table.fill.shape != (table.bins, table.bins):
        raise ConfigError("fill mask shape does not match bin count")


@dataclass
class PolynomialTable:
    """Per-bin quadratic intensity model; coeffs[tb, pb, ch] = (a..f)."""

    coeffs: np.ndarray
    fill: np.ndarray
    bins: int = DEFAULT_BINS
    theta_max: float = DEFAULT_THETA_MAX
    _flat: np.ndarray = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs)
        self.fill = np.asarray(self.fill, dtype=np.uint8)
        _table_post_init(self, self.coeffs, (3, 6))
        if self.fill.max(initial=0) > 2:
            raise ConfigError("fill codes must be 0, 1, or 2")

    def _flat_coeffs(self):
        if self._flat is None:
            self._flat = np.ascontiguousarray(
                self.coeffs.reshape(-1, 3, 6), dtype=np.float32
            )
        return self._flat


@dataclass
class LookupTable:
    """Per-bin mean intensity; values[tb, pb] = (r, g, b)."""

    values: np.ndarray
    fill: np.ndarray
    bins: int = DEFAULT_BINS
    theta_max: float = DEFAULT_THETA_MAX
    _flat: np.ndarray = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        self.fill = np.asarray(self.fill, dtype=np.uint8)
        _table_post_init(self, self.values, (3,))
        if self.fill.max(initial=0) > 1:
            raise ConfigError("fill codes must be 0 or 1")

    def _flat_values(self):
        if self._flat is None:
            self._flat = np.ascontiguousarray(self.values.reshape(-1, 3), dtype=np.float32)
        return self._flat


def normal_to_bin(normal, bins=DEFAULT_BINS, theta_max=DEFAULT_THETA_MAX):
    """Map one unit normal to its (theta_bin, phi_bin) table cell.

    theta is clamped into the last bin beyond theta_max; normals pointing away
    from the camera (nz <= 0) are rejected.
    """
    normal = np.asarray(normal, dtype=np.float64)
    if normal.shape != (3,):
        raise ConfigError("normal must be a 3-vector")
    norm = np.linalg.norm(normal)
    if not norm > 0:
        raise InputRangeError("zero normal")
    normal = normal / norm
    if normal[2] <= 0:
        raise InputRangeError("normal must face the camera (nz > 0)")
    theta = np.arccos(min(normal[2], 1.0))
    phi = np.arctan2(normal[1], normal[0]) % _TWO_PI
    tb = min(int(theta * bins / theta_max), bins - 1)
    pb = min(int(phi * bins / _TWO_PI), bins - 1)
    return tb, pb


def _bin_maps(nx, ny, nz, bins, theta_max):
    """Vectorized bin indices for arrays of unit normal components."""
    theta = np.arccos(np.minimum(nz, 1.0))
    phi = np.arctan2(ny, nx) % _TWO_PI
    tb = np.minimum((theta * (bins / theta_max)).astype(np.int32), bins - 1)
    pb = np.minimum((phi * (bins / _TWO_PI)).astype(np.int32), bins - 1)
    return tb, pb


def _norm_coords(width, height):
    """Pixel coordinates normalized to [-1, 1] across the image."""
    xn = (np.arange(width, dtype=np.float32) - (width - 1) / 2.0) / ((width - 1) / 2.0)
    yn = (np.arange(height, dtype=np.float32) - (height - 1) / 2.0) / ((height - 1) / 2.0)
    return np.meshgrid(xn, yn)


def _collect_samples(records, config, bins, theta_max):
    """Pool (bin id, normalized x/y, RGB) samples from all ball presses."""
    if not records:
        raise CalibrationError("calibration needs at least one record")
    width, height = config.width_px, config.height_px
    all_id, all_x, all_y, all_v = [], [], [], []
    for rec in records:
        if rec.image.shape[:2] != (height, width):
            raise ConfigError(
                "record image is %sx%s, sensor is %dx%d"
                % (rec.image.shape[1], rec.image.shape[0], width, height)
            )
        cx, cy = float(rec.center_px[0]), float(rec.center_px[1])
        r_px = float(rec.radius_px)
        ball = float(rec.ball_radius_mm)
        if cx - r_px < -0.5 or cx + r_px > width - 0.5 or cy - r_px < -0.5 or cy + r_px > height - 0.5:
            raise ConfigError("contact circle extends beyond the image")
        if r_px * config.pixel_pitch_mm >= ball:
            raise CalibrationError(
                "contact radius %.3f mm not smaller than ball radius %.3f mm"
                % (r_px * config.pixel_pitch_mm, ball)
            )
        r0 = max(int(np.floor(cy - r_px)), 0)
        r1 = min(int(np.ceil(cy + r_px)), height - 1)
        c0 = max(int(np.floor(cx - r_px)), 0)
        c1 = min(int(np.ceil(cx + r_px)), width - 1)
        cols, rows = np.meshgrid(np.arange(c0, c1 + 1), np.arange(r0, r1 + 1))
        inside = (cols - cx) ** 2 + (rows - cy) ** 2 < r_px**2
        cols, rows = cols[inside], rows[inside]
        x_mm = (cols - cx) * config.pixel_pitch_mm
        y_mm = (rows - cy) * config.pixel_pitch_mm
        nz = np.sqrt(ball**2 - x_mm**2 - y_mm**2) / ball
        tb, pb = _bin_maps(-x_mm / ball, -y_mm / ball, nz, bins, theta_max)
        all_id.append(tb.astype(np.int64) * bins + pb)
        all_x.append((cols - (width - 1) / 2.0) / ((width - 1) / 2.0))
        all_y.append((rows - (height - 1) / 2.0) / ((height - 1) / 2.0))
        all_v.append(rec.image[rows, cols, :].astype(np.float64))
    return (
        np.concatenate(all_id),
        np.concatenate(all_x),
        np.concatenate(all_y),
        np.concatenate(all_v),
    )


def _inpaint_bins(values, fill):
    """Fill uncalibrated bins with the harmonic (neighbor-average) surface.

    Computes the stationary point of repeatedly replacing every unfilled cell
    by the mean of its grid neighbors (phi wraps around, theta does not),
    which a direct sparse solve reaches exactly instead of by sweeping.
    """
    from scipy import sparse
    from scipy.sparse.linalg import splu

    bins = fill.shape[0]
    unknown = fill == FILL_INTERPOLATED
    if not unknown.any():
        return values
    flat_vals = values.reshape(bins * bins, -1)
    idx = -np.ones(bins * bins, dtype=np.int64)
    un_flat = np.flatnonzero(unknown.ravel())
    idx[un_flat] = np.arange(len(un_flat))
    tb, pb = np.divmod(un_flat, bins)
    n = len(un_flat)
    deg = np.zeros(n)
    rhs = np.zeros((n, flat_vals.shape[1]))
    off_r, off_c = [], []
    for dt, dp in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nt = tb + dt
        valid = (nt >= 0) & (nt < bins)
        npb = (pb + dp) % bins
        nid = nt[valid] * bins + npb[valid]
        deg[valid] += 1
        nbr_unknown = idx[nid] >= 0
        sel = np.flatnonzero(valid)
        off_r.append(sel[nbr_unknown])
        off_c.append(idx[nid[nbr_unknown]])
        known_sel = sel[~nbr_unknown]
        rhs[known_sel] += flat_vals[nid[~nbr_unknown]]
    rows = np.concatenate([np.arange(n)] + off_r)
    cols = np.concatenate([np.arange(n)] + off_c)
    data = np.concatenate([deg, -np.ones(sum(len(r) for r in off_r))])
    lap = sparse.csc_matrix((data, (rows, cols)), shape=(n, n))
    solved = splu(lap).solve(rhs)
    out = flat_vals.copy()
    out[un_flat] = solved
    return out.reshape(values.shape)


def _check_table_args(bins, theta_max, min_samples):
    if bins < 2:
        raise ConfigError("bin count must be at least 2")
    if not (0 < theta_max <= np.pi / 2):
        raise ConfigError("theta_max must lie in (0, pi/2]")
    if min_samples < 1:
        raise ConfigError("min_samples must be positive")


def calibrate_polytable(
    records,
    config,
    bins=DEFAULT_BINS,
    theta_max=DEFAULT_THETA_MAX,
    min_samples=DEFAULT_MIN_SAMPLES,
):
    """Fit the per-bin quadratic intensity model from ball-press records.

    Bins that collect at least min_samples samples get a least-squares fit
    (falling back to the per-bin mean when the design matrix is rank
    deficient, e.g. all samples on one circle); the rest are interpolated
    from their calibrated neighbors.
    """
    _check_table_args(bins, theta_max, min_samples)
    bin_id, xn, yn, vals = _collect_samples(records, config, bins, theta_max)
    order = np.argsort(bin_id, kind="stable")
    bin_id, xn, yn, vals = bin_id[order], xn[order], yn[order], vals[order]
    uniq, starts, counts = np.unique(bin_id, return_index=True, return_counts=True)
    coeffs = np.zeros((bins * bins, 3, 6))
    fill = np.zeros(bins * bins, dtype=np.uint8)
    for u, s, c in zip(uniq, starts, counts):
        if c < min_samples:
            continue
        x, y, v = xn[s : s + c], yn[s : s + c], vals[s : s + c]
        design = np.stack([x * x, y * y, x * y, x, y, np.ones_like(x)], axis=1)
        sol, _, rank, _ = np.linalg.lstsq(design, v, rcond=None)
        if rank < 6:
            coeffs[u, :, 5] = v.mean(axis=0)
            fill[u] = FILL_CONSTANT
        else:
            coeffs[u] = sol.T
            fill[u] = FILL_CALIBRATED
    if not (fill > 0).any():
        raise CalibrationError("no normal bin collected %d samples" % min_samples)
    fill = fill.reshape(bins, bins)
    coeffs = _inpaint_bins(coeffs.reshape(bins, bins, 18), fill).reshape(bins, bins, 3, 6)
    return PolynomialTable(coeffs, fill, bins, theta_max)


def calibrate_lookup(
    records,
    config,
    bins=DEFAULT_BINS,
    theta_max=DEFAULT_THETA_MAX,
    min_samples=DEFAULT_MIN_SAMPLES,
):
    """Fit the per-bin mean-intensity table from ball-press records."""
    _check_table_args(bins, theta_max, min_samples)
    bin_id, _, _, vals = _collect_samples(records, config, bins, theta_max)
    order = np.argsort(bin_id, kind="stable")
    bin_id, vals = bin_id[order], vals[order]
    uniq, starts, counts = np.unique(bin_id, return_index=True, return_counts=True)
    values = np.zeros((bins * bins, 3))
    fill = np.zeros(bins * bins, dtype=np.uint8)
    for u, s, c in zip(uniq, starts, counts):
        if c < min_samples:
            continue
        values[u] = vals[s : s + c].mean(axis=0)
        fill[u] = FILL_CALIBRATED
    if not (fill > 0).any():
        raise CalibrationError("no normal bin collected %d samples" % min_samples)
    fill = fill.reshape(bins, bins)
    values = _inpaint_bins(values.reshape(bins, bins, 3), fill)
    return LookupTable(values, fill, bins, theta_max)


def render_optics(normals, table, background):
    """Shade a normal map into an RGB image using a calibrated table.

    Pixels with an exactly flat normal copy the background; everything else
    is looked up by bin (and, for polynomial tables, evaluated at the pixel's
    normalized coordinates).  Output is rounded and clipped to uint8.
    """
    if not isinstance(table, (PolynomialTable, LookupTable)):
        raise ConfigError("table must be a PolynomialTable or LookupTable")
    normals = np.asarray(normals)
    if normals.ndim != 3 or normals.shape[2] != 3:
        raise ConfigError("normal map must be (H, W, 3)")
    background = np.asarray(background)
    if background.shape != normals.shape or background.dtype != np.uint8:
        raise ConfigError("background must be uint8 with the normal map's shape")
    height, width = normals.shape[:2]
    nx = normals[:, :, 0].ravel()
    ny = normals[:, :, 1].ravel()
    nz = normals[:, :, 2].ravel()
    if np.any(nz <= 0):
        raise InputRangeError("normal map contains normals facing away from the camera")
    tb, pb = _bin_maps(nx, ny, nz, table.bins, table.theta_max)
    bin_id = tb.astype(np.int64) * table.bins + pb
    if isinstance(table, PolynomialTable):
        cf = table._flat_coeffs()[bin_id]
        xg, yg = _norm_coords(width, height)
        x = xg.ravel()[:, None]
        y = yg.ravel()[:, None]
        out = cf[:, :, 0] * (x * x)
        out += cf[:, :, 1] * (y * y)
        out += cf[:, :, 2] * (x * y)
        out += cf[:, :, 3] * x
        out += cf[:, :, 4] * y
        out += cf[:, :, 5]
    else:
        out = table._flat_values()[bin_id].copy()
    flat = (nx == 0) & (ny == 0)
    out[flat] = background.reshape(-1, 3)[flat]
    np.clip(out, 0.0, 255.0, out=out)
    return np.rint(out).astype(np.uint8).reshape(height, width, 3)
