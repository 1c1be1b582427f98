"""Contact geometry: pressing meshes into the gel and deriving height maps.

The sensor frame is metric.  x runs along image columns (rightward), y along
image rows (downward), z away from the camera, with the origin at the image
center: pixel (r, c) sits at x = (c - (W-1)/2) * pitch, y = (r - (H-1)/2) *
pitch.  A height map stores per pixel the z of the visible surface in mm, so
pressed regions have smaller values than the undisturbed gel around them.
"""

import numpy as np
from dataclasses import dataclass, field

from .errors import ConfigError, InputRangeError

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via the fallback test
    _HAVE_NUMBA = False

# blur sizes with sigma = size / 6, applied large to small
DEFAULT_PYRAMID = ((51, 51 / 6.0), (31, 31 / 6.0), (11, 11 / 6.0), (5, 5 / 6.0))


@dataclass
class SensorConfig:
    """Static description of one sensor: image size, scale, and gel shape.

    gel_map holds the undisturbed gel surface height per pixel (mm, z away
    from the camera); None means a flat gel at z = 0.  max_indent_mm bounds
    the press depths the gel can take without damage.
    """

    width_px: int
    height_px: int
    pixel_pitch_mm: float
    max_indent_mm: float = 1.0
    gel_map: np.ndarray = None

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise ConfigError("image dimensions must be positive")
        if not (self.pixel_pitch_mm > 0):
            raise ConfigError("pixel pitch must be positive")
        if not (self.max_indent_mm > 0):
            raise ConfigError("max indentation must be positive")
        if self.gel_map is None:
            self.gel_map = np.zeros((self.height_px, self.width_px))
        else:
            self.gel_map = np.asarray(self.gel_map, dtype=np.float64)
            if self.gel_map.shape != (self.height_px, self.width_px):
                raise ConfigError(
                    "gel map shape %s does not match %dx%d image"
                    % (self.gel_map.shape, self.height_px, self.width_px)
                )
            if not np.all(np.isfinite(self.gel_map)):
                raise ConfigError("gel map contains non-finite values")

    def frame_mm(self):
        """Return (xx, yy) grids with the metric coordinates of every pixel."""
        x = (np.arange(self.width_px) - (self.width_px - 1) / 2.0) * self.pixel_pitch_mm
        y = (np.arange(self.height_px) - (self.height_px - 1) / 2.0) * self.pixel_pitch_mm
        return np.meshgrid(x, y)


@dataclass
class TriangleMesh:
    """Indexed triangle soup: vertices (n, 3) float64 mm, faces (m, 3) int."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ConfigError("vertices must have shape (n, 3)")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ConfigError("faces must have shape (m, 3)")
        if not np.all(np.isfinite(self.vertices)):
            raise ConfigError("mesh vertices contain non-finite values")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ConfigError("face indices out of range")


@dataclass
class Pose:
    """Rigid placement of a mesh in the sensor frame (x_world = R x + t)."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ConfigError("pose needs a 3x3 rotation and a 3-vector translation")
        if not np.all(np.isfinite(self.rotation)) or not np.all(np.isfinite(self.translation)):
            raise ConfigError("pose contains non-finite values")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6 or np.linalg.det(self.rotation) < 0:
            raise ConfigError("rotation must be orthonormal with determinant +1")

    @classmethod
    def from_axis_angle(cls, axis, angle_rad, translation=(0.0, 0.0, 0.0)):
        """Build a pose from a rotation axis, an angle in radians, and a shift."""
        from scipy.spatial.transform import Rotation

        axis = np.asarray(axis, dtype=np.float64)
        norm = np.linalg.norm(axis)
        if not norm > 0:
            raise ConfigError("rotation axis must be non-zero")
        rot = Rotation.from_rotvec(axis / norm * float(angle_rad)).as_matrix()
        return cls(rot, np.asarray(translation, dtype=np.float64))

    def apply(self, points):
        return points @ self.rotation.T + self.translation


if _HAVE_NUMBA:

    @njit(cache=True)
    def _raster_tris_jit(vx, vy, vz, faces, zbuf):
        height, width = zbuf.shape
        for t in range(faces.shape[0]):
            i0, i1, i2 = faces[t, 0], faces[t, 1], faces[t, 2]
            x0, x1, x2 = vx[i0], vx[i1], vx[i2]
            y0, y1, y2 = vy[i0], vy[i1], vy[i2]
            xmn = min(x0, min(x1, x2))
            xmx = max(x0, max(x1, x2))
            ymn = min(y0, min(y1, y2))
            ymx = max(y0, max(y1, y2))
            ca = max(int(np.ceil(xmn)), 0)
            cb = min(int(np.floor(xmx)), width - 1)
            ra = max(int(np.ceil(ymn)), 0)
            rb = min(int(np.floor(ymx)), height - 1)
            if ca > cb or ra > rb:
                continue
            den = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
            if den == 0.0:
                continue
            for r in range(ra, rb + 1):
                for c in range(ca, cb + 1):
                    w0 = ((y1 - y2) * (c - x2) + (x2 - x1) * (r - y2)) / den
                    if w0 < 0.0:
                        continue
                    w1 = ((y2 - y0) * (c - x2) + (x0 - x2) * (r - y2)) / den
                    if w1 < 0.0:
                        continue
                    w2 = 1.0 - w0 - w1
                    if w2 < 0.0:
                        continue
                    z = w0 * vz[i0] + w1 * vz[i1] + w2 * vz[i2]
                    if z < zbuf[r, c]:
                        zbuf[r, c] = z


def _raster_tris_numpy(vx, vy, vz, faces, zbuf):
    height, width = zbuf.shape
    for i0, i1, i2 in faces:
        x0, x1, x2 = vx[i0], vx[i1], vx[i2]
        y0, y1, y2 = vy[i0], vy[i1], vy[i2]
        ca = max(int(np.ceil(min(x0, x1, x2))), 0)
        cb = min(int(np.floor(max(x0, x1, x2))), width - 1)
        ra = max(int(np.ceil(min(y0, y1, y2))), 0)
        rb = min(int(np.floor(max(y0, y1, y2))), height - 1)
        if ca > cb or ra > rb:
            continue
        den = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
        if den == 0.0:
            continue
        cc, rr = np.meshgrid(np.arange(ca, cb + 1), np.arange(ra, rb + 1))
        w0 = ((y1 - y2) * (cc - x2) + (x2 - x1) * (rr - y2)) / den
        w1 = ((y2 - y0) * (cc - x2) + (x0 - x2) * (rr - y2)) / den
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        z = w0 * vz[i0] + w1 * vz[i1] + w2 * vz[i2]
        patch = zbuf[ra : rb + 1, ca : cb + 1]
        np.minimum(patch, np.where(inside, z, np.inf), out=patch)


def _rasterize(vx, vy, vz, faces, height, width):
    zbuf = np.full((height, width), np.inf)
    if _HAVE_NUMBA:
        _raster_tris_jit(vx, vy, vz, faces, zbuf)
    else:
        _raster_tris_numpy(vx, vy, vz, faces, zbuf)
    return zbuf


def rasterize_press(mesh, pose, press_depth_mm, config):
    """Press a posed mesh into the gel and return (height map, contact mask).

    The pose fixes the lateral placement and orientation only; vertically the
    mesh is first brought down to grazing contact with the gel and then
    lowered by press_depth_mm, so depth is measured from first touch.  The
    surface is rendered orthographically with a nearest-z buffer over pixel
    centers.  Pixels the mesh does not reach keep the gel height and stay
    outside the mask.
    """
    if not (0.0 <= press_depth_mm <= config.max_indent_mm):
        raise InputRangeError(
            "press depth %.4f mm outside [0, %.4f]" % (press_depth_mm, config.max_indent_mm)
        )
    if mesh.faces.shape[0] == 0:
        raise ConfigError("mesh has no triangles")
    gel = config.gel_map
    height, width = gel.shape
    world = pose.apply(mesh.vertices)
    pitch = config.pixel_pitch_mm
    vx = np.ascontiguousarray(world[:, 0] / pitch + (width - 1) / 2.0)
    vy = np.ascontiguousarray(world[:, 1] / pitch + (height - 1) / 2.0)
    vz = np.ascontiguousarray(world[:, 2])
    zbuf = _rasterize(vx, vy, vz, mesh.faces, height, width)
    covered = np.isfinite(zbuf)
    if not covered.any():
        return gel.copy(), np.zeros_like(gel, dtype=bool)
    touch_shift = np.min(zbuf[covered] - gel[covered])
    obj = zbuf - (touch_shift + press_depth_mm)
    mask = obj < gel
    return np.where(mask, obj, gel), mask


def _normalize_schedule(schedule):
    levels = []
    for entry in schedule:
        if np.isscalar(entry):
            size, sigma = int(entry), int(entry) / 6.0
        else:
            size, sigma = int(entry[0]), float(entry[1])
        if size < 1 or size % 2 == 0:
            raise ConfigError("blur sizes must be odd and positive, got %d" % size)
        if not (sigma > 0):
            raise ConfigError("blur sigma must be positive")
        levels.append((size, sigma))
    if not levels:
        raise ConfigError("empty smoothing schedule")
    sizes = [s for s, _ in levels]
    if any(b >= a for a, b in zip(sizes, sizes[1:])):
        raise ConfigError("blur sizes must be strictly decreasing: %s" % sizes)
    return levels


def smooth_pyramid(height_map, contact_mask, schedule=None):
    """Soften the height map outside the contact while pinning contact pixels.

    Runs a cascade of Gaussian blurs from the largest kernel to the smallest
    (default sizes 51/31/11/5 with sigma = size/6) and after every level
    copies the original values back into the contact mask, so the contact
    itself is bit-identical to the input while the surround relaxes into a
    smooth gel-like bulge.
    """
    import cv2

    levels = _normalize_schedule(DEFAULT_PYRAMID if schedule is None else schedule)
    height_map = np.asarray(height_map)
    if height_map.dtype not in (np.float32, np.float64):
        height_map = height_map.astype(np.float64)
    contact_mask = np.asarray(contact_mask, dtype=bool)
    if contact_mask.shape != height_map.shape:
        raise ConfigError("contact mask shape does not match height map")
    out = height_map.copy()
    for size, sigma in levels:
        out = cv2.GaussianBlur(out, (size, size), sigma, borderType=cv2.BORDER_REPLICATE)
        out[contact_mask] = height_map[contact_mask]
    return out


def compute_normals(height_map, pixel_pitch_mm):
    """Per-pixel unit surface normals n = normalize(-dh/dx, -dh/dy, 1).

    Gradients are central differences in the interior and one-sided at the
    borders, with the pixel pitch converting per-pixel steps to mm.  The z
    component is positive everywhere by construction.
    """
    height_map = np.asarray(height_map, dtype=np.float64)
    if height_map.ndim != 2:
        raise ConfigError("height map must be 2-D")
    if not (pixel_pitch_mm > 0):
        raise ConfigError("pixel pitch must be positive")
    gy, gx = np.gradient(height_map, pixel_pitch_mm)
    normals = np.stack([-gx, -gy, np.ones_like(height_map)], axis=-1)
    normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
    return normals


def dome_height_map(width_px, height_px, pixel_pitch_mm, curvature_radius_mm):
    """Spherical-cap gel surface: apex at the image center, zero at the corners.

    Models curved gel pads; pass the result as SensorConfig.gel_map.  The
    curvature radius must exceed the half-diagonal of the imaged area.
    """
    x = (np.arange(width_px) - (width_px - 1) / 2.0) * pixel_pitch_mm
    y = (np.arange(height_px) - (height_px - 1) / 2.0) * pixel_pitch_mm
    xx, yy = np.meshgrid(x, y)
    d2 = xx * xx + yy * yy
    if curvature_radius_mm**2 <= d2.max():
        raise ConfigError("curvature radius too small for the imaged area")
    cap = np.sqrt(curvature_radius_mm**2 - d2)
    return cap - cap.min()
