"""Marker motion: tensor displacement kernels on a coarse node grid.

The gel is treated as a linear elastic half-space sampled on a node grid (a
pixel grid subsampled by a fixed step).  A shift-invariant kernel T maps a
virtual unit displacement at one node to the displacement it induces at every
node within a truncation radius, as a 3x3 tensor per offset.  Simulation runs
in three stages: contact nodes get their raw prescribed displacement, a
per-axis solve amends it so that the final superposed field reproduces the
prescription at the contact ("amendment"), and the amended loads are then
superposed over the whole grid with the full tensors.

Kernels come either from three analytic half-space unit-load cases or from
any externally measured trio of unit-load fields.
"""

import numpy as np
from dataclasses import dataclass

from .errors import CalibrationError, ConfigError, InputRangeError, NumericalError

DEFAULT_RADIUS = 30  # kernel truncation radius in nodes
DEFAULT_NODE_STEP = 4  # node grid subsampling in pixels
DEFAULT_DENSE_LIMIT = 4000  # largest contact solved with a direct factorization
DEFAULT_COND_LIMIT = 1e12
DEFAULT_RIDGE_SCALE = 1e-8
DEFAULT_RESIDUAL = 1e-9
DEFAULT_PRESCRIPTIONS = (
    (0.0, 0.0, -0.1),
    (0.1, 0.0, -0.1),
    (0.0, 0.1, -0.1),
)
_PATCH_SAMPLES = 64  # midpoint grid used to average the singular self term


@dataclass
class UnitLoadField:
    """Displacement response (n, n, 3) of one unit-load case on the node grid.

    prescribed is the displacement imposed at the loaded node itself;
    load_index its (row, col) position in the field array.
    """

    prescribed: np.ndarray
    field: np.ndarray
    spacing_mm: float
    load_index: tuple

    def __post_init__(self):
        self.prescribed = np.asarray(self.prescribed, dtype=np.float64)
        self.field = np.asarray(self.field, dtype=np.float64)
        if self.prescribed.shape != (3,):
            raise ConfigError("prescribed displacement must be a 3-vector")
        if self.field.ndim != 3 or self.field.shape[2] != 3:
            raise ConfigError("unit-load field must be (rows, cols, 3)")
        if not np.all(np.isfinite(self.field)):
            raise ConfigError("unit-load field contains non-finite values")
        if not (self.spacing_mm > 0):
            raise ConfigError("node spacing must be positive")
        r, c = self.load_index
        if not (0 <= r < self.field.shape[0] and 0 <= c < self.field.shape[1]):
            raise ConfigError("load index outside the field")
        self.load_index = (int(r), int(c))


@dataclass
class TensorKernel:
    """Shift-invariant response tensors T[dr+R, dc+R] for offsets within R."""

    tensors: np.ndarray
    radius: int
    spacing_mm: float

    def __post_init__(self):
        self.tensors = np.asarray(self.tensors, dtype=np.float64)
        side = 2 * self.radius + 1
        if self.tensors.shape != (side, side, 3, 3):
            raise ConfigError(
                "kernel shape %s does not match radius %d" % (self.tensors.shape, self.radius)
            )
        if not np.all(np.isfinite(self.tensors)):
            raise ConfigError("kernel contains non-finite values")
        if not (self.spacing_mm > 0):
            raise ConfigError("node spacing must be positive")
        center = self.tensors[self.radius, self.radius]
        if np.any(np.diag(center) <= 0):
            raise ConfigError("self-response diagonal must be positive")

    def center(self):
        return self.tensors[self.radius, self.radius]


@dataclass
class ActiveSet:
    """Contact nodes (m, 2) int (row, col) with per-node displacements (m, 3)."""

    nodes: np.ndarray
    displacements: np.ndarray

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.int64).reshape(-1, 2)
        self.displacements = np.asarray(self.displacements, dtype=np.float64).reshape(-1, 3)
        if len(self.nodes) != len(self.displacements):
            raise ConfigError("nodes and displacements must have equal length")
        if len(self.nodes) and len(np.unique(self.nodes, axis=0)) != len(self.nodes):
            raise ConfigError("active nodes must be distinct")
        if not np.all(np.isfinite(self.displacements)):
            raise ConfigError("displacements contain non-finite values")


@dataclass
class NodeGrid:
    """Node-grid geometry: pixel step, metric spacing, and mm of node (0, 0)."""

    rows: int
    cols: int
    step_px: int
    spacing_mm: float
    origin_mm: tuple

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0 or self.step_px <= 0:
            raise ConfigError("node grid dimensions must be positive")


@dataclass
class DisplacementField:
    """Dense displacement field (rows, cols, 3) over the node grid."""

    u: np.ndarray
    spacing_mm: float
    origin_mm: tuple

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        if self.u.ndim != 3 or self.u.shape[2] != 3:
            raise ConfigError("displacement field must be (rows, cols, 3)")


@dataclass
class MarkerField:
    """Marker positions (n, 2) in mm and their displacements (n, 3) in mm."""

    positions_mm: np.ndarray
    displacements_mm: np.ndarray

    def __post_init__(self):
        self.positions_mm = np.asarray(self.positions_mm, dtype=np.float64).reshape(-1, 2)
        self.displacements_mm = np.asarray(self.displacements_mm, dtype=np.float64).reshape(-1, 3)
        if len(self.positions_mm) != len(self.displacements_mm):
            raise ConfigError("positions and displacements must have equal length")


def _check_elastic_params(young_mpa, poisson):
    if not (young_mpa > 0):
        raise InputRangeError("Young's modulus must be positive")
    if not (0.0 < poisson <= 0.5):
        raise InputRangeError("Poisson's ratio must lie in (0, 0.5]")


def _surface_response(x, y, force, young, poisson):
    """Point-force surface displacement of the half-space (material at z <= 0).

    force = (qx, qy, n) with n the magnitude pressing into the surface and
    qx, qy tangential components.  Valid at r > 0.
    """
    qx, qy, press = force
    shear_mod = young / (2.0 * (1.0 + poisson))
    r2 = x * x + y * y
    r = np.sqrt(r2)
    r3 = r2 * r
    c_norm = (1.0 - 2.0 * poisson) * (1.0 + poisson) / (2.0 * np.pi * young)
    ux = -press * c_norm * x / r2
    uy = -press * c_norm * y / r2
    uz = -press * (1.0 - poisson**2) / (np.pi * young * r)
    c_tan = 1.0 / (4.0 * np.pi * shear_mod)
    ux += qx * c_tan * (2.0 * (1.0 - poisson) / r + 2.0 * poisson * x * x / r3)
    uy += qx * c_tan * 2.0 * poisson * x * y / r3
    uz += -qx * c_tan * (1.0 - 2.0 * poisson) * x / r2
    uy += qy * c_tan * (2.0 * (1.0 - poisson) / r + 2.0 * poisson * y * y / r3)
    ux += qy * c_tan * 2.0 * poisson * x * y / r3
    uz += -qy * c_tan * (1.0 - 2.0 * poisson) * y / r2
    return ux, uy, uz


def _self_coefficients(young, poisson, spacing_mm):
    """Patch-averaged self displacement per unit force (normal and tangential).

    Averages the singular point solution over one node cell with a midpoint
    grid; the off-axis terms vanish by symmetry.
    """
    t = (np.arange(_PATCH_SAMPLES) + 0.5) / _PATCH_SAMPLES - 0.5
    xx, yy = np.meshgrid(t * spacing_mm, t * spacing_mm)
    r = np.hypot(xx, yy)
    mean_inv_r = np.mean(1.0 / r)
    shear_mod = young / (2.0 * (1.0 + poisson))
    a_norm = (1.0 - poisson**2) / (np.pi * young) * mean_inv_r
    a_tan = (
        1.0
        / (4.0 * np.pi * shear_mod)
        * np.mean(2.0 * (1.0 - poisson) / r + 2.0 * poisson * xx * xx / r**3)
    )
    return a_tan, a_norm


def generate_halfspace_fields(
    young_mpa,
    poisson,
    spacing_mm,
    extent_nodes,
    prescriptions=DEFAULT_PRESCRIPTIONS,
):
    """Analytic unit-load fields for kernel calibration.

    Produces one field per prescription on a (2*extent+1)^2 grid with the
    load at the center.  Point forces are scaled so the patch-averaged self
    displacement equals the prescription, and the self node is assigned the
    prescription exactly.
    """
    _check_elastic_params(young_mpa, poisson)
    if not (spacing_mm > 0):
        raise ConfigError("node spacing must be positive")
    if extent_nodes < 1:
        raise ConfigError("field extent must be at least one node")
    prescriptions = np.asarray(prescriptions, dtype=np.float64)
    if prescriptions.ndim != 2 or prescriptions.shape[1] != 3:
        raise ConfigError("prescriptions must be a list of 3-vectors")
    a_tan, a_norm = _self_coefficients(young_mpa, poisson, spacing_mm)
    side = 2 * extent_nodes + 1
    offs = (np.arange(side) - extent_nodes) * spacing_mm
    xx, yy = np.meshgrid(offs, offs)
    center = (extent_nodes, extent_nodes)
    fields = []
    for presc in prescriptions:
        force = (presc[0] / a_tan, presc[1] / a_tan, -presc[2] / a_norm)
        with np.errstate(divide="ignore", invalid="ignore"):
            ux, uy, uz = _surface_response(xx, yy, force, young_mpa, poisson)
        field = np.stack([ux, uy, uz], axis=-1)
        field[center] = presc
        fields.append(UnitLoadField(presc, field, spacing_mm, center))
    return fields


def calibrate_tensors(fields, radius=DEFAULT_RADIUS):
    """Recover the tensor kernel from three independent unit-load fields.

    Solves T(offset) @ P = R(offset) for every offset within the radius,
    where P stacks the prescriptions column-wise and R the measured responses.
    """
    if len(fields) != 3:
        raise ConfigError("kernel calibration needs exactly three unit-load fields")
    if radius < 1:
        raise ConfigError("kernel radius must be at least one node")
    spacing = fields[0].spacing_mm
    if any(abs(f.spacing_mm - spacing) > 1e-12 * spacing for f in fields):
        raise ConfigError("unit-load fields use different node spacings")
    presc = np.stack([f.prescribed for f in fields], axis=1)
    if np.linalg.cond(presc) > 1e8:
        raise CalibrationError("prescribed displacements are not linearly independent")
    windows = []
    for f in fields:
        lr, lc = f.load_index
        if (
            lr - radius < 0
            or lc - radius < 0
            or lr + radius >= f.field.shape[0]
            or lc + radius >= f.field.shape[1]
        ):
            raise ConfigError("field extent smaller than the kernel radius")
        windows.append(f.field[lr - radius : lr + radius + 1, lc - radius : lc + radius + 1])
    responses = np.stack(windows, axis=-1)  # (side, side, 3, case)
    tensors = responses @ np.linalg.inv(presc)
    return TensorKernel(tensors, radius, spacing)


def _axis_matrix(nodes, kern2d, radius):
    """Dense single-axis system M[i, j] = k(node_i - node_j), truncated."""
    m = len(nodes)
    mat = np.empty((m, m))
    rows, cols = nodes[:, 0], nodes[:, 1]
    span = 2 * radius
    chunk = max(1, int(4e6) // max(m, 1))
    for s in range(0, m, chunk):
        dr = rows[s : s + chunk, None] - rows[None, :] + radius
        dc = cols[s : s + chunk, None] - cols[None, :] + radius
        valid = (dr >= 0) & (dr <= span) & (dc >= 0) & (dc <= span)
        block = np.zeros(dr.shape)
        block[valid] = kern2d[dr[valid], dc[valid]]
        mat[s : s + chunk] = block
    return mat


def _solve_dense(nodes, kern2d, radius, rhs, cond_limit, ridge_scale):
    from scipy.linalg import lapack, lu_factor, lu_solve

    mat = _axis_matrix(nodes, kern2d, radius)
    anorm = np.abs(mat).sum(axis=0).max()
    lu, piv = lu_factor(mat)
    rcond = lapack.dgecon(lu, anorm, norm="1")[0]
    if not np.isfinite(rcond) or rcond < 1.0 / cond_limit:
        ridge = ridge_scale * np.trace(mat) / len(mat)
        mat[np.diag_indices_from(mat)] += ridge
        lu, piv = lu_factor(mat)
    return lu_solve((lu, piv), rhs), mat


def _solve_iterative(nodes, kern2d, radius, rhs, residual):
    from scipy.signal import fftconvolve
    from scipy.sparse.linalg import LinearOperator, cg, lgmres

    r0, c0 = nodes[:, 0].min(), nodes[:, 1].min()
    li = nodes[:, 0] - r0
    lj = nodes[:, 1] - c0
    side = 2 * radius + 1
    shape = (max(li.max() + 1, side), max(lj.max() + 1, side))
    img = np.zeros(shape)

    def matvec(x):
        img[...] = 0.0
        img[li, lj] = x
        return fftconvolve(img, kern2d, mode="same")[li, lj]

    op = LinearOperator((len(nodes), len(nodes)), matvec=matvec, dtype=np.float64)
    symmetric = np.allclose(kern2d, kern2d[::-1, ::-1], rtol=0, atol=1e-12)
    if symmetric:
        sol, info = cg(op, rhs, rtol=residual * 1e-2, atol=0.0, maxiter=2000)
        if info == 0:
            return sol, matvec
    sol, info = lgmres(op, rhs, rtol=residual * 1e-2, atol=0.0, maxiter=2000)
    if info != 0:
        raise NumericalError("iterative solver did not converge (info=%d)" % info)
    return sol, matvec


def amend_active(
    active,
    kernel,
    dense_limit=DEFAULT_DENSE_LIMIT,
    cond_limit=DEFAULT_COND_LIMIT,
    ridge_scale=DEFAULT_RIDGE_SCALE,
    residual=DEFAULT_RESIDUAL,
):
    """Solve the per-axis amendment systems and return adjusted displacements.

    For each axis a, M ut = u with M[i, j] the kernel's (a, a) component at
    the node offset; contacts up to dense_limit nodes use an LU factorization
    (with a scaled ridge fallback when the estimated condition number exceeds
    cond_limit), larger ones a convolution-based iterative solver.  The
    relative residual of every solve is verified against the target.
    """
    m = len(active.nodes)
    if m == 0:
        return np.zeros((0, 3))
    out = np.empty((m, 3))
    for axis in range(3):
        kern2d = np.ascontiguousarray(kernel.tensors[:, :, axis, axis])
        rhs = active.displacements[:, axis]
        if not rhs.any():
            out[:, axis] = 0.0
            continue
        if m <= dense_limit:
            sol, mat = _solve_dense(
                active.nodes, kern2d, kernel.radius, rhs, cond_limit, ridge_scale
            )
            res = np.linalg.norm(mat @ sol - rhs)
        else:
            sol, matvec = _solve_iterative(active.nodes, kern2d, kernel.radius, rhs, residual)
            res = np.linalg.norm(matvec(sol) - rhs)
        rel = res / np.linalg.norm(rhs)
        if not rel <= residual:
            raise NumericalError(
                "axis %d amendment residual %.3e exceeds %.1e" % (axis, rel, residual)
            )
        out[:, axis] = sol
    return out


def superpose(active, kernel, grid):
    """Spread active-node displacements over the whole grid with full tensors.

    The displacements in `active` are taken as already-amended virtual loads.
    Nodes farther than the kernel radius from every active node are exactly
    zero.
    """
    from scipy.ndimage import maximum_filter
    from scipy.signal import fftconvolve

    rows, cols = grid.rows, grid.cols
    out = np.zeros((rows, cols, 3))
    if len(active.nodes) == 0:
        return DisplacementField(out, grid.spacing_mm, grid.origin_mm)
    if (
        active.nodes[:, 0].min() < 0
        or active.nodes[:, 1].min() < 0
        or active.nodes[:, 0].max() >= rows
        or active.nodes[:, 1].max() >= cols
    ):
        raise InputRangeError("active nodes fall outside the node grid")
    load = np.zeros((rows, cols, 3))
    load[active.nodes[:, 0], active.nodes[:, 1]] = active.displacements
    for a in range(3):
        acc = np.zeros((rows, cols))
        for b in range(3):
            acc += fftconvolve(load[:, :, b], kernel.tensors[:, :, a, b], mode="same")
        out[:, :, a] = acc
    hit = np.zeros((rows, cols), dtype=bool)
    hit[active.nodes[:, 0], active.nodes[:, 1]] = True
    side = 2 * kernel.radius + 1
    reach = maximum_filter(hit.astype(np.uint8), size=side) > 0
    out[~reach] = 0.0
    return DisplacementField(out, grid.spacing_mm, grid.origin_mm)


def node_grid_for(config, step_px=DEFAULT_NODE_STEP):
    """Node grid covering the sensor: every step_px-th pixel in each axis."""
    if step_px < 1:
        raise ConfigError("node step must be at least one pixel")
    rows = (config.height_px - 1) // step_px + 1
    cols = (config.width_px - 1) // step_px + 1
    origin = (
        -(config.width_px - 1) / 2.0 * config.pixel_pitch_mm,
        -(config.height_px - 1) / 2.0 * config.pixel_pitch_mm,
    )
    return NodeGrid(rows, cols, step_px, step_px * config.pixel_pitch_mm, origin)


def press_to_active(height_map, contact_mask, shear_mm, config, grid=None):
    """Turn a pressed height map into active nodes with prescribed motion.

    Contact nodes move down by their indentation (gel height minus pressed
    height) and laterally by the rigid shear of the pressing object.
    """
    if grid is None:
        grid = node_grid_for(config)
    height_map = np.asarray(height_map, dtype=np.float64)
    contact_mask = np.asarray(contact_mask, dtype=bool)
    if height_map.shape != (config.height_px, config.width_px):
        raise ConfigError("height map does not match the sensor size")
    if contact_mask.shape != height_map.shape:
        raise ConfigError("contact mask does not match the height map")
    shear = np.asarray(shear_mm, dtype=np.float64).reshape(2)
    sub_mask = contact_mask[:: grid.step_px, :: grid.step_px]
    sub_h = height_map[:: grid.step_px, :: grid.step_px]
    sub_gel = config.gel_map[:: grid.step_px, :: grid.step_px]
    nr, nc = np.nonzero(sub_mask[: grid.rows, : grid.cols])
    uz = sub_h[nr, nc] - sub_gel[nr, nc]
    disp = np.stack(
        [np.full_like(uz, shear[0]), np.full_like(uz, shear[1]), uz], axis=1
    )
    return ActiveSet(np.stack([nr, nc], axis=1), disp), grid


def simulate_markers(height_map, contact_mask, shear_mm, kernel, config, grid=None, **solver):
    """Full marker pipeline: contact -> amendment -> superposition."""
    active, grid = press_to_active(height_map, contact_mask, shear_mm, config, grid)
    amended = amend_active(active, kernel, **solver)
    return superpose(ActiveSet(active.nodes, amended), kernel, grid)


def marker_grid(config, spacing_mm=1.0, margin_mm=1.0):
    """Regular marker layout (n, 2) in mm, inset from the image borders."""
    half_w = (config.width_px - 1) / 2.0 * config.pixel_pitch_mm
    half_h = (config.height_px - 1) / 2.0 * config.pixel_pitch_mm
    if spacing_mm <= 0 or margin_mm < 0:
        raise ConfigError("marker spacing must be positive and margin non-negative")
    xs = np.arange(-half_w + margin_mm, half_w - margin_mm + 1e-9, spacing_mm)
    ys = np.arange(-half_h + margin_mm, half_h - margin_mm + 1e-9, spacing_mm)
    xx, yy = np.meshgrid(xs, ys)
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def sample_markers(field, positions_mm):
    """Bilinearly sample a displacement field at metric marker positions."""
    positions = np.asarray(positions_mm, dtype=np.float64).reshape(-1, 2)
    rows, cols = field.u.shape[:2]
    if rows < 2 or cols < 2:
        raise ConfigError("displacement field too small to interpolate")
    fx = (positions[:, 0] - field.origin_mm[0]) / field.spacing_mm
    fy = (positions[:, 1] - field.origin_mm[1]) / field.spacing_mm
    if np.any(fx < 0) or np.any(fx > cols - 1) or np.any(fy < 0) or np.any(fy > rows - 1):
        raise InputRangeError("marker positions fall outside the node grid")
    x0 = np.minimum(fx.astype(np.int64), cols - 2)
    y0 = np.minimum(fy.astype(np.int64), rows - 2)
    tx = (fx - x0)[:, None]
    ty = (fy - y0)[:, None]
    u00 = field.u[y0, x0]
    u01 = field.u[y0, x0 + 1]
    u10 = field.u[y0 + 1, x0]
    u11 = field.u[y0 + 1, x0 + 1]
    disp = (
        u00 * (1 - tx) * (1 - ty)
        + u01 * tx * (1 - ty)
        + u10 * (1 - tx) * ty
        + u11 * tx * ty
    )
    return MarkerField(positions, disp)
