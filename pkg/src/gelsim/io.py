"""File formats: images, meshes, displacement CSVs, scenes, and bundles.

All byte layouts live in FORMATS.md at the repository root.  Every writer
goes through an atomic temp-file-plus-rename so a crash never leaves a
half-written file, and calibration bundles carry SHA-256 checksums over every
payload file, verified on load.
"""

import hashlib
import io as _io
import json
import os
import re
import struct
import tempfile

import numpy as np
from dataclasses import dataclass, field

from .elastic import MarkerField, TensorKernel, UnitLoadField
from .errors import ConfigError, ContentError, IntegrityError, ParseError
from .geometry import Pose, SensorConfig, TriangleMesh
from .optics import CalibrationRecord, LookupTable, PolynomialTable
from .shadow import PinPressRecord, ShadowMask, ShadowMaskSet

BUNDLE_FORMAT_VERSION = 1

_MARKER_HEADER = "mx_mm,my_mm,ux_mm,uy_mm,uz_mm"
_FIELD_HEADER = "x_mm,y_mm,ux_mm,uy_mm,uz_mm"


def _atomic_write(path, payload):
    """Write bytes to path via a temporary file in the same directory."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


# ---------------------------------------------------------------- PFM images


def _pfm_bytes(data):
    data = np.asarray(data)
    if data.ndim != 2:
        raise ConfigError("PFM writer takes a single-channel 2-D array")
    if not np.all(np.isfinite(data)):
        raise ConfigError("PFM payload contains non-finite values")
    h, w = data.shape
    header = ("Pf\n%d %d\n-1.0\n" % (w, h)).encode("ascii")
    return header + np.flipud(data.astype("<f4")).tobytes()


def save_pfm(path, data):
    """Write a grayscale PFM (little-endian, bottom-up rows, scale -1.0)."""
    _atomic_write(path, _pfm_bytes(data))


_PFM_HEAD = re.compile(rb"(P[fF])\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s")


def _pfm_from_bytes(blob, where):
    m = _PFM_HEAD.match(blob)
    if not m:
        raise ParseError("%s: not a PFM header" % where)
    if m.group(1) == b"PF":
        raise ParseError("%s: color PFM not supported, expected grayscale 'Pf'" % where)
    w, h = int(m.group(2)), int(m.group(3))
    try:
        scale = float(m.group(4))
    except ValueError:
        raise ParseError("%s: bad PFM scale %r" % (where, m.group(4))) from None
    if scale == 0 or w <= 0 or h <= 0:
        raise ParseError("%s: invalid PFM dimensions or scale" % where)
    start = m.end()
    need = w * h * 4
    if len(blob) - start < need:
        raise ParseError(
            "%s: truncated PFM raster, need %d bytes after byte %d, have %d"
            % (where, need, start, len(blob) - start)
        )
    dt = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(blob, dtype=dt, count=w * h, offset=start).reshape(h, w)
    return np.flipud(arr).astype(np.float32)


def load_pfm(path):
    """Read a grayscale PFM and return a float32 array (top-down rows)."""
    return _pfm_from_bytes(_read_bytes(path), path)


# ---------------------------------------------------------------- PNG images


def _png_bytes(image):
    from PIL import Image

    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ConfigError("PNG writer takes (H, W, 3) uint8 images")
    buf = _io.BytesIO()
    Image.fromarray(image, "RGB").save(buf, format="PNG")
    return buf.getvalue()


def save_png(path, image):
    """Write an 8-bit RGB PNG."""
    _atomic_write(path, _png_bytes(image))


def _png_from_bytes(blob, where):
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(_io.BytesIO(blob)) as im:
            return np.array(im.convert("RGB"))
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ParseError("%s: cannot decode PNG (%s)" % (where, exc)) from None


def load_png(path):
    """Read any PIL-decodable image as (H, W, 3) uint8 RGB."""
    return _png_from_bytes(_read_bytes(path), path)


# --------------------------------------------------------------------- meshes

_STL_RECORD = np.dtype([("normal", "<f4", 3), ("verts", "<f4", (3, 3)), ("attr", "<u2")])


def _mesh_from_soup(tris, where):
    tris = np.asarray(tris, dtype=np.float64).reshape(-1, 3, 3)
    if len(tris) == 0:
        raise ContentError("%s: mesh contains no triangles" % where)
    verts = tris.reshape(-1, 3)
    faces = np.arange(len(verts), dtype=np.int64).reshape(-1, 3)
    return TriangleMesh(verts, faces)


def _parse_ascii_stl(blob, where):
    tris, cur = [], []
    offset = 0
    for raw in blob.splitlines(keepends=True):
        line_start = offset
        offset += len(raw)
        tokens = raw.decode("latin-1").split()
        if not tokens:
            continue
        key = tokens[0].lower()
        if key == "vertex":
            try:
                if len(tokens) != 4:
                    raise ValueError
                cur.append([float(t) for t in tokens[1:4]])
            except ValueError:
                raise ParseError(
                    "%s: malformed vertex line at byte %d" % (where, line_start)
                ) from None
        elif key == "endfacet":
            if len(cur) != 3:
                raise ParseError(
                    "%s: facet with %d vertices near byte %d" % (where, len(cur), line_start)
                )
            tris.append(cur)
            cur = []
        elif key in ("solid", "endsolid", "facet", "outer", "endloop"):
            continue
        else:
            raise ParseError(
                "%s: unexpected token %r at byte %d" % (where, tokens[0], line_start)
            )
    if cur:
        raise ParseError("%s: unterminated facet at end of file" % where)
    return _mesh_from_soup(np.array(tris, dtype=np.float64).reshape(-1, 3, 3), where)


def _load_stl(path):
    blob = _read_bytes(path)
    if len(blob) >= 84:
        (count,) = struct.unpack_from("<I", blob, 80)
        expected = 84 + 50 * count
        if expected == len(blob):
            arr = np.frombuffer(blob, dtype=_STL_RECORD, count=count, offset=84)
            return _mesh_from_soup(np.array(arr["verts"], dtype=np.float64), path)
    if blob[:5] == b"solid":
        return _parse_ascii_stl(blob, path)
    if len(blob) >= 84:
        (count,) = struct.unpack_from("<I", blob, 80)
        raise ParseError(
            "%s: binary STL length mismatch at byte 80: header declares %d triangles"
            " (%d bytes), file has %d bytes" % (path, count, 84 + 50 * count, len(blob))
        )
    raise ParseError("%s: too short to be an STL file (%d bytes)" % (path, len(blob)))


def _load_obj(path):
    blob = _read_bytes(path)
    verts, faces = [], []
    offset = 0
    for raw in blob.splitlines(keepends=True):
        line_start = offset
        offset += len(raw)
        stripped = raw.decode("latin-1").split("#", 1)[0].strip()
        if not stripped:
            continue
        tokens = stripped.split()
        if tokens[0] == "v":
            try:
                if len(tokens) < 4:
                    raise ValueError
                verts.append([float(t) for t in tokens[1:4]])
            except ValueError:
                raise ParseError(
                    "%s: malformed vertex line at byte %d" % (path, line_start)
                ) from None
        elif tokens[0] == "f":
            if len(tokens) < 4:
                raise ParseError(
                    "%s: face with fewer than 3 vertices at byte %d" % (path, line_start)
                )
            idx = []
            for tok in tokens[1:]:
                head = tok.split("/")[0]
                try:
                    i = int(head)
                except ValueError:
                    raise ParseError(
                        "%s: bad face index %r at byte %d" % (path, tok, line_start)
                    ) from None
                if i == 0:
                    raise ParseError(
                        "%s: face index 0 at byte %d (OBJ is 1-based)" % (path, line_start)
                    )
                idx.append(i)
            faces.append((idx, line_start))
    n = len(verts)
    tris = []
    for idx, line_start in faces:
        resolved = [i - 1 if i > 0 else n + i for i in idx]
        if any(r < 0 or r >= n for r in resolved):
            raise ParseError("%s: face index out of range at byte %d" % (path, line_start))
        for k in range(1, len(resolved) - 1):
            tris.append((resolved[0], resolved[k], resolved[k + 1]))
    if not tris:
        raise ContentError("%s: mesh contains no triangles" % path)
    return TriangleMesh(np.array(verts, dtype=np.float64), np.array(tris, dtype=np.int64))


def load_mesh(path):
    """Read an STL (binary or ASCII) or OBJ file as a TriangleMesh."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".stl":
        return _load_stl(path)
    if ext == ".obj":
        return _load_obj(path)
    raise ParseError("%s: unsupported mesh extension (use .stl or .obj)" % path)


def save_mesh(path, mesh):
    """Write a TriangleMesh as binary STL or OBJ, chosen by extension."""
    if mesh.faces.shape[0] == 0:
        raise ContentError("refusing to write a mesh with no triangles")
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".stl":
        tris = mesh.vertices[mesh.faces]
        e1 = tris[:, 1] - tris[:, 0]
        e2 = tris[:, 2] - tris[:, 0]
        normals = np.cross(e1, e2)
        lengths = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = np.where(lengths > 0, normals / np.where(lengths == 0, 1, lengths), 0.0)
        records = np.zeros(len(tris), dtype=_STL_RECORD)
        records["normal"] = normals
        records["verts"] = tris
        header = b"binary STL; units mm".ljust(80, b"\0")
        _atomic_write(path, header + struct.pack("<I", len(tris)) + records.tobytes())
    elif ext == ".obj":
        lines = ["v %r %r %r" % tuple(map(float, v)) for v in mesh.vertices]
        lines += ["f %d %d %d" % tuple(f + 1) for f in mesh.faces]
        _atomic_write(path, ("\n".join(lines) + "\n").encode("ascii"))
    else:
        raise ConfigError("%s: unsupported mesh extension (use .stl or .obj)" % path)


# ------------------------------------------------------- displacement tables


def _fmt_row(values):
    return ",".join(repr(float(v)) for v in values)


def save_unit_field(path, unit_field):
    """Write one unit-load field as CSV plus a JSON sidecar.

    The CSV lists nodes in row-major order with coordinates relative to the
    loaded node; the sidecar (.json next to the .csv) carries the prescribed
    displacement, node spacing, and grid layout.
    """
    path = os.fspath(path)
    if not path.endswith(".csv"):
        raise ConfigError("unit-load field path must end in .csv")
    rows, cols = unit_field.field.shape[:2]
    lr, lc = unit_field.load_index
    xs = (np.arange(cols) - lc) * unit_field.spacing_mm
    ys = (np.arange(rows) - lr) * unit_field.spacing_mm
    lines = [_FIELD_HEADER]
    for r in range(rows):
        for c in range(cols):
            u = unit_field.field[r, c]
            lines.append(_fmt_row((xs[c], ys[r], u[0], u[1], u[2])))
    _atomic_write(path, ("\n".join(lines) + "\n").encode("ascii"))
    meta = {
        "prescribed_mm": [float(v) for v in unit_field.prescribed],
        "spacing_mm": float(unit_field.spacing_mm),
        "rows": rows,
        "cols": cols,
        "load_index": [lr, lc],
    }
    _atomic_write(path[:-4] + ".json", _json_bytes(meta))


def load_unit_field(path):
    """Read a unit-load field written by save_unit_field."""
    path = os.fspath(path)
    sidecar = path[:-4] + ".json" if path.endswith(".csv") else path + ".json"
    if not os.path.exists(sidecar):
        raise ParseError("%s: sidecar %s missing" % (path, sidecar))
    meta = _load_json(sidecar)
    rows = int(_field_of(meta, "rows", sidecar))
    cols = int(_field_of(meta, "cols", sidecar))
    spacing = float(_field_of(meta, "spacing_mm", sidecar))
    prescribed = _field_of(meta, "prescribed_mm", sidecar)
    load_index = _field_of(meta, "load_index", sidecar)
    text = _read_bytes(path).decode("ascii", errors="replace")
    lines = text.splitlines()
    if not lines or lines[0].strip() != _FIELD_HEADER:
        raise ParseError("%s: expected header %r" % (path, _FIELD_HEADER))
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != rows * cols:
        raise ParseError(
            "%s: expected %d data rows, found %d" % (path, rows * cols, len(body))
        )
    data = np.empty((rows * cols, 5))
    for i, ln in enumerate(body):
        parts = ln.split(",")
        if len(parts) != 5:
            raise ParseError("%s: line %d has %d fields, expected 5" % (path, i + 2, len(parts)))
        try:
            data[i] = [float(p) for p in parts]
        except ValueError:
            raise ParseError("%s: bad number on line %d" % (path, i + 2)) from None
    lr, lc = int(load_index[0]), int(load_index[1])
    xs = (np.arange(cols) - lc) * spacing
    ys = (np.arange(rows) - lr) * spacing
    grid_x = np.tile(xs, rows)
    grid_y = np.repeat(ys, cols)
    if np.abs(data[:, 0] - grid_x).max() > 1e-9 or np.abs(data[:, 1] - grid_y).max() > 1e-9:
        raise IntegrityError("%s: node coordinates disagree with the sidecar layout" % path)
    fieldarr = data[:, 2:5].reshape(rows, cols, 3)
    return UnitLoadField(np.asarray(prescribed, dtype=np.float64), fieldarr, spacing, (lr, lc))


def load_unit_fields(directory):
    """Read every unit-load CSV in a directory, sorted by name."""
    names = sorted(n for n in os.listdir(directory) if n.endswith(".csv"))
    if not names:
        raise ConfigError("%s: no unit-load CSV files" % directory)
    return [load_unit_field(os.path.join(directory, n)) for n in names]


def save_markers_csv(path, markers):
    """Write marker positions and displacements as CSV."""
    lines = [_MARKER_HEADER]
    for pos, u in zip(markers.positions_mm, markers.displacements_mm):
        lines.append(_fmt_row((pos[0], pos[1], u[0], u[1], u[2])))
    _atomic_write(path, ("\n".join(lines) + "\n").encode("ascii"))


def load_markers_csv(path):
    """Read a marker CSV written by save_markers_csv."""
    text = _read_bytes(path).decode("ascii", errors="replace")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != _MARKER_HEADER:
        raise ParseError("%s: expected header %r" % (path, _MARKER_HEADER))
    data = np.empty((len(lines) - 1, 5))
    for i, ln in enumerate(lines[1:]):
        parts = ln.split(",")
        if len(parts) != 5:
            raise ParseError("%s: line %d has %d fields, expected 5" % (path, i + 2, len(parts)))
        try:
            data[i] = [float(p) for p in parts]
        except ValueError:
            raise ParseError("%s: bad number on line %d" % (path, i + 2)) from None
    return MarkerField(data[:, :2], data[:, 2:5])


# --------------------------------------------------------------------- scenes


@dataclass
class SceneSpec:
    """A render request: mesh, pose, press depth, and lateral shear."""

    mesh_path: str
    press_depth_mm: float
    shear_mm: tuple = (0.0, 0.0)
    pose: Pose = field(default_factory=Pose)


_SCENE_KEYS = (
    "mesh",
    "press_depth_mm",
    "shear_x_mm",
    "shear_y_mm",
    "translate_x_mm",
    "translate_y_mm",
    "rotate_axis",
    "rotate_deg",
)


def parse_scene(path):
    """Parse a key = value scene file (see FORMATS.md) into a SceneSpec."""
    text = _read_bytes(path).decode("utf-8", errors="replace")
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("%s: line %d is not 'key = value'" % (path, lineno))
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _SCENE_KEYS:
            raise ParseError("%s: unknown key %r on line %d" % (path, key, lineno))
        if key in values:
            raise ParseError("%s: duplicate key %r on line %d" % (path, key, lineno))
        if not val:
            raise ParseError("%s: empty value for %r on line %d" % (path, key, lineno))
        values[key] = (val, lineno)

    def take_float(key, default=None):
        if key not in values:
            if default is None:
                raise ParseError("%s: missing required key %r" % (path, key))
            return default
        val, lineno = values[key]
        try:
            return float(val)
        except ValueError:
            raise ParseError(
                "%s: bad number %r for %r on line %d" % (path, val, key, lineno)
            ) from None

    if "mesh" not in values:
        raise ParseError("%s: missing required key 'mesh'" % path)
    mesh_rel = values["mesh"][0]
    mesh_path = mesh_rel
    if not os.path.isabs(mesh_path):
        mesh_path = os.path.join(os.path.dirname(os.path.abspath(path)), mesh_rel)
    depth = take_float("press_depth_mm")
    shear = (take_float("shear_x_mm", 0.0), take_float("shear_y_mm", 0.0))
    translation = (take_float("translate_x_mm", 0.0), take_float("translate_y_mm", 0.0), 0.0)
    if ("rotate_axis" in values) != ("rotate_deg" in values):
        raise ParseError("%s: rotate_axis and rotate_deg must appear together" % path)
    if "rotate_axis" in values:
        val, lineno = values["rotate_axis"]
        parts = val.split(",")
        if len(parts) != 3:
            raise ParseError("%s: rotate_axis needs three comma-separated numbers" % path)
        try:
            axis = [float(p) for p in parts]
        except ValueError:
            raise ParseError("%s: bad rotate_axis on line %d" % (path, lineno)) from None
        try:
            pose = Pose.from_axis_angle(axis, np.deg2rad(take_float("rotate_deg")), translation)
        except ConfigError as exc:
            raise ParseError("%s: %s" % (path, exc)) from None
    else:
        pose = Pose(np.eye(3), np.asarray(translation))
    return SceneSpec(mesh_path, depth, shear, pose)


# -------------------------------------------------------------------- bundles


@dataclass
class Bundle:
    """Everything one sensor needs to simulate: config plus calibrations."""

    sensor: SensorConfig
    poly: PolynomialTable = None
    lookup: LookupTable = None
    shadows: ShadowMaskSet = None
    kernel: TensorKernel = None
    background: np.ndarray = None


def _json_bytes(obj):
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("ascii")


def _load_json(path):
    try:
        return json.loads(_read_bytes(path).decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ParseError("%s: bad JSON (%s)" % (path, exc)) from None


def _field_of(mapping, key, where):
    try:
        return mapping[key]
    except (KeyError, TypeError):
        raise ParseError("%s: missing key %r" % (where, key)) from None


def save_bundle(
    directory,
    sensor=None,
    poly=None,
    lookup=None,
    shadows=None,
    kernel=None,
    background=None,
):
    """Create or update a calibration bundle directory.

    When the directory already holds a bundle it is loaded (checksums and
    all) and the sections passed here replace the stored ones; everything
    else is preserved.  The manifest is written last so a partially written
    update is detected as corrupt rather than silently read.
    """
    directory = os.fspath(directory)
    manifest_path = os.path.join(directory, "manifest.json")
    if os.path.exists(manifest_path):
        existing = load_bundle(directory)
        sensor = sensor or existing.sensor
        poly = poly or existing.poly
        lookup = lookup or existing.lookup
        shadows = shadows or existing.shadows
        kernel = kernel or existing.kernel
        background = background if background is not None else existing.background
    if sensor is None:
        raise ConfigError("a new bundle needs a sensor configuration")
    os.makedirs(directory, exist_ok=True)
    checksums = {}

    def put(rel, payload):
        _atomic_write(os.path.join(directory, rel), payload)
        checksums[rel] = hashlib.sha256(payload).hexdigest()

    sensor_meta = {
        "width_px": sensor.width_px,
        "height_px": sensor.height_px,
        "pixel_pitch_mm": float(sensor.pixel_pitch_mm),
        "max_indent_mm": float(sensor.max_indent_mm),
        "gel_map": None,
    }
    if np.any(sensor.gel_map):
        sensor_meta["gel_map"] = "gel.pfm"
        put("gel.pfm", _pfm_bytes(sensor.gel_map))
    manifest = {"format_version": BUNDLE_FORMAT_VERSION, "sensor": sensor_meta}
    if background is not None:
        put("background.png", _png_bytes(background))
        manifest["background"] = "background.png"
    if poly is not None:
        put("optics/poly.f32", np.ascontiguousarray(poly.coeffs, dtype="<f4").tobytes())
        put("optics/poly_fill.u8", poly.fill.tobytes())
        manifest["optics_poly"] = {
            "bins": poly.bins,
            "theta_max": float(poly.theta_max),
            "coeffs": "optics/poly.f32",
            "fill": "optics/poly_fill.u8",
        }
    if lookup is not None:
        put("optics/lookup.f32", np.ascontiguousarray(lookup.values, dtype="<f4").tobytes())
        put("optics/lookup_fill.u8", lookup.fill.tobytes())
        manifest["optics_lookup"] = {
            "bins": lookup.bins,
            "theta_max": float(lookup.theta_max),
            "values": "optics/lookup.f32",
            "fill": "optics/lookup_fill.u8",
        }
    if shadows is not None:
        groups_meta = []
        for g, group in enumerate(shadows.masks):
            group_meta = []
            for i, mask in enumerate(group):
                rel = "shadow/g%d_%02d.f32" % (g, i)
                put(rel, np.ascontiguousarray(mask.attenuation, dtype="<f4").tobytes())
                group_meta.append(
                    {
                        "depth_mm": float(mask.depth_mm),
                        "offset": list(mask.offset),
                        "shape": list(mask.attenuation.shape),
                        "file": rel,
                    }
                )
            groups_meta.append(group_meta)
        manifest["shadow"] = {
            "directions": [[float(d[0]), float(d[1])] for d in shadows.directions],
            "depth_step_mm": float(shadows.depth_step_mm),
            "groups": groups_meta,
        }
    if kernel is not None:
        put("elastic/kernel.f32", np.ascontiguousarray(kernel.tensors, dtype="<f4").tobytes())
        manifest["elastic"] = {
            "radius": kernel.radius,
            "spacing_mm": float(kernel.spacing_mm),
            "tensors": "elastic/kernel.f32",
        }
    manifest["checksums"] = checksums
    _atomic_write(manifest_path, _json_bytes(manifest))


def _read_checked(directory, rel, checksums):
    if rel not in checksums:
        raise IntegrityError("%s: file %r not covered by the manifest checksums" % (directory, rel))
    path = os.path.join(directory, rel)
    if not os.path.exists(path):
        raise IntegrityError("%s: missing bundle file %r" % (directory, rel))
    blob = _read_bytes(path)
    digest = hashlib.sha256(blob).hexdigest()
    if digest != checksums[rel]:
        raise IntegrityError("%s: checksum mismatch for %r" % (directory, rel))
    return blob


def _f32_array(blob, shape, directory, rel):
    expected = int(np.prod(shape)) * 4
    if len(blob) != expected:
        raise IntegrityError(
            "%s: %r holds %d bytes, expected %d" % (directory, rel, len(blob), expected)
        )
    return np.frombuffer(blob, dtype="<f4").reshape(shape)


def load_bundle(directory):
    """Load a calibration bundle, verifying every payload checksum."""
    directory = os.fspath(directory)
    manifest_path = os.path.join(directory, "manifest.json")
    if not os.path.exists(manifest_path):
        raise ParseError("%s: not a calibration bundle (manifest.json missing)" % directory)
    manifest = _load_json(manifest_path)
    version = _field_of(manifest, "format_version", manifest_path)
    if version != BUNDLE_FORMAT_VERSION:
        raise ParseError(
            "%s: unsupported bundle format version %r (expected %d)"
            % (directory, version, BUNDLE_FORMAT_VERSION)
        )
    checksums = _field_of(manifest, "checksums", manifest_path)
    for rel in checksums:
        _read_checked(directory, rel, checksums)
    smeta = _field_of(manifest, "sensor", manifest_path)
    gel = None
    if smeta.get("gel_map"):
        gel = _pfm_from_bytes(
            _read_checked(directory, smeta["gel_map"], checksums), smeta["gel_map"]
        ).astype(np.float64)
    sensor = SensorConfig(
        int(_field_of(smeta, "width_px", manifest_path)),
        int(_field_of(smeta, "height_px", manifest_path)),
        float(_field_of(smeta, "pixel_pitch_mm", manifest_path)),
        float(_field_of(smeta, "max_indent_mm", manifest_path)),
        gel,
    )
    background = None
    if manifest.get("background"):
        background = _png_from_bytes(
            _read_checked(directory, manifest["background"], checksums),
            manifest["background"],
        )
        if background.shape[:2] != (sensor.height_px, sensor.width_px):
            raise IntegrityError("%s: background size disagrees with the sensor" % directory)
    poly = None
    if "optics_poly" in manifest:
        meta = manifest["optics_poly"]
        bins = int(_field_of(meta, "bins", manifest_path))
        coeffs_rel = _field_of(meta, "coeffs", manifest_path)
        coeffs = _f32_array(
            _read_checked(directory, coeffs_rel, checksums),
            (bins, bins, 3, 6),
            directory,
            coeffs_rel,
        )
        fill_blob = _read_checked(directory, _field_of(meta, "fill", manifest_path), checksums)
        if len(fill_blob) != bins * bins:
            raise IntegrityError("%s: fill mask has the wrong size" % directory)
        fill = np.frombuffer(fill_blob, dtype=np.uint8).reshape(bins, bins)
        poly = PolynomialTable(coeffs, fill, bins, float(_field_of(meta, "theta_max", manifest_path)))
    lookup = None
    if "optics_lookup" in manifest:
        meta = manifest["optics_lookup"]
        bins = int(_field_of(meta, "bins", manifest_path))
        values_rel = _field_of(meta, "values", manifest_path)
        vals = _f32_array(
            _read_checked(directory, values_rel, checksums),
            (bins, bins, 3),
            directory,
            values_rel,
        )
        fill_blob = _read_checked(directory, _field_of(meta, "fill", manifest_path), checksums)
        if len(fill_blob) != bins * bins:
            raise IntegrityError("%s: fill mask has the wrong size" % directory)
        fill = np.frombuffer(fill_blob, dtype=np.uint8).reshape(bins, bins)
        lookup = LookupTable(vals, fill, bins, float(_field_of(meta, "theta_max", manifest_path)))
    shadows = None
    if "shadow" in manifest:
        meta = manifest["shadow"]
        groups = []
        for group_meta in _field_of(meta, "groups", manifest_path):
            group = []
            for entry in group_meta:
                shape = tuple(int(v) for v in _field_of(entry, "shape", manifest_path))
                mask_rel = _field_of(entry, "file", manifest_path)
                atten = _f32_array(
                    _read_checked(directory, mask_rel, checksums),
                    shape,
                    directory,
                    mask_rel,
                ).astype(np.float64)
                group.append(
                    ShadowMask(
                        float(_field_of(entry, "depth_mm", manifest_path)),
                        atten,
                        tuple(int(v) for v in _field_of(entry, "offset", manifest_path)),
                    )
                )
            groups.append(group)
        directions = [tuple(map(float, d)) for d in _field_of(meta, "directions", manifest_path)]
        shadows = ShadowMaskSet(groups, directions, float(meta.get("depth_step_mm", 0.0)))
    kernel = None
    if "elastic" in manifest:
        meta = manifest["elastic"]
        radius = int(_field_of(meta, "radius", manifest_path))
        side = 2 * radius + 1
        tensors_rel = _field_of(meta, "tensors", manifest_path)
        tensors = _f32_array(
            _read_checked(directory, tensors_rel, checksums),
            (side, side, 3, 3),
            directory,
            tensors_rel,
        ).astype(np.float64)
        kernel = TensorKernel(tensors, radius, float(_field_of(meta, "spacing_mm", manifest_path)))
    return Bundle(sensor, poly, lookup, shadows, kernel, background)


# ------------------------------------------------------- calibration records


def load_optics_records(directory):
    """Read a ball-press directory: records.json plus referenced images.

    Returns (records, background).  records.json must name a background
    image, a ball radius, and per record an image path, contact center, and
    contact radius (see FORMATS.md).
    """
    directory = os.fspath(directory)
    meta_path = os.path.join(directory, "records.json")
    meta = _load_json(meta_path)
    background = load_png(os.path.join(directory, _field_of(meta, "background", meta_path)))
    default_ball = _field_of(meta, "ball_radius_mm", meta_path)
    entries = _field_of(meta, "records", meta_path)
    if not entries:
        raise ConfigError("%s: records.json lists no presses" % directory)
    records = []
    for entry in entries:
        image = load_png(os.path.join(directory, _field_of(entry, "image", meta_path)))
        records.append(
            CalibrationRecord(
                image,
                tuple(float(v) for v in _field_of(entry, "center_px", meta_path)),
                float(_field_of(entry, "radius_px", meta_path)),
                float(entry.get("ball_radius_mm", default_ball)),
            )
        )
    return records, background


def load_shadow_records(directory):
    """Read a pin-press directory: records.json plus referenced images.

    Returns (records, background); per record the JSON names an image, the
    pin center, and the press depth, with one shared pin diameter.
    """
    directory = os.fspath(directory)
    meta_path = os.path.join(directory, "records.json")
    meta = _load_json(meta_path)
    background = load_png(os.path.join(directory, _field_of(meta, "background", meta_path)))
    pin = float(_field_of(meta, "pin_diameter_mm", meta_path))
    entries = _field_of(meta, "records", meta_path)
    if not entries:
        raise ConfigError("%s: records.json lists no presses" % directory)
    records = []
    for entry in entries:
        image = load_png(os.path.join(directory, _field_of(entry, "image", meta_path)))
        records.append(
            PinPressRecord(
                image,
                background,
                tuple(float(v) for v in _field_of(entry, "center_px", meta_path)),
                float(entry.get("pin_diameter_mm", pin)),
                float(_field_of(entry, "depth_mm", meta_path)),
            )
        )
    return records, background
