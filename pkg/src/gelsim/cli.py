"""Command line driver: calibration, rendering, markers, metrics, benchmarks.

Every subcommand prints a small JSON object on success; failures print a
JSON diagnostic {"error": class, "message": text} to stderr and exit with
code 2 (bad input or files) or 3 (a solver could not reach its accuracy).
"""

import argparse
import json
import sys
import time

import numpy as np

from . import io, metrics, optics, shadow, synth
from .elastic import (
    DEFAULT_NODE_STEP,
    DEFAULT_RADIUS,
    calibrate_tensors,
    generate_halfspace_fields,
    marker_grid,
    node_grid_for,
    sample_markers,
    simulate_markers,
)
from .errors import ConfigError, NumericalError, SimulationError
from .geometry import SensorConfig, compute_normals, rasterize_press, smooth_pyramid

DEFAULT_ARROW_SCALE = 20.0


def _version():
    try:
        from importlib.metadata import version

        return version("gelsim")
    except Exception:
        return "0.1.0"


def _emit(obj):
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _jsonable_metrics(values):
    out = dict(values)
    if out.get("psnr") == float("inf"):
        out["psnr"] = "inf"
    return out


def _pick_table(bundle, choice):
    if choice == "poly" or (choice == "auto" and bundle.poly is not None):
        if bundle.poly is None:
            raise ConfigError("bundle has no polynomial table")
        return bundle.poly
    if bundle.lookup is None:
        raise ConfigError("bundle has no lookup table")
    return bundle.lookup


def render_scene(scene, bundle, use_shadow=True, table="auto"):
    """Scene -> (image, height map, contact mask) through the full pipeline."""
    mesh = io.load_mesh(scene.mesh_path)
    height, mask = rasterize_press(mesh, scene.pose, scene.press_depth_mm, bundle.sensor)
    height = smooth_pyramid(height, mask)
    normals = compute_normals(height, bundle.sensor.pixel_pitch_mm)
    if bundle.background is None:
        raise ConfigError("bundle has no background image")
    image = optics.render_optics(normals, _pick_table(bundle, table), bundle.background)
    if use_shadow:
        if bundle.shadows is None:
            raise ConfigError("bundle has no shadow calibration (or pass --no-shadow)")
        image = shadow.attach_shadows(image, height, mask, bundle.shadows)
    return image, height, mask


def _cmd_calibrate_optics(args):
    records, background = io.load_optics_records(args.records)
    if _bundle_exists(args.out):
        sensor = io.load_bundle(args.out).sensor
    else:
        if args.pitch_mm is None:
            raise ConfigError("--pitch-mm is required when creating a new bundle")
        sensor = SensorConfig(
            background.shape[1], background.shape[0], args.pitch_mm, args.max_indent_mm
        )
    theta_max = np.deg2rad(args.theta_max)
    poly = optics.calibrate_polytable(
        records, sensor, args.bins, theta_max, args.min_samples
    )
    lookup = None
    if args.lookup:
        lookup = optics.calibrate_lookup(
            records, sensor, args.bins, theta_max, args.min_samples
        )
    io.save_bundle(args.out, sensor=sensor, poly=poly, lookup=lookup, background=background)
    calibrated = float(np.mean(poly.fill != optics.FILL_INTERPOLATED))
    _emit(
        {
            "bundle": args.out,
            "records": len(records),
            "bins": args.bins,
            "calibrated_fraction": round(calibrated, 4),
        }
    )
    return 0


def _cmd_calibrate_shadow(args):
    records, _ = io.load_shadow_records(args.records)
    bundle = io.load_bundle(args.bundle)
    mask_set = shadow.extract_shadow_masks(
        records, bundle.sensor, args.detect_threshold, args.margin_px
    )
    io.save_bundle(args.bundle, shadows=mask_set)
    _emit(
        {
            "bundle": args.bundle,
            "records": len(records),
            "masks_per_light": [len(g) for g in mask_set.masks],
            "directions": [[round(d[0], 4), round(d[1], 4)] for d in mask_set.directions],
        }
    )
    return 0


def _cmd_calibrate_elastic(args):
    bundle = io.load_bundle(args.bundle)
    if (args.fields is None) == (args.analytic is None):
        raise ConfigError("pass exactly one of --fields or --analytic E,NU")
    if args.fields is not None:
        fields = io.load_unit_fields(args.fields)
    else:
        try:
            young, poisson = (float(v) for v in args.analytic.split(","))
        except ValueError:
            raise ConfigError("--analytic expects two numbers: E_MPa,poisson") from None
        spacing = args.node_step * bundle.sensor.pixel_pitch_mm
        fields = generate_halfspace_fields(young, poisson, spacing, args.radius)
    kernel = calibrate_tensors(fields, args.radius)
    io.save_bundle(args.bundle, kernel=kernel)
    _emit(
        {
            "bundle": args.bundle,
            "radius": kernel.radius,
            "spacing_mm": kernel.spacing_mm,
        }
    )
    return 0


def _cmd_render(args):
    bundle = io.load_bundle(args.bundle)
    scene = io.parse_scene(args.scene)
    image, height, _ = render_scene(scene, bundle, not args.no_shadow, args.table)
    io.save_png(args.out, image)
    result = {"out": args.out, "shadow": not args.no_shadow}
    if args.heightmap:
        io.save_pfm(args.heightmap, height)
        result["heightmap"] = args.heightmap
    _emit(result)
    return 0


def _node_step_from_kernel(kernel, sensor):
    step = kernel.spacing_mm / sensor.pixel_pitch_mm
    if abs(step - round(step)) > 1e-6 or round(step) < 1:
        raise ConfigError(
            "kernel spacing %.6f mm is not a whole number of pixels" % kernel.spacing_mm
        )
    return int(round(step))


def _cmd_markers(args):
    bundle = io.load_bundle(args.bundle)
    if bundle.kernel is None:
        raise ConfigError("bundle has no elastic kernel (run calibrate-elastic)")
    scene = io.parse_scene(args.scene)
    mesh = io.load_mesh(scene.mesh_path)
    height, mask = rasterize_press(mesh, scene.pose, scene.press_depth_mm, bundle.sensor)
    grid = node_grid_for(bundle.sensor, _node_step_from_kernel(bundle.kernel, bundle.sensor))
    field = simulate_markers(height, mask, scene.shear_mm, bundle.kernel, bundle.sensor, grid)
    positions = marker_grid(bundle.sensor, args.marker_spacing_mm, args.margin_mm)
    markers = sample_markers(field, positions)
    io.save_markers_csv(args.out, markers)
    result = {"out": args.out, "markers": len(positions)}
    if args.overlay:
        if bundle.poly is not None or bundle.lookup is not None:
            base, _, _ = render_scene(scene, bundle, use_shadow=False, table="auto")
        elif bundle.background is not None:
            base = bundle.background.copy()
        else:
            raise ConfigError("bundle has neither an intensity table nor a background")
        io.save_png(args.overlay, _draw_arrows(base, markers, bundle.sensor, args.scale))
        result["overlay"] = args.overlay
    _emit(result)
    return 0


def _draw_arrows(image, markers, sensor, scale):
    import cv2

    out = np.ascontiguousarray(image)
    pitch = sensor.pixel_pitch_mm
    for pos, disp in zip(markers.positions_mm, markers.displacements_mm):
        x0 = pos[0] / pitch + (sensor.width_px - 1) / 2.0
        y0 = pos[1] / pitch + (sensor.height_px - 1) / 2.0
        x1 = x0 + scale * disp[0] / pitch
        y1 = y0 + scale * disp[1] / pitch
        cv2.arrowedLine(
            out,
            (int(round(x0)), int(round(y0))),
            (int(round(x1)), int(round(y1))),
            (255, 255, 0),
            1,
            cv2.LINE_AA,
            tipLength=0.25,
        )
    return out


def _cmd_compare(args):
    reference = io.load_png(args.reference)
    candidate = io.load_png(args.candidate)
    crop = None
    if args.crop:
        try:
            crop = tuple(int(v) for v in args.crop.split(","))
            if len(crop) != 4:
                raise ValueError
        except ValueError:
            raise ConfigError("--crop expects X,Y,W,H integers") from None
    values = metrics.image_metrics(reference, candidate, crop)
    if args.diff:
        a = reference.astype(np.int16)
        b = candidate.astype(np.int16)
        io.save_png(args.diff, np.clip(np.abs(a - b) * 4, 0, 255).astype(np.uint8))
    _emit(_jsonable_metrics(values))
    return 0


def _cmd_bench(args):
    bundle = io.load_bundle(args.bundle)
    if bundle.background is None or (bundle.poly is None and bundle.lookup is None):
        raise ConfigError("bench needs a bundle with a background and an intensity table")
    table = _pick_table(bundle, "auto")
    mesh = synth.make_sphere_mesh(4.0)
    sensor = bundle.sensor
    sweep = min(3.0, (sensor.width_px // 4) * sensor.pixel_pitch_mm)

    def frame(k, with_shadow):
        from .geometry import Pose

        tx = sweep * np.sin(2.0 * np.pi * k / args.frames)
        depth = 0.55 * min(1.0, sensor.max_indent_mm) * (0.6 + 0.4 * np.cos(k * 0.7))
        pose = Pose(np.eye(3), np.array([tx, 0.0, 0.0]))
        height, mask = rasterize_press(mesh, pose, depth, sensor)
        height = smooth_pyramid(height, mask)
        normals = compute_normals(height, sensor.pixel_pitch_mm)
        image = optics.render_optics(normals, table, bundle.background)
        if with_shadow:
            image = shadow.attach_shadows(image, height, mask, bundle.shadows)
        return image

    frame(0, False)  # warm-up (JIT compilation, cache priming)
    start = time.perf_counter()
    for k in range(args.frames):
        frame(k, False)
    fps_render = args.frames / (time.perf_counter() - start)
    result = {"frames": args.frames, "fps_render": round(fps_render, 2)}
    if bundle.shadows is not None and not args.no_shadow:
        frame(0, True)
        start = time.perf_counter()
        for k in range(args.frames):
            frame(k, True)
        result["fps_shadow"] = round(args.frames / (time.perf_counter() - start), 2)
    _emit(result)
    return 0


def _bundle_exists(path):
    import os

    return os.path.exists(os.path.join(path, "manifest.json"))


def _formats_summary():
    return {
        "bundle_format_version": io.BUNDLE_FORMAT_VERSION,
        "images": ["png (8-bit RGB)", "pfm (grayscale, little-endian, bottom-up)"],
        "meshes": ["stl (binary and ascii)", "obj (v/f records)"],
        "tables": ["unit-load csv + json sidecar", "marker csv"],
        "scene_keys": list(io._SCENE_KEYS),
        "details": "see FORMATS.md",
    }


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gelsim",
        description="Calibratable optical and marker simulator for gel tactile sensors",
    )
    parser.add_argument("--version", action="version", version="gelsim " + _version())
    parser.add_argument(
        "--formats", action="store_true", help="print supported file formats as JSON and exit"
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("calibrate-optics", help="fit intensity tables from ball presses")
    p.add_argument("--records", required=True, help="directory with records.json and images")
    p.add_argument("--out", required=True, help="bundle directory to create or update")
    p.add_argument("--pitch-mm", type=float, default=None, help="pixel pitch for a new bundle")
    p.add_argument("--max-indent-mm", type=float, default=1.0)
    p.add_argument("--bins", type=int, default=optics.DEFAULT_BINS)
    p.add_argument("--theta-max", type=float, default=70.0, help="polar-angle range in degrees")
    p.add_argument("--min-samples", type=int, default=optics.DEFAULT_MIN_SAMPLES)
    p.add_argument("--lookup", action="store_true", help="also fit the lookup table")
    p.set_defaults(func=_cmd_calibrate_optics)

    p = sub.add_parser("calibrate-shadow", help="extract shadow masks from pin presses")
    p.add_argument("--records", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--detect-threshold", type=float, default=shadow.DEFAULT_DETECT_THRESHOLD)
    p.add_argument("--margin-px", type=float, default=shadow.DEFAULT_MARGIN_PX)
    p.set_defaults(func=_cmd_calibrate_shadow)

    p = sub.add_parser("calibrate-elastic", help="build the marker displacement kernel")
    p.add_argument("--bundle", required=True)
    p.add_argument("--fields", default=None, help="directory of measured unit-load CSVs")
    p.add_argument("--analytic", default=None, metavar="E,NU", help="half-space constants")
    p.add_argument("--radius", type=int, default=DEFAULT_RADIUS)
    p.add_argument("--node-step", type=int, default=DEFAULT_NODE_STEP)
    p.set_defaults(func=_cmd_calibrate_elastic)

    p = sub.add_parser("render", help="render a scene to a PNG")
    p.add_argument("--scene", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-shadow", action="store_true")
    p.add_argument("--table", choices=("auto", "poly", "lookup"), default="auto")
    p.add_argument("--heightmap", default=None, help="also write the height map as PFM")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("markers", help="simulate marker motion for a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True, help="marker CSV path")
    p.add_argument("--overlay", default=None, help="write an arrow overlay PNG")
    p.add_argument("--scale", type=float, default=DEFAULT_ARROW_SCALE)
    p.add_argument("--marker-spacing-mm", type=float, default=1.0)
    p.add_argument("--margin-mm", type=float, default=1.0)
    p.set_defaults(func=_cmd_markers)

    p = sub.add_parser("compare", help="image metrics between two PNGs")
    p.add_argument("reference")
    p.add_argument("candidate")
    p.add_argument("--crop", default=None, metavar="X,Y,W,H")
    p.add_argument("--diff", default=None, help="write an amplified difference PNG")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("bench", help="measure render throughput")
    p.add_argument("--bundle", required=True)
    p.add_argument("--frames", type=int, default=40)
    p.add_argument("--no-shadow", action="store_true")
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.formats:
        _emit(_formats_summary())
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except NumericalError as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 3
    except (SimulationError, OSError) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
