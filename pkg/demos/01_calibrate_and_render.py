"""End-to-end walkthrough: calibrate every stage, bundle it, render a press.

A real sensor would supply the calibration recordings; here gelsim.synth
stands in for the hardware so the demo is self-contained.  The flow is the
same one the `gelsim` command drives:

    ball presses   -> intensity tables (polynomial + lookup baseline)
    pin presses    -> per-light shadow stencils
    unit loads     -> displacement influence kernel (analytic half-space)
    scene + bundle -> tactile image, height map, marker field

Outputs land in demos/out/calibrate_and_render/.
"""

import pathlib

from gelsim import (
    SensorConfig,
    calibrate_lookup,
    calibrate_polytable,
    calibrate_tensors,
    extract_shadow_masks,
    generate_halfspace_fields,
    save_bundle,
    save_mesh,
)
from gelsim.cli import main as gelsim_main
from gelsim.synth import (
    gradient_background,
    make_optics_dataset,
    make_shadow_records,
    make_sphere_mesh,
    planted_polytable,
    write_optics_dataset,
    write_shadow_dataset,
)

OUT = pathlib.Path(__file__).resolve().parent / "out" / "calibrate_and_render"

SENSOR = SensorConfig(width_px=320, height_px=240, pixel_pitch_mm=0.03)
YOUNG_MPA = 0.145
POISSON = 0.45


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    background = gradient_background(SENSOR)

    print("== 1. synthesize calibration recordings (stand-ins for the sensor)")
    truth = planted_polytable()
    balls = make_optics_dataset(
        truth,
        SENSOR,
        background,
        presses=((24, 3.0, 1.03), (12, 12.0, 0.056)),
        seed=7,
    )
    write_optics_dataset(OUT / "balls", balls, background, ball_radius_mm=3.0)
    pins = make_shadow_records(SENSOR, background, depths=(0.2, 0.4, 0.6))
    write_shadow_dataset(OUT / "pins", pins, background, pin_diameter_mm=1.0)
    print("   %d ball presses -> %s" % (len(balls), OUT / "balls"))
    print("   %d pin presses  -> %s" % (len(pins), OUT / "pins"))

    print("== 2. calibrate the three stages")
    poly = calibrate_polytable(balls, SENSOR)
    lookup = calibrate_lookup(balls, SENSOR)
    shadows = extract_shadow_masks(pins, SENSOR)
    fields = generate_halfspace_fields(
        YOUNG_MPA, POISSON, spacing_mm=4 * SENSOR.pixel_pitch_mm, extent_nodes=10
    )
    kernel = calibrate_tensors(fields, radius=10)
    calibrated = (poly.fill == 1).mean()
    print("   polynomial table: %.0f%% of bins calibrated directly" % (100 * calibrated))
    print("   shadow masks: %d depths per light" % len(shadows.masks[0]))
    print("   elastic kernel: radius %d nodes" % kernel.radius)

    print("== 3. save the calibration bundle")
    bundle_dir = OUT / "bundle"
    save_bundle(
        bundle_dir,
        sensor=SENSOR,
        poly=poly,
        lookup=lookup,
        shadows=shadows,
        kernel=kernel,
        background=background,
    )
    print("   -> %s" % bundle_dir)

    print("== 4. describe a scene and render it through the CLI entry point")
    save_mesh(OUT / "ball.stl", make_sphere_mesh(4.0))
    scene = OUT / "press.scene"
    scene.write_text(
        "mesh = ball.stl\n"
        "press_depth_mm = 0.6\n"
        "shear_x_mm = 0.06\n"
    )
    for extra, out_png in ((), "render.png"), (("--no-shadow",), "render_noshadow.png"):
        rc = gelsim_main(
            [
                "render",
                "--scene", str(scene),
                "--bundle", str(bundle_dir),
                "--out", str(OUT / out_png),
                "--heightmap", str(OUT / "render.pfm"),
                *extra,
            ]
        )
        assert rc == 0
    print("   tactile image, shadow-free variant, and height map written to %s" % OUT)


if __name__ == "__main__":
    main()
