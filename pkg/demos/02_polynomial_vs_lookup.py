"""Why the polynomial table beats the per-bin lookup baseline.

Both models map (normal bin, pixel position) to RGB, but the lookup table
stores one constant per bin while the polynomial model lets intensity vary
quadratically across the image inside each bin.  When illumination is not
spatially uniform — which is the whole point of a multi-light tactile
sensor — the constant model smears that variation into bin-average error.

The demo fits both models on the same synthetic ball presses, renders a
held-out press with each, and scores them against the ground-truth image.
Outputs land in demos/out/polynomial_vs_lookup/.
"""

import pathlib

from gelsim import (
    SensorConfig,
    calibrate_lookup,
    calibrate_polytable,
    image_metrics,
    render_optics,
    save_png,
)
from gelsim.synth import (
    gradient_background,
    make_optics_dataset,
    planted_polytable,
    sphere_normal_map,
    sphere_press_record,
)

OUT = pathlib.Path(__file__).resolve().parent / "out" / "polynomial_vs_lookup"

SENSOR = SensorConfig(width_px=320, height_px=240, pixel_pitch_mm=0.03)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    background = gradient_background(SENSOR)
    truth_table = planted_polytable()

    print("== fit both models on the same %d synthetic ball presses" % 36)
    records = make_optics_dataset(
        truth_table,
        SENSOR,
        background,
        presses=((24, 3.0, 1.03), (12, 12.0, 0.056)),
        seed=7,
    )
    poly = calibrate_polytable(records, SENSOR)
    lookup = calibrate_lookup(records, SENSOR)

    print("== render a held-out press (new center, ball size, and depth)")
    center, radius_mm, depth_mm = (210.0, 88.0), 6.0, 0.9
    reference = sphere_press_record(
        truth_table, SENSOR, background, center, radius_mm, depth_mm
    ).image
    normals, _ = sphere_normal_map(SENSOR, center, radius_mm, depth_mm)
    save_png(OUT / "reference.png", reference)

    print("== score each model against the ground-truth image")
    for name, table in (("polynomial", poly), ("lookup", lookup)):
        rendered = render_optics(normals, table, background)
        save_png(OUT / ("%s.png" % name), rendered)
        scores = image_metrics(reference, rendered)
        print(
            "   %-10s  L1 %6.3f   MSE %8.3f   PSNR %6.2f dB   SSIM %.4f"
            % (name, scores["l1"], scores["mse"], scores["psnr"], scores["ssim"])
        )
    print("images written to %s" % OUT)


if __name__ == "__main__":
    main()
