"""Command line tests: a full calibrate/render/compare workflow on disk.

Subcommands run in-process through main(argv) so exit codes and JSON output
can be asserted directly; one test also spawns a real interpreter to confirm
the module entry point works outside the test harness.
"""

import json
import subprocess
import sys

import numpy as np
import pytest

from gelsim import SensorConfig, load_markers_csv, load_pfm, load_png, save_mesh
from gelsim.cli import main
from gelsim.synth import (
    gradient_background,
    make_optics_dataset,
    make_shadow_records,
    make_sphere_mesh,
    planted_polytable,
    write_optics_dataset,
    write_shadow_dataset,
)

BINS = 25
PITCH = 0.03


def _run(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Datasets, a scene, and a fully calibrated bundle built via the CLI."""
    root = tmp_path_factory.mktemp("cli")
    cfg = SensorConfig(width_px=320, height_px=240, pixel_pitch_mm=PITCH)
    table = planted_polytable(bins=BINS)
    background = gradient_background(cfg)
    records = make_optics_dataset(
        table, cfg, background, presses=((20, 3.0, 1.03), (10, 12.0, 0.056)), seed=7
    )
    write_optics_dataset(root / "presses", records, background, 3.0)
    shadow_records = make_shadow_records(cfg, background, depths=(0.3, 0.6))
    write_shadow_dataset(root / "pins", shadow_records, background, 1.0)
    save_mesh(root / "ball.stl", make_sphere_mesh(3.0))
    (root / "press.scene").write_text(
        "mesh = ball.stl\npress_depth_mm = 0.5\nshear_x_mm = 0.06\n"
    )
    bundle = root / "bundle"
    assert (
        main(
            [
                "calibrate-optics",
                "--records",
                str(root / "presses"),
                "--out",
                str(bundle),
                "--pitch-mm",
                str(PITCH),
                "--bins",
                str(BINS),
                "--lookup",
            ]
        )
        == 0
    )
    assert (
        main(["calibrate-shadow", "--records", str(root / "pins"), "--bundle", str(bundle)])
        == 0
    )
    assert (
        main(
            [
                "calibrate-elastic",
                "--bundle",
                str(bundle),
                "--analytic",
                "0.145,0.45",
                "--radius",
                "8",
            ]
        )
        == 0
    )
    return root


def test_version_flag_exits_cleanly(capsys):
    with pytest.raises(SystemExit) as err:
        main(["--version"])
    assert err.value.code == 0
    assert capsys.readouterr().out.startswith("gelsim ")


def test_formats_flag_prints_the_format_summary(capsys):
    code, out, _ = _run(capsys, ["--formats"])
    assert code == 0
    info = json.loads(out)
    assert info["bundle_format_version"] == 1
    assert "mesh" in info["scene_keys"]
    assert any(fmt.startswith("pfm") for fmt in info["images"])


def test_no_arguments_prints_usage_and_fails(capsys):
    code, _, err = _run(capsys, [])
    assert code == 2
    assert "usage" in err.lower()


def test_calibration_populated_the_bundle(workspace, capsys):
    code, out, _ = _run(
        capsys,
        [
            "calibrate-optics",
            "--records",
            str(workspace / "presses"),
            "--out",
            str(workspace / "bundle"),
            "--bins",
            str(BINS),
        ],
    )
    assert code == 0
    info = json.loads(out)
    assert info["records"] == 30
    # the 3 mm ball tilts to ~49 deg of the 70 deg range, so roughly 0.7
    assert 0.6 < info["calibrated_fraction"] <= 1.0


def test_render_writes_a_deterministic_png(workspace, capsys):
    argv = [
        "render",
        "--scene",
        str(workspace / "press.scene"),
        "--bundle",
        str(workspace / "bundle"),
        "--out",
        str(workspace / "r1.png"),
        "--heightmap",
        str(workspace / "r1.pfm"),
    ]
    code, out, _ = _run(capsys, argv)
    assert code == 0
    assert json.loads(out)["shadow"] is True
    argv[argv.index(str(workspace / "r1.png"))] = str(workspace / "r2.png")
    assert main(argv[: argv.index("--heightmap")]) == 0
    capsys.readouterr()
    first = (workspace / "r1.png").read_bytes()
    second = (workspace / "r2.png").read_bytes()
    assert first == second
    image = load_png(workspace / "r1.png")
    assert image.shape == (240, 320, 3)
    height = load_pfm(workspace / "r1.pfm")
    assert height.shape == (240, 320)
    assert height.min() == pytest.approx(-0.5, abs=1e-3)


def test_render_without_shadow_differs(workspace, capsys):
    code, _, _ = _run(
        capsys,
        [
            "render",
            "--scene",
            str(workspace / "press.scene"),
            "--bundle",
            str(workspace / "bundle"),
            "--out",
            str(workspace / "ns.png"),
            "--no-shadow",
            "--table",
            "lookup",
        ],
    )
    assert code == 0
    with_shadow = load_png(workspace / "r1.png")
    without = load_png(workspace / "ns.png")
    assert with_shadow.shape == without.shape
    assert np.any(with_shadow != without)


def test_markers_writes_csv_and_overlay(workspace, capsys):
    code, out, _ = _run(
        capsys,
        [
            "markers",
            "--scene",
            str(workspace / "press.scene"),
            "--bundle",
            str(workspace / "bundle"),
            "--out",
            str(workspace / "m.csv"),
            "--overlay",
            str(workspace / "m.png"),
        ],
    )
    assert code == 0
    info = json.loads(out)
    markers = load_markers_csv(workspace / "m.csv")
    assert info["markers"] == len(markers.positions_mm)
    moved = np.linalg.norm(markers.displacements_mm, axis=1)
    assert moved.max() > 0.01  # the press actually moved markers
    assert load_png(workspace / "m.png").shape == (240, 320, 3)


def test_compare_reports_metrics_and_inf_psnr(workspace, capsys):
    code, out, _ = _run(
        capsys, ["compare", str(workspace / "r1.png"), str(workspace / "r2.png")]
    )
    assert code == 0
    info = json.loads(out)
    assert info["psnr"] == "inf" and info["ssim"] == 1.0
    code, out, _ = _run(
        capsys,
        [
            "compare",
            str(workspace / "r1.png"),
            str(workspace / "ns.png"),
            "--crop",
            "40,30,160,120",
            "--diff",
            str(workspace / "d.png"),
        ],
    )
    assert code == 0
    info = json.loads(out)
    assert info["mse"] > 0 and isinstance(info["psnr"], float)
    assert (workspace / "d.png").exists()


def test_bench_reports_throughput(workspace, capsys):
    code, out, _ = _run(capsys, ["bench", "--bundle", str(workspace / "bundle"), "--frames", "3"])
    assert code == 0
    info = json.loads(out)
    assert info["frames"] == 3
    assert info["fps_render"] > 0 and info["fps_shadow"] > 0


def test_missing_input_fails_with_json_diagnostic(workspace, capsys):
    code, _, err = _run(
        capsys,
        [
            "render",
            "--scene",
            str(workspace / "missing.scene"),
            "--bundle",
            str(workspace / "bundle"),
            "--out",
            str(workspace / "x.png"),
        ],
    )
    assert code == 2
    diag = json.loads(err)
    assert "missing.scene" in diag["message"]


def test_bad_crop_arguments_fail(workspace, capsys):
    code, _, err = _run(
        capsys,
        ["compare", str(workspace / "r1.png"), str(workspace / "r2.png"), "--crop", "1,2,3"],
    )
    assert code == 2
    assert json.loads(err)["error"] == "ConfigError"


def test_corrupted_bundle_is_rejected(workspace, capsys, tmp_path):
    import shutil

    broken = tmp_path / "broken"
    shutil.copytree(workspace / "bundle", broken)
    payload = broken / "optics" / "poly.f32"
    blob = bytearray(payload.read_bytes())
    blob[40] ^= 0xFF
    payload.write_bytes(bytes(blob))
    code, _, err = _run(
        capsys,
        [
            "render",
            "--scene",
            str(workspace / "press.scene"),
            "--bundle",
            str(broken),
            "--out",
            str(tmp_path / "x.png"),
        ],
    )
    assert code == 2
    assert json.loads(err)["error"] == "IntegrityError"


def test_elastic_source_flags_are_exclusive(workspace, capsys):
    base = ["calibrate-elastic", "--bundle", str(workspace / "bundle")]
    code, _, err = _run(capsys, base)
    assert code == 2 and json.loads(err)["error"] == "ConfigError"
    code, _, err = _run(
        capsys, base + ["--analytic", "0.145,0.45", "--fields", str(workspace)]
    )
    assert code == 2
    code, _, err = _run(capsys, base + ["--analytic", "stiff"])
    assert code == 2 and "E_MPa" in json.loads(err)["message"]


def test_module_entry_point_runs_in_a_subprocess():
    proc = subprocess.run(
        [sys.executable, "-m", "gelsim.cli", "--formats"],
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["bundle_format_version"] == 1
