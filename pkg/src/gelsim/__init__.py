"""Calibratable simulator for gel-pad optical tactile sensors.

Pipeline: press a mesh into the gel (geometry), shade the resulting normal
map with a calibrated intensity table (optics), stamp calibrated cast
shadows (shadow), and move the embedded marker layer with a calibrated
elastic tensor kernel (elastic).  io handles all file formats, metrics the
image/marker comparisons, synth the synthetic ground-truth generators, and
cli the command line driver.
"""

__version__ = "0.1.0"

from .errors import (
    CalibrationError,
    ConfigError,
    ContentError,
    InputRangeError,
    IntegrityError,
    NumericalError,
    ParseError,
    SimulationError,
)
from .geometry import (
    DEFAULT_PYRAMID,
    Pose,
    SensorConfig,
    TriangleMesh,
    compute_normals,
    dome_height_map,
    rasterize_press,
    smooth_pyramid,
)
from .optics import (
    CalibrationRecord,
    LookupTable,
    PolynomialTable,
    calibrate_lookup,
    calibrate_polytable,
    normal_to_bin,
    render_optics,
)
from .shadow import (
    PinPressRecord,
    ShadowMask,
    ShadowMaskSet,
    attach_shadows,
    extract_shadow_masks,
    shadow_attenuation,
)
from .elastic import (
    ActiveSet,
    DisplacementField,
    MarkerField,
    NodeGrid,
    TensorKernel,
    UnitLoadField,
    amend_active,
    calibrate_tensors,
    generate_halfspace_fields,
    marker_grid,
    node_grid_for,
    press_to_active,
    sample_markers,
    simulate_markers,
    superpose,
)
from .metrics import MarkerErrorReport, image_metrics, marker_errors
from .io import (
    Bundle,
    SceneSpec,
    load_bundle,
    load_markers_csv,
    load_mesh,
    load_optics_records,
    load_pfm,
    load_png,
    load_shadow_records,
    load_unit_field,
    load_unit_fields,
    parse_scene,
    save_bundle,
    save_markers_csv,
    save_mesh,
    save_pfm,
    save_png,
    save_unit_field,
)

__all__ = [name for name in dir() if not name.startswith("_")]
