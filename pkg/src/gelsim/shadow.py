"""Cast shadows: unit masks measured from pin presses, attached at render time.

Each of the three lights throws shadows in a roughly fixed image direction.
Pressing a thin pin to a known depth isolates one compact shadow per light;
the darkened region, expressed as an attenuation ratio (image / background),
becomes a unit mask anchored to the pin position.  At render time every
contact pixel that protrudes above its neighbor along a light's direction
stamps the unit mask of the closest calibrated depth, and overlapping stamps
multiply.
"""

import numpy as np
from dataclasses import dataclass

from .errors import CalibrationError, ConfigError

DEFAULT_HEIGHT_THRESHOLD = 0.05  # mm a caster must protrude above its neighbor
DEFAULT_DETECT_THRESHOLD = 10.0  # intensity drop that counts as shadow
DEFAULT_MARGIN_PX = 2.0  # exclusion ring around the pin contact


@dataclass
class PinPressRecord:
    """One pin press: shadowed image, clean background, pin position and depth."""

    image: np.ndarray
    background: np.ndarray
    center_px: tuple
    pin_diameter_mm: float
    depth_mm: float

    def __post_init__(self):
        self.image = np.asarray(self.image)
        self.background = np.asarray(self.background)
        for arr in (self.image, self.background):
            if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
                raise ConfigError("pin record images must be (H, W, 3) uint8")
        if self.image.shape != self.background.shape:
            raise ConfigError("image and background shapes differ")
        if not (self.pin_diameter_mm > 0):
            raise ConfigError("pin diameter must be positive")
        if not (self.depth_mm > 0):
            raise ConfigError("press depth must be positive")


@dataclass
class ShadowMask:
    """Unit attenuation stencil for one light at one press depth.

    attenuation holds image/background ratios in [0, 1]; offset is the (row,
    col) shift of attenuation[0, 0] relative to the casting pixel.
    """

    depth_mm: float
    attenuation: np.ndarray
    offset: tuple

    def __post_init__(self):
        self.attenuation = np.asarray(self.attenuation, dtype=np.float64)
        if self.attenuation.ndim != 2 or self.attenuation.size == 0:
            raise ConfigError("attenuation stencil must be a non-empty 2-D array")
        if self.attenuation.min() < 0 or self.attenuation.max() > 1:
            raise ConfigError("attenuation values must lie in [0, 1]")
        self.offset = (int(self.offset[0]), int(self.offset[1]))


@dataclass
class ShadowMaskSet:
    """Per-light shadow calibration: depth-sorted masks plus cast directions.

    masks[g] lists the ShadowMasks of light group g (= image channel g) in
    increasing depth order; directions[g] is that light's unit cast direction
    (dx along columns, dy along rows), held fixed when attaching.
    """

    masks: list
    directions: list
    depth_step_mm: float = 0.0

    def __post_init__(self):
        if len(self.masks) != 3 or len(self.directions) != 3:
            raise ConfigError("expected one mask list and direction per RGB light")
        for group in self.masks:
            depths = [m.depth_mm for m in group]
            if not group:
                raise ConfigError("every light group needs at least one mask")
            if any(b <= a for a, b in zip(depths, depths[1:])):
                raise ConfigError("masks must be sorted by strictly increasing depth")
        for d in self.directions:
            if abs(np.hypot(d[0], d[1]) - 1.0) > 1e-6:
                raise ConfigError("cast directions must be unit vectors")


def extract_shadow_masks(
    records,
    config,
    detect_threshold=DEFAULT_DETECT_THRESHOLD,
    margin_px=DEFAULT_MARGIN_PX,
):
    """Build a ShadowMaskSet from pin presses at two or more distinct depths.

    Per record and channel, pixels outside the pin contact (plus a safety
    ring) that are darker than the background by more than detect_threshold
    form the shadow; its bounding box becomes the stencil and its
    darkness-weighted centroid fixes the cast direction.
    """
    if len(records) < 2:
        raise ConfigError("need pin presses at two or more depths")
    depths = [rec.depth_mm for rec in records]
    if len(set(depths)) != len(depths):
        raise ConfigError("pin press depths must be distinct")
    height, width = config.height_px, config.width_px
    groups = [[], [], []]
    dir_sums = np.zeros((3, 2))
    for rec in sorted(records, key=lambda r: r.depth_mm):
        if rec.image.shape[:2] != (height, width):
            raise ConfigError("pin record image does not match the sensor size")
        if rec.depth_mm > config.max_indent_mm:
            raise ConfigError("pin depth exceeds the maximum indentation")
        cx, cy = float(rec.center_px[0]), float(rec.center_px[1])
        pin_r = rec.pin_diameter_mm / 2.0 / config.pixel_pitch_mm
        cols, rows = np.meshgrid(np.arange(width), np.arange(height))
        near_pin = (cols - cx) ** 2 + (rows - cy) ** 2 <= (pin_r + margin_px) ** 2
        img = rec.image.astype(np.float64)
        bg = rec.background.astype(np.float64)
        for g in range(3):
            dark = (bg[:, :, g] - img[:, :, g] > detect_threshold) & ~near_pin
            if not dark.any():
                continue
            weights = (bg[:, :, g] - img[:, :, g])[dark]
            vec = np.array(
                [
                    np.sum(weights * (cols[dark] - cx)),
                    np.sum(weights * (rows[dark] - cy)),
                ]
            )
            norm = np.linalg.norm(vec)
            if not norm > 0:
                raise CalibrationError("shadow direction undefined (symmetric darkening)")
            dir_sums[g] += vec / norm
            rr, cc = np.nonzero(dark)
            r0, r1, c0, c1 = rr.min(), rr.max(), cc.min(), cc.max()
            stencil = np.ones((r1 - r0 + 1, c1 - c0 + 1))
            ratio = img[:, :, g][dark] / np.maximum(bg[:, :, g][dark], 1.0)
            stencil[rr - r0, cc - c0] = np.clip(ratio, 0.0, 1.0)
            offset = (int(r0 - round(cy)), int(c0 - round(cx)))
            anchor = (-offset[0], -offset[1])
            if 0 <= anchor[0] < stencil.shape[0] and 0 <= anchor[1] < stencil.shape[1]:
                stencil[anchor] = 1.0  # the caster never shades itself
            groups[g].append(ShadowMask(rec.depth_mm, stencil, offset))
    directions = []
    for g in range(3):
        if not groups[g]:
            raise CalibrationError("light group %d produced no shadow mask" % g)
        norm = np.linalg.norm(dir_sums[g])
        if not norm > 0:
            raise CalibrationError("light group %d has no stable direction" % g)
        directions.append(tuple(dir_sums[g] / norm))
    steps = np.diff(sorted(depths))
    return ShadowMaskSet(groups, directions, float(np.median(steps)))


def shadow_attenuation(
    height_map,
    contact_mask,
    mask_set,
    height_threshold_mm=DEFAULT_HEIGHT_THRESHOLD,
):
    """Accumulate the per-channel attenuation map cast by a pressed surface.

    A contact pixel casts for light g when the surface one pixel along that
    light's direction is higher (less indented) by more than the threshold;
    the protrusion selects the nearest calibrated depth.  Stamps multiply
    where they overlap and casters keep their own cell at 1.  Traversal
    order is fixed (row-major) so output is exactly reproducible.
    """
    height_map = np.asarray(height_map, dtype=np.float64)
    contact_mask = np.asarray(contact_mask, dtype=bool)
    if height_map.ndim != 2 or contact_mask.shape != height_map.shape:
        raise ConfigError("height map and contact mask must be matching 2-D arrays")
    rows_n, cols_n = height_map.shape
    atten = np.ones((rows_n, cols_n, 3))
    for g in range(3):
        dx, dy = mask_set.directions[g]
        step_c, step_r = int(round(dx)), int(round(dy))
        pr0, pr1 = max(0, -step_r), rows_n - max(0, step_r)
        pc0, pc1 = max(0, -step_c), cols_n - max(0, step_c)
        prot = np.zeros((rows_n, cols_n))
        prot[pr0:pr1, pc0:pc1] = (
            height_map[pr0 + step_r : pr1 + step_r, pc0 + step_c : pc1 + step_c]
            - height_map[pr0:pr1, pc0:pc1]
        )
        casting = contact_mask & (prot > height_threshold_mm)
        if not casting.any():
            continue
        group = mask_set.masks[g]
        depths = np.array([m.depth_mm for m in group])
        mids = (depths[:-1] + depths[1:]) / 2.0
        rr, cc = np.nonzero(casting)
        pick = np.searchsorted(mids, prot[rr, cc])
        for r, c, k in zip(rr, cc, pick):
            mask = group[k]
            sh, sw = mask.attenuation.shape
            sr, sc = r + mask.offset[0], c + mask.offset[1]
            t0, l0 = max(sr, 0), max(sc, 0)
            t1, l1 = min(sr + sh, rows_n), min(sc + sw, cols_n)
            if t0 >= t1 or l0 >= l1:
                continue
            atten[t0:t1, l0:l1, g] *= mask.attenuation[t0 - sr : t1 - sr, l0 - sc : l1 - sc]
    return atten


def attach_shadows(
    image,
    height_map,
    contact_mask,
    mask_set,
    height_threshold_mm=DEFAULT_HEIGHT_THRESHOLD,
):
    """Stamp calibrated shadows onto a rendered image and return a new uint8 image."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ConfigError("image must be (H, W, 3) uint8")
    height_map = np.asarray(height_map, dtype=np.float64)
    if height_map.shape != image.shape[:2]:
        raise ConfigError("height map and mask must match the image size")
    atten = shadow_attenuation(height_map, contact_mask, mask_set, height_threshold_mm)
    return np.rint(image * np.clip(atten, 0.0, 1.0)).astype(np.uint8)
