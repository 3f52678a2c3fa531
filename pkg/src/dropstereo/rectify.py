"""Perspective rectification of drop imagery and Fresnel illuminance
compensation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import HeightField, OpticalConfig, RasterGray
from .errors import DomainError, EmptyOutput
from .raytrace import trace_field, _transmittance_from_cos_w
from .optics import fresnel_transmittance_arrays
from .stereo import DepthResult

_MAX_OUTPUT = 1024


@dataclass(frozen=True)
class RectifiedView:
    """Perspective-correct view through one drop.

    ``origin`` locates the output raster on the rectified pixel plane; the
    validity mask marks covered output pixels.  The view is generally not
    rectangular.
    """

    raster: RasterGray
    valid: np.ndarray
    plane_depth: float
    origin: tuple[float, float]
    scale: float
    transmittance: np.ndarray


def _resolve_depth(depth) -> float:
    if isinstance(depth, DepthResult):
        d = depth.depths[depth.valid]
        if d.size == 0:
            raise DomainError("depth result has no valid points")
        return float(np.median(d))
    d = float(depth)
    if d <= 0:
        raise DomainError("rectification depth must be positive")
    return d


def rectify_drop(image: RasterGray, hf: HeightField, config: OpticalConfig,
                 depth) -> RectifiedView:
    """Reproject drop pixels onto the plane at the given depth.

    ``depth`` is a scalar plane depth or a DepthResult (its median valid
    depth is used).  Each transmitted pixel's outbound ray is intersected
    with the plane and the hit reprojected through the pinhole onto the
    plate, where the rectified raster lives.
    """
    if image.pixels.shape != hf.mask.membership.shape:
        raise DomainError("image and height field must share the pixel grid")
    d = _resolve_depth(depth)
    tf = trace_field(hf, config)
    sel = tf.valid
    if not sel.any():
        raise EmptyOutput("no transmitted drop pixels to rectify")
    orig = tf.origins[sel]
    dirs = tf.directions[sel]
    t = (d - orig[:, 2]) / dirs[:, 2]
    hits_x = orig[:, 0] + t * dirs[:, 0]
    hits_y = orig[:, 1] + t * dirs[:, 1]
    if math.isinf(config.camera_z):
        px, py = hits_x, hits_y
    else:
        s = config.camera_z / (config.camera_z + d)
        px, py = hits_x * s, hits_y * s
    vals = image.pixels[sel]

    # robust window: grazing near-band rays land arbitrarily far out and
    # would stretch a strict bounding box to the size cap
    def robust_bounds(vals):
        q1, q25, q50, q75, q99 = np.percentile(vals, [1.0, 25.0, 50.0, 75.0, 99.0])
        spread = 2.0 * max(q75 - q25, 1.0)
        return float(max(q1, q50 - spread)), float(min(q99, q50 + spread))

    x0, x1 = robust_bounds(px)
    y0, y1 = robust_bounds(py)
    keep = (px >= x0) & (px <= x1) & (py >= y0) & (py <= y1)
    px, py, vals = px[keep], py[keep], vals[keep]
    span = max(x1 - x0, y1 - y0)
    if span <= 0 or px.size == 0:
        raise EmptyOutput("rectified hits collapse to a point")
    # output pitch follows the data density (about one hit per cell) so the
    # splat stays dense; never upsample, and honor the size cap
    cells = int(np.clip(math.ceil(1.3 * math.sqrt(px.size)), 64, _MAX_OUTPUT))
    scale = min(1.0, (cells - 1) / span, (_MAX_OUTPUT - 1) / span)
    w = int(math.floor((x1 - x0) * scale)) + 1
    h = int(math.floor((y1 - y0) * scale)) + 1

    fc = (px - x0) * scale
    fr = (py - y0) * scale
    acc = np.zeros((h, w))
    wgt = np.zeros((h, w))
    c0 = np.floor(fc).astype(int)
    r0 = np.floor(fr).astype(int)
    du = fc - c0
    dv = fr - r0
    for dr, dc, wq in ((0, 0, (1 - dv) * (1 - du)), (0, 1, (1 - dv) * du),
                       (1, 0, dv * (1 - du)), (1, 1, dv * du)):
        rr = np.clip(r0 + dr, 0, h - 1)
        cc = np.clip(c0 + dc, 0, w - 1)
        np.add.at(acc, (rr, cc), wq * vals)
        np.add.at(wgt, (rr, cc), wq)
    valid = wgt > 1e-9
    raster = np.where(valid, acc / np.where(valid, wgt, 1.0), 0.0)

    t_curved = _transmittance_from_cos_w(tf.cos_theta_w, config)
    _, _, t_flat = fresnel_transmittance_arrays(tf.theta_flat_air, config.n_air, config.n_water)
    tmap = np.where(sel, t_curved * t_flat, 0.0)
    return RectifiedView(RasterGray(raster), valid, d, (x0, y0), scale, tmap)


def compensate_illuminance(image: RasterGray, hf: HeightField,
                           config: OpticalConfig) -> tuple[RasterGray, np.ndarray]:
    """Divide each transmitted drop pixel by its two-interface transmittance.

    Returns (compensated raster, validity mask); dark-band pixels are invalid
    and keep their original intensity rather than being amplified.  Non-drop
    pixels are untouched.
    """
    if image.pixels.shape != hf.mask.membership.shape:
        raise DomainError("image and height field must share the pixel grid")
    tf = trace_field(hf, config)
    t_curved = _transmittance_from_cos_w(tf.cos_theta_w, config)
    _, _, t_flat = fresnel_transmittance_arrays(tf.theta_flat_air, config.n_air, config.n_water)
    total = t_curved * t_flat
    ok = tf.valid & (total > 1e-3)
    out = np.array(image.pixels)
    out[ok] = np.clip(out[ok] / total[ok], 0.0, 1.0)
    return RasterGray(out), ok
