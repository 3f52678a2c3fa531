"""Inverse raytracing through reconstructed drops, angular dewarping, and the
forward synthetic renderer used as ground truth.

Inverse rays run from the equivalent camera (below the plate at z = -C'_z)
up to a surface point, refract once at the curved water-air interface with
the tangential ratio n_w/n_a, and continue toward the scene at positive z.
Pixels whose refraction totally reflects form the dark band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .core import (DropMask, HeightField, MaskStencil, OpticalConfig, RasterGray, Vec3,
                   normal_field, plate_coords)
from .errors import BehindCamera, DomainError, EmptyOutput, TotalReflection
from .optics import (equivalent_camera_depth, fresnel_transmittance_arrays,
                     incidence_directions, refract_arrays)

_MIN_FORWARD_Z = 1e-9


class Ray(NamedTuple):
    """Origin plus unit direction."""

    origin: Vec3
    direction: Vec3


@dataclass(frozen=True)
class ScenePlane:
    """Fronto-parallel textured plane z = depth.

    ``scale`` is scene pixels per texture pixel, ``offset`` shifts the
    texture in scene coordinates.  ``x_min``/``x_max`` restrict the plane to
    a slab of scene X, letting a scene stack planes at different depths.
    """

    depth: float
    texture: np.ndarray
    scale: float = 1.0
    offset: tuple[float, float] = (0.0, 0.0)
    x_min: float | None = None
    x_max: float | None = None

    def __post_init__(self):
        tex = np.asarray(self.texture, dtype=float)
        if tex.ndim != 2 or tex.size == 0:
            raise DomainError("plane texture must be a non-empty 2D array")
        if self.depth <= 0.0 or self.scale <= 0.0:
            raise DomainError("plane depth and scale must be positive")
        object.__setattr__(self, "texture", np.clip(tex, 0.0, 1.0))

    def covers(self, x: np.ndarray) -> np.ndarray:
        ok = np.ones(np.shape(x), dtype=bool)
        if self.x_min is not None:
            ok &= x >= self.x_min
        if self.x_max is not None:
            ok &= x < self.x_max
        return ok

    def sample(self, x: np.ndarray, y: np.ndarray, border: float | None) -> np.ndarray:
        """Bilinear texture lookup at scene coordinates; ``border`` of None
        tiles the texture, otherwise out-of-texture hits take that value."""
        th, tw = self.texture.shape
        tx = (x - self.offset[0]) / self.scale + (tw - 1) / 2.0
        ty = (y - self.offset[1]) / self.scale + (th - 1) / 2.0
        if border is None:
            return _bilinear_wrap(self.texture, ty, tx)
        inside = (tx >= 0) & (tx <= tw - 1) & (ty >= 0) & (ty <= th - 1)
        val = _bilinear_wrap(self.texture, np.clip(ty, 0, th - 1), np.clip(tx, 0, tw - 1))
        return np.where(inside, val, border)


@dataclass(frozen=True)
class SceneSpec:
    """Synthetic scene: image size, textured planes, background defocus blur,
    and the small ambient leak that keeps dark bands from being pure black."""

    width: int
    height: int
    planes: tuple[ScenePlane, ...]
    blur_radius: float = 6.0
    ambient_leak: float = 0.02
    border: float | None = None

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise DomainError("scene raster must be non-empty")
        if not self.planes:
            raise DomainError("scene needs at least one plane")
        if self.blur_radius < 0:
            raise DomainError("blur radius must be non-negative")
        if not 0.0 <= self.ambient_leak <= 1.0:
            raise DomainError("ambient leak must be in [0, 1]")
        object.__setattr__(self, "planes", tuple(self.planes))


def _bilinear_wrap(tex: np.ndarray, fi: np.ndarray, fj: np.ndarray) -> np.ndarray:
    th, tw = tex.shape
    i0 = np.floor(fi).astype(int)
    j0 = np.floor(fj).astype(int)
    di = fi - i0
    dj = fj - j0
    i0m, i1m = i0 % th, (i0 + 1) % th
    j0m, j1m = j0 % tw, (j0 + 1) % tw
    return ((1 - di) * (1 - dj) * tex[i0m, j0m] + (1 - di) * dj * tex[i0m, j1m]
            + di * (1 - dj) * tex[i1m, j0m] + di * dj * tex[i1m, j1m])


# ---------------------------------------------------------------------------
# Inverse raytracing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceField:
    """Vectorized trace of every mask pixel.

    ``valid`` marks pixels with a transmitted, forward-going ray; the rest of
    the mask is in the dark band (or exits backward at grazing angles).
    """

    origins: np.ndarray       # (H, W, 3) surface points
    directions: np.ndarray    # (H, W, 3) outbound unit directions
    valid: np.ndarray         # (H, W) bool
    tir: np.ndarray           # (H, W) bool
    cos_theta_w: np.ndarray   # (H, W) water-side incidence cosine at the dome
    theta_flat_air: np.ndarray  # (H, W) air-side angle at the flat plate


def trace_field(hf: HeightField, config: OpticalConfig) -> TraceField:
    mask = hf.mask.membership
    x, y = plate_coords(mask.shape, config)
    r_i = incidence_directions(hf, config)
    normals = normal_field(hf, MaskStencil(mask))
    r_o, tir = refract_arrays(r_i, np.where(mask[..., None], normals, [0.0, 0.0, 1.0]),
                              config.eta)
    tir &= mask
    cos_w = np.abs(np.sum(r_i * normals, axis=-1))
    valid = mask & ~tir & (r_o[..., 2] > _MIN_FORWARD_Z)
    origins = np.stack([x, y, hf.z], axis=-1)
    if math.isinf(config.camera_z):
        theta_flat = np.zeros_like(x)
    else:
        theta_flat = np.arctan(np.hypot(x, y) / config.camera_z)
    return TraceField(origins, r_o, valid, tir, np.clip(cos_w, 0.0, 1.0), theta_flat)


def trace_drop_pixel(x_plate: Vec3, hf: HeightField, config: OpticalConfig) -> Ray:
    """Outbound scene ray for the mask pixel at plate point ``x_plate``.

    Raises TotalReflection for dark-band pixels and DomainError outside the
    mask.
    """
    cx, cy = config.resolve_principal_point(hf.mask.membership.shape)
    j = int(round(x_plate.x + cx))
    i = int(round(x_plate.y + cy))
    if not (0 <= i < hf.mask.height and 0 <= j < hf.mask.width and hf.mask.membership[i, j]):
        raise DomainError(f"plate point ({x_plate.x}, {x_plate.y}) is outside the drop mask")
    tf = trace_field(hf, config)
    if tf.tir[i, j]:
        raise TotalReflection(f"pixel ({i}, {j}) lies in the dark band")
    if not tf.valid[i, j]:
        raise BehindCamera(f"pixel ({i}, {j}) exits at a grazing or backward angle")
    return Ray(Vec3.from_array(tf.origins[i, j]), Vec3.from_array(tf.directions[i, j]))


def angular_project(ray: Ray) -> tuple[float, float]:
    """Perspective division of the outbound direction: (dx/dz, dy/dz)."""
    if ray.direction.z <= 0.0:
        raise BehindCamera("ray does not proceed toward the scene (z component <= 0)")
    return ray.direction.x / ray.direction.z, ray.direction.y / ray.direction.z


def uv_field(hf: HeightField, config: OpticalConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-pixel angular coordinates (u, v) plus validity for a whole drop."""
    tf = trace_field(hf, config)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = tf.directions[..., 0] / tf.directions[..., 2]
        v = tf.directions[..., 1] / tf.directions[..., 2]
    u = np.where(tf.valid, u, 0.0)
    v = np.where(tf.valid, v, 0.0)
    return u, v, tf.valid


# ---------------------------------------------------------------------------
# Angular dewarping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DewarpedImage:
    """Drop imagery resampled on a regular angular grid.

    ``source_ij`` maps each output cell back to the warped input pixel whose
    angular coordinates landed nearest to the cell center (-1 where no input
    pixel contributed); it realizes the inverse of the one-to-one angular
    map.
    """

    raster: RasterGray
    valid: np.ndarray
    u0: float
    v0: float
    du: float
    dv: float
    source_ij: np.ndarray  # (R, R, 2) int

    def uv_of(self, pu: float, pv: float) -> tuple[float, float]:
        """Angular coordinates of (column, row) positions on the grid."""
        return self.u0 + pu * self.du, self.v0 + pv * self.dv


def dewarp_image(image: RasterGray, hf: HeightField, config: OpticalConfig,
                 out_resolution: int = 256,
                 uv_bounds: tuple[float, float, float, float] | None = None) -> DewarpedImage:
    """Resample drop pixels onto a regular (u, v) grid by bilinear splatting.

    ``uv_bounds`` (u_min, u_max, v_min, v_max) must be shared by all drops
    that will be matched against each other; by default robust per-drop
    bounds are taken at the 2nd/98th percentiles to keep near-band grazing
    directions from dominating the grid.
    """
    if image.pixels.shape != hf.mask.membership.shape:
        raise DomainError("image and height field must share the pixel grid")
    if out_resolution < 8:
        raise DomainError("output resolution must be at least 8")
    u, v, valid = uv_field(hf, config)
    ii, jj = np.nonzero(valid)
    if ii.size == 0:
        raise EmptyOutput("no valid (non-dark, forward-going) drop pixels to dewarp")
    uu, vv = u[ii, jj], v[ii, jj]
    if uv_bounds is None:
        u_min, u_max = np.percentile(uu, [2.0, 98.0])
        v_min, v_max = np.percentile(vv, [2.0, 98.0])
    else:
        u_min, u_max, v_min, v_max = uv_bounds
    if not (u_max > u_min and v_max > v_min):
        raise EmptyOutput("degenerate angular extent")

    r = out_resolution
    du = (u_max - u_min) / (r - 1)
    dv = (v_max - v_min) / (r - 1)
    pu = (uu - u_min) / du
    pv = (vv - v_min) / dv
    inside = (pu >= 0) & (pu <= r - 1) & (pv >= 0) & (pv <= r - 1)
    pu, pv = pu[inside], pv[inside]
    src_i, src_j = ii[inside], jj[inside]
    vals = image.pixels[src_i, src_j]
    if pu.size == 0:
        raise EmptyOutput("no drop pixels fall inside the angular window")

    acc = np.zeros((r, r))
    wgt = np.zeros((r, r))
    c0 = np.floor(pu).astype(int)
    r0 = np.floor(pv).astype(int)
    fu = pu - c0
    fv = pv - r0
    for dr, dc, w in ((0, 0, (1 - fv) * (1 - fu)), (0, 1, (1 - fv) * fu),
                      (1, 0, fv * (1 - fu)), (1, 1, fv * fu)):
        rr = np.clip(r0 + dr, 0, r - 1)
        cc = np.clip(c0 + dc, 0, r - 1)
        np.add.at(acc, (rr, cc), w * vals)
        np.add.at(wgt, (rr, cc), w)

    valid_out = wgt > 1e-9
    raster = np.where(valid_out, acc / np.where(valid_out, wgt, 1.0), 0.0)

    # nearest-contributor table for mapping matches back to warped pixels
    cell_r = np.clip(np.rint(pv).astype(int), 0, r - 1)
    cell_c = np.clip(np.rint(pu).astype(int), 0, r - 1)
    cell = cell_r * r + cell_c
    dist = (pv - cell_r) ** 2 + (pu - cell_c) ** 2
    order = np.lexsort((dist, cell))
    cell_sorted = cell[order]
    first = np.ones(cell_sorted.size, dtype=bool)
    first[1:] = cell_sorted[1:] != cell_sorted[:-1]
    source = np.full((r * r, 2), -1, dtype=int)
    sel = order[first]
    source[cell[sel], 0] = src_i[sel]
    source[cell[sel], 1] = src_j[sel]
    source = source.reshape(r, r, 2)
    # spread to splat-covered cells lacking a direct contributor
    missing = valid_out & (source[..., 0] < 0)
    if missing.any():
        has = source[..., 0] >= 0
        if not has.any():
            raise EmptyOutput("dewarp produced no usable source table")
        idx = ndimage.distance_transform_edt(~has, return_distances=False, return_indices=True)
        source = source[idx[0], idx[1]]
        source[~valid_out] = -1

    return DewarpedImage(RasterGray(raster), valid_out, float(u_min), float(v_min),
                         float(du), float(dv), source)


# ---------------------------------------------------------------------------
# Forward synthetic renderer
# ---------------------------------------------------------------------------


def _background(scene: SceneSpec, config: OpticalConfig) -> np.ndarray:
    x, y = plate_coords((scene.height, scene.width), config)
    out = np.full((scene.height, scene.width), scene.border if scene.border is not None else 0.0)
    todo = np.ones_like(out, dtype=bool)
    for plane in scene.planes:
        if math.isinf(config.camera_z):
            hx, hy = x, y
        else:
            m = 1.0 + plane.depth / config.camera_z
            hx, hy = x * m, y * m
        sel = todo & plane.covers(hx)
        if sel.any():
            out[sel] = plane.sample(hx[sel], hy[sel], scene.border)
            todo &= ~sel
    return out


def _scene_hits(scene: SceneSpec, tf: TraceField) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Intersect traced rays with the scene: (value, hit_x, depth, hit mask)."""
    hx = np.zeros(tf.valid.shape)
    val = np.zeros(tf.valid.shape)
    dep = np.full(tf.valid.shape, np.nan)
    todo = tf.valid.copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        for plane in scene.planes:
            t = (plane.depth - tf.origins[..., 2]) / tf.directions[..., 2]
            px = tf.origins[..., 0] + t * tf.directions[..., 0]
            py = tf.origins[..., 1] + t * tf.directions[..., 1]
            sel = todo & (t > 0) & plane.covers(px)
            if sel.any():
                val[sel] = plane.sample(px[sel], py[sel], scene.border)
                hx[sel] = px[sel]
                dep[sel] = plane.depth
                todo &= ~sel
    hit = tf.valid & ~todo
    return val, hx, dep, hit


def render_synthetic(scene: SceneSpec, drops: list[tuple[DropMask, HeightField]],
                     config: OpticalConfig) -> RasterGray:
    """Render the scene through the given drops.

    Non-drop pixels show the defocus-blurred background; transmitted drop
    pixels carry the scene radiance times the Fresnel transmittance of both
    interfaces; dark-band pixels carry only the ambient leak.
    """
    bg = _background(scene, config)
    if scene.blur_radius > 0:
        bg = ndimage.gaussian_filter(bg, scene.blur_radius, mode="nearest")
    out = np.array(bg)
    for _, hf in drops:
        if hf.mask.membership.shape != (scene.height, scene.width):
            raise DomainError("drop grids must match the scene raster")
        if float(hf.z.max()) >= min(p.depth for p in scene.planes):
            raise DomainError("scene planes must lie behind every drop")
        tf = trace_field(hf, config)
        val, _, _, hit = _scene_hits(scene, tf)
        val = np.where(hit, val, scene.border if scene.border is not None else 0.0)
        t_curved = _transmittance_from_cos_w(tf.cos_theta_w, config)
        _, _, t_flat = fresnel_transmittance_arrays(tf.theta_flat_air, config.n_air,
                                                    config.n_water)
        # zero water thickness carries no drop optics; only wetted pixels
        # leave the background path
        wet = hf.mask.membership & (hf.z > 0.0)
        lit = tf.valid & wet
        out[wet & ~lit] = scene.ambient_leak
        out[lit] = (val * t_curved * t_flat)[lit]
    return RasterGray(np.clip(out, 0.0, 1.0))


def render_depth_truth(scene: SceneSpec, hf: HeightField,
                       config: OpticalConfig) -> np.ndarray:
    """Ground-truth scene depth per transmitted drop pixel (NaN elsewhere)."""
    tf = trace_field(hf, config)
    _, _, dep, hit = _scene_hits(scene, tf)
    return np.where(hit, dep, np.nan)


def _transmittance_from_cos_w(cos_w: np.ndarray, config: OpticalConfig) -> np.ndarray:
    """Curved-interface transmittance from the water-side incidence cosine."""
    sin_w = np.sqrt(np.clip(1.0 - cos_w**2, 0.0, 1.0))
    sin_a = config.eta * sin_w
    transmitted = sin_a < 1.0
    theta_a = np.arcsin(np.clip(sin_a, 0.0, 1.0 - 1e-12))
    theta_a = np.clip(theta_a, 0.0, math.pi / 2 - 1e-9)
    _, _, t = fresnel_transmittance_arrays(theta_a, config.n_air, config.n_water)
    return np.where(transmitted, t, 0.0)
