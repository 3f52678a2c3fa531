"""Refraction, total internal reflection, Fresnel transmittance, and the
dark-band geometry of a reconstructed drop.

Light reaching the camera crosses two interfaces: the curved water-air
surface of the drop and the flat plate.  The flat interface is folded into an
equivalent camera position on the optical axis, so a single refraction event
per ray remains.  Angles named ``theta_a`` are measured on the air side of an
interface, ``theta_w`` on the water side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import HeightField, MaskStencil, OpticalConfig, Vec3, gradient, plate_coords
from .errors import DomainError, TotalReflection


@dataclass(frozen=True)
class FresnelResult:
    """Transmittance fractions for the two polarizations and their mean."""

    T_s: float
    T_p: float
    T: float


@dataclass(frozen=True)
class DarkBandParams:
    """Critical normal-z threshold and the sampling half-width around it.

    The critical value and the half-width are distinct quantities even though
    the source material denotes both by the same symbol: ``n_crit`` is where
    total reflection starts (about 0.661 for an axial ray and the 3/4 index
    ratio), ``band_halfwidth`` is the N_z window sampled around it.
    """

    n_crit: float
    band_halfwidth: float = 0.02 * math.pi
    theta_cprime: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.n_crit < 1.0:
            raise DomainError("n_crit must be in (0, 1)")
        if self.band_halfwidth <= 0.0:
            raise DomainError("band_halfwidth must be positive")


def refract(direction: Vec3, normal: Vec3, eta_ratio: float) -> Vec3:
    """Bend a unit direction across an interface, scaling the tangential
    component by ``eta_ratio = n_from / n_to``.

    Raises TotalReflection when the scaled tangential component exceeds unit
    norm.  The sign of the normal is immaterial; the transmitted ray keeps
    the incoming ray's sense through the interface.
    """
    if not direction.is_unit():
        raise DomainError("direction must be a unit vector")
    if not normal.is_unit():
        raise DomainError("normal must be a unit vector")
    cos_i = direction.dot(normal)
    parallel = normal.scaled(cos_i)
    tangential = direction - parallel
    t_out = tangential.scaled(eta_ratio)
    t2 = t_out.dot(t_out)
    if t2 > 1.0:
        raise TotalReflection(f"tangential norm {math.sqrt(t2):.6f} exceeds 1")
    sign = 1.0 if cos_i >= 0.0 else -1.0
    out = t_out + normal.scaled(sign * math.sqrt(max(1.0 - t2, 0.0)))
    return out.unit()


def refract_arrays(directions: np.ndarray, normals: np.ndarray,
                   eta_ratio: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized refract over (..., 3) stacks: (out directions, TIR mask)."""
    cos_i = np.sum(directions * normals, axis=-1, keepdims=True)
    tang = directions - cos_i * normals
    t_out = eta_ratio * tang
    t2 = np.sum(t_out * t_out, axis=-1, keepdims=True)
    tir = t2[..., 0] > 1.0
    sign = np.where(cos_i >= 0.0, 1.0, -1.0)
    out = t_out + sign * np.sqrt(np.clip(1.0 - t2, 0.0, None)) * normals
    n = np.linalg.norm(out, axis=-1, keepdims=True)
    out = out / np.where(n > 0, n, 1.0)
    return out, tir


def fresnel_transmittance(theta_a: float, n_a: float, n_w: float) -> FresnelResult:
    """Unpolarized Fresnel transmittance of the air-water interface at the
    air-side incidence angle ``theta_a``."""
    t = fresnel_transmittance_arrays(np.asarray(theta_a, dtype=float), n_a, n_w)
    return FresnelResult(float(t[0]), float(t[1]), float(t[2]))


def fresnel_transmittance_arrays(theta_a: np.ndarray, n_a: float,
                                 n_w: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(T_s, T_p, T) for an array of air-side incidence angles."""
    ta = np.asarray(theta_a, dtype=float)
    if np.any(ta < 0.0) or np.any(ta >= math.pi / 2):
        raise DomainError("theta_a must lie in [0, pi/2)")
    tw = np.arcsin(np.clip((n_a / n_w) * np.sin(ta), -1.0, 1.0))
    small = ta < 1e-9
    ta_safe = np.where(small, 1e-3, ta)
    tw_safe = np.where(small, np.arcsin((n_a / n_w) * np.sin(1e-3)), tw)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_s = 1.0 - (np.sin(tw_safe - ta_safe) / np.sin(tw_safe + ta_safe)) ** 2
        tan_sum = np.tan(tw_safe + ta_safe)
        ratio_p = np.where(np.isfinite(tan_sum) & (np.abs(tan_sum) > 0),
                           np.tan(tw_safe - ta_safe) / tan_sum, 0.0)
        t_p = 1.0 - ratio_p**2
    # normal incidence: both polarizations share the closed-form limit
    t0 = 4.0 * n_a * n_w / (n_w + n_a) ** 2
    t_s = np.where(small, t0, t_s)
    t_p = np.where(small, t0, t_p)
    t_s = np.clip(t_s, 0.0, 1.0)
    t_p = np.clip(t_p, 0.0, 1.0)
    return t_s, t_p, 0.5 * (t_s + t_p)


def band_transmittance_linear(n_z: float, n_crit: float) -> float:
    """Linearized band transmittance 7.68 * (N_z - N_crit), clamped to [0, 1].

    Pixels below the critical value are inside the dark band and return 0.
    The 7.68 slope is the source model's given constant, kept as-is.
    """
    if n_z < n_crit:
        return 0.0
    return float(np.clip(7.68 * (n_z - n_crit), 0.0, 1.0))


def critical_normal_z(theta_cprime: float, n_a: float, n_w: float) -> float:
    """Normal-z threshold below which a pixel totally reflects, for a ray
    tilted ``theta_cprime`` from the optical axis."""
    if not 0.0 <= theta_cprime < math.pi / 2:
        raise DomainError("theta_cprime must lie in [0, pi/2)")
    arg = math.asin(n_a / n_w) + theta_cprime
    if arg >= math.pi / 2:
        return 0.0
    return math.cos(arg)


def equivalent_camera(camera: Vec3, x_plate: Vec3, n_a: float, n_w: float,
                      paraxial: bool = False) -> Vec3:
    """Virtual camera position absorbing the flat-interface refraction.

    ``camera`` is the on-axis pinhole at height ``z_c > 0`` over the plate
    ``z = 0``; ``x_plate`` is the point where the ray crosses the plate.  The
    exact form scales with the crossing radius; ``paraxial`` selects the
    small-angle approximation (n_w / n_a) * z_c.
    """
    z_c = camera.z
    if not z_c > 0.0:
        raise DomainError("camera must sit at positive height over the plate")
    eta = n_w / n_a
    if paraxial:
        return Vec3(camera.x, camera.y, eta * z_c)
    rho2 = (x_plate.x - camera.x) ** 2 + (x_plate.y - camera.y) ** 2
    factor = math.sqrt(1.0 + ((n_w**2 - n_a**2) / n_w**2) * rho2 / (z_c**2))
    return Vec3(camera.x, camera.y, eta * z_c * factor)


def equivalent_camera_depth(rho2: np.ndarray, config: OpticalConfig) -> np.ndarray:
    """Vectorized equivalent-camera distance for squared plate radii.

    Returns +inf for the camera-at-infinity mode.
    """
    if math.isinf(config.camera_z):
        return np.full(np.shape(rho2), np.inf)
    z_c = config.camera_z
    k = (config.n_water**2 - config.n_air**2) / config.n_water**2
    return config.eta * z_c * np.sqrt(1.0 + k * np.asarray(rho2, dtype=float) / z_c**2)


def incidence_directions(hf: HeightField, config: OpticalConfig) -> np.ndarray:
    """Unit in-water ray directions from the equivalent camera to every
    surface point, (H, W, 3); the camera sits at z = -C'_z below the plate
    so directions point toward the scene (positive z)."""
    x, y = plate_coords(hf.mask.membership.shape, config)
    if math.isinf(config.camera_z):
        d = np.zeros(hf.z.shape + (3,))
        d[..., 2] = 1.0
        return d
    cz = equivalent_camera_depth(x * x + y * y, config)
    d = np.stack([x, y, hf.z + cz], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def theta_cprime_field(hf: HeightField, config: OpticalConfig) -> np.ndarray:
    """Per-pixel angle between the incident in-water ray and the z axis."""
    d = incidence_directions(hf, config)
    return np.arccos(np.clip(d[..., 2], -1.0, 1.0))


def critical_normal_z_field(hf: HeightField, config: OpticalConfig) -> np.ndarray:
    """Per-pixel critical normal-z threshold from the equivalent camera."""
    arg = math.asin(config.n_air / config.n_water) + theta_cprime_field(hf, config)
    return np.where(arg < math.pi / 2, np.cos(arg), 0.0)


def dark_band_mask(hf: HeightField, config: OpticalConfig) -> np.ndarray:
    """Pixels predicted totally dark: N_z at or below the per-pixel critical
    value.  Returned as a boolean grid; a band may be empty or fragmented, so
    the single-component region invariant does not apply to it."""
    st = MaskStencil(hf.mask.membership)
    gx, gy = gradient(hf, st)
    n_z = 1.0 / np.sqrt(1.0 + gx * gx + gy * gy)
    dark = hf.mask.membership & (n_z <= critical_normal_z_field(hf, config))
    return dark


def normal_z_field(hf: HeightField, stencil: MaskStencil | None = None) -> np.ndarray:
    """N_z per pixel (1 outside the mask is suppressed to 0)."""
    gx, gy = gradient(hf, stencil)
    n_z = 1.0 / np.sqrt(1.0 + gx * gx + gy * gy)
    return np.where(hf.mask.membership, n_z, 0.0)
