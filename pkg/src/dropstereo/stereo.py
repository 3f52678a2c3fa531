"""Multi-view depth from drops: correspondence search on angular-dewarped
imagery, least-squares ray triangulation, and depth-map assembly."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import HeightField, OpticalConfig, RasterGray, Vec3
from .errors import DegenerateGeometry, DomainError, InsufficientMatches
from .raytrace import DewarpedImage, Ray, dewarp_image, trace_field, uv_field

_COND_LIMIT = 1e8


@dataclass(frozen=True)
class BlockMatchParams:
    window: int = 11
    search_radius: int = 24
    zncc_min: float = 0.7
    lr_tol: float = 1.0
    stride: int = 3
    min_matches: int = 8

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise DomainError("window must be odd and at least 3")
        if self.search_radius < 1 or self.stride < 1:
            raise DomainError("search_radius and stride must be positive")


@dataclass(frozen=True)
class Correspondence:
    """A matched point pair; pixel positions are sub-pixel (i, j) on the two
    warped drop images (the original image grid).

    Matches produced in-process also carry the angular coordinates of the
    match (``uv_a``/``uv_b``), which give the outbound ray directions without
    re-quantizing through the warped pixel grid; file-loaded correspondences
    leave them unset.
    """

    drop_a: int
    drop_b: int
    pixel_a: tuple[float, float]
    pixel_b: tuple[float, float]
    score: float
    uv_a: tuple[float, float] | None = None
    uv_b: tuple[float, float] | None = None


@dataclass(frozen=True)
class DepthResult:
    points: tuple[Vec3, ...]
    residuals: np.ndarray
    valid: np.ndarray
    depth_maps: tuple[np.ndarray, ...]
    correspondences: tuple[Correspondence, ...]

    @property
    def depths(self) -> np.ndarray:
        return np.array([p.z for p in self.points])


# ---------------------------------------------------------------------------
# ZNCC block matching
# ---------------------------------------------------------------------------


def _zncc_scores(patch: np.ndarray, region: np.ndarray, region_ok: np.ndarray) -> np.ndarray:
    """ZNCC of one template against every window of a search region.

    ``region_ok`` marks usable region pixels; windows touching an unusable
    pixel score -inf.
    """
    w = patch.shape[0]
    pz = patch - patch.mean()
    pn = np.sqrt((pz * pz).sum())
    wins = np.lib.stride_tricks.sliding_window_view(region, (w, w))
    ok = np.lib.stride_tricks.sliding_window_view(region_ok, (w, w)).all(axis=(2, 3))
    if pn < 1e-12:
        return np.full(wins.shape[:2], -np.inf)
    sums = wins.sum(axis=(2, 3))
    sumsq = (wins * wins).sum(axis=(2, 3))
    cross = np.tensordot(wins, pz, axes=([2, 3], [0, 1]))
    var = sumsq - sums * sums / (w * w)
    with np.errstate(invalid="ignore", divide="ignore"):
        score = cross / (pn * np.sqrt(np.maximum(var, 0.0)))
    score = np.where((var > 1e-12) & ok, score, -np.inf)
    return score


def _subpixel(score: np.ndarray, r: int, c: int) -> tuple[float, float]:
    """Parabolic refinement of an argmax on a score grid."""
    dr = dc = 0.0
    if 0 < r < score.shape[0] - 1:
        a, b, cc = score[r - 1, c], score[r, c], score[r + 1, c]
        den = a - 2 * b + cc
        if np.isfinite(a) and np.isfinite(cc) and den < -1e-12:
            dr = float(np.clip(0.5 * (a - cc) / den, -0.5, 0.5))
    if 0 < c < score.shape[1] - 1:
        a, b, cc = score[r, c - 1], score[r, c], score[r, c + 1]
        den = a - 2 * b + cc
        if np.isfinite(a) and np.isfinite(cc) and den < -1e-12:
            dc = float(np.clip(0.5 * (a - cc) / den, -0.5, 0.5))
    return dr, dc


def _global_shift(img_a: np.ndarray, ok_a: np.ndarray, img_b: np.ndarray,
                  ok_b: np.ndarray) -> tuple[int, int]:
    """Coarse whole-image alignment prior (row, col shift of a relative to b)
    via FFT cross-correlation of the mean-subtracted, validity-masked images.

    Drop views share scene content at an angular offset that can exceed the
    local search radius; centering the local search on this prior keeps the
    radius small.
    """
    a = np.where(ok_a, img_a - (img_a[ok_a].mean() if ok_a.any() else 0.0), 0.0)
    b = np.where(ok_b, img_b - (img_b[ok_b].mean() if ok_b.any() else 0.0), 0.0)
    if a.std() < 1e-9 or b.std() < 1e-9:
        return 0, 0
    fa = np.fft.rfft2(a)
    fb = np.fft.rfft2(b)
    cross = np.fft.irfft2(np.conj(fa) * fb, s=a.shape)
    overlap = np.fft.irfft2(np.conj(np.fft.rfft2(ok_a.astype(float)))
                            * np.fft.rfft2(ok_b.astype(float)), s=a.shape)
    min_overlap = 0.05 * max(ok_a.sum(), ok_b.sum())
    score = np.where(overlap >= max(min_overlap, 1.0), cross / np.maximum(overlap, 1.0),
                     -np.inf)
    peak = np.unravel_index(int(np.argmax(score)), score.shape)
    dr, dc = int(peak[0]), int(peak[1])
    if dr > a.shape[0] // 2:
        dr -= a.shape[0]
    if dc > a.shape[1] // 2:
        dc -= a.shape[1]
    return dr, dc


def _best_match(img_a: np.ndarray, ok_a: np.ndarray, img_b: np.ndarray, ok_b: np.ndarray,
                ra: int, ca: int, params: BlockMatchParams,
                prior: tuple[int, int] = (0, 0)) -> tuple[float, float, float] | None:
    """Best sub-pixel position in b for the window of a at (ra, ca), searched
    around (ra, ca) + prior."""
    hw = params.window // 2
    rad = params.search_radius
    h, w = img_b.shape
    if not ok_a[ra - hw : ra + hw + 1, ca - hw : ca + hw + 1].all():
        return None
    patch = img_a[ra - hw : ra + hw + 1, ca - hw : ca + hw + 1]
    rc, cc = ra + prior[0], ca + prior[1]
    r0, r1 = rc - rad - hw, rc + rad + hw + 1
    c0, c1 = cc - rad - hw, cc + rad + hw + 1
    if r0 < 0 or c0 < 0 or r1 > h or c1 > w:
        pad_r0, pad_c0 = max(-r0, 0), max(-c0, 0)
        region = np.zeros((r1 - r0, c1 - c0))
        region_ok = np.zeros((r1 - r0, c1 - c0), dtype=bool)
        rr0, cc0 = max(r0, 0), max(c0, 0)
        rr1, cc1 = min(r1, h), min(c1, w)
        region[pad_r0 : pad_r0 + rr1 - rr0, pad_c0 : pad_c0 + cc1 - cc0] = img_b[rr0:rr1, cc0:cc1]
        region_ok[pad_r0 : pad_r0 + rr1 - rr0, pad_c0 : pad_c0 + cc1 - cc0] = ok_b[rr0:rr1, cc0:cc1]
    else:
        region = img_b[r0:r1, c0:c1]
        region_ok = ok_b[r0:r1, c0:c1]
    score = _zncc_scores(patch, region, region_ok)
    best = np.unravel_index(int(np.argmax(score)), score.shape)
    s = score[best]
    if not np.isfinite(s) or s < params.zncc_min:
        return None
    dr, dc = _subpixel(score, *best)
    rb = rc - rad + best[0] + dr
    cb = cc - rad + best[1] + dc
    return rb, cb, float(s)


def match_grids(img_a: np.ndarray, ok_a: np.ndarray, img_b: np.ndarray, ok_b: np.ndarray,
                params: BlockMatchParams) -> list[tuple[float, float, float, float, float]]:
    """Grid-sampled ZNCC matches (ra, ca, rb, cb, score) with left-right
    consistency filtering; the local search is centered on a coarse global
    alignment prior."""
    hw = params.window // 2
    prior = _global_shift(img_a, ok_a, img_b, ok_b)
    rprior = (-prior[0], -prior[1])
    out = []
    for ra in range(hw, img_a.shape[0] - hw, params.stride):
        for ca in range(hw, img_a.shape[1] - hw, params.stride):
            fwd = _best_match(img_a, ok_a, img_b, ok_b, ra, ca, params, prior)
            if fwd is None:
                continue
            rb, cb, score = fwd
            rbi, cbi = int(round(rb)), int(round(cb))
            if not (hw <= rbi < img_b.shape[0] - hw and hw <= cbi < img_b.shape[1] - hw):
                continue
            back = _best_match(img_b, ok_b, img_a, ok_a, rbi, cbi, params, rprior)
            if back is None:
                continue
            if abs(back[0] - ra) > params.lr_tol + abs(rb - rbi) or \
               abs(back[1] - ca) > params.lr_tol + abs(cb - cbi):
                continue
            out.append((float(ra), float(ca), rb, cb, score))
    return out


def block_match(dewarped_a, dewarped_b, params: BlockMatchParams | None = None,
                drop_a: int = 0, drop_b: int = 1) -> list[Correspondence]:
    """Correspondences between two drop views.

    Accepts DewarpedImage objects (matches run on the angular grids and map
    back to warped pixels through the forward-map table) or plain RasterGray
    images (positions are reported on the given grids directly).
    """
    p = params or BlockMatchParams()
    if isinstance(dewarped_a, DewarpedImage):
        img_a, ok_a = dewarped_a.raster.pixels, dewarped_a.valid
        img_b, ok_b = dewarped_b.raster.pixels, dewarped_b.valid
    else:
        img_a, ok_a = dewarped_a.pixels, np.ones_like(dewarped_a.pixels, dtype=bool)
        img_b, ok_b = dewarped_b.pixels, np.ones_like(dewarped_b.pixels, dtype=bool)
    raw = match_grids(img_a, ok_a, img_b, ok_b, p)
    matches = []
    for ra, ca, rb, cb, score in raw:
        if isinstance(dewarped_a, DewarpedImage):
            ia, ja = dewarped_a.source_ij[int(round(ra)), int(round(ca))]
            ib, jb = dewarped_b.source_ij[int(round(rb)), int(round(cb))]
            if ia < 0 or ib < 0:
                continue
            matches.append(Correspondence(drop_a, drop_b, (float(ia), float(ja)),
                                          (float(ib), float(jb)), min(score, 1.0),
                                          uv_a=dewarped_a.uv_of(ca, ra),
                                          uv_b=dewarped_b.uv_of(cb, rb)))
        else:
            matches.append(Correspondence(drop_a, drop_b, (ra, ca), (rb, cb),
                                          min(score, 1.0)))
    if len(matches) < p.min_matches:
        raise InsufficientMatches(f"{len(matches)} matches survive "
                                  f"(need {p.min_matches})")
    return matches


# ---------------------------------------------------------------------------
# Triangulation
# ---------------------------------------------------------------------------


def triangulate(rays: list[Ray]) -> tuple[Vec3, float]:
    """Point minimizing the sum of squared distances to the rays.

    Solves [sum (I - d d^T)] p = sum (I - d d^T) x with a conditioning guard.
    """
    if len(rays) < 2:
        raise DomainError("triangulation needs at least two rays")
    a = np.zeros((3, 3))
    b = np.zeros(3)
    for ray in rays:
        d = ray.direction.as_array()
        if abs(np.linalg.norm(d) - 1.0) > 1e-6:
            raise DomainError("ray directions must be unit vectors")
        m = np.eye(3) - np.outer(d, d)
        a += m
        b += m @ ray.origin.as_array()
    if np.linalg.cond(a) > _COND_LIMIT:
        raise DegenerateGeometry("rays are (near-)parallel; normal matrix ill-conditioned")
    p = np.linalg.solve(a, b)
    residual = 0.0
    for ray in rays:
        d = ray.direction.as_array()
        v = p - ray.origin.as_array()
        residual += float(v @ v - (d @ v) ** 2)
    return Vec3.from_array(p), max(residual, 0.0)


# ---------------------------------------------------------------------------
# Depth assembly
# ---------------------------------------------------------------------------


def _as_fields(drops) -> list[HeightField]:
    fields = []
    for d in drops:
        fields.append(d if isinstance(d, HeightField) else d[1])
    return fields


def depth_from_drops(image: RasterGray, drops, config: OpticalConfig,
                     correspondences: list[Correspondence] | None = None,
                     match_params: BlockMatchParams | None = None,
                     out_resolution: int | None = None,
                     outlier_factor: float = 3.0) -> DepthResult:
    """Triangulate scene points seen through two or more drops.

    Without precomputed correspondences, every drop is angular-dewarped on a
    shared (u, v) window and drop pairs are block-matched.  The dewarp
    resolution defaults to the drop pixel density (about one input pixel per
    angular cell) so the matching windows stay free of splat holes.  Matched
    warped pixels are traced back through their drops and triangulated;
    points whose residual exceeds ``outlier_factor`` times the median are
    flagged invalid.
    """
    fields = _as_fields(drops)
    if len(fields) < 2:
        raise DomainError("stereo needs at least two reconstructed drops")

    if correspondences is None:
        bounds = _shared_uv_bounds(fields, config)
        if out_resolution is None:
            densest = max(int(hf.mask.area) for hf in fields)
            out_resolution = int(np.clip(round(math.sqrt(densest)), 48, 256))
        views = [dewarp_image(image, hf, config, out_resolution, bounds) for hf in fields]
        correspondences = []
        for a in range(len(fields)):
            for b in range(a + 1, len(fields)):
                try:
                    correspondences.extend(
                        block_match(views[a], views[b], match_params, drop_a=a, drop_b=b))
                except InsufficientMatches:
                    continue
        if len(correspondences) < (match_params or BlockMatchParams()).min_matches:
            raise InsufficientMatches(
                f"only {len(correspondences)} correspondences across all drop pairs")

    traces = [trace_field(hf, config) for hf in fields]
    points: list[Vec3] = []
    residuals: list[float] = []
    kept: list[Correspondence] = []
    for corr in correspondences:
        rays = []
        for drop_id, (pi, pj), uv in ((corr.drop_a, corr.pixel_a, corr.uv_a),
                                      (corr.drop_b, corr.pixel_b, corr.uv_b)):
            if not 0 <= drop_id < len(fields):
                raise DomainError(f"correspondence names unknown drop {drop_id}")
            tf = traces[drop_id]
            i, j = int(round(pi)), int(round(pj))
            if not (0 <= i < tf.valid.shape[0] and 0 <= j < tf.valid.shape[1]) \
                    or not tf.valid[i, j]:
                rays = []
                break
            origin = Vec3.from_array(tf.origins[i, j])
            if uv is not None:
                # the matched angular coordinates give the direction exactly,
                # avoiding re-quantization through the warped pixel grid
                direction = Vec3(uv[0], uv[1], 1.0).unit()
            else:
                direction = Vec3.from_array(tf.directions[i, j])
            rays.append(Ray(origin, direction))
        if len(rays) < 2:
            continue
        try:
            p, res = triangulate(rays)
        except DegenerateGeometry:
            continue
        points.append(p)
        residuals.append(res)
        kept.append(corr)

    if not points:
        raise DegenerateGeometry("no correspondence produced a well-conditioned triangulation")

    res = np.array(residuals)
    med = float(np.median(res))
    valid = res <= outlier_factor * med if med > 0 else np.ones(res.size, dtype=bool)

    shape = fields[0].mask.membership.shape
    depth_maps = [np.full(shape, np.nan) for _ in fields]
    for corr, p, ok in zip(kept, points, valid):
        if not ok:
            continue
        for drop_id, (pi, pj) in ((corr.drop_a, corr.pixel_a), (corr.drop_b, corr.pixel_b)):
            depth_maps[drop_id][int(round(pi)), int(round(pj))] = p.z

    return DepthResult(tuple(points), res, valid, tuple(depth_maps), tuple(kept))


def _shared_uv_bounds(fields: list[HeightField], config: OpticalConfig
                      ) -> tuple[float, float, float, float]:
    """Robust angular window covering every drop's forward map."""
    u_lo, u_hi, v_lo, v_hi = [], [], [], []
    for hf in fields:
        u, v, valid = uv_field(hf, config)
        if not valid.any():
            raise DomainError("a drop has no valid transmitted pixels")
        uu, vv = u[valid], v[valid]
        lo, hi = np.percentile(uu, [2.0, 98.0])
        u_lo.append(lo)
        u_hi.append(hi)
        lo, hi = np.percentile(vv, [2.0, 98.0])
        v_lo.append(lo)
        v_hi.append(hi)
    return float(min(u_lo)), float(max(u_hi)), float(min(v_lo)), float(max(v_hi))
