"""Drop detection: in-focus drops stand out as strong edge clusters against
the defocus-blurred background."""

from __future__ import annotations

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError

from .core import DropMask, RasterGray
from .formats import DetectParams

_FOUR = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def _disk(radius: int) -> np.ndarray:
    if radius < 1:
        return np.ones((1, 1), dtype=bool)
    n = 2 * radius + 1
    ii, jj = np.mgrid[0:n, 0:n] - radius
    return ii * ii + jj * jj <= radius * radius


def _solidity(component: np.ndarray) -> float:
    """Pixel area over convex hull area (hull of the pixel squares)."""
    ii, jj = np.nonzero(component)
    area = ii.size
    if area < 9:
        return 0.0
    corners = np.concatenate([
        np.stack([ii - 0.5, jj - 0.5], axis=1), np.stack([ii - 0.5, jj + 0.5], axis=1),
        np.stack([ii + 0.5, jj - 0.5], axis=1), np.stack([ii + 0.5, jj + 0.5], axis=1)])
    try:
        hull_area = ConvexHull(corners).volume
    except QhullError:
        return 0.0
    return float(area / hull_area) if hull_area > 0 else 0.0


def detect_drops(image: RasterGray, params: DetectParams | None = None) -> list[DropMask]:
    """Locate drop regions; returns an empty list when nothing qualifies.

    Gradient-magnitude edges are kept by percentile hysteresis, closed and
    hole-filled into candidate regions, then filtered by solidity (drops are
    convex) and equivalent diameter.
    """
    p = params or DetectParams()
    img = image.pixels
    gx = ndimage.sobel(img, axis=1)
    gy = ndimage.sobel(img, axis=0)
    mag = np.hypot(gx, gy)
    lo = np.percentile(mag, p.low_percentile)
    hi = np.percentile(mag, p.high_percentile)
    if hi <= 0:
        return []
    strong = mag >= hi
    weak = mag >= lo
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return []
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(labels[strong])] = True
    keep[0] = False
    edges = keep[labels]

    if p.closing_radius > 0:
        edges = ndimage.binary_closing(edges, structure=_disk(p.closing_radius),
                                       iterations=1)
    filled = ndimage.binary_fill_holes(edges)

    comp_labels, n = ndimage.label(filled, structure=_FOUR)
    out: list[DropMask] = []
    for k in range(1, n + 1):
        comp = comp_labels == k
        area = int(comp.sum())
        diameter = 2.0 * np.sqrt(area / np.pi)
        if diameter < p.min_diameter:
            continue
        if _solidity(comp) < p.solidity_min:
            continue
        out.append(DropMask(comp))
    # stable reading order: left-to-right, then top-to-bottom
    out.sort(key=lambda m: (m.bbox()[2], m.bbox()[0]))
    return out
