"""Scene descriptions for the synthetic renderer: JSON loading, procedural
textures, and drop placement specs."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .core import DropMask
from .errors import DomainError
from .formats import read_pnm
from .masks import blob_mask, disk_mask
from .raytrace import ScenePlane, SceneSpec


def make_texture(kind: str, size: int = 256, period: int = 16, seed: int = 0,
                 low: float = 0.1, high: float = 0.9) -> np.ndarray:
    """Procedural grayscale texture: 'checker', 'noise', or 'stripes'."""
    if size < 2 or period < 1:
        raise DomainError("texture size and period must be positive")
    if kind == "checker":
        ii, jj = np.mgrid[0:size, 0:size]
        cells = ((ii // period) + (jj // period)) % 2
        return np.where(cells == 0, low, high)
    if kind == "stripes":
        jj = np.arange(size)
        col = np.where((jj // period) % 2 == 0, low, high)
        return np.tile(col, (size, 1))
    if kind == "noise":
        rng = np.random.default_rng(seed)
        cells = -(-size // period)  # ceil
        coarse = rng.uniform(low, high, size=(cells, cells))
        return np.kron(coarse, np.ones((period, period)))[:size, :size]
    raise DomainError(f"unknown texture kind '{kind}'")


@dataclass(frozen=True)
class DropSpec:
    """Placement and volume of one synthetic drop."""

    center: tuple[float, float]  # (i, j)
    radius: int
    alpha: float = 0.30
    irregularity: float = 0.0
    seed: int = 0

    def build_mask(self, shape: tuple[int, int]) -> DropMask:
        if self.irregularity > 0:
            return blob_mask(self.radius, shape, self.center, self.irregularity, self.seed)
        return disk_mask(self.radius, shape, self.center)


def _check_keys(obj: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise DomainError(f"{where}: unknown keys {unknown}")


def _load_texture(spec: Any, base_dir: Path) -> np.ndarray:
    if isinstance(spec, str):
        tex = read_pnm(base_dir / spec)
        return tex if tex.ndim == 2 else tex.mean(axis=2)
    if isinstance(spec, dict):
        _check_keys(spec, {"kind", "size", "period", "seed", "low", "high"}, "texture")
        return make_texture(**spec)
    raise DomainError("plane texture must be a file path or a generator object")


def read_scene(path: str | Path) -> tuple[SceneSpec, list[DropSpec]]:
    """Load a scene JSON: raster size, planes, and optional synthetic drops."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DomainError(f"{path}: invalid JSON ({exc})") from exc
    _check_keys(doc, {"width", "height", "planes", "blur_radius", "ambient_leak",
                      "border", "drops"}, str(path))
    for key in ("width", "height", "planes"):
        if key not in doc:
            raise DomainError(f"{path}: missing required field '{key}'")
    planes = []
    for k, pd in enumerate(doc["planes"]):
        _check_keys(pd, {"depth", "texture", "scale", "offset", "x_min", "x_max"},
                    f"{path}: planes[{k}]")
        if "depth" not in pd or "texture" not in pd:
            raise DomainError(f"{path}: planes[{k}] needs 'depth' and 'texture'")
        planes.append(ScenePlane(
            depth=float(pd["depth"]),
            texture=_load_texture(pd["texture"], path.parent),
            scale=float(pd.get("scale", 1.0)),
            offset=tuple(pd.get("offset", (0.0, 0.0))),
            x_min=pd.get("x_min"),
            x_max=pd.get("x_max"),
        ))
    scene = SceneSpec(
        width=int(doc["width"]), height=int(doc["height"]), planes=tuple(planes),
        blur_radius=float(doc.get("blur_radius", 6.0)),
        ambient_leak=float(doc.get("ambient_leak", 0.02)),
        border=doc.get("border"),
    )
    drops = []
    for k, dd in enumerate(doc.get("drops", [])):
        _check_keys(dd, {"center", "radius", "alpha", "irregularity", "seed"},
                    f"{path}: drops[{k}]")
        if "center" not in dd or "radius" not in dd:
            raise DomainError(f"{path}: drops[{k}] needs 'center' and 'radius'")
        drops.append(DropSpec(
            center=tuple(dd["center"]), radius=int(dd["radius"]),
            alpha=float(dd.get("alpha", 0.30)),
            irregularity=float(dd.get("irregularity", 0.0)),
            seed=int(dd.get("seed", 0)),
        ))
    return scene, drops
