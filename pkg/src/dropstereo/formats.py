"""Bit-exact file I/O: PPM/PGM rasters, PFM float maps, JSON configs,
correspondence CSVs, and scene descriptions."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any

import numpy as np

from .core import DropMask, HeightField, OpticalConfig
from .errors import DomainError
from .solver import SolverParams


# ---------------------------------------------------------------------------
# PPM / PGM (binary P5 / P6, 8-bit, maxval 255)
# ---------------------------------------------------------------------------


def _read_pnm_header(data: bytes, path: str) -> tuple[bytes, int, int, int, int]:
    """Parse magic, width, height, maxval; returns payload offset too."""
    pos = 0
    tokens: list[bytes] = []
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DomainError(f"{path}: truncated PNM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    magic = tokens[0]
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise DomainError(f"{path}: malformed PNM header") from exc
    return magic, width, height, maxval, pos


def read_pnm(path: str | Path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) into floats in [0, 1].

    Returns (H, W) for P5 and (H, W, 3) for P6.  Only maxval 255 is
    supported.
    """
    data = Path(path).read_bytes()
    magic, width, height, maxval, offset = _read_pnm_header(data, str(path))
    if magic not in (b"P5", b"P6"):
        raise DomainError(f"{path}: unsupported PNM magic {magic!r} (need P5 or P6)")
    if maxval != 255:
        raise DomainError(f"{path}: unsupported maxval {maxval} (need 255)")
    channels = 1 if magic == b"P5" else 3
    count = width * height * channels
    if len(data) - offset < count:
        raise DomainError(f"{path}: payload has {len(data) - offset} bytes, expected {count}")
    raw = np.frombuffer(data, dtype=np.uint8, count=count, offset=offset)
    img = raw.astype(float) / 255.0
    return img.reshape(height, width) if channels == 1 else img.reshape(height, width, 3)


def write_pnm(path: str | Path, image: np.ndarray) -> None:
    """Write floats in [0, 1] as binary P5 (2D input) or P6 (H, W, 3)."""
    img = np.asarray(image, dtype=float)
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise DomainError("image must be (H, W) or (H, W, 3)")
    if not np.isfinite(img).all():
        raise DomainError("image must be finite")
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(data.tobytes())


def write_mask(path: str | Path, mask: DropMask) -> None:
    """Mask as a 0/255 PGM."""
    write_pnm(path, mask.membership.astype(float))


def read_mask(path: str | Path) -> DropMask:
    img = read_pnm(path)
    if img.ndim != 2:
        raise DomainError(f"{path}: mask must be grayscale (P5)")
    return DropMask(img > 0.5)


# ---------------------------------------------------------------------------
# PFM (grayscale, little-endian, bottom-to-top rows)
# ---------------------------------------------------------------------------


def read_pfm(path: str | Path) -> np.ndarray:
    """Read a grayscale little-endian PFM as float32 (NaN passes through)."""
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) < 4:
        raise DomainError(f"{path}: truncated PFM header")
    magic, dims, scale_s, payload = parts
    if magic.strip() == b"PF":
        raise DomainError(f"{path}: color PFM is unsupported (grayscale Pf only)")
    if magic.strip() != b"Pf":
        raise DomainError(f"{path}: not a PFM file")
    try:
        width, height = (int(t) for t in dims.split())
        scale = float(scale_s)
    except ValueError as exc:
        raise DomainError(f"{path}: malformed PFM header") from exc
    if scale >= 0:
        raise DomainError(f"{path}: big-endian PFM (scale {scale}) is unsupported")
    if len(payload) < 4 * width * height:
        raise DomainError(f"{path}: payload has {len(payload) // 4} floats, "
                          f"expected {width * height}")
    arr = np.frombuffer(payload, dtype="<f4", count=width * height)
    return np.flipud(arr.reshape(height, width)).copy()


def write_pfm(path: str | Path, values: np.ndarray) -> None:
    """Write a 2D float array as grayscale little-endian PFM (scale -1.0)."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise DomainError("PFM payload must be 2D")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n%d %d\n-1.0\n" % (w, h))
        f.write(np.flipud(arr).astype("<f4").tobytes())


def write_height_field(path: str | Path, hf: HeightField) -> None:
    """Height field as PFM with NaN marking non-member pixels."""
    write_pfm(path, np.where(hf.mask.membership, hf.z, np.nan))


def read_height_field(path: str | Path) -> HeightField:
    arr = read_pfm(path).astype(float)
    mask = DropMask(np.isfinite(arr) & ~np.isnan(arr))
    return HeightField(mask, np.nan_to_num(arr, nan=0.0))


# ---------------------------------------------------------------------------
# Pipeline configuration (JSON)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VolumeLoopParams:
    """Knobs of the varying-volume outer loop."""

    tau_r: float = 0.5
    inner_iters_per_update: int = 400
    max_outer_updates: int = 10
    alpha_init: float = 0.30
    rel_volume_tol: float = 1e-3
    alpha_min: float = 0.05
    alpha_max: float = 0.60
    min_ring_pixels: int = 8

    def __post_init__(self):
        for name in ("tau_r", "inner_iters_per_update", "max_outer_updates",
                     "alpha_init", "rel_volume_tol", "alpha_min", "alpha_max"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive")
        if not (self.alpha_min <= self.alpha_init <= self.alpha_max):
            raise DomainError(
                f"alpha_init {self.alpha_init} outside [{self.alpha_min}, {self.alpha_max}]")


@dataclass(frozen=True)
class DetectParams:
    """Edge-based drop detection knobs."""

    low_percentile: float = 70.0
    high_percentile: float = 90.0
    closing_radius: int = 5
    min_diameter: float = 300.0
    solidity_min: float = 0.85

    def __post_init__(self):
        if not 0 < self.low_percentile < self.high_percentile < 100:
            raise DomainError("percentiles must satisfy 0 < low < high < 100")
        if self.closing_radius < 0 or self.min_diameter <= 0:
            raise DomainError("closing_radius must be >= 0 and min_diameter > 0")
        if not 0 < self.solidity_min <= 1:
            raise DomainError("solidity_min must be in (0, 1]")


@dataclass(frozen=True)
class PipelineConfig:
    optics: OpticalConfig
    solver: SolverParams
    volume_loop: VolumeLoopParams
    detect: DetectParams


_SECTIONS = {
    "optics": OpticalConfig,
    "solver": SolverParams,
    "volume_loop": VolumeLoopParams,
    "detect": DetectParams,
}

_REQUIRED = {"optics": ("n_water", "camera_z")}


def default_config() -> PipelineConfig:
    return PipelineConfig(OpticalConfig(), SolverParams(), VolumeLoopParams(), DetectParams())


def _build_section(name: str, cls, payload: dict[str, Any]):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise DomainError(f"config section '{name}': unknown keys {unknown}")
    for key in _REQUIRED.get(name, ()):
        if key not in payload:
            raise DomainError(f"config section '{name}': missing required field '{key}'")
    kwargs = dict(payload)
    if name == "optics":
        for tup in ("gravity_cosines", "principal_point"):
            if kwargs.get(tup) is not None:
                kwargs[tup] = tuple(kwargs[tup])
    return cls(**kwargs)


def read_config(path: str | Path) -> PipelineConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DomainError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise DomainError(f"{path}: config must be a JSON object")
    unknown = sorted(set(doc) - set(_SECTIONS))
    if unknown:
        raise DomainError(f"{path}: unknown config sections {unknown}")
    if "optics" not in doc:
        raise DomainError(f"{path}: missing required section 'optics'")
    built = {}
    for name, cls in _SECTIONS.items():
        payload = doc.get(name, {})
        if not isinstance(payload, dict):
            raise DomainError(f"{path}: section '{name}' must be a JSON object")
        built[name] = _build_section(name, cls, payload)
    return PipelineConfig(**built)


def write_config(path: str | Path, config: PipelineConfig) -> None:
    doc = {name: asdict(getattr(config, name)) for name in _SECTIONS}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def config_schema() -> dict[str, Any]:
    """Field names, defaults, and required flags for every config section."""
    schema: dict[str, Any] = {}
    for name, cls in _SECTIONS.items():
        required = _REQUIRED.get(name, ())
        defaults = asdict(cls())
        schema[name] = {
            f.name: {"default": defaults[f.name], "required": f.name in required}
            for f in fields(cls)
        }
    return schema


# ---------------------------------------------------------------------------
# Correspondences (CSV)
# ---------------------------------------------------------------------------

CORRESPONDENCE_HEADER = ["drop_a", "i_a", "j_a", "drop_b", "i_b", "j_b", "score"]


def write_correspondences(path: str | Path, rows) -> None:
    """Rows of (drop_a, i_a, j_a, drop_b, i_b, j_b, score)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CORRESPONDENCE_HEADER)
        for r in rows:
            da, ia, ja, db, ib, jb, score = r
            writer.writerow([int(da), repr(float(ia)), repr(float(ja)),
                             int(db), repr(float(ib)), repr(float(jb)), repr(float(score))])


def read_correspondences(path: str | Path) -> list[tuple[int, float, float, int, float, float, float]]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DomainError(f"{path}: empty correspondence file") from None
        if [h.strip() for h in header] != CORRESPONDENCE_HEADER:
            raise DomainError(f"{path}: bad header {header!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 7:
                raise DomainError(f"{path}:{lineno}: expected 7 fields, got {len(row)}")
            try:
                da, ia, ja = int(row[0]), float(row[1]), float(row[2])
                db, ib, jb = int(row[3]), float(row[4]), float(row[5])
                score = float(row[6])
            except ValueError as exc:
                raise DomainError(f"{path}:{lineno}: {exc}") from exc
            if not 0.0 <= score <= 1.0:
                raise DomainError(f"{path}:{lineno}: score {score} outside [0, 1]")
            rows.append((da, ia, ja, db, ib, jb, score))
    return rows
