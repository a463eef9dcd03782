"""Procedural shape/image pairs standing in for rendered CAD data.

Five parametric classes (box, table, chair, cross, sphere) are drawn with
random extents and positions inside a 1-voxel margin. Each shape is paired
with a three-channel image of its orthographic occupancy projections along
x, y and z, upsampled to the encoder's input size. The y axis is "up".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .rng import RngStream
from .voxels import binvox_read, binvox_write

KINDS = ("box", "table", "chair", "cross", "sphere")
PLACEMENTS = ("center", "random")

# Fractions of the resolution; converted to voxel counts per dataset.
DEFAULT_RANGES: Dict[str, Tuple[float, float]] = {
    "extent": (0.25, 0.75),
    "leg_width": (0.0625, 0.125),
    "top_thickness": (0.0625, 0.125),
    "radius": (0.15, 0.4),
}


@dataclass
class SyntheticSpec:
    kinds: Tuple[str, ...] = KINDS
    ranges: Dict[str, Tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_RANGES))
    seed: int = 0
    fixed_extent: Optional[Tuple[int, int, int]] = None
    placement: str = "center"

    def __post_init__(self):
        if self.placement not in PLACEMENTS:
            raise ValueError(f"placement must be one of {PLACEMENTS}, got {self.placement!r}")


@dataclass
class ShapeItem:
    label: int
    kind: str
    grid: np.ndarray
    image: np.ndarray


def _voxels(ranges, key, res) -> Tuple[int, int]:
    lo, hi = ranges[key]
    a, b = max(1, int(round(lo * res))), max(1, int(round(hi * res)))
    if b > res - 2:
        raise ValueError(f"range {key}={ranges[key]} exceeds a {res}^3 grid with a 1-voxel margin")
    return a, max(a, b)


def _place(rng: RngStream, size: int, res: int, placement: str) -> int:
    """Start index of a ``size``-long run inside the 1-voxel margin."""
    if placement == "center":
        return (res - size) // 2
    return int(rng.integers(1, res - 1 - size + 1))


def _box(rng, res, ranges, fixed=None, placement="center"):
    g = np.zeros((res,) * 3, dtype=np.float32)
    if fixed is not None:
        ext = tuple(int(e) for e in fixed)
        if max(ext) > res - 2:
            raise ValueError(f"fixed extent {ext} exceeds a {res}^3 grid with a 1-voxel margin")
    else:
        lo, hi = _voxels(ranges, "extent", res)
        ext = tuple(int(rng.integers(lo, hi + 1)) for _ in range(3))
    o = [_place(rng, e, res, placement) for e in ext]
    g[o[0]:o[0] + ext[0], o[1]:o[1] + ext[1], o[2]:o[2] + ext[2]] = 1
    return g


def _legs(g, x0, x1, z0, z1, y0, y1, lw):
    for lx in (x0, x1 - lw):
        for lz in (z0, z1 - lw):
            g[lx:lx + lw, y0:y1, lz:lz + lw] = 1


def _table(rng, res, ranges, fixed=None, placement="center"):
    g = np.zeros((res,) * 3, dtype=np.float32)
    lo, hi = _voxels(ranges, "extent", res)
    wlo, whi = _voxels(ranges, "leg_width", res)
    tlo, thi = _voxels(ranges, "top_thickness", res)
    wx, wz = (int(rng.integers(max(lo, 3), hi + 1)) for _ in range(2))
    height = int(rng.integers(max(lo, 3), hi + 1))
    lw = int(rng.integers(wlo, min(whi, max(wlo, min(wx, wz) // 3)) + 1))
    th = int(rng.integers(tlo, min(thi, height - 1) + 1))
    x0, y0, z0 = (_place(rng, e, res, placement) for e in (wx, height, wz))
    top = y0 + height - th
    g[x0:x0 + wx, top:y0 + height, z0:z0 + wz] = 1
    _legs(g, x0, x0 + wx, z0, z0 + wz, y0, top, lw)
    return g


def _chair(rng, res, ranges, fixed=None, placement="center"):
    g = np.zeros((res,) * 3, dtype=np.float32)
    lo, hi = _voxels(ranges, "extent", res)
    wlo, whi = _voxels(ranges, "leg_width", res)
    tlo, thi = _voxels(ranges, "top_thickness", res)
    wx, wz = (int(rng.integers(max(lo, 3), hi + 1)) for _ in range(2))
    height = int(rng.integers(max(lo, 4), hi + 1))
    lw = int(rng.integers(wlo, min(whi, max(wlo, min(wx, wz) // 3)) + 1))
    th = int(rng.integers(tlo, min(thi, max(tlo, height // 4)) + 1))
    seat_y = max(1, height // 2 - th)
    x0, y0, z0 = (_place(rng, e, res, placement) for e in (wx, height, wz))
    s0 = y0 + seat_y
    g[x0:x0 + wx, s0:s0 + th, z0:z0 + wz] = 1
    _legs(g, x0, x0 + wx, z0, z0 + wz, y0, s0, lw)
    g[x0:x0 + wx, s0:y0 + height, z0:z0 + th] = 1
    return g


def _cross(rng, res, ranges, fixed=None, placement="center"):
    g = np.zeros((res,) * 3, dtype=np.float32)
    lo, hi = _voxels(ranges, "extent", res)
    wlo, whi = _voxels(ranges, "leg_width", res)
    arm = int(rng.integers(max(lo, 3), hi + 1))
    t = int(rng.integers(wlo, min(whi, max(wlo, arm // 3)) + 1))
    o = [_place(rng, arm, res, placement) for _ in range(3)]
    c = [oi + (arm - t) // 2 for oi in o]
    g[o[0]:o[0] + arm, c[1]:c[1] + t, c[2]:c[2] + t] = 1
    g[c[0]:c[0] + t, o[1]:o[1] + arm, c[2]:c[2] + t] = 1
    g[c[0]:c[0] + t, c[1]:c[1] + t, o[2]:o[2] + arm] = 1
    return g


def _sphere(rng, res, ranges, fixed=None, placement="center"):
    lo, hi = ranges["radius"]
    rmin, rmax = max(1.0, lo * res), min(hi * res, (res - 2) / 2.0)
    if rmin > rmax:
        raise ValueError(f"radius range {ranges['radius']} exceeds a {res}^3 grid")
    radius = float(rng.uniform(1, rmin, rmax)[0])
    span = int(np.floor(radius))
    if placement == "center":
        center = [(res - 1) / 2.0] * 3
    else:
        center = [float(rng.integers(1 + span, res - 1 - span)) for _ in range(3)]
    ax = np.arange(res, dtype=np.float64)
    d2 = ((ax[:, None, None] - center[0]) ** 2 + (ax[None, :, None] - center[1]) ** 2
          + (ax[None, None, :] - center[2]) ** 2)
    return (d2 <= radius * radius).astype(np.float32)


_BUILDERS = {"box": _box, "table": _table, "chair": _chair, "cross": _cross, "sphere": _sphere}


def make_shape(kind: str, rng: RngStream, res: int, ranges=None, fixed_extent=None,
               placement: str = "center") -> np.ndarray:
    """One shape; ``placement`` centers it in the grid or draws a random offset."""
    if kind not in _BUILDERS:
        raise ValueError(f"unknown shape kind {kind!r}; expected one of {KINDS}")
    if placement not in PLACEMENTS:
        raise ValueError(f"placement must be one of {PLACEMENTS}, got {placement!r}")
    return _BUILDERS[kind](rng, res, ranges or DEFAULT_RANGES, fixed_extent, placement)


def project(grid: np.ndarray, image_size: int) -> np.ndarray:
    """(3, S, S) orthographic occupancy projections along x, y and z."""
    res = grid.shape[0]
    if image_size % res:
        raise ValueError(f"image size {image_size} is not a multiple of resolution {res}")
    f = image_size // res
    views = np.stack([grid.max(axis=a) for a in range(3)])
    return np.repeat(np.repeat(views, f, axis=1), f, axis=2).astype(np.float32)


def make_synthetic_dataset(spec: SyntheticSpec, n: int, resolution: int, image_size: int) -> List[ShapeItem]:
    """``n`` shape/image pairs, classes assigned round-robin over ``spec.kinds``.

    Item ``i`` draws from its own stream derived from ``(spec.seed, i)``.
    """
    if n < 1:
        raise ValueError("dataset size must be >= 1")
    root = RngStream(spec.seed)
    items = []
    for i in range(n):
        label = i % len(spec.kinds)
        kind = spec.kinds[label]
        rng = root.child(f"item-{i}")
        grid = make_shape(kind, rng, resolution, spec.ranges, spec.fixed_extent, spec.placement)
        items.append(ShapeItem(label, kind, grid, project(grid, image_size)))
    return items


# -- on-disk datasets ----------------------------------------------------------

MANIFEST = "manifest.json"


def write_dataset(items: Sequence[ShapeItem], root, classes: Sequence[str]) -> Path:
    """Write shapes (binvox), images (.npy) and a manifest; returns the manifest path."""
    root = Path(root)
    (root / "shapes").mkdir(parents=True, exist_ok=True)
    (root / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, it in enumerate(items):
        shape_rel = f"shapes/{i:05d}.binvox"
        image_rel = f"images/{i:05d}.npy"
        (root / shape_rel).write_bytes(binvox_write(it.grid))
        np.save(root / image_rel, it.image.astype(np.float32), allow_pickle=False)
        entries.append({"id": i, "label": it.label, "class": it.kind, "shape": shape_rel, "image": image_rel})
    manifest = {
        "classes": list(classes),
        "resolution": int(items[0].grid.shape[0]),
        "image_size": int(items[0].image.shape[-1]),
        "items": entries,
    }
    path = root / MANIFEST
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def read_dataset(path) -> Tuple[List[ShapeItem], dict]:
    """Load a dataset from its directory or manifest path."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"dataset manifest not found: {path}")
    manifest = json.loads(path.read_text())
    root = path.parent
    items = []
    for e in manifest["items"]:
        grid = binvox_read((root / e["shape"]).read_bytes()).grid
        image = np.load(root / e["image"], allow_pickle=False)
        items.append(ShapeItem(int(e["label"]), e["class"], grid, image))
    return items, manifest
