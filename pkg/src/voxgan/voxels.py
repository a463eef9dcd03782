"""Voxel grid I/O and geometry: binvox, resampling, components, OBJ export.

Grids are cubic numpy arrays indexed ``grid[x, y, z]`` with values in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from . import kernels

THRESHOLD = 0.5


class BinvoxError(ValueError):
    pass


def check_grid(grid: np.ndarray) -> np.ndarray:
    grid = np.asarray(grid)
    if grid.ndim != 3 or len(set(grid.shape)) != 1:
        raise ValueError(f"voxel grid must be cubic, got shape {grid.shape}")
    if grid.size and (grid.min() < 0 or grid.max() > 1):
        raise ValueError("voxel values must lie in [0, 1]")
    return grid


def binarize(grid: np.ndarray, threshold: float = THRESHOLD) -> np.ndarray:
    """Occupancy mask: voxels strictly above ``threshold``."""
    return np.asarray(grid) > threshold


def iou(a: np.ndarray, b: np.ndarray, threshold: float = THRESHOLD) -> float:
    """Intersection over union of two binarized grids (1.0 when both are empty)."""
    ma, mb = binarize(a, threshold), binarize(b, threshold)
    union = np.count_nonzero(ma | mb)
    if union == 0:
        return 1.0
    return np.count_nonzero(ma & mb) / union


# -- binvox ----------------------------------------------------------------

@dataclass
class Binvox:
    grid: np.ndarray
    translate: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: float = 1.0


def _fmt(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)


def binvox_read(data: bytes) -> Binvox:
    """Parse a binvox file. Voxel order on disk is x, then z, then y fastest."""
    lines = []
    pos = 0
    while len(lines) < 5:
        end = data.find(b"\n", pos)
        if end < 0:
            raise BinvoxError("header ended before the 'data' line")
        lines.append(data[pos:end].decode("ascii", "replace").strip())
        pos = end + 1
        if lines[-1] == "data":
            break
    if not lines[0].startswith("#binvox"):
        raise BinvoxError("bad magic: missing '#binvox'")
    fields = {}
    for line in lines[1:]:
        parts = line.split()
        if parts:
            fields[parts[0]] = parts[1:]
    if "data" not in fields or "dim" not in fields:
        raise BinvoxError("header lacks 'dim' or 'data'")
    try:
        dims = [int(v) for v in fields["dim"]]
        translate = tuple(float(v) for v in fields.get("translate", ["0", "0", "0"]))
        scale = float(fields.get("scale", ["1"])[0])
    except ValueError as exc:
        raise BinvoxError(f"malformed header: {exc}") from None
    if len(dims) != 3 or len(set(dims)) != 1 or dims[0] < 1:
        raise BinvoxError(f"only cubic grids are supported, got dim {dims}")
    d = dims[0]
    raw = np.frombuffer(data[pos:], dtype=np.uint8)
    if raw.size % 2:
        raise BinvoxError("run-length payload has odd length")
    values, counts = raw[0::2], raw[1::2]
    if np.any(counts == 0):
        raise BinvoxError("run-length count of 0")
    if np.any(values > 1):
        raise BinvoxError("run-length value must be 0 or 1")
    total = int(counts.sum(dtype=np.int64))
    if total != d ** 3:
        raise BinvoxError(f"payload decodes to {total} voxels, dim {d} requires {d ** 3}")
    flat = np.repeat(values, counts)
    grid = flat.reshape(d, d, d).transpose(0, 2, 1).astype(np.float32)
    return Binvox(np.ascontiguousarray(grid), translate, scale)


def _rle(flat: np.ndarray) -> bytes:
    if flat.size == 0:
        return b""
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate(([0], change))
    lengths = np.diff(np.concatenate((starts, [flat.size])))
    out = bytearray()
    for s, n in zip(starts.tolist(), lengths.tolist()):
        v = int(flat[s])
        while n > 0:
            c = min(n, 255)
            out += bytes((v, c))
            n -= c
    return bytes(out)


def binvox_write(grid, translate: Sequence[float] = (0.0, 0.0, 0.0), scale: float = 1.0,
                 threshold: float = THRESHOLD) -> bytes:
    """Encode a grid (or :class:`Binvox`) with canonical maximal runs of <= 255."""
    if isinstance(grid, Binvox):
        grid, translate, scale = grid.grid, grid.translate, grid.scale
    grid = check_grid(grid)
    d = grid.shape[0]
    flat = binarize(grid, threshold).transpose(0, 2, 1).ravel().astype(np.uint8)
    header = (
        "#binvox 1\n"
        f"dim {d} {d} {d}\n"
        f"translate {' '.join(_fmt(t) for t in translate)}\n"
        f"scale {_fmt(scale)}\n"
        "data\n"
    ).encode("ascii")
    return header + _rle(flat)


# -- resampling ----------------------------------------------------------------

def resample(grid: np.ndarray, target: int) -> np.ndarray:
    """Change resolution: block max when shrinking, nearest neighbour when growing.

    When shrinking, target cell ``i`` covers source cells
    ``[floor(i*s/t), ceil((i+1)*s/t))`` on each axis.
    """
    grid = check_grid(grid)
    if target < 2:
        raise ValueError("target resolution must be >= 2")
    s = grid.shape[0]
    if target == s:
        return grid.copy()
    if target > s:
        idx = (np.arange(target) * s) // target
        return grid[np.ix_(idx, idx, idx)].copy()
    lo = (np.arange(target) * s) // target
    hi = -((-(np.arange(target) + 1) * s) // target)
    out = grid
    for axis in range(3):
        parts = [np.take(out, np.arange(a, b), axis=axis).max(axis=axis, keepdims=True) for a, b in zip(lo, hi)]
        out = np.concatenate(parts, axis=axis)
    return out


def pad_center(grid: np.ndarray, target: int) -> np.ndarray:
    """Embed a smaller grid in the middle of an empty ``target`` cube."""
    grid = check_grid(grid)
    s = grid.shape[0]
    if s > target:
        raise ValueError(f"cannot pad {s}^3 into {target}^3")
    off = (target - s) // 2
    out = np.zeros((target,) * 3, dtype=grid.dtype)
    out[off:off + s, off:off + s, off:off + s] = grid
    return out


def fit_resolution(grid: np.ndarray, target: int, mode: str = "pad") -> np.ndarray:
    """Bring a grid to ``target``: ``pad`` centres smaller grids (falling back to
    block scaling for larger ones), ``scale`` always resamples."""
    s = np.asarray(grid).shape[0]
    if mode == "pad" and s <= target:
        return pad_center(grid, target)
    if mode not in ("pad", "scale"):
        raise ValueError(f"unknown mode {mode!r}")
    return resample(grid, target)


# -- connected components -----------------------------------------------------

def largest_connected_component(grid: np.ndarray, threshold: float = THRESHOLD) -> np.ndarray:
    """Binarize and keep the biggest 6-connected component.

    Ties go to the component containing the smallest linear index. Returns a
    float32 0/1 grid (all zeros if nothing reaches the threshold).
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    mask = binarize(check_grid(grid), threshold)
    labels, sizes = kernels.label_components(mask)
    if sizes.size == 0:
        return np.zeros(mask.shape, dtype=np.float32)
    keep = int(np.argmax(sizes)) + 1
    return (labels == keep).astype(np.float32)


def count_components(grid: np.ndarray, threshold: float = THRESHOLD) -> int:
    _, sizes = kernels.label_components(binarize(grid, threshold))
    return int(sizes.size)


# -- OBJ export ---------------------------------------------------------------

_FACES = (
    # (axis, direction, quad corner offsets in counter-clockwise order seen from outside)
    (0, -1, ((0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0))),
    (0, 1, ((1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1))),
    (1, -1, ((0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1))),
    (1, 1, ((0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0))),
    (2, -1, ((0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0))),
    (2, 1, ((0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1))),
)


def surface_mesh(grid: np.ndarray, threshold: float = THRESHOLD):
    """Exposed unit-cube faces of occupied voxels as (vertices, triangles).

    Vertices are integer lattice points numbered in order of first use;
    voxels are visited in C order and faces in a fixed order.
    """
    mask = binarize(check_grid(grid), threshold)
    padded = np.pad(mask, 1)
    vindex = {}
    vertices = []
    triangles = []
    for x, y, z in np.argwhere(mask):
        for axis, direction, quad in _FACES:
            nb = [x + 1, y + 1, z + 1]
            nb[axis] += direction
            if padded[tuple(nb)]:
                continue
            ids = []
            for dx, dy, dz in quad:
                key = (x + dx, y + dy, z + dz)
                if key not in vindex:
                    vindex[key] = len(vertices)
                    vertices.append(key)
                ids.append(vindex[key])
            triangles.append((ids[0], ids[1], ids[2]))
            triangles.append((ids[0], ids[2], ids[3]))
    return np.asarray(vertices, dtype=np.int64).reshape(-1, 3), np.asarray(triangles, dtype=np.int64).reshape(-1, 3)


def export_obj(grid: np.ndarray, threshold: float = THRESHOLD) -> str:
    """Wavefront OBJ text for the voxel surface (1-based face indices)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    verts, tris = surface_mesh(grid, threshold)
    lines = [f"v {x} {y} {z}" for x, y, z in verts.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in tris.tolist()]
    return "\n".join(lines) + ("\n" if lines else "")


def voxel_values_csv(grid: np.ndarray, values: np.ndarray, threshold: float = THRESHOLD) -> str:
    """Sidecar listing ``x,y,z,value`` for each occupied voxel in C order."""
    mask = binarize(grid, threshold)
    rows = ["x,y,z,value"]
    for x, y, z in np.argwhere(mask).tolist():
        rows.append(f"{x},{y},{z},{float(values[x, y, z]):.9g}")
    return "\n".join(rows) + "\n"


def write_raw(path, grid: np.ndarray) -> None:
    """Raw little-endian float32 dump in C order."""
    np.ascontiguousarray(grid, dtype="<f4").tofile(path)


def read_raw(path, resolution: Optional[int] = None) -> np.ndarray:
    flat = np.fromfile(path, dtype="<f4")
    r = resolution or round(flat.size ** (1 / 3))
    if r ** 3 != flat.size:
        raise ValueError(f"{path}: {flat.size} floats is not a cube")
    return flat.reshape(r, r, r).astype(np.float32)
