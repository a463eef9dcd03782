"""Binary container for named float32 arrays, and network checkpoints built on it.

Layout (all integers little-endian)::

    b"VXGC"                     magic
    uint32                      format version
    uint64                      manifest length M
    M bytes                     manifest, UTF-8 JSON with sorted keys
    payload                     arrays as contiguous little-endian float32
    uint64                      checksum: 8-byte BLAKE2b digest of the payload

The manifest lists every array as ``{"name", "shape", "dtype", "offset",
"nbytes"}`` (offsets relative to the payload start) plus ``payload_nbytes``
and a free-form ``meta`` object.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple, Union

import numpy as np

from .models import Discriminator, Generator, ImageEncoder, Module, ScaleProfile
from .optim import Adam
from .rng import RngStream

MAGIC = b"VXGC"
FORMAT_VERSION = 1
_DTYPE = "<f4"

PathLike = Union[str, os.PathLike]


class CheckpointError(ValueError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedFileError(CheckpointError):
    pass


class IntegrityError(CheckpointError):
    pass


def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def encode_arrays(arrays: Mapping[str, np.ndarray], meta: Optional[dict] = None) -> bytes:
    """Serialize arrays (cast to float32) and JSON metadata into container bytes."""
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype=_DTYPE)
        raw = a.tobytes()
        entries.append({"name": name, "shape": list(a.shape), "dtype": "float32",
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    manifest = {"format_version": FORMAT_VERSION, "arrays": entries,
                "payload_nbytes": offset, "meta": meta or {}}
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join([MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(mbytes)), mbytes, payload, _checksum(payload)])


def decode_arrays(data: bytes) -> Tuple[Dict[str, np.ndarray], dict]:
    """Inverse of :func:`encode_arrays`; returns (arrays, meta)."""
    if len(data) < 16:
        raise TruncatedFileError("file shorter than the fixed header")
    if data[:4] != MAGIC:
        raise CheckpointError("bad magic: not a voxgan container")
    version, mlen = struct.unpack("<IQ", data[4:16])
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"container version {version}, this build reads {FORMAT_VERSION}")
    if 16 + mlen > len(data):
        raise TruncatedFileError("manifest extends past end of file")
    try:
        manifest = json.loads(data[16:16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable manifest: {exc}") from None
    if manifest.get("format_version") != version:
        raise VersionMismatchError("manifest version disagrees with header")
    pstart = 16 + mlen
    plen = int(manifest["payload_nbytes"])
    expected = 0
    for e in manifest["arrays"]:
        n = int(np.prod(e["shape"], dtype=np.int64)) * 4
        if e["offset"] != expected or e["nbytes"] != n:
            raise CheckpointError(f"manifest entry {e['name']!r} inconsistent with its shape/offset")
        expected += n
    if expected != plen:
        raise CheckpointError(f"manifest arrays total {expected} bytes but payload_nbytes is {plen}")
    if len(data) < pstart + plen + 8:
        raise TruncatedFileError(f"file has {len(data)} bytes, manifest requires {pstart + plen + 8}")
    if len(data) > pstart + plen + 8:
        raise CheckpointError("trailing bytes after checksum")
    payload = data[pstart:pstart + plen]
    if _checksum(payload) != data[pstart + plen:]:
        raise IntegrityError("payload checksum mismatch")
    arrays = {}
    for e in manifest["arrays"]:
        buf = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype=_DTYPE).astype(np.float32).reshape(e["shape"])
    return arrays, manifest["meta"]


def save_arrays(path: PathLike, arrays: Mapping[str, np.ndarray], meta: Optional[dict] = None) -> None:
    Path(path).write_bytes(encode_arrays(arrays, meta))


def load_arrays(path: PathLike) -> Tuple[Dict[str, np.ndarray], dict]:
    return decode_arrays(Path(path).read_bytes())


NET_CLASSES = {"G": Generator, "D": Discriminator, "E": ImageEncoder}


@dataclass
class Checkpoint:
    profile: ScaleProfile
    prior: str
    nets: Dict[str, Module]
    optims: Dict[str, Adam] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    arrays: Dict[str, np.ndarray] = {}
    adam_meta = {}
    for key in sorted(ckpt.nets):
        net = ckpt.nets[key]
        for name, p in net.parameters().items():
            arrays[f"{key}.param.{name}"] = p.data
        for name, b in net.buffers().items():
            arrays[f"{key}.buffer.{name}"] = b
    for key in sorted(ckpt.optims):
        opt = ckpt.optims[key]
        for name, a in opt.state_arrays().items():
            arrays[f"adam.{key}.{name}"] = a
        adam_meta[key] = opt.hyper()
    meta = {"profile": ckpt.profile.to_dict(), "prior": ckpt.prior, "nets": sorted(ckpt.nets),
            "adam": adam_meta, "extra": ckpt.meta}
    return encode_arrays(arrays, meta)


def save_checkpoint(path: PathLike, ckpt: Checkpoint) -> None:
    try:
        Path(path).write_bytes(checkpoint_bytes(ckpt))
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: PathLike) -> Checkpoint:
    arrays, meta = load_arrays(path)
    try:
        profile = ScaleProfile.from_dict(meta["profile"])
        prior = meta["prior"]
        net_keys = meta["nets"]
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"checkpoint metadata incomplete: {exc}") from None
    nets = {}
    dummy = RngStream(0)
    for key in net_keys:
        net = NET_CLASSES[key](profile, dummy)
        for name, p in net.parameters().items():
            p.data[...] = _take(arrays, f"{key}.param.{name}", p.data.shape)
        for name, b in net.buffers().items():
            b[...] = _take(arrays, f"{key}.buffer.{name}", b.shape)
        nets[key] = net
    optims = {}
    for key, hyper in meta.get("adam", {}).items():
        net = nets[key]
        opt = Adam(net.parameters(), lr=hyper["lr"], beta1=hyper["beta1"], beta2=hyper["beta2"], eps=hyper["eps"])
        state = {n: _take(arrays, f"adam.{key}.{n}", a.shape) for n, a in opt.state_arrays().items()}
        opt.load_state_arrays(state, hyper["t"])
        optims[key] = opt
    return Checkpoint(profile, prior, nets, optims, meta.get("extra", {}))


def _take(arrays, name, shape):
    if name not in arrays:
        raise CheckpointError(f"checkpoint is missing array {name!r}")
    a = arrays[name]
    if a.shape != tuple(shape):
        raise CheckpointError(f"array {name!r} has shape {a.shape}, expected {tuple(shape)}")
    return a
