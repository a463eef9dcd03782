"""Generator, discriminator and image encoder built from a scale profile.

The full profile reproduces the published 64^3 architecture layer for layer;
smaller profiles keep the same topology with fewer stride-2 stages so the
whole toolkit can be exercised at 16^3 on a laptop.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import functional as F
from .functional import RunningStats
from .rng import RngStream
from .tensor import Tensor

INIT_STD = 0.02
LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class ScaleProfile:
    name: str
    resolution: int
    latent_dim: int = 200
    base_channels: int = 64
    image_size: int = 256

    def __post_init__(self):
        r = self.resolution
        if r < 8 or r & (r - 1):
            raise ValueError(f"resolution must be a power of two >= 8, got {r}")
        if self.latent_dim < 1 or self.base_channels < 1:
            raise ValueError("latent_dim and base_channels must be positive")
        if self.image_size not in ENCODER_LAYOUTS:
            raise ValueError(f"no encoder layout for image size {self.image_size}; "
                             f"supported: {sorted(ENCODER_LAYOUTS)}")

    @property
    def n_layers(self) -> int:
        return int(math.log2(self.resolution // 4)) + 1

    @property
    def hidden_channels(self) -> List[int]:
        """Discriminator widths before the scalar layer; the generator uses them reversed."""
        b = self.base_channels
        return [min(b * 2 ** i, 8 * b) for i in range(self.n_layers - 1)]

    @property
    def discriminator_channels(self) -> List[int]:
        return self.hidden_channels + [1]

    @property
    def generator_channels(self) -> List[int]:
        return self.hidden_channels[::-1] + [1]

    def encoder_layout(self) -> List[Tuple[int, int, int, int]]:
        """(out channels, kernel, stride, pad) per encoder layer."""
        b = self.base_channels
        widths = ENCODER_LAYOUTS[self.image_size]
        layout = []
        for i, (k, s, p) in enumerate(widths):
            cout = 2 * self.latent_dim if i == len(widths) - 1 else min(b * 2 ** i, 8 * b)
            layout.append((cout, k, s, p))
        return layout

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScaleProfile":
        return cls(**d)


# (kernel, stride, pad) per encoder layer, keyed by input image size.
ENCODER_LAYOUTS: Dict[int, List[Tuple[int, int, int]]] = {
    256: [(11, 4, 2), (5, 2, 2), (5, 2, 2), (5, 2, 2), (8, 1, 0)],
    64: [(7, 4, 3), (5, 2, 2), (5, 2, 2), (4, 1, 0)],
}

FULL = ScaleProfile("full", resolution=64, latent_dim=200, base_channels=64, image_size=256)
TINY = ScaleProfile("tiny", resolution=16, latent_dim=200, base_channels=32, image_size=64)
PROFILES = {"full": FULL, "tiny": TINY}


def load_profile(spec: str) -> ScaleProfile:
    """Resolve ``full``, ``tiny`` or a path to a JSON profile file."""
    if spec in PROFILES:
        return PROFILES[spec]
    path = Path(spec)
    if not path.is_file():
        raise FileNotFoundError(f"profile {spec!r} is neither a known name nor a file")
    d = json.loads(path.read_text())
    d.setdefault("name", path.stem)
    return ScaleProfile.from_dict(d)


class Module:
    """Minimal container: named parameters, named buffers, train/eval flag."""

    training = True

    def parameters(self) -> Dict[str, Tensor]:
        raise NotImplementedError

    def buffers(self) -> Dict[str, np.ndarray]:
        raise NotImplementedError

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())


class _Layer:
    """One conv/convT weight with either batch norm or a bias."""

    def __init__(self, wshape, norm: bool, stride: int, pad: int, rng: RngStream, dtype):
        self.weight = Tensor(rng.normal(wshape).astype(dtype) * dtype(INIT_STD), requires_grad=True)
        self.stride = stride
        self.pad = pad
        self.norm = norm
        channels = wshape[1] if self._transposed_shape else wshape[0]
        if norm:
            self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
            self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
            self.stats = RunningStats(channels, dtype=dtype)
        else:
            self.bias = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)

    _transposed_shape = False

    def params(self, prefix: str) -> Dict[str, Tensor]:
        out = {f"{prefix}.weight": self.weight}
        if self.norm:
            out[f"{prefix}.gamma"] = self.gamma
            out[f"{prefix}.beta"] = self.beta
        else:
            out[f"{prefix}.bias"] = self.bias
        return out

    def bufs(self, prefix: str) -> Dict[str, np.ndarray]:
        if not self.norm:
            return {}
        return {f"{prefix}.running_mean": self.stats.mean, f"{prefix}.running_var": self.stats.var}

    def finish(self, y: Tensor, training: bool) -> Tensor:
        if self.norm:
            return F.batch_norm(y, self.gamma, self.beta, training, self.stats)
        return y + self.bias.reshape((1, -1) + (1,) * (y.ndim - 2))


class _TLayer(_Layer):
    _transposed_shape = True


class _Net(Module):
    layers: List[_Layer]

    def parameters(self) -> Dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.params(f"layers.{i}"))
        return out

    def buffers(self) -> Dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.bufs(f"layers.{i}"))
        return out


class Generator(_Net):
    """Latent vector -> occupancy cube via transposed volumetric convolutions."""

    def __init__(self, profile: ScaleProfile, rng: RngStream, dtype=np.float32):
        self.profile = profile
        self.dtype = dtype
        chans = profile.generator_channels
        cin = profile.latent_dim
        self.layers = []
        for i, cout in enumerate(chans):
            last = i == len(chans) - 1
            stride, pad = (1, 0) if i == 0 else (2, 1)
            self.layers.append(_TLayer((cin, cout, 4, 4, 4), not last, stride, pad, rng, dtype))
            cin = cout

    def forward(self, z) -> Tensor:
        """Map (N, latent) codes to (N, r, r, r) occupancies in (0, 1)."""
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=self.dtype))
        if z.ndim == 1:
            z = z.reshape(1, -1)
        if z.shape[-1] != self.profile.latent_dim:
            raise ValueError(f"latent vector has {z.shape[-1]} dims, profile expects {self.profile.latent_dim}")
        h = z.reshape(z.shape[0], z.shape[1], 1, 1, 1)
        for i, layer in enumerate(self.layers):
            h = layer.finish(F.conv3d_transpose(h, layer.weight, layer.stride, layer.pad), self.training)
            h = F.relu(h) if layer.norm else F.sigmoid(h)
        r = self.profile.resolution
        return h.reshape(h.shape[0], r, r, r)

    __call__ = forward


class Discriminator(_Net):
    """Occupancy cube -> probability of being a real object."""

    def __init__(self, profile: ScaleProfile, rng: RngStream, dtype=np.float32):
        self.profile = profile
        self.dtype = dtype
        chans = profile.discriminator_channels
        cin = 1
        self.layers = []
        for i, cout in enumerate(chans):
            last = i == len(chans) - 1
            stride, pad = (1, 0) if last else (2, 1)
            self.layers.append(_Layer((cout, cin, 4, 4, 4), not last, stride, pad, rng, dtype))
            cin = cout

    def _prep(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        r = self.profile.resolution
        if x.ndim == 3:
            x = x.reshape(1, *x.shape)
        if x.ndim == 4:
            x = x.reshape(x.shape[0], 1, *x.shape[1:])
        if x.ndim != 5 or x.shape[1] != 1 or x.shape[2:] != (r, r, r):
            raise ValueError(f"discriminator expects {r}^3 grids, got shape {x.shape}")
        return x

    def logits(self, x, capture: bool = False, upto: Optional[int] = None):
        """Return (logit (N,), activations or None).

        Activations are the post-activation outputs of each conv block,
        list index 0 holding layer 1. ``upto`` stops after that layer
        (1-based) and returns ``None`` for the logit.
        """
        h = self._prep(x)
        acts = [] if capture or upto else None
        for i, layer in enumerate(self.layers):
            h = layer.finish(F.conv3d(h, layer.weight, layer.stride, layer.pad), self.training)
            if layer.norm:
                h = F.leaky_relu(h, LEAKY_SLOPE)
                if acts is not None:
                    acts.append(h)
                if upto is not None and i + 1 == upto:
                    return None, acts
            elif acts is not None:
                acts.append(F.sigmoid(h))
        return h.reshape(h.shape[0]), acts

    def forward(self, x, capture: bool = False):
        """Return (score (N,) in (0, 1), activations or None)."""
        logit, acts = self.logits(x, capture)
        return F.sigmoid(logit), acts

    __call__ = forward


class ImageEncoder(_Net):
    """(N, 3, S, S) image -> (mu, log_var), each (N, latent)."""

    def __init__(self, profile: ScaleProfile, rng: RngStream, dtype=np.float32):
        self.profile = profile
        self.dtype = dtype
        self.layers = []
        cin = 3
        layout = profile.encoder_layout()
        for i, (cout, k, s, p) in enumerate(layout):
            last = i == len(layout) - 1
            layer = _Layer((cout, cin, k, k), not last, s, p, rng, dtype)
            self.layers.append(layer)
            cin = cout

    def forward(self, image):
        image = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=self.dtype))
        if image.ndim == 3:
            image = image.reshape(1, *image.shape)
        s = self.profile.image_size
        if image.ndim != 4 or image.shape[1:] != (3, s, s):
            raise ValueError(f"encoder expects (N, 3, {s}, {s}) images, got {image.shape}")
        h = image
        for layer in self.layers:
            h = layer.finish(F.conv2d(h, layer.weight, layer.stride, layer.pad), self.training)
            if layer.norm:
                h = F.relu(h)
        if h.shape[2:] != (1, 1):
            raise ValueError(f"encoder produced spatial extent {h.shape[2:]}, expected (1, 1)")
        flat = h.reshape(h.shape[0], h.shape[1])
        L = self.profile.latent_dim
        return flat[:, :L], flat[:, L:]

    __call__ = forward


def generator_parameter_count(profile: ScaleProfile) -> int:
    """Closed form: conv weights, plus (gamma, beta) per hidden layer, plus the final bias."""
    chans = [profile.latent_dim] + profile.generator_channels
    weights = sum(chans[i] * chans[i + 1] * 64 for i in range(len(chans) - 1))
    return weights + 2 * sum(profile.hidden_channels) + 1
