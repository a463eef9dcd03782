"""Latent-space and neuron analysis: sweeps, interpolation, arithmetic,
retrieval and guided-backprop saliency.

Generators and discriminators are run in eval mode so every output depends
only on its own input. Objects are generated one at a time, which keeps
results bitwise independent of how requests are grouped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .models import Discriminator, Generator
from .rng import clamp_to_support
from .tensor import Tensor, guided_backprop as _guided_mode, no_grad
from .voxels import THRESHOLD, binarize

LayerSpec = Union[int, str]


class _EvalMode:
    def __init__(self, net):
        self.net = net

    def __enter__(self):
        self.was = self.net.training
        self.net.eval()
        return self.net

    def __exit__(self, *exc):
        self.net.train(self.was)


def generate(G: Generator, z) -> np.ndarray:
    """G(z) for a single latent vector, eval mode, as an (r, r, r) array."""
    z = np.asarray(z, dtype=G.dtype).reshape(1, -1)
    with _EvalMode(G), no_grad():
        return G(z).data[0]


def generate_many(G: Generator, zs) -> np.ndarray:
    return np.stack([generate(G, z) for z in np.atleast_2d(zs)])


@dataclass
class SweepResult:
    dim: int
    values: np.ndarray
    grids: np.ndarray
    mask: np.ndarray


def sweep_dimension(G: Generator, z0, dim: int, values: Sequence[float], prior: Optional[str] = None,
                    threshold: float = THRESHOLD) -> SweepResult:
    """Vary one latent coordinate; the mask marks voxels whose binarized
    occupancy differs between the smallest and largest swept value."""
    z0 = np.asarray(z0, dtype=G.dtype).ravel()
    if not 0 <= dim < z0.size:
        raise ValueError(f"dimension {dim} out of range for a {z0.size}-d latent")
    values = np.asarray(values, dtype=G.dtype).ravel()
    if values.size == 0:
        raise ValueError("no sweep values")
    if prior is not None and not np.array_equal(clamp_to_support(values, prior), values):
        raise ValueError(f"sweep values leave the support of the {prior} prior")
    zs = np.repeat(z0[None], values.size, axis=0)
    zs[:, dim] = values
    grids = generate_many(G, zs)
    lo, hi = int(np.argmin(values)), int(np.argmax(values))
    mask = binarize(grids[lo], threshold) != binarize(grids[hi], threshold)
    return SweepResult(dim, values, grids, mask)


def interpolation_codes(z1, z2, steps: int) -> np.ndarray:
    if steps < 2:
        raise ValueError("steps must be >= 2")
    z1, z2 = np.asarray(z1), np.asarray(z2)
    t = (np.arange(steps) / (steps - 1)).astype(z1.dtype)[:, None]
    return (1 - t) * z1[None] + t * z2[None]


def interpolate(G: Generator, z1, z2, steps: int) -> np.ndarray:
    """Grids along the straight line from z1 to z2, endpoints included."""
    z1 = np.asarray(z1, dtype=G.dtype).ravel()
    z2 = np.asarray(z2, dtype=G.dtype).ravel()
    return generate_many(G, interpolation_codes(z1, z2, steps))


def arithmetic_code(z_a, z_b, z_c, prior: str, dtype=np.float32) -> np.ndarray:
    """``z_a - z_b + z_c`` projected onto the prior's support.

    Summed in float64 so the cancellations z_a == z_b and z_b == z_c are
    exact for float32 inputs.
    """
    a, b, c = (np.asarray(v, dtype=np.float64).ravel() for v in (z_a, z_b, z_c))
    if not a.shape == b.shape == c.shape:
        raise ValueError("latent vectors must have equal dimensions")
    return clamp_to_support((a - b) + c, prior).astype(dtype)


def shape_arithmetic(G: Generator, z_a, z_b, z_c, prior: str = "uniform01") -> np.ndarray:
    return generate(G, arithmetic_code(z_a, z_b, z_c, prior, G.dtype))


# -- discriminator-side tools ------------------------------------------------

def resolve_layer(D: Discriminator, layer: LayerSpec) -> int:
    """1-based conv block index from an int, ``"last"`` or ``"last-k"``."""
    n = D.profile.n_layers
    if isinstance(layer, str):
        s = layer.strip()
        if s.lstrip("-").isdigit():
            layer = int(s)
        elif s == "last":
            layer = n
        elif s.startswith("last-") and s[5:].isdigit():
            layer = n - int(s[5:])
        else:
            raise ValueError(f"cannot parse layer {layer!r}")
    if not 1 <= layer <= n:
        raise ValueError(f"layer {layer} out of range 1..{n}")
    return int(layer)


def layer_activations(D: Discriminator, grids, layer: LayerSpec, batch_size: int = 64) -> np.ndarray:
    """Eval-mode activations of a block for a stack of grids."""
    layer = resolve_layer(D, layer)
    grids = np.asarray(grids, dtype=D.dtype)
    if grids.ndim == 3:
        grids = grids[None]
    out = []
    with _EvalMode(D), no_grad():
        for s in range(0, grids.shape[0], batch_size):
            _, acts = D.logits(grids[s:s + batch_size], capture=True, upto=layer if layer < D.profile.n_layers else None)
            out.append(acts[layer - 1].data)
    return np.concatenate(out)


def retrieval_features(D: Discriminator, grids) -> np.ndarray:
    """Last hidden block max-pooled by 2, flattened (4096-d at full scale)."""
    a = layer_activations(D, grids, D.profile.n_layers - 1)
    n, c, d = a.shape[:3]
    h = d // 2
    pooled = a.reshape(n, c, h, 2, h, 2, h, 2).max(axis=(3, 5, 7))
    return pooled.reshape(n, -1).astype(np.float64)


def nn_retrieve(D: Discriminator, query, corpus, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Corpus indices of the ``k`` nearest items and their Euclidean distances."""
    corpus = np.asarray(corpus)
    if corpus.shape[0] == 0:
        raise ValueError("corpus is empty")
    fq = retrieval_features(D, np.asarray(query)[None])[0]
    fc = retrieval_features(D, corpus)
    dist = np.sqrt(((fc - fq) ** 2).sum(axis=1))
    order = np.lexsort((np.arange(dist.size), dist))[:max(k, 0)]
    return order, dist[order]


def guided_backprop(D: Discriminator, grid, layer: LayerSpec, channel: int, guided: bool = True) -> np.ndarray:
    """Input saliency for one channel of a block.

    Backpropagates the channel's spatially summed activation with the
    guided rule at every rectifier, then returns the absolute input gradient
    scaled so its maximum is 1 (all zeros when the gradient vanishes).
    ``guided=False`` gives the plain gradient, useful as a reference.
    """
    layer = resolve_layer(D, layer)
    chans = D.profile.discriminator_channels[layer - 1]
    if not 0 <= channel < chans:
        raise ValueError(f"channel {channel} out of range for layer {layer} with {chans} channels")
    x = Tensor(np.asarray(grid, dtype=D.dtype), requires_grad=True)
    with _EvalMode(D):
        _, acts = D.logits(x, capture=True, upto=layer if layer < D.profile.n_layers else None)
        target = acts[layer - 1][:, channel].sum()
        if guided:
            with _guided_mode():
                target.backward()
        else:
            target.backward()
    D.zero_grad()
    g = np.abs(x.grad.astype(np.float64)).reshape(np.asarray(grid).shape)
    peak = g.max()
    return g / peak if peak > 0 else np.zeros_like(g)


@dataclass
class NeuronReport:
    layer: int
    channel: int
    object_ids: List[int]
    activations: List[float]
    saliency: List[np.ndarray]


def neuron_scores(D: Discriminator, grids, layer: LayerSpec) -> np.ndarray:
    """(n_objects, n_channels) spatial-max activation."""
    a = layer_activations(D, grids, layer)
    return a.reshape(a.shape[0], a.shape[1], -1).max(axis=2).astype(np.float64)


def top_activating_objects(D: Discriminator, grids, layer: LayerSpec = "last-1", k: int = 5,
                           channels: Optional[Sequence[int]] = None, saliency: bool = True) -> List[NeuronReport]:
    """Per channel, the ``k`` objects with the highest spatial-max activation."""
    grids = np.asarray(grids)
    if grids.shape[0] == 0:
        raise ValueError("dataset is empty")
    layer = resolve_layer(D, layer)
    scores = neuron_scores(D, grids, layer)
    channels = range(scores.shape[1]) if channels is None else channels
    idx = np.arange(scores.shape[0])
    reports = []
    for ch in channels:
        order = np.lexsort((idx, -scores[:, ch]))[:k]
        sal = [guided_backprop(D, grids[i], layer, ch) for i in order] if saliency else []
        reports.append(NeuronReport(layer, int(ch), order.tolist(), scores[order, ch].tolist(), sal))
    return reports
