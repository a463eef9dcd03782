"""Discriminator features and one-vs-all linear SVMs on top of them.

Features are the eval-mode responses of the intermediate discriminator
blocks (all hidden layers except the first), each max-pooled down to a 2^3
extent and concatenated channel-major. At the full profile this is layers
2-4 pooled with kernels {8, 4, 2}, 1024 + 2048 + 4096 = 7168 values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .checkpoint import decode_arrays, encode_arrays
from .models import Discriminator, ScaleProfile
from .rng import RngStream
from .tensor import no_grad

POOLED_EXTENT = 2


class UnsupportedProfileError(ValueError):
    pass


class LayoutMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    layer: int  # 1-based conv block index
    channels: int
    extent: int  # pooled spatial extent per axis
    offset: int

    @property
    def length(self) -> int:
        return self.channels * self.extent ** 3


@dataclass(frozen=True)
class FeatureLayout:
    segments: Tuple[Segment, ...]

    @property
    def length(self) -> int:
        return sum(s.length for s in self.segments)

    def to_list(self) -> list:
        return [[s.layer, s.channels, s.extent, s.offset] for s in self.segments]

    @classmethod
    def from_list(cls, rows) -> "FeatureLayout":
        return cls(tuple(Segment(*map(int, r)) for r in rows))


@dataclass
class FeatureVector:
    values: np.ndarray
    layout: FeatureLayout


def feature_layers(profile: ScaleProfile) -> List[int]:
    """1-based discriminator blocks that contribute features."""
    n = profile.n_layers
    if n < 3:
        raise UnsupportedProfileError(f"profile {profile.name!r} has {n} conv layers; features need at least 3")
    return list(range(2, n))


def feature_layout(profile: ScaleProfile) -> FeatureLayout:
    chans = profile.discriminator_channels
    segs, off = [], 0
    for layer in feature_layers(profile):
        s = Segment(layer, chans[layer - 1], POOLED_EXTENT, off)
        segs.append(s)
        off += s.length
    return FeatureLayout(tuple(segs))


def _pool_to(a: np.ndarray, extent: int) -> np.ndarray:
    n, c, d = a.shape[:3]
    k = d // extent
    return a.reshape(n, c, extent, k, extent, k, extent, k).max(axis=(3, 5, 7))


def extract_feature_matrix(D: Discriminator, grids, batch_size: int = 64) -> Tuple[np.ndarray, FeatureLayout]:
    """Features for a stack of grids, shape (N, layout.length), float64.

    The discriminator is switched to eval mode for the call and restored after.
    """
    layout = feature_layout(D.profile)
    grids = np.asarray(grids, dtype=D.dtype)
    if grids.ndim == 3:
        grids = grids[None]
    last = layout.segments[-1].layer
    was_training = D.training
    D.eval()
    rows = []
    try:
        with no_grad():
            for s in range(0, grids.shape[0], batch_size):
                _, acts = D.logits(grids[s:s + batch_size], upto=last)
                parts = [_pool_to(acts[seg.layer - 1].data, seg.extent).reshape(acts[0].shape[0], -1)
                         for seg in layout.segments]
                rows.append(np.concatenate(parts, axis=1))
    finally:
        D.train(was_training)
    return np.concatenate(rows).astype(np.float64), layout


def extract_features(D: Discriminator, grid: np.ndarray) -> FeatureVector:
    values, layout = extract_feature_matrix(D, np.asarray(grid)[None])
    return FeatureVector(values[0], layout)


def raw_voxel_features(grids) -> np.ndarray:
    """Flattened occupancies: the baseline the learned features are compared to."""
    g = np.asarray(grids, dtype=np.float64)
    return g.reshape(g.shape[0], -1)


# -- linear SVM ---------------------------------------------------------------

INTERCEPT_SCALING = 1.0


@dataclass
class LinearSvmModel:
    classes: np.ndarray
    weights: np.ndarray  # (n_classes, n_features)
    intercepts: np.ndarray
    C: float
    class_weights: np.ndarray
    converged: np.ndarray
    n_iter: np.ndarray
    objective_history: List[np.ndarray] = field(default_factory=list)
    layout: Optional[FeatureLayout] = None

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]


def class_weights(labels: np.ndarray, classes: np.ndarray, balanced: bool) -> np.ndarray:
    if not balanced:
        return np.ones(len(classes))
    counts = np.array([np.count_nonzero(labels == c) for c in classes], dtype=np.float64)
    return labels.size / (len(classes) * counts)


def _matrix(features) -> Tuple[np.ndarray, Optional[FeatureLayout]]:
    if isinstance(features, FeatureVector):
        return features.values[None].astype(np.float64), features.layout
    if len(features) and isinstance(features[0], FeatureVector):
        layouts = {f.layout for f in features}
        if len(layouts) != 1:
            raise LayoutMismatchError("feature vectors have different layouts")
        return np.stack([f.values for f in features]).astype(np.float64), layouts.pop()
    return np.atleast_2d(np.asarray(features, dtype=np.float64)), None


def svm_train(features, labels, C: float = 0.01, balanced: bool = True, max_iter: int = 1000,
              tol: float = 1e-6, layout: Optional[FeatureLayout] = None) -> LinearSvmModel:
    """One-vs-all L2-regularized hinge-loss SVMs with an appended intercept feature.

    Each class solves ``min 0.5*|w|^2 + C * sum_i cw(y_i) * hinge`` where
    ``cw`` is the balanced weight of the sample's own label.
    """
    X, lay = _matrix(features)
    layout = layout or lay
    y = np.asarray(labels).ravel()
    if X.shape[0] != y.size:
        raise ValueError(f"{X.shape[0]} feature rows but {y.size} labels")
    if C <= 0:
        raise ValueError("C must be positive")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("need at least 2 classes")
    cw = class_weights(y, classes, balanced)
    per_sample = C * cw[np.searchsorted(classes, y)]
    Xa = np.hstack([X, np.full((X.shape[0], 1), INTERCEPT_SCALING)])
    W, b, conv, iters, hist = [], [], [], [], []
    for c in classes:
        yc = np.where(y == c, 1.0, -1.0)
        w, _, sweeps, ok, h, _ = kernels.svm_dual_cd(Xa, yc, per_sample, max_iter, tol)
        W.append(w[:-1])
        b.append(w[-1] * INTERCEPT_SCALING)
        conv.append(bool(ok))
        iters.append(int(sweeps))
        hist.append(np.asarray(h))
    return LinearSvmModel(classes, np.array(W), np.array(b), float(C), cw, np.array(conv), np.array(iters),
                          hist, layout)


def decision_scores(model: LinearSvmModel, features) -> np.ndarray:
    X, lay = _matrix(features)
    if X.shape[1] != model.n_features:
        raise LayoutMismatchError(f"feature length {X.shape[1]} but model expects {model.n_features}")
    if lay is not None and model.layout is not None and lay != model.layout:
        raise LayoutMismatchError("feature layout differs from the training layout")
    return X @ model.weights.T + model.intercepts


def svm_predict(model: LinearSvmModel, feature):
    """Return (label, per-class scores); ties go to the lowest class index."""
    scores = decision_scores(model, feature)[0]
    return model.classes[int(np.argmax(scores))], scores


def svm_predict_batch(model: LinearSvmModel, features) -> np.ndarray:
    return model.classes[np.argmax(decision_scores(model, features), axis=1)]


def accuracy(model: LinearSvmModel, features, labels) -> float:
    return float(np.mean(svm_predict_batch(model, features) == np.asarray(labels)))


# -- limited data ---------------------------------------------------------------

@dataclass
class LimitedDataCurve:
    budgets: List[int]
    seeds: List[int]
    accuracies: np.ndarray  # (n_budgets, n_seeds)

    @property
    def mean(self) -> np.ndarray:
        return self.accuracies.mean(axis=1)

    @property
    def std(self) -> np.ndarray:
        return self.accuracies.std(axis=1)


def subsample_per_class(labels, budget: int, rng: RngStream) -> np.ndarray:
    labels = np.asarray(labels)
    picks = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if budget > idx.size:
            raise ValueError(f"budget {budget} exceeds the {idx.size} samples of class {c}")
        picks.append(np.sort(idx[rng.permutation(idx.size)[:budget]]))
    return np.sort(np.concatenate(picks))


def limited_data_experiment(train_X, train_y, test_X, test_y, budgets: Sequence[int], seeds: Sequence[int],
                            C: float = 0.01, balanced: bool = True) -> LimitedDataCurve:
    """Accuracy on the held-out set when training on ``budget`` samples per class."""
    train_X = np.asarray(train_X, dtype=np.float64)
    train_y = np.asarray(train_y)
    acc = np.zeros((len(budgets), len(seeds)))
    for i, budget in enumerate(budgets):
        for j, seed in enumerate(seeds):
            idx = subsample_per_class(train_y, budget, RngStream(seed).child(f"budget-{budget}"))
            model = svm_train(train_X[idx], train_y[idx], C, balanced)
            acc[i, j] = accuracy(model, test_X, test_y)
    return LimitedDataCurve(list(budgets), list(seeds), acc)


# -- persistence ----------------------------------------------------------------

def features_bytes(X: np.ndarray, labels, layout: Optional[FeatureLayout] = None) -> bytes:
    meta = {"kind": "features", "layout": layout.to_list() if layout else None}
    return encode_arrays({"features": X, "labels": np.asarray(labels, dtype=np.float32)}, meta)


def features_from_bytes(data: bytes):
    arrays, meta = decode_arrays(data)
    layout = FeatureLayout.from_list(meta["layout"]) if meta.get("layout") else None
    return arrays["features"], arrays["labels"].astype(np.int64), layout


def svm_bytes(model: LinearSvmModel) -> bytes:
    arrays: Dict[str, np.ndarray] = {
        "classes": model.classes.astype(np.float32),
        "weights": model.weights,
        "intercepts": model.intercepts,
        "class_weights": model.class_weights,
    }
    meta = {"kind": "svm", "C": model.C, "converged": [bool(c) for c in model.converged],
            "n_iter": [int(n) for n in model.n_iter],
            "layout": model.layout.to_list() if model.layout else None}
    return encode_arrays(arrays, meta)


def svm_from_bytes(data: bytes) -> LinearSvmModel:
    arrays, meta = decode_arrays(data)
    layout = FeatureLayout.from_list(meta["layout"]) if meta.get("layout") else None
    return LinearSvmModel(arrays["classes"].astype(np.int64), arrays["weights"].astype(np.float64),
                          arrays["intercepts"].astype(np.float64), meta["C"],
                          arrays["class_weights"].astype(np.float64), np.array(meta["converged"]),
                          np.array(meta["n_iter"]), [], layout)
