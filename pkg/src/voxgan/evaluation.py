"""Voxel-prediction scoring: average precision at 20^3 after searching for the
best signed axis permutation and a small translation."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .kernels._numpy import _tied_ap, _transform_grid
from .tensor import no_grad
from .voxels import binarize, resample

EVAL_RESOLUTION = 20
SHIFT_FRACTION = 0.10
PERMUTATIONS: Tuple[Tuple[int, int, int], ...] = tuple(itertools.permutations(range(3)))


class NoPositivesError(ValueError):
    pass


def default_max_shift(resolution: int) -> int:
    return int(math.floor(SHIFT_FRACTION * resolution))


def _check_pair(scores, truth) -> Tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    t = np.asarray(truth).ravel()
    if s.shape != t.shape:
        raise ValueError(f"{s.size} scores but {t.size} labels")
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("ground truth must be binary")
    if s.size and (np.isnan(s).any() or s.min() < 0 or s.max() > 1):
        raise ValueError("predicted occupancies must lie in [0, 1]")
    if not t.any():
        raise NoPositivesError("ground truth has no occupied voxels")
    return s, t.astype(np.int64)


def average_precision(scores, truth) -> float:
    """AP over voxels ranked by predicted score, tied scores entering together.

    ``sum_k (recall_k - recall_{k-1}) * precision_k`` where k runs over the
    distinct score levels in descending order.
    """
    s, t = _check_pair(scores, truth)
    return float(_tied_ap(s, t))


@dataclass(frozen=True)
class AlignmentTransform:
    perm: Tuple[int, int, int] = (0, 1, 2)
    flips: Tuple[int, int, int] = (0, 0, 0)
    shift: Tuple[int, int, int] = (0, 0, 0)

    def apply(self, grid: np.ndarray) -> np.ndarray:
        """Permute axes, then flip, then translate; vacated voxels are empty."""
        return _transform_grid(np.asarray(grid), self.perm, self.flips, self.shift)

    def encode(self, max_shift: int) -> int:
        span = 2 * max_shift + 1
        flip = (self.flips[0] << 2) | (self.flips[1] << 1) | self.flips[2]
        code = PERMUTATIONS.index(tuple(self.perm)) * 8 + flip
        for t in self.shift:
            code = code * span + (t + max_shift)
        return code

    @classmethod
    def decode(cls, code: int, max_shift: int) -> "AlignmentTransform":
        span = 2 * max_shift + 1
        shift = []
        for _ in range(3):
            code, r = divmod(code, span)
            shift.append(r - max_shift)
        p, flip = divmod(code, 8)
        if not 0 <= p < len(PERMUTATIONS):
            raise ValueError("transform code out of range")
        return cls(PERMUTATIONS[p], ((flip >> 2) & 1, (flip >> 1) & 1, flip & 1), tuple(shift[::-1]))


def best_aligned_ap(pred, truth, max_shift: Optional[int] = None) -> Tuple[float, AlignmentTransform]:
    """Maximum AP over 48 signed permutations and translations of up to ``max_shift``.

    Transforms are tried in lexicographic code order and the first maximum is
    kept, so among equally good alignments the smallest code wins.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 3 or len(set(pred.shape)) != 1:
        raise ValueError(f"pred and truth must be equal cubic grids, got {pred.shape} and {truth.shape}")
    _check_pair(pred, truth)
    if max_shift is None:
        max_shift = default_max_shift(pred.shape[0])
    ap, code = kernels.best_alignment(pred, truth.astype(np.int64), int(max_shift), PERMUTATIONS)
    return float(ap), AlignmentTransform.decode(int(code), int(max_shift))


@dataclass
class ApResult:
    per_class: Dict[str, float]
    mean: float
    alignments: List[AlignmentTransform] = field(default_factory=list)
    instances: List[Tuple[int, str, float]] = field(default_factory=list)


def encoder_mean_predictor(E, G) -> Callable[[np.ndarray], np.ndarray]:
    """Image -> occupancy using the encoder's mean code (no sampling)."""

    def predict(image):
        e_was, g_was = E.training, G.training
        E.eval()
        G.eval()
        try:
            with no_grad():
                mu, _ = E(np.asarray(image)[None])
                return G(mu).data[0]
        finally:
            E.train(e_was)
            G.train(g_was)

    return predict


def evaluate_reconstruction(E, G, pairs: Sequence, class_names: Optional[Sequence[str]] = None,
                            predict: Optional[Callable] = None, resolution: int = EVAL_RESOLUTION) -> ApResult:
    """Per-class mean of best-aligned AP over (image, shape) pairs.

    ``pairs`` carry ``image``, ``grid`` and ``label``. ``predict`` overrides
    the encoder/generator path (e.g. an oracle); the overall mean weights
    classes equally.
    """
    if len(pairs) == 0:
        raise ValueError("no evaluation pairs")
    predict = predict or encoder_mean_predictor(E, G)
    labels = sorted({int(p.label) for p in pairs})
    if class_names is None:
        class_names = [str(c) for c in range(max(labels) + 1)]
    present = set(labels)
    missing = [class_names[c] for c in range(len(class_names)) if c not in present]
    if missing:
        raise ValueError(f"no evaluation pairs for class(es) {missing}")
    scores: Dict[int, List[float]] = {c: [] for c in labels}
    alignments, instances = [], []
    for i, p in enumerate(pairs):
        pred = resample(np.clip(predict(p.image), 0.0, 1.0), resolution)
        truth = binarize(resample(np.asarray(p.grid, dtype=np.float32), resolution)).astype(np.int64)
        ap, tr = best_aligned_ap(pred, truth)
        scores[int(p.label)].append(ap)
        alignments.append(tr)
        instances.append((i, class_names[int(p.label)], ap))
    per_class = {class_names[c]: float(np.mean(v)) for c, v in scores.items()}
    return ApResult(per_class, float(np.mean(list(per_class.values()))), alignments, instances)


def ap_table_csv(results: Dict[str, ApResult], class_names: Sequence[str]) -> str:
    """One row per method, one column per class, then the mean."""
    rows = ["method," + ",".join(class_names) + ",mean"]
    for name, r in results.items():
        vals = [f"{r.per_class[c]:.6f}" if c in r.per_class else "" for c in class_names]
        rows.append(",".join([name] + vals + [f"{r.mean:.6f}"]))
    return "\n".join(rows) + "\n"


def instance_log_csv(result: ApResult) -> str:
    rows = ["index,class,ap,perm,flips,shift"]
    for (i, cls, ap), t in zip(result.instances, result.alignments):
        rows.append(f"{i},{cls},{ap:.9f},{''.join(map(str, t.perm))},{''.join(map(str, t.flips))},"
                    f"{' '.join(map(str, t.shift))}")
    return "\n".join(rows) + "\n"
