from fractions import Fraction
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voxgan.evaluation import (PERMUTATIONS, AlignmentTransform, NoPositivesError, ap_table_csv,
                               average_precision, best_aligned_ap, default_max_shift, evaluate_reconstruction,
                               instance_log_csv)


def ranked_list_ap(scores, truth):
    """Exhaustive oracle: walk every distinct threshold, exact rational arithmetic."""
    scores = [Fraction(float(s)) for s in np.ravel(scores)]
    truth = [int(t) for t in np.ravel(truth)]
    n_pos = sum(truth)
    ap, prev_recall = Fraction(0), Fraction(0)
    for thr in sorted(set(scores), reverse=True):
        picked = [t for s, t in zip(scores, truth) if s >= thr]
        tp = sum(picked)
        recall = Fraction(tp, n_pos)
        ap += (recall - prev_recall) * Fraction(tp, len(picked))
        prev_recall = recall
    return ap


def random_instance(rng, shape=(6, 6, 6), levels=None):
    truth = (rng.random(shape) < rng.uniform(0.05, 0.6)).astype(int)
    truth.flat[rng.integers(truth.size)] = 1
    if levels:
        scores = rng.integers(0, levels, size=shape) / (levels - 1)
    else:
        scores = rng.random(shape)
    return scores, truth


def test_ap_examples():
    truth = np.array([1, 0, 1, 0, 0])
    assert average_precision(truth.astype(float), truth) == 1.0
    assert average_precision(np.full(5, 0.3), truth) == pytest.approx(0.4)
    # ranking 1,0,1: P@1 = 1, P@3 = 2/3
    assert average_precision([0.9, 0.8, 0.7, 0.1, 0.0], truth) == pytest.approx(0.5 * 1 + 0.5 * 2 / 3)


def test_ap_errors():
    with pytest.raises(NoPositivesError):
        average_precision([0.1, 0.2], [0, 0])
    with pytest.raises(ValueError, match="binary"):
        average_precision([0.1, 0.2], [2, 0])
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        average_precision([1.5, 0.2], [1, 0])
    with pytest.raises(ValueError):
        average_precision([0.1, 0.2, 0.3], [1, 0])


@pytest.mark.parametrize("levels", [None, 3, 7])
def test_ap_matches_ranked_list_oracle(levels):
    rng = np.random.default_rng(levels or 0)
    for _ in range(40):
        s, t = random_instance(rng, levels=levels)
        exact = ranked_list_ap(s, t)
        assert abs(average_precision(s, t) - float(exact)) <= 1e-12


@settings(max_examples=30)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["sqrt", "square", "affine"]))
def test_ap_monotone_invariance(seed, fn):
    rng = np.random.default_rng(seed)
    s, t = random_instance(rng, shape=(4, 4, 4), levels=9)
    f = {"sqrt": np.sqrt, "square": np.square, "affine": lambda a: 0.25 + 0.5 * a}[fn]
    assert average_precision(f(s), t) == pytest.approx(average_precision(s, t), abs=1e-12)


def test_default_budget_and_code_order():
    assert default_max_shift(20) == 2
    assert len(PERMUTATIONS) == 6 and PERMUTATIONS[0] == (0, 1, 2)
    identity = AlignmentTransform()
    assert identity.encode(2) == (0 * 8 + 0) * 125 + 2 * 25 + 2 * 5 + 2
    for code in (0, 1, 62, 999, 5999):
        assert AlignmentTransform.decode(code, 2).encode(2) == code
    with pytest.raises(ValueError):
        AlignmentTransform.decode(6000, 2)


def _margin_grid(rng, res=20, margin=2, p=0.2):
    g = np.zeros((res,) * 3, dtype=np.int64)
    inner = rng.random((res - 2 * margin,) * 3) < p
    g[margin:res - margin, margin:res - margin, margin:res - margin] = inner
    g[res // 2, res // 2, res // 2] = 1
    return g


def test_identity_alignment_chosen_for_exact_match(rng):
    g = _margin_grid(rng)
    ap, tr = best_aligned_ap(g.astype(float), g)
    assert ap == 1.0 and tr == AlignmentTransform()


@pytest.mark.parametrize("shift", [(1, 0, 0), (-2, 2, 1), (0, -1, -2)])
def test_within_budget_shift_recovered(shift, rng):
    g = _margin_grid(rng)
    pred = AlignmentTransform(shift=shift).apply(g).astype(float)
    ap, tr = best_aligned_ap(pred, g)
    assert ap == 1.0
    assert tr.apply(pred).astype(int).tolist() == g.tolist()


def test_outside_budget_shift_is_penalized():
    g = np.zeros((20, 20, 20), dtype=np.int64)
    g[5:15, 10, 10] = 1  # thin rod along x
    pred = AlignmentTransform(shift=(0, 3, 0)).apply(g).astype(float)
    ap, _ = best_aligned_ap(pred, g)
    assert ap < 1.0


def test_flip_and_permutation_recovered(rng):
    g = _margin_grid(rng)
    tr = AlignmentTransform(perm=(2, 0, 1), flips=(1, 0, 1), shift=(0, 0, 0))
    ap, _ = best_aligned_ap(tr.apply(g).astype(float), g)
    assert ap == 1.0


@settings(max_examples=15)
@given(st.integers(0, 2**31 - 1), st.integers(0, 5), st.integers(0, 7),
       st.tuples(*[st.integers(-1, 1)] * 3))
def test_search_recovers_any_in_budget_transform(seed, p, flip, shift):
    rng = np.random.default_rng(seed)
    truth = _margin_grid(rng, res=10, margin=1, p=0.3)
    pred = truth * rng.uniform(0.3, 1.0, truth.shape) + (1 - truth) * rng.uniform(0.0, 0.7, truth.shape)
    plain = average_precision(pred, truth)
    t = AlignmentTransform(PERMUTATIONS[p], ((flip >> 2) & 1, (flip >> 1) & 1, flip & 1), shift)
    searched, _ = best_aligned_ap(t.apply(pred), truth, max_shift=1)
    assert searched >= plain - 1e-12


def test_shape_validation():
    with pytest.raises(ValueError):
        best_aligned_ap(np.zeros((4, 4, 4)), np.ones((5, 5, 5), dtype=int))


def _pairs(grids, labels):
    return [SimpleNamespace(image=g, grid=g, label=l) for g, l in zip(grids, labels)]


def test_oracle_reconstruction_perfect(rng):
    grids = [_margin_grid(rng, res=16, p=0.3).astype(np.float32) for _ in range(4)]
    res = evaluate_reconstruction(None, None, _pairs(grids, [0, 1, 0, 1]), ["a", "b"], predict=lambda img: img)
    assert res.mean == 1.0 and res.per_class == {"a": 1.0, "b": 1.0}
    assert len(res.instances) == 4 and len(res.alignments) == 4
    table = ap_table_csv({"oracle": res}, ["a", "b"])
    assert table.splitlines() == ["method,a,b,mean", "oracle,1.000000,1.000000,1.000000"]
    assert instance_log_csv(res).splitlines()[1].startswith("0,a,1.000000000,012,000,0 0 0")


def test_single_class_mean_and_missing_class(rng):
    grids = [_margin_grid(rng, res=16, p=0.3).astype(np.float32) for _ in range(2)]
    noisy = lambda img: np.clip(img * 0.6 + 0.2 * (img.sum() % 2), 0, 1)  # noqa: E731
    res = evaluate_reconstruction(None, None, _pairs(grids, [0, 0]), ["a"], predict=noisy)
    assert res.mean == res.per_class["a"]
    with pytest.raises(ValueError, match="no evaluation pairs for class"):
        evaluate_reconstruction(None, None, _pairs(grids, [0, 0]), ["a", "b"], predict=noisy)
    with pytest.raises(ValueError):
        evaluate_reconstruction(None, None, [], ["a"], predict=noisy)
