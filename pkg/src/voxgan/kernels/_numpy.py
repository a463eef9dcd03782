"""Pure-numpy reference kernels.

Every function here has a twin in ``_numba`` with the same signature and the
same floating-point accumulation order, so both backends agree bitwise on the
convolution gather/scatter and on the integer-valued kernels.
"""

from __future__ import annotations

import numpy as np


def im2col(xp, ksize, stride, oshape):
    """Gather receptive fields of a zero-padded (N, C, D, H, W) array.

    Returns an array of shape (N, C*kd*kh*kw, od*oh*ow); row order is
    channel-major, then kernel depth, height, width.
    """
    n, c = xp.shape[:2]
    kd, kh, kw = ksize
    sd, sh, sw = stride
    od, oh, ow = oshape
    cols = np.empty((n, c, kd, kh, kw, od, oh, ow), dtype=xp.dtype)
    for a in range(kd):
        for b in range(kh):
            for e in range(kw):
                cols[:, :, a, b, e] = xp[
                    :, :,
                    a:a + sd * (od - 1) + 1:sd,
                    b:b + sh * (oh - 1) + 1:sh,
                    e:e + sw * (ow - 1) + 1:sw,
                ]
    return cols.reshape(n, c * kd * kh * kw, od * oh * ow)


def col2im(cols, pshape, ksize, stride, oshape):
    """Scatter-add columns back into a padded (N, C, Dp, Hp, Wp) array.

    Adjoint of :func:`im2col`. Kernel offsets are visited in ascending order,
    which fixes the summation order for every output element.
    """
    n, c = pshape[:2]
    kd, kh, kw = ksize
    sd, sh, sw = stride
    od, oh, ow = oshape
    cols = cols.reshape(n, c, kd, kh, kw, od, oh, ow)
    out = np.zeros(pshape, dtype=cols.dtype)
    for a in range(kd):
        for b in range(kh):
            for e in range(kw):
                out[
                    :, :,
                    a:a + sd * (od - 1) + 1:sd,
                    b:b + sh * (oh - 1) + 1:sh,
                    e:e + sw * (ow - 1) + 1:sw,
                ] += cols[:, :, a, b, e]
    return out


_NEIGHBOR_SHIFTS = (
    (0, 1), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1),
)


def label_components(mask):
    """6-connected component labels by iterated minimum propagation.

    Labels are 1..K ordered by each component's smallest linear index;
    background is 0. Returns (labels, sizes) with ``sizes[k-1]`` the voxel
    count of label k.
    """
    mask = np.ascontiguousarray(mask, dtype=bool)
    big = np.iinfo(np.int64).max
    lab = np.where(mask, np.arange(mask.size, dtype=np.int64).reshape(mask.shape), big)
    while True:
        prev = lab
        cur = lab.copy()
        for axis, step in _NEIGHBOR_SHIFTS:
            nb = np.full_like(cur, big)
            src = [slice(None)] * 3
            dst = [slice(None)] * 3
            if step > 0:
                src[axis], dst[axis] = slice(1, None), slice(None, -1)
            else:
                src[axis], dst[axis] = slice(None, -1), slice(1, None)
            nb[tuple(dst)] = cur[tuple(src)]
            np.minimum(cur, nb, out=cur, where=mask)
        lab = cur
        if np.array_equal(lab, prev):
            break
    labels = np.zeros(mask.shape, dtype=np.int64)
    if not mask.any():
        return labels, np.zeros(0, dtype=np.int64)
    roots, inverse, sizes = np.unique(lab[mask], return_inverse=True, return_counts=True)
    labels[mask] = inverse + 1
    return labels, sizes.astype(np.int64)


def _transform_grid(grid, perm, flips, shift):
    out = np.transpose(grid, perm)
    for axis in range(3):
        if flips[axis]:
            out = np.flip(out, axis)
    res = out.shape[0]
    moved = np.zeros_like(out)
    src = []
    dst = []
    for t in shift:
        if t >= 0:
            src.append(slice(0, res - t))
            dst.append(slice(t, res))
        else:
            src.append(slice(-t, res))
            dst.append(slice(0, res + t))
    moved[tuple(dst)] = out[tuple(src)]
    return moved


def _tied_ap(scores, labels):
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order].astype(np.int64)
    n_pos = int(y.sum())
    ends = np.flatnonzero(np.append(s[1:] != s[:-1], True))
    tp = np.cumsum(y)[ends]
    cnt = ends + 1
    ap = 0.0
    prev = 0.0
    for k in range(len(ends)):
        recall = tp[k] / n_pos
        if recall != prev:
            ap += (recall - prev) * (tp[k] / cnt[k])
        prev = recall
    return ap


def best_alignment(pred, truth, max_shift, perms):
    """Exhaustive permutation/flip/translation search maximizing AP.

    Returns (best_ap, best_code). Codes enumerate (perm, flip bits, tx, ty,
    tz) lexicographically; the first maximum wins and the search stops early
    at AP == 1.0.
    """
    labels = truth.ravel().astype(np.int64)
    span = 2 * max_shift + 1
    best_ap = -1.0
    best_code = -1
    code = 0
    for perm in perms:
        for flip in range(8):
            flips = ((flip >> 2) & 1, (flip >> 1) & 1, flip & 1)
            for tx in range(-max_shift, max_shift + 1):
                for ty in range(-max_shift, max_shift + 1):
                    for tz in range(-max_shift, max_shift + 1):
                        moved = _transform_grid(pred, perm, flips, (tx, ty, tz))
                        ap = _tied_ap(moved.ravel(), labels)
                        if ap > best_ap:
                            best_ap, best_code = ap, code
                            if best_ap >= 1.0:
                                return best_ap, best_code
                        code += 1
    assert code == len(perms) * 8 * span ** 3
    return best_ap, best_code


def svm_dual_cd(X, y, upper, max_iter, tol):
    """Dual coordinate descent for one binary hinge-loss linear SVM.

    Minimizes ``0.5*||w||^2 - sum(alpha)`` over ``0 <= alpha_i <= upper_i``
    with ``w = sum(alpha_i y_i x_i)``, visiting samples in index order.
    Returns (w, alpha, n_sweeps, converged, objective per sweep, duality gap).
    """
    n, d = X.shape
    w = np.zeros(d, dtype=np.float64)
    alpha = np.zeros(n, dtype=np.float64)
    qii = np.einsum("ij,ij->i", X, X)
    history = np.zeros(max_iter, dtype=np.float64)
    converged = False
    gap = np.inf
    sweeps = 0
    for it in range(max_iter):
        max_step = 0.0
        for i in range(n):
            if qii[i] <= 0.0:
                continue
            g = y[i] * np.dot(w, X[i]) - 1.0
            new = alpha[i] - g / qii[i]
            if new < 0.0:
                new = 0.0
            elif new > upper[i]:
                new = upper[i]
            delta = new - alpha[i]
            if delta != 0.0:
                alpha[i] = new
                w += (delta * y[i]) * X[i]
                if abs(delta) > max_step:
                    max_step = abs(delta)
        sweeps = it + 1
        ww = np.dot(w, w)
        dual_obj = 0.5 * ww - alpha.sum()
        history[it] = dual_obj
        margins = 1.0 - y * (X @ w)
        primal = 0.5 * ww + np.dot(upper, np.maximum(margins, 0.0))
        gap = primal + dual_obj
        if gap < tol or max_step < tol:
            converged = True
            break
    return w, alpha, sweeps, converged, history[:sweeps], gap
