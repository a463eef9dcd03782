"""Numba-compiled twins of the kernels in ``_numpy``.

Loop orders mirror the numpy versions so accumulations happen in the same
sequence per output element. All kernels are serial (no ``prange``) to keep
results deterministic.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _im2col(xp, kd, kh, kw, sd, sh, sw, od, oh, ow):
    n = xp.shape[0]
    c = xp.shape[1]
    cols = np.empty((n, c * kd * kh * kw, od * oh * ow), dtype=xp.dtype)
    for i in range(n):
        for ch in range(c):
            for a in range(kd):
                for b in range(kh):
                    for e in range(kw):
                        row = ((ch * kd + a) * kh + b) * kw + e
                        for z in range(od):
                            for y in range(oh):
                                base = (z * oh + y) * ow
                                for x in range(ow):
                                    cols[i, row, base + x] = xp[i, ch, a + z * sd, b + y * sh, e + x * sw]
    return cols


@njit(cache=True)
def _col2im(cols, out, kd, kh, kw, sd, sh, sw, od, oh, ow):
    n = out.shape[0]
    c = out.shape[1]
    for i in range(n):
        for ch in range(c):
            for a in range(kd):
                for b in range(kh):
                    for e in range(kw):
                        row = ((ch * kd + a) * kh + b) * kw + e
                        for z in range(od):
                            for y in range(oh):
                                base = (z * oh + y) * ow
                                for x in range(ow):
                                    out[i, ch, a + z * sd, b + y * sh, e + x * sw] += cols[i, row, base + x]
    return out


def im2col(xp, ksize, stride, oshape):
    return _im2col(np.ascontiguousarray(xp), *ksize, *stride, *oshape)


def col2im(cols, pshape, ksize, stride, oshape):
    n, c = pshape[:2]
    cols = np.ascontiguousarray(cols).reshape(n, c * ksize[0] * ksize[1] * ksize[2], -1)
    out = np.zeros(pshape, dtype=cols.dtype)
    return _col2im(cols, out, *ksize, *stride, *oshape)


@njit(cache=True)
def _label_components(flat, dims):
    d0, d1, d2 = dims[0], dims[1], dims[2]
    total = d0 * d1 * d2
    labels = np.zeros(total, dtype=np.int64)
    sizes = np.zeros(total, dtype=np.int64)
    queue = np.empty(total, dtype=np.int64)
    current = 0
    for start in range(total):
        if not flat[start] or labels[start] != 0:
            continue
        current += 1
        labels[start] = current
        head = 0
        tail = 0
        queue[tail] = start
        tail += 1
        while head < tail:
            idx = queue[head]
            head += 1
            x = idx // (d1 * d2)
            y = (idx // d2) % d1
            z = idx % d2
            for k in range(6):
                nx, ny, nz = x, y, z
                if k == 0:
                    nx += 1
                elif k == 1:
                    nx -= 1
                elif k == 2:
                    ny += 1
                elif k == 3:
                    ny -= 1
                elif k == 4:
                    nz += 1
                else:
                    nz -= 1
                if nx < 0 or ny < 0 or nz < 0 or nx >= d0 or ny >= d1 or nz >= d2:
                    continue
                nidx = (nx * d1 + ny) * d2 + nz
                if flat[nidx] and labels[nidx] == 0:
                    labels[nidx] = current
                    queue[tail] = nidx
                    tail += 1
        sizes[current - 1] = tail
    return labels, sizes[:current]


def label_components(mask):
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    labels, sizes = _label_components(mask.ravel(), np.array(mask.shape, dtype=np.int64))
    return labels.reshape(mask.shape), sizes


@njit(cache=True)
def _best_alignment(order, vals, truth, res, perms, max_shift):
    n = res * res * res
    n_pos = 0
    for i in range(n):
        n_pos += truth[i]
    n_sorted = order.shape[0]
    src = np.empty(3, dtype=np.int64)
    dst = np.empty(3, dtype=np.int64)
    best_ap = -1.0
    best_code = -1
    code = 0
    for p in range(perms.shape[0]):
        for flip in range(8):
            for tx in range(-max_shift, max_shift + 1):
                for ty in range(-max_shift, max_shift + 1):
                    for tz in range(-max_shift, max_shift + 1):
                        tp = 0
                        cnt = 0
                        prev = 0.0
                        ap = 0.0
                        i = 0
                        while i < n_sorted:
                            score = vals[i]
                            if score <= 0.0:
                                break
                            gtp = 0
                            gcnt = 0
                            j = i
                            while j < n_sorted and vals[j] == score:
                                s = order[j]
                                src[0] = s // (res * res)
                                src[1] = (s // res) % res
                                src[2] = s % res
                                inside = True
                                for k in range(3):
                                    v = src[perms[p, k]]
                                    if (flip >> (2 - k)) & 1:
                                        v = res - 1 - v
                                    if k == 0:
                                        v += tx
                                    elif k == 1:
                                        v += ty
                                    else:
                                        v += tz
                                    if v < 0 or v >= res:
                                        inside = False
                                        break
                                    dst[k] = v
                                if inside:
                                    gcnt += 1
                                    gtp += truth[(dst[0] * res + dst[1]) * res + dst[2]]
                                j += 1
                            if gcnt > 0:
                                tp += gtp
                                cnt += gcnt
                                recall = tp / n_pos
                                if recall != prev:
                                    ap += (recall - prev) * (tp / cnt)
                                prev = recall
                            i = j
                        if cnt < n:
                            recall = n_pos / n_pos
                            if recall != prev:
                                ap += (recall - prev) * (n_pos / n)
                        if ap > best_ap:
                            best_ap = ap
                            best_code = code
                            if best_ap >= 1.0:
                                return best_ap, best_code
                        code += 1
    return best_ap, best_code


def best_alignment(pred, truth, max_shift, perms):
    res = pred.shape[0]
    flat = np.ascontiguousarray(pred, dtype=np.float64).ravel()
    order = np.argsort(-flat, kind="stable")
    vals = flat[order]
    keep = vals > 0.0
    return _best_alignment(
        order[keep].astype(np.int64),
        vals[keep],
        np.ascontiguousarray(truth).ravel().astype(np.int64),
        res,
        np.asarray(perms, dtype=np.int64),
        max_shift,
    )


@njit(cache=True)
def _svm_dual_cd(X, y, upper, max_iter, tol):
    n, d = X.shape
    w = np.zeros(d, dtype=np.float64)
    alpha = np.zeros(n, dtype=np.float64)
    qii = np.zeros(n, dtype=np.float64)
    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc += X[i, j] * X[i, j]
        qii[i] = acc
    history = np.zeros(max_iter, dtype=np.float64)
    converged = False
    gap = np.inf
    sweeps = 0
    for it in range(max_iter):
        max_step = 0.0
        for i in range(n):
            if qii[i] <= 0.0:
                continue
            acc = 0.0
            for j in range(d):
                acc += w[j] * X[i, j]
            g = y[i] * acc - 1.0
            new = alpha[i] - g / qii[i]
            if new < 0.0:
                new = 0.0
            elif new > upper[i]:
                new = upper[i]
            delta = new - alpha[i]
            if delta != 0.0:
                alpha[i] = new
                scale = delta * y[i]
                for j in range(d):
                    w[j] += scale * X[i, j]
                if abs(delta) > max_step:
                    max_step = abs(delta)
        sweeps = it + 1
        ww = 0.0
        for j in range(d):
            ww += w[j] * w[j]
        dual_obj = 0.5 * ww - alpha.sum()
        history[it] = dual_obj
        hinge = 0.0
        for i in range(n):
            acc = 0.0
            for j in range(d):
                acc += w[j] * X[i, j]
            m = 1.0 - y[i] * acc
            if m > 0.0:
                hinge += upper[i] * m
        gap = 0.5 * ww + hinge + dual_obj
        if gap < tol or max_step < tol:
            converged = True
            break
    return w, alpha, sweeps, converged, history[:sweeps], gap


def svm_dual_cd(X, y, upper, max_iter, tol):
    return _svm_dual_cd(
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.float64),
        np.ascontiguousarray(upper, dtype=np.float64),
        int(max_iter),
        float(tol),
    )
