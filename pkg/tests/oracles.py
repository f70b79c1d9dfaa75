"""Independent reference implementations used only by the tests.

Deliberately naive: explicit loops, no shared code with the package.
"""

import cmath

import numpy as np


def conv2d_loops(x, w, b=None, pad=1):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    out = np.zeros((n, o, h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1))
    for ni in range(n):
        for oi in range(o):
            for y in range(out.shape[2]):
                for xx in range(out.shape[3]):
                    acc = 0.0 if b is None else float(b[oi])
                    for ci in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                yy, xj = y + i - pad, xx + j - pad
                                if 0 <= yy < h and 0 <= xj < wd:
                                    acc += float(x[ni, ci, yy, xj]) * float(w[oi, ci, i, j])
                    out[ni, oi, y, xx] = acc
    return out


def maxpool_scan(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2))
    idx = np.zeros((n, c, h // 2, w // 2), dtype=int)
    for ni in range(n):
        for ci in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    best, arg = -np.inf, -1
                    for k, (a, bb) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
                        v = x[ni, ci, 2 * i + a, 2 * j + bb]
                        if v > best:
                            best, arg = v, k
                    out[ni, ci, i, j] = best
                    idx[ni, ci, i, j] = arg
    return out, idx


def transpose_scatter(x, w, b=None):
    n, c, h, wd = x.shape
    o = w.shape[1]
    out = np.zeros((n, o, 2 * h, 2 * wd))
    for ni in range(n):
        for ci in range(c):
            for i in range(h):
                for j in range(wd):
                    for oi in range(o):
                        for a in range(2):
                            for bb in range(2):
                                out[ni, oi, 2 * i + a, 2 * j + bb] += x[ni, ci, i, j] * w[ci, oi, a, bb]
    if b is not None:
        out += np.asarray(b)[None, :, None, None]
    return out


def batch_stats_two_pass(x):
    n, c, h, w = x.shape
    means, variances = [], []
    for ci in range(c):
        vals = [float(v) for v in x[:, ci].ravel()]
        m = sum(vals) / len(vals)
        means.append(m)
        variances.append(sum((v - m) ** 2 for v in vals) / len(vals))
    return np.array(means), np.array(variances)


def numeric_grad(f, x, h=1e-3):
    """Central-difference gradient of scalar ``f`` w.r.t. array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def confusion_brute(pred, truth, k=11):
    tp, fp, fn, tn = [0] * k, [0] * k, [0] * k, [0] * k
    for p, t in zip(np.ravel(pred).tolist(), np.ravel(truth).tolist()):
        for c in range(k):
            if p == c and t == c:
                tp[c] += 1
            elif p == c:
                fp[c] += 1
            elif t == c:
                fn[c] += 1
            else:
                tn[c] += 1
    return tp, fp, fn, tn


def metrics_brute(pred, truth, k=11):
    tp, fp, fn, _ = confusion_brute(pred, truth, k)
    out = {}
    for name, num, den in (
        ("mean_iou", tp, [tp[c] + fp[c] + fn[c] for c in range(k)]),
        ("mean_dice", [2 * v for v in tp], [2 * tp[c] + fp[c] + fn[c] for c in range(k)]),
        ("mean_precision", tp, [tp[c] + fp[c] for c in range(k)]),
        ("mean_recall", tp, [tp[c] + fn[c] for c in range(k)]),
    ):
        vals = [num[c] / den[c] for c in range(k) if den[c] > 0]
        out[name] = sum(vals) / len(vals)
    return out


def slab_reflectance_matrix(d_m, f_hz, eps_oil, eps_water):
    """|r|^2 of air/oil/water via the 2x2 characteristic-matrix method (exp(-i w t))."""
    c = 299_792_458.0
    n1 = cmath.sqrt(eps_oil)
    n2 = cmath.sqrt(eps_water)
    delta = 2 * cmath.pi * f_hz * n1 * d_m / c
    m11, m12 = cmath.cos(delta), -1j * cmath.sin(delta) / n1
    m21, m22 = -1j * n1 * cmath.sin(delta), cmath.cos(delta)
    b = m11 + m12 * n2
    cc = m21 + m22 * n2
    r = (b - cc) / (b + cc)
    return abs(r) ** 2
