"""Independent reference implementations used only by the tests.

Each oracle takes a deliberately different route from the production code:
pixel counting instead of interval arithmetic, explicit loops instead of
vectorised envelopes, exact fractions instead of sampled grids.
"""
from fractions import Fraction

import numpy as np


def pixel_iou(a, b, size=64):
    """IoU of integer boxes by rasterising unit cells on a ``size`` grid."""
    ma = np.zeros((size, size), bool)
    mb = np.zeros((size, size), bool)
    ma[a[1]:a[3], a[0]:a[2]] = True
    mb[b[1]:b[3], b[0]:b[2]] = True
    union = np.logical_or(ma, mb).sum()
    if union == 0:
        return 0.0
    return np.logical_and(ma, mb).sum() / union


def pr_from_flags(flags, n_gt):
    """Plain-loop cumulative (recall, precision) lists for ranked TP flags."""
    tp = fp = 0
    rc, pr = [], []
    for f in flags:
        if f:
            tp += 1
        else:
            fp += 1
        rc.append(np.float64(tp) / np.float64(n_gt))
        pr.append(np.float64(tp) / np.float64(tp + fp))
    return rc, pr


def envelope_grid(flags, n_gt, grid=None):
    """101-point interpolated precision by explicit envelope construction."""
    grid = np.linspace(0.0, 1.0, 101) if grid is None else grid
    rc, pr = pr_from_flags(flags, n_gt)
    out = []
    for r in grid:
        best = 0.0
        for ri, pi in zip(rc, pr):
            if ri >= r and pi > best:
                best = pi
        out.append(best)
    return np.array(out)


def envelope_ap(flags, n_gt):
    return float(np.mean(envelope_grid(flags, n_gt)))


def exact_envelope_integral(flags, n_gt):
    """Area under the interpolated precision envelope over recall [0, 1], exactly."""
    tp = fp = 0
    pts = []
    for f in flags:
        tp, fp = (tp + 1, fp) if f else (tp, fp + 1)
        pts.append((Fraction(tp, n_gt), Fraction(tp, tp + fp)))
    breaks = sorted({r for r, _ in pts})
    area = Fraction(0)
    prev = Fraction(0)
    for rk in breaks:
        env = max(p for r, p in pts if r >= rk)
        area += (rk - prev) * env
        prev = rk
    return float(area)


def greedy_match(gts, preds, thr):
    """Reference class-gated greedy matcher with scalar loops.

    ``gts``/``preds`` are lists of (x0, y0, x1, y1, cls[, conf]) tuples.
    Returns per-prediction matched gt index (or -1) in input order.
    """
    def iou(a, b):
        iw = min(a[2], b[2]) - max(a[0], b[0])
        ih = min(a[3], b[3]) - max(a[1], b[1])
        if iw <= 0 or ih <= 0:
            return 0.0
        inter = iw * ih
        u = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
        return inter / u if u > 0 else 0.0

    order = sorted(range(len(preds)), key=lambda i: (-preds[i][5], i))
    taken = set()
    out = [-1] * len(preds)
    for i in order:
        best, best_j = -1.0, -1
        for j, g in enumerate(gts):
            if j in taken or g[4] != preds[i][4]:
                continue
            v = iou(preds[i], g)
            if v > best:
                best, best_j = v, j
        if best_j >= 0 and best >= thr:
            taken.add(best_j)
            out[i] = best_j
    return out


def naive_conv2d(x, w, b, stride, pad):
    """Six nested loops; ``pad`` is (top, bottom, left, right); no activation."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    top, bottom, left, right = pad
    xp = np.zeros((n, c, h + top + bottom, wd + left + right))
    xp[:, :, top:top + h, left:left + wd] = x
    oh = (h + top + bottom - k) // stride + 1
    ow = (wd + left + right - k) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for ni in range(n):
        for oi in range(o):
            for yi in range(oh):
                for xi in range(ow):
                    acc = float(b[oi])
                    for ci in range(c):
                        for ky in range(k):
                            for kx in range(k):
                                acc += xp[ni, ci, yi * stride + ky, xi * stride + kx] * float(w[oi, ci, ky, kx])
                    out[ni, oi, yi, xi] = acc
    return out


def rendered_hull(mask):
    """Axis-aligned hull (x0, y0, x1, y1) of set pixels, in pixel-edge coordinates."""
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return None
    return (xs.min(), ys.min(), xs.max() + 1, ys.max() + 1)
