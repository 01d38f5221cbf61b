"""Naive reference implementations used only to check the fast paths.

Everything here is deliberately written as plain loops over definitions,
independent of the vectorized production code.
"""

import numpy as np
from fractions import Fraction


def naive_conv2d(x, w, b=None, stride=1, pad=0, dilation=1, groups=1):
    """Direct nested-loop cross-correlation, accumulated in float64."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, cin, h, wid = x.shape
    cout, cg, k, _ = w.shape
    eff = dilation * (k - 1) + 1
    ho = (h + 2 * pad - eff) // stride + 1
    wo = (wid + 2 * pad - eff) // stride + 1
    xp = np.zeros((n, cin, h + 2 * pad, wid + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wid] = x
    out = np.zeros((n, cout, ho, wo))
    og = cout // groups
    for ni in range(n):
        for oc in range(cout):
            g = oc // og
            for oh in range(ho):
                for ow in range(wo):
                    acc = 0.0
                    for ic in range(cg):
                        for ki in range(k):
                            for kj in range(k):
                                acc += (xp[ni, g * cg + ic,
                                           oh * stride + ki * dilation,
                                           ow * stride + kj * dilation]
                                        * w[oc, ic, ki, kj])
                    out[ni, oc, oh, ow] = acc
            if b is not None:
                out[ni, oc] += float(np.asarray(b).reshape(-1)[oc])
    return out


def naive_conv_transpose2d(x, w, b=None, stride=1, pad=0):
    """Stamp every input pixel's scaled kernel onto the output."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, cin, h, wid = x.shape
    _, cout, k, _ = w.shape
    full = np.zeros((n, cout, (h - 1) * stride + k, (wid - 1) * stride + k))
    for ni in range(n):
        for ci in range(cin):
            for co in range(cout):
                for ih in range(h):
                    for iw in range(wid):
                        for ki in range(k):
                            for kj in range(k):
                                full[ni, co, ih * stride + ki, iw * stride + kj] += \
                                    x[ni, ci, ih, iw] * w[ci, co, ki, kj]
    ho = (h - 1) * stride - 2 * pad + k
    wo = (wid - 1) * stride - 2 * pad + k
    out = full[:, :, pad:pad + ho, pad:pad + wo].copy()
    if b is not None:
        out += np.asarray(b, dtype=np.float64).reshape(1, cout, 1, 1)
    return out


def naive_bce(logits, target):
    """Per-pixel definition evaluated in float64 with explicit sigmoids."""
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    t = np.asarray(target, dtype=np.float64).reshape(-1)
    total = 0.0
    for zi, ti in zip(z, t):
        p = 1.0 / (1.0 + np.exp(-zi))
        total += -(ti * np.log(p) + (1.0 - ti) * np.log(1.0 - p))
    return total / z.size


def otsu_bruteforce(img_u8):
    """Exhaustive between-class-variance maximizer over t in 0..255.

    Recomputes class weights and means from the histogram at every
    threshold and compares variances in exact rational arithmetic, so the
    maximizer (smallest-t tie-break) is unambiguous.
    """
    img = np.asarray(img_u8)
    hist = np.bincount(img.reshape(-1), minlength=256)
    best_t, best_v = 0, Fraction(-1)
    for t in range(256):
        w0 = int(hist[:t + 1].sum())
        w1 = int(hist[t + 1:].sum())
        if w0 == 0 or w1 == 0:
            v = Fraction(0)
        else:
            s0 = int(sum(i * int(hist[i]) for i in range(t + 1)))
            s1 = int(sum(i * int(hist[i]) for i in range(t + 1, 256)))
            mu0 = Fraction(s0, w0)
            mu1 = Fraction(s1, w1)
            v = Fraction(w0) * Fraction(w1) * (mu0 - mu1) ** 2
        if v > best_v:
            best_v, best_t = v, t
    return best_t


def flood_fill_holes(mask, connectivity=4):
    """Fill-holes reference: complement of a stack flood fill from the border."""
    m = np.asarray(mask).astype(bool)
    h, w = m.shape
    reached = np.zeros_like(m)
    stack = []
    for i in range(h):
        for j in (0, w - 1):
            if not m[i, j]:
                stack.append((i, j))
    for j in range(w):
        for i in (0, h - 1):
            if not m[i, j]:
                stack.append((i, j))
    if connectivity == 4:
        nbrs = ((1, 0), (-1, 0), (0, 1), (0, -1))
    else:
        nbrs = tuple((di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1)
                     if (di, dj) != (0, 0))
    while stack:
        i, j = stack.pop()
        if reached[i, j] or m[i, j]:
            continue
        reached[i, j] = True
        for di, dj in nbrs:
            ni, nj = i + di, j + dj
            if 0 <= ni < h and 0 <= nj < w and not reached[ni, nj] and not m[ni, nj]:
                stack.append((ni, nj))
    return (m | ~reached).astype(np.uint8)


def dice_sets(a, b):
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    na, nb = int(a.sum()), int(b.sum())
    if na == 0 and nb == 0:
        return 1.0
    if na == 0 or nb == 0:
        return 0.0
    inter = int((a & b).sum())
    return 2.0 * inter / (na + nb)


def iou_sets(a, b):
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    na, nb = int(a.sum()), int(b.sum())
    if na == 0 and nb == 0:
        return 1.0
    if na == 0 or nb == 0:
        return 0.0
    inter = int((a & b).sum())
    union = int((a | b).sum())
    return inter / union


def mae_loop(p, g):
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    g = np.asarray(g, dtype=np.float64).reshape(-1)
    total = 0.0
    for pi, gi in zip(p, g):
        total += abs(pi - gi)
    return total / p.size


def sweep_dice_loop(p, g):
    p = np.asarray(p, dtype=np.float64)
    total = 0.0
    for t in range(256):
        total += dice_sets(p > t / 255.0, g)
    return total / 256.0
