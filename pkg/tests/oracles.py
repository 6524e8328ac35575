"""Independent brute-force reference implementations used by the tests.

They are deliberately written as plain loops, sharing no code with the
package, so agreement is meaningful.
"""

import math

import numpy as np

f32 = np.float32


def conv_oracle(x, w, b):
    """Same-padded stride-1 convolution; sums over (k, l, m) then adds bias."""
    x = np.asarray(x, f32)
    bsz, h, wd, m = x.shape
    kk, ll, _, n = w.shape
    ph, pw = (kk - 1) // 2, (ll - 1) // 2
    out = np.zeros((bsz, h, wd, n), f32)
    for bi in range(bsz):
        for i in range(h):
            for j in range(wd):
                for c in range(n):
                    acc = f32(0)
                    for k in range(kk):
                        for l in range(ll):
                            y, xx = i + k - ph, j + l - pw
                            for ch in range(m):
                                if 0 <= y < h and 0 <= xx < wd:
                                    v = x[bi, y, xx, ch]
                                else:
                                    v = f32(0)
                                acc = f32(acc + f32(v * w[k, l, ch, c]))
                    out[bi, i, j, c] = f32(acc + b[c])
    return out


def depthwise_oracle(x, w):
    """Per-channel conv_oracle with a single-channel kernel and no bias."""
    x = np.asarray(x, f32)
    m = x.shape[3]
    chans = [
        conv_oracle(x[..., c : c + 1], w[:, :, c].reshape(w.shape[0], w.shape[1], 1, 1), np.zeros(1, f32))
        for c in range(m)
    ]
    return np.concatenate(chans, axis=3)


def pointwise_oracle(x, w, b):
    """1x1 convolution oracle: ``w`` of shape (M, N)."""
    return conv_oracle(x, w.reshape(1, 1, *w.shape), b)


def maxpool_oracle(x):
    bsz, h, w, c = x.shape
    out = np.zeros((bsz, h // 2, w // 2, c), x.dtype)
    arg = np.zeros(out.shape, np.int64)
    for bi in range(bsz):
        for i in range(h // 2):
            for j in range(w // 2):
                for ch in range(c):
                    best, where = None, 0
                    for idx, (di, dj) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
                        v = x[bi, 2 * i + di, 2 * j + dj, ch]
                        if best is None or v > best:
                            best, where = v, idx
                    out[bi, i, j, ch] = best
                    arg[bi, i, j, ch] = where
    return out, arg


def white_balance_oracle(img, percentile):
    """Sort each channel, take nearest-rank anchors, stretch pixel by pixel."""
    out = img.copy()
    h, w, c = img.shape
    n = h * w
    for ch in range(c):
        s = sorted(int(v) for v in img[:, :, ch].ravel())
        lo_rank = max(1, math.ceil(round(percentile * n, 9)))
        hi_rank = max(1, math.ceil(round((1 - percentile) * n, 9)))
        lo, hi = s[min(lo_rank, n) - 1], s[min(hi_rank, n) - 1]
        if hi == lo:
            continue
        for i in range(h):
            for j in range(w):
                v = int(img[i, j, ch])
                v = min(max(v, lo), hi)
                # exact rational half-up rounding of (v - lo) * 255 / (hi - lo)
                num, den = (v - lo) * 255, hi - lo
                q, r = divmod(num, den)
                out[i, j, ch] = q + (1 if 2 * r >= den else 0)
    return out


def equalize_oracle(chan, clip):
    """Single-tile CLAHE: clipped histogram CDF remap between the extrema."""
    vals = [int(v) for v in chan.ravel()]
    npix = len(vals)
    hist = [0.0] * 256
    for v in vals:
        hist[v] += 1.0
    limit = clip * npix / 256.0
    excess = sum(max(hv - limit, 0.0) for hv in hist)
    hist = [min(hv, limit) + excess / 256.0 for hv in hist]
    pmin, pmax = min(vals), max(vals)
    lut = []
    acc = 0.0
    for hv in hist:
        acc += hv
        lut.append((pmax - pmin) * (acc / npix) + pmin)
    out = np.empty_like(chan)
    for idx, v in np.ndenumerate(chan):
        out[idx] = min(255, max(0, math.floor(lut[int(v)] + 0.5)))
    return out


def clahe_oracle(chan, tiles, clip):
    """Literal clip-redistribute-interpolate CLAHE for one channel."""
    h, w = chan.shape
    th, tw = -(-h // tiles), -(-w // tiles)
    padded = np.pad(chan, ((0, th * tiles - h), (0, tw * tiles - w)), mode="edge")
    luts = {}
    for ty in range(tiles):
        for tx in range(tiles):
            tile = padded[ty * th : (ty + 1) * th, tx * tw : (tx + 1) * tw]
            vals = [int(v) for v in tile.ravel()]
            npix = len(vals)
            hist = [0.0] * 256
            for v in vals:
                hist[v] += 1
            limit = clip * npix / 256.0
            excess = sum(max(hv - limit, 0.0) for hv in hist)
            hist = [min(hv, limit) + excess / 256.0 for hv in hist]
            cum, acc = [], 0.0
            for hv in hist:
                acc += hv
                cum.append(acc / npix)
            lo, hi = min(vals), max(vals)
            luts[ty, tx] = [(hi - lo) * c + lo for c in cum]

    def coord(p, t):
        pos = (p + 0.5) / t - 0.5
        i0 = math.floor(pos)
        f = pos - i0
        return min(max(i0, 0), tiles - 1), min(max(i0 + 1, 0), tiles - 1), f

    out = np.empty((h, w), np.uint8)
    for y in range(h):
        y0, y1, fy = coord(y, th)
        for x in range(w):
            x0, x1, fx = coord(x, tw)
            v = int(padded[y, x])
            a, b = luts[y0, x0][v], luts[y0, x1][v]
            c, d = luts[y1, x0][v], luts[y1, x1][v]
            top = a + fx * (b - a)
            bottom = c + fx * (d - c)
            val = top + fy * (bottom - top)
            out[y, x] = min(255, max(0, math.floor(val + 0.5)))
    return out


def tally(labels, preds, k):
    cm = [[0] * k for _ in range(k)]
    for t, p in zip(labels, preds):
        cm[t][p] += 1
    return np.array(cm)


def pair_count_auc(scores, labels):
    """Mann-Whitney: P(score_pos > score_neg) + 0.5 P(tie)."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (len(pos) * len(neg))


def adam_reference(grad_fn, w0, lr, decay, steps, b1=0.9, b2=0.999, eps=1e-7):
    """Scalar Adam with time-based decay; returns the trajectory."""
    w, m, v = w0, 0.0, 0.0
    traj = [w]
    for t in range(1, steps + 1):
        g = grad_fn(w)
        lr_t = lr / (1 + decay * (t - 1))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        w = w - lr_t * mhat / (math.sqrt(vhat) + eps)
        traj.append(w)
    return traj
