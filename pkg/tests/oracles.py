"""Slow, loop-based reference implementations used as test oracles.

Each oracle is written directly from the definition with Python loops and
float64 scalars; none of them calls into the package under test.
"""

from __future__ import annotations

import math

import numpy as np


def conv2d_loops(x, w, b=None, stride=1, padding=0):
    x = np.asarray(x, np.float64)
    w = np.asarray(w, np.float64)
    c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        for y in range(ho):
            for xx in range(wo):
                acc = 0.0 if b is None else float(b[o])
                for c in range(c_in):
                    for i in range(kh):
                        for j in range(kw):
                            sy = y * stride + i - padding
                            sx = xx * stride + j - padding
                            if 0 <= sy < h and 0 <= sx < wd:
                                acc += w[o, c, i, j] * x[c, sy, sx]
                out[o, y, xx] = acc
    return out


def transposed_conv2d_scatter(x, w, b=None, stride=1):
    x = np.asarray(x, np.float64)
    w = np.asarray(w, np.float64)
    c_in, h, wd = x.shape
    _, c_out, kh, kw = w.shape
    out = np.zeros((c_out, stride * (h - 1) + kh, stride * (wd - 1) + kw))
    for c in range(c_in):
        for y in range(h):
            for xx in range(wd):
                for o in range(c_out):
                    for i in range(kh):
                        for j in range(kw):
                            out[o, y * stride + i, xx * stride + j] += x[c, y, xx] * w[c, o, i, j]
    if b is not None:
        for o in range(c_out):
            out[o] += b[o]
    return out


def bilinear_point(img, out_h, out_w):
    """Half-pixel bilinear resize of an [H, W] map, one output pixel at a time."""
    img = np.asarray(img, np.float64)
    h, w = img.shape
    out = np.zeros((out_h, out_w))

    def coord(j, n_in, n_out):
        s = (j + 0.5) * n_in / n_out - 0.5
        return min(max(s, 0.0), n_in - 1)

    for i in range(out_h):
        sy = coord(i, h, out_h)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for j in range(out_w):
            sx = coord(j, w, out_w)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            out[i, j] = ((1 - fy) * ((1 - fx) * img[y0, x0] + fx * img[y0, x1])
                         + fy * ((1 - fx) * img[y1, x0] + fx * img[y1, x1]))
    return out


def softmax_direct(v):
    v = [float(t) for t in v]
    m = max(v)
    e = [math.exp(t - m) for t in v]
    s = sum(e)
    return np.array([t / s for t in e])


def sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def lstm_step(x, h, c, w_ih, w_hh, b):
    """One LSTM step, gates in (input, forget, candidate, output) order."""
    n = len(h)
    z = [sum(w_ih[k, i] * x[i] for i in range(len(x))) + sum(w_hh[k, i] * h[i] for i in range(n)) + b[k]
         for k in range(4 * n)]
    c_new = np.zeros(n)
    h_new = np.zeros(n)
    for u in range(n):
        i_g = sigmoid(z[u])
        f_g = sigmoid(z[n + u])
        g_g = math.tanh(z[2 * n + u])
        o_g = sigmoid(z[3 * n + u])
        c_new[u] = f_g * c[u] + i_g * g_g
        h_new[u] = o_g * math.tanh(c_new[u])
    return h_new, c_new


def attention_direct(fused, h_t, att_conv, att_h, att_e):
    """Scores, weights and glimpse written out with the neighbour sum explicit.

    ``att_conv[:, :, 1, 1]`` is the centre (own-pixel) weight; the other eight taps
    weight the neighbours, zero outside the map.
    """
    fused = np.asarray(fused, np.float64)
    c, h, w = fused.shape
    a = att_e.shape[0]
    scores = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            e = np.zeros(a)
            for k in range(a):
                acc = float(att_conv[k, :, 1, 1] @ fused[:, i, j])
                for dp in (-1, 0, 1):
                    for dq in (-1, 0, 1):
                        if (dp, dq) == (0, 0):
                            continue
                        p, q = i + dp, j + dq
                        if 0 <= p < h and 0 <= q < w:
                            acc += float(att_conv[k, :, 1 + dp, 1 + dq] @ fused[:, p, q])
                acc += float(att_h[k] @ h_t)
                e[k] = math.tanh(acc)
            scores[i, j] = float(att_e @ e)
    alpha = softmax_direct(scores.ravel()).reshape(h, w)
    glimpse = np.array([sum(alpha[i, j] * fused[ch, i, j] for i in range(h) for j in range(w))
                        for ch in range(c)])
    return scores, alpha, glimpse


def tar_step_direct(label, guidance, radius=1, floor=1e-4, include_center=False):
    """Refinement step computed pixel by pixel.

    sigma: population std of each guidance channel over the pixel's clipped
    window (centre included), floored.  Affinity to a neighbour: channel mean
    of -|V_p - V_a| / sigma_p^2.  New value: softmax-weighted neighbour mean.
    """
    label = np.asarray(label, np.float64)
    g = np.asarray(guidance, np.float64)
    if g.ndim == 2:
        g = g[None]
    c, h, w = g.shape
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            window = [(yy, xx) for yy in range(y - radius, y + radius + 1)
                      for xx in range(x - radius, x + radius + 1) if 0 <= yy < h and 0 <= xx < w]
            sig = []
            for ch in range(c):
                vals = [g[ch, yy, xx] for yy, xx in window]
                mu = sum(vals) / len(vals)
                sd = math.sqrt(sum((v - mu) ** 2 for v in vals) / len(vals))
                sig.append(max(sd, floor))
            neigh = [(yy, xx) for yy, xx in window if include_center or (yy, xx) != (y, x)]
            if not neigh:
                out[y, x] = label[y, x]
                continue
            ks = [sum(-abs(g[ch, y, x] - g[ch, yy, xx]) / sig[ch] ** 2 for ch in range(c)) / c
                  for yy, xx in neigh]
            wts = softmax_direct(ks)
            out[y, x] = sum(wt * label[yy, xx] for wt, (yy, xx) in zip(wts, neigh))
    return out


def bce_direct(m, p, eps=1e-7):
    m = np.asarray(m, np.float64).ravel()
    p = np.asarray(p, np.float64).ravel()
    total = 0.0
    for mi, pi in zip(m, p):
        mi = min(max(mi, eps), 1 - eps)
        total += -(pi * math.log(mi) + (1 - pi) * math.log(1 - mi))
    return total / len(m)


def ce_direct(logits, gt):
    total = 0.0
    for row, g in zip(logits, gt):
        row = [float(v) for v in row]
        m = max(row)
        lse = m + math.log(sum(math.exp(v - m) for v in row))
        total += lse - row[g]
    return total


def cos_direct(a, b):
    dot = sum(float(x) * float(y) for x, y in zip(a, b))
    na = math.sqrt(sum(float(x) ** 2 for x in a))
    nb = math.sqrt(sum(float(y) ** 2 for y in b))
    return dot / (na * nb)


def nce_direct(pi, pp, negs, tau, include_positive=False):
    num = math.exp(cos_direct(pi, pp) / tau)
    den = sum(math.exp(cos_direct(pi, n) / tau) for n in negs)
    if include_positive:
        den += num
    return -math.log(num / den)


def contrastive_double_loop(batch, tau, include_positive=False):
    total = 0.0
    for i in range(len(batch)):
        negs = [batch[j][0] for j in range(len(batch)) if j != i]
        total += nce_direct(batch[i][0], batch[i][1], negs, tau, include_positive)
    for i in range(len(batch)):
        negs = [batch[j][0] for j in range(len(batch)) if j != i]
        total += nce_direct(batch[i][1], batch[i][0], negs, tau, include_positive)
    return total


def vote_direct(a, b, c):
    """Per-pixel majority of three same-size binary maps."""
    h, w = np.shape(a)
    out = np.zeros((h, w), np.uint8)
    for y in range(h):
        for x in range(w):
            out[y, x] = 1 if int(a[y][x]) + int(b[y][x]) + int(c[y][x]) >= 2 else 0
    return out


def fiou_direct(pred, gt):
    inter = union = 0
    for p, g in zip(np.ravel(pred), np.ravel(gt)):
        inter += bool(p) and bool(g)
        union += bool(p) or bool(g)
    return 1.0 if union == 0 else inter / union
