"""Independent reference implementations used only by the tests.

Everything here is written with plain loops or separately composed numpy
products, without touching the autodiff graph, so that agreement with the
package is evidence rather than tautology.
"""

from __future__ import annotations

import math

import numpy as np


def matmul_loops(a, b):
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def softmax_rows(s):
    out = np.empty_like(s, dtype=np.float64)
    for i, row in enumerate(s):
        e = np.exp(row - row.max())
        out[i] = e / e.sum()
    return out


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def bce(p, y, clamp=1e-7):
    p = np.clip(np.asarray(p, dtype=float), clamp, 1 - clamp)
    y = np.asarray(y, dtype=float)
    total = 0.0
    for pv, yv in zip(p.ravel(), y.ravel()):
        total -= yv * math.log(pv) + (1 - yv) * math.log(1 - pv)
    return total / p.size


def encode(frames, W, b, rho):
    h = np.tanh(frames @ W + b)
    rows = []
    for s in range(0, len(h), rho):
        rows.append(h[s:s + rho].mean(axis=0))
    return np.array(rows)


def full_logits(frames, M, enc, att, head):
    """Equation-by-equation evaluation, every product spelled out separately."""
    X = encode(frames, enc["W"], enc["b"], enc["rho"])
    XWx = X @ att["W_X"]
    MWm = M @ att["W_M"]
    r = softmax_rows(XWx @ MWm.T)
    rM = r @ M
    U = rM @ att["W_M"] + rM @ att["W_delta"]
    Z = U @ att["W_u"] + X
    P = Z.max(axis=0, keepdims=True)
    PWp = P @ att["W_P"]
    XWq = X @ att["W_Q"]
    A = softmax_rows(PWp @ XWq.T)
    XWv = X @ att["W_V"]
    V = (A @ XWv) @ att["W_O"]
    return (P + V) @ head["W"] + head["b"]


def tiou(a, b):
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union


def ap_enumerate(tp, n_gt):
    """All-point AP by enumerating every score cut-off.

    For each recall level reached, take the best precision at any cut-off
    reaching at least that recall; integrate over recall increments.
    """
    n = len(tp)
    points = []
    hits = 0
    for cut in range(1, n + 1):
        hits += int(tp[cut - 1])
        points.append((hits / n_gt, hits / cut))
    ap, prev_recall = 0.0, 0.0
    for level in sorted({r for r, _ in points}):
        if level <= prev_recall:
            continue
        best = max(p for r, p in points if r >= level)
        ap += (level - prev_recall) * best
        prev_recall = level
    return ap


def map_enumerate(detections, ground_truth, threshold):
    """mAP in percent from raw ``(video, Span)`` lists by enumerating score thresholds.

    At every distinct score the detections at or above it are matched from
    scratch (best unmatched ground truth per detection, highest score first),
    giving one precision/recall point.  Scores are assumed distinct.
    """
    aps = []
    for c in sorted({g.cls for _, g in ground_truth}):
        gts = [(v, g) for v, g in ground_truth if g.cls == c]
        dets = [(v, d) for v, d in detections if d.cls == c]
        points = []
        for cut in sorted({d.score for _, d in dets}, reverse=True):
            kept = sorted((x for x in dets if x[1].score >= cut), key=lambda x: -x[1].score)
            used, hits = set(), 0
            for v, d in kept:
                cands = [(tiou((d.start, d.end), (g.start, g.end)), i)
                         for i, (gv, g) in enumerate(gts) if gv == v and i not in used]
                if cands:
                    best = max(cands, key=lambda p: (p[0], -p[1]))
                    if best[0] >= threshold:
                        used.add(best[1])
                        hits += 1
            points.append((hits / len(gts), hits / len(kept)))
        ap, prev = 0.0, 0.0
        for level in sorted({r for r, _ in points}):
            if level > prev:
                ap += (level - prev) * max(p for r, p in points if r >= level)
                prev = level
        aps.append(ap)
    return 100.0 * sum(aps) / len(aps)
