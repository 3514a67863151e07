"""Independent reference implementations used to freeze expected values.

None of these import the package's numerical kernels: they are scalar,
brute-force or sampling versions of the same quantities.
"""
import itertools
import math
from fractions import Fraction

import numpy as np


def bilinear_sample(x, out_h, out_w):
    """Per-output-pixel scalar sampler: half-pixel centres, edge-clamped source coords."""
    h, w, c = x.shape
    out = np.zeros((out_h, out_w, c))
    for i in range(out_h):
        sy = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for j in range(out_w):
            sx = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            for ch in range(c):
                top = (1 - fx) * x[y0, x0, ch] + fx * x[y0, x1, ch]
                bot = (1 - fx) * x[y1, x0, ch] + fx * x[y1, x1, ch]
                out[i, j, ch] = (1 - fy) * top + fy * bot
    return out


def numeric_vjp(f, x, seed, eps=1e-6):
    """Central-difference gradient of <seed, f(x)> with respect to x."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat, gf = x.ravel(), g.ravel()
    for i in range(flat.size):
        o = flat[i]
        flat[i] = o + eps
        fp = float(np.sum(seed * f(x)))
        flat[i] = o - eps
        fm = float(np.sum(seed * f(x)))
        flat[i] = o
        gf[i] = (fp - fm) / (2 * eps)
    return g


def brute_force_assignment(cost):
    """Minimum total over all injections of the smaller side into the larger."""
    c = np.asarray(cost, dtype=float)
    r, k = c.shape
    if r == 0 or k == 0:
        return 0.0
    # totals are summed in ascending row order, matching assignment_cost on row-sorted pairs
    if r <= k:
        return min(sum(c[i, p[i]] for i in range(r)) for p in itertools.permutations(range(k), r))
    best = math.inf
    for p in itertools.permutations(range(r), k):
        best = min(best, sum(c[i, j] for i, j in sorted(zip(p, range(k)))))
    return best


def _inside_rect(px, pz, box):
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx, dz = px - box.x, pz - box.z
    a = c * dx + s * dz
    b = -s * dx + c * dz
    return (np.abs(a) <= box.length / 2) & (np.abs(b) <= box.width / 2)


def monte_carlo_iou(a, b, n, rng):
    """Point-count IoU estimate over the joint bounding square."""
    ra = 0.5 * math.hypot(a.length, a.width)
    rb = 0.5 * math.hypot(b.length, b.width)
    lo_x, hi_x = min(a.x - ra, b.x - rb), max(a.x + ra, b.x + rb)
    lo_z, hi_z = min(a.z - ra, b.z - rb), max(a.z + ra, b.z + rb)
    px = rng.uniform(lo_x, hi_x, n)
    pz = rng.uniform(lo_z, hi_z, n)
    ia, ib = _inside_rect(px, pz, a), _inside_rect(px, pz, b)
    union = np.count_nonzero(ia | ib)
    return np.count_nonzero(ia & ib) / union if union else 0.0


def mask_indicator(boxes, h, w):
    """Cell-by-cell evaluation: centre (j + 1/2, i + 1/2) inside any closed box."""
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            cx, cy = j + 0.5, i + 0.5
            if any(b.x1 <= cx <= b.x2 and b.y1 <= cy <= b.y2 for b in boxes):
                out[i, j] = 1.0
    return out


def ap40_envelope(tp_sequence, n_gt):
    """Exact-rational 40-point AP from a score-sorted list of TP (True) / FP (False)."""
    points, tp = [], 0
    for k, hit in enumerate(tp_sequence, 1):
        tp += bool(hit)
        points.append((Fraction(tp, n_gt), Fraction(tp, k)))
    total = Fraction(0)
    for r in range(1, 41):
        level = Fraction(r, 40)
        total += max((p for rec, p in points if rec >= level), default=Fraction(0))
    return total / 40
