"""Pure-Python/numpy twins of the compiled kernels in ``_kernels.pyx``."""
import math

import numpy as np


def matmul(a, b):
    m, kk = a.shape
    out = np.zeros((m, b.shape[1]), dtype=np.float64)
    # rank-1 updates in ascending k; separate multiply and add, no FMA
    for k in range(kk):
        out += a[:, k, None] * b[None, k, :]
    return out


def softmax_rows(x):
    m, n = x.shape
    mx = x[:, 0].copy()
    for j in range(1, n):
        np.maximum(mx, x[:, j], out=mx)
    e = np.exp(x - mx[:, None])
    s = np.zeros(m)
    for j in range(n):
        s += e[:, j]
    return e / s[:, None]


def hungarian_square(cost):
    n = cost.shape[0]
    c = cost.tolist()
    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            row = c[i0 - 1]
            ui0 = u[i0]
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    row_to_col = np.empty(n, dtype=np.intp)
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    return row_to_col, np.array(u[1:]), np.array(v[1:])


def _clip(poly, ax, ay, bx, by):
    out = []
    if not poly:
        return out
    sx, sy = poly[-1]
    ds = (bx - ax) * (sy - ay) - (by - ay) * (sx - ax)
    for ex, ey in poly:
        de = (bx - ax) * (ey - ay) - (by - ay) * (ex - ax)
        if de >= 0.0:
            if ds < 0.0:
                t = ds / (ds - de)
                out.append((sx + t * (ex - sx), sy + t * (ey - sy)))
            out.append((ex, ey))
        elif ds >= 0.0:
            t = ds / (ds - de)
            out.append((sx + t * (ex - sx), sy + t * (ey - sy)))
        sx, sy, ds = ex, ey, de
    return out


def convex_intersection_area(subject, clip):
    poly = [(float(x), float(y)) for x, y in subject]
    pts = [(float(x), float(y)) for x, y in clip]
    m = len(pts)
    for e in range(m):
        ax, ay = pts[e]
        bx, by = pts[(e + 1) % m]
        poly = _clip(poly, ax, ay, bx, by)
        if not poly:
            return 0.0
    n = len(poly)
    area = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        area = area + (x0 * y1 - x1 * y0)
    return 0.5 * area
