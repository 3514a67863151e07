# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops.

Every routine here has a twin in ``_fallback.py`` with the same signature.
The floating-point kernels perform the same operations in the same order as
their twins, so the two backends agree bit for bit where libm is not involved.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, INFINITY

cnp.import_array()


def matmul(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0], kk = a.shape[1], n = b.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double aik
    out = np.zeros((m, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    # i-k-j order: each out[i, j] accumulates its products in ascending k
    for i in range(m):
        for k in range(kk):
            aik = a[i, k]
            for j in range(n):
                o[i, j] = o[i, j] + aik * b[k, j]
    return out


def softmax_rows(const double[:, ::1] x):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double mx, s
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(m):
        mx = x[i, 0]
        for j in range(1, n):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(n):
            o[i, j] = exp(x[i, j] - mx)
            s = s + o[i, j]
        for j in range(n):
            o[i, j] = o[i, j] / s
    return out


def hungarian_square(const double[:, ::1] cost):
    """Shortest-augmenting-path assignment on a square matrix.

    Returns ``(row_to_col, u, v)`` where ``u`` and ``v`` are optimal duals:
    ``cost[i, j] - u[i] - v[j] >= 0`` with equality on assigned pairs.
    """
    cdef Py_ssize_t n = cost.shape[0]
    cdef Py_ssize_t i, j, i0, j0, j1
    cdef double delta, cur
    u_arr = np.zeros(n + 1)
    v_arr = np.zeros(n + 1)
    p_arr = np.zeros(n + 1, dtype=np.intp)
    way_arr = np.zeros(n + 1, dtype=np.intp)
    minv_arr = np.empty(n + 1)
    used_arr = np.zeros(n + 1, dtype=np.uint8)
    cdef double[::1] u = u_arr, v = v_arr, minv = minv_arr
    cdef Py_ssize_t[::1] p = p_arr, way = way_arr
    cdef unsigned char[::1] used = used_arr
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(n + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            delta = INFINITY
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
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
    return row_to_col, u_arr[1:].copy(), v_arr[1:].copy()


cdef Py_ssize_t _clip(double* px, double* py, Py_ssize_t n,
                      double ax, double ay, double bx, double by,
                      double* qx, double* qy) noexcept nogil:
    # keep the part of polygon p on the left of directed edge a->b
    cdef Py_ssize_t i, k = 0
    cdef double sx, sy, ex, ey, ds, de, t
    if n == 0:
        return 0
    sx = px[n - 1]
    sy = py[n - 1]
    ds = (bx - ax) * (sy - ay) - (by - ay) * (sx - ax)
    for i in range(n):
        ex = px[i]
        ey = py[i]
        de = (bx - ax) * (ey - ay) - (by - ay) * (ex - ax)
        if de >= 0.0:
            if ds < 0.0:
                t = ds / (ds - de)
                qx[k] = sx + t * (ex - sx)
                qy[k] = sy + t * (ey - sy)
                k += 1
            qx[k] = ex
            qy[k] = ey
            k += 1
        elif ds >= 0.0:
            t = ds / (ds - de)
            qx[k] = sx + t * (ex - sx)
            qy[k] = sy + t * (ey - sy)
            k += 1
        sx = ex
        sy = ey
        ds = de
    return k


def convex_intersection_area(const double[:, ::1] subject, const double[:, ::1] clip):
    """Area of the intersection of two convex counter-clockwise polygons."""
    cdef double bufx[2][64]
    cdef double bufy[2][64]
    cdef Py_ssize_t n = subject.shape[0], m = clip.shape[0]
    cdef Py_ssize_t i, e, cur = 0
    cdef double area = 0.0
    if n + m > 32:
        raise ValueError("polygons too large for the compiled clipper")
    for i in range(n):
        bufx[0][i] = subject[i, 0]
        bufy[0][i] = subject[i, 1]
    for e in range(m):
        n = _clip(bufx[cur], bufy[cur], n,
                  clip[e, 0], clip[e, 1], clip[(e + 1) % m, 0], clip[(e + 1) % m, 1],
                  bufx[1 - cur], bufy[1 - cur])
        cur = 1 - cur
        if n == 0:
            return 0.0
    for i in range(n):
        area = area + (bufx[cur][i] * bufy[cur][(i + 1) % n] - bufx[cur][(i + 1) % n] * bufy[cur][i])
    return 0.5 * area
