# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.  Semantics match ``pqlab._kernels_py`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport pow, floor, NAN, INFINITY

cnp.import_array()


cdef inline void _term(double x, double y, double H, double s, double c, int order,
                       double w, double* acc) noexcept nogil:
    # acc: value, gx, gy, h11, h12, h22
    cdef double Hs, d1, d1h, d2
    if c == 0.0:
        return
    if H > 0.0:
        Hs = pow(H, 0.5 * s)
        acc[0] += w * c * Hs
        if order < 1:
            return
        d1 = c * s * Hs / H
        acc[1] += w * d1 * x
        acc[2] += w * d1 * y
        if order >= 2:
            d2 = c * s * (s - 2.0) * Hs / (H * H)
            acc[3] += w * (d1 + d2 * x * x)
            acc[4] += w * (d2 * x * y)
            acc[5] += w * (d1 + d2 * y * y)
    else:
        if order >= 2:
            if s == 2.0:
                d1h = 2.0 * c
            elif s > 2.0:
                d1h = 0.0
            else:
                d1h = INFINITY
            acc[3] += w * d1h
            acc[5] += w * d1h


def _pack(val, grad, hess, int order):
    if order == 0:
        return (val,)
    if order == 1:
        return (val, grad)
    return (val, grad, hess)


def pq_eval(z, double mu, double p, double q, double a, double b, int order=2):
    cdef double[:, ::1] zz = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t n = zz.shape[0], k
    val_a = np.zeros(n)
    grad_a = np.zeros((n, 2))
    hess_a = np.zeros((n, 3))
    cdef double[::1] val = val_a
    cdef double[:, ::1] grad = grad_a
    cdef double[:, ::1] hess = hess_a
    cdef double acc[6]
    cdef double x, y, H
    with nogil:
        for k in range(n):
            acc[0] = 0.0; acc[1] = 0.0; acc[2] = 0.0
            acc[3] = 0.0; acc[4] = 0.0; acc[5] = 0.0
            x = zz[k, 0]
            y = zz[k, 1]
            H = mu * mu + x * x + y * y
            _term(x, y, H, p, a, order, 1.0, acc)
            _term(x, y, H, q, b, order, 1.0, acc)
            val[k] = acc[0]
            grad[k, 0] = acc[1]; grad[k, 1] = acc[2]
            hess[k, 0] = acc[3]; hess[k, 1] = acc[4]; hess[k, 2] = acc[5]
    return _pack(val_a, grad_a, hess_a, order)


def pq_mollified(z, nodes, weights, double mu, double p, double q, double a,
                 double b, int order=2):
    cdef double[:, ::1] zz = np.ascontiguousarray(z, dtype=np.float64)
    cdef double[:, ::1] yy = np.ascontiguousarray(nodes, dtype=np.float64)
    cdef double[::1] ww = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t n = zz.shape[0], m = yy.shape[0], k, l
    val_a = np.zeros(n)
    grad_a = np.zeros((n, 2))
    hess_a = np.zeros((n, 3))
    cdef double[::1] val = val_a
    cdef double[:, ::1] grad = grad_a
    cdef double[:, ::1] hess = hess_a
    cdef double acc[6]
    cdef double x, y, H
    with nogil:
        for k in range(n):
            acc[0] = 0.0; acc[1] = 0.0; acc[2] = 0.0
            acc[3] = 0.0; acc[4] = 0.0; acc[5] = 0.0
            for l in range(m):
                x = zz[k, 0] - yy[l, 0]
                y = zz[k, 1] - yy[l, 1]
                H = mu * mu + x * x + y * y
                _term(x, y, H, p, a, order, ww[l], acc)
                _term(x, y, H, q, b, order, ww[l], acc)
            val[k] = acc[0]
            grad[k, 0] = acc[1]; grad[k, 1] = acc[2]
            hess[k, 0] = acc[3]; hess[k, 1] = acc[4]; hess[k, 2] = acc[5]
    return _pack(val_a, grad_a, hess_a, order)


cdef inline bint _locate(double px, double py, double x0, double y0, double h,
                         Py_ssize_t nx, Py_ssize_t ny, double* fx, double* fy,
                         Py_ssize_t* i, Py_ssize_t* j) noexcept nogil:
    fx[0] = (px - x0) / h
    fy[0] = (py - y0) / h
    i[0] = <Py_ssize_t>floor(fx[0])
    j[0] = <Py_ssize_t>floor(fy[0])
    if i[0] == nx and fx[0] == nx:
        i[0] = nx - 1
    if j[0] == ny and fy[0] == ny:
        j[0] = ny - 1
    return i[0] >= 0 and i[0] < nx and j[0] >= 0 and j[0] < ny


cdef inline double _p1(double[:, ::1] v, Py_ssize_t i, Py_ssize_t j, double s,
                       double t) noexcept nogil:
    if s >= t:
        return v[i, j] + s * (v[i + 1, j] - v[i, j]) + t * (v[i + 1, j + 1] - v[i + 1, j])
    return v[i, j] + t * (v[i, j + 1] - v[i, j]) + s * (v[i + 1, j + 1] - v[i, j + 1])


def sample_p1(values, cell_ok, double x0, double y0, double h, pts):
    cdef double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const unsigned char[:, ::1] ok = np.ascontiguousarray(cell_ok, dtype=np.uint8)
    cdef double[:, ::1] P = np.ascontiguousarray(pts, dtype=np.float64)
    cdef Py_ssize_t nx = ok.shape[0], ny = ok.shape[1], k, npts = P.shape[0]
    cdef Py_ssize_t i, j
    cdef double fx, fy
    out_a = np.empty(npts)
    cdef double[::1] out = out_a
    with nogil:
        for k in range(npts):
            if not _locate(P[k, 0], P[k, 1], x0, y0, h, nx, ny, &fx, &fy, &i, &j) or not ok[i, j]:
                out[k] = NAN
                continue
            out[k] = _p1(v, i, j, fx - i, fy - j)
    return out_a


cdef inline void _lag3(double xi, double* L) noexcept nogil:
    L[0] = 0.5 * (xi - 1.0) * (xi - 2.0)
    L[1] = -xi * (xi - 2.0)
    L[2] = 0.5 * xi * (xi - 1.0)


def sample_q2(values, cell_ok, patch_ok, double x0, double y0, double h, pts):
    cdef double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const unsigned char[:, ::1] ok = np.ascontiguousarray(cell_ok, dtype=np.uint8)
    cdef const unsigned char[:, ::1] pok = np.ascontiguousarray(patch_ok, dtype=np.uint8)
    cdef double[:, ::1] P = np.ascontiguousarray(pts, dtype=np.float64)
    cdef Py_ssize_t nx = ok.shape[0], ny = ok.shape[1], k, npts = P.shape[0]
    cdef Py_ssize_t mi = pok.shape[0], mj = pok.shape[1]
    cdef Py_ssize_t i, j, i0, j0, a, b, c
    cdef Py_ssize_t ci[4]
    cdef Py_ssize_t cj[4]
    cdef double fx, fy, s, t, acc
    cdef double Lx[3]
    cdef double Ly[3]
    out_a = np.empty(npts)
    cdef double[::1] out = out_a
    with nogil:
        for k in range(npts):
            if not _locate(P[k, 0], P[k, 1], x0, y0, h, nx, ny, &fx, &fy, &i, &j) or not ok[i, j]:
                out[k] = NAN
                continue
            s = fx - i
            t = fy - j
            if s < 0.5:
                ci[0] = i - 1; ci[1] = i
            else:
                ci[0] = i; ci[1] = i - 1
            if t < 0.5:
                cj[0] = j - 1; cj[1] = j
            else:
                cj[0] = j; cj[1] = j - 1
            i0 = -1
            j0 = -1
            for c in range(4):
                a = ci[c % 2]
                b = cj[c // 2]
                if a >= 0 and a < mi and b >= 0 and b < mj and pok[a, b]:
                    i0 = a
                    j0 = b
                    break
            if i0 < 0:
                out[k] = _p1(v, i, j, s, t)
                continue
            _lag3(fx - i0, Lx)
            _lag3(fy - j0, Ly)
            acc = 0.0
            for a in range(3):
                for b in range(3):
                    acc += Lx[a] * Ly[b] * v[i0 + a, j0 + b]
            out[k] = acc
    return out_a
