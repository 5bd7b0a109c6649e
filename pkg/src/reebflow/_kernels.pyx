# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the routines in ``_fallback.py`` (same operations, same order)."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

NAME = "compiled"


cdef inline double _poly2d(const double[:, ::1] C, double x, double y) noexcept nogil:
    return _horner(&C[0, 0], C.shape[0], x, y)


cdef inline double _horner(const double* c, Py_ssize_t n, double x, double y) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double acc = 0.0
    cdef double row
    cdef const double* r
    for i in range(n - 1, -1, -1):
        r = c + i * n
        row = 0.0
        for j in range(n - 1, -1, -1):
            row = row * y + r[j]
        acc = acc * x + row
    return acc


def poly2d(const double[:, ::1] C, x, y):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64).ravel()
    out = np.empty(xv.shape[0])
    cdef double[::1] o = out
    cdef Py_ssize_t p
    with nogil:
        for p in range(xv.shape[0]):
            o[p] = _poly2d(C, xv[p], yv[p])
    return out.reshape(np.shape(x))


cdef inline double _sparse(const long long* ii, const long long* jj, const double* cc, Py_ssize_t m,
                           const double* xp, const double* yp) noexcept nogil:
    cdef Py_ssize_t t
    cdef double acc = 0.0
    for t in range(m):
        acc = acc + cc[t] * (xp[ii[t]] * yp[jj[t]])
    return acc


cdef inline void _powers(double x, double y, double* xp, double* yp, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t k
    xp[0] = 1.0
    yp[0] = 1.0
    for k in range(1, n):
        xp[k] = xp[k - 1] * x
        yp[k] = yp[k - 1] * y


def advect_rk4(const double[:, ::1] Cx, const double[:, ::1] Cy, double[:, ::1] x,
               const long long[::1] nsub, const double[::1] h):
    cdef Py_ssize_t n = Cx.shape[0]
    if n > 32:
        raise ValueError("polynomial degree too high")
    cdef long long[::1] xi, xj, yi, yj
    cdef double[::1] xc, yc
    ix, jx = np.nonzero(np.asarray(Cx))
    iy, jy = np.nonzero(np.asarray(Cy))
    xi = ix.astype(np.int64); xj = jx.astype(np.int64); xc = np.asarray(Cx)[ix, jx].copy()
    yi = iy.astype(np.int64); yj = jy.astype(np.int64); yc = np.asarray(Cy)[iy, jy].copy()
    cdef Py_ssize_t mx = xc.shape[0]
    cdef Py_ssize_t my = yc.shape[0]
    cdef long long dummy_i = 0
    cdef double dummy_c = 0.0
    cdef const long long* pxi = &xi[0] if mx else &dummy_i
    cdef const long long* pxj = &xj[0] if mx else &dummy_i
    cdef const double* pxc = &xc[0] if mx else &dummy_c
    cdef const long long* pyi = &yi[0] if my else &dummy_i
    cdef const long long* pyj = &yj[0] if my else &dummy_i
    cdef const double* pyc = &yc[0] if my else &dummy_c
    cdef double xp[32]
    cdef double yp[32]
    cdef Py_ssize_t p, s
    cdef double a, b, hh, k1a, k1b, k2a, k2b, k3a, k3b, k4a, k4b, a2, b2, a3, b3, a4, b4
    with nogil:
        for p in range(x.shape[0]):
            a = x[p, 0]
            b = x[p, 1]
            hh = h[p]
            for s in range(nsub[p]):
                _powers(a, b, xp, yp, n)
                k1a = _sparse(pyi, pyj, pyc, my, xp, yp)
                k1b = -_sparse(pxi, pxj, pxc, mx, xp, yp)
                a2 = a + 0.5 * hh * k1a
                b2 = b + 0.5 * hh * k1b
                _powers(a2, b2, xp, yp, n)
                k2a = _sparse(pyi, pyj, pyc, my, xp, yp)
                k2b = -_sparse(pxi, pxj, pxc, mx, xp, yp)
                a3 = a + 0.5 * hh * k2a
                b3 = b + 0.5 * hh * k2b
                _powers(a3, b3, xp, yp, n)
                k3a = _sparse(pyi, pyj, pyc, my, xp, yp)
                k3b = -_sparse(pxi, pxj, pxc, mx, xp, yp)
                a4 = a + hh * k3a
                b4 = b + hh * k3b
                _powers(a4, b4, xp, yp, n)
                k4a = _sparse(pyi, pyj, pyc, my, xp, yp)
                k4b = -_sparse(pxi, pxj, pxc, mx, xp, yp)
                a = a + hh / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
                b = b + hh / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
            x[p, 0] = a
            x[p, 1] = b


def ctmc_run(const long long[::1] indptr, const long long[::1] indices, const double[::1] cum,
             const double[::1] q, const unsigned char[::1] absorb, long long[::1] state,
             double[::1] clock, long long[::1] nxt, unsigned char[::1] done,
             unsigned char[::1] stopped, long long[::1] jumps, long long[:, ::1] record,
             const double[::1] times, const double[:, ::1] E, const double[:, ::1] U,
             double[:, ::1] occ, int track):
    cdef Py_ssize_t K = times.shape[0]
    cdef double t_end = times[K - 1]
    cdef Py_ssize_t n_iter = E.shape[0]
    cdef Py_ssize_t N = state.shape[0]
    cdef Py_ssize_t it, p, a, deg, off, r
    cdef long long i, j
    cdef double qi, tn, u, stop
    with nogil:
        for it in range(n_iter):
            for p in range(N):
                if done[p]:
                    continue
                i = state[p]
                qi = q[i]
                if qi <= 0:
                    tn = 1.0 / 0.0
                else:
                    tn = clock[p] + E[it, p] / qi
                while nxt[p] < K and times[nxt[p]] < tn:
                    record[p, nxt[p]] = i
                    nxt[p] += 1
                if track:
                    stop = tn if tn < t_end else t_end
                    occ[p, i] += stop - clock[p]
                if nxt[p] == K:
                    done[p] = 1
                    continue
                clock[p] = tn
                u = U[it, p]
                a = indptr[i]
                deg = indptr[i + 1] - a
                off = 0
                while off < deg - 1 and u >= cum[a + off]:
                    off += 1
                j = indices[a + off]
                state[p] = j
                jumps[p] += 1
                if absorb[j] == 1:
                    for r in range(nxt[p], K):
                        record[p, r] = j
                    nxt[p] = K
                    if track:
                        occ[p, j] += t_end - clock[p]
                    stopped[p] = 1
                    done[p] = 1
