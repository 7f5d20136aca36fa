# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled episode kernels; same contracts as ``_kernels_py``."""
import numpy as np
from libc.math cimport sqrt, log, cos
from libc.stdint cimport uint64_t

cdef double TWO_PI = 6.283185307179586


cdef inline uint64_t _mix(uint64_t z) nogil:
    z = z + <uint64_t>0x9E3779B97F4A7C15ULL
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _unif(uint64_t key, uint64_t counter) nogil:
    cdef uint64_t bits = _mix(key ^ counter)
    return (<double>(bits >> 11) + 0.5) * (1.0 / 9007199254740992.0)


def normals(seed, long long stream0, Py_ssize_t count, Py_ssize_t width):
    out = np.empty((count, width))
    cdef double[:, ::1] o = out
    cdef uint64_t s = _mix(<uint64_t>(seed & 0xFFFFFFFFFFFFFFFF))
    cdef uint64_t key
    cdef Py_ssize_t e, j
    with nogil:
        for e in range(count):
            key = _mix(s ^ <uint64_t>(stream0 + e))
            for j in range(width):
                o[e, j] = sqrt(-2.0 * log(_unif(key, 2 * <uint64_t>j))) * cos(TWO_PI * _unif(key, 2 * <uint64_t>j + 1))
    return out


cdef inline void _mv(double* out, const double* Mx, const double* v, Py_ssize_t rows,
                     Py_ssize_t cols, bint accumulate) noexcept nogil:
    # raw row-major pointer: slicing a memoryview here costs more than the product itself
    cdef Py_ssize_t i, j
    cdef double acc
    for i in range(rows):
        acc = out[i] if accumulate else 0.0
        for j in range(cols):
            acc = acc + Mx[i * cols + j] * v[j]
        out[i] = acc


def rollout(const double[:, ::1] prims, const double[:, :, ::1] dither,
            Py_ssize_t n, Py_ssize_t m, Py_ssize_t p, Py_ssize_t r, Py_ssize_t s, Py_ssize_t T,
            const double[:, :, ::1] A, const double[:, :, ::1] B, const double[:, :, ::1] D,
            const double[:, :, ::1] C, const double[:, :, ::1] E,
            const double[:, :, ::1] Ah, const double[:, :, ::1] Bh, const double[:, :, ::1] Dh,
            const double[:, :, ::1] Af, const double[:, :, ::1] Bf, const double[:, :, ::1] Df,
            const double[:, ::1] cf,
            const double[:, :, ::1] Gm, const double[:, :, ::1] Gp,
            const double[::1] x0_mean, const double[:, ::1] w_mean, const double[:, ::1] z_mean,
            const double[:, :, ::1] K, const double[:, :, ::1] Kp, const double[:, :, ::1] M,
            const double[:, ::1] k, const double[:, ::1] Wg, const double[::1] Wo,
            bint matched, const double[:, :, ::1] Bpinv):
    cdef Py_ssize_t Ne = prims.shape[0]
    x_ = np.empty((Ne, T + 1, n)); xh_ = np.empty((Ne, T + 1, n))
    y_ = np.empty((Ne, T + 1, p)); yh_ = np.empty((Ne, T + 1, p))
    u_ = np.empty((Ne, T, m)); um_ = np.empty((Ne, T, m))
    mm_ = np.empty((Ne, T + 1, n)); mp_ = np.empty((Ne, T + 1, n))
    cdef double[:, :, ::1] x = x_, xh = xh_, y = y_, yh = yh_, u = u_, um = um_, mm = mm_, mp = mp_

    cdef Py_ssize_t nw = T * r
    wtmp_ = np.empty(max(nw, 1)); pred_ = np.empty(n); vec_ = np.empty(max(n, p)); ev_ = np.empty(max(n, p))
    cdef double[::1] what = wtmp_, pred = pred_, vec = vec_, ev = ev_
    cdef Py_ssize_t e, t, i, woff = n, zoff = n + T * r

    with nogil:
        for e in range(Ne):
            for i in range(n):
                x[e, 0, i] = prims[e, i]
                xh[e, 0, i] = prims[e, i]
            _mv(&y[e, 0, 0], &C[0, 0, 0], &x[e, 0, 0], p, n, False)
            _mv(&y[e, 0, 0], &E[0, 0, 0], &prims[e, zoff], p, s, True)
            for i in range(p):
                yh[e, 0, i] = y[e, 0, i]
            # innovation against the prior mean
            _mv(&vec[0], &C[0, 0, 0], &x0_mean[0], p, n, False)
            _mv(&vec[0], &E[0, 0, 0], &z_mean[0, 0], p, s, True)
            for i in range(p):
                vec[i] = y[e, 0, i] - vec[i]
            for i in range(n):
                mm[e, 0, i] = x0_mean[i]
                mp[e, 0, i] = x0_mean[i]
            _mv(&mm[e, 0, 0], &Gm[0, 0, 0], &vec[0], n, p, True)
            _mv(&mp[e, 0, 0], &Gp[0, 0, 0], &vec[0], n, p, True)
            if nw > 0:
                for i in range(nw):
                    what[i] = Wo[i]
                _mv(&what[0], &Wg[0, 0], &y[e, 0, 0], nw, p, True)

            for t in range(T):
                for i in range(m):
                    u[e, t, i] = k[t, i] + dither[e, t, i]
                _mv(&u[e, t, 0], &K[t, 0, 0], &mm[e, t, 0], m, n, True)
                _mv(&u[e, t, 0], &Kp[t, 0, 0], &mp[e, t, 0], m, n, True)
                if nw > 0:
                    _mv(&u[e, t, 0], &M[t, 0, 0], &what[0], m, nw, True)
                # plant
                _mv(&xh[e, t + 1, 0], &Ah[t, 0, 0], &xh[e, t, 0], n, n, False)
                _mv(&xh[e, t + 1, 0], &Bh[t, 0, 0], &u[e, t, 0], n, m, True)
                _mv(&xh[e, t + 1, 0], &Dh[t, 0, 0], &prims[e, woff + t * r], n, r, True)
                _mv(&yh[e, t + 1, 0], &C[t + 1, 0, 0], &xh[e, t + 1, 0], p, n, False)
                _mv(&yh[e, t + 1, 0], &E[t + 1, 0, 0], &prims[e, zoff + (t + 1) * s], p, s, True)
                # plant belief under the hypothesized dynamics
                _mv(&pred[0], &Af[t, 0, 0], &mp[e, t, 0], n, n, False)
                _mv(&pred[0], &Bf[t, 0, 0], &u[e, t, 0], n, m, True)
                _mv(&pred[0], &Df[t, 0, 0], &w_mean[t, 0], n, r, True)
                for i in range(n):
                    pred[i] = pred[i] + cf[t, i]
                _mv(&vec[0], &C[t + 1, 0, 0], &pred[0], p, n, False)
                _mv(&vec[0], &E[t + 1, 0, 0], &z_mean[t + 1, 0], p, s, True)
                for i in range(p):
                    vec[i] = yh[e, t + 1, i] - vec[i]
                for i in range(n):
                    mp[e, t + 1, i] = pred[i]
                _mv(&mp[e, t + 1, 0], &Gp[t + 1, 0, 0], &vec[0], n, p, True)
                # model twin input
                if matched:
                    _mv(&ev[0], &A[t, 0, 0], &x[e, t, 0], n, n, False)
                    _mv(&ev[0], &D[t, 0, 0], &prims[e, woff + t * r], n, r, True)
                    for i in range(n):
                        ev[i] = mp[e, t + 1, i] - ev[i]
                    _mv(&um[e, t, 0], &Bpinv[t, 0, 0], &ev[0], m, n, False)
                else:
                    for i in range(m):
                        um[e, t, i] = u[e, t, i]
                _mv(&x[e, t + 1, 0], &A[t, 0, 0], &x[e, t, 0], n, n, False)
                _mv(&x[e, t + 1, 0], &B[t, 0, 0], &um[e, t, 0], n, m, True)
                _mv(&x[e, t + 1, 0], &D[t, 0, 0], &prims[e, woff + t * r], n, r, True)
                _mv(&y[e, t + 1, 0], &C[t + 1, 0, 0], &x[e, t + 1, 0], p, n, False)
                _mv(&y[e, t + 1, 0], &E[t + 1, 0, 0], &prims[e, zoff + (t + 1) * s], p, s, True)
                _mv(&pred[0], &A[t, 0, 0], &mm[e, t, 0], n, n, False)
                _mv(&pred[0], &B[t, 0, 0], &um[e, t, 0], n, m, True)
                _mv(&pred[0], &D[t, 0, 0], &w_mean[t, 0], n, r, True)
                _mv(&vec[0], &C[t + 1, 0, 0], &pred[0], p, n, False)
                _mv(&vec[0], &E[t + 1, 0, 0], &z_mean[t + 1, 0], p, s, True)
                for i in range(p):
                    vec[i] = y[e, t + 1, i] - vec[i]
                for i in range(n):
                    mm[e, t + 1, i] = pred[i]
                _mv(&mm[e, t + 1, 0], &Gm[t + 1, 0, 0], &vec[0], n, p, True)
    return x_, xh_, y_, yh_, u_, um_, mm_, mp_
