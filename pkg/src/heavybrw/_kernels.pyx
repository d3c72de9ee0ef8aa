# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled generation kernels.

Same signatures and uniform-consumption order as ``_fallback``; the
per-particle loops run without the GIL.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport pow, log, fabs

cnp.import_array()

cdef enum:
    FAMILY_PARETO = 1
    FAMILY_SHIFTED_EXP = 2


def offspring_counts(const cnp.int64_t[::1] types, const double[::1] u,
                     const cnp.int64_t[::1] row_start, const double[::1] cum,
                     const cnp.int64_t[:, ::1] vecs):
    cdef Py_ssize_t P = types.shape[0]
    cdef Py_ssize_t Q = vecs.shape[1]
    out_arr = np.empty((P, Q), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, r, lo, hi
    cdef double ui
    with nogil:
        for i in range(P):
            lo = row_start[types[i]]
            hi = row_start[types[i] + 1]
            ui = u[i]
            r = lo
            while r < hi - 1 and cum[r] <= ui:
                r += 1
            for j in range(Q):
                out[i, j] = vecs[r, j]
    return out_arr


cdef inline double _magnitude(int code, double index, double scale, double u) nogil:
    if code == FAMILY_PARETO:
        return scale * pow(u, -1.0 / index)
    if code == FAMILY_SHIFTED_EXP:
        return scale - log(u) / index
    return 0.0


def expand_generation(const cnp.int64_t[::1] types, const double[::1] pos,
                      const cnp.int64_t[::1] last_event,
                      const cnp.int32_t[:, ::1] exceed,
                      const cnp.int64_t[:, ::1] counts,
                      const double[::1] u_mag, const double[::1] u_sign,
                      const cnp.int64_t[::1] fam_code, const double[::1] fam_index,
                      const double[::1] fam_scale, const double[::1] fam_balance,
                      const double[::1] ray_coef,
                      double record_thr, double exceed_thr,
                      cnp.int64_t event_offset):
    cdef Py_ssize_t P = counts.shape[0]
    cdef Py_ssize_t Q = counts.shape[1]
    cdef Py_ssize_t heavy = Q - 1
    cdef Py_ssize_t n_ray = ray_coef.shape[0]
    cdef Py_ssize_t C = 0
    cdef Py_ssize_t i, q, k, j, j2, c = 0, n_ev = 0
    for i in range(P):
        for q in range(Q):
            C += counts[i, q]

    ct_arr = np.empty(C, dtype=np.int64)
    cp_arr = np.empty(C, dtype=np.float64)
    cl_arr = np.empty(C, dtype=np.int64)
    cx_arr = np.empty((C, Q), dtype=np.int32)
    cpar_arr = np.empty(C, dtype=np.int64)
    cd_arr = np.empty(C, dtype=np.float64)
    evv_arr = np.empty(C, dtype=np.float64)
    evp_arr = np.empty(C, dtype=np.int64)
    cdef cnp.int64_t[::1] ct = ct_arr
    cdef double[::1] cp = cp_arr
    cdef cnp.int64_t[::1] cl = cl_arr
    cdef cnp.int32_t[:, ::1] cx = cx_arr
    cdef cnp.int64_t[::1] cpar = cpar_arr
    cdef double[::1] cd = cd_arr
    cdef double[::1] evv = evv_arr
    cdef cnp.int64_t[::1] evp = evp_arr

    cdef double x, y, mag, sgn, ax
    cdef bint ray

    with nogil:
        for i in range(P):
            for q in range(Q):
                k = counts[i, q]
                ray = (q == heavy) and n_ray > 0
                for j in range(k):
                    if ray:
                        if j == 0:
                            mag = _magnitude(<int>fam_code[q], fam_index[q], fam_scale[q], u_mag[c])
                            sgn = 1.0 if u_sign[c] < fam_balance[q] else -1.0
                            y = sgn * mag
                        x = ray_coef[j] * y
                    else:
                        mag = _magnitude(<int>fam_code[q], fam_index[q], fam_scale[q], u_mag[c])
                        sgn = 1.0 if u_sign[c] < fam_balance[q] else -1.0
                        x = sgn * mag
                    ct[c] = q
                    cpar[c] = i
                    cd[c] = x
                    cp[c] = pos[i] + x
                    ax = fabs(x)
                    for j2 in range(Q):
                        cx[c, j2] = exceed[i, j2]
                    if ax > exceed_thr:
                        cx[c, q] += 1
                    if q == heavy and ax > record_thr:
                        evv[n_ev] = x
                        evp[n_ev] = last_event[i]
                        cl[c] = event_offset + n_ev
                        n_ev += 1
                    else:
                        cl[c] = last_event[i]
                    c += 1

    return (ct_arr, cp_arr, cl_arr, cx_arr, cpar_arr, cd_arr,
            evv_arr[:n_ev].copy(), evp_arr[:n_ev].copy())


def accumulate_events(const cnp.int64_t[::1] ev_parent,
                      const cnp.int64_t[::1] leaf_last_event, Py_ssize_t n_events):
    cnt_arr = np.zeros(n_events, dtype=np.int64)
    cdef cnp.int64_t[::1] cnt = cnt_arr
    cdef Py_ssize_t i, e
    cdef cnp.int64_t p
    with nogil:
        for i in range(leaf_last_event.shape[0]):
            if leaf_last_event[i] >= 0:
                cnt[leaf_last_event[i]] += 1
        for e in range(n_events - 1, -1, -1):
            p = ev_parent[e]
            if p >= 0:
                cnt[p] += cnt[e]
    return cnt_arr
