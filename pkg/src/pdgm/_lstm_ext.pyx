# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LSTM recurrences (same contract as ``_lstm_py``).

The recurrent products go through BLAS dgemm; everything elementwise runs
in flat C loops over contiguous rows so gcc can vectorize the ``exp`` calls.
No temporaries are allocated inside the time loop.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline void _activate(double* z, double* g, int k) noexcept nogil:
    # sigmoid on the first 3k entries, tanh on the last k
    cdef int j
    for j in range(3 * k):
        g[j] = 1.0 / (1.0 + exp(-z[j]))
    for j in range(3 * k, 4 * k):
        g[j] = 1.0 - 2.0 / (exp(2.0 * z[j]) + 1.0)


cdef inline void _tanh_row(double* x, double* out, int n) noexcept nogil:
    cdef int j
    for j in range(n):
        out[j] = 1.0 - 2.0 / (exp(2.0 * x[j]) + 1.0)


def lstm_forward(double[:, :, ::1] xw, double[:, ::1] wh):
    cdef int B = xw.shape[0], T = xw.shape[1], k4 = xw.shape[2]
    cdef int k = k4 // 4
    a_np = np.empty((B, T, k))
    c_np = np.empty((B, T, k))
    g_np = np.empty((B, T, k4))
    cdef double[:, :, ::1] a_seq = a_np
    cdef double[:, :, ::1] c_seq = c_np
    cdef double[:, :, ::1] gates = g_np
    cdef double[:, ::1] a = np.zeros((B, k))
    cdef double[:, ::1] z = np.empty((B, k4))
    cdef double[::1] tc = np.empty(k)
    cdef int t, b, j
    cdef double one = 1.0
    cdef double* g
    cdef double* cp
    cdef double* cn
    cdef char trans_n = b'N'
    with nogil:
        for t in range(T):
            for b in range(B):
                for j in range(k4):
                    z[b, j] = xw[b, t, j]
            if t > 0:
                # z (B x 4k, row-major) += a (B x k) @ wh (k x 4k)
                dgemm(&trans_n, &trans_n, &k4, &B, &k, &one, &wh[0, 0], &k4,
                      &a[0, 0], &k, &one, &z[0, 0], &k4)
            for b in range(B):
                g = &gates[b, t, 0]
                _activate(&z[b, 0], g, k)
                cn = &c_seq[b, t, 0]
                if t > 0:
                    cp = &c_seq[b, t - 1, 0]
                    for j in range(k):
                        cn[j] = g[j] * cp[j] + g[k + j] * g[3 * k + j]
                else:
                    for j in range(k):
                        cn[j] = g[k + j] * g[3 * k + j]
                _tanh_row(cn, &tc[0], k)
                for j in range(k):
                    a[b, j] = g[2 * k + j] * tc[j]
                    a_seq[b, t, j] = a[b, j]
    return a_np, c_np, g_np


def lstm_backward(double[:, ::1] wh, double[:, :, ::1] c_seq, double[:, :, ::1] gates,
                  double[:, :, ::1] d_a, double[:, :, ::1] d_c):
    cdef int B = gates.shape[0], T = gates.shape[1], k4 = gates.shape[2]
    cdef int k = k4 // 4
    dz_np = np.empty((B, T, k4))
    cdef double[:, :, ::1] dz = dz_np
    cdef double[:, ::1] da_next = np.zeros((B, k))
    cdef double[:, ::1] dc_next = np.zeros((B, k))
    cdef double[::1] tc = np.empty(k)
    cdef double[::1] zeros = np.zeros(k)
    cdef int t, b, j
    cdef double f, i, o, cand, da, dc
    cdef double one = 1.0, zero = 0.0
    cdef int ldz = T * k4
    cdef double* g
    cdef double* cp
    cdef double* s
    cdef char trans_n = b'N', trans_t = b'T'
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                g = &gates[b, t, 0]
                s = &dz[b, t, 0]
                cp = &c_seq[b, t - 1, 0] if t > 0 else &zeros[0]
                _tanh_row(&c_seq[b, t, 0], &tc[0], k)
                for j in range(k):
                    f = g[j]
                    i = g[k + j]
                    o = g[2 * k + j]
                    cand = g[3 * k + j]
                    da = d_a[b, t, j] + da_next[b, j]
                    dc = d_c[b, t, j] + dc_next[b, j] + da * o * (1.0 - tc[j] * tc[j])
                    s[j] = dc * cp[j] * f * (1.0 - f)
                    s[k + j] = dc * cand * i * (1.0 - i)
                    s[2 * k + j] = da * tc[j] * o * (1.0 - o)
                    s[3 * k + j] = dc * i * (1.0 - cand * cand)
                    dc_next[b, j] = dc * f
            # da_next (B x k) = dz[:, t] (B x 4k, row stride T*4k) @ wh.T (4k x k)
            dgemm(&trans_t, &trans_n, &k, &B, &k4, &one, &wh[0, 0], &k4,
                  &dz[0, t, 0], &ldz, &zero, &da_next[0, 0], &k)
    return dz_np

