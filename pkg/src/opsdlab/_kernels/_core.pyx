# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled policy forward kernels.

Mirrors `_reference.logits_all` / `_reference.logits_last` with fused C
loops; the autoregressive sampling loop spends nearly all of its time here.
Inner loops accumulate along contiguous rows so the compiler can vectorize
them. Outputs agree with the reference to floating-point roundoff
(summation order differs), not bit-for-bit across backends.
"""

import numpy as np

from libc.math cimport exp, sqrt, tanh
from libc.string cimport memcpy, memset


cdef inline void axpy(double a, const double* x, double* y, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(n):
        y[i] += a * x[i]


cdef inline double dot(const double* x, const double* y, Py_ssize_t n) noexcept nogil:
    cdef double acc = 0.0
    cdef Py_ssize_t i
    for i in range(n):
        acc += x[i] * y[i]
    return acc


cdef void _embed(const double[:, ::1] emb, const double[:, ::1] pos,
                 const long[::1] ids, double[:, ::1] x) noexcept nogil:
    cdef Py_ssize_t L = ids.shape[0]
    cdef Py_ssize_t d = emb.shape[1]
    cdef Py_ssize_t i, a
    for i in range(L):
        for a in range(d):
            x[i, a] = emb[ids[i], a] + pos[i, a]


cdef void _project(const double[:, ::1] x, const double[:, ::1] w,
                   const double* bias, double[:, ::1] out) noexcept nogil:
    # out[i, :] = x[i, :] @ w + bias, accumulated row-wise for vectorization
    cdef Py_ssize_t L = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t n = w.shape[1]
    cdef Py_ssize_t i, b
    for i in range(L):
        if bias != NULL:
            memcpy(&out[i, 0], bias, n * sizeof(double))
        else:
            memset(&out[i, 0], 0, n * sizeof(double))
        for b in range(d):
            axpy(x[i, b], &w[b, 0], &out[i, 0], n)


cdef void _head_block(const double[:, ::1] q, const double[:, ::1] k,
                      const double[:, ::1] v, const double[:, ::1] rel,
                      Py_ssize_t i, double* s, double* ctx) noexcept nogil:
    # attention context for query row i over keys 0..i, all heads
    cdef Py_ssize_t d = q.shape[1]
    cdef Py_ssize_t H = rel.shape[0]
    cdef Py_ssize_t R = rel.shape[1]
    cdef Py_ssize_t hd = d // H
    cdef double scale = 1.0 / sqrt(<double> hd)
    cdef Py_ssize_t head, base, j, bucket
    cdef double acc, mx, tot
    for head in range(H):
        base = head * hd
        mx = -1e300
        for j in range(i + 1):
            acc = dot(&q[i, base], &k[j, base], hd) * scale
            bucket = i - j
            if bucket >= R:
                bucket = R - 1
            acc += rel[head, bucket]
            s[j] = acc
            if acc > mx:
                mx = acc
        tot = 0.0
        for j in range(i + 1):
            s[j] = exp(s[j] - mx)
            tot += s[j]
        memset(ctx + base, 0, hd * sizeof(double))
        for j in range(i + 1):
            axpy(s[j] / tot, &v[j, base], ctx + base, hd)


cdef void _mix_tail(const double[:, ::1] x, Py_ssize_t i, const double* ctx,
                    const double[:, ::1] wo, const double[::1] bo,
                    const double[:, ::1] w1, const double[::1] b1,
                    const double[:, ::1] w2, const double[::1] b2,
                    const double[:, ::1] wout, const double[::1] bout,
                    double* h, double* m, double* g, double* out) noexcept nogil:
    # residual attention output, tanh MLP, vocabulary projection for row i
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t hid = w1.shape[1]
    cdef Py_ssize_t V = wout.shape[1]
    cdef Py_ssize_t a, b
    for a in range(d):
        h[a] = x[i, a] + bo[a]
    for b in range(d):
        axpy(ctx[b], &wo[b, 0], h, d)
    memcpy(m, &b1[0], hid * sizeof(double))
    for b in range(d):
        axpy(h[b], &w1[b, 0], m, hid)
    for a in range(hid):
        m[a] = tanh(m[a])
    memcpy(g, h, d * sizeof(double))
    for a in range(d):
        g[a] += b2[a]
    for b in range(hid):
        axpy(m[b], &w2[b, 0], g, d)
    memcpy(out, &bout[0], V * sizeof(double))
    for b in range(d):
        axpy(g[b], &wout[b, 0], out, V)


def logits_all(const double[:, ::1] emb, const double[:, ::1] pos,
               const double[:, ::1] wq, const double[::1] bq,
               const double[:, ::1] wk,
               const double[:, ::1] wv, const double[::1] bv,
               const double[:, ::1] wo, const double[::1] bo,
               const double[:, ::1] rel,
               const double[:, ::1] w1, const double[::1] b1,
               const double[:, ::1] w2, const double[::1] b2,
               const double[:, ::1] wout, const double[::1] bout,
               const long[::1] ids):
    cdef Py_ssize_t L = ids.shape[0]
    cdef Py_ssize_t d = emb.shape[1]
    cdef Py_ssize_t hid = w1.shape[1]
    cdef Py_ssize_t V = wout.shape[1]

    x_arr = np.empty((L, d))
    q_arr = np.empty((L, d))
    k_arr = np.empty((L, d))
    v_arr = np.empty((L, d))
    s_arr = np.empty(L)
    ctx_arr = np.empty(d)
    h_arr = np.empty(d)
    m_arr = np.empty(hid)
    g_arr = np.empty(d)
    out_arr = np.empty((L, V))
    cdef double[:, ::1] x = x_arr
    cdef double[:, ::1] q = q_arr
    cdef double[:, ::1] k = k_arr
    cdef double[:, ::1] v = v_arr
    cdef double[::1] s = s_arr
    cdef double[::1] ctx = ctx_arr
    cdef double[::1] h = h_arr
    cdef double[::1] m = m_arr
    cdef double[::1] g = g_arr
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i

    with nogil:
        _embed(emb, pos, ids, x)
        _project(x, wq, &bq[0], q)
        _project(x, wk, NULL, k)
        _project(x, wv, &bv[0], v)
        for i in range(L):
            _head_block(q, k, v, rel, i, &s[0], &ctx[0])
            _mix_tail(x, i, &ctx[0], wo, bo, w1, b1, w2, b2, wout, bout,
                      &h[0], &m[0], &g[0], &out[i, 0])
    return out_arr


def logits_last(const double[:, ::1] emb, const double[:, ::1] pos,
                const double[:, ::1] wq, const double[::1] bq,
                const double[:, ::1] wk,
                const double[:, ::1] wv, const double[::1] bv,
                const double[:, ::1] wo, const double[::1] bo,
                const double[:, ::1] rel,
                const double[:, ::1] w1, const double[::1] b1,
                const double[:, ::1] w2, const double[::1] b2,
                const double[:, ::1] wout, const double[::1] bout,
                const long[::1] ids):
    cdef Py_ssize_t L = ids.shape[0]
    cdef Py_ssize_t d = emb.shape[1]
    cdef Py_ssize_t hid = w1.shape[1]
    cdef Py_ssize_t V = wout.shape[1]

    x_arr = np.empty((L, d))
    q_arr = np.empty((1, d))
    k_arr = np.empty((L, d))
    v_arr = np.empty((L, d))
    s_arr = np.empty(L)
    ctx_arr = np.empty(d)
    h_arr = np.empty(d)
    m_arr = np.empty(hid)
    g_arr = np.empty(d)
    out_arr = np.empty(V)
    cdef double[:, ::1] x = x_arr
    cdef double[:, ::1] q = q_arr
    cdef double[:, ::1] k = k_arr
    cdef double[:, ::1] v = v_arr
    cdef double[::1] s = s_arr
    cdef double[::1] ctx = ctx_arr
    cdef double[::1] h = h_arr
    cdef double[::1] m = m_arr
    cdef double[::1] g = g_arr
    cdef double[::1] out = out_arr
    cdef Py_ssize_t b

    with nogil:
        _embed(emb, pos, ids, x)
        _project(x, wk, NULL, k)
        _project(x, wv, &bv[0], v)
        # query for the last position only
        memcpy(&q[0, 0], &bq[0], d * sizeof(double))
        for b in range(d):
            axpy(x[L - 1, b], &wq[b, 0], &q[0, 0], d)
        _last_attention(q, k, v, rel, L, &s[0], &ctx[0])
        _mix_tail(x, L - 1, &ctx[0], wo, bo, w1, b1, w2, b2, wout, bout,
                  &h[0], &m[0], &g[0], &out[0])
    return out_arr


cdef void _last_attention(const double[:, ::1] q, const double[:, ::1] k,
                          const double[:, ::1] v, const double[:, ::1] rel,
                          Py_ssize_t L, double* s, double* ctx) noexcept nogil:
    cdef Py_ssize_t d = k.shape[1]
    cdef Py_ssize_t H = rel.shape[0]
    cdef Py_ssize_t R = rel.shape[1]
    cdef Py_ssize_t hd = d // H
    cdef double scale = 1.0 / sqrt(<double> hd)
    cdef Py_ssize_t head, base, j, bucket
    cdef double acc, mx, tot
    for head in range(H):
        base = head * hd
        mx = -1e300
        for j in range(L):
            acc = dot(&q[0, base], &k[j, base], hd) * scale
            bucket = (L - 1) - j
            if bucket >= R:
                bucket = R - 1
            acc += rel[head, bucket]
            s[j] = acc
            if acc > mx:
                mx = acc
        tot = 0.0
        for j in range(L):
            s[j] = exp(s[j] - mx)
            tot += s[j]
        memset(ctx + base, 0, hd * sizeof(double))
        for j in range(L):
            axpy(s[j] / tot, &v[j, base], ctx + base, hd)
