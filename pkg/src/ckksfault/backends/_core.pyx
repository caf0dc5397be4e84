# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel backend. Bit-identical to backends.pyref (see its module
docstring for the word-level contract); twiddle multiplications use Shoup
precomputation, generic products reduce through 128-bit intermediates."""

import numpy as np

cimport numpy as cnp

ctypedef unsigned long long u64

cdef extern from *:
    ctypedef unsigned long long u128 "unsigned __int128"

name = "compiled"


cdef inline u64 _mulmod(u64 a, u64 b, u64 q) nogil:
    return <u64>((<u128>a * b) % q)


cdef inline u64 _mulmod_shoup(u64 b, u64 w, u64 w_sh, u64 q) nogil:
    # Exact w*b mod q for any u64 b, given w < q and w_sh = floor(w*2^64/q).
    cdef u64 hi = <u64>((<u128>w_sh * b) >> 64)
    cdef u64 r = w * b - hi * q
    if r >= q:
        r -= q
    return r


def ntt_forward(u64[::1] vec, u64 q, u64[::1] wtab, u64[::1] wtab_sh,
                int inject_round=0, Py_ssize_t inject_pos=0, u64 inject_xor=0):
    cdef Py_ssize_t n = vec.shape[0]
    cdef Py_ssize_t t = n, m = 1, i, j, j1
    cdef int rnd = 0
    cdef u64 u, v, w, w_sh, x, y
    while m < n:
        t >>= 1
        rnd += 1
        for i in range(m):
            w = wtab[m + i]
            w_sh = wtab_sh[m + i]
            j1 = 2 * i * t
            for j in range(j1, j1 + t):
                u = vec[j]
                v = _mulmod_shoup(vec[j + t], w, w_sh, q)
                x = u + v
                if x >= q:
                    x -= q
                y = u + q - v
                if y >= q:
                    y -= q
                vec[j] = x
                vec[j + t] = y
        if rnd == inject_round:
            vec[inject_pos] ^= inject_xor
        m <<= 1


def ntt_inverse(u64[::1] vec, u64 q, u64[::1] iwtab, u64[::1] iwtab_sh,
                u64 n_inv, u64 n_inv_sh,
                int inject_round=0, Py_ssize_t inject_pos=0, u64 inject_xor=0):
    cdef Py_ssize_t n = vec.shape[0]
    cdef Py_ssize_t t = 1, m = n, h, i, j, j1
    cdef int rnd = 0
    cdef u64 u, v, w, w_sh, x
    while m > 1:
        h = m >> 1
        rnd += 1
        j1 = 0
        for i in range(h):
            w = iwtab[h + i]
            w_sh = iwtab_sh[h + i]
            for j in range(j1, j1 + t):
                u = vec[j]
                v = vec[j + t]
                x = u + v
                if x >= q:
                    x -= q
                vec[j] = x
                vec[j + t] = _mulmod_shoup(u + q - v, w, w_sh, q)
            j1 += 2 * t
        if rnd == inject_round:
            vec[inject_pos] ^= inject_xor
        t <<= 1
        m = h
    for j in range(n):
        vec[j] = _mulmod_shoup(vec[j], n_inv, n_inv_sh, q)


def mul_mod(u64[::1] a, u64[::1] b, u64 q, u64[::1] out):
    cdef Py_ssize_t i
    for i in range(a.shape[0]):
        out[i] = _mulmod(a[i], b[i], q)


def add_mod(u64[::1] a, u64[::1] b, u64 q, u64[::1] out):
    # ((a + b) mod 2^64) % q; the in-range fast path avoids the division
    cdef Py_ssize_t i
    cdef u64 s
    for i in range(a.shape[0]):
        s = a[i] + b[i]
        if a[i] < q and b[i] < q:
            if s >= q:
                s -= q
            out[i] = s
        else:
            out[i] = s % q


def sub_mod(u64[::1] a, u64[::1] b, u64 q, u64[::1] out):
    # ((a + q - b) mod 2^64) % q
    cdef Py_ssize_t i
    cdef u64 s
    for i in range(a.shape[0]):
        s = a[i] + q - b[i]
        if a[i] < q and b[i] < q:
            if s >= q:
                s -= q
            out[i] = s
        else:
            out[i] = s % q


def neg_mod(u64[::1] a, u64 q, u64[::1] out):
    # ((q - a) mod 2^64) % q
    cdef Py_ssize_t i
    cdef u64 s
    for i in range(a.shape[0]):
        s = q - a[i]
        if a[i] < q:
            if s >= q:        # only when a[i] == 0
                s -= q
            out[i] = s
        else:
            out[i] = s % q


def mod_vec(u64[::1] a, u64 q, u64[::1] out):
    cdef Py_ssize_t i
    for i in range(a.shape[0]):
        out[i] = a[i] % q


def centered_reduce(u64[::1] a, u64 src_q, u64 q, u64[::1] out):
    # reduce residues mod src_q into mod q, lifting values above src_q/2
    # to their negative representative first
    cdef Py_ssize_t i
    cdef u64 half = src_q >> 1
    cdef u64 shift = q - src_q % q
    cdef u64 v
    for i in range(a.shape[0]):
        v = a[i] % q
        if a[i] > half:
            v += shift
            if v >= q:
                v -= q
        out[i] = v


def mul_acc_mod(u64[::1] a, u64[::1] b, u64 q, u64[::1] acc):
    cdef Py_ssize_t i
    cdef u64 p
    for i in range(a.shape[0]):
        p = _mulmod(a[i], b[i], q)
        p += acc[i]
        if p >= q:
            p -= q
        acc[i] = p


def mul_acc_mod_shoup(u64[::1] a, u64[::1] b, u64[::1] b_sh, u64 q, u64[::1] acc):
    cdef Py_ssize_t i
    cdef u64 p
    for i in range(a.shape[0]):
        p = _mulmod_shoup(a[i], b[i], b_sh[i], q)
        p += acc[i]
        if p >= q:
            p -= q
        acc[i] = p


def scalar_mul_mod(u64[::1] a, u64 s, u64 q, u64[::1] out):
    cdef Py_ssize_t i
    for i in range(a.shape[0]):
        out[i] = _mulmod(a[i], s, q)


def sum_mod(u64[::1] a, u64 q):
    # raw words < 2^64, so a u128 accumulator cannot overflow for n < 2^64
    cdef Py_ssize_t i
    cdef u128 acc = 0
    for i in range(a.shape[0]):
        acc += a[i]
    return <u64>(acc % q)


def weighted_sum_mod(u64[::1] a, u64[::1] w, u64 q):
    # products < 2^126; reducing every 4th term keeps the accumulator safe
    cdef Py_ssize_t i, n = a.shape[0]
    cdef u128 acc = 0
    for i in range(n):
        acc += <u128>a[i] * w[i]
        if (i & 3) == 3:
            acc %= q
    return <u64>(acc % q)


def mul_check_rows(u64[:, ::1] a, u64[:, ::1] b, u64[:, ::1] c, u64[::1] qs):
    """Recompute the pointwise product per row and compare against c
    without allocating; returns False on the first mismatch."""
    cdef Py_ssize_t i, j
    cdef u64 q
    for i in range(a.shape[0]):
        q = qs[i]
        for j in range(a.shape[1]):
            if c[i, j] != <u64>((<u128>a[i, j] * b[i, j]) % q):
                return False
    return True


def bconv_flag_rows(u64[::1] row, u64[::1] qs, u64[::1] out):
    """out[t] = (sum row) mod qs[t]: the checksum image of a plain
    single-source base conversion (out_t[i] = row[i] mod q_t)."""
    cdef Py_ssize_t i, t
    cdef u128 acc = 0
    for i in range(row.shape[0]):
        acc += row[i]
    for t in range(qs.shape[0]):
        out[t] = <u64>(acc % qs[t])


def centered_flag_rows(u64[::1] row, u64 src_q, u64[::1] qs, u64[::1] out):
    """out[t] = (sum row - count_high * src_q) mod qs[t], the checksum image
    of the centered conversion (values above src_q/2 lift negatively)."""
    cdef Py_ssize_t i, t
    cdef u128 acc = 0
    cdef u64 half = src_q >> 1
    cdef u64 cnt = 0, q, s, c
    for i in range(row.shape[0]):
        acc += row[i]
        if row[i] > half:
            cnt += 1
    for t in range(qs.shape[0]):
        q = qs[t]
        s = <u64>(acc % q)
        c = <u64>((<u128>(cnt % q) * (src_q % q)) % q)
        out[t] = s + q - c
        if out[t] >= q:
            out[t] -= q
    return


def mod_rows(u64[::1] row, u64[::1] qs, u64[:, ::1] out):
    """out[i] = row % qs[i] for each target modulus."""
    cdef Py_ssize_t i, j
    cdef u64 q
    for i in range(qs.shape[0]):
        q = qs[i]
        for j in range(row.shape[0]):
            out[i, j] = row[j] % q


def sum_rows_mod(u64[:, ::1] mat, u64[::1] qs, u64[::1] out):
    cdef Py_ssize_t i, j
    cdef u128 acc
    for i in range(mat.shape[0]):
        acc = 0
        for j in range(mat.shape[1]):
            acc += mat[i, j]
        out[i] = <u64>(acc % qs[i])


def weighted_rows_mod(u64[:, ::1] mat, u64[:, ::1] wmat, u64[::1] qs,
                      u64[::1] out):
    cdef Py_ssize_t i, j
    cdef u128 acc
    cdef u64 q
    for i in range(mat.shape[0]):
        acc = 0
        q = qs[i]
        for j in range(mat.shape[1]):
            acc += <u128>mat[i, j] * wmat[i, j]
            if (j & 3) == 3:
                acc %= q
        out[i] = <u64>(acc % q)


def projected_product_sum(u64[::1] r, u64[::1] a, u64[::1] b, u64 q):
    """sum r_i * a_i * b_i mod q (one pass, exact)."""
    cdef Py_ssize_t i, n = a.shape[0]
    cdef u128 acc = 0
    cdef u64 m
    for i in range(n):
        m = <u64>((<u128>a[i] * b[i]) % q)
        acc += <u128>m * r[i]
        if (i & 3) == 3:
            acc %= q
    return <u64>(acc % q)
