"""Pure-Python kernel backend.

This module is the semantic reference for the hot kernels: the compiled
backend must produce bit-identical results, including on corrupted words.
The word-level contract is:

* residues are uint64 words, normally in [0, q) for a prime q < 2^62;
* a single injected bit flip (bit index <= 61) may push a word into
  [q, 2^63); such words are legal kernel inputs and are reduced (or passed
  through deterministically) by the formulas below;
* butterfly add/sub use one conditional subtraction, never a full reduction,
  so out-of-range inputs propagate exactly the same way in both backends;
* every word-level add/sub is performed mod 2^64 (C unsigned wraparound);
  this backend masks explicitly so corrupted values that overflow propagate
  bit-identically;
* products are reduced exactly (128-bit intermediates in the compiled
  backend, arbitrary precision here).

Vectors are numpy uint64 arrays; arithmetic here runs on object-dtype copies
(Python ints), vectorized per butterfly round via precomputed index tables.
"""

import numpy as np

name = "python"

_fwd_plans: dict = {}
_inv_plans: dict = {}


def _forward_plan(n):
    """Per-round (u_idx, v_idx, w_idx) gather tables for the CT forward pass."""
    plan = _fwd_plans.get(n)
    if plan is None:
        plan = []
        t = n
        m = 1
        while m < n:
            t //= 2
            u_idx = []
            v_idx = []
            w_idx = []
            for i in range(m):
                j1 = 2 * i * t
                for j in range(j1, j1 + t):
                    u_idx.append(j)
                    v_idx.append(j + t)
                    w_idx.append(m + i)
            plan.append((np.array(u_idx), np.array(v_idx), np.array(w_idx)))
            m *= 2
        _fwd_plans[n] = plan
    return plan


def _inverse_plan(n):
    """Per-round gather tables for the GS inverse pass."""
    plan = _inv_plans.get(n)
    if plan is None:
        plan = []
        t = 1
        m = n
        while m > 1:
            h = m // 2
            u_idx = []
            v_idx = []
            w_idx = []
            j1 = 0
            for i in range(h):
                for j in range(j1, j1 + t):
                    u_idx.append(j)
                    v_idx.append(j + t)
                    w_idx.append(h + i)
                j1 += 2 * t
            plan.append((np.array(u_idx), np.array(v_idx), np.array(w_idx)))
            t *= 2
            m = h
        _inv_plans[n] = plan
    return plan


_M64 = (1 << 64) - 1


def _cond_sub(x, q):
    return np.where(x >= q, x - q, x)


def ntt_forward(vec, q, wtab, wtab_sh, inject_round=0, inject_pos=0, inject_xor=0):
    """In-place negacyclic NTT, natural order in, bit-reversed order out.

    If inject_round >= 1, vec[inject_pos] is XORed with inject_xor right
    after that butterfly round completes (rounds are numbered 1..log2(n)).
    """
    n = len(vec)
    q = int(q)
    a = vec.astype(object)
    w = wtab.astype(object)
    for rnd, (ui, vi, wi) in enumerate(_forward_plan(n), start=1):
        u = a[ui]
        v = (a[vi] * w[wi]) % q
        a[ui] = _cond_sub((u + v) & _M64, q)
        a[vi] = _cond_sub((u + q - v) & _M64, q)
        if rnd == inject_round:
            a[inject_pos] ^= int(inject_xor)
    vec[:] = a.astype(np.uint64)


def ntt_inverse(vec, q, iwtab, iwtab_sh, n_inv, n_inv_sh,
                inject_round=0, inject_pos=0, inject_xor=0):
    """In-place inverse NTT, bit-reversed order in, natural order out.

    Injection rounds 1..log2(n) fire after each GS pass, before the final
    n^-1 scaling.
    """
    n = len(vec)
    q = int(q)
    a = vec.astype(object)
    w = iwtab.astype(object)
    for rnd, (ui, vi, wi) in enumerate(_inverse_plan(n), start=1):
        u = a[ui]
        v = a[vi]
        a[ui] = _cond_sub((u + v) & _M64, q)
        a[vi] = (((u + q - v) & _M64) * w[wi]) % q
        if rnd == inject_round:
            a[inject_pos] ^= int(inject_xor)
    a = (a * int(n_inv)) % q
    vec[:] = a.astype(np.uint64)


def mul_mod(a, b, q, out):
    out[:] = ((a.astype(object) * b.astype(object)) % int(q)).astype(np.uint64)


def add_mod(a, b, q, out):
    out[:] = (a + b) % np.uint64(q)


def sub_mod(a, b, q, out):
    out[:] = (a + np.uint64(q) - b) % np.uint64(q)


def neg_mod(a, q, out):
    out[:] = (np.uint64(q) - a) % np.uint64(q)


def mod_vec(a, q, out):
    out[:] = a % np.uint64(q)


def centered_reduce(a, src_q, q, out):
    plain = a % np.uint64(q)
    shifted = (plain + np.uint64(q) - np.uint64(src_q % q)) % np.uint64(q)
    out[:] = np.where(a > np.uint64(src_q // 2), shifted, plain)


def mul_acc_mod(a, b, q, acc):
    acc[:] = ((acc.astype(object) + a.astype(object) * b.astype(object)) % int(q)).astype(np.uint64)


def mul_acc_mod_shoup(a, b, b_sh, q, acc):
    """acc += a*b mod q, with b < q carrying a Shoup companion b_sh."""
    mul_acc_mod(a, b, q, acc)


def scalar_mul_mod(a, s, q, out):
    out[:] = ((a.astype(object) * int(s)) % int(q)).astype(np.uint64)


def sum_mod(a, q):
    return int(sum(int(x) for x in a) % int(q))


def weighted_sum_mod(a, w, q):
    return int(sum(int(x) * int(y) for x, y in zip(a, w)) % int(q))


def projected_product_sum(r, a, b, q):
    q = int(q)
    return int(sum(int(y) * int(z) % q * int(x) for x, y, z in zip(r, a, b)) % q)


def mod_rows(row, qs, out):
    for i in range(len(qs)):
        mod_vec(row, qs[i], out[i])


def mul_check_rows(a, b, c, qs):
    tmp = np.empty(a.shape[1], dtype=np.uint64)
    for i in range(a.shape[0]):
        mul_mod(a[i], b[i], qs[i], tmp)
        if not np.array_equal(tmp, c[i]):
            return False
    return True


def bconv_flag_rows(row, qs, out):
    acc = sum(int(x) for x in row)
    for t, q in enumerate(qs):
        out[t] = acc % int(q)


def centered_flag_rows(row, src_q, qs, out):
    src_q = int(src_q)
    half = src_q // 2
    acc = 0
    cnt = 0
    for x in row:
        acc += int(x)
        if int(x) > half:
            cnt += 1
    for t, q in enumerate(qs):
        out[t] = (acc - cnt * src_q) % int(q)


def sum_rows_mod(mat, qs, out):
    for i in range(mat.shape[0]):
        out[i] = sum_mod(mat[i], qs[i])


def weighted_rows_mod(mat, wmat, qs, out):
    for i in range(mat.shape[0]):
        out[i] = weighted_sum_mod(mat[i], wmat[i], qs[i])


def pointwise_flag_rows(a, b, c, rmat, qs, fin, fout):
    for i in range(a.shape[0]):
        fin[i] = projected_product_sum(rmat[i], a[i], b[i], qs[i])
        fout[i] = weighted_sum_mod(c[i], rmat[i], qs[i])
