"""Exact RNS polynomial-ring arithmetic over Z_q[X]/(X^n + 1).

Everything here is deterministic integer math. Evaluation-domain values are
stored in the transform's native (bit-reversed) output order; the order is a
fixed permutation of the naive evaluation-at-odd-powers layout and cancels in
every forward/inverse pair.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import backends
from .errors import ConfigurationError

_MASK62 = (1 << 62) - 1

_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime(n: int) -> bool:
    """Miller-Rabin, deterministic for n < 3.3e24 with the fixed base set."""
    if n < 2:
        return False
    for p in _MR_BASES:
        if n % p == 0:
            return n == p
    d = n - 1
    s = 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def find_ntt_primes(bits: int, count: int, n: int, exclude=()) -> list:
    """The `count` largest primes q < 2^bits with q = 1 (mod 2n).

    Deterministic; scans downward so every prime satisfies
    bits - 1 < log2(q) < bits.
    """
    if bits > 62:
        raise ConfigurationError(f"prime size {bits} exceeds the 62-bit cap")
    two_n = 2 * n
    q = ((1 << bits) - 1) // two_n * two_n + 1
    found = []
    excluded = set(exclude)
    while len(found) < count:
        if q < (1 << (bits - 1)):
            raise ConfigurationError(
                f"not enough {bits}-bit NTT primes for ring degree {n}"
            )
        if q not in excluded and is_prime(q):
            found.append(q)
        q -= two_n
    return found


def _find_psi(q: int, n: int) -> int:
    """Smallest-generator primitive 2n-th root of unity mod q."""
    order = 2 * n
    for x in range(2, 1000):
        g = pow(x, (q - 1) // order, q)
        if pow(g, n, q) == q - 1:
            return g
    raise ConfigurationError(f"no primitive {order}-th root found mod {q}")


_bitrev_cache: dict = {}


def bitrev_permutation(n: int) -> np.ndarray:
    perm = _bitrev_cache.get(n)
    if perm is None:
        bits = n.bit_length() - 1
        perm = np.zeros(n, dtype=np.int64)
        for i in range(n):
            r = 0
            x = i
            for _ in range(bits):
                r = (r << 1) | (x & 1)
                x >>= 1
            perm[i] = r
        _bitrev_cache[n] = perm
    return perm


def _shoup(w: int, q: int) -> int:
    return (w << 64) // q


class Domain(Enum):
    COEFFICIENT = "coefficient"
    EVALUATION = "evaluation"


class PrimeModulus:
    """One RNS prime with its precomputed transform tables.

    Immutable after construction; safe to share across tasks. The twiddle
    tables are configuration, not live data: fault sites never address them.
    """

    def __init__(self, q: int, n: int, psi: int = None):
        if n < 2 or n & (n - 1):
            raise ConfigurationError(f"ring degree {n} is not a power of two")
        if q.bit_length() > 62:
            raise ConfigurationError(f"prime {q} exceeds the 62-bit cap")
        if (q - 1) % (2 * n) != 0:
            raise ConfigurationError(f"{q} != 1 (mod {2 * n}); unusable for degree {n}")
        if not is_prime(q):
            raise ConfigurationError(f"{q} is not prime")
        if psi is not None and pow(psi, n, q) != q - 1:
            raise ConfigurationError(f"{psi} is not a primitive {2 * n}-th root mod {q}")
        self.q = q
        self.n = n
        self.psi = psi if psi is not None else _find_psi(q, n)
        self.n_inv = pow(n, -1, q)
        psi_inv = pow(self.psi, -1, q)

        perm = bitrev_permutation(n)
        pw = np.empty(n, dtype=np.uint64)
        ipw = np.empty(n, dtype=np.uint64)
        w = 1
        iw = 1
        powers = np.empty(n, dtype=np.uint64)
        ipowers = np.empty(n, dtype=np.uint64)
        for i in range(n):
            powers[i] = w
            ipowers[i] = iw
            w = w * self.psi % q
            iw = iw * psi_inv % q
        pw[:] = powers[perm]
        ipw[:] = ipowers[perm]
        self.wtab = pw
        self.iwtab = ipw
        self.wtab_sh = np.array([_shoup(int(x), q) for x in pw], dtype=np.uint64)
        self.iwtab_sh = np.array([_shoup(int(x), q) for x in ipw], dtype=np.uint64)
        self.n_inv_sh = _shoup(self.n_inv, q)

        assert pow(self.psi, 2 * n, q) == 1 and pow(self.psi, n, q) == q - 1
        assert self.n_inv * n % q == 1

    def __repr__(self):
        return f"PrimeModulus(q={self.q}, n={self.n})"


_prime_cache: dict = {}


def get_prime(q: int, n: int, psi: int = None) -> PrimeModulus:
    key = (q, n, psi)
    pm = _prime_cache.get(key)
    if pm is None:
        pm = _prime_cache[key] = PrimeModulus(q, n, psi)
    return pm


class RnsBasis:
    """An ordered, pairwise-distinct set of NTT primes with CRT constants."""

    def __init__(self, primes):
        primes = tuple(primes)
        if len(set(p.q for p in primes)) != len(primes):
            raise ConfigurationError("RNS primes must be pairwise distinct")
        ns = set(p.n for p in primes)
        if len(ns) != 1:
            raise ConfigurationError("all primes in a basis must share the ring degree")
        self.primes = primes
        self.n = primes[0].n
        self.moduli = tuple(p.q for p in primes)
        self.q_big = 1
        for p in primes:
            self.q_big *= p.q
        self.crt_factors = tuple(self.q_big // p.q for p in primes)  # Q_i
        self.crt_inverses = tuple(
            pow(f % p.q, -1, p.q) for f, p in zip(self.crt_factors, primes)
        )  # u_i
        for f, u, p in zip(self.crt_factors, self.crt_inverses, primes):
            assert f * u % p.q == 1

    @property
    def key(self):
        return self.moduli

    def __len__(self):
        return len(self.primes)

    def __repr__(self):
        return f"RnsBasis({[p.q for p in self.primes]}, n={self.n})"


@dataclass
class RnsPoly:
    """A ring element as a (limbs, n) uint64 residue matrix plus a domain tag.

    Operations never mutate their inputs; residues stay canonically in
    [0, q_i) except transiently under fault injection.
    """

    res: np.ndarray
    domain: Domain
    basis: RnsBasis

    def __post_init__(self):
        if self.res.shape != (len(self.basis), self.basis.n):
            raise ConfigurationError(
                f"residue matrix {self.res.shape} does not match basis "
                f"({len(self.basis)} limbs, degree {self.basis.n})"
            )

    @classmethod
    def zeros(cls, basis: RnsBasis, domain: Domain = Domain.COEFFICIENT):
        return cls(np.zeros((len(basis), basis.n), dtype=np.uint64), domain, basis)

    @classmethod
    def from_int_coeffs(cls, coeffs, basis: RnsBasis):
        """Reduce signed arbitrary-precision coefficients into each limb."""
        res = np.empty((len(basis), basis.n), dtype=np.uint64)
        for i, p in enumerate(basis.primes):
            res[i] = np.array([int(c) % p.q for c in coeffs], dtype=np.uint64)
        return cls(res, Domain.COEFFICIENT, basis)

    def copy(self):
        return RnsPoly(self.res.copy(), self.domain, self.basis)

    def drop_limbs(self, keep: int):
        """Restrict to the first `keep` limbs (same integer mod the smaller Q)."""
        sub = RnsBasis(self.basis.primes[:keep])
        return RnsPoly(self.res[:keep].copy(), self.domain, sub)


def _check_same_basis(a: RnsPoly, b: RnsPoly):
    if a.basis.key != b.basis.key or a.basis.n != b.basis.n:
        raise ConfigurationError("operands live in different RNS bases")


# Raw per-limb helpers used by both the public ops and the evaluator stages.

def ntt_limbs(res: np.ndarray, primes, inject=None):
    """Forward-transform each row of `res` in place.

    inject = (limb, round, pos, xor_mask) targets one butterfly-round state.
    """
    for i, p in enumerate(primes):
        if inject is not None and inject[0] == i:
            backends.active.ntt_forward(
                res[i], p.q, p.wtab, p.wtab_sh, inject[1], inject[2], inject[3]
            )
        else:
            backends.active.ntt_forward(res[i], p.q, p.wtab, p.wtab_sh)


def intt_limbs(res: np.ndarray, primes, inject=None):
    for i, p in enumerate(primes):
        if inject is not None and inject[0] == i:
            backends.active.ntt_inverse(
                res[i], p.q, p.iwtab, p.iwtab_sh, p.n_inv, p.n_inv_sh,
                inject[1], inject[2], inject[3]
            )
        else:
            backends.active.ntt_inverse(
                res[i], p.q, p.iwtab, p.iwtab_sh, p.n_inv, p.n_inv_sh
            )


def mul_limbs(a: np.ndarray, b: np.ndarray, moduli) -> np.ndarray:
    out = np.empty_like(a)
    for i, q in enumerate(moduli):
        backends.active.mul_mod(a[i], b[i], q, out[i])
    return out


def add_limbs(a: np.ndarray, b: np.ndarray, moduli) -> np.ndarray:
    out = np.empty_like(a)
    for i, q in enumerate(moduli):
        backends.active.add_mod(a[i], b[i], q, out[i])
    return out


def sub_limbs(a: np.ndarray, b: np.ndarray, moduli) -> np.ndarray:
    out = np.empty_like(a)
    for i, q in enumerate(moduli):
        backends.active.sub_mod(a[i], b[i], q, out[i])
    return out


def neg_limbs(a: np.ndarray, moduli) -> np.ndarray:
    out = np.empty_like(a)
    for i, q in enumerate(moduli):
        backends.active.neg_mod(a[i], q, out[i])
    return out


# Public ring operations.

def ntt_forward(a: RnsPoly) -> RnsPoly:
    """Negacyclic NTT into the evaluation domain (transform order)."""
    if a.domain is not Domain.COEFFICIENT:
        raise ConfigurationError("ntt_forward expects a coefficient-domain operand")
    res = a.res.copy()
    ntt_limbs(res, a.basis.primes)
    return RnsPoly(res, Domain.EVALUATION, a.basis)


def ntt_inverse(a: RnsPoly) -> RnsPoly:
    if a.domain is not Domain.EVALUATION:
        raise ConfigurationError("ntt_inverse expects an evaluation-domain operand")
    res = a.res.copy()
    intt_limbs(res, a.basis.primes)
    return RnsPoly(res, Domain.COEFFICIENT, a.basis)


def negacyclic_mul(a: RnsPoly, b: RnsPoly) -> RnsPoly:
    """Product in R_q per limb: pointwise in the evaluation domain, or
    transform-multiply-inverse when both operands are in coefficient form."""
    _check_same_basis(a, b)
    if a.domain is not b.domain:
        raise ConfigurationError("negacyclic_mul operands must share a domain")
    if a.domain is Domain.EVALUATION:
        return RnsPoly(
            mul_limbs(a.res, b.res, a.basis.moduli), Domain.EVALUATION, a.basis
        )
    return ntt_inverse(negacyclic_mul(ntt_forward(a), ntt_forward(b)))


def add(a: RnsPoly, b: RnsPoly) -> RnsPoly:
    _check_same_basis(a, b)
    if a.domain is not b.domain:
        raise ConfigurationError("add operands must share a domain")
    return RnsPoly(add_limbs(a.res, b.res, a.basis.moduli), a.domain, a.basis)


def sub(a: RnsPoly, b: RnsPoly) -> RnsPoly:
    _check_same_basis(a, b)
    if a.domain is not b.domain:
        raise ConfigurationError("sub operands must share a domain")
    return RnsPoly(sub_limbs(a.res, b.res, a.basis.moduli), a.domain, a.basis)


_auto_maps: dict = {}


def automorphism_map(n: int, r: int):
    """Index permutation and sign mask realizing X -> X^(5^r mod 2n)."""
    key = (n, r)
    maps = _auto_maps.get(key)
    if maps is None:
        g = pow(5, r, 2 * n)
        idx = np.zeros(n, dtype=np.int64)
        negate = np.zeros(n, dtype=bool)
        for i in range(n):
            e = i * g % (2 * n)
            idx[i] = e % n
            negate[i] = e >= n
        maps = _auto_maps[key] = (idx, negate)
    return maps


def apply_automorphism_limbs(res: np.ndarray, moduli, r: int) -> np.ndarray:
    n = res.shape[1]
    idx, negate = automorphism_map(n, r)
    out = np.empty_like(res)
    for i, q in enumerate(moduli):
        moved = np.zeros(n, dtype=np.uint64)
        vals = res[i]
        moved[idx] = np.where(negate, (np.uint64(q) - vals) % np.uint64(q), vals)
        out[i] = moved
    return out


def automorphism(a: RnsPoly, r: int) -> RnsPoly:
    """Galois map sigma_r with g = 5^r mod 2n, applied by index permutation
    with sign correction; composed with encode/decode it rotates slots by r."""
    if a.domain is not Domain.COEFFICIENT:
        raise ConfigurationError("automorphism expects a coefficient-domain operand")
    if not 0 <= r < a.basis.n // 2:
        raise ConfigurationError(f"rotation step {r} outside [0, {a.basis.n // 2})")
    return RnsPoly(
        apply_automorphism_limbs(a.res, a.basis.moduli, r), a.domain, a.basis
    )


def bconv(v: RnsPoly, target: RnsBasis) -> RnsPoly:
    """Fast approximate base conversion B1 -> B2.

    Per coefficient: sum_i [v_i * u_i]_{q_i} * (Q_i mod p_j) mod p_j. The
    result represents the same integer up to an additive e*Q with
    0 <= e < len(B1), absorbed by downstream scaling.
    """
    if v.domain is not Domain.COEFFICIENT:
        raise ConfigurationError("bconv expects a coefficient-domain operand")
    if set(v.basis.moduli) & set(target.moduli):
        raise ConfigurationError("bconv source and target bases must be disjoint")
    if v.basis.n != target.n:
        raise ConfigurationError("bconv bases must share the ring degree")
    src = v.basis
    ys = np.empty_like(v.res)
    for i, p in enumerate(src.primes):
        backends.active.scalar_mul_mod(
            v.res[i], src.crt_inverses[i] % p.q, p.q, ys[i]
        )
    out = np.zeros((len(target), target.n), dtype=np.uint64)
    tmp = np.empty(target.n, dtype=np.uint64)
    for j, pj in enumerate(target.primes):
        for i in range(len(src)):
            backends.active.scalar_mul_mod(
                ys[i], src.crt_factors[i] % pj.q, pj.q, tmp
            )
            out[j] = (out[j] + tmp) % np.uint64(pj.q)
    return RnsPoly(out, Domain.COEFFICIENT, target)


def crt_interpolate(v: RnsPoly):
    """Exact CRT reconstruction per coefficient, recentered into (-Q/2, Q/2].

    Returns a list of Python ints.
    """
    if v.domain is not Domain.COEFFICIENT:
        raise ConfigurationError("crt_interpolate expects a coefficient-domain operand")
    basis = v.basis
    q_big = basis.q_big
    half = q_big // 2
    ys = np.empty_like(v.res)
    for i, p in enumerate(basis.primes):
        backends.active.scalar_mul_mod(
            v.res[i], basis.crt_inverses[i] % p.q, p.q, ys[i]
        )
    factors = np.array(basis.crt_factors, dtype=object)
    acc = ys.astype(object).T @ factors
    acc %= q_big
    return [int(a) if a <= half else int(a) - q_big for a in acc]
