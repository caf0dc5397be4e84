"""The CKKS scheme at desk scale.

Encode/decode over the canonical embedding, RLWE key generation and
encryption, and the five ciphertext operators with rescale and the
seven-step hybrid keyswitch (one RNS digit per chain prime, one special
prime). All polynomial-level evaluation steps flow through a StageRunner;
encryption and decryption themselves are unstaged and therefore outside the
fault model.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import backends, stages
from .encoding import embed_forward, embed_inverse
from .errors import ConfigurationError, LevelExhaustedError
from .params import CkksParams
from .ring import (
    Domain,
    RnsPoly,
    add_limbs,
    apply_automorphism_limbs,
    crt_interpolate,
    intt_limbs,
    mul_limbs,
    neg_limbs,
    ntt_limbs,
    sub_limbs,
)

_SCALE_RTOL = 1e-9


@dataclass
class Plaintext:
    poly: RnsPoly
    scale: float
    level: int


@dataclass
class Ciphertext:
    c0: RnsPoly
    c1: RnsPoly
    scale: float
    level: int

    def copy(self):
        return Ciphertext(self.c0.copy(), self.c1.copy(), self.scale, self.level)


def _shoup_table(arr, q):
    return ((arr.astype(object) << 64) // int(q)).astype(np.uint64)


class KeySwitchKey:
    """Per-digit key pairs over the full extended basis (chain + special).

    Digit j holds an RLWE encryption of P * t_j * s', where t_j is the CRT
    reconstruction factor of chain prime j; Shoup companions are precomputed
    for the point-mult inner product.
    """

    def __init__(self, k0_list, k1_list, ext_moduli):
        self.k0 = k0_list
        self.k1 = k1_list
        self.ext_moduli = ext_moduli
        self.k0_sh = [
            np.stack([_shoup_table(row, q) for row, q in zip(mat, ext_moduli)])
            for mat in k0_list
        ]
        self.k1_sh = [
            np.stack([_shoup_table(row, q) for row, q in zip(mat, ext_moduli)])
            for mat in k1_list
        ]
        self._level_cache = {}

    def at_level(self, level):
        """Digit key rows restricted to {q_0..q_level, P}."""
        sel = self._level_cache.get(level)
        if sel is None:
            rows = list(range(level + 1)) + [len(self.ext_moduli) - 1]
            take = lambda mat: np.ascontiguousarray(mat[rows])
            sel = self._level_cache[level] = [
                (
                    take(self.k0[j]), take(self.k0_sh[j]),
                    take(self.k1[j]), take(self.k1_sh[j]),
                )
                for j in range(level + 1)
            ]
        return sel


@dataclass
class KeyMaterial:
    params: CkksParams
    seed: int
    secret_int: np.ndarray          # ternary coefficients, test/keygen use only
    secret: RnsPoly                 # evaluation domain over the full basis
    pk0: np.ndarray
    pk1: np.ndarray
    relin: KeySwitchKey
    rotation: dict = field(default_factory=dict)

    def secret_rows(self, level):
        return self.secret.res[: level + 1]


def _int_poly_limbs(ints, primes):
    res = np.empty((len(primes), len(ints)), dtype=np.uint64)
    for i, p in enumerate(primes):
        res[i] = np.mod(ints, p.q).astype(np.uint64)
    return res


def _int_poly_eval(ints, primes):
    res = _int_poly_limbs(ints, primes)
    ntt_limbs(res, primes)
    return res


def _uniform_limbs(rng, primes, n):
    res = np.empty((len(primes), n), dtype=np.uint64)
    for i, p in enumerate(primes):
        res[i] = rng.integers(0, p.q, n, dtype=np.uint64)
    return res


def _gaussian_ints(rng, stddev, n):
    return np.rint(rng.normal(0.0, stddev, n)).astype(np.int64)


def _ternary_ints(rng, n):
    return rng.integers(-1, 2, n).astype(np.int64)


def keygen(params: CkksParams, seed: int, rot_steps=()) -> KeyMaterial:
    """Deterministic key generation: secret, public, relinearization and
    per-rotation keyswitch keys in the extended basis."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n = params.n
    full = params.ext_basis(params.depth)
    full_primes = full.primes
    chain_primes = params.chain_primes(params.depth)

    s_int = _ternary_ints(rng, n)
    s_full = RnsPoly(_int_poly_eval(s_int, full_primes), Domain.EVALUATION, full)

    # public key over the chain basis at full depth
    k = len(chain_primes)
    a = _uniform_limbs(rng, chain_primes, n)
    e = _int_poly_eval(_gaussian_ints(rng, params.noise_stddev, n), chain_primes)
    chain_moduli = tuple(p.q for p in chain_primes)
    pk0 = add_limbs(neg_limbs(mul_limbs(a, s_full.res[:k], chain_moduli), chain_moduli),
                    e, chain_moduli)
    pk1 = a

    s2 = mul_limbs(s_full.res, s_full.res, full.moduli)
    relin = _make_ksk(params, rng, s_full, s2)

    rotation = {}
    for r in sorted(set(rot_steps)):
        rot_s_int = _rotate_secret(s_int, r, n)
        rot_s = _int_poly_eval(rot_s_int, full_primes)
        rotation[int(r)] = _make_ksk(params, rng, s_full, rot_s)

    return KeyMaterial(params, seed, s_int, s_full, pk0, pk1, relin, rotation)


def _rotate_secret(s_int, r, n):
    out = np.zeros(n, dtype=np.int64)
    g = pow(5, r, 2 * n)
    for i in range(n):
        e = i * g % (2 * n)
        if e < n:
            out[e] += s_int[i]
        else:
            out[e - n] -= s_int[i]
    return out


def _make_ksk(params, rng, s_full, target_eval):
    """Key pairs (-a_j s + e_j + P t_j s', a_j) over the full extended basis."""
    full = params.ext_basis(params.depth)
    primes = full.primes
    moduli = full.moduli
    n = params.n
    dig = params.depth + 1
    p_mod = params.special_modulus
    k0_list, k1_list = [], []
    for j in range(dig):
        a_j = _uniform_limbs(rng, primes, n)
        e_j = _int_poly_eval(_gaussian_ints(rng, params.noise_stddev, n), primes)
        k0 = add_limbs(neg_limbs(mul_limbs(a_j, s_full.res, moduli), moduli),
                       e_j, moduli)
        # P * t_j is (P mod q_j) on chain limb j and zero elsewhere
        qj = moduli[j]
        lifted = np.empty(n, dtype=np.uint64)
        backends.active.scalar_mul_mod(target_eval[j], p_mod % qj, qj, lifted)
        k0[j] = (k0[j] + lifted) % np.uint64(qj)
        k0_list.append(k0)
        k1_list.append(a_j)
    return KeySwitchKey(k0_list, k1_list, moduli)


def encode(values, params: CkksParams, level=None, scale=None) -> Plaintext:
    """Scale, embed and round a real vector into an evaluation-domain
    plaintext; decode(encode(m)) recovers m up to the rounding floor."""
    if level is None:
        level = params.depth
    if scale is None:
        scale = params.delta
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or len(values) > params.slots:
        raise ConfigurationError(
            f"message must be a vector of at most {params.slots} values"
        )
    if not np.all(np.isfinite(values)):
        raise ConfigurationError("message entries must be finite")
    peak = float(np.max(np.abs(values))) if len(values) else 0.0
    if peak > 0 and math.log2(peak) + math.log2(scale) > params.log_q(level) - 10:
        raise ConfigurationError(
            "message magnitude overflows the modulus headroom at this level"
        )
    padded = np.zeros(params.slots, dtype=np.float64)
    padded[: len(values)] = values
    coeffs = np.rint(embed_inverse(padded) * scale).astype(np.int64)
    basis = params.basis(level)
    res = _int_poly_limbs(coeffs, basis.primes)
    ntt_limbs(res, basis.primes)
    poly = RnsPoly(res, Domain.EVALUATION, basis)
    return Plaintext(poly, float(scale), level)


def decode(pt: Plaintext, params: CkksParams) -> np.ndarray:
    """CRT-interpolate, embed forward and divide by the scale."""
    poly = pt.poly
    if poly.domain is Domain.EVALUATION:
        res = poly.res.copy()
        intt_limbs(res, poly.basis.primes)
        poly = RnsPoly(res, Domain.COEFFICIENT, poly.basis)
    ints = crt_interpolate(poly)
    coeffs = np.array([float(v) for v in ints], dtype=np.float64)
    return (embed_forward(coeffs) / pt.scale).real.copy()


def encrypt(pt: Plaintext, keys: KeyMaterial, rng) -> Ciphertext:
    """RLWE encryption under the public key at full depth."""
    params = keys.params
    if pt.level != params.depth:
        raise ConfigurationError("fresh encryption happens at the top level")
    basis = params.basis(params.depth)
    primes = basis.primes
    n = params.n
    v = _int_poly_eval(_ternary_ints(rng, n), primes)
    e0 = _int_poly_eval(_gaussian_ints(rng, params.noise_stddev, n), primes)
    e1 = _int_poly_eval(_gaussian_ints(rng, params.noise_stddev, n), primes)
    c0 = add_limbs(add_limbs(mul_limbs(keys.pk0, v, basis.moduli), e0, basis.moduli),
                   pt.poly.res, basis.moduli)
    c1 = add_limbs(mul_limbs(keys.pk1, v, basis.moduli), e1, basis.moduli)
    return Ciphertext(
        RnsPoly(c0, Domain.EVALUATION, basis),
        RnsPoly(c1, Domain.EVALUATION, basis),
        pt.scale,
        pt.level,
    )


def decrypt(ct: Ciphertext, keys: KeyMaterial) -> Plaintext:
    """c0 + c1*s per limb, inverse transform, wrapped as a coefficient-domain
    plaintext ready for decode."""
    basis = ct.c0.basis
    s_rows = keys.secret_rows(ct.level)
    m = add_limbs(ct.c0.res, mul_limbs(ct.c1.res, s_rows, basis.moduli), basis.moduli)
    intt_limbs(m, basis.primes)
    return Plaintext(RnsPoly(m, Domain.COEFFICIENT, basis), ct.scale, ct.level)


def decrypt_decode(ct: Ciphertext, keys: KeyMaterial) -> np.ndarray:
    return decode(decrypt(ct, keys), keys.params)


def _scales_match(a, b):
    return math.isclose(a, b, rel_tol=_SCALE_RTOL)


class Evaluator:
    """Ciphertext-level operators, publishing every polynomial-level step to
    the stage runner. One evaluator per logical execution; stage paths embed
    per-operator instance counters (e.g. "mult#2/keyswitch/op-3")."""

    def __init__(self, keys: KeyMaterial, runner=None):
        self.keys = keys
        self.params = keys.params
        self.runner = runner if runner is not None else stages.StageRunner()
        self._counts = {}

    def _next(self, opname):
        i = self._counts.get(opname, 0)
        self._counts[opname] = i + 1
        return f"{opname}#{i}"

    def _run(self, stage):
        return self.runner.execute(stage)

    # ------------------------------------------------------------------ adds

    def _check_pair(self, a, b):
        if a.level != b.level:
            raise ConfigurationError("operands live at different levels")
        if not _scales_match(a.scale, b.scale):
            raise ConfigurationError(
                f"operand scales differ: {a.scale} vs {b.scale}"
            )

    def add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        """ct-ct add: componentwise modular addition."""
        self._check_pair(a, b)
        prefix = self._next("add")
        basis = a.c0.basis
        (c0,) = self._run(stages.make_pointwise_add_stage(
            f"{prefix}/c0", "a0", a.c0.res, "b0", b.c0.res, basis.moduli))
        (c1,) = self._run(stages.make_pointwise_add_stage(
            f"{prefix}/c1", "a1", a.c1.res, "b1", b.c1.res, basis.moduli))
        return Ciphertext(
            RnsPoly(c0, Domain.EVALUATION, basis),
            RnsPoly(c1, Domain.EVALUATION, basis),
            a.scale, a.level,
        )

    def add_plain(self, a: Ciphertext, pt: Plaintext) -> Ciphertext:
        self._check_pair(a, pt)
        prefix = self._next("padd")
        basis = a.c0.basis
        (c0,) = self._run(stages.make_pointwise_add_stage(
            f"{prefix}/c0", "a0", a.c0.res, "pt", pt.poly.res, basis.moduli))
        return Ciphertext(
            RnsPoly(c0, Domain.EVALUATION, basis), a.c1.copy(), a.scale, a.level,
        )

    # ----------------------------------------------------------------- mults

    def mul_plain(self, a: Ciphertext, pt: Plaintext) -> Ciphertext:
        """ct-pt mult: pointwise product on both components, then rescale."""
        if a.level != pt.level:
            raise ConfigurationError("plaintext level does not match ciphertext")
        prefix = self._next("pmult")
        basis = a.c0.basis
        (c0,) = self._run(stages.make_pointwise_mul_stage(
            f"{prefix}/mul.c0", "a0", a.c0.res, "pt", pt.poly.res, basis.moduli))
        (c1,) = self._run(stages.make_pointwise_mul_stage(
            f"{prefix}/mul.c1", "a1", a.c1.res, "pt", pt.poly.res, basis.moduli))
        ct = Ciphertext(
            RnsPoly(c0, Domain.EVALUATION, basis),
            RnsPoly(c1, Domain.EVALUATION, basis),
            a.scale * pt.scale, a.level,
        )
        return self._rescale(prefix, ct)

    def mul(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        """ct-ct mult: tensor to (d0, d1, d2), relinearize d2 through the
        keyswitch, combine and rescale."""
        self._check_pair(a, b)
        if a.level < 1:
            raise LevelExhaustedError("no rescale primes left for multiplication")
        prefix = self._next("mult")
        basis = a.c0.basis
        moduli = basis.moduli
        (d0,) = self._run(stages.make_pointwise_mul_stage(
            f"{prefix}/tensor/d0", "a0", a.c0.res, "b0", b.c0.res, moduli))
        (d1a,) = self._run(stages.make_pointwise_mul_stage(
            f"{prefix}/tensor/d1a", "a0", a.c0.res, "b1", b.c1.res, moduli))
        (d1b,) = self._run(stages.make_pointwise_mul_stage(
            f"{prefix}/tensor/d1b", "a1", a.c1.res, "b0", b.c0.res, moduli))
        (d1,) = self._run(stages.make_pointwise_add_stage(
            f"{prefix}/tensor/d1sum", "d1a", d1a, "d1b", d1b, moduli))
        (d2,) = self._run(stages.make_pointwise_mul_stage(
            f"{prefix}/tensor/d2", "a1", a.c1.res, "b1", b.c1.res, moduli))

        ks0, ks1 = self._keyswitch(f"{prefix}/keyswitch", d2, a.level,
                                   self.keys.relin)
        (c0,) = self._run(stages.make_pointwise_add_stage(
            f"{prefix}/combine/c0", "d0", d0, "ks0", ks0, moduli))
        (c1,) = self._run(stages.make_pointwise_add_stage(
            f"{prefix}/combine/c1", "d1", d1, "ks1", ks1, moduli))
        ct = Ciphertext(
            RnsPoly(c0, Domain.EVALUATION, basis),
            RnsPoly(c1, Domain.EVALUATION, basis),
            a.scale * b.scale, a.level,
        )
        return self._rescale(prefix, ct)

    # -------------------------------------------------------------- rotation

    def rotate(self, a: Ciphertext, r: int) -> Ciphertext:
        """ct rot: Galois automorphism on both components plus a keyswitch of
        the transformed c1; decoded slots rotate left by r."""
        if not 0 <= r < self.params.slots:
            raise ConfigurationError(
                f"rotation step {r} outside [0, {self.params.slots})"
            )
        if r == 0:
            return a.copy()
        ksk = self.keys.rotation.get(r)
        if ksk is None:
            raise ConfigurationError(f"missing rotation key for step {r}")
        prefix = self._next("rot")
        basis = a.c0.basis
        primes = basis.primes

        rotated = []
        for label, poly in (("c0", a.c0), ("c1", a.c1)):
            (coeff,) = self._run(stages.make_transform_stage(
                f"{prefix}/{label}/intt", stages.INTT,
                [(label, poly.res)], [primes]))
            (perm,) = self._run(self._automorphism_stage(
                f"{prefix}/{label}/auto", label, coeff, basis.moduli, r))
            (back,) = self._run(stages.make_transform_stage(
                f"{prefix}/{label}/ntt", stages.NTT,
                [(label, perm)], [primes]))
            rotated.append(back)
        rot0, rot1 = rotated

        ks0, ks1 = self._keyswitch(f"{prefix}/keyswitch", rot1, a.level, ksk)
        (c0,) = self._run(stages.make_pointwise_add_stage(
            f"{prefix}/combine/c0", "rot0", rot0, "ks0", ks0, basis.moduli))
        return Ciphertext(
            RnsPoly(c0, Domain.EVALUATION, basis),
            RnsPoly(ks1, Domain.EVALUATION, basis),
            a.scale, a.level,
        )

    def _automorphism_stage(self, path, name, arr, moduli, r):
        ops = (stages.Operand(name, moduli, arr.shape, arr),)

        def run(inject=None):
            (src,) = stages._inject_copy((arr,), inject)
            return (apply_automorphism_limbs(src, moduli, r),)

        return stages.Stage(path, stages.AUTOMORPHISM, ops, run,
                            out_moduli=(moduli,), meta={"r": r})

    # -------------------------------------------------------------- rescale

    def rescale(self, a: Ciphertext) -> Ciphertext:
        return self._rescale(self._next("rescale"), a)

    def _rescale(self, prefix, a: Ciphertext) -> Ciphertext:
        """Drop the last chain prime and divide by it (centered rounding)."""
        if a.level < 1:
            raise LevelExhaustedError("cannot rescale at level 0")
        params = self.params
        old_basis = a.c0.basis
        last = old_basis.primes[-1]
        new_basis = params.basis(a.level - 1)
        new_primes = new_basis.primes
        k = a.level  # limbs after the drop
        q_inv = tuple(pow(last.q, -1, p.q) for p in new_primes)

        outs = []
        for label, poly in (("c0", a.c0), ("c1", a.c1)):
            sub = f"{prefix}/rescale.{label}"
            (last_coeff,) = self._run(stages.make_transform_stage(
                f"{sub}/intt", stages.INTT,
                [("last", poly.res[k: k + 1])], [(last,)]))
            (delta,) = self._run(_make_centered_conv_stage(
                f"{sub}/bconv", ("last", last_coeff), last, new_primes))
            (delta_eval,) = self._run(stages.make_transform_stage(
                f"{sub}/ntt", stages.NTT, [("delta", delta)], [new_primes]))
            (fixed,) = self._run(_make_rescale_fix_stage(
                f"{sub}/fix", poly.res[:k], delta_eval, new_basis.moduli, q_inv))
            outs.append(fixed)

        return Ciphertext(
            RnsPoly(outs[0], Domain.EVALUATION, new_basis),
            RnsPoly(outs[1], Domain.EVALUATION, new_basis),
            a.scale / last.q,
            a.level - 1,
        )

    # ------------------------------------------------------------- keyswitch

    def _keyswitch(self, prefix, d, level, ksk):
        """The seven-step pipeline on an evaluation-domain input d.

        Exactly seven stage events fire (op-0..op-6); the final scale by
        P^{-1} and subtraction is inline arithmetic, not a stage.
        """
        params = self.params
        chain = params.chain_primes(level)
        k = level + 1
        sp = params.special_prime
        ext_primes = chain + (sp,)
        ext_moduli = tuple(p.q for p in ext_primes)
        chain_moduli = tuple(p.q for p in chain)

        (d_coeff,) = self._run(stages.make_transform_stage(
            f"{prefix}/op-0", stages.INTT, [("d", d)], [chain]))

        digits = self._run(_make_modup_stage(
            f"{prefix}/op-1", d_coeff, chain, ext_primes))

        digit_primes = [
            tuple(p for t, p in enumerate(ext_primes) if t != j) for j in range(k)
        ]
        digits_eval = self._run(stages.make_transform_stage(
            f"{prefix}/op-2", stages.NTT,
            [(f"digit{j}", digits[j]) for j in range(k)], digit_primes))

        u0, u1 = self._run(_make_inner_product_stage(
            f"{prefix}/op-3", d, chain_moduli, digits_eval, digit_primes,
            ksk.at_level(level), ext_moduli))

        u0p, u1p = self._run(stages.make_transform_stage(
            f"{prefix}/op-4", stages.INTT,
            [("u0p", u0[k: k + 1]), ("u1p", u1[k: k + 1])], [(sp,), (sp,)]))

        f0, f1 = self._run(_make_moddown_stage(
            f"{prefix}/op-5", u0p, u1p, sp, chain))

        f0e, f1e = self._run(stages.make_transform_stage(
            f"{prefix}/op-6", stages.NTT, [("f0", f0), ("f1", f1)],
            [chain, chain]))

        p_inv = tuple(pow(sp.q, -1, p.q) for p in chain)
        ks = []
        for u, f in ((u0, f0e), (u1, f1e)):
            diff = sub_limbs(u[:k], f, chain_moduli)
            out = np.empty_like(diff)
            for i, q in enumerate(chain_moduli):
                backends.active.scalar_mul_mod(diff[i], p_inv[i], q, out[i])
            ks.append(out)
        return ks[0], ks[1]

    # ------------------------------------------------------------- plumbing

    def encode_for(self, ct: Ciphertext, values) -> Plaintext:
        """Encode at the ciphertext's level and scale (for ct-pt add)."""
        return encode(values, self.params, ct.level, ct.scale)


def _make_modup_stage(path, d_coeff, chain, ext_primes):
    """op-1: each single-prime digit [d]_{q_j} reduced into the other
    extended-basis primes (its own residue rides along from d in eval form)."""
    k = len(chain)
    chain_moduli = tuple(p.q for p in chain)
    ops = (stages.Operand("d", chain_moduli, d_coeff.shape, d_coeff),)

    target_qs = [
        np.array([p.q for t, p in enumerate(ext_primes) if t != j],
                 dtype=np.uint64)
        for j in range(k)
    ]

    def run(inject=None):
        (src,) = stages._inject_copy((d_coeff,), inject)
        n = src.shape[1]
        block = np.empty((k, k, n), dtype=np.uint64)
        for j in range(k):
            backends.active.mod_rows(src[j], target_qs[j], block[j])
        return tuple(block)

    out_moduli = tuple(
        tuple(p.q for t, p in enumerate(ext_primes) if t != j) for j in range(k)
    )
    return stages.Stage(path, stages.BCONV, ops, run, out_moduli=out_moduli,
                        meta={"flavor": "modup"})


def _centered_rows(row, src_q, target_primes):
    """Reduce a residue row mod src_q into each target prime, lifting values
    above src_q/2 to their negative representative first."""
    out = np.empty((len(target_primes), len(row)), dtype=np.uint64)
    for i, p in enumerate(target_primes):
        backends.active.centered_reduce(row, src_q, p.q, out[i])
    return out


def _make_centered_conv_stage(path, named_poly, src_prime, target_primes):
    name, arr = named_poly
    ops = (stages.Operand(name, (src_prime.q,), arr.shape, arr),)

    def run(inject=None):
        (src,) = stages._inject_copy((arr,), inject)
        return (_centered_rows(src[0], src_prime.q, target_primes),)

    return stages.Stage(
        path, stages.BCONV, ops, run,
        out_moduli=(tuple(p.q for p in target_primes),),
        meta={"flavor": "moddown"},
    )


def _make_moddown_stage(path, u0p, u1p, sp, chain):
    """op-5: centered conversion of both special-prime rows into the chain."""
    ops = (
        stages.Operand("u0p", (sp.q,), u0p.shape, u0p),
        stages.Operand("u1p", (sp.q,), u1p.shape, u1p),
    )

    def run(inject=None):
        a, b = stages._inject_copy((u0p, u1p), inject)
        return (
            _centered_rows(a[0], sp.q, chain),
            _centered_rows(b[0], sp.q, chain),
        )

    chain_moduli = tuple(p.q for p in chain)
    return stages.Stage(path, stages.BCONV, ops, run,
                        out_moduli=(chain_moduli, chain_moduli),
                        meta={"flavor": "moddown"})


def _make_inner_product_stage(path, d, chain_moduli, digits_eval, digit_primes,
                              level_keys, ext_moduli):
    """op-3: u_c = sum_j D_j (*) k_cj over the extended basis; the key pairs
    are constants of the stage, not fault sites."""
    k = len(digits_eval)
    n = d.shape[1]
    ops = [stages.Operand("d", chain_moduli, d.shape, d)]
    for j in range(k):
        ops.append(stages.Operand(
            f"digit{j}", tuple(p.q for p in digit_primes[j]),
            digits_eval[j].shape, digits_eval[j]))
    for j, (k0, _, k1, _) in enumerate(level_keys):
        ops.append(stages.Operand(f"key{j}.0", ext_moduli, k0.shape, k0,
                                  injectable=False))
        ops.append(stages.Operand(f"key{j}.1", ext_moduli, k1.shape, k1,
                                  injectable=False))

    def digit_row(j, t, d_src, digit_srcs):
        if t == j:
            return d_src[j]
        return digit_srcs[j][t - 1 if t > j else t]

    def run(inject=None):
        d_src = d
        digit_srcs = list(digits_eval)
        if inject is not None:
            op_idx, limb, coeff, xor = inject
            if op_idx == 0:
                d_src = d.copy()
                d_src[limb, coeff] ^= np.uint64(xor)
            elif 1 <= op_idx <= k:
                w = digit_srcs[op_idx - 1].copy()
                w[limb, coeff] ^= np.uint64(xor)
                digit_srcs[op_idx - 1] = w
        u0 = np.zeros((k + 1, n), dtype=np.uint64)
        u1 = np.zeros((k + 1, n), dtype=np.uint64)
        mul_acc = backends.active.mul_acc_mod_shoup
        for t, q in enumerate(ext_moduli):
            for j, (k0, k0_sh, k1, k1_sh) in enumerate(level_keys):
                vec = digit_row(j, t, d_src, digit_srcs)
                mul_acc(vec, k0[t], k0_sh[t], q, u0[t])
                mul_acc(vec, k1[t], k1_sh[t], q, u1[t])
        return (u0, u1)

    return stages.Stage(
        path, stages.INNER_PRODUCT, tuple(ops), run,
        out_moduli=(ext_moduli, ext_moduli),
        meta={"keys": level_keys, "digit_row": digit_row, "digits": k},
    )


def _make_rescale_fix_stage(path, c_head, delta_eval, moduli, q_inv):
    ops = (
        stages.Operand("c", moduli, c_head.shape, c_head),
        stages.Operand("delta", moduli, delta_eval.shape, delta_eval),
    )

    def run(inject=None):
        c_src, d_src = stages._inject_copy((c_head, delta_eval), inject)
        diff = sub_limbs(c_src, d_src, moduli)
        out = np.empty_like(diff)
        for i, q in enumerate(moduli):
            backends.active.scalar_mul_mod(diff[i], q_inv[i], q, out[i])
        return (out,)

    return stages.Stage(path, stages.RESCALE_FIX, ops, run,
                        out_moduli=(moduli,), meta={"factors": q_inv})
