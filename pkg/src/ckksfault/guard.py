"""Fault-tolerance wrappers over polynomial-level stages.

Two protection modes wrap the stage runner:

* redundant: every stage executes twice and the outputs are compared
  entrywise (classic DMR); a mismatch triggers re-execution.
* checksum: transforms carry the F-vector invariant F.NTT(a) = sum(a);
  additions and the rescale fix check flag additivity; single-source base
  conversions check the coefficient-sum congruence; products (pointwise and
  the keyswitch inner product, each one multiply per slot) and the
  automorphism recompute-and-compare, which at desk sizes costs less than
  any projection that re-reads the operands.

Flags are computed from the caller's pristine buffers ("reloaded" data),
so a flip in a stage's working copy is visible to its own check. The
standalone checked_pointwise below keeps the randomized-projection
construction (certain detection of a corrupted product slot since the
moduli are prime).
"""

import weakref
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import backends, stages
from .errors import ConfigurationError, UnrecoverableFaultError
from .ring import Domain, RnsPoly, bitrev_permutation, ntt_limbs, intt_limbs


class ProtectionMode(str, Enum):
    NONE = "none"
    REDUNDANT = "redundant"
    CHECKSUM = "checksum"


@dataclass(frozen=True)
class GuardEvent:
    """One guard observation, appended to the campaign record stream."""

    stage: str
    kind: str
    detail: str
    action: str            # "passed" never recorded; "retried" | "unrecoverable"
    flags: tuple = ()      # (flag_in, flag_out) pairs when applicable


@dataclass(frozen=True)
class ChecksumFlags:
    """Input/output integrity flag vectors (one entry per checked limb)."""

    flag_in: object
    flag_out: object

    @property
    def match(self) -> bool:
        return np.array_equal(np.asarray(self.flag_in, dtype=np.uint64),
                              np.asarray(self.flag_out, dtype=np.uint64))

    def as_ints(self):
        return ([int(x) for x in self.flag_in],
                [int(x) for x in self.flag_out])


def build_checksum_vector(prime) -> np.ndarray:
    """The unique row vector F with F.W = all-ones for this prime's
    transform, in the transform's output layout.

    Closed form: F[i] = -2 n^{-1} (psi^{-(2 brv(i)+1)} - 1)^{-1} mod q,
    verified against the defining property on random vectors before use.
    """
    q, n = prime.q, prime.n
    perm = bitrev_permutation(n)
    psi_inv = pow(prime.psi, -1, q)
    f = np.zeros(n, dtype=np.uint64)
    for i in range(n):
        j = int(perm[i])
        denom = (pow(psi_inv, 2 * j + 1, q) - 1) % q
        f[i] = (q - 2) * prime.n_inv % q * pow(denom, -1, q) % q
    rng = np.random.default_rng(q % (1 << 32))
    for _ in range(3):
        a = rng.integers(0, q, n, dtype=np.uint64)
        v = a.copy()
        backends.active.ntt_forward(v, q, prime.wtab, prime.wtab_sh)
        if backends.active.weighted_sum_mod(v, f, q) != backends.active.sum_mod(a, q):
            raise AssertionError(f"checksum vector failed verification mod {q}")
    return f


class ChecksumContext:
    """Per-prime verification vectors; immutable and shared."""

    _cache: dict = {}
    _mat_cache: dict = {}
    _qs_cache: dict = {}

    @classmethod
    def vector(cls, prime) -> np.ndarray:
        key = (prime.q, prime.n)
        f = cls._cache.get(key)
        if f is None:
            f = cls._cache[key] = build_checksum_vector(prime)
        return f

    @classmethod
    def matrix(cls, primes) -> np.ndarray:
        key = tuple(p.q for p in primes) + (primes[0].n,)
        m = cls._mat_cache.get(key)
        if m is None:
            m = cls._mat_cache[key] = np.stack([cls.vector(p) for p in primes])
        return m

    @classmethod
    def moduli_array(cls, moduli) -> np.ndarray:
        arr = cls._qs_cache.get(moduli)
        if arr is None:
            arr = cls._qs_cache[moduli] = np.array(moduli, dtype=np.uint64)
        return arr


def _outputs_equal(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


class DmrRunner(stages.StageRunner):
    """Every stage runs twice; mismatch means Detected plus a clean re-run."""

    def __init__(self, injector=None, observer=None, retry_limit=1):
        super().__init__(injector, observer)
        if retry_limit < 1:
            raise ConfigurationError("retry limit must be >= 1")
        self.retry_limit = retry_limit

    def _protected(self, stage):
        first = self._raw(stage)
        second = stage.run(None)
        if _outputs_equal(first, second):
            return first
        for _ in range(self.retry_limit):
            redo_a = stage.run(None)
            redo_b = stage.run(None)
            if _outputs_equal(redo_a, redo_b):
                self.guard_events.append(GuardEvent(
                    stage.path, stage.kind, "copy-mismatch", "retried"))
                return redo_a
        self.guard_events.append(GuardEvent(
            stage.path, stage.kind, "copy-mismatch", "unrecoverable"))
        raise UnrecoverableFaultError(
            f"persistent copy mismatch at {stage.path}"
        )


class ChecksumRunner(stages.StageRunner):
    """Checksum/projection verification per stage kind, with recomputation
    for the kinds that admit no cheap linear invariant."""

    def __init__(self, injector=None, observer=None, retry_limit=1, rng=None):
        super().__init__(injector, observer)
        if retry_limit < 1:
            raise ConfigurationError("retry limit must be >= 1")
        self.retry_limit = retry_limit
        self.rng = rng if rng is not None else np.random.default_rng(0)
        # per-buffer plain-sum memo: a stage's output flag doubles as the
        # next stage's input flag when the very same (immutable) array flows
        # through; weakly keyed by object identity so buffers still free
        self._sums = {}

    def _row_sums(self, arr, moduli):
        key = id(arr)
        hit = self._sums.get(key)
        if hit is not None and hit[0]() is arr and hit[2] == moduli:
            return hit[1]
        qs = ChecksumContext.moduli_array(moduli)
        out = np.empty(len(moduli), dtype=np.uint64)
        backends.active.sum_rows_mod(arr, qs, out)
        self._sums[key] = (weakref.ref(arr), out, moduli)
        return out

    def _protected(self, stage):
        # automorphism admits no cheap linear invariant; products (pointwise
        # and the keyswitch inner product) cost one multiply per slot, so at
        # desk sizes recomputing them is cheaper than any projection that
        # re-reads the operands
        if stage.kind == stages.PMUL:
            return self._checked_product(stage)
        if stage.kind in (stages.AUTOMORPHISM, stages.INNER_PRODUCT):
            return self._recompute(stage)
        outs = self._raw(stage)
        flags = self._flags(stage, outs)
        if flags.match:
            return outs
        for _ in range(self.retry_limit):
            outs = stage.run(None)
            redo = self._flags(stage, outs)
            if redo.match:
                self.guard_events.append(GuardEvent(
                    stage.path, stage.kind, "flag-mismatch", "retried",
                    (flags.flag_in, flags.flag_out)))
                return outs
        self.guard_events.append(GuardEvent(
            stage.path, stage.kind, "flag-mismatch", "unrecoverable",
            (flags.flag_in, flags.flag_out)))
        raise UnrecoverableFaultError(f"persistent flag mismatch at {stage.path}")

    def _checked_product(self, stage):
        """Allocation-free recompute-and-compare for pointwise products."""
        bk = backends.active
        a = stage.operands[0].data
        b = stage.operands[1].data
        qs = ChecksumContext.moduli_array(stage.operands[0].moduli)
        outs = self._raw(stage)
        if bk.mul_check_rows(a, b, outs[0], qs):
            return outs
        for _ in range(self.retry_limit):
            outs = stage.run(None)
            if bk.mul_check_rows(a, b, outs[0], qs):
                self.guard_events.append(GuardEvent(
                    stage.path, stage.kind, "recompute-mismatch", "retried"))
                return outs
        self.guard_events.append(GuardEvent(
            stage.path, stage.kind, "recompute-mismatch", "unrecoverable"))
        raise UnrecoverableFaultError(
            f"persistent product mismatch at {stage.path}"
        )

    def _recompute(self, stage):
        first = self._raw(stage)
        second = stage.run(None)
        if _outputs_equal(first, second):
            return first
        for _ in range(self.retry_limit):
            redo_a = stage.run(None)
            redo_b = stage.run(None)
            if _outputs_equal(redo_a, redo_b):
                self.guard_events.append(GuardEvent(
                    stage.path, stage.kind, "recompute-mismatch", "retried"))
                return redo_a
        self.guard_events.append(GuardEvent(
            stage.path, stage.kind, "recompute-mismatch", "unrecoverable"))
        raise UnrecoverableFaultError(
            f"persistent recompute mismatch at {stage.path}"
        )

    # ------------------------------------------------------------- verifiers

    def _flags(self, stage, outs) -> ChecksumFlags:
        kind = stage.kind
        if kind == stages.NTT:
            return self._transform_flags(stage, outs, forward=True)
        if kind == stages.INTT:
            return self._transform_flags(stage, outs, forward=False)
        if kind == stages.PADD:
            return self._add_flags(stage, outs)
        if kind == stages.BCONV:
            return self._bconv_flags(stage, outs)
        if kind == stages.RESCALE_FIX:
            return self._rescale_fix_flags(stage, outs)
        raise ConfigurationError(f"no checksum recipe for stage kind {kind}")

    def _bconv_flags(self, stage, outs):
        """Single-source conversions are elementwise congruences, so the
        plain coefficient sum carries over: sum(out_t) = sum(in) mod q_t
        (with a lifted-value correction for the centered flavor)."""
        bk = backends.active
        fin, fout = [], []
        if stage.meta["flavor"] == "modup":
            d = stage.operands[0].data
            for j, block in enumerate(outs):
                qs = ChecksumContext.moduli_array(stage.out_moduli[j])
                f_in = np.empty(len(qs), dtype=np.uint64)
                bk.bconv_flag_rows(d[j], qs, f_in)
                fin.append(f_in)
                fout.append(self._row_sums(block, stage.out_moduli[j]))
        else:
            for oi, op in enumerate(stage.operands):
                qs = ChecksumContext.moduli_array(stage.out_moduli[oi])
                f_in = np.empty(len(qs), dtype=np.uint64)
                bk.centered_flag_rows(op.data[0], op.moduli[0], qs, f_in)
                fin.append(f_in)
                fout.append(self._row_sums(outs[oi], stage.out_moduli[oi]))
        return ChecksumFlags(np.concatenate(fin), np.concatenate(fout))

    def _transform_flags(self, stage, outs, forward):
        bk = backends.active
        fin, fout = [], []
        primes_per_poly = stage.meta["primes"]
        for pi in range(len(outs)):
            src = stage.operands[pi].data
            primes = primes_per_poly[pi]
            moduli = stage.operands[pi].moduli
            qs = ChecksumContext.moduli_array(moduli)
            fmat = ChecksumContext.matrix(primes)
            weighted = np.empty(len(primes), dtype=np.uint64)
            if forward:
                bk.weighted_rows_mod(outs[pi], fmat, qs, weighted)
                fin.append(self._row_sums(src, moduli))
                fout.append(weighted)
            else:
                bk.weighted_rows_mod(src, fmat, qs, weighted)
                fin.append(weighted)
                fout.append(self._row_sums(outs[pi], moduli))
        if len(fin) == 1:
            return ChecksumFlags(fin[0], fout[0])
        return ChecksumFlags(np.concatenate(fin), np.concatenate(fout))

    def _add_flags(self, stage, outs):
        a = stage.operands[0].data
        b = stage.operands[1].data
        moduli = stage.operands[0].moduli
        (c,) = outs
        qs = ChecksumContext.moduli_array(moduli)
        sa = self._row_sums(a, moduli)
        sb = self._row_sums(b, moduli)
        sc = self._row_sums(c, moduli)
        return ChecksumFlags((sa + sb) % qs, sc)

    def _rescale_fix_flags(self, stage, outs):
        c = stage.operands[0].data
        delta = stage.operands[1].data
        moduli = stage.operands[0].moduli
        factors = stage.meta["factors"]
        (out,) = outs
        sc = self._row_sums(c, moduli)
        sd = self._row_sums(delta, moduli)
        so = self._row_sums(out, moduli)
        fin = np.array(
            [(int(x) + q - int(y)) % q * f % q
             for x, y, q, f in zip(sc, sd, moduli, factors)],
            dtype=np.uint64,
        )
        return ChecksumFlags(fin, so)


def make_runner(mode, injector=None, observer=None, guard_rng=None,
                retry_limit=1) -> stages.StageRunner:
    mode = ProtectionMode(mode)
    if mode is ProtectionMode.NONE:
        return stages.StageRunner(injector, observer)
    if mode is ProtectionMode.REDUNDANT:
        return DmrRunner(injector, observer, retry_limit)
    return ChecksumRunner(injector, observer, retry_limit, guard_rng)


# Standalone checked operations over single polynomials (the spec-level API,
# also used by the detection site sweeps).

def checked_transform(a: RnsPoly, direction: str, inject=None, retry_limit=1):
    """Transform with input/output flag verification.

    direction: "forward" | "inverse". inject optionally names one site as
    (operand, limb, coeff, bit) where operand is "a" or a 1-based round
    number. Returns (result, ChecksumFlags); raises UnrecoverableFaultError
    if the mismatch survives re-execution.
    """
    bk = backends.active
    forward = direction == "forward"
    if not forward and direction != "inverse":
        raise ConfigurationError(f"unknown transform direction {direction!r}")
    want = Domain.COEFFICIENT if forward else Domain.EVALUATION
    if a.domain is not want:
        raise ConfigurationError(f"{direction} transform expects {want.value} domain")
    primes = a.basis.primes

    def execute(with_fault):
        res = a.res.copy()
        kern = None
        if with_fault and inject is not None:
            operand, limb, coeff, bit = inject
            if operand == "a":
                res[limb, coeff] ^= np.uint64(1 << bit)
            else:
                kern = (limb, int(operand), coeff, 1 << bit)
        if forward:
            ntt_limbs(res, primes, kern)
        else:
            intt_limbs(res, primes, kern)
        return res

    def flags_for(res):
        fin, fout = [], []
        for i, p in enumerate(primes):
            f = ChecksumContext.vector(p)
            if forward:
                fin.append(bk.sum_mod(a.res[i], p.q))
                fout.append(bk.weighted_sum_mod(res[i], f, p.q))
            else:
                fin.append(bk.weighted_sum_mod(a.res[i], f, p.q))
                fout.append(bk.sum_mod(res[i], p.q))
        return ChecksumFlags(tuple(fin), tuple(fout))

    res = execute(True)
    flags = flags_for(res)
    if flags.match:
        out_domain = Domain.EVALUATION if forward else Domain.COEFFICIENT
        return RnsPoly(res, out_domain, a.basis), flags
    for _ in range(retry_limit):
        res = execute(False)
        redo = flags_for(res)
        if redo.match:
            out_domain = Domain.EVALUATION if forward else Domain.COEFFICIENT
            return RnsPoly(res, out_domain, a.basis), flags
    raise UnrecoverableFaultError("transform flag mismatch persisted")


def checked_linear(a: RnsPoly, b: RnsPoly, flip=None):
    """Addition with the flag-additivity check; flip = (limb, coeff, bit)
    corrupts one output word before verification (for sweeps)."""
    bk = backends.active
    if a.basis.key != b.basis.key or a.domain is not b.domain:
        raise ConfigurationError("checked_linear operands must match")
    moduli = a.basis.moduli
    out = np.empty_like(a.res)
    for i, q in enumerate(moduli):
        out[i] = (a.res[i] + b.res[i]) % np.uint64(q)
    if flip is not None:
        limb, coeff, bit = flip
        out[limb, coeff] ^= np.uint64(1 << bit)
    fin = tuple(
        (bk.sum_mod(a.res[i], q) + bk.sum_mod(b.res[i], q)) % q
        for i, q in enumerate(moduli)
    )
    fout = tuple(bk.sum_mod(out[i], q) for i, q in enumerate(moduli))
    return RnsPoly(out, a.domain, a.basis), ChecksumFlags(fin, fout)


def checked_pointwise(a: RnsPoly, b: RnsPoly, rng, flip=None):
    """Pointwise product with randomized-projection verification:
    sum r_i c_i = sum (r_i a_i) b_i with per-call r_i in [1, q)."""
    bk = backends.active
    if a.basis.key != b.basis.key:
        raise ConfigurationError("checked_pointwise operands must match")
    moduli = a.basis.moduli
    n = a.basis.n
    out = np.empty_like(a.res)
    for i, q in enumerate(moduli):
        bk.mul_mod(a.res[i], b.res[i], q, out[i])
    if flip is not None:
        limb, coeff, bit = flip
        out[limb, coeff] ^= np.uint64(1 << bit)
    fin, fout = [], []
    for i, q in enumerate(moduli):
        r = rng.integers(1, q, n, dtype=np.uint64)
        fin.append(bk.projected_product_sum(r, a.res[i], b.res[i], q))
        fout.append(bk.weighted_sum_mod(out[i], r, q))
    return RnsPoly(out, a.domain, a.basis), ChecksumFlags(tuple(fin), tuple(fout))


def recompute_guard(fn, *args):
    """Operator-granular DMR for stages without a linear invariant: run the
    callable twice and compare entrywise. Returns (result, match)."""
    first = fn(*args)
    second = fn(*args)
    if isinstance(first, np.ndarray):
        return first, np.array_equal(first, second)
    return first, _outputs_equal(first, second)
