"""Checksum construction, checked operations, DMR, and retry behavior."""

import numpy as np
import pytest

from ckksfault import backends, ckks, guard, stages
from ckksfault.errors import ConfigurationError, UnrecoverableFaultError
from ckksfault.guard import (
    ChecksumRunner,
    DmrRunner,
    ProtectionMode,
    build_checksum_vector,
    checked_linear,
    checked_pointwise,
    checked_transform,
    make_runner,
    recompute_guard,
)
from ckksfault.ring import Domain, RnsBasis, RnsPoly, find_ntt_primes, get_prime


def _rand_poly(basis, rng, domain=Domain.COEFFICIENT):
    res = np.stack([
        rng.integers(0, p.q, basis.n, dtype=np.uint64) for p in basis.primes
    ])
    return RnsPoly(res, domain, basis)


# ------------------------------------------------------- checksum vector F


def test_checksum_vector_defining_property_n256(rng):
    q = find_ntt_primes(30, 1, 256)[0]
    pm = get_prime(q, 256)
    f = build_checksum_vector(pm)
    bk = backends.active
    for _ in range(100):
        a = rng.integers(0, q, 256, dtype=np.uint64)
        v = a.copy()
        bk.ntt_forward(v, q, pm.wtab, pm.wtab_sh)
        assert bk.weighted_sum_mod(v, f, q) == bk.sum_mod(a, q)


def test_checksum_vector_matrix_inverse_oracle():
    # n=4, q=17, psi=2: solve F W = 1 by direct O(n^2) matrix inversion
    q, n, psi = 17, 4, 2
    pm = get_prime(q, n, psi=2)
    from ckksfault.ring import bitrev_permutation

    perm = bitrev_permutation(n)
    # actual transform matrix rows (output i = eval at psi^(2 brv(i)+1))
    w_mat = [[pow(psi, (2 * int(perm[i]) + 1) * j, q) for j in range(n)]
             for i in range(n)]
    # Gaussian elimination mod q to solve F W = ones <=> W^T F^T = 1^T
    aug = [[w_mat[r][c] for r in range(n)] + [1] for c in range(n)]
    for col in range(n):
        piv = next(r for r in range(col, n) if aug[r][col] % q)
        aug[col], aug[piv] = aug[piv], aug[col]
        inv = pow(aug[col][col], -1, q)
        aug[col] = [v * inv % q for v in aug[col]]
        for r in range(n):
            if r != col and aug[r][col]:
                fac = aug[r][col]
                aug[r] = [(a - fac * b) % q for a, b in zip(aug[r], aug[col])]
    oracle_f = [aug[r][n] for r in range(n)]
    assert oracle_f == [int(v) for v in build_checksum_vector(pm)]


def test_checksum_vector_cross_method_probe():
    # independent construction: F_j = sum(INTT(e_j)); must agree entrywise
    q = find_ntt_primes(30, 1, 64)[0]
    pm = get_prime(q, 64)
    bk = backends.active
    probe = np.zeros(64, dtype=np.uint64)
    for j in range(64):
        e = np.zeros(64, dtype=np.uint64)
        e[j] = 1
        bk.ntt_inverse(e, q, pm.iwtab, pm.iwtab_sh, pm.n_inv, pm.n_inv_sh)
        probe[j] = bk.sum_mod(e, q)
    assert np.array_equal(probe, build_checksum_vector(pm))


# ------------------------------------------------------ checked operations


@pytest.fixture(scope="module")
def basis64():
    qs = find_ntt_primes(30, 2, 64)
    return RnsBasis(tuple(get_prime(q, 64) for q in qs))


def test_checked_transform_zero(basis64):
    z = RnsPoly.zeros(basis64)
    out, flags = checked_transform(z, "forward")
    assert flags.match and set(flags.flag_in) == {0}


def test_checked_transform_fault_free_random(basis64, rng):
    for _ in range(50):
        a = _rand_poly(basis64, rng)
        out, flags = checked_transform(a, "forward")
        assert flags.match
        back, iflags = checked_transform(out, "inverse")
        assert iflags.match
        assert np.array_equal(back.res, a.res)


def test_checked_transform_detects_input_flip(basis64, rng):
    a = _rand_poly(basis64, rng)
    detected = 0
    trials = 0
    for coeff in range(0, 64, 7):
        for bit in (0, 17, 45, 61):
            trials += 1
            try:
                checked_transform(a, "forward", inject=("a", 0, coeff, bit),
                                  retry_limit=0)
            except (UnrecoverableFaultError, ConfigurationError):
                detected += 1
    assert detected == trials  # input flips shift the plain sum, always caught


def test_checked_transform_detects_butterfly_flips(basis64, rng):
    a = _rand_poly(basis64, rng)
    detected = 0
    trials = 0
    for rnd in range(1, 7):
        for coeff in (0, 31, 63):
            for bit in (3, 29, 60):
                trials += 1
                out, flags = checked_transform(
                    a, "forward", inject=(str(rnd), 0, coeff, bit))
                if not flags.match:
                    detected += 1
    assert detected / trials >= 0.999


def test_checked_transform_retry_restores(basis64, rng):
    a = _rand_poly(basis64, rng)
    out, flags = checked_transform(a, "forward", inject=("a", 1, 5, 40))
    assert not flags.match  # mismatch reported, result re-executed clean
    clean, _ = checked_transform(a, "forward")
    assert np.array_equal(out.res, clean.res)


def test_checked_linear(basis64, rng):
    a = _rand_poly(basis64, rng)
    b = _rand_poly(basis64, rng)
    zero = RnsPoly.zeros(basis64)
    _, zflags = checked_linear(zero, zero)
    assert zflags.match and set(zflags.flag_out) == {0}
    _, flags = checked_linear(a, b)
    assert flags.match
    # any single flipped output coefficient shifts the sum: always detected
    for limb in range(2):
        for bit in (0, 30, 61):
            _, bad = checked_linear(a, b, flip=(limb, 11, bit))
            assert not bad.match


def test_checked_pointwise(basis64, rng):
    a = _rand_poly(basis64, rng, Domain.EVALUATION)
    b = _rand_poly(basis64, rng, Domain.EVALUATION)
    zero = RnsPoly.zeros(basis64, Domain.EVALUATION)
    _, zflags = checked_pointwise(zero, b, np.random.default_rng(1))
    assert zflags.match and set(zflags.flag_out) == {0}
    for trial in range(50):
        _, flags = checked_pointwise(a, b, np.random.default_rng(trial))
        assert flags.match
    # single flipped product slot: r_i * delta != 0 mod prime q, certain
    for limb in range(2):
        for bit in (0, 30, 61):
            _, bad = checked_pointwise(a, b, np.random.default_rng(9),
                                       flip=(limb, 23, bit))
            assert not bad.match


def test_recompute_guard(basis64, rng):
    a = _rand_poly(basis64, rng)
    calls = {"n": 0}

    def flaky():
        calls["n"] += 1
        out = a.res.copy()
        if calls["n"] == 1:
            out[0, 0] ^= 1 << 13
        return out

    _, ok = recompute_guard(lambda: a.res.copy())
    assert ok
    _, bad = recompute_guard(flaky)
    assert not bad
    for _ in range(100):
        _, ok = recompute_guard(lambda: a.res.copy())
        assert ok


# ----------------------------------------------------------- stage runners


def _add_stage(basis, rng, path="t/add"):
    a = np.stack([rng.integers(0, p.q, basis.n, dtype=np.uint64)
                  for p in basis.primes])
    b = np.stack([rng.integers(0, p.q, basis.n, dtype=np.uint64)
                  for p in basis.primes])
    return stages.make_pointwise_add_stage(path, "a", a, "b", b, basis.moduli)


def test_dmr_passes_fault_free(basis64, rng):
    runner = DmrRunner()
    stage = _add_stage(basis64, rng)
    runner.execute(stage)
    assert runner.guard_events == []


def test_dmr_detects_single_copy_fault(basis64, rng):
    from ckksfault.inject import FaultSite, Injector

    stage = _add_stage(basis64, rng)
    site = FaultSite("t", "t/add", "a", 0, 3, 45)
    runner = DmrRunner(injector=Injector(site))
    out = runner.execute(stage)
    assert len(runner.guard_events) == 1
    assert runner.guard_events[0].action == "retried"
    clean = stage.run(None)
    assert np.array_equal(out[0], clean[0])


def test_unrecoverable_after_retries(basis64, rng):
    calls = {"n": 0}
    a = np.stack([rng.integers(0, p.q, basis64.n, dtype=np.uint64)
                  for p in basis64.primes])

    def nondeterministic_run(inject=None):
        calls["n"] += 1
        out = a.copy()
        out[0, 0] = calls["n"]  # different every execution
        return (out,)

    stage = stages.Stage(
        "t/bad", stages.PADD,
        (stages.Operand("a", basis64.moduli, a.shape, a),
         stages.Operand("b", basis64.moduli, a.shape, a)),
        nondeterministic_run, out_moduli=(basis64.moduli,))
    runner = DmrRunner(retry_limit=1)
    with pytest.raises(UnrecoverableFaultError):
        runner.execute(stage)
    assert runner.guard_events[-1].action == "unrecoverable"


def test_checksum_runner_detects_each_kind(desk1, desk1_keys, rng):
    # end to end: one fault in every stage kind of a ct-ct mult is caught
    from ckksfault.campaign import enumerate_sites
    from ckksfault.inject import Injector
    from ckksfault.workloads import make_workload

    w = make_workload("vv", desk1)
    prep = w.prepare(desk1_keys, np.random.default_rng(3))
    space = enumerate_sites(w, desk1_keys, prep)
    by_kind = {}
    for stage_path, operand, limbs, coeffs in space.entries:
        key = stage_path.rsplit("/", 1)[-1]
        by_kind.setdefault(key, (stage_path, operand, limbs, coeffs))
    picked = list(by_kind.values())[:12]
    from ckksfault.inject import FaultSite

    for stage_path, operand, limbs, coeffs in picked:
        site = FaultSite("vv", stage_path, operand, 0, coeffs // 2, 50)
        runner = ChecksumRunner(injector=Injector(site),
                                rng=np.random.default_rng(5))
        ev = ckks.Evaluator(desk1_keys, runner)
        ct = w.run(ev, prep)
        out = ckks.decrypt_decode(ct, desk1_keys)
        assert len(runner.guard_events) >= 1, f"missed fault at {stage_path}"
        clean = ckks.decrypt_decode(
            w.run(ckks.Evaluator(desk1_keys), prep), desk1_keys)
        assert np.array_equal(out, clean)


def test_make_runner_modes():
    assert isinstance(make_runner("none"), stages.StageRunner)
    assert isinstance(make_runner(ProtectionMode.REDUNDANT), DmrRunner)
    assert isinstance(make_runner("checksum"), ChecksumRunner)
    with pytest.raises(ValueError):
        make_runner("bogus")
