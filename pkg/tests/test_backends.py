"""Cross-backend bit-equality, including corrupted-word paths, and the
selection mechanism."""

import os
import subprocess
import sys

import numpy as np
import pytest

from ckksfault import backends
from ckksfault.ring import find_ntt_primes, get_prime


@pytest.fixture(scope="module")
def both():
    avail = backends.available()
    if "compiled" not in avail:
        pytest.skip("compiled backend not built")
    return avail["python"], avail["compiled"]


def test_compiled_backend_is_active_by_default():
    # this environment builds the extension; default selection must prefer it
    assert backends.active.name == "compiled"


@pytest.mark.parametrize("n,bits", [(16, 30), (256, 50), (1024, 62 - 1)])
def test_transforms_bit_identical(both, n, bits, rng):
    py, cy = both
    q = find_ntt_primes(min(bits, 61), 1, n)[0]
    pm = get_prime(q, n)
    for _ in range(10):
        a = rng.integers(0, q, n, dtype=np.uint64)
        va, vb = a.copy(), a.copy()
        py.ntt_forward(va, q, pm.wtab, pm.wtab_sh)
        cy.ntt_forward(vb, q, pm.wtab, pm.wtab_sh)
        assert np.array_equal(va, vb)
        py.ntt_inverse(va, q, pm.iwtab, pm.iwtab_sh, pm.n_inv, pm.n_inv_sh)
        cy.ntt_inverse(vb, q, pm.iwtab, pm.iwtab_sh, pm.n_inv, pm.n_inv_sh)
        assert np.array_equal(va, vb)
        assert np.array_equal(va, a)


def test_injected_transforms_bit_identical(both, rng):
    py, cy = both
    q = find_ntt_primes(50, 1, 128)[0]
    pm = get_prime(q, 128)
    for trial in range(100):
        a = rng.integers(0, q, 128, dtype=np.uint64)
        rnd = int(rng.integers(1, 8))
        pos = int(rng.integers(0, 128))
        xor = 1 << int(rng.integers(0, 62))
        va, vb = a.copy(), a.copy()
        py.ntt_forward(va, q, pm.wtab, pm.wtab_sh, rnd, pos, xor)
        cy.ntt_forward(vb, q, pm.wtab, pm.wtab_sh, rnd, pos, xor)
        assert np.array_equal(va, vb)
        va2, vb2 = a.copy(), a.copy()
        py.ntt_inverse(va2, q, pm.iwtab, pm.iwtab_sh, pm.n_inv, pm.n_inv_sh,
                       rnd, pos, xor)
        cy.ntt_inverse(vb2, q, pm.iwtab, pm.iwtab_sh, pm.n_inv, pm.n_inv_sh,
                       rnd, pos, xor)
        assert np.array_equal(va2, vb2)


def test_pointwise_kernels_on_corrupted_words(both, rng):
    py, cy = both
    q = find_ntt_primes(50, 1, 64)[0]
    a = rng.integers(0, q, 64, dtype=np.uint64)
    b = rng.integers(0, q, 64, dtype=np.uint64)
    a[7] ^= np.uint64(1 << 61)  # out-of-range word
    for fn in ("mul_mod", "scalar_mul_mod"):
        oa = np.empty(64, dtype=np.uint64)
        ob = np.empty(64, dtype=np.uint64)
        if fn == "mul_mod":
            py.mul_mod(a, b, q, oa)
            cy.mul_mod(a, b, q, ob)
        else:
            py.scalar_mul_mod(a, 123456789, q, oa)
            cy.scalar_mul_mod(a, 123456789, q, ob)
        assert np.array_equal(oa, ob)
    acc_a = np.zeros(64, dtype=np.uint64)
    acc_b = np.zeros(64, dtype=np.uint64)
    py.mul_acc_mod(a, b, q, acc_a)
    cy.mul_acc_mod(a, b, q, acc_b)
    assert np.array_equal(acc_a, acc_b)
    b_sh = ((b.astype(object) << 64) // q).astype(np.uint64)
    py.mul_acc_mod_shoup(a, b, b_sh, q, acc_a)
    cy.mul_acc_mod_shoup(a, b, b_sh, q, acc_b)
    assert np.array_equal(acc_a, acc_b)
    assert py.sum_mod(a, q) == cy.sum_mod(a, q)
    assert py.weighted_sum_mod(a, b, q) == cy.weighted_sum_mod(a, b, q)


def test_env_override_selects_python_backend():
    code = (
        "import ckksfault, sys;"
        "sys.exit(0 if ckksfault.KERNEL_BACKEND == 'python' else 1)"
    )
    env = dict(os.environ, CKKSFAULT_BACKEND="python")
    assert subprocess.run([sys.executable, "-c", code], env=env).returncode == 0


def test_env_override_rejects_missing_compiled(tmp_path):
    # forcing 'compiled' succeeds here (it is built); sanity-check the value
    code = (
        "import ckksfault, sys;"
        "sys.exit(0 if ckksfault.KERNEL_BACKEND == 'compiled' else 1)"
    )
    env = dict(os.environ, CKKSFAULT_BACKEND="compiled")
    assert subprocess.run([sys.executable, "-c", code], env=env).returncode == 0


def test_python_backend_runs_ckks_end_to_end():
    code = """
import numpy as np
import ckksfault
assert ckksfault.KERNEL_BACKEND == 'python'
from ckksfault.params import get_preset
from ckksfault import ckks
params = get_preset('DESK1')
keys = ckks.keygen(params, seed=11)
m = np.linspace(-1, 1, params.slots)
ct = ckks.encrypt(ckks.encode(m, params), keys, np.random.default_rng(1))
ev = ckks.Evaluator(keys)
out = ckks.decrypt_decode(ev.mul(ct, ct), keys)
assert np.abs(out - m * m).max() < 1e-3
"""
    env = dict(os.environ, CKKSFAULT_BACKEND="python")
    proc = subprocess.run([sys.executable, "-c", code], env=env,
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
