"""Wall-clock benchmarks: protection-mode overhead and kernel backends.

Overhead timing covers the ciphertext computation only (no key generation,
no encryption, no decryption, no fault injection) and reports the median of
repeated runs normalized to the unprotected mode.
"""

import gc
import time

import numpy as np

from . import backends
from .campaign import CampaignSpec, stable_seed
from .ckks import Evaluator, keygen
from .errors import ConfigurationError
from .guard import make_runner
from .params import get_preset
from .ring import find_ntt_primes, get_prime

BENCH_VERSION = 1


def _median_ns(samples):
    return int(np.median(np.asarray(samples, dtype=np.int64)))


def overhead_bench(spec: CampaignSpec, modes=("none", "checksum", "redundant"),
                   repetitions=10) -> dict:
    """Median fault-free runtime per protection mode, normalized to none."""
    if repetitions < 10:
        raise ConfigurationError("overhead benchmarking needs >= 10 repetitions")
    params = get_preset(spec.preset) if isinstance(spec.preset, str) else spec.preset
    workload = spec.build_workload(params)
    keys = keygen(params, stable_seed(spec.master_seed, "keys"),
                  rot_steps=workload.rot_steps())
    prep = workload.prepare(
        keys,
        np.random.default_rng(np.random.SeedSequence(
            stable_seed(spec.master_seed, "data"))),
    )
    # warmup absorbs one-time table construction; timing rounds interleave
    # the modes so slow machine-load drift cancels out of the ratios
    samples = {str(mode): [] for mode in modes}
    for mode in modes:
        workload.run(Evaluator(keys, make_runner(
            mode, None, guard_rng=np.random.default_rng(0))), prep)
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        for rep in range(repetitions):
            for mode in modes:
                runner = make_runner(mode, None,
                                     guard_rng=np.random.default_rng(rep))
                ev = Evaluator(keys, runner)
                t0 = time.perf_counter_ns()
                workload.run(ev, prep)
                samples[str(mode)].append(time.perf_counter_ns() - t0)
            gc.collect()
    finally:
        if gc_was_enabled:
            gc.enable()
    results = {m: {"median_ns": _median_ns(v)} for m, v in samples.items()}
    if "none" in results:
        # normalize per interleaved round, then take the median ratio, so
        # slow drift in machine load cancels out
        base = np.asarray(samples["none"], dtype=np.float64)
        for mode, row in results.items():
            ratios = np.asarray(samples[mode], dtype=np.float64) / base
            row["normalized"] = float(np.median(ratios))
    return {
        "v": BENCH_VERSION,
        "kind": "overhead-bench",
        "workload": workload.id,
        "preset": params.name,
        "repetitions": repetitions,
        "modes": results,
    }


def kernel_bench(n=2048, bits=50, limb_reps=200) -> dict:
    """Compare the compiled and pure-Python kernel backends on the hot loops."""
    q = find_ntt_primes(bits, 1, n)[0]
    pm = get_prime(q, n)
    rng = np.random.default_rng(0)
    a = rng.integers(0, q, n, dtype=np.uint64)
    b = rng.integers(0, q, n, dtype=np.uint64)
    out = np.empty(n, dtype=np.uint64)
    table = {}
    for name, bk in backends.available().items():
        reps = limb_reps if bk.name == "compiled" else max(limb_reps // 20, 3)
        v = a.copy()
        t0 = time.perf_counter_ns()
        for _ in range(reps):
            bk.ntt_forward(v, q, pm.wtab, pm.wtab_sh)
            bk.ntt_inverse(v, q, pm.iwtab, pm.iwtab_sh, pm.n_inv, pm.n_inv_sh)
        ntt_ns = (time.perf_counter_ns() - t0) // (2 * reps)
        t0 = time.perf_counter_ns()
        for _ in range(reps):
            bk.mul_mod(a, b, q, out)
        mul_ns = (time.perf_counter_ns() - t0) // reps
        table[name] = {"ntt_ns": int(ntt_ns), "mul_mod_ns": int(mul_ns)}
    if "compiled" in table and "python" in table:
        table["speedup"] = {
            "ntt": table["python"]["ntt_ns"] / max(table["compiled"]["ntt_ns"], 1),
            "mul_mod": table["python"]["mul_mod_ns"]
            / max(table["compiled"]["mul_mod_ns"], 1),
        }
    return {
        "v": BENCH_VERSION,
        "kind": "kernel-bench",
        "n": n,
        "prime_bits": bits,
        "active_backend": backends.active.name,
        "backends": table,
    }
