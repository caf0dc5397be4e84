"""Canonical embedding between slot vectors and ring coefficients.

Slots are indexed along the orbit of 5 modulo 2n, so the Galois map
X -> X^(5^r) rotates the decoded vector by r positions. The embedding runs
over complex doubles via one length-n FFT; the resulting precision loss is
part of the measured noise floors.
"""

import numpy as np

_plan_cache: dict = {}


def _plan(n: int):
    plan = _plan_cache.get(n)
    if plan is None:
        half = n // 2
        two_n = 2 * n
        # odd exponent of the slot-j evaluation point: 5^j mod 2n
        exps = np.empty(half, dtype=np.int64)
        e = 1
        for j in range(half):
            exps[j] = e
            e = e * 5 % two_n
        slot_pos = (exps - 1) // 2          # index among the n odd exponents
        conj_pos = n - 1 - slot_pos         # exponent 2n - 5^j lives here
        i = np.arange(n)
        omega = np.exp(1j * np.pi * i / n)  # primitive 2n-th root powers
        plan = _plan_cache[n] = (slot_pos, conj_pos, omega)
    return plan


def embed_forward(coeffs: np.ndarray) -> np.ndarray:
    """Evaluate a real coefficient vector at the slot roots.

    Returns the n/2 complex slot values.
    """
    n = len(coeffs)
    slot_pos, _, omega = _plan(n)
    b = coeffs.astype(np.complex128) * omega
    evals = np.fft.ifft(b) * n          # index t holds the value at exponent 2t+1
    return evals[slot_pos]


def embed_inverse(slots: np.ndarray) -> np.ndarray:
    """Real coefficient vector whose embedding matches the given slots."""
    half = len(slots)
    n = 2 * half
    slot_pos, conj_pos, omega = _plan(n)
    evals = np.zeros(n, dtype=np.complex128)
    evals[slot_pos] = slots
    evals[conj_pos] = np.conj(slots)
    b = np.fft.fft(evals) / n
    return (b / omega).real
