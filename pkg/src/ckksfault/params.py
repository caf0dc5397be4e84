"""CKKS parameter sets: modulus chains, presets, and the config-file schema.

A parameter set carries a base prime, L rescale primes, and one special prime
used only inside keyswitch. Desk presets (DESK1-4) run campaigns in seconds
and are cryptographically insecure on purpose; PAPER-SET1-4 mirror the
full-scale configurations and are only intended for long runs.
"""

import json
import math

from .errors import ConfigurationError
from .ring import RnsBasis, find_ntt_primes, get_prime

# Rough 128-bit-security ceilings for log2(Q*P) by ring degree
# (homomorphicencryption.org standard table, ternary secret).
_SECURITY_FLOOR = {
    1024: 27, 2048: 54, 4096: 109, 8192: 218, 16384: 438, 32768: 881,
}


class CkksParams:
    """Immutable parameter set with lazily built per-level RNS bases."""

    def __init__(self, name, n, depth, delta_bits, base_bits, rescale_bits,
                 special_bits, noise_stddev=3.2, max_rescale_drift_bits=1.0):
        if isinstance(rescale_bits, int):
            rescale_bits = (rescale_bits,) * depth
        rescale_bits = tuple(rescale_bits)
        if len(rescale_bits) != depth:
            raise ConfigurationError(
                f"need {depth} rescale prime sizes, got {len(rescale_bits)}"
            )
        self.name = name
        self.n = n
        self.depth = depth
        self.delta_bits = delta_bits
        self.base_bits = base_bits
        self.rescale_bits = rescale_bits
        self.special_bits = special_bits
        self.noise_stddev = float(noise_stddev)
        self.max_rescale_drift_bits = float(max_rescale_drift_bits)

        sizes = [base_bits, *rescale_bits, special_bits]
        chosen = []
        pool = {}
        for bits in sizes:
            if bits not in pool:
                pool[bits] = iter(find_ntt_primes(bits, sizes.count(bits), n))
            chosen.append(next(pool[bits]))
        self.chain_moduli = tuple(chosen[:-1])
        self.special_modulus = chosen[-1]

        for q, bits in zip(self.chain_moduli[1:], rescale_bits):
            drift = abs(math.log2(q) - delta_bits)
            if drift > self.max_rescale_drift_bits:
                raise ConfigurationError(
                    f"rescale prime {q} is 2^{math.log2(q):.2f}, more than "
                    f"{self.max_rescale_drift_bits} bits away from delta"
                )

        self._bases = {}
        self._ext_bases = {}

    @property
    def delta(self) -> float:
        return float(1 << self.delta_bits)

    @property
    def max_level(self) -> int:
        return self.depth

    @property
    def slots(self) -> int:
        return self.n // 2

    def chain_primes(self, level):
        return tuple(get_prime(q, self.n) for q in self.chain_moduli[: level + 1])

    @property
    def special_prime(self):
        return get_prime(self.special_modulus, self.n)

    def basis(self, level) -> RnsBasis:
        """RNS basis {q_0 .. q_level}."""
        if not 0 <= level <= self.depth:
            raise ConfigurationError(f"level {level} outside [0, {self.depth}]")
        if level not in self._bases:
            self._bases[level] = RnsBasis(self.chain_primes(level))
        return self._bases[level]

    def ext_basis(self, level) -> RnsBasis:
        """Extended basis {q_0 .. q_level, P} used inside keyswitch."""
        if level not in self._ext_bases:
            self._ext_bases[level] = RnsBasis(
                self.chain_primes(level) + (self.special_prime,)
            )
        return self._ext_bases[level]

    def log_q(self, level) -> float:
        return sum(math.log2(q) for q in self.chain_moduli[: level + 1])

    @property
    def is_insecure(self) -> bool:
        total = self.log_q(self.depth) + math.log2(self.special_modulus)
        floor = _SECURITY_FLOOR.get(self.n, 0)
        return total > floor

    def describe(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "depth": self.depth,
            "delta_bits": self.delta_bits,
            "base_bits": self.base_bits,
            "rescale_bits": list(self.rescale_bits),
            "special_bits": self.special_bits,
            "noise_stddev": self.noise_stddev,
            "max_rescale_drift_bits": self.max_rescale_drift_bits,
            "chain_moduli": [str(q) for q in self.chain_moduli],
            "special_modulus": str(self.special_modulus),
            "log2_q": round(self.log_q(self.depth), 2),
            "slots": self.slots,
            "insecure": self.is_insecure,
        }

    def __repr__(self):
        return (
            f"CkksParams({self.name}, n={self.n}, L={self.depth}, "
            f"logQ={self.log_q(self.depth):.0f})"
        )


_PRESET_SPECS = {
    # Desk scale: campaigns in seconds, same logQ-vs-error phenomenon.
    "DESK1": dict(n=2048, depth=2, delta_bits=30, base_bits=50,
                  rescale_bits=30, special_bits=50),
    "DESK2": dict(n=2048, depth=4, delta_bits=30, base_bits=50,
                  rescale_bits=30, special_bits=50),
    "DESK3": dict(n=2048, depth=6, delta_bits=30, base_bits=50,
                  rescale_bits=30, special_bits=50),
    "DESK4": dict(n=2048, depth=8, delta_bits=30, base_bits=50,
                  rescale_bits=30, special_bits=50),
    # Full-scale mirrors: logQ = 180/280/380/480 at N = 32768, delta 2^50.
    "PAPER-SET1": dict(n=32768, depth=2, delta_bits=50, base_bits=60,
                       rescale_bits=(60, 60), special_bits=60,
                       max_rescale_drift_bits=11),
    "PAPER-SET2": dict(n=32768, depth=4, delta_bits=50, base_bits=60,
                       rescale_bits=(55, 55, 55, 55), special_bits=60,
                       max_rescale_drift_bits=6),
    "PAPER-SET3": dict(n=32768, depth=6, delta_bits=50, base_bits=60,
                       rescale_bits=(53, 53, 54, 53, 53, 54), special_bits=60,
                       max_rescale_drift_bits=5),
    "PAPER-SET4": dict(n=32768, depth=8, delta_bits=50, base_bits=60,
                       rescale_bits=(52, 53, 52, 53, 52, 53, 52, 53),
                       special_bits=60, max_rescale_drift_bits=4),
}

_preset_cache: dict = {}

PRESET_NAMES = tuple(_PRESET_SPECS)


def get_preset(name: str) -> CkksParams:
    key = name.upper()
    if key not in _PRESET_SPECS:
        raise ConfigurationError(
            f"unknown preset {name!r}; available: {', '.join(_PRESET_SPECS)}"
        )
    if key not in _preset_cache:
        _preset_cache[key] = CkksParams(name=key, **_PRESET_SPECS[key])
    return _preset_cache[key]


_CONFIG_KEYS = {
    "name": str,
    "n": int,
    "depth": int,
    "delta_bits": int,
    "base_bits": int,
    "rescale_bits": (int, list),
    "special_bits": int,
    "noise_stddev": (int, float),
    "max_rescale_drift_bits": (int, float),
}
_REQUIRED_KEYS = ("name", "n", "depth", "delta_bits", "base_bits",
                  "rescale_bits", "special_bits")


def load_params_file(path) -> CkksParams:
    """Load a parameter set from a JSON key-value file (schema in README)."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read params file {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"params file {path} must hold a JSON object")
    for key in _REQUIRED_KEYS:
        if key not in raw:
            raise ConfigurationError(f"params file {path} is missing {key!r}")
    kwargs = {}
    for key, value in raw.items():
        if key not in _CONFIG_KEYS:
            raise ConfigurationError(f"unknown params key {key!r} in {path}")
        expected = _CONFIG_KEYS[key]
        if not isinstance(value, expected):
            raise ConfigurationError(f"params key {key!r} has the wrong type")
        if key == "rescale_bits" and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return CkksParams(**kwargs)


def resolve_params(preset=None, params_file=None) -> CkksParams:
    if (preset is None) == (params_file is None):
        raise ConfigurationError("give exactly one of preset / params file")
    return get_preset(preset) if preset else load_params_file(params_file)


INSECURITY_WARNING = (
    "WARNING: parameter set {name} is NOT cryptographically secure "
    "(N={n}, logQP={logqp:.0f}). It exists to study reliability, not to "
    "protect data."
)


def insecurity_warning(params: CkksParams):
    """Warning line for insecure sets, or None."""
    if not params.is_insecure:
        return None
    return INSECURITY_WARNING.format(
        name=params.name,
        n=params.n,
        logqp=params.log_q(params.depth) + math.log2(params.special_modulus),
    )
