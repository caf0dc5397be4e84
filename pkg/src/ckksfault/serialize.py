"""Versioned binary container for key material.

Layout: magic "CKFK" | u32 version | u64 header length | header JSON |
concatenated C-order uint64 array payloads in manifest order. Writing is
fully deterministic so fixed-seed keygen produces byte-identical files.
"""

import json
import struct

import numpy as np

from .ckks import KeyMaterial, KeySwitchKey
from .errors import ConfigurationError
from .params import CkksParams
from .ring import Domain, RnsPoly

MAGIC = b"CKFK"
VERSION = 1


def _collect_arrays(keys: KeyMaterial):
    arrays = {
        "secret_int": keys.secret_int.astype(np.int64),
        "secret": keys.secret.res,
        "pk0": keys.pk0,
        "pk1": keys.pk1,
    }
    for j, (k0, k1) in enumerate(zip(keys.relin.k0, keys.relin.k1)):
        arrays[f"relin.{j}.k0"] = k0
        arrays[f"relin.{j}.k1"] = k1
    for r, ksk in sorted(keys.rotation.items()):
        for j, (k0, k1) in enumerate(zip(ksk.k0, ksk.k1)):
            arrays[f"rot.{r}.{j}.k0"] = k0
            arrays[f"rot.{r}.{j}.k1"] = k1
    return arrays


def save_keys(path, keys: KeyMaterial):
    arrays = _collect_arrays(keys)
    manifest = [
        {"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)}
        for name, arr in arrays.items()
    ]
    params = keys.params
    header = {
        "version": VERSION,
        "params": {
            "name": params.name,
            "n": params.n,
            "depth": params.depth,
            "delta_bits": params.delta_bits,
            "base_bits": params.base_bits,
            "rescale_bits": list(params.rescale_bits),
            "special_bits": params.special_bits,
            "noise_stddev": params.noise_stddev,
            "max_rescale_drift_bits": params.max_rescale_drift_bits,
        },
        "chain_moduli": [str(q) for q in params.chain_moduli],
        "special_modulus": str(params.special_modulus),
        "seed": keys.seed,
        "rotation_steps": sorted(keys.rotation),
        "digits": params.depth + 1,
        "manifest": manifest,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_keys(path) -> KeyMaterial:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ConfigurationError(f"{path}: not a key container")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ConfigurationError(f"{path}: unsupported container version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        arrays = {}
        for entry in header["manifest"]:
            shape = tuple(entry["shape"])
            dtype = np.dtype(entry["dtype"])
            count = int(np.prod(shape))
            raw = fh.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise ConfigurationError(f"{path}: truncated payload")
            arrays[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()

    params = CkksParams(**header["params"])
    if [str(q) for q in params.chain_moduli] != header["chain_moduli"]:
        raise ConfigurationError(
            f"{path}: stored modulus chain does not match the parameter set"
        )
    full = params.ext_basis(params.depth)
    digits = header["digits"]

    def build_ksk(prefix):
        k0 = [arrays[f"{prefix}.{j}.k0"] for j in range(digits)]
        k1 = [arrays[f"{prefix}.{j}.k1"] for j in range(digits)]
        return KeySwitchKey(k0, k1, full.moduli)

    rotation = {
        int(r): build_ksk(f"rot.{r}") for r in header["rotation_steps"]
    }
    return KeyMaterial(
        params=params,
        seed=header["seed"],
        secret_int=arrays["secret_int"],
        secret=RnsPoly(arrays["secret"], Domain.EVALUATION, full),
        pk0=arrays["pk0"],
        pk1=arrays["pk1"],
        relin=build_ksk("relin"),
        rotation=rotation,
    )
