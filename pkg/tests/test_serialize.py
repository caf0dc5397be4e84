"""Key container round-trips and determinism."""

import numpy as np
import pytest

from ckksfault import ckks
from ckksfault.errors import ConfigurationError
from ckksfault.serialize import load_keys, save_keys


def test_container_roundtrip(tmp_path, desk1, desk1_keys):
    path = tmp_path / "keys.bin"
    save_keys(path, desk1_keys)
    loaded = load_keys(path)
    assert np.array_equal(loaded.secret_int, desk1_keys.secret_int)
    assert np.array_equal(loaded.pk0, desk1_keys.pk0)
    assert sorted(loaded.rotation) == sorted(desk1_keys.rotation)
    # loaded keys decrypt what the originals encrypted
    m = np.linspace(-1, 1, desk1.slots)
    ct = ckks.encrypt(ckks.encode(m, desk1), desk1_keys,
                      np.random.default_rng(3))
    out = ckks.decrypt_decode(ct, loaded)
    assert np.abs(out - m).max() < 1e-3
    # and evaluate with the restored relin/rotation keys
    ev = ckks.Evaluator(loaded)
    sq = ckks.decrypt_decode(ev.mul(ct, ct), loaded)
    assert np.abs(sq - m * m).max() < 1e-3


def test_fixed_seed_keygen_byte_identical_files(tmp_path, desk1):
    a = ckks.keygen(desk1, seed=5, rot_steps=(1,))
    b = ckks.keygen(desk1, seed=5, rot_steps=(1,))
    pa, pb = tmp_path / "a.bin", tmp_path / "b.bin"
    save_keys(pa, a)
    save_keys(pb, b)
    assert pa.read_bytes() == pb.read_bytes()


def test_bad_container_rejected(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(ConfigurationError):
        load_keys(bad)
