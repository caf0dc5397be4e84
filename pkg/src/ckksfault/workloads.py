"""Ciphertext-level workloads: the four application kernels (vv, mv, rot,
house) and the single-operator microbenches driving the per-operator and
keyswitch-step campaigns.

Each workload fixes a seeded input generator, a plaintext-domain reference
over all n/2 slots (full-slot packing), and an encrypted pipeline built on
the evaluator. Inputs are prepared (encoded + encrypted) once per campaign;
runs never mutate them.
"""

import csv
from importlib import resources

import numpy as np

from .ckks import Ciphertext, Evaluator, KeyMaterial, encode, encrypt
from .errors import ConfigurationError, IngestionError
from .params import CkksParams

WORKLOAD_IDS = (
    "vv", "mv", "rot", "house",
    "op-ctpt-add", "op-ctct-add", "op-ctpt-mult", "op-ctct-mult", "op-rot",
    "ks-step-sweep",
)

# Offline-fit linear model over standardized California-Housing-format
# features (see data/housing_synthetic.csv; training is out of scope).
HOUSE_COLUMNS = (
    "MedInc", "HouseAge", "AveRooms", "AveBedrms",
    "Population", "AveOccup", "Latitude", "Longitude",
)
HOUSE_MU = np.array([
    3.984884, 26.567969, 5.396064, 1.084543,
    1443.394531, 3.024056, 37.388906, -119.280117,
])
HOUSE_SD = np.array([
    1.94535, 14.573099, 1.023773, 0.219307,
    851.193879, 0.7007, 2.722075, 2.967341,
])
HOUSE_W = np.array([
    0.81432, 0.143626, 0.102852, -0.064646,
    -0.02254, -0.131383, -0.532183, -0.529319,
])
HOUSE_B = 2.083031


def read_feature_csv(path=None, max_rows=None):
    """Ingest a California-Housing-format CSV into an (rows, 8) matrix.

    Raises IngestionError with the offending line number on malformed input.
    The bundled synthetic file is used when path is None.
    """
    if path is None:
        ref = resources.files("ckksfault.data") / "housing_synthetic.csv"
        text = ref.read_text()
    else:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise IngestionError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise IngestionError("empty feature file", line=1)
    reader = csv.reader(lines)
    header = next(reader)
    cols = [c.strip() for c in header]
    try:
        idx = [cols.index(c) for c in HOUSE_COLUMNS]
    except ValueError as exc:
        raise IngestionError(f"missing feature column: {exc}", line=1) from exc
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec or all(not f.strip() for f in rec):
            continue
        if max(idx) >= len(rec):
            raise IngestionError("too few fields", line=lineno)
        try:
            rows.append([float(rec[i]) for i in idx])
        except ValueError as exc:
            raise IngestionError(str(exc), line=lineno)
        if max_rows is not None and len(rows) >= max_rows:
            break
    if not rows:
        raise IngestionError("no data rows", line=2)
    return np.array(rows, dtype=np.float64)


class Workload:
    """Base: id, seeded input generation, plaintext reference, stage graph."""

    id = ""
    stage_filter = None

    def __init__(self, params: CkksParams):
        self.params = params

    def rot_steps(self):
        return ()

    def prepare(self, keys: KeyMaterial, rng) -> dict:
        raise NotImplementedError

    def run(self, ev: Evaluator, prep: dict) -> Ciphertext:
        raise NotImplementedError

    def reference(self, prep: dict) -> np.ndarray:
        return prep["ref"]

    def _encrypt_vec(self, keys, rng, values):
        return encrypt(encode(values, self.params), keys, rng)


class VectorVector(Workload):
    """Slotwise product of two encrypted vectors."""

    id = "vv"

    def prepare(self, keys, rng):
        h = self.params.slots
        m1 = rng.uniform(-1.0, 1.0, h)
        m2 = rng.uniform(-1.0, 1.0, h)
        return {
            "ref": m1 * m2,
            "m1": m1, "m2": m2,
            "ct1": self._encrypt_vec(keys, rng, m1),
            "ct2": self._encrypt_vec(keys, rng, m2),
        }

    def run(self, ev, prep):
        return ev.mul(prep["ct1"], prep["ct2"])


class MatrixVector(Workload):
    """Encrypted matrix-vector product by the rotate-and-accumulate diagonal
    method; the vector is tiled across all slots so rotations stay aligned."""

    id = "mv"

    def __init__(self, params, dim=64):
        super().__init__(params)
        if dim < 1 or self.params.slots % dim:
            raise ConfigurationError(
                f"matrix dimension {dim} must divide the slot count"
            )
        self.dim = dim

    def rot_steps(self):
        return tuple(range(1, self.dim))

    def prepare(self, keys, rng):
        d = self.dim
        h = self.params.slots
        mat = rng.uniform(-1.0, 1.0, (d, d))
        vec = rng.uniform(-1.0, 1.0, d)
        tiled = np.tile(vec, h // d)
        reps = h // d
        diags = []
        for k in range(d):
            diag = np.array([mat[i, (i + k) % d] for i in range(d)])
            diags.append(np.tile(diag, reps))
        return {
            "ref": np.tile(mat @ vec, reps),
            "ct": self._encrypt_vec(keys, rng, tiled),
            "diag_pts": [encode(dg, self.params) for dg in diags],
        }

    def run(self, ev, prep):
        acc = None
        for k, pt in enumerate(prep["diag_pts"]):
            term = ev.mul_plain(ev.rotate(prep["ct"], k), pt)
            acc = term if acc is None else ev.add(acc, term)
        return acc


class Rotation(Workload):
    """A single slot rotation."""

    id = "rot"

    def __init__(self, params, rot_step=3):
        super().__init__(params)
        self.rot_step = rot_step

    def rot_steps(self):
        return (self.rot_step,) if self.rot_step else ()

    def prepare(self, keys, rng):
        m = rng.uniform(-1.0, 1.0, self.params.slots)
        return {
            "ref": np.roll(m, -self.rot_step),
            "ct": self._encrypt_vec(keys, rng, m),
        }

    def run(self, ev, prep):
        return ev.rotate(prep["ct"], self.rot_step)


class HouseRegression(Workload):
    """Linear-regression inference y = w.x + b over encrypted standardized
    features with plaintext weights; one ciphertext per feature column."""

    id = "house"

    def __init__(self, params, csv_path=None):
        super().__init__(params)
        self.csv_path = csv_path

    def prepare(self, keys, rng):
        h = self.params.slots
        feats = read_feature_csv(self.csv_path, max_rows=h)
        std = (feats - HOUSE_MU) / HOUSE_SD
        batch = std.shape[0]
        cols = np.zeros((8, h))
        cols[:, :batch] = std.T
        ref = cols.T @ HOUSE_W + HOUSE_B
        cts = [self._encrypt_vec(keys, rng, cols[f]) for f in range(8)]
        weight_pts = [
            encode(np.full(h, HOUSE_W[f]), self.params) for f in range(8)
        ]
        return {"ref": ref, "cts": cts, "weight_pts": weight_pts,
                "batch": batch}

    def run(self, ev, prep):
        acc = None
        for ct, wpt in zip(prep["cts"], prep["weight_pts"]):
            term = ev.mul_plain(ct, wpt)
            acc = term if acc is None else ev.add(acc, term)
        bias = ev.encode_for(acc, np.full(self.params.slots, HOUSE_B))
        return ev.add_plain(acc, bias)


class OpMicro(Workload):
    """Single-operator workloads for the per-operator campaigns."""

    OPS = ("ctct-add", "ctct-mult", "ctpt-add", "ctpt-mult", "rot")

    def __init__(self, params, op, rot_step=3):
        super().__init__(params)
        if op not in self.OPS:
            raise ConfigurationError(f"unknown operator id {op!r}")
        self.id = f"op-{op}"
        self.op = op
        self.rot_step = rot_step

    def rot_steps(self):
        return (self.rot_step,) if self.op == "rot" and self.rot_step else ()

    def prepare(self, keys, rng):
        h = self.params.slots
        m1 = rng.uniform(-1.0, 1.0, h)
        m2 = rng.uniform(-1.0, 1.0, h)
        prep = {"m1": m1, "m2": m2, "ct1": self._encrypt_vec(keys, rng, m1)}
        if self.op == "ctct-add":
            prep["ct2"] = self._encrypt_vec(keys, rng, m2)
            prep["ref"] = m1 + m2
        elif self.op == "ctct-mult":
            prep["ct2"] = self._encrypt_vec(keys, rng, m2)
            prep["ref"] = m1 * m2
        elif self.op == "ctpt-add":
            prep["pt2"] = encode(m2, self.params)
            prep["ref"] = m1 + m2
        elif self.op == "ctpt-mult":
            prep["pt2"] = encode(m2, self.params)
            prep["ref"] = m1 * m2
        else:
            prep["ref"] = np.roll(m1, -self.rot_step)
        return prep

    def run(self, ev, prep):
        if self.op == "ctct-add":
            return ev.add(prep["ct1"], prep["ct2"])
        if self.op == "ctct-mult":
            return ev.mul(prep["ct1"], prep["ct2"])
        if self.op == "ctpt-add":
            return ev.add_plain(prep["ct1"], prep["pt2"])
        if self.op == "ctpt-mult":
            return ev.mul_plain(prep["ct1"], prep["pt2"])
        return ev.rotate(prep["ct1"], self.rot_step)


class KeyswitchStepSweep(OpMicro):
    """ct-ct mult with fault sites restricted to one (or all) of the seven
    keyswitch pipeline steps."""

    def __init__(self, params, ks_step=None):
        super().__init__(params, "ctct-mult")
        self.id = "ks-step-sweep"
        if ks_step is not None and not 0 <= ks_step <= 6:
            raise ConfigurationError("keyswitch step must be in 0..6")
        self.ks_step = ks_step
        self.stage_filter = (
            "keyswitch/op-" if ks_step is None else f"keyswitch/op-{ks_step}"
        )


def make_workload(workload_id, params, mv_dim=64, rot_step=3, ks_step=None,
                  house_csv=None) -> Workload:
    wid = workload_id.lower()
    if wid == "vv":
        return VectorVector(params)
    if wid == "mv":
        return MatrixVector(params, dim=mv_dim)
    if wid == "rot":
        return Rotation(params, rot_step=rot_step)
    if wid == "house":
        return HouseRegression(params, csv_path=house_csv)
    if wid.startswith("op-"):
        return OpMicro(params, wid[3:], rot_step=rot_step)
    if wid == "ks-step-sweep":
        return KeyswitchStepSweep(params, ks_step=ks_step)
    raise ConfigurationError(
        f"unknown workload {workload_id!r}; available: {', '.join(WORKLOAD_IDS)}"
    )
