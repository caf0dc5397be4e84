"""The polynomial-level stage seam.

Every polynomial-level step of ciphertext evaluation is funneled through a
StageRunner as a Stage: a pure closure over its input buffers plus declared
operands. Fault injection corrupts a stage's working data (one bit, once per
run) and protection modes wrap execution with checks; the CKKS core itself
stays free of fault and ABFT logic.

Operand indices < the number of data operands address input buffers; the
remaining operands are virtual butterfly-round states of transform stages
(the working vector right after each round, rounds 1..log2(n)).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .ring import add_limbs, intt_limbs, mul_limbs, ntt_limbs

# stage kinds
NTT = "ntt"
INTT = "intt"
PMUL = "pointwise-mult"
PADD = "pointwise-add"
INNER_PRODUCT = "point-mult-accumulate"
BCONV = "bconv"
AUTOMORPHISM = "automorphism"
RESCALE_FIX = "rescale-fix"

TRANSFORM_KINDS = (NTT, INTT)


@dataclass(frozen=True)
class Operand:
    """One addressable input of a stage: (limbs, n) uint64 values.

    data is None for virtual butterfly-round operands; key material is
    declared with injectable=False and never enumerates fault sites.
    """

    name: str
    moduli: tuple
    shape: tuple
    data: np.ndarray = None
    injectable: bool = True


@dataclass
class Stage:
    """A pure polynomial-level step: run(inject) -> tuple of output arrays.

    run never mutates the input buffers; re-executing with inject=None always
    reproduces the fault-free outputs bit-exactly. operands lists the data
    inputs; transform stages additionally expose `rounds` virtual
    butterfly-round operands per data operand (named "<name>.roundR",
    indexed after the data operands), synthesized lazily.
    """

    path: str
    kind: str
    operands: tuple
    run: object
    out_moduli: tuple = ()
    rounds: int = 0
    meta: dict = field(default_factory=dict)

    def operand_index(self, name: str) -> int:
        for i, op in enumerate(self.operands):
            if op.name == name:
                return i
        if self.rounds:
            base, _, tail = name.rpartition(".round")
            if base and tail.isdigit():
                r = int(tail)
                if 1 <= r <= self.rounds:
                    for i, op in enumerate(self.operands):
                        if op.name == base:
                            return len(self.operands) + i * self.rounds + r - 1
        raise ConfigurationError(f"stage {self.path} has no operand {name!r}")

    def operand_at(self, index: int) -> Operand:
        """Resolve data or virtual operand metadata by index."""
        if index < len(self.operands):
            return self.operands[index]
        vi = index - len(self.operands)
        src = self.operands[vi // self.rounds]
        r = vi % self.rounds + 1
        return Operand(f"{src.name}.round{r}", src.moduli, src.shape, None,
                       src.injectable)

    def operand_decls(self):
        decls = [
            (op.name, op.moduli, op.shape, op.injectable)
            for op in self.operands
        ]
        for op in self.operands:
            for r in range(1, self.rounds + 1):
                decls.append(
                    (f"{op.name}.round{r}", op.moduli, op.shape, op.injectable)
                )
        return tuple(decls)


def make_transform_stage(path, kind, polys, primes_per_poly):
    """Forward/inverse NTT over one or more polys, with virtual round operands.

    polys: list of (name, (limbs, n) array); rounds are shared per poly.
    """
    n = polys[0][1].shape[1]
    rounds = n.bit_length() - 1
    data_ops = tuple(
        Operand(name, tuple(p.q for p in primes), arr.shape, arr)
        for (name, arr), primes in zip(polys, primes_per_poly)
    )
    n_data = len(polys)
    limb_fn = ntt_limbs if kind == NTT else intt_limbs

    def run(inject=None):
        outs = []
        for pi, ((name, arr), primes) in enumerate(zip(polys, primes_per_poly)):
            work = arr.copy()
            kern_inject = None
            if inject is not None:
                op_idx, limb, coeff, xor = inject
                if op_idx == pi:
                    work[limb, coeff] ^= np.uint64(xor)
                elif op_idx >= n_data:
                    vi = op_idx - n_data
                    if vi // rounds == pi:
                        kern_inject = (limb, vi % rounds + 1, coeff, xor)
            limb_fn(work, primes, kern_inject)
            outs.append(work)
        return tuple(outs)

    return Stage(
        path, kind, data_ops, run,
        out_moduli=tuple(op.moduli for op in data_ops),
        rounds=rounds,
        meta={"primes": primes_per_poly},
    )


def _inject_copy(arrays, inject):
    """Copy-on-inject: returns arrays with the designated bit flipped."""
    if inject is None:
        return arrays
    op_idx, limb, coeff, xor = inject
    out = list(arrays)
    work = out[op_idx].copy()
    work[limb, coeff] ^= np.uint64(xor)
    out[op_idx] = work
    return out


def make_pointwise_mul_stage(path, a_name, a, b_name, b, moduli):
    ops = (
        Operand(a_name, moduli, a.shape, a),
        Operand(b_name, moduli, b.shape, b),
    )

    def run(inject=None):
        aa, bb = _inject_copy((a, b), inject)
        return (mul_limbs(aa, bb, moduli),)

    return Stage(path, PMUL, ops, run, out_moduli=(moduli,))


def make_pointwise_add_stage(path, a_name, a, b_name, b, moduli):
    ops = (
        Operand(a_name, moduli, a.shape, a),
        Operand(b_name, moduli, b.shape, b),
    )

    def run(inject=None):
        aa, bb = _inject_copy((a, b), inject)
        return (add_limbs(aa, bb, moduli),)

    return Stage(path, PADD, ops, run, out_moduli=(moduli,))


class StageRunner:
    """Unprotected execution: run each stage once, injecting when armed."""

    def __init__(self, injector=None, observer=None):
        self.injector = injector
        self.observer = observer
        self.guard_events = []

    def execute(self, stage: Stage):
        if self.observer is not None:
            self.observer(stage)
        return self._protected(stage)

    def _protected(self, stage):
        return self._raw(stage)

    def _raw(self, stage):
        inject = self.injector.plan(stage) if self.injector is not None else None
        return stage.run(inject)


@dataclass(frozen=True)
class StageDecl:
    """Shape-level record of one stage occurrence, for site enumeration."""

    path: str
    kind: str
    operands: tuple  # of (name, moduli, shape, injectable)


class RecordingObserver:
    """Collects the static stage graph during a dry run."""

    def __init__(self):
        self.stages = []
        self._seen = set()

    def __call__(self, stage: Stage):
        if stage.path in self._seen:
            raise ConfigurationError(
                f"stage {stage.path} fired twice; stage paths must be unique"
            )
        self._seen.add(stage.path)
        self.stages.append(
            StageDecl(stage.path, stage.kind, stage.operand_decls())
        )
