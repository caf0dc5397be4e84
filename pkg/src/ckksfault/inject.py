"""Single-bit fault sites: addressing, enumeration, and injection.

A site addresses one bit of one operand word at one stage boundary
(stage, operand, limb, coefficient, bit). Transform stages additionally
expose their butterfly-round states as virtual operands ("<poly>.roundR").
Exactly one flip fires per faulted run; out-of-range results stand as-is and
are reduced by downstream arithmetic.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError
from .stages import Stage

WORD_BITS = 62


def flip_bit(value: int, bit: int) -> int:
    """XOR one bit into a residue word. Results >= q are legitimate
    corruption effects, not errors."""
    if not 0 <= bit < WORD_BITS:
        raise ConfigurationError(f"bit index {bit} outside [0, {WORD_BITS})")
    return int(value) ^ (1 << bit)


@dataclass(frozen=True)
class FaultSite:
    """Addressable location of one injectable bit."""

    workload: str
    stage: str
    operand: str
    limb: int
    coeff: int
    bit: int

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(
            workload=str(d["workload"]), stage=str(d["stage"]),
            operand=str(d["operand"]), limb=int(d["limb"]),
            coeff=int(d["coeff"]), bit=int(d["bit"]),
        )

    def literal(self) -> str:
        return (
            f"stage={self.stage},operand={self.operand},"
            f"limb={self.limb},coeff={self.coeff},bit={self.bit}"
        )

    @classmethod
    def from_literal(cls, text: str, workload: str = ""):
        """Parse "stage=...,operand=...,limb=N,coeff=N,bit=N" (CLI --fault)."""
        fields = {}
        for part in text.split(","):
            if "=" not in part:
                raise ConfigurationError(f"bad fault literal near {part!r}")
            key, _, value = part.partition("=")
            fields[key.strip()] = value.strip()
        missing = {"stage", "operand", "limb", "coeff", "bit"} - set(fields)
        if missing:
            raise ConfigurationError(f"fault literal missing {sorted(missing)}")
        return cls(
            workload=workload, stage=fields["stage"], operand=fields["operand"],
            limb=int(fields["limb"]), coeff=int(fields["coeff"]),
            bit=int(fields["bit"]),
        )


class SiteSpace:
    """The countable site space of one workload's stage graph.

    Uniformly samplable without materializing: entries are
    (stage, operand, limbs, coeffs) blocks of limbs*coeffs*62 sites each.
    """

    def __init__(self, workload_id, entries):
        self.workload_id = workload_id
        self.entries = list(entries)
        sizes = [limbs * coeffs * WORD_BITS for _, _, limbs, coeffs in self.entries]
        self._cum = np.cumsum([0] + sizes)

    @classmethod
    def from_graph(cls, workload_id, graph, stage_filter=None):
        """Build from recorded StageDecls, skipping non-injectable operands.

        stage_filter: substring that must occur in the stage path.
        """
        entries = []
        for decl in graph:
            if stage_filter is not None and stage_filter not in decl.path:
                continue
            for name, moduli, shape, injectable in decl.operands:
                if not injectable:
                    continue
                entries.append((decl.path, name, shape[0], shape[1]))
        return cls(workload_id, entries)

    @property
    def cardinality(self) -> int:
        return int(self._cum[-1])

    def site_at(self, index: int) -> FaultSite:
        if not 0 <= index < self.cardinality:
            raise ConfigurationError(f"site index {index} out of range")
        block = int(np.searchsorted(self._cum, index, side="right")) - 1
        stage, operand, limbs, coeffs = self.entries[block]
        offset = index - int(self._cum[block])
        limb, rest = divmod(offset, coeffs * WORD_BITS)
        coeff, bit = divmod(rest, WORD_BITS)
        return FaultSite(self.workload_id, stage, operand, limb, coeff, bit)

    def sample(self, rng) -> FaultSite:
        return self.site_at(int(rng.integers(0, self.cardinality)))

    def stage_paths(self):
        return sorted({stage for stage, *_ in self.entries})


class Injector:
    """Arms exactly one site; `plan` hands the stage a private-copy flip."""

    def __init__(self, site: FaultSite = None):
        self.site = site
        self.fired = 0

    def plan(self, stage: Stage):
        site = self.site
        if site is None or stage.path != site.stage:
            return None
        idx = stage.operand_index(site.operand)
        op = stage.operand_at(idx)
        if not op.injectable:
            raise ConfigurationError(
                f"operand {site.operand} of {stage.path} is not injectable"
            )
        limbs, coeffs = op.shape
        if not (0 <= site.limb < limbs and 0 <= site.coeff < coeffs):
            raise ConfigurationError(
                f"site {site} exceeds operand bounds {op.shape}"
            )
        if not 0 <= site.bit < WORD_BITS:
            raise ConfigurationError(f"bit index {site.bit} out of range")
        self.fired += 1
        return (idx, site.limb, site.coeff, 1 << site.bit)
