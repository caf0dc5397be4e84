"""Run orchestration: single runs, outcome classification against the
memoized fault-free reference, the epsilon policy, and full campaigns.

A campaign fixes one data seed (inputs and encryption randomness are
identical across runs, like re-executing one program), samples fault sites
uniformly from the recorded stage graph under the master seed, and emits one
record per run plus a summary; identical specs produce byte-identical
artifacts.
"""

import hashlib
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import summary as summary_mod
from .ckks import Evaluator, decrypt_decode, keygen
from .errors import ConfigurationError
from .guard import ProtectionMode, make_runner
from .inject import FaultSite, Injector, SiteSpace
from .params import CkksParams, get_preset
from .stages import RecordingObserver, StageRunner
from .workloads import Workload, make_workload

NOISE_CEILING_RUNS = 100
EPSILON_FLOOR = 1e-3
EPSILON_NOISE_FACTOR = 10.0


def stable_seed(*parts) -> int:
    """Deterministic 63-bit seed from arbitrary labels (process-independent)."""
    text = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(
        hashlib.sha256(text.encode()).digest()[:8], "big"
    ) >> 1


def classify(deviations, epsilon, guard_flagged=False) -> str:
    """Masked if every slot stays within epsilon; Detected whenever a guard
    flagged (regardless of deviation); SDC otherwise."""
    if epsilon <= 0:
        raise ConfigurationError("classification threshold must be positive")
    if guard_flagged:
        return "detected"
    if float(np.max(deviations)) > epsilon:
        return "sdc"
    return "masked"


@dataclass
class RunOutcome:
    classification: str
    deviations: np.ndarray
    max_deviation: float
    slots_over_eps: int
    duration_ns: int
    site: FaultSite
    seed: int
    guard_events: tuple = ()


@dataclass
class CampaignSpec:
    """Everything that determines a campaign's outputs."""

    workload: str
    preset: str
    protection: str = "none"
    runs: int = 10000
    master_seed: int = 0
    stage_filter: str = None
    epsilon: float = None          # explicit threshold; None = auto policy
    mv_dim: int = 64
    rot_step: int = 3
    ks_step: int = None
    house_csv: str = None
    emit_timing: bool = False

    def workload_key(self) -> str:
        extra = []
        if self.workload == "mv":
            extra.append(f"dim{self.mv_dim}")
        if self.workload in ("rot", "op-rot"):
            extra.append(f"r{self.rot_step}")
        if self.house_csv:
            extra.append("customcsv")
        return "-".join([self.workload, *extra])

    def build_workload(self, params) -> Workload:
        return make_workload(
            self.workload, params, mv_dim=self.mv_dim, rot_step=self.rot_step,
            ks_step=self.ks_step, house_csv=self.house_csv,
        )


class DiskCache:
    """Content-addressed cache for references and noise ceilings."""

    def __init__(self, root=None):
        self.root = root
        self.mem = {}
        if root is not None:
            os.makedirs(root, exist_ok=True)

    def _path(self, key):
        digest = hashlib.sha256(key.encode()).hexdigest()[:32]
        return os.path.join(self.root, digest)

    def get(self, key):
        if key in self.mem:
            return self.mem[key]
        if self.root is None:
            return None
        path = self._path(key)
        if not os.path.exists(path + ".npy"):
            return None
        value = np.load(path + ".npy")
        self.mem[key] = value
        return value

    def put(self, key, value):
        value = np.asarray(value)
        self.mem[key] = value
        if self.root is not None:
            tmp = self._path(key) + ".tmp.npy"
            np.save(tmp, value)
            os.replace(tmp, self._path(key) + ".npy")


def plain_run(workload, keys, prep, observer=None) -> np.ndarray:
    """One fault-free unprotected execution -> decoded slots."""
    ev = Evaluator(keys, StageRunner(observer=observer))
    return decrypt_decode(workload.run(ev, prep), keys)


def _params_key(params: CkksParams) -> str:
    return f"{params.name}:{','.join(map(str, params.chain_moduli))}:{params.special_modulus}"


def fault_free_reference(spec, params, workload, keys, prep, cache,
                         observer=None) -> np.ndarray:
    key = "ref:" + ":".join([
        _params_key(params), spec.workload_key(), str(spec.master_seed)])
    ref = cache.get(key) if observer is None else None
    if ref is None:
        ref = plain_run(workload, keys, prep, observer)
        cache.put(key, ref)
    return ref


def noise_ceiling(spec, params, cache) -> float:
    """Max slot deviation of the decoded result from the plaintext reference
    over NOISE_CEILING_RUNS fault-free runs with distinct encryption seeds."""
    key = "noise:" + ":".join([_params_key(params), spec.workload_key()])
    cached = cache.get(key)
    if cached is not None:
        return float(cached)
    workload = spec.build_workload(params)
    keys = keygen(
        params, stable_seed("noise-keys", params.name, spec.workload_key()),
        rot_steps=workload.rot_steps(),
    )
    worst = 0.0
    for i in range(NOISE_CEILING_RUNS):
        rng = np.random.default_rng(np.random.SeedSequence(
            stable_seed("noise", params.name, spec.workload_key(), i)))
        prep = workload.prepare(keys, rng)
        slots = plain_run(workload, keys, prep)
        worst = max(worst, float(np.max(np.abs(slots - workload.reference(prep)))))
    cache.put(key, worst)
    return worst


def resolve_epsilon(spec, params, cache) -> float:
    if spec.epsilon is not None:
        if spec.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")
        return float(spec.epsilon)
    return max(EPSILON_NOISE_FACTOR * noise_ceiling(spec, params, cache),
               EPSILON_FLOOR)


def enumerate_sites(workload, keys, prep, stage_filter=None) -> SiteSpace:
    """Record the static stage graph with a dry run and expose its countable
    site space (uniformly samplable under the campaign seed)."""
    observer = RecordingObserver()
    plain_run(workload, keys, prep, observer)
    space = SiteSpace.from_graph(workload.id, observer.stages, stage_filter)
    return space


def run_once(workload, keys, prep, reference, protection, site, epsilon,
             guard_seed, data_seed) -> RunOutcome:
    """One execution with at most one injected bit flip, decrypted fault-free
    and classified against the memoized reference."""
    injector = Injector(site) if site is not None else None
    guard_rng = np.random.default_rng(np.random.SeedSequence(guard_seed))
    runner = make_runner(protection, injector, guard_rng=guard_rng)
    ev = Evaluator(keys, runner)
    t0 = time.perf_counter_ns()
    ct = workload.run(ev, prep)
    slots = decrypt_decode(ct, keys)
    duration = time.perf_counter_ns() - t0
    if site is not None and injector.fired != 1:
        raise AssertionError(
            f"single-fault discipline violated: fired={injector.fired} at {site}"
        )
    deviations = np.abs(slots - reference)
    flagged = len(runner.guard_events) > 0
    outcome = classify(deviations, epsilon, flagged)
    return RunOutcome(
        classification=outcome,
        deviations=deviations,
        max_deviation=float(np.max(deviations)),
        slots_over_eps=int(np.count_nonzero(deviations > epsilon)),
        duration_ns=duration,
        site=site,
        seed=data_seed,
        guard_events=tuple(runner.guard_events),
    )


# Worker-pool plumbing: the context is built in the parent and inherited by
# forked workers; only (index, site) travel per task.
_POOL_CTX = {}


def _pool_run(task):
    index, site = task
    ctx = _POOL_CTX
    outcome = run_once(
        ctx["workload"], ctx["keys"], ctx["prep"], ctx["reference"],
        ctx["protection"], site, ctx["epsilon"],
        stable_seed(ctx["master_seed"], "guard", index), ctx["data_seed"],
    )
    return index, outcome


def run_single(spec: CampaignSpec, fault_literal=None, cache_dir=None):
    """One execution (CLI `run`): optional site literal, returns the record.

    The site must address an existing stage/operand of the workload's graph.
    """
    params = get_preset(spec.preset) if isinstance(spec.preset, str) else spec.preset
    cache = DiskCache(cache_dir)
    workload = spec.build_workload(params)
    keys = keygen(params, stable_seed(spec.master_seed, "keys"),
                  rot_steps=workload.rot_steps())
    data_seed = stable_seed(spec.master_seed, "data")
    prep = workload.prepare(
        keys, np.random.default_rng(np.random.SeedSequence(data_seed)))
    observer = RecordingObserver()
    reference = fault_free_reference(
        spec, params, workload, keys, prep, cache, observer)
    epsilon = resolve_epsilon(spec, params, cache)
    site = None
    if fault_literal is not None:
        site = FaultSite.from_literal(fault_literal, workload.id)
        space = SiteSpace.from_graph(workload.id, observer.stages)
        known = set(space.stage_paths())
        if site.stage not in known:
            raise ConfigurationError(
                f"stage {site.stage!r} not in the workload's stage graph"
            )
    outcome = run_once(
        workload, keys, prep, reference, ProtectionMode(spec.protection), site,
        epsilon, stable_seed(spec.master_seed, "guard", 0), data_seed)
    return summary_mod.outcome_record(
        0, workload.id, params.name, ProtectionMode(spec.protection).value,
        outcome, epsilon, spec.master_seed, emit_timing=spec.emit_timing)


@dataclass
class CampaignResult:
    spec: CampaignSpec
    summary: dict
    records_path: str = None
    summary_path: str = None
    deviations_path: str = None
    site_cardinality: int = 0
    epsilon: float = 0.0
    max_deviation: float = 0.0
    sdc_fraction_of_slots: list = field(default_factory=list)


def run_campaign(spec: CampaignSpec, out_dir=None, cache_dir=None, workers=1,
                 write_deviations=False, progress=None,
                 keep_outcomes=False) -> CampaignResult:
    """Execute `spec.runs` independent runs with uniformly sampled sites.

    Deterministic under spec.master_seed: identical specs produce
    byte-identical records, summary, and deviation files.
    """
    if spec.runs < 1:
        raise ConfigurationError("run count must be >= 1")
    params = get_preset(spec.preset) if isinstance(spec.preset, str) else spec.preset
    protection = ProtectionMode(spec.protection)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    if cache_dir is None and out_dir is not None:
        cache_dir = os.path.join(out_dir, "cache")
    cache = DiskCache(cache_dir)

    workload = spec.build_workload(params)
    keys = keygen(params, stable_seed(spec.master_seed, "keys"),
                  rot_steps=workload.rot_steps())
    data_seed = stable_seed(spec.master_seed, "data")
    prep = workload.prepare(
        keys, np.random.default_rng(np.random.SeedSequence(data_seed)))

    observer = RecordingObserver()
    reference = fault_free_reference(
        spec, params, workload, keys, prep, cache, observer)
    stage_filter = spec.stage_filter
    if getattr(workload, "stage_filter", None) and stage_filter is None:
        stage_filter = workload.stage_filter
    space = SiteSpace.from_graph(workload.id, observer.stages, stage_filter)
    if space.cardinality == 0:
        raise ConfigurationError(
            "workload has no injectable fault sites"
            + (f" under filter {stage_filter!r}" if stage_filter else "")
        )
    epsilon = resolve_epsilon(spec, params, cache)

    site_rng = np.random.default_rng(np.random.SeedSequence(
        stable_seed(spec.master_seed, "sites")))
    tasks = [(i, space.sample(site_rng)) for i in range(spec.runs)]

    records_path = summary_path = deviations_path = None
    dev_writer = None
    if out_dir is not None:
        records_path = os.path.join(out_dir, "records.jsonl")
        summary_path = os.path.join(out_dir, "summary.json")
        if write_deviations:
            deviations_path = os.path.join(out_dir, "deviations.csv")
            dev_writer = summary_mod.DeviationWriter(deviations_path, params.slots)

    global _POOL_CTX
    _POOL_CTX = {
        "workload": workload, "keys": keys, "prep": prep,
        "reference": reference, "protection": protection, "epsilon": epsilon,
        "master_seed": spec.master_seed, "data_seed": data_seed,
    }

    def outcome_stream():
        if workers <= 1:
            for task in tasks:
                yield _pool_run(task)
        else:
            import multiprocessing

            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(workers) as pool:
                pending = {}
                next_emit = 0
                for index, outcome in pool.imap_unordered(
                        _pool_run, tasks, chunksize=16):
                    pending[index] = outcome
                    while next_emit in pending:
                        yield next_emit, pending.pop(next_emit)
                        next_emit += 1

    records = []
    outcomes = [] if keep_outcomes else None
    agg = summary_mod.CellAggregator(workload.id, params.name, protection.value)
    max_dev = 0.0
    sdc_fracs = []
    rec_fh = open(records_path, "w") if records_path else None
    try:
        for index, outcome in outcome_stream():
            rec = summary_mod.outcome_record(
                index, workload.id, params.name, protection.value, outcome,
                epsilon, spec.master_seed, emit_timing=spec.emit_timing)
            records.append(rec)
            agg.add_record(rec)
            if dev_writer is not None:
                agg.add_slots(outcome.deviations)
                dev_writer.write_row(index, outcome.deviations)
            if outcomes is not None:
                outcomes.append(outcome)
            max_dev = max(max_dev, outcome.max_deviation)
            if outcome.classification == "sdc":
                sdc_fracs.append(outcome.slots_over_eps / params.slots)
            if rec_fh is not None:
                rec_fh.write(summary_mod.record_line(rec) + "\n")
            if progress is not None and (index + 1) % progress == 0:
                print(
                    f"  [{workload.id}/{params.name}/{protection.value}] "
                    f"{index + 1}/{spec.runs} runs",
                    file=sys.stderr, flush=True,
                )
    finally:
        if rec_fh is not None:
            rec_fh.close()
        if dev_writer is not None:
            dev_writer.close()
    _POOL_CTX = {}

    doc = {
        "v": summary_mod.SUMMARY_VERSION,
        "kind": "campaign-summary",
        "cells": [agg.cell()],
    }
    if summary_path is not None:
        summary_mod.write_summary(summary_path, doc)

    result = CampaignResult(
        spec=spec, summary=doc, records_path=records_path,
        summary_path=summary_path, deviations_path=deviations_path,
        site_cardinality=space.cardinality, epsilon=epsilon,
        max_deviation=max_dev, sdc_fraction_of_slots=sdc_fracs,
    )
    result.records = records
    result.outcomes = outcomes
    return result
