"""Campaign orchestration: classification, determinism, record schema."""

import filecmp
import json
import os

import numpy as np
import pytest

from ckksfault.campaign import (
    CampaignSpec,
    classify,
    plain_run,
    run_campaign,
    run_once,
    run_single,
    stable_seed,
)
from ckksfault.errors import ConfigurationError
from ckksfault.summary import aggregate, parse_records, read_deviation_rows
from ckksfault.workloads import make_workload


def test_classify_trivials():
    zeros = np.zeros(8)
    assert classify(zeros, 1e-3) == "masked"
    spike = zeros.copy()
    spike[3] = 1e-2
    assert classify(spike, 1e-3) == "sdc"
    assert classify(zeros, 1e-3, guard_flagged=True) == "detected"
    with pytest.raises(ConfigurationError):
        classify(zeros, 0.0)


def test_control_run_is_masked_and_bit_identical(desk1, desk1_keys):
    w = make_workload("vv", desk1)
    prep = w.prepare(desk1_keys, np.random.default_rng(7))
    ref = plain_run(w, desk1_keys, prep)
    out = run_once(w, desk1_keys, prep, ref, "none", None, 1e-3,
                   stable_seed("g"), 7)
    assert out.classification == "masked"
    assert out.max_deviation == 0.0
    assert out.slots_over_eps == 0


def test_stable_seed_is_process_independent():
    assert stable_seed("a", 1) == stable_seed("a", 1)
    assert stable_seed("a", 1) != stable_seed("a", 2)
    # frozen value guards against accidental derivation changes that would
    # silently break cross-version reproducibility
    assert stable_seed(42, "keys") == 6096575889541053937


def test_run_count_zero_rejected(desk1, tmp_path):
    with pytest.raises(ConfigurationError):
        run_campaign(CampaignSpec("vv", "DESK1", runs=0, master_seed=1),
                     out_dir=str(tmp_path))


def test_zero_stage_workload_refused(tmp_path):
    spec = CampaignSpec("op-rot", "DESK1", runs=5, master_seed=1, rot_step=0)
    with pytest.raises(ConfigurationError):
        run_campaign(spec, out_dir=str(tmp_path))


def test_campaign_determinism_byte_identical(tmp_path):
    spec = CampaignSpec("vv", "DESK1", protection="none", runs=25,
                        master_seed=99)
    run_campaign(spec, out_dir=str(tmp_path / "a"), write_deviations=True)
    run_campaign(spec, out_dir=str(tmp_path / "b"), write_deviations=True)
    for name in ("records.jsonl", "summary.json", "deviations.csv"):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name,
                           shallow=False), name


def test_worker_pool_matches_serial(tmp_path):
    spec = CampaignSpec("vv", "DESK1", protection="none", runs=20,
                        master_seed=5)
    run_campaign(spec, out_dir=str(tmp_path / "serial"), write_deviations=True)
    run_campaign(spec, out_dir=str(tmp_path / "pool"), write_deviations=True,
                 workers=2)
    for name in ("records.jsonl", "summary.json", "deviations.csv"):
        assert filecmp.cmp(tmp_path / "serial" / name, tmp_path / "pool" / name,
                           shallow=False), name


def test_record_schema_and_aggregate_recount(tmp_path):
    spec = CampaignSpec("vv", "DESK1", protection="none", runs=30,
                        master_seed=3)
    result = run_campaign(spec, out_dir=str(tmp_path), write_deviations=True)
    records = parse_records(tmp_path / "records.jsonl")
    assert len(records) == 30
    for rec in records:
        assert {"v", "run", "workload", "preset", "protection", "seed",
                "site", "classification", "max_deviation", "duration_ns",
                "guard_events"} <= set(rec)
        assert rec["duration_ns"] == 0  # zeroed for byte reproducibility
        assert rec["site"]["stage"]
    # summary reproducible from artifacts alone
    devs = {run: d for run, d in
            read_deviation_rows(tmp_path / "deviations.csv")}
    rebuilt = aggregate(records, devs)
    assert rebuilt == result.summary
    # histogram recount oracle: independent scan of the deviation matrix
    cell = result.summary["cells"][0]
    manual = {}
    for devrow in devs.values():
        for v in devrow:
            key = "zero" if v == 0 else str(int(np.floor(np.log10(v))))
            manual[key] = manual.get(key, 0) + 1
    assert manual == cell["deviation_histogram"]


def test_aggregate_rates(tmp_path):
    recs = [
        {"v": 1, "run": i, "workload": "vv", "preset": "DESK1",
         "protection": "none", "master_seed": 0, "epsilon": 1e-3, "seed": 0,
         "site": None, "classification": c, "max_deviation": 1.0,
         "slots_over_eps": 0, "duration_ns": 0, "guard_events": []}
        for i, c in enumerate(["sdc", "sdc", "sdc", "masked"])
    ]
    doc = aggregate(recs)
    cell = doc["cells"][0]
    assert cell["rates"]["sdc"] == 0.75
    assert cell["counts"] == {"masked": 1, "sdc": 3, "detected": 0}
    single = aggregate(recs[3:])
    assert single["cells"][0]["rates"]["sdc"] == 0.0
    with pytest.raises(ConfigurationError):
        aggregate([])


def test_single_fault_discipline_enforced(desk1, desk1_keys):
    from ckksfault.inject import FaultSite

    w = make_workload("vv", desk1)
    prep = w.prepare(desk1_keys, np.random.default_rng(7))
    ref = plain_run(w, desk1_keys, prep)
    # a stage path that never fires in this workload
    ghost = FaultSite("vv", "rot#0/c0/auto", "c0", 0, 0, 1)
    with pytest.raises(AssertionError):
        run_once(w, desk1_keys, prep, ref, "none", ghost, 1e-3,
                 stable_seed("g"), 7)


def test_keyswitch_op3_fault_is_all_slot_sdc(desk3):
    # expected from slot diffusion: a keyswitch point-mult fault at DESK3
    # corrupts essentially every slot
    rec = run_single(
        CampaignSpec("vv", "DESK3", master_seed=12),
        fault_literal="stage=mult#0/keyswitch/op-3,operand=d,limb=2,"
                      "coeff=900,bit=44",
    )
    assert rec["classification"] == "sdc"
    assert rec["slots_over_eps"] >= 0.99 * 1024


def test_run_single_without_fault(desk1):
    rec = run_single(CampaignSpec("vv", "DESK1", master_seed=12))
    assert rec["classification"] == "masked"
    assert rec["site"] is None


def test_run_single_rejects_unknown_stage():
    with pytest.raises(ConfigurationError):
        run_single(
            CampaignSpec("vv", "DESK1", master_seed=12),
            fault_literal="stage=nope/xx,operand=d,limb=0,coeff=0,bit=0",
        )


def test_reference_cache_hits_disk(tmp_path, desk1):
    spec = CampaignSpec("vv", "DESK1", runs=3, master_seed=31)
    run_campaign(spec, out_dir=str(tmp_path / "first"),
                 cache_dir=str(tmp_path / "cache"))
    cached = os.listdir(tmp_path / "cache")
    assert cached  # reference + noise ceiling entries
    run_campaign(spec, out_dir=str(tmp_path / "second"),
                 cache_dir=str(tmp_path / "cache"))
    assert filecmp.cmp(tmp_path / "first" / "records.jsonl",
                       tmp_path / "second" / "records.jsonl", shallow=False)


def test_epsilon_policy_floor(desk1, tmp_path):
    spec = CampaignSpec("vv", "DESK1", runs=2, master_seed=1)
    result = run_campaign(spec, out_dir=str(tmp_path))
    # desk noise ceilings sit around 1e-4; the absolute floor dominates
    assert result.epsilon == pytest.approx(1e-3)
    explicit = CampaignSpec("vv", "DESK1", runs=2, master_seed=1,
                            epsilon=0.5)
    res2 = run_campaign(explicit, out_dir=str(tmp_path / "e"))
    assert res2.epsilon == 0.5
