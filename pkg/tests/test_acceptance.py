"""Acceptance suite: every criterion at its stated size and tolerance,
one pass/fail line per criterion.

The campaign-heavy criteria share a disk cache for references and noise
ceilings; expect the full module to run for tens of minutes on one core.
"""

import filecmp
import sys

import numpy as np
import pytest

from ckksfault import ckks
from ckksfault.bench import overhead_bench
from ckksfault.campaign import (
    CampaignSpec,
    plain_run,
    run_campaign,
    run_once,
    stable_seed,
)
from ckksfault.errors import LevelExhaustedError
from ckksfault.guard import checked_transform
from ckksfault.params import get_preset
from ckksfault.ring import (
    Domain,
    RnsBasis,
    RnsPoly,
    find_ntt_primes,
    get_prime,
    negacyclic_mul,
    ntt_forward,
    ntt_inverse,
)
from ckksfault.workloads import make_workload

pytestmark = pytest.mark.slow

OPERATORS = ("op-ctpt-add", "op-ctct-add", "op-ctpt-mult", "op-ctct-mult",
              "op-rot")
DESK_PRESETS = ("DESK1", "DESK2", "DESK3", "DESK4")
WORKLOADS = ("vv", "mv", "rot", "house")
MV_ACCEPT_DIM = 4  # configurable per spec; sized for the single-core budget


def announce(name, detail=""):
    line = f"ACCEPTANCE {name}: PASS {detail}".rstrip()
    print(line)
    print(line, file=sys.__stderr__, flush=True)


@pytest.fixture(scope="module")
def cache_dir(tmp_path_factory):
    return str(tmp_path_factory.mktemp("acceptance-cache"))


def _campaign(workload, preset, protection, runs, cache_dir, seed=20260809,
              **opts):
    spec = CampaignSpec(workload, preset, protection=protection, runs=runs,
                        master_seed=seed, **opts)
    return run_campaign(spec, cache_dir=cache_dir)


@pytest.fixture(scope="module")
def operator_campaigns(cache_dir):
    """1,000-run unprotected campaigns for every (desk preset, operator)."""
    results = {}
    for preset in DESK_PRESETS:
        for op in OPERATORS:
            results[(preset, op)] = _campaign(op, preset, "none", 1000,
                                              cache_dir)
    return results


# ---------------------------------------------------------------- criterion 1


def test_ntt_correctness(rng):
    desk_moduli = set()
    for preset in DESK_PRESETS:
        params = get_preset(preset)
        desk_moduli.update(params.chain_moduli)
        desk_moduli.add(params.special_modulus)
    for n in (16, 256, 2048):
        for q in sorted(desk_moduli):
            basis = RnsBasis((get_prime(q, n),))
            for _ in range(1000):
                coeffs = rng.integers(0, q, n, dtype=np.uint64)
                a = RnsPoly(coeffs[None, :], Domain.COEFFICIENT, basis)
                assert np.array_equal(ntt_inverse(ntt_forward(a)).res, a.res)

    def schoolbook(a, b, q):
        n = len(a)
        out = [0] * n
        for i in range(n):
            ai = int(a[i])
            for j in range(n):
                k = i + j
                if k < n:
                    out[k] = (out[k] + ai * int(b[j])) % q
                else:
                    out[k - n] = (out[k - n] - ai * int(b[j])) % q
        return out

    q = find_ntt_primes(30, 1, 64)[0]
    basis = RnsBasis((get_prime(q, 64),))
    for trial in range(1000):
        a = rng.integers(0, q, 64, dtype=np.uint64)
        b = rng.integers(0, q, 64, dtype=np.uint64)
        got = negacyclic_mul(
            RnsPoly(a[None, :], Domain.COEFFICIENT, basis),
            RnsPoly(b[None, :], Domain.COEFFICIENT, basis),
        )
        assert [int(v) for v in got.res[0]] == schoolbook(a, b, q)
    announce("ntt-correctness",
             f"({len(desk_moduli)} desk primes x 3 degrees x 1000 roundtrips; "
             "1000 schoolbook products)")


# ---------------------------------------------------------------- criterion 2


def test_ckks_correctness():
    for preset in DESK_PRESETS:
        params = get_preset(preset)
        keys = ckks.keygen(params, seed=42, rot_steps=(3,))
        enc_seeds = list(range(200, 208))
        rng = np.random.default_rng(9)
        msgs = [rng.uniform(-1, 1, params.slots) for _ in enc_seeds]
        cts = [
            ckks.encrypt(ckks.encode(m, params), keys,
                         np.random.default_rng(s))
            for m, s in zip(msgs, enc_seeds)
        ]
        floor = max(
            np.abs(ckks.decrypt_decode(ct, keys) - m).max()
            for ct, m in zip(cts, msgs)
        )
        ev = ckks.Evaluator(keys)
        # add within 2x the measured noise floor (triangle inequality over
        # the same encryption seeds)
        s = ckks.decrypt_decode(ev.add(cts[0], cts[1]), keys)
        assert np.abs(s - (msgs[0] + msgs[1])).max() <= 2 * floor
        # mult within 1e-3 relative
        p = ckks.decrypt_decode(ev.mul(cts[2], cts[3]), keys)
        assert np.abs(p - msgs[2] * msgs[3]).max() <= 1e-3
        # rotation: exact shift within (keyswitch) noise
        r = ckks.decrypt_decode(ev.rotate(cts[4], 3), keys)
        assert np.abs(r - np.roll(msgs[4], -3)).max() <= 10 * floor + 1e-6
        # depth accounting: exactly L multiplications
        ct = ckks.encrypt(
            ckks.encode(np.full(params.slots, 0.9), params), keys,
            np.random.default_rng(7))
        for _ in range(params.depth):
            ct = ev.mul(ct, ct)
        with pytest.raises(LevelExhaustedError):
            ev.mul(ct, ct)
    announce("ckks-correctness", "(DESK1-4: add/mult/rot tolerances, depth)")


# ---------------------------------------------------------------- criterion 3


def test_slot_diffusion(operator_campaigns):
    for op in OPERATORS:
        res = operator_campaigns[("DESK3", op)]
        fracs = res.sdc_fraction_of_slots
        assert fracs, f"{op}: no SDC runs at DESK3"
        diffused = sum(1 for f in fracs if f >= 0.99) / len(fracs)
        assert diffused >= 0.95, f"{op}: only {diffused:.3f} of SDC runs diffuse"
    announce("slot-diffusion",
             "(DESK3, 1000 runs/operator: >=99% slots over eps in >=95% of "
             "SDC runs)")


# ---------------------------------------------------------------- criterion 4


def test_modulus_amplification(operator_campaigns):
    overall = {}
    for preset in DESK_PRESETS:
        maxima = {
            op: operator_campaigns[(preset, op)].max_deviation
            for op in OPERATORS
        }
        overall[preset] = max(maxima.values())
        mult_max = max(maxima["op-ctpt-mult"], maxima["op-ctct-mult"])
        addrot_min = min(maxima["op-ctpt-add"], maxima["op-ctct-add"],
                         maxima["op-rot"])
        assert mult_max <= addrot_min, (
            f"{preset}: mult maxima {mult_max:.3e} exceed add/rot "
            f"{addrot_min:.3e}"
        )
    series = [overall[p] for p in DESK_PRESETS]
    assert all(a < b for a, b in zip(series, series[1:])), series
    announce(
        "modulus-amplification",
        "(max deviations " + " < ".join(f"{v:.2e}" for v in series) + ")",
    )


# ---------------------------------------------------------------- criterion 5


def test_keyswitch_step_sweep(cache_dir):
    for step in range(7):
        res = _campaign("ks-step-sweep", "DESK3", "none", 150, cache_dir,
                        ks_step=step)
        assert res.site_cardinality > 0, f"op-{step} not injectable"
        cell = res.summary["cells"][0]
        assert cell["counts"]["sdc"] >= 1, f"op-{step} produced no SDC"
        fracs = res.sdc_fraction_of_slots
        assert np.mean([f >= 0.99 for f in fracs]) >= 0.95, f"op-{step}"
    # with no step chosen the filter spans exactly the seven stages
    params = get_preset("DESK3")
    w = make_workload("ks-step-sweep", params)
    keys = ckks.keygen(params, 1)
    prep = w.prepare(keys, np.random.default_rng(2))
    from ckksfault.campaign import enumerate_sites

    space = enumerate_sites(w, keys, prep, stage_filter=w.stage_filter)
    suffixes = {p.rsplit("/", 1)[-1] for p in space.stage_paths()}
    assert suffixes == {f"op-{i}" for i in range(7)}
    announce("keyswitch-step-sweep",
             "(7 stages reachable, injectable, all-slot SDCs)")


# ---------------------------------------------------------------- criterion 6


def test_unprotected_sdc_rate_positive(cache_dir, operator_campaigns):
    rates = {}
    for wl in WORKLOADS:
        opts = {"mv_dim": MV_ACCEPT_DIM} if wl == "mv" else {}
        res = _campaign(wl, "DESK3", "none", 300, cache_dir, **opts)
        rate = res.summary["cells"][0]["rates"]["sdc"]
        assert rate > 0, f"{wl}: zero SDC rate"
        rates[wl] = rate
        # deterministic per seed: an identical spec reproduces the rate
        again = _campaign(wl, "DESK3", "none", 300, cache_dir, **opts)
        assert again.summary == res.summary
    # every keyswitch stage group also yields a positive rate
    for step in range(7):
        res = _campaign("ks-step-sweep", "DESK3", "none", 150, cache_dir,
                        ks_step=step)
        assert res.summary["cells"][0]["rates"]["sdc"] > 0
    announce("unprotected-sdc-positive",
             "(" + ", ".join(f"{w}={r:.2f}" for w, r in rates.items()) + ")")


# ---------------------------------------------------------------- criterion 7


@pytest.mark.parametrize("workload", WORKLOADS)
def test_protection_efficacy(workload, cache_dir):
    opts = {"mv_dim": MV_ACCEPT_DIM} if workload == "mv" else {}
    detail = []
    for protection in ("redundant", "checksum"):
        res = _campaign(workload, "DESK3", protection, 10000, cache_dir,
                        **opts)
        cell = res.summary["cells"][0]
        rate = cell["rates"]["sdc"]
        assert rate < 0.001, f"{workload}/{protection}: SDC rate {rate}"
        # correction: every Detected run's decoded output equals the
        # fault-free reference exactly
        assert all(
            rec["max_deviation"] == 0.0
            for rec in res.records if rec["classification"] == "detected"
        ), f"{workload}/{protection}: a detected run was not corrected"
        detail.append(f"{protection}={rate:.4f}")
    # zero false positives over 10,000 fault-free guarded runs
    params = get_preset("DESK3")
    spec = CampaignSpec(workload, "DESK3", master_seed=20260809, **opts)
    w = spec.build_workload(params)
    keys = ckks.keygen(params, stable_seed(spec.master_seed, "keys"),
                       rot_steps=w.rot_steps())
    prep = w.prepare(keys, np.random.default_rng(
        np.random.SeedSequence(stable_seed(spec.master_seed, "data"))))
    reference = plain_run(w, keys, prep)
    false_positives = 0
    for i in range(10000):
        out = run_once(w, keys, prep, reference, "checksum", None, 1e-3,
                       stable_seed("fp", workload, i), 0)
        if out.guard_events or out.classification != "masked":
            false_positives += 1
    assert false_positives == 0
    announce(f"protection-efficacy[{workload}]",
             "(" + ", ".join(detail) + ", 0 false positives/10k)")


# ---------------------------------------------------------------- criterion 8


def test_checksum_defining_property_all_desk_primes(rng):
    # F.NTT(a) = sum(a) mod q over 10^4 random trials spread across every
    # desk prime, both directions
    from ckksfault import backends
    from ckksfault.guard import ChecksumContext

    moduli = set()
    for preset in DESK_PRESETS:
        params = get_preset(preset)
        moduli.update(params.chain_moduli)
        moduli.add(params.special_modulus)
    bk = backends.active
    trials_per_prime = 10000 // len(moduli) + 1
    for q in sorted(moduli):
        pm = get_prime(q, 256)
        f = ChecksumContext.vector(pm)
        for _ in range(trials_per_prime):
            a = rng.integers(0, q, 256, dtype=np.uint64)
            v = a.copy()
            bk.ntt_forward(v, q, pm.wtab, pm.wtab_sh)
            assert bk.weighted_sum_mod(v, f, q) == bk.sum_mod(a, q)
            w = v.copy()
            bk.ntt_inverse(w, q, pm.iwtab, pm.iwtab_sh, pm.n_inv, pm.n_inv_sh)
            assert bk.sum_mod(w, q) == bk.weighted_sum_mod(v, f, q)
    announce("checksum-soundness",
             f"({len(moduli)} desk primes x {trials_per_prime} trials, "
             "both directions)")


def test_checksum_detection_exhaustive_n256():
    q = find_ntt_primes(30, 1, 256)[0]
    basis = RnsBasis((get_prime(q, 256),))
    rng = np.random.default_rng(31)
    coeffs = rng.integers(0, q, 256, dtype=np.uint64)
    a = RnsPoly(coeffs[None, :], Domain.COEFFICIENT, basis)
    rounds = 8
    detected = 0
    total = 0
    for operand in ["a"] + [str(r) for r in range(1, rounds + 1)]:
        for coeff in range(256):
            for bit in range(62):
                total += 1
                _, flags = checked_transform(a, "forward",
                                             inject=(operand, 0, coeff, bit))
                if not flags.match:
                    detected += 1
    rate = detected / total
    assert total == 256 * 62 * (1 + rounds)
    assert rate >= 0.999, f"exhaustive n=256 detection {rate:.5f}"
    announce("checksum-detection-n256",
             f"({detected}/{total} sites = {rate:.5f})")


def test_checksum_detection_sampled_n2048():
    q = find_ntt_primes(50, 1, 2048)[0]
    basis = RnsBasis((get_prime(q, 2048),))
    rng = np.random.default_rng(32)
    coeffs = rng.integers(0, q, 2048, dtype=np.uint64)
    a = RnsPoly(coeffs[None, :], Domain.COEFFICIENT, basis)
    rounds = 11
    detected = 0
    for _ in range(10000):
        which = int(rng.integers(0, rounds + 1))
        operand = "a" if which == 0 else str(which)
        coeff = int(rng.integers(0, 2048))
        bit = int(rng.integers(0, 62))
        _, flags = checked_transform(a, "forward",
                                     inject=(operand, 0, coeff, bit))
        if not flags.match:
            detected += 1
    rate = detected / 10000
    assert rate >= 0.999, f"sampled n=2048 detection {rate:.5f}"
    announce("checksum-detection-n2048", f"({detected}/10000 = {rate:.4f})")


# ---------------------------------------------------------------- criterion 9


def test_overhead_orderings():
    lines = []
    for wl in WORKLOADS:
        opts = {"mv_dim": MV_ACCEPT_DIM} if wl == "mv" else {}
        spec = CampaignSpec(wl, "DESK3", master_seed=5, **opts)
        table = overhead_bench(spec, repetitions=20)["modes"]
        none = table["none"]["normalized"]
        chk = table["checksum"]["normalized"]
        red = table["redundant"]["normalized"]
        assert none < chk < red, f"{wl}: ordering violated {table}"
        assert chk - 1.0 < 0.5, f"{wl}: checksum overhead {chk - 1:.2f}"
        assert 0.8 <= red - 1.0 <= 1.5, f"{wl}: redundant extra {red - 1:.2f}"
        lines.append(f"{wl}: chk +{100 * (chk - 1):.0f}% red +{100 * (red - 1):.0f}%")
    announce("overhead", "(" + "; ".join(lines) + ")")


# --------------------------------------------------------------- criterion 10


def test_reproducibility(tmp_path):
    spec = CampaignSpec("vv", "DESK3", protection="checksum", runs=150,
                        master_seed=1234)
    run_campaign(spec, out_dir=str(tmp_path / "a"), write_deviations=True)
    run_campaign(spec, out_dir=str(tmp_path / "b"), write_deviations=True)
    for name in ("records.jsonl", "summary.json", "deviations.csv"):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name,
                           shallow=False), name
    announce("reproducibility", "(records, summary, deviations byte-identical)")
