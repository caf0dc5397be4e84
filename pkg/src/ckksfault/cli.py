"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 unrecoverable fault.
The insecurity warning for desk parameter sets is printed to stderr and
cannot be suppressed.
"""

import argparse
import json
import sys

from . import __version__
from .bench import kernel_bench, overhead_bench
from .campaign import CampaignSpec, run_campaign, run_single
from .errors import ConfigurationError, UnrecoverableFaultError
from .params import (
    PRESET_NAMES,
    get_preset,
    insecurity_warning,
    load_params_file,
    resolve_params,
)
from .summary import aggregate, parse_records, read_deviation_rows, summary_text
from .workloads import WORKLOAD_IDS


def _warn_insecure(params):
    line = insecurity_warning(params)
    if line is not None:
        print(line, file=sys.stderr)


def _add_params_args(p):
    p.add_argument("--preset", choices=PRESET_NAMES, help="built-in parameter set")
    p.add_argument("--params-file", help="JSON parameter file (see README schema)")


def _add_workload_args(p):
    p.add_argument("--workload", required=True, choices=WORKLOAD_IDS)
    p.add_argument("--mv-dim", type=int, default=64,
                   help="matrix dimension for the mv workload")
    p.add_argument("--rot-step", type=int, default=3,
                   help="rotation step for rot/op-rot workloads")
    p.add_argument("--ks-step", type=int, default=None,
                   help="restrict ks-step-sweep sites to one keyswitch step (0..6)")
    p.add_argument("--house-csv", default=None,
                   help="feature CSV for the house workload (bundled synthetic "
                        "data when omitted)")


def _spec_from_args(args, protection=None, runs=1):
    return CampaignSpec(
        workload=args.workload,
        preset=resolve_params(args.preset, args.params_file),
        protection=protection if protection is not None else args.protection,
        runs=runs,
        master_seed=args.seed,
        stage_filter=getattr(args, "stage_filter", None),
        epsilon=getattr(args, "epsilon", None),
        mv_dim=args.mv_dim,
        rot_step=args.rot_step,
        ks_step=args.ks_step,
        house_csv=args.house_csv,
        emit_timing=getattr(args, "timing", False),
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ckksfault",
        description="RNS-CKKS evaluation engine with single-bit fault "
                    "injection and checksum/DMR protection",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("params", help="list or show parameter sets")
    psub = p.add_subparsers(dest="params_command", required=True)
    psub.add_parser("list", help="list built-in presets")
    ps = psub.add_parser("show", help="show one parameter set as JSON")
    ps.add_argument("name", nargs="?", help="preset name")
    ps.add_argument("--params-file")

    p = sub.add_parser("keygen", help="generate keys into a binary container")
    _add_params_args(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--rot-steps", default="",
                   help="comma-separated rotation steps to key")
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="one execution, optionally with a fault")
    _add_params_args(p)
    _add_workload_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--protection", default="none",
                   choices=("none", "redundant", "checksum"))
    p.add_argument("--fault", default=None,
                   help="site literal: stage=...,operand=...,limb=N,coeff=N,bit=N")
    p.add_argument("--timing", action="store_true",
                   help="emit real durations (non-reproducible)")

    p = sub.add_parser("campaign", help="fault-injection campaign")
    _add_params_args(p)
    _add_workload_args(p)
    p.add_argument("--protection", default="none",
                   choices=("none", "redundant", "checksum"))
    p.add_argument("--runs", type=int, default=10000)
    p.add_argument("--seed", type=int, required=True, help="master seed")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--stage-filter", default=None,
                   help="only inject into stages whose path contains this")
    p.add_argument("--epsilon", type=float, default=None,
                   help="explicit SDC threshold (default: 10x noise ceiling)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--deviations-csv", action="store_true",
                   help="also write the per-slot deviation matrix")
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--timing", action="store_true",
                   help="emit real durations (breaks byte-reproducibility)")
    p.add_argument("--progress", type=int, default=None, metavar="N",
                   help="progress line to stderr every N runs")

    p = sub.add_parser("bench", help="overhead and kernel benchmarks")
    _add_params_args(p)
    p.add_argument("--workload", choices=WORKLOAD_IDS)
    p.add_argument("--mv-dim", type=int, default=64)
    p.add_argument("--rot-step", type=int, default=3)
    p.add_argument("--ks-step", type=int, default=None)
    p.add_argument("--house-csv", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--modes", default="none,checksum,redundant")
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--kernels", action="store_true",
                   help="compare compiled and pure-Python kernel backends")
    p.add_argument("--out", default=None, help="write the JSON table here")

    p = sub.add_parser("report", help="summary JSON from record files")
    p.add_argument("--records", nargs="+", required=True)
    p.add_argument("--deviations", default=None,
                   help="deviation CSV for slot-level extrema and histograms")
    p.add_argument("--out", default=None)
    return parser


def _cmd_params(args):
    if args.params_command == "list":
        for name in PRESET_NAMES:
            params = get_preset(name)
            tag = "INSECURE desk set" if params.is_insecure else "full-scale set"
            print(f"{name}: n={params.n} L={params.depth} "
                  f"logQ={params.log_q(params.depth):.0f} ({tag})")
        return 0
    if args.name:
        params = get_preset(args.name)
    elif args.params_file:
        params = load_params_file(args.params_file)
    else:
        raise ConfigurationError("give a preset name or --params-file")
    _warn_insecure(params)
    print(json.dumps(params.describe(), indent=2, sort_keys=True))
    return 0


def _cmd_keygen(args):
    from .ckks import keygen
    from .serialize import save_keys

    params = resolve_params(args.preset, args.params_file)
    _warn_insecure(params)
    steps = tuple(int(s) for s in args.rot_steps.split(",") if s.strip())
    keys = keygen(params, args.seed, rot_steps=steps)
    save_keys(args.out, keys)
    print(f"wrote {args.out} (seed={args.seed}, rotations={list(steps)})")
    return 0


def _cmd_run(args):
    spec = _spec_from_args(args, runs=1)
    _warn_insecure(spec.preset)
    record = run_single(spec, fault_literal=args.fault)
    print(json.dumps(record, indent=2, sort_keys=True))
    return 0


def _cmd_campaign(args):
    spec = _spec_from_args(args, runs=args.runs)
    _warn_insecure(spec.preset)
    result = run_campaign(
        spec, out_dir=args.out_dir, cache_dir=args.cache_dir,
        workers=args.workers, write_deviations=args.deviations_csv,
        progress=args.progress,
    )
    cell = result.summary["cells"][0]
    print(f"{result.records_path}: {cell['runs']} runs over "
          f"{result.site_cardinality} sites, epsilon={result.epsilon:.3e}",
          file=sys.stderr)
    print(json.dumps({"counts": cell["counts"], "rates": cell["rates"],
                      "max_deviation": cell["max_deviation"]}, sort_keys=True))
    return 0


def _cmd_bench(args):
    if args.kernels:
        table = kernel_bench()
    else:
        if not args.workload:
            raise ConfigurationError("bench needs --workload (or --kernels)")
        spec = _spec_from_args(args, protection="none", runs=1)
        _warn_insecure(spec.preset)
        modes = tuple(m.strip() for m in args.modes.split(",") if m.strip())
        table = overhead_bench(spec, modes=modes, repetitions=args.repetitions)
    text = json.dumps(table, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def _cmd_report(args):
    records = []
    for path in args.records:
        records.extend(parse_records(path))
    deviations = None
    if args.deviations:
        deviations = {run: devs for run, devs in read_deviation_rows(args.deviations)}
    doc = aggregate(records, deviations)
    text = summary_text(doc)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


_COMMANDS = {
    "params": _cmd_params,
    "keygen": _cmd_keygen,
    "run": _cmd_run,
    "campaign": _cmd_campaign,
    "bench": _cmd_bench,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except UnrecoverableFaultError as exc:
        print(f"unrecoverable fault: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
