"""Command line entry point: generate networks, run sweeps, report, verify."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import _kernels
from .detection import write_verdicts
from .netmodel import snapshot_to_docs
from .response import AlarmLog, load_policies

log = logging.getLogger("dpips")


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_gen(args) -> int:
    from .sim.experiment import ExperimentConfig, build_network

    cfg = ExperimentConfig(topology=args.topology, header_bits=args.header_bits, prefixes=args.prefixes,
                           rule_seed=args.seed)
    net = build_network(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    topo, rules = snapshot_to_docs(net.snapshot)
    rules["prefixes"] = net.rules.get("prefixes", {})
    _write_json(out / "topology.json", topo)
    _write_json(out / "rules.json", rules)
    print(f"{len(net.snapshot.devices)} devices, {net.snapshot.rule_count()} rules -> {out}")
    return 0


def cmd_sweep(args) -> int:
    from .sim.experiment import ExperimentConfig, run_experiment

    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    for key in ("topology", "implants", "trials", "sweeps"):
        val = getattr(args, key)
        if val is not None:
            doc[key] = val
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.policies:
        doc["policies"] = args.policies
    cfg = ExperimentConfig.from_dict(doc)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    alarm_path = out / "alarms.jsonl"
    alarm_path.unlink(missing_ok=True)
    alarms = AlarmLog(alarm_path)
    policies = load_policies(cfg.policies) if cfg.policies else []
    report = run_experiment(cfg, policies=policies, alarm_log=alarms)
    _write_json(out / "config.json", cfg.to_dict())
    _write_json(out / "metrics.json", report.to_dict())
    timings = dict(report.timings)
    timings["backend"] = _kernels.backend()
    _write_json(out / "timings.json", timings)
    write_verdicts([v for v in report.verdicts if not v.benign], out / "verdicts.jsonl")
    _print_summary(report.to_dict())
    return 0


def _print_summary(m: dict) -> None:
    acc = m.get("accuracy")
    print(f"implants: {m['implanted']} (reachable {m['reachable']}), detected: {m['detected']}, "
          f"accuracy: {'n/a' if acc is None else f'{acc:.4f}'}")
    print(f"false positives: {m['false_positives']}, non-benign verdicts: {m['non_benign_verdicts']}, "
          f"probes: {m['probes']}, sweeps: {m['sweeps']} over {m['trials']} trials")
    counts = ", ".join(f"{k}={v}" for k, v in m["verdict_counts"].items())
    print(f"verdicts: {counts}")


def cmd_report(args) -> int:
    path = Path(args.out_dir) / "metrics.json"
    if not path.exists():
        print(f"no metrics.json in {args.out_dir}", file=sys.stderr)
        return 1
    m = json.loads(path.read_text())
    _print_summary(m)
    for o in m["implants"]:
        status = "detected" if o["detected"] else ("missed" if o["reachable"] else "never fired on a probe")
        print(f"  trial {o['trial']}: {o['kind']:<10} {o['scope']:<15} at {o['device']}: {status}"
              f" (verdict {o['modal_kind']})")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_oracle

    try:
        report = run_oracle(args.networks, args.seed, args.max_devices, args.header_bits)
    except ValueError as exc:
        print(f"dpips verify: {exc}", file=sys.stderr)
        return 2
    print(f"{report.networks} networks, {report.pairs} (src, port, dst) cases, "
          f"{len(report.mismatches)} mismatches, {report.seconds:.1f}s [{_kernels.backend()}]")
    for m in report.mismatches[:10]:
        print(json.dumps(m))
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpips", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write topology and rules files for a network")
    g.add_argument("--topology", default="aarnet", help="aarnet, zib54, figure1, starN, or a topology file")
    g.add_argument("--prefixes", type=int, default=40)
    g.add_argument("--header-bits", type=int, default=32)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--out-dir", default="out")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("sweep", help="implant attacks, run detection sweeps, write metrics")
    s.add_argument("--config", help="experiment config JSON")
    s.add_argument("--topology")
    s.add_argument("--implants", type=int)
    s.add_argument("--trials", type=int)
    s.add_argument("--sweeps", type=int)
    s.add_argument("--policies", help="response policy XML")
    s.add_argument("--seed", type=int)
    s.add_argument("--out-dir", default="out")
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="summarize a sweep output directory")
    r.add_argument("--out-dir", default="out")
    r.set_defaults(func=cmd_report)

    v = sub.add_parser("verify", help="compare header-space results with exhaustive simulation")
    v.add_argument("--networks", type=int, default=40)
    v.add_argument("--max-devices", type=int, default=8)
    v.add_argument("--header-bits", type=int, default=12, help="largest header width to enumerate")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
