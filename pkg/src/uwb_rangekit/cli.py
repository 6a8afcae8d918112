"""uwb-rangekit command line: campaign, analyze, pke."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields
from pathlib import Path
from typing import Sequence

from .campaign import CampaignAborted, RecordingError, SweepPlan, load_recording, run_campaign
from .channel import ProfileError, load_profiles
from .export import export_report
from .pke import PkePolicy
from .scenario import ScenarioError, scenario_from_dict, simulate_entry_scenario
from .sources import SimulatedDevice
from .stats import compute_metrics

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_POLICY = 4
PROFILES_ENV = "UWB_RANGEKIT_PROFILES"

_PLAN_ALIASES = {"samples": "samples_per_position", "timeout": "position_timeout_s"}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def parse_pairs(items: Sequence[str], what: str) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key or not value:
            raise CliError(EXIT_USAGE, f"{what} override {item!r} is not key=value")
        out[key] = value
    return out


def plan_from_overrides(pairs: dict[str, str]) -> SweepPlan:
    types = {f.name: f.type for f in fields(SweepPlan)}
    values = {}
    for key, text in pairs.items():
        name = key.replace("-", "_")
        name = _PLAN_ALIASES.get(name, name)
        if name not in types:
            raise CliError(EXIT_USAGE, f"unknown plan key {key!r}")
        try:
            values[name] = int(text) if types[name] in ("int", int) else float(text)
        except ValueError:
            raise CliError(EXIT_USAGE, f"plan key {key!r} needs a number, got {text!r}") from None
    try:
        return SweepPlan(**values)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, f"invalid plan: {exc}") from None


def _need_seed(args) -> int:
    if args.seed is None:
        raise CliError(EXIT_USAGE, "--seed is required for simulation commands")
    return args.seed


def _say(args, text: str) -> None:
    if not args.quiet:
        print(text)


def cmd_campaign(args) -> int:
    path = args.profiles or os.environ.get(PROFILES_ENV)
    try:
        library = load_profiles(path)
    except (OSError, ProfileError) as exc:
        raise CliError(EXIT_USAGE, f"cannot load profiles: {exc}") from None
    if args.device not in library:
        raise CliError(EXIT_USAGE, f"unknown device {args.device!r}; known: {', '.join(library)}")
    devset = library[args.device]
    cap = devset.cap()
    if cap is not None and args.distance > cap.cap_m:
        raise CliError(EXIT_USAGE, f"{args.distance:g} m is beyond max distance cap of {cap.cap_m:g} m for {args.device}")
    try:
        profile = devset.get(args.environment, args.distance)
    except KeyError as exc:
        raise CliError(EXIT_USAGE, f"missing profile cell: {exc.args[0]}") from None
    seed = _need_seed(args)
    plan = plan_from_overrides(parse_pairs(args.plan, "plan"))
    out = Path(args.out or f"{args.device}-{args.environment}-{args.distance:g}m.zip")
    settings = {
        "device": args.device,
        "environment": args.environment,
        "true_distance_m": args.distance,
    }
    try:
        rec = run_campaign(plan, SimulatedDevice(profile), out, seed, settings)
    except CampaignAborted as exc:
        raise CliError(EXIT_DATA, f"campaign aborted, partial recording in {exc.path}: {exc}") from None
    failed = sum(len(v) < plan.samples_per_position for v in rec.data.values())
    _say(args, f"positions={len(rec.data)} samples={rec.sample_count()} failed={failed} -> {out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    try:
        rec = load_recording(args.recording)
    except (OSError, RecordingError) as exc:
        raise CliError(EXIT_DATA, f"cannot read recording: {exc}") from None
    try:
        report = compute_metrics(rec, args.true_distance, args.band, args.min_samples)
    except ValueError as exc:
        raise CliError(EXIT_DATA, str(exc)) from None
    for phi in args.slice_phi:
        if phi not in report.polar_slices:
            raise CliError(EXIT_USAGE, f"--slice-phi {phi:g} is not part of the recorded plan")
    prefix = Path(args.out) if args.out else Path(args.recording).with_suffix("")
    prefix.parent.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt, suffix in (("csv", ".csv"), ("json", ".json")):
        target = prefix.with_name(prefix.name + suffix)
        export_report(report, fmt, target)
        written.append(target)
    if args.slice_phi:
        target = prefix.with_name(prefix.name + ".svg")
        export_report(report, "svg-polar", target, sorted(set(args.slice_phi)))
        written.append(target)

    def fmt(v):
        return "undefined" if v is None else f"{v:.4f}"

    _say(
        args,
        f"mae={fmt(report.mae_m)} sd={fmt(report.sd_m)} rmse={fmt(report.rmse_m)} "
        f"accuracy={fmt(report.accuracy_frac)} failure={report.failure_frac:.4f} "
        f"-> {', '.join(map(str, written))}",
    )
    return EXIT_OK


def cmd_pke(args) -> int:
    seed = _need_seed(args)
    try:
        doc = json.loads(Path(args.scenario).read_text())
        kwargs = scenario_from_dict(doc)
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"cannot read scenario: {exc}") from None
    except (json.JSONDecodeError, ScenarioError) as exc:
        raise CliError(EXIT_USAGE, f"malformed scenario: {exc}") from None
    try:
        policy = PkePolicy().with_overrides(parse_pairs(args.policy, "policy"))
    except ValueError as exc:
        raise CliError(EXIT_USAGE, f"invalid policy: {exc}") from None
    result = simulate_entry_scenario(policy=policy, seed=seed, **kwargs)
    text = result.to_jsonl()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    summary = result.summary()
    if args.out:
        _say(args, f"cycles={summary['cycles']} unlocks={summary['unlocks']} suspends={summary['suspends']} -> {args.out}")
    if args.fail_on_suspend and result.suspends:
        return EXIT_POLICY
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="random seed (required for campaign and pke)")
    common.add_argument("--profiles", help=f"profile file (default: ${PROFILES_ENV} or the bundled set)")
    common.add_argument("--out", help="output path")
    common.add_argument("--quiet", action="store_true", help="suppress summary lines")

    parser = argparse.ArgumentParser(prog="uwb-rangekit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("campaign", parents=[common], help="simulate a gimbal sweep and write a recording")
    p.add_argument("--device", required=True)
    p.add_argument("--environment", required=True)
    p.add_argument("--distance", type=float, required=True, help="true distance in metres")
    p.add_argument("--plan", nargs="*", default=[], metavar="KEY=VALUE",
                   help="sweep overrides, e.g. theta-step=90 phi-step=90 samples=10")
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("analyze", parents=[common], help="compute metrics for a recording")
    p.add_argument("recording")
    p.add_argument("--true-distance", type=float)
    p.add_argument("--band", type=float, default=0.10)
    p.add_argument("--min-samples", type=int, default=10)
    p.add_argument("--slice-phi", type=float, action="append", default=[])
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("pke", parents=[common], help="run a keyless-entry scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--policy", nargs="*", default=[], metavar="KEY=VALUE")
    p.add_argument("--fail-on-suspend", action="store_true")
    p.set_defaults(func=cmd_pke)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"uwb-rangekit: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
