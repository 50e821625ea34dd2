"""Command-line entry point.

One subcommand per pipeline stage plus `run` (everything in order),
`verify` (re-hash a finished run), and `synth` (generate a synthetic
dataset with ground truth).  All stage subcommands share the same shape:

    splatforge <stage> --config pipeline.json [--out DIR]

The dataset root is the directory containing the config file; the run
directory defaults to `paths.out_dir` inside it.  Exit codes: 0 success,
1 error, 2 quality-gate trip.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from splatforge import pipeline
from splatforge.config import PipelineConfig, load_config, save_config
from splatforge.errors import OdometryBreak, SplatforgeError
from splatforge.ledger import verify_run
from splatforge.synthetic import default_scene, gen_synthetic

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_GATE = 2

_STAGE_COMMANDS = {
    "keyframes": "keyframes",
    "cubemap": "cubemap",
    "ingest-sfm": "ingest_sfm",
    "match": "match",
    "odometry": "odometry",
    "colorize": "colorize",
    "prism": "prism",
    "align": "align",
    "export": "export",
}


def _add_config_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="pipeline JSON config")
    sub.add_argument("--out", default=None, help="run directory (default: paths.out_dir under the config's directory)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splatforge", description=__doc__.split("\n")[0])
    subs = parser.add_subparsers(dest="command", required=True)

    run = subs.add_parser("run", help="run every stage in order")
    _add_config_args(run)

    for command in _STAGE_COMMANDS:
        sub = subs.add_parser(command, help=f"run the {command} stage")
        _add_config_args(sub)
        if command == "align":
            sub.add_argument(
                "--init-from-trajectory",
                action="store_true",
                help="seed alignment from trajectory metadata and skip global registration",
            )
        if command == "prism":
            sub.add_argument("--k", default=None, help="comma-separated capacity sweep, e.g. 1,5,10")
            sub.add_argument("--bins", type=int, default=None, help="color bins per channel")

    verify = subs.add_parser("verify", help="re-hash artifacts and check stage chaining")
    _add_config_args(verify)

    synth = subs.add_parser("synth", help="generate a synthetic dataset with ground truth")
    synth.add_argument("--out", required=True, help="dataset output directory")
    synth.add_argument("--frames", type=int, default=24, help="camera frames on the orbit (default 24)")
    synth.add_argument("--seed", type=int, default=7, help="scene seed (default 7)")
    synth.add_argument("--face-size", type=int, default=128, help="fabricated sparse-model face resolution")
    synth.add_argument("--config-out", default=None, help="also write a default pipeline config here")
    return parser


def _resolve_dirs(args) -> tuple[PipelineConfig, str, str]:
    cfg = load_config(args.config)
    data_root = os.path.dirname(os.path.abspath(args.config))
    run_dir = args.out if args.out else os.path.join(data_root, cfg.paths.out_dir)
    return cfg, data_root, run_dir


def _apply_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    if getattr(args, "init_from_trajectory", False):
        cfg = dataclasses.replace(
            cfg, registration=dataclasses.replace(cfg.registration, init_from_trajectory=True)
        )
    if getattr(args, "k", None):
        k_values = tuple(int(part) for part in args.k.split(","))
        cfg = dataclasses.replace(cfg, prism=dataclasses.replace(cfg.prism, k_values=k_values))
    if getattr(args, "bins", None):
        cfg = dataclasses.replace(
            cfg, prism=dataclasses.replace(cfg.prism, bins_per_channel=args.bins)
        )
    return cfg


def _metric_line(metrics: dict, limit: int = 6) -> str:
    parts = []
    for key, value in metrics.items():
        if isinstance(value, float):
            parts.append(f"{key}={value:.4f}")
        else:
            parts.append(f"{key}={value}")
        if len(parts) == limit:
            break
    return " ".join(parts)


def _cmd_run(args) -> int:
    cfg, data_root, run_dir = _resolve_dirs(args)
    outcome = pipeline.run_all(cfg, data_root, run_dir)
    for ledger in outcome.stages:
        print(f"[{ledger.stage}] {_metric_line(ledger.metrics)}")
    for gate in outcome.gates:
        print(f"gate trip: {gate}")
    if outcome.stopped_at:
        print(f"stopped at stage: {outcome.stopped_at}")
    print(f"manifest: {outcome.manifest_path}")
    return EXIT_OK if outcome.ok else EXIT_GATE


def _cmd_stage(args) -> int:
    stage = _STAGE_COMMANDS[args.command]
    cfg, data_root, run_dir = _resolve_dirs(args)
    cfg = _apply_overrides(cfg, args)
    try:
        ledger = pipeline.run_stage(stage, data_root, run_dir, cfg)
    except OdometryBreak as exc:
        print(f"[{stage}] odometry break at scan {exc.index}: fitness {exc.fitness:.4f}")
        return EXIT_GATE
    print(f"[{stage}] {_metric_line(ledger.metrics)}")
    if ledger.metrics.get("gate_trips") or ledger.metrics.get("gate_tripped"):
        return EXIT_GATE
    return EXIT_OK


def _cmd_verify(args) -> int:
    _, _, run_dir = _resolve_dirs(args)
    report = verify_run(run_dir)
    for check in report.checks:
        status = "ok" if check.passed else "FAIL"
        detail = f" ({check.detail})" if check.detail and not check.passed else ""
        print(f"{status:4s} {check.stage}: {check.name}{detail}")
    print(f"{sum(c.passed for c in report.checks)}/{len(report.checks)} checks passed")
    return EXIT_OK if report.ok else EXIT_ERROR


def _cmd_synth(args) -> int:
    spec = default_scene(seed=args.seed, n_frames=args.frames)
    truth = gen_synthetic(spec, args.out, face_size=args.face_size)
    print(f"dataset written to {args.out} ({spec.n_frames} frames, {len(truth.scan_timestamps)} sweeps)")
    if args.config_out:
        save_config(PipelineConfig(), args.config_out)
        print(f"default config written to {args.config_out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "verify":
            return _cmd_verify(args)
        if args.command == "synth":
            return _cmd_synth(args)
        return _cmd_stage(args)
    except SplatforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
