"""Operator surface: gen-data, train, detect, and evaluate subcommands.

Each command resolves its RunConfig from defaults, then an optional
`--config` file, then per-key flags (later wins), and writes a run
manifest echoing the resolved config next to its artifacts.

Exit codes: 0 ok, 2 config error, 3 I/O error, 4 contract violation.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import RunConfig, config_lines, describe_keys, load_config, parse_value
from .datagen import (build_dataset, load_dataset, load_scene_record,
                      sample_view)
from .errors import ConfigError, ContractError, FormatError
from .geometry import render_depth_gt
from .io_formats import load_scene, save_ply
from .network import load_checkpoint, save_checkpoint
from .oracle import write_round_log, write_summary
from .pipeline import detect_grasps, learned_detector, oracle_detector, run_benchmark
from .sampler import save_grasps
from .seeding import VIEW, derive_rng
from .training import train, write_loss_log

RUN_MANIFEST_MAGIC = "graspfield-run 1"
RUN_MANIFEST_NAME = "run-manifest.txt"


def write_run_manifest(out_dir: Path, command: str, cfg: RunConfig,
                       extras: dict[str, str] | None = None) -> None:
    """Echo the fully resolved config; no timestamps, byte-deterministic."""
    lines = [RUN_MANIFEST_MAGIC, f"command = {command}"]
    lines += config_lines(cfg)
    for key, value in sorted((extras or {}).items()):
        lines.append(f"{key} = {value}")
    (out_dir / RUN_MANIFEST_NAME).write_text("\n".join(lines) + "\n")


def _add_config_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", metavar="FILE",
                     help="key = value config file (overridden by flags)")
    group = sub.add_argument_group("config keys")
    for key, kind, default in describe_keys():
        group.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}",
                           metavar=kind.upper(),
                           help=f"{kind}, default {default}")


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = {}
    for key, _, _ in describe_keys():
        raw = getattr(args, f"cfg_{key}")
        if raw is not None:
            overrides[key] = parse_value(key, raw)
    return load_config(args.config, overrides)


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ----------------------------------------------------------------- commands

def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    build_dataset(str(out), cfg.n_scenes, root_seed=cfg.seed,
                  kind=cfg.scene_kind, regime=cfg.view_regime,
                  workspace_size=cfg.workspace_size, support_z=cfg.support_z,
                  workers=cfg.resolved_workers(),
                  max_per_class=cfg.max_grasps_per_class)
    write_run_manifest(out, "gen-data", cfg)
    print(f"wrote {cfg.n_scenes} scene records to {out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    _, records = load_dataset(args.dataset)
    network, log = train(records, cfg.train_config())
    save_checkpoint(out / "model.ckpt", network)
    write_loss_log(out / "loss.csv", log)
    write_run_manifest(out, "train", cfg, {"dataset_scenes": str(len(records))})
    print(f"trained {cfg.epochs} epochs on {len(records)} scenes; "
          f"final loss {log[-1].total:.6f}")
    return 0


def cmd_detect(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    network, _ = load_checkpoint(args.checkpoint)
    if args.record is not None:
        depth = load_scene_record(args.record).depth
    else:
        scene = load_scene(args.scene)
        camera = sample_view(scene, derive_rng(cfg.seed, VIEW), cfg.view_regime)
        depth = render_depth_gt(scene, camera)
    result = detect_grasps(network, depth, cfg.detector_config(), seed=cfg.seed)
    save_grasps(out / "candidates.csv", result.grasps)
    save_ply(out / "cloud.ply", result.cloud)
    write_run_manifest(out, "detect", cfg,
                       {"n_candidates": str(len(result.grasps))})
    best = max((g.quality for g in result.grasps), default=float("nan"))
    print(f"{len(result.grasps)} candidates (best quality {best:.3f}); "
          f"cloud has {len(result.cloud.points)} points")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    if args.oracle:
        detect = oracle_detector()
    else:
        if args.checkpoint is None:
            raise ConfigError("evaluate needs --checkpoint (or --oracle)")
        network, _ = load_checkpoint(args.checkpoint)
        detect = learned_detector(network, cfg.detector_config(),
                                  regime=cfg.view_regime)
    bench = run_benchmark(detect, seeds=cfg.seed_list(),
                          n_rounds=cfg.eval_rounds, kind=cfg.scene_kind,
                          workspace_size=cfg.workspace_size,
                          support_z=cfg.support_z)
    write_round_log(out / "rounds.csv", bench.log_entries())
    row = bench.summary_row(cfg.view_regime)
    write_summary(out / "summary.csv", [row])
    write_run_manifest(out, "evaluate", cfg,
                       {"detector": "oracle" if args.oracle else "learned"})
    print(f"{cfg.view_regime}: GSR {row[1]:.2f} +/- {row[2]:.2f}, "
          f"DR {row[3]:.2f} +/- {row[4]:.2f}")
    return 0


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graspfield",
        description="Grasp detection from a single depth view via a learned "
                    "occupancy field and surface rendering.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a labeled scene dataset")
    gen.add_argument("--out", required=True, metavar="DIR")
    _add_config_flags(gen)
    gen.set_defaults(func=cmd_gen_data)

    tr = sub.add_parser("train", help="train the network on a dataset")
    tr.add_argument("--dataset", required=True, metavar="DIR")
    tr.add_argument("--out", required=True, metavar="DIR")
    _add_config_flags(tr)
    tr.set_defaults(func=cmd_train)

    det = sub.add_parser("detect", help="detect grasps in a single view")
    det.add_argument("--checkpoint", required=True, metavar="FILE")
    src = det.add_mutually_exclusive_group(required=True)
    src.add_argument("--scene", metavar="FILE",
                     help="scene text file; a view is sampled per config")
    src.add_argument("--record", metavar="FILE",
                     help="scene record holding a stored depth view")
    det.add_argument("--out", required=True, metavar="DIR")
    _add_config_flags(det)
    det.set_defaults(func=cmd_detect)

    ev = sub.add_parser("evaluate", help="run declutter rounds, report GSR/DR")
    ev.add_argument("--checkpoint", metavar="FILE")
    ev.add_argument("--oracle", action="store_true",
                    help="use the ground-truth pass-through detector")
    ev.add_argument("--out", required=True, metavar="DIR")
    _add_config_flags(ev)
    ev.set_defaults(func=cmd_evaluate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except ContractError as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
