"""Command line entry point (``hvf``)."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import harness
from .dynamics import InteractionDataset, fit_surrogate
from .harness import ABLATIONS, METHODS, ExperimentConfig, ResultRow, ResultTable
from .raster import write_ppm

log = logging.getLogger("hvf")


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "full_scale", False):
        cfg = cfg.full_scale()
    return cfg.override(base_seed=args.seed, trials=getattr(args, "trials", None),
                        num_subgoals=getattr(args, "k", None), aggregate_mode=getattr(args, "mode", None),
                        dynamics=getattr(args, "dynamics", None), dataset=getattr(args, "dataset", None),
                        out=args.out)


def _write_json(path, obj) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _manifest(cfg: ExperimentConfig, command: str, **extra) -> dict:
    return {"command": command, "config-hash": cfg.config_hash, "run_id": cfg.run_id,
            "config": cfg.values, **extra}


def cmd_config(args) -> int:
    sys.stdout.write(_config(args).to_text())
    return 0


def cmd_collect(args) -> int:
    cfg = _config(args)
    episodes = args.episodes or cfg.collect_episodes
    horizon = args.horizon or cfg.collect_horizon
    data = harness.collect(cfg, episodes, horizon, cfg.base_seed)
    out = os.path.join(cfg.out, "dataset")
    rec, man = data.save(out)
    print(f"wrote {data.num_transitions} transitions to {rec} (sha256 {data.content_hash()[:16]})")
    return 0


def cmd_fit_surrogate(args) -> int:
    cfg = _config(args)
    data = InteractionDataset.load(args.dataset)
    model = fit_surrogate(data, k=cfg.surrogate_k, dataset_ref=os.path.abspath(args.dataset))
    path = os.path.join(cfg.out, "surrogate.json")
    _write_json(path, model.to_json())
    print(f"surrogate k={model.k} holdout mean error {model.holdout_error:.5f}; wrote {path}")
    return 0


def cmd_plan(args) -> int:
    cfg = _config(args)
    difficulty = (args.difficulty or ["hard"])[0]
    cell = harness.Cell("hvf", difficulty, cfg.hvf)
    rec = harness.run_episode(cfg, cell, 0)
    if "error" in rec:
        print(rec["error"], file=sys.stderr)
        return 1
    outdir = os.path.join(cfg.out, cfg.run_id, f"plan-{difficulty}")
    _write_json(os.path.join(outdir, "plan.json"), dict(rec, **_manifest(cfg, "plan")))
    model, gen = harness._models(cfg)
    scene = harness.scene_for(cfg, difficulty, 0)
    for i, z in enumerate(np.asarray(rec["latents"]).reshape(rec["k"], -1)):
        write_ppm(os.path.join(outdir, f"subgoal_{i}.ppm"), gen.decode(z, scene))
    print(f"{difficulty} K={rec['k']} success={rec['success']} steps={rec['steps']} "
          f"subgoals={np.round(rec['positions'], 3).tolist()}; wrote {outdir}")
    return 0


def _finish(cfg: ExperimentConfig, table: ResultTable, command: str, outdir: str) -> None:
    from .report import emit_report

    timing = os.environ.get("HVF_TIMING") == "1"
    paths = emit_report(table, outdir, include_timing=timing, config_hash=cfg.config_hash)
    _write_json(os.path.join(outdir, "rows.json"), [dataclasses.asdict(r) for r in table])
    _write_json(os.path.join(outdir, "manifest.json"), _manifest(cfg, command))
    for r in table:
        flag = "" if r.complete else "  (incomplete)"
        print(f"{r.sweep:16s} {r.method:13s} {r.difficulty:6s} K={r.k:<2d} {r.mode:4s} D={r.samples:<4d} "
              f"H={r.horizon:<2d} success={r.success_rate:.2f} steps={r.mean_steps:.1f}{flag}")
    print("wrote " + ", ".join(paths))


def _fresh_records(path: str) -> str:
    if os.path.exists(path):
        os.remove(path)
    return path


def cmd_bench(args) -> int:
    cfg = _config(args)
    outdir = os.path.join(cfg.out, cfg.run_id)
    methods = args.method or list(METHODS)
    diffs = args.difficulty or ["easy", "medium", "hard"]
    table = harness.run_benchmark(cfg, methods, diffs, dump_frames=args.dump_frames,
                                  records_path=_fresh_records(os.path.join(outdir, "episodes.jsonl")))
    _finish(cfg, table, "bench", outdir)
    return 0 if all(r.complete for r in table) else 2


def cmd_ablate(args) -> int:
    cfg = _config(args)
    outdir = os.path.join(cfg.out, cfg.run_id, args.which)
    table = harness.run_ablation(args.which, cfg, dump_frames=args.dump_frames,
                                 records_path=_fresh_records(os.path.join(outdir, "episodes.jsonl")))
    _finish(cfg, table, f"ablate {args.which}", outdir)
    return 0 if all(r.complete for r in table) else 2


def cmd_report(args) -> int:
    from .report import emit_report

    table = ResultTable()
    for run in args.runs:
        path = os.path.join(run, "rows.json")
        try:
            with open(path) as fh:
                table.rows += [ResultRow(**r) for r in json.load(fh)]
        except OSError as exc:
            raise OSError(f"cannot read {path}: {exc}") from exc
    paths = emit_report(table, args.out, include_timing=os.environ.get("HVF_TIMING") == "1")
    print("wrote " + ", ".join(paths))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file ([geometry], [raster], [mpc], [hvf], [run])")
    common.add_argument("--seed", type=int, help="base seed (overrides config)")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--dynamics", choices=["oracle", "surrogate"])
    common.add_argument("--dataset", help="dataset directory for surrogate dynamics (default: collect one)")
    common.add_argument("--full-scale", action="store_true",
                        help="64x64 frames, full inner planner during search, surrogate dynamics")
    common.add_argument("-v", "--verbose", action="store_true")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--trials", type=int)
    run.add_argument("--k", type=int, help="number of subgoals")
    run.add_argument("--mode", choices=["max", "mean"])
    run.add_argument("--difficulty", action="append", choices=["easy", "medium", "hard"])
    run.add_argument("--dump-frames", action="store_true", help="write PPM frames of every episode")

    p = argparse.ArgumentParser(prog="hvf", description="Hierarchical visual foresight on a 2D maze.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("config", parents=[common], help="print the resolved config as INI")
    s.set_defaults(func=cmd_config)

    s = sub.add_parser("collect", parents=[common], help="random-action interaction data")
    s.add_argument("--episodes", type=int)
    s.add_argument("--horizon", type=int)
    s.set_defaults(func=cmd_collect)

    s = sub.add_parser("fit-surrogate", parents=[common], help="fit the k-NN dynamics surrogate")
    s.add_argument("dataset", help="directory written by 'collect'")
    s.set_defaults(func=cmd_fit_surrogate)

    s = sub.add_parser("plan", parents=[common, run], help="one episode; dumps subgoal frames")
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("bench", parents=[common, run], help="paired benchmark over methods and difficulties")
    s.add_argument("--method", action="append", choices=list(METHODS))
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("ablate", parents=[common, run], help="hard-difficulty sweep of one axis")
    s.add_argument("which", choices=list(ABLATIONS))
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("report", help="merge run directories into one report")
    s.add_argument("runs", nargs="+", help="directories containing rows.json")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"hvf: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
