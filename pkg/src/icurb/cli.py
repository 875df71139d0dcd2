"""Command-line entry point: synth -> train -> infer -> eval -> render.

Exit codes: 0 success, 1 usage, 2 bad data or file format, 3 training diverged.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import formats
from .baseline import naive_graph
from .config import ABLATIONS, AppConfig, ConfigError
from .env import CurbGraph
from .metrics import evaluate
from .policy import CheckpointError, MlpPolicy
from .synth import GenerationError, GroundTruth, make_scene
from .trainer import ImageTrainingError, RunLog, evaluate_policy, infer_graph, train_run

log = logging.getLogger("icurb")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(args) -> AppConfig:
    cfg = AppConfig.load(args.config) if getattr(args, "config", None) else AppConfig()
    sets = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        sets[k.strip()] = v.strip()
    if getattr(args, "ablate", None):
        sets.update(ABLATIONS[args.ablate])
    if getattr(args, "seed", None) is not None:
        sets["seed"] = str(args.seed)
    if sets:
        try:
            cfg = cfg.override(sets, "command line")
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
    return cfg


# -- subcommands -----------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    scfg = cfg.synth_config()
    for k in range(args.count):
        seed = cfg.seed + k
        sc = make_scene(seed, scfg)
        formats.write_scene(out, f"scene_{k:04d}", sc, seed=seed)
        if args.pgm:
            formats.write_pgm(out / f"scene_{k:04d}.seg.pgm", sc.seg_soft)
    (out / "synth.config").write_text(cfg.to_text())
    print(f"wrote {args.count} scenes to {out}")
    return EXIT_OK


def _scenes(directory):
    paths = formats.list_scenes(directory)
    if not paths:
        raise formats.FormatError(f"{directory}: no scene manifests found")
    return [formats.read_scene(p) for p in paths]


def cmd_train(args) -> int:
    cfg = _load_config(args)
    scenes = _scenes(args.data)
    H, W = scenes[0].gt.height, scenes[0].gt.width
    tcfg = cfg.train_config(H, W)
    held = _scenes(args.eval) if args.eval else None
    if held is None:
        tcfg = tcfg.__class__(**{**tcfg.__dict__, "eval_every": 0})
    runlog = RunLog()
    runlog.add(phase="config", config=cfg.as_dict(), data=str(args.data), scenes=len(scenes))
    t0 = time.perf_counter()
    policy, rl = train_run(scenes, tcfg, held)
    runlog.records.extend(rl.records)
    runlog.add(phase="done", seconds=round(time.perf_counter() - t0, 3))
    out = Path(args.out)
    policy.save(out)
    Path(f"{out}.log.jsonl").write_text(runlog.to_jsonl())
    Path(f"{out}.config").write_text(cfg.to_text())
    if args.plot:
        from .plotting import render_training

        render_training(args.plot, runlog.records)
    last = runlog.evals()[-1] if runlog.evals() else None
    msg = f"trained on {len(scenes)} scenes -> {out}"
    if last:
        msg += f"  held-out F1(2)={last['f1_2']:.3f} CC={last['cc']:.3f}"
    print(msg)
    return EXIT_OK


def _policy_env(args, cfg: AppConfig, policy: MlpPolicy, H: int, W: int):
    if cfg.d is not None and cfg.d != policy.d:
        raise UsageError(f"config d={cfg.d} disagrees with checkpoint d={policy.d}")
    return AppConfig.override(cfg, {"d": str(policy.d)}).env_config(H, W)


def cmd_infer(args) -> int:
    cfg = _load_config(args)
    policy = MlpPolicy.load(args.ckpt)
    sc = formats.read_scene(args.scene)
    env = _policy_env(args, cfg, policy, sc.gt.height, sc.gt.width)
    graph = infer_graph(policy, sc, env, cfg.candidate_config())
    formats.write_graph(args.out, graph)
    print(f"{len(graph.instances)} chains, {len(graph.vertices)} vertices -> {args.out}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    cfg = _load_config(args)
    sc = formats.read_scene(args.scene)
    graph = naive_graph(sc.seg_soft, cfg.candidate_config())
    formats.write_graph(args.out, graph)
    print(f"{len(graph.instances)} chains, {len(graph.vertices)} vertices -> {args.out}")
    return EXIT_OK


def _as_gt(obj, like=None) -> GroundTruth:
    if isinstance(obj, GroundTruth):
        return obj
    polys = [pts for pts in obj.chain_points() if len(pts)]
    if not polys:
        raise formats.FormatError("reference graph has no instances")
    H = like.height if like is not None else int(max(p[:, 0].max() for p in polys)) + 1
    W = like.width if like is not None else int(max(p[:, 1].max() for p in polys)) + 1
    return GroundTruth.from_polylines(polys, H, W)


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    taus = cfg.taus
    if args.tau:
        try:
            taus = tuple(float(t) for t in args.tau.split(","))
        except ValueError:
            raise UsageError(f"--tau expects a comma list of numbers, got {args.tau!r}") from None
        if not taus or any(t <= 0 for t in taus):
            raise UsageError("--tau values must be positive")
    pred = formats.read_pred_or_gt(args.pred)
    if isinstance(pred, GroundTruth):
        pred = formats.gt_as_graph(pred)
    gt = _as_gt(formats.read_pred_or_gt(args.gt))
    if not gt.instances:
        raise formats.FormatError(f"{args.gt}: ground truth has no instances")
    rep = evaluate(pred, gt, taus)
    print(rep.table())
    if args.json:
        rec = rep.as_record()
        rec.update(pred=str(args.pred), gt=str(args.gt))
        Path(args.json).write_text(json.dumps(rec, indent=1, sort_keys=True) + "\n")
    if args.plot:
        from .plotting import render_metrics

        render_metrics(args.plot, rep)
    return EXIT_OK


def cmd_render(args) -> int:
    from .plotting import render_overlay

    sc = formats.read_scene(args.scene)
    graph = formats.read_graph(args.graph) if args.graph else None
    bg = {"seg": sc.seg_soft, "heat": sc.heatmap}.get(args.background)
    if bg is None:
        bg = sc.features[int(args.background)]
    render_overlay(args.out, bg, sc.gt, graph, title=args.title or "")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_score(args) -> int:
    """Held-out scoring of a checkpoint over a scene directory."""
    cfg = _load_config(args)
    policy = MlpPolicy.load(args.ckpt)
    scenes = _scenes(args.data)
    env = _policy_env(args, cfg, policy, scenes[0].gt.height, scenes[0].gt.width)
    m = evaluate_policy(policy, scenes, env, cfg.candidate_config(), "candidates", cfg.taus)
    for k in sorted(m):
        print(f"{k}\t{m[k]:.4f}")
    return EXIT_OK


# -- wiring ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="icurb", description="Imitation-learned curb graph extraction on synthetic scenes.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="flat key=value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")

    sp = sub.add_parser("synth", help="generate synthetic scenes")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--pgm", action="store_true", help="also export the segmentation channel as PGM")
    sp.set_defaults(fn=cmd_synth)

    sp = sub.add_parser("train", help="train a policy with DAgger")
    common(sp)
    sp.add_argument("--data", required=True, help="scene directory")
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--eval", help="held-out scene directory for periodic evaluation")
    sp.add_argument("--ablate", choices=sorted(ABLATIONS))
    sp.add_argument("--seed", type=int)
    sp.add_argument("--plot", help="write loss / evaluation curves to this figure file")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("infer", help="grow a graph on one scene")
    common(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--scene", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_infer)

    sp = sub.add_parser("eval", help="score a predicted graph against ground truth")
    common(sp)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--tau", help="comma-separated tolerances, default 1,2,5,10")
    sp.add_argument("--json", help="write the machine-readable record here")
    sp.add_argument("--plot", help="write a P/R/F1 figure here")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("baseline", help="threshold + skeleton baseline graph")
    common(sp)
    sp.add_argument("--scene", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_baseline)

    sp = sub.add_parser("render", help="SVG overlay of a graph on a scene")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--graph")
    sp.add_argument("--out", required=True)
    sp.add_argument("--background", default="seg", help="seg, heat, or a feature channel index")
    sp.add_argument("--title")
    sp.set_defaults(fn=cmd_render)

    sp = sub.add_parser("score", help="mean held-out metrics of a checkpoint over a scene directory")
    common(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    sp.set_defaults(fn=cmd_score)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"icurb {args.cmd}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ImageTrainingError as exc:
        print(f"icurb {args.cmd}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (formats.FormatError, ConfigError, CheckpointError, GenerationError, OSError) as exc:
        print(f"icurb {args.cmd}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
