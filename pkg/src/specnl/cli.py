"""Command-line surface.

  verify  run the correctness suites; exit 0 iff all pass
  train   train per a JSON config; writes metrics CSV + SNL1 checkpoint
  bench   parameter / MAC accounting for a block configuration
  attn    export attention heatmaps (PGM + raw CSV) from a trained checkpoint

Exit codes: 0 success, 1 suite or training failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import checkpoint as ckpt_mod
from . import fileio
from .backbone import backbone_forward
from .blocks import BlockConfig, count_bn_params, count_flops, count_params
from .config import ConfigError, config_from_dict, config_to_dict, load_config
from .train import TrainingDiverged, _block_config_from, train
from .verify import SUITES, run_suites

USAGE_ERROR = 2
FAILURE = 1


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="specnl", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    vp = sub.add_parser("verify", help="run correctness suites")
    vp.add_argument("--suite", choices=sorted(SUITES) + ["all"], default="all")
    vp.add_argument("--trials", type=int, default=None,
                    help="override per-suite trial count")
    vp.add_argument("--seed", type=int, default=0)
    vp.add_argument("--out", default=".", help="directory for failing-case dumps")

    tp = sub.add_parser("train", help="train per a JSON experiment config")
    tp.add_argument("--config", required=True)
    tp.add_argument("--seed", type=int, default=None, help="override config seed")
    tp.add_argument("--variant", default=None, help="override config variant")
    tp.add_argument("--strict-deterministic", action="store_true",
                    help="force single-threaded, bit-reproducible execution")

    bp = sub.add_parser("bench", help="parameter and MAC accounting")
    bp.add_argument("--variant", required=True)
    bp.add_argument("--c1", type=int, required=True)
    bp.add_argument("--cs", type=int, required=True)
    bp.add_argument("--hw", default="14x14", help="spatial extent HxW (default 14x14)")
    bp.add_argument("--kernel", default="embedded-gaussian")

    apn = sub.add_parser("attn", help="export attention heatmaps")
    apn.add_argument("--checkpoint", required=True)
    apn.add_argument("--config", required=True)
    apn.add_argument("--input", required=True,
                     help="SNL1 file with an 'input' entry of shape (h, w) or (c, h, w)")
    apn.add_argument("--positions", required=True,
                     help="comma-separated query positions, e.g. 0,5,12")
    apn.add_argument("--out", default=".")
    return ap


def _cmd_verify(args) -> int:
    names = sorted(SUITES) if args.suite == "all" else [args.suite]
    results = run_suites(names, trials=args.trials, seed=args.seed)
    ok = True
    for res in results:
        print(res.line())
        if not res.passed:
            ok = False
            if res.failure_payload:
                os.makedirs(args.out, exist_ok=True)
                dump = os.path.join(args.out, f"verify_fail_{res.name}.snl1")
                ckpt_mod.save_checkpoint(
                    dump, {k: np.asarray(v, dtype=np.float64)
                           for k, v in res.failure_payload.items()})
                print(f"  failing case written to {dump}")
    print("verify:", "all suites passed" if ok else "FAILURES above")
    return 0 if ok else FAILURE


def _cmd_train(args) -> int:
    doc = config_to_dict(load_config(args.config))
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.variant is not None:
        doc["variant"] = args.variant
    if args.strict_deterministic:
        doc["strict_deterministic"] = True
    cfg = config_from_dict(doc)

    out_dir = cfg.output_dir
    with fileio.output_lock(out_dir):
        try:
            result = train(cfg)
        except TrainingDiverged as err:
            print(f"error: {err}", file=sys.stderr)
            fileio.write_metrics_csv(os.path.join(out_dir, "metrics.csv"), err.history)
            state = err.state
            ckpt_mod.save_checkpoint(os.path.join(out_dir, "checkpoint.snl1"),
                                     {**state.params, **state.buffers})
            print(f"last good state (epoch {state.epoch}) retained in {out_dir}",
                  file=sys.stderr)
            return FAILURE
        fileio.write_metrics_csv(os.path.join(out_dir, "metrics.csv"), result.history)
        state = result.state
        ckpt_mod.save_checkpoint(os.path.join(out_dir, "checkpoint.snl1"),
                                 {**state.params, **state.buffers})
    if result.history:
        last = result.history[-1]
        print(f"trained {last[0]} epochs: loss={last[2]:.4f} top1={last[3]:.4f} top5={last[4]:.4f}")
    else:
        print("trained 0 epochs: checkpoint equals initialization")
    print(f"wrote {os.path.join(out_dir, 'metrics.csv')} and checkpoint.snl1")
    return 0


def _cmd_bench(args) -> int:
    try:
        h, w = (int(v) for v in args.hw.lower().split("x"))
    except ValueError:
        print(f"error: --hw expects HxW, got {args.hw!r}", file=sys.stderr)
        return USAGE_ERROR
    spatial = (h, w) if args.variant == "CC" else None
    cfg = BlockConfig(variant=args.variant, c1=args.c1, cs=args.cs,
                      kernel=args.kernel, spatial=spatial,
                      allow_indefinite=args.kernel == "dot")
    params = count_params(cfg)
    bn = count_bn_params(cfg)
    macs = count_flops(cfg, h, w)
    print(f"variant {cfg.variant}  c1={cfg.c1}  cs={cfg.cs}  spatial={h}x{w}")
    print(f"params    {params:,}")
    print(f"bn params {bn:,}")
    print(f"macs      {macs:,}  ({macs / 1e9:.3f} G-MACs)")
    return 0


def _cmd_attn(args) -> int:
    cfg = load_config(args.config)
    if cfg.variant == "none":
        print("error: config has variant 'none'; there is no block to visualize",
              file=sys.stderr)
        return USAGE_ERROR
    try:
        positions = [int(v) for v in args.positions.split(",") if v.strip() != ""]
    except ValueError:
        print(f"error: --positions expects comma-separated integers, got {args.positions!r}",
              file=sys.stderr)
        return USAGE_ERROR

    state = ckpt_mod.load_checkpoint(args.checkpoint)
    buffers = {k: state.pop(k) for k in ("block.bn_mean", "block.bn_var") if k in state}
    params = state
    if "block.w0" not in params or not buffers:
        print("error: checkpoint has no block parameters; was it trained with "
              "this config's variant?", file=sys.stderr)
        return USAGE_ERROR
    inp = ckpt_mod.load_checkpoint(args.input)
    if "input" not in inp:
        print("error: input file has no 'input' entry", file=sys.stderr)
        return USAGE_ERROR
    image = inp["input"]
    if image.ndim == 2:
        image = image[None]
    x = image[None].astype(np.float32)  # (1, c, h, w)

    block_cfg = _block_config_from(cfg)
    _, cache = backbone_forward(params, buffers, x, cfg.task.classes, block_cfg,
                                cfg.insertion_stage, training=False)
    a = cache["block"].saved["a"][0]
    fh, fw = cache["block_spatial"]
    try:
        with fileio.output_lock(args.out):
            written = fileio.export_attention_maps(a, fh, fw, positions, args.out)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return USAGE_ERROR
    for path in written:
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return _cmd_verify(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "bench":
            return _cmd_bench(args)
        return _cmd_attn(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return USAGE_ERROR
    except (FileNotFoundError, ckpt_mod.CheckpointFormatError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return USAGE_ERROR
    except fileio.OutputDirLocked as err:
        print(f"error: {err}", file=sys.stderr)
        return FAILURE


if __name__ == "__main__":
    sys.exit(main())
