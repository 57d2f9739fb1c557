"""Command-line entry point.

Commands: generate, train, eval, ablate, robustness, grad-check,
export-offsets, info. Every command that writes files puts them under
--out-dir (default runs/<timestamp>) next to a manifest.json recording the
resolved config, seed, timestamps, parameter counts, and output list.

Exit codes: 0 success, 1 usage error, 2 runtime error. Re-running a command
with the same config and seed reproduces every CSV/PGM/checkpoint byte for
byte; only the manifest timestamps differ.
"""

import argparse
import json
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .checkpoint import (CheckpointError, checkpoint_file_hash, load_checkpoint,
                         restore_model, save_checkpoint)
from .config import (ConfigError, build_train_config, config_to_flat,
                     key_table_text, load_config_file, parse_set_overrides)
from .deform import export_offsets
from .experiments import (run_ablation, run_robustness, write_ablation_csv,
                          write_robustness_csv)
from .functional import ShapeError
from .gradcheck import format_suite_table, gradcheck_suite
from .metrics import MetricError
from .model import build_model, build_unet
from .pgmio import write_pgm
from .phantoms import QUADRANTS, export_sample_pgm, gen_phantom, make_splits, quadrant_mask
from .tensor import no_grad
from .trainer import (TrainingDiverged, batch_tensors, evaluate, train,
                      write_log_csv)

SEED_ENV = "DAUNET_SEED"


class CliRuntimeError(RuntimeError):
    """Command-level failure that should exit 2 with a message."""


def _add_config_flags(p, seed_help_extra=""):
    p.add_argument("--profile", default="desk", help="base profile: desk or paper")
    p.add_argument("--config", metavar="JSON",
                   help="flat JSON config file of dotted keys (see `daunet info`)")
    p.add_argument("--set", dest="sets", action="append", default=[],
                   metavar="KEY=VALUE",
                   help="dotted-path override, JSON-parsed value; repeatable")
    p.add_argument("--seed", type=int, default=None,
                   help=f"seed override (beats ${SEED_ENV} and config){seed_help_extra}")


def _add_out_dir(p):
    p.add_argument("--out-dir", default=None,
                   help="output directory (default runs/<timestamp>)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="daunet",
        description="Deformable-bottleneck attention UNet: training and "
                    "evaluation on synthetic phantoms.")
    parser.add_argument("--version", action="version", version=f"daunet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("generate", help="render phantom images and masks as PGMs")
    _add_config_flags(p)
    _add_out_dir(p)
    p.add_argument("--count", type=int, default=8, help="number of samples (default 8)")

    p = sub.add_parser("train", help="train a model; writes log.csv and best.ckpt")
    _add_config_flags(p)
    _add_out_dir(p)

    p = sub.add_parser("eval", help="test-split metrics and prediction masks for a checkpoint")
    _add_config_flags(p)
    _add_out_dir(p)
    p.add_argument("--ckpt", required=True, help="checkpoint to evaluate")

    p = sub.add_parser("ablate", help="train all four flag combinations; writes ablation.csv")
    _add_config_flags(p)
    _add_out_dir(p)

    p = sub.add_parser("robustness",
                       help="clean-vs-quadrant DSC for two checkpoints; offset heatmaps")
    _add_config_flags(p)
    _add_out_dir(p)
    p.add_argument("--daunet", required=True, metavar="CKPT",
                   help="checkpoint of the deformable-bottleneck model")
    p.add_argument("--unet", required=True, metavar="CKPT",
                   help="checkpoint of the baseline model")

    p = sub.add_parser("grad-check", help="finite-difference checks for every op")
    p.add_argument("--seeds", type=int, nargs="+", default=[100, 101, 102],
                   help="seeds for the randomized checks")
    p.add_argument("--tolerance", type=float, default=1e-6,
                   help="max relative error (default 1e-6)")

    p = sub.add_parser("export-offsets",
                       help="deformable bottleneck offset field for one test sample")
    _add_config_flags(p)
    _add_out_dir(p)
    p.add_argument("--ckpt", required=True, help="checkpoint to probe")
    p.add_argument("--index", type=int, default=0,
                   help="test-split sample position (default 0)")
    p.add_argument("--quadrant", choices=QUADRANTS, default=None,
                   help="zero this input quadrant before probing")

    p = sub.add_parser("info", help="print profiles, parameter counts, and config keys")
    _add_config_flags(p)
    return parser


def resolve_config(args):
    file_cfg = load_config_file(args.config) if args.config else None
    overrides = parse_set_overrides(args.sets)
    seed = args.seed
    if seed is None and os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError as e:
            raise ConfigError(f"${SEED_ENV} must be an integer, "
                              f"got {os.environ[SEED_ENV]!r}") from e
    return build_train_config(profile=args.profile, file_cfg=file_cfg,
                              overrides=overrides, seed=seed)


def make_out_dir(args):
    out_dir = args.out_dir
    if out_dir is None:
        stamp = datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S")
        out_dir = os.path.join("runs", stamp)
    try:
        os.makedirs(out_dir, exist_ok=True)
        probe = os.path.join(out_dir, ".write-probe")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as e:
        raise CliRuntimeError(f"out-dir {out_dir} is not writable: {e}") from e
    return out_dir


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir, command, cfg, started, param_counts, outputs,
                   checkpoint_sha1=None):
    manifest = {
        "tool": f"daunet {__version__}",
        "command": command,
        "config": config_to_flat(cfg),
        "seed": cfg.seed,
        "started": started,
        "finished": _now(),
        "param_counts": param_counts,
        "outputs": sorted(os.path.basename(str(p)) for p in outputs),
        "checkpoint_sha1": checkpoint_sha1,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _test_split(cfg):
    _, _, test_idx = make_splits(cfg.n_train, cfg.n_val, cfg.n_test)
    samples = [gen_phantom(cfg.data, i) for i in test_idx]
    return samples, [str(i) for i in test_idx]


def _load_model(cfg, path):
    try:
        ckpt = load_checkpoint(path)
    except OSError as e:
        raise CliRuntimeError(f"cannot read checkpoint {path}: {e}") from e
    model = build_model(cfg.model, seed=cfg.seed)
    restore_model(ckpt, model)
    return model, ckpt


def _class_composite(mask_stack):
    """(C, H, W) boolean planes -> one uint8 image, class c at 255*(c+1)/C."""
    c, h, w = mask_stack.shape
    out = np.zeros((h, w), dtype=np.uint8)
    for k in range(c):
        out[mask_stack[k]] = int(round(255.0 * (k + 1) / c))
    return out


def cmd_generate(args):
    cfg = resolve_config(args)
    if args.count < 1:
        raise ConfigError(f"--count must be >= 1, got {args.count}")
    out_dir = make_out_dir(args)
    started = _now()
    outputs = []
    for i in range(args.count):
        sample = gen_phantom(cfg.data, i)
        img = os.path.join(out_dir, f"img{i:04d}.pgm")
        masks = [os.path.join(out_dir, f"img{i:04d}_class{k}.pgm")
                 for k in range(cfg.data.num_fg_classes)]
        export_sample_pgm(sample, img, masks)
        outputs.extend([img] + masks)
    write_manifest(out_dir, "generate", cfg, started, {}, outputs)
    print(f"wrote {len(outputs)} PGMs to {out_dir}")
    return 0


def cmd_train(args):
    cfg = resolve_config(args)
    out_dir = make_out_dir(args)
    started = _now()

    def progress(epoch, loss, val):
        print(f"epoch {epoch:3d}  train_loss {loss:.4f}  val_dsc {val:.4f}", flush=True)

    result = train(cfg, progress=progress)
    log_path = write_log_csv(result.log_rows, os.path.join(out_dir, "log.csv"))
    ckpt_path = save_checkpoint(result.best_state, os.path.join(out_dir, "best.ckpt"))
    baseline = build_unet(cfg.model, seed=cfg.seed)
    counts = {"model": result.model.param_count(),
              "unet_baseline": baseline.param_count()}
    counts["reduction_vs_unet"] = counts["unet_baseline"] - counts["model"]
    write_manifest(out_dir, "train", cfg, started, counts,
                   [log_path, ckpt_path],
                   checkpoint_sha1=checkpoint_file_hash(ckpt_path))
    print(f"best val_dsc {result.best_val_dsc:.4f} at epoch {result.best_epoch}; "
          f"artifacts in {out_dir}")
    return 0


def cmd_eval(args):
    cfg = resolve_config(args)
    out_dir = make_out_dir(args)
    started = _now()
    model, _ = _load_model(cfg, args.ckpt)
    samples, ids = _test_split(cfg)
    report = evaluate(model, samples, batch_size=cfg.batch_size, sample_ids=ids)
    metrics_path = os.path.join(out_dir, "metrics.csv")
    report.write_csv(metrics_path)
    outputs = [metrics_path]

    model.eval()
    with no_grad():
        for sample, sid in zip(samples, ids):
            x, _ = batch_tensors([sample])
            pred = (model(x).data[0] > 0.0)
            gt = sample.mask.data > 0.5
            pred_path = os.path.join(out_dir, f"pred_{sid}.pgm")
            gt_path = os.path.join(out_dir, f"gt_{sid}.pgm")
            write_pgm(pred_path, _class_composite(pred))
            write_pgm(gt_path, _class_composite(gt))
            outputs.extend([pred_path, gt_path])

    write_manifest(out_dir, "eval", cfg, started,
                   {"model": model.param_count()}, outputs,
                   checkpoint_sha1=checkpoint_file_hash(args.ckpt))
    print(f"test mean DSC {report.mean_dsc:.4f}  HD95 {report.mean_hd95:.3f}  "
          f"ASD {report.mean_asd:.3f}  ({report.skip_count} skipped); "
          f"metrics in {metrics_path}")
    return 0


def cmd_ablate(args):
    cfg = resolve_config(args)
    out_dir = make_out_dir(args)
    started = _now()
    rows = run_ablation(cfg, progress=lambda msg: print(msg, flush=True))
    path = write_ablation_csv(rows, os.path.join(out_dir, "ablation.csv"))
    counts = {"unet": rows[0].param, "simam_only": rows[1].param,
              "bottleneck_only": rows[2].param, "daunet": rows[3].param}
    write_manifest(out_dir, "ablate", cfg, started, counts, [path])
    for r in rows:
        print(f"bottleneck={r.bottleneck} simam={r.simam}  dsc={r.dsc:.4f}  "
              f"hd95={r.hd95:.3f}  asd={r.asd:.3f}  params={r.param}")
    return 0


def cmd_robustness(args):
    cfg = resolve_config(args)
    out_dir = make_out_dir(args)
    started = _now()
    daunet_cfg = replace(cfg, model=replace(cfg.model, use_deform_bottleneck=True,
                                            use_simam=True))
    unet_cfg = replace(cfg, model=replace(cfg.model, use_deform_bottleneck=False,
                                          use_simam=False))
    daunet_model, _ = _load_model(daunet_cfg, args.daunet)
    unet_model, _ = _load_model(unet_cfg, args.unet)
    samples, _ = _test_split(cfg)
    rows, offset_files = run_robustness(daunet_model, unet_model, samples,
                                        offset_dir=out_dir,
                                        batch_size=cfg.batch_size)
    path = write_robustness_csv(rows, os.path.join(out_dir, "robustness.csv"))
    write_manifest(out_dir, "robustness", cfg, started,
                   {"daunet": daunet_model.param_count(),
                    "unet": unet_model.param_count()},
                   [path] + list(offset_files),
                   checkpoint_sha1=checkpoint_file_hash(args.daunet))
    for r in rows:
        print(f"{r.model:7s} {r.condition:5s}  mean_dsc={r.mean_dsc:.4f}  "
              f"drop={r.drop:+.4f}")
    return 0


def cmd_grad_check(args):
    rows = gradcheck_suite(seeds=tuple(args.seeds), tolerance=args.tolerance)
    print(format_suite_table(rows))
    return 0 if all(r.passed for _, _, r in rows) else 2


def cmd_export_offsets(args):
    cfg = resolve_config(args)
    out_dir = make_out_dir(args)
    started = _now()
    model, _ = _load_model(cfg, args.ckpt)
    samples, ids = _test_split(cfg)
    if not 0 <= args.index < len(samples):
        raise ConfigError(f"--index must be in [0, {len(samples)}), got {args.index}")
    model.eval()
    x, _ = batch_tensors([samples[args.index]])
    if args.quadrant is not None:
        x = quadrant_mask(x, args.quadrant)
    with no_grad():
        offsets = model.bottleneck_offsets(x)
    if offsets is None:
        raise CliRuntimeError("checkpoint has no deformable bottleneck to probe")
    path_csv = os.path.join(out_dir, "offsets.csv")
    path_pgm = os.path.join(out_dir, "offsets.pgm")
    export_offsets(offsets, path_csv, path_pgm)
    write_manifest(out_dir, "export-offsets", cfg, started,
                   {"model": model.param_count()}, [path_csv, path_pgm],
                   checkpoint_sha1=checkpoint_file_hash(args.ckpt))
    print(f"offsets for test sample {ids[args.index]} "
          f"({args.quadrant or 'clean'}) in {out_dir}")
    return 0


def cmd_info(args):
    cfg = resolve_config(args)
    model = build_model(cfg.model, seed=cfg.seed)
    unet = build_unet(cfg.model, seed=cfg.seed)
    print(f"daunet {__version__}")
    print(f"profile-resolved config (seed {cfg.seed}):")
    for key, value in config_to_flat(cfg).items():
        print(f"  {key} = {value}")
    print(f"parameter counts: model {model.param_count():,} | "
          f"unet baseline {unet.param_count():,} | "
          f"reduction {unet.param_count() - model.param_count():,}")
    print()
    print("config keys (--set key=value or flat JSON via --config):")
    print(key_table_text())
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "robustness": cmd_robustness,
    "grad-check": cmd_grad_check,
    "export-offsets": cmd_export_offsets,
    "info": cmd_info,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage problems and 0 for --help/--version.
        return 0 if e.code == 0 else 1
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (CliRuntimeError, CheckpointError, ShapeError, MetricError,
            TrainingDiverged, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
