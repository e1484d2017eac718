"""Command-line surface: synth, train, infer, eval.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every
subcommand is deterministic given its flags and seeds.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import arch, data, degrade, metrics, train


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="descratch",
        description="GAN-based dust and scratch removal for film scans")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a corrupted dataset from clean PNGs")
    p.add_argument("--clean-dir", required=True, help="directory of clean PNG images")
    p.add_argument("--out-dir", required=True, help="dataset output directory")
    p.add_argument("--severity", choices=degrade.SEVERITIES, default="medium",
                   help="artifact density preset (default: medium)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default: 0)")
    p.add_argument("--count", type=int, default=None,
                   help="number of pairs to emit (default: every clean image)")

    p = sub.add_parser("train", help="train the restoration model")
    p.add_argument("--data", required=True, help="dataset directory (synth layout)")
    p.add_argument("--config", default=None,
                   help="JSON file of TrainConfig overrides (default: defaults)")
    p.add_argument("--out", required=True, help="output directory for checkpoints/log")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")

    p = sub.add_parser("infer", help="restore images with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="inputs", required=True,
                   help="input PNG file or directory")
    p.add_argument("--out", required=True, help="output PNG file or directory")
    p.add_argument("--tile", type=int, default=256,
                   help="tile size for large images (default: 256)")
    p.add_argument("--overlap", type=int, default=16,
                   help="tile overlap in px, blended linearly (default: 16)")

    p = sub.add_parser("eval", help="PSNR/SSIM report of restored vs reference")
    p.add_argument("--restored", required=True, help="directory of restored PNGs")
    p.add_argument("--reference", required=True, help="directory of reference PNGs")
    p.add_argument("--out", default=None, help="TSV report path (default: stdout only)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return {"synth": cmd_synth, "train": cmd_train, "infer": cmd_infer,
                "eval": cmd_eval}[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _png_files(directory: Path):
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png")


def cmd_synth(args) -> int:
    clean_dir = Path(args.clean_dir)
    if not clean_dir.is_dir():
        raise UsageError(f"clean dir {clean_dir} does not exist")
    files = _png_files(clean_dir)
    if not files:
        raise UsageError(f"no input images in {clean_dir}")
    if args.count is not None:
        files = files[:args.count]
    out = Path(args.out_dir)
    (out / "specs").mkdir(parents=True, exist_ok=True)
    pairs, seeds = [], []
    for i, path in enumerate(files):
        clean = data.load_image(path)
        seed = data._mix(args.seed, i, 0)
        specs = degrade.sample_specs(seed, clean.shape[1:], args.severity)
        pair = degrade.composite(clean, specs, pair_id=path.stem)
        (out / "specs" / f"{path.stem}.txt").write_text(degrade.specs_to_text(specs))
        pairs.append(pair)
        seeds.append(seed)
    data.save_dataset(out, pairs, seeds)
    print(f"wrote {len(pairs)} pairs to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = train.TrainConfig()
    if args.config is not None:
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise UsageError(f"config file {cfg_path} does not exist")
        try:
            cfg = train.TrainConfig.from_dict(json.loads(cfg_path.read_text()))
        except (ValueError, TypeError) as exc:
            raise UsageError(str(exc)) from exc
    problems = cfg.problems()
    if problems:
        raise UsageError("invalid training config: " + "; ".join(problems))
    pairs = data.load_dataset(args.data)
    if not pairs:
        raise UsageError(f"dataset {args.data} is empty")

    def progress(epoch, comps):
        print(f"epoch {epoch}: pixel={comps['pixel']:.5f} "
              f"total={comps['total']:.5f}", flush=True)

    train.train(pairs, cfg, args.out, resume=args.resume, progress=progress)
    print(f"training complete; checkpoints under {args.out}")
    return 0


def cmd_infer(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise UsageError(f"checkpoint {ckpt} does not exist")
    g_cfg, median_k = train.read_generator_config(ckpt)
    g_params, g_bn = arch.generator_init(g_cfg, seed=0)
    train.load_checkpoint(ckpt, g_params, g_bn)

    inputs = Path(args.inputs)
    out = Path(args.out)
    if inputs.is_dir():
        files = _png_files(inputs)
        if not files:
            raise UsageError(f"no input images in {inputs}")
        out.mkdir(parents=True, exist_ok=True)
        targets = [(f, out / f.name) for f in files]
    elif inputs.exists():
        if out.suffix.lower() == ".png":
            out.parent.mkdir(parents=True, exist_ok=True)
            targets = [(inputs, out)]
        else:
            out.mkdir(parents=True, exist_ok=True)
            targets = [(inputs, out / inputs.name)]
    else:
        raise UsageError(f"input {inputs} does not exist")

    for src, dst in targets:
        img = data.load_image(src)
        restored = arch.tiled_restore(img, g_params, g_cfg, g_bn,
                                      median_k=median_k, tile=args.tile,
                                      overlap=args.overlap)
        data.save_image(dst, restored)
    print(f"restored {len(targets)} image(s)")
    return 0


def cmd_eval(args) -> int:
    def load_dir(d):
        d = Path(d)
        if not d.is_dir():
            raise UsageError(f"{d} is not a directory")
        return {p.stem: data.load_image(p) for p in _png_files(d)}

    restored = load_dir(args.restored)
    reference = load_dir(args.reference)
    missing = sorted(set(restored) ^ set(reference))
    if missing:
        raise UsageError("ids without a counterpart: " + ", ".join(missing))
    report = metrics.evaluate(restored, reference)
    print(report.to_table())
    if args.out:
        Path(args.out).write_text(report.to_tsv())
    return 0


if __name__ == "__main__":
    sys.exit(main())
