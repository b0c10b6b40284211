"""Command-line surface covering the full pipeline.

Subcommands: synth, train-estimator, pretrain, train, infer, eval, serve.
Exit codes: 0 success, 1 input error, 2 state error.  The default bundle
path for `infer` and `serve` can be set via the DGSR_BUNDLE environment
variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import InputError, StateError


def _add_synth(sub):
    p = sub.add_parser("synth", help="synthesize a paired (HR, LR, label) dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--n", type=int, required=True, help="number of items")
    p.add_argument(
        "--hr-source",
        default="procedural",
        help="'procedural' or a directory of source images",
    )
    p.add_argument("--blur-max", type=float, default=None, help="max blur sigma (px)")
    p.add_argument("--noise-max", type=float, default=None, help="max noise sigma")


def _add_train_estimator(sub):
    p = sub.add_parser("train-estimator", help="fit the degradation estimator")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="estimator checkpoint path")
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=2e-3)


def _add_pretrain(sub):
    p = sub.add_parser("pretrain", help="pretrain the backbone prior on clean images")
    p.add_argument("--data", required=True, help="dataset directory (HR side is used)")
    p.add_argument("--out", required=True, help="backbone checkpoint path")
    p.add_argument("--ae-steps", type=int, default=2000)
    p.add_argument("--unet-steps", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=2e-3)


def _add_train(sub):
    p = sub.add_parser("train", help="SR fine-tuning with online negative prompting")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--prior", required=True, help="pretrained backbone checkpoint")
    p.add_argument("--estimator", required=True, help="estimator checkpoint")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--profile", default=None, choices=["desk", "full"])
    p.add_argument("--steps", type=int, default=None, help="override max_steps")
    p.add_argument("--resume", default=None, help="train-state checkpoint to resume")
    p.add_argument("--bundle-out", default=None, help="also write a model bundle here")


def _add_infer(sub):
    p = sub.add_parser("infer", help="super-resolve one image or a directory")
    p.add_argument("--bundle", default=None, help="model bundle directory")
    p.add_argument("--input", required=True, help="LR image file or directory")
    p.add_argument("--output", required=True, help="output file or directory")
    p.add_argument("--cfg", type=float, default=1.1, help="guidance scale")
    p.add_argument("--dn", type=float, default=None, help="override noise score")
    p.add_argument("--db", type=float, default=None, help="override blur score")
    p.add_argument("--noise-start", type=float, default=0.0)
    p.add_argument("--reference", default=None, help="HR reference dir for PSNR")


def _add_eval(sub):
    p = sub.add_parser("eval", help="PSNR/SSIM/high-frequency energy over a dir pair")
    p.add_argument("--pred", required=True, help="directory of predictions")
    p.add_argument("--ref", required=True, help="directory of references")
    p.add_argument("--out", default=None, help="optional JSONL report path")


def _add_serve(sub):
    p = sub.add_parser("serve", help="start the HTTP inference service")
    p.add_argument("--bundle", default=None, help="model bundle directory")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgsr")
    parser.add_argument("--seed", type=int, default=0, help="global RNG seed")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_synth(sub)
    _add_train_estimator(sub)
    _add_pretrain(sub)
    _add_train(sub)
    _add_infer(sub)
    _add_eval(sub)
    _add_serve(sub)
    return parser


def _resolve_bundle_path(arg: str | None) -> str:
    path = arg or os.environ.get("DGSR_BUNDLE")
    if not path:
        raise StateError("no bundle given: pass --bundle or set DGSR_BUNDLE")
    return path


def _cmd_synth(args) -> None:
    from . import data_synth

    ranges = data_synth.ParamRanges()
    if args.blur_max is not None:
        ranges.blur_sigma = (0.0, args.blur_max)
        ranges.blur_sigma_max = args.blur_max
    if args.noise_max is not None:
        ranges.noise_sigma = (0.0, args.noise_max)
        ranges.noise_sigma_max = args.noise_max
    ds = data_synth.make_dataset(
        args.out, n=args.n, hr_source=args.hr_source, param_ranges=ranges, seed=args.seed
    )
    print(f"wrote {len(ds)} items to {args.out}")


def _cmd_train_estimator(args) -> None:
    from . import bundle, data_synth, degest

    ds = data_synth.load_dataset(args.data)
    cfg = degest.EstimatorConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed
    )
    model, log = degest.train_estimator(ds, cfg)
    bundle.save_estimator(model, args.out, meta={"log": log})
    final = log[-1] if log else {}
    print(f"estimator saved to {args.out}: {json.dumps(final)}")


def _cmd_pretrain(args) -> None:
    from . import backbone as bb
    from . import bundle, data_synth

    ds = data_synth.CachedDataset(data_synth.load_dataset(args.data))
    cfg = bb.PretrainConfig(
        ae_steps=args.ae_steps,
        unet_steps=args.unet_steps,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
    )
    model, log = bb.pretrain_base(ds, cfg)
    bundle.save_backbone(model, args.out, meta={"log": log})
    print(f"backbone prior saved to {args.out}: {json.dumps(log[-1])}")


def _cmd_train(args) -> None:
    from . import bundle, data_synth, training

    if args.config:
        cfg = training.TrainConfig.from_file(args.config)
    elif args.profile:
        cfg = training.TrainConfig.profile(args.profile)
    else:
        cfg = training.TrainConfig.profile("desk")
    cfg.estimator_checkpoint = args.estimator
    cfg.seed = args.seed
    if args.steps is not None:
        cfg.max_steps = args.steps

    ds = data_synth.load_dataset(args.data)
    result = training.fit(
        cfg, ds, args.prior, out_dir=args.out, resume_from=args.resume
    )
    print(f"adapters saved to {result.checkpoint_path}; log at {result.log_path}")
    if result.history:
        print(json.dumps(result.history[-1]))
    if args.bundle_out:
        backbone = bundle.load_backbone(args.prior)
        registry = bundle.load_adapters(backbone, result.checkpoint_path)
        estimator = bundle.load_estimator(args.estimator)
        bundle.save_bundle(args.bundle_out, backbone, registry, estimator)
        print(f"bundle written to {args.bundle_out}")


def _cmd_infer(args) -> None:
    from . import images, inference
    from .data_synth import DegradationVector

    bundle_dir = _resolve_bundle_path(args.bundle)
    model = inference.load_bundle(bundle_dir)
    d_override = None
    if args.dn is not None and args.db is not None:
        d_override = DegradationVector(d_n=args.dn, d_b=args.db)
    elif args.dn is not None or args.db is not None:
        raise InputError("--dn and --db must be given together on the CLI")

    in_path = Path(args.input)
    if in_path.is_dir():
        defaults = inference.InferenceRequest(
            lr=np.zeros((8, 8, 3), dtype=np.float32),
            lambda_cfg=args.cfg,
            d_override=d_override,
            noise_sigma_start=args.noise_start,
            seed=args.seed,
        )
        summary = inference.batch_process(
            model, in_path, args.output, defaults, reference_dir=args.reference
        )
        print(json.dumps(summary, sort_keys=True))
    else:
        if not in_path.is_file():
            raise InputError(f"input not found: {in_path}")
        req = inference.InferenceRequest(
            lr=images.load_png(in_path),
            lambda_cfg=args.cfg,
            d_override=d_override,
            noise_sigma_start=args.noise_start,
            seed=args.seed,
        )
        sr, report = inference.super_resolve(model, req)
        out = Path(args.output)
        if out.suffix.lower() != ".png":
            out.mkdir(parents=True, exist_ok=True)
            out = out / (in_path.stem + ".png")
        out.parent.mkdir(parents=True, exist_ok=True)
        images.save_png(out, sr)
        print(json.dumps({"output": str(out), "report": report}, sort_keys=True))


def _cmd_eval(args) -> None:
    from . import images, metrics

    pred_dir = Path(args.pred)
    ref_dir = Path(args.ref)
    if not pred_dir.is_dir() or not ref_dir.is_dir():
        raise InputError("eval needs two existing directories")
    pred_files = sorted(p for p in pred_dir.iterdir() if p.suffix.lower() == ".png")
    ref_files = sorted(p for p in ref_dir.iterdir() if p.suffix.lower() == ".png")
    if len(pred_files) != len(ref_files):
        raise InputError(
            f"directory sizes differ: {len(pred_files)} predictions vs {len(ref_files)} references"
        )
    records = []
    for pf, rf in zip(pred_files, ref_files):
        a = images.load_png_u8(pf)
        b = images.load_png_u8(rf)
        rec = {
            "file": pf.name,
            "psnr_y": metrics.psnr_y(a, b),
            "ssim_y": metrics.ssim_y(a, b),
            "hf_energy": metrics.hf_energy(a),
        }
        records.append(rec)
        print(json.dumps(rec, sort_keys=True))
    summary = {
        "mean_psnr_y": float(np.mean([r["psnr_y"] for r in records])) if records else 0.0,
        "mean_ssim_y": float(np.mean([r["ssim_y"] for r in records])) if records else 0.0,
        "mean_hf_energy": float(np.mean([r["hf_energy"] for r in records])) if records else 0.0,
        "n": len(records),
    }
    print(json.dumps({"summary": summary}, sort_keys=True))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            for rec in records:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
            f.write(json.dumps({"summary": summary}, sort_keys=True) + "\n")


def _cmd_serve(args) -> None:
    from . import inference, service

    bundle_dir = _resolve_bundle_path(args.bundle)
    model = inference.load_bundle(bundle_dir)
    print(f"serving bundle {bundle_dir} on {args.host}:{args.port}")
    service.serve(model, port=args.port, host=args.host)


_COMMANDS = {
    "synth": _cmd_synth,
    "train-estimator": _cmd_train_estimator,
    "pretrain": _cmd_pretrain,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        _COMMANDS[args.command](args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except StateError as exc:
        print(f"state error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
