"""Command-line interface binding the modules into reproducible runs.

Exit codes: 0 success, 1 usage error, 2 runtime or data error. Every run
emits a JSON run-record (stdout by default, or --run-record PATH); wall
time lives only there, so reruns with identical inputs and seeds produce
byte-identical outputs.

Heavy imports happen inside the command handlers so --threads /
--deterministic can pin the BLAS thread count before numpy loads.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import subprocess
import sys
import time
from pathlib import Path

ABLATIONS = ("no-flow", "no-mid", "no-init")


def _add_common(p):
    p.add_argument("--seed", type=int, default=None, help="master random seed")
    p.add_argument("--threads", type=int, default=None,
                   help="BLAS thread count (default: library default)")
    p.add_argument("--deterministic", action="store_true",
                   help="force single-threaded numerics")
    p.add_argument("--run-record", default=None, metavar="PATH",
                   help="write the JSON run-record here instead of stdout")


def _add_sampler_flags(p):
    p.add_argument("--sampler", choices=["euler", "meanvalue"], default=None,
                   help="integration scheme")
    p.add_argument("--steps", type=int, default=None, metavar="N",
                   help="number of uniform segments")
    p.add_argument("--midpoint", type=int, default=None, metavar="K",
                   help="midpoint index (meanvalue only)")
    p.add_argument("--ablation", action="append", choices=ABLATIONS, default=[],
                   help="disable a component (repeatable)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rectiflow",
        description="Conditioned rectified flow for desk-scale image enhancement.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the velocity network on a corpus")
    p.add_argument("--config", required=True, help="TrainConfig JSON path")
    p.add_argument("--data", default=None,
                   help="corpus root (default: $RECTIFLOW_DATA_DIR)")
    p.add_argument("--output", default="runs/train", help="output directory")
    _add_common(p)

    p = sub.add_parser("enhance", help="restore one degraded image")
    p.add_argument("--checkpoint", required=True, help="velocity checkpoint")
    p.add_argument("--tau-checkpoint", default=None, help="coarse-restorer checkpoint")
    p.add_argument("--input", required=True, help="degraded PNG")
    p.add_argument("--output", required=True, help="restored PNG destination")
    _add_sampler_flags(p)
    _add_common(p)

    p = sub.add_parser("degrade", help="apply a degradation spec to an image")
    p.add_argument("--spec", default=None, help="DegradationSpec JSON path")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--meta", default=None, help="write sampled parameters here")
    _add_common(p)

    p = sub.add_parser("eval", help="PSNR/SSIM between two image folders")
    p.add_argument("--pred", required=True, help="folder of predictions")
    p.add_argument("--ref", required=True, help="folder of references")
    p.add_argument("--output", default=None, help="write the JSON report here")
    _add_common(p)

    p = sub.add_parser("sweep-midpoint",
                       help="per-k PSNR table for midpoint selection")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tau-checkpoint", default=None)
    p.add_argument("--data", default=None,
                   help="validation folder (default: $RECTIFLOW_DATA_DIR)")
    p.add_argument("--steps", type=int, default=None, metavar="N")
    p.add_argument("--limit", type=int, default=8,
                   help="number of validation images to use")
    _add_common(p)

    p = sub.add_parser("bench", help="sampler throughput comparison")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tau-checkpoint", default=None)
    p.add_argument("--data", default=None,
                   help="image folder (default: $RECTIFLOW_DATA_DIR)")
    p.add_argument("--images", type=int, default=64, help="number of images")
    p.add_argument("--euler-steps", type=int, default=20)
    _add_common(p)

    p = sub.add_parser("inspect-checkpoint", help="print a checkpoint manifest")
    p.add_argument("--checkpoint", required=True)
    _add_common(p)

    return parser


def _version_string():
    here = Path(__file__).resolve()
    for parent in here.parents:
        if (parent / ".git").exists():
            try:
                out = subprocess.run(
                    ["git", "describe", "--always", "--dirty"],
                    cwd=parent, capture_output=True, text=True, timeout=5)
                if out.returncode == 0 and out.stdout.strip():
                    return f"rectiflow-0.1.0+g{out.stdout.strip()}"
            except Exception:
                break
            break
    return "rectiflow-0.1.0"


def _emit_record(args, started, extras):
    seed = getattr(args, "seed", None)
    payload = {"command": args.command, "seed": 0 if seed is None else seed,
               "version": _version_string(),
               "wall_time_s": round(time.time() - started, 4)}
    payload.update(extras)
    text = json.dumps(payload, sort_keys=True)
    if args.run_record:
        Path(args.run_record).write_text(text + "\n")
    else:
        print(f"run-record: {text}")


def _config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _data_root(args):
    root = args.data or os.environ.get("RECTIFLOW_DATA_DIR")
    if not root:
        raise UsageError("no corpus given: pass --data or set RECTIFLOW_DATA_DIR")
    return root


class UsageError(Exception):
    pass


def _apply_overrides(cfg, args):
    from dataclasses import replace as dc_replace

    from .flow import SamplerConfig
    sampler = cfg.sampler
    if args.sampler is not None or args.steps is not None or args.midpoint is not None:
        mode = args.sampler or sampler.mode
        n = args.steps if args.steps is not None else sampler.n
        if args.midpoint is not None and mode != "meanvalue":
            raise UsageError("--midpoint is only valid with --sampler meanvalue")
        k = args.midpoint if args.midpoint is not None else min(sampler.k, n - 1)
        sampler = SamplerConfig(mode=mode, n=n, k=min(k, n - 1))
    use_mean = sampler.mode == "meanvalue"
    cfg = dc_replace(cfg, sampler=sampler, use_meanvalue=use_mean)
    for ab in args.ablation:
        if ab == "no-flow":
            cfg = dc_replace(cfg, use_flow=False)
        elif ab == "no-mid":
            cfg = dc_replace(cfg, use_meanvalue=False)
        elif ab == "no-init":
            cfg = dc_replace(cfg, use_initial_stage=False)
    return cfg


def _load_models(args, cfg_fallback=None):
    from .pipeline import TrainConfig, load_checkpoint
    model, meta, _ = load_checkpoint(args.checkpoint)
    if meta.get("config"):
        cfg = TrainConfig.from_dict(meta["config"])
    else:
        cfg = cfg_fallback or TrainConfig()
    tau = None
    if args.tau_checkpoint:
        tau, _, _ = load_checkpoint(args.tau_checkpoint)
    if tau is None:
        cfg = _replace_no_init(cfg)
    return model, tau, cfg


def _replace_no_init(cfg):
    from dataclasses import replace as dc_replace
    return dc_replace(cfg, use_initial_stage=False)


def cmd_train(args, started):
    from . import data as data_mod
    from .pipeline import TrainConfig, evaluate, save_checkpoint, train
    cfg_dict = json.loads(Path(args.config).read_text())
    if args.seed_given:
        cfg_dict["seed"] = args.seed
    cfg = TrainConfig.from_dict(cfg_dict)
    root = _data_root(args)
    dataset = data_mod.ingest(root, seed=cfg.seed)
    train_images = data_mod.load_split(dataset, "train", cfg.resolution)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    model, tau, opt, history = train(cfg, train_images, log=500)
    save_checkpoint(out / "model.rfck", model, opt=opt, cfg=cfg)
    if tau is not None:
        save_checkpoint(out / "tau.rfck", tau, cfg=cfg)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    (out / "history.json").write_text(json.dumps(history) + "\n")
    extras = {"config_hash": _config_hash(cfg.to_dict()),
              "final_loss": history[-1] if history else None,
              "checkpoint": str(out / "model.rfck"),
              "train_images": int(len(train_images))}
    _emit_record(args, started, extras)
    return 0


def cmd_enhance(args, started):
    from . import data as data_mod
    from .pipeline import enhance
    model, tau, cfg = _load_models(args)
    cfg = _apply_overrides(cfg, args)
    lq = data_mod.load_image(args.input)
    counter = []
    restored = enhance(model, tau, lq, cfg, seed=args.seed, counter=counter)
    data_mod.save_image(restored, args.output)
    _emit_record(args, started, {
        "config_hash": _config_hash(cfg.to_dict()),
        "n_evaluations": len(counter),
        "input": args.input, "output": args.output})
    return 0


def cmd_degrade(args, started):
    import numpy as np

    from . import data as data_mod
    from .degrade import DegradationSpec, degrade
    spec = (DegradationSpec.from_json(Path(args.spec).read_text())
            if args.spec else DegradationSpec())
    img = data_mod.load_image(args.input)
    rng = np.random.default_rng(args.seed)
    lq, meta = degrade(img, spec, rng)
    data_mod.save_image(lq, args.output)
    if args.meta:
        Path(args.meta).write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    _emit_record(args, started, {"config_hash": _config_hash(spec.to_dict()),
                                 "output": args.output})
    return 0


def cmd_eval(args, started):
    from . import data as data_mod
    from .metrics import psnr, ssim
    pred_dir, ref_dir = Path(args.pred), Path(args.ref)
    preds = {p.name: p for p in sorted(pred_dir.glob("*.png"))}
    refs = {p.name: p for p in sorted(ref_dir.glob("*.png"))}
    missing_pred = sorted(set(refs) - set(preds))
    missing_ref = sorted(set(preds) - set(refs))
    if missing_pred or missing_ref:
        for name in missing_pred:
            print(f"missing prediction: {name}", file=sys.stderr)
        for name in missing_ref:
            print(f"missing reference: {name}", file=sys.stderr)
        raise DataError(f"{len(missing_pred) + len(missing_ref)} unmatched files")
    if not preds:
        raise DataError("no PNG files to compare")
    rows = []
    for name in sorted(preds):
        a = data_mod.load_image(preds[name])
        b = data_mod.load_image(refs[name])
        rows.append({"id": name, "psnr": psnr(a, b), "ssim": ssim(a, b)})
    import numpy as np
    report = {"per_image": rows,
              "mean_psnr": float(np.mean([r["psnr"] for r in rows])),
              "mean_ssim": float(np.mean([r["ssim"] for r in rows]))}
    print(f"{'file':>24}  {'psnr_db':>8}  {'ssim':>7}")
    for r in rows:
        print(f"{r['id']:>24}  {r['psnr']:>8.3f}  {r['ssim']:>7.4f}")
    print(f"{'mean':>24}  {report['mean_psnr']:>8.3f}  {report['mean_ssim']:>7.4f}")
    if args.output:
        Path(args.output).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    _emit_record(args, started, {"n_images": len(rows),
                                 "mean_psnr": report["mean_psnr"]})
    return 0


def cmd_sweep_midpoint(args, started):
    from . import data as data_mod
    from .pipeline import sweep_midpoint_over_set
    model, tau, cfg = _load_models(args)
    root = _data_root(args)
    dataset = data_mod.ingest(root, seed=args.seed)
    split = "val" if dataset.splits["val"] else "test"
    images = data_mod.load_split(dataset, split, cfg.resolution)[:args.limit]
    n = args.steps or cfg.sampler.n
    best_k, scores = sweep_midpoint_over_set(model, tau, images, cfg, n=n,
                                             seed=args.seed)
    print(f"{'k':>3}  {'mean_psnr_db':>12}  evaluations")
    for k, score in enumerate(scores):
        mark = " <- selected" if k == best_k else ""
        print(f"{k:>3}  {score:>12.3f}  {k + 1}{mark}")
    _emit_record(args, started, {"best_k": best_k, "scores": scores,
                                 "n": n, "n_images": int(len(images))})
    return 0


def cmd_bench(args, started):
    import numpy as np

    from . import data as data_mod
    from .pipeline import bench_samplers, degrade_batch
    model, tau, cfg = _load_models(args)
    root = args.data or os.environ.get("RECTIFLOW_DATA_DIR")
    if root:
        dataset = data_mod.ingest(root, seed=args.seed)
        clean = data_mod.load_split(dataset, "test", cfg.resolution)
    else:
        rng = np.random.default_rng(args.seed)
        clean = rng.uniform(0, 1, size=(args.images, 3, cfg.resolution,
                                        cfg.resolution)).astype(np.float32)
    while len(clean) < args.images:
        clean = np.concatenate([clean, clean])
    clean = clean[:args.images]
    rng = np.random.default_rng(args.seed)
    images = degrade_batch(clean, cfg.degradation, rng)
    results = bench_samplers(model, tau, images, cfg, seed=args.seed,
                             euler_steps=args.euler_steps)
    for label, row in results.items():
        print(f"{label:>12}: {row['images_per_second']:.3f} images/s "
              f"({row['evaluations']} evaluations, {row['seconds']:.2f}s)")
    ratio = (results["meanvalue"]["images_per_second"]
             / results[f"euler{args.euler_steps}"]["images_per_second"])
    print(f"{'speedup':>12}: {ratio:.2f}x")
    _emit_record(args, started, {"results": results, "speedup": ratio,
                                 "n_images": int(len(images))})
    return 0


def cmd_inspect_checkpoint(args, started):
    from .checkpoint import load_tensors
    tensors, meta = load_tensors(args.checkpoint)
    n_params = sum(int(v.size) for k, v in tensors.items()
                   if not k.startswith("opt."))
    print(f"kind: {meta.get('kind', '?')}  tensors: {len(tensors)}  "
          f"parameters: {n_params}")
    if meta.get("arch"):
        print(f"arch: {json.dumps(meta['arch'], sort_keys=True)}")
    if meta.get("opt"):
        print(f"optimizer: {json.dumps(meta['opt'], sort_keys=True)}")
    for name in sorted(tensors):
        print(f"  {name}  {list(tensors[name].shape)}")
    _emit_record(args, started, {"n_tensors": len(tensors),
                                 "n_parameters": n_params})
    return 0


class DataError(Exception):
    pass


_COMMANDS = {
    "train": cmd_train,
    "enhance": cmd_enhance,
    "degrade": cmd_degrade,
    "eval": cmd_eval,
    "sweep-midpoint": cmd_sweep_midpoint,
    "bench": cmd_bench,
    "inspect-checkpoint": cmd_inspect_checkpoint,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems; our contract reserves 2 for
        # runtime/data errors and 1 for usage
        return 0 if exc.code == 0 else 1
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    threads = 1 if args.deterministic else args.threads
    if threads is not None:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)
    started = time.time()
    try:
        return _COMMANDS[args.command](args, started)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        from .errors import RectiflowError
        if isinstance(exc, (RectiflowError, DataError, OSError, ValueError,
                            KeyError, json.JSONDecodeError)):
            print(f"error: {exc}", file=sys.stderr)
            return 2
        raise


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
