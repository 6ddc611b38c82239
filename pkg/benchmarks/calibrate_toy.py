"""Calibration of the toy acceptance protocol: trains the full model and the
two training ablations on the procedural corpus and prints the PSNR margins
the acceptance suite asserts."""

import sys
import tempfile
import time
from dataclasses import replace

import numpy as np

from rectiflow import data as dmod
from rectiflow.degrade import (BlurSpec, CompressionSpec, DegradationSpec,
                               DownscaleSpec, NoiseSpec)
from rectiflow.pipeline import (TrainConfig, baseline_report, evaluate, train)


def toy_spec():
    return DegradationSpec(
        blur=BlurSpec(sigma_range=(0.3, 0.8), kernel_size=9),
        downscale=DownscaleSpec(r_range=(1.0, 1.5)),
        noise=NoiseSpec(sigma_range=(0.06, 0.12)),
        compression=CompressionSpec(quality_range=(40, 70)),
        order=1)


def toy_config(steps=10000, tau_steps=5000, seed=3):
    return TrainConfig(resolution=32, batch_size=2, total_steps=steps,
                       lr=1e-3, degradation=toy_spec(), seed=seed,
                       base_channels=16, tau_steps=tau_steps)


def main(steps=10000, tau_steps=5000):
    root = tempfile.mkdtemp(prefix="rectiflow_toy_")
    dmod.make_toy_corpus(root, n=256, size=32, seed=11)
    ds = dmod.ingest(root, seed=0)
    train_imgs = dmod.load_split(ds, "train", 32)
    test_imgs = dmod.load_split(ds, "test", 32)
    print(f"corpus: {len(train_imgs)} train / {len(test_imgs)} test")

    cfg = toy_config(steps, tau_steps)
    base = baseline_report(test_imgs, cfg, seed=5)
    print(f"degraded baseline: {base.mean_psnr:.2f} dB", flush=True)

    t0 = time.time()
    model, tau, _, hist = train(cfg, train_imgs, log=1000)
    print(f"full model trained in {time.time() - t0:.0f}s, "
          f"final-500 loss {np.mean(hist[-500:]):.4f}", flush=True)
    rep_full = evaluate(model, tau, test_imgs, cfg, seed=5)
    print(f"full (meanvalue N=5 k=3): {rep_full.mean_psnr:.2f} dB", flush=True)

    rep_euler = evaluate(model, tau, test_imgs,
                         replace(cfg, use_meanvalue=False), seed=5)
    print(f"w/o mid sample (euler N=5): {rep_euler.mean_psnr:.2f} dB", flush=True)

    t0 = time.time()
    cfg_nf = replace(cfg, use_flow=False)
    model_nf, tau_nf, _, _ = train(cfg_nf, train_imgs, tau=tau, log=2000)
    print(f"w/o flow trained in {time.time() - t0:.0f}s", flush=True)
    rep_nf = evaluate(model_nf, tau_nf, test_imgs, cfg_nf, seed=5)
    print(f"w/o flow (t=0 distillation, 1 step): {rep_nf.mean_psnr:.2f} dB", flush=True)

    t0 = time.time()
    cfg_ni = replace(cfg, use_initial_stage=False)
    model_ni, _, _, _ = train(cfg_ni, train_imgs, log=2000)
    print(f"w/o init trained in {time.time() - t0:.0f}s", flush=True)
    rep_ni = evaluate(model_ni, None, test_imgs, cfg_ni, seed=5)
    print(f"w/o init: {rep_ni.mean_psnr:.2f} dB", flush=True)

    print("\n--- margins ---")
    print(f"full - baseline      = {rep_full.mean_psnr - base.mean_psnr:+.2f} (need >= +1.0)")
    print(f"full - w/o flow      = {rep_full.mean_psnr - rep_nf.mean_psnr:+.2f} (need >= +0.3)")
    print(f"full - w/o mid       = {rep_full.mean_psnr - rep_euler.mean_psnr:+.2f} (need >= -0.05)")
    print(f"full - w/o init      = {rep_full.mean_psnr - rep_ni.mean_psnr:+.2f} (need >= -0.05)")


if __name__ == "__main__":
    steps = int(sys.argv[1]) if len(sys.argv) > 1 else 10000
    tau_steps = int(sys.argv[2]) if len(sys.argv) > 2 else 5000
    main(steps, tau_steps)
