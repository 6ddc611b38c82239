"""Training, inference, and evaluation of the conditioned flow.

Training minimizes ||z1 - z0 - v(z_t, t, C)||^2 with z0 drawn fresh from a
standard Gaussian each step (the many-to-one coupling), the condition built
from the coarse restoration of a freshly degraded copy of z1. Inference
integrates the learned field from noise with the configured sampler,
rebuilding the condition from the current state at every evaluation.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import flow
from .autodiff import Tensor
from .checkpoint import load_tensors, save_tensors
from .degrade import DegradationSpec, degrade
from .errors import DomainError, NumericError
from .metrics import psnr, ssim
from .nn import Condition, InitialStageModel, VelocityNet, build_condition
from .optim import AdamW

SCHEMA_VERSION = 1


@dataclass
class TrainConfig:
    task: str = "restoration"
    resolution: int = 32
    batch_size: int = 4
    total_steps: int = 10000
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    degradation: DegradationSpec = field(default_factory=DegradationSpec)
    sampler: flow.SamplerConfig = field(default_factory=flow.SamplerConfig)
    seed: int = 0
    use_flow: bool = True
    use_initial_stage: bool = True
    use_meanvalue: bool = True
    jump_from_origin: bool = False
    t_epsilon: float = 1e-3
    base_channels: int = 32
    time_dim: int = 64
    tau_channels: int = 24
    tau_steps: int = 5000
    tau_lr: float = 2e-3

    def __post_init__(self):
        if self.resolution % 8:
            raise DomainError(f"resolution must be a multiple of 8, got {self.resolution}")
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if self.lr <= 0:
            raise DomainError("lr must be positive")

    def to_dict(self):
        d = {k: v for k, v in vars(self).items()
             if k not in ("degradation", "sampler")}
        d["degradation"] = self.degradation.to_dict()
        d["sampler"] = vars(self.sampler).copy()
        d["schema_version"] = SCHEMA_VERSION
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        version = d.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise DomainError(f"train config schema version {version} unsupported")
        if "degradation" in d:
            d["degradation"] = DegradationSpec.from_dict(d["degradation"])
        if "sampler" in d:
            d["sampler"] = flow.SamplerConfig(**d["sampler"])
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def build_velocity_net(cfg: TrainConfig, seed=None) -> VelocityNet:
    return VelocityNet(in_ch=3, cond_ch=6, base=cfg.base_channels,
                       time_dim=cfg.time_dim, seed=cfg.seed if seed is None else seed)


def build_tau(cfg: TrainConfig, seed=None) -> InitialStageModel:
    return InitialStageModel(channels=cfg.tau_channels,
                             seed=cfg.seed + 1 if seed is None else seed)


def degrade_batch(batch: np.ndarray, spec: DegradationSpec, rng) -> np.ndarray:
    return np.stack([degrade(img, spec, rng)[0] for img in batch])


def _param_norm_summary(model, limit=5):
    norms = [(name, float(np.linalg.norm(p.data)))
             for name, p in model.named_parameters()]
    worst = sorted(norms, key=lambda kv: -kv[1])[:limit]
    return ", ".join(f"{n}={v:.3g}" for n, v in worst)


def train_step(model, tau, opt, batch, cfg: TrainConfig, rng, predictor=None):
    """One optimization step on a (B,3,R,R) clean batch in [0,1].

    `predictor` is a test hook: a plain (zt, t, cond) -> velocity callable
    evaluated instead of the network; no parameters are updated then.
    """
    b = batch.shape[0]
    lq = degrade_batch(batch, cfg.degradation, rng)
    coarse = tau.restore(lq) if (cfg.use_initial_stage and tau is not None) else lq
    z1 = batch.astype(np.float32, copy=False)
    z0 = rng.standard_normal(batch.shape, dtype=np.float32)
    if cfg.use_flow:
        t = rng.uniform(0.0, 1.0 - cfg.t_epsilon, size=b)
    else:
        t = np.zeros(b)  # distillation ablation: train only at t=0
    tb = t.reshape(b, 1, 1, 1)
    zt64 = tb * z1 + (1.0 - tb) * z0
    zt = zt64.astype(np.float32)
    cond = build_condition(coarse, zt)
    target = z1 - z0
    if predictor is not None:
        v = np.asarray(predictor(zt64, t, cond))
        return float(np.mean((target - v) ** 2))
    v_pred = model.forward(Tensor(zt), t, cond)
    loss = ad.tmean(ad.square(ad.sub(Tensor(target), v_pred)))
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericError(
            f"non-finite training loss; sampled t={np.round(t, 4).tolist()}; "
            f"largest parameter norms: {_param_norm_summary(model)}")
    loss.backward()
    opt.step()
    opt.zero_grad()
    return value


def pretrain_tau(tau, images, cfg: TrainConfig, rng, steps=None, log=None):
    """MSE regression of the coarse restorer on the configured degradation."""
    steps = cfg.tau_steps if steps is None else steps
    opt = AdamW(list(tau.named_parameters()), lr=cfg.tau_lr,
                betas=(cfg.beta1, cfg.beta2), eps=cfg.eps,
                weight_decay=cfg.weight_decay)
    history = []
    for step in range(steps):
        idx = rng.integers(0, len(images), size=cfg.batch_size)
        batch = images[idx]
        lq = degrade_batch(batch, cfg.degradation, rng)
        out = tau.forward(Tensor(lq))
        loss = ad.tmean(ad.square(ad.sub(Tensor(batch), out)))
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericError(f"non-finite tau loss at step {step}")
        loss.backward()
        opt.step()
        opt.zero_grad()
        history.append(value)
        if log and (step + 1) % log == 0:
            print(f"  tau step {step + 1}/{steps}  loss {value:.5f}")
    return history


def train(cfg: TrainConfig, train_images: np.ndarray, tau=None, log=None):
    """Full training run; returns (model, tau, optimizer, loss history).

    Deterministic given cfg (including seed): model init, tau pretraining,
    and every draw in the step loop come from one seed tree.
    """
    ss = np.random.SeedSequence(cfg.seed)
    s_model, s_tau, s_taustream, s_stream = ss.spawn(4)
    model = build_velocity_net(cfg, seed=s_model)
    if cfg.use_initial_stage:
        if tau is None:
            tau = build_tau(cfg, seed=s_tau)
            pretrain_tau(tau, train_images, cfg,
                         np.random.default_rng(s_taustream), log=log)
        tau.set_trainable(False)
    else:
        tau = None
    opt = AdamW(list(model.named_parameters()), lr=cfg.lr,
                betas=(cfg.beta1, cfg.beta2), eps=cfg.eps,
                weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(s_stream)
    history = []
    for step in range(cfg.total_steps):
        idx = rng.integers(0, len(train_images), size=cfg.batch_size)
        loss = train_step(model, tau, opt, train_images[idx], cfg, rng)
        history.append(loss)
        if log and (step + 1) % log == 0:
            recent = float(np.mean(history[-log:]))
            print(f"  step {step + 1}/{cfg.total_steps}  loss {recent:.5f}")
    return model, tau, opt, history


def inference_sampler_config(cfg: TrainConfig) -> flow.SamplerConfig:
    """Resolve the sampler the ablation flags ask for."""
    if not cfg.use_flow:
        # distillation student: a single full step from t=0
        return flow.SamplerConfig(mode=flow.EULER, n=1, k=0)
    if not cfg.use_meanvalue:
        return flow.SamplerConfig(mode=flow.EULER, n=cfg.sampler.n, k=0)
    return replace(cfg.sampler, mode=flow.MEANVALUE,
                   jump_from_origin=cfg.jump_from_origin)


def enhance(model, tau, lq: np.ndarray, cfg: TrainConfig, seed=0,
            counter=None) -> np.ndarray:
    """Restore one (3,H,W) degraded image in [0,1].

    `counter`, if given, is a list receiving one entry per network
    evaluation (the time each evaluation ran at).
    """
    lq = np.asarray(lq, dtype=np.float32)
    rng = np.random.default_rng(seed)
    z0 = rng.standard_normal((1,) + lq.shape, dtype=np.float32)
    coarse = tau.restore(lq[None]) if (cfg.use_initial_stage and tau is not None) else lq[None]

    def field(z, t, _cond):
        if counter is not None:
            counter.append(t)
        return model.predict(z, t, build_condition(coarse, z))

    out = flow.sample(field, z0, None, inference_sampler_config(cfg))
    return np.clip(out[0], 0.0, 1.0).astype(np.float32)


@dataclass
class MetricReport:
    per_image: list
    mean_psnr: float
    mean_ssim: float
    images_per_second: float

    def to_dict(self):
        return {"per_image": self.per_image, "mean_psnr": self.mean_psnr,
                "mean_ssim": self.mean_ssim,
                "images_per_second": self.images_per_second}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self):
        lines = [f"{'id':>6}  {'psnr_db':>8}  {'ssim':>7}"]
        for row in self.per_image:
            lines.append(f"{row['id']:>6}  {row['psnr']:>8.3f}  {row['ssim']:>7.4f}")
        lines.append(f"{'mean':>6}  {self.mean_psnr:>8.3f}  {self.mean_ssim:>7.4f}")
        lines.append(f"throughput: {self.images_per_second:.3f} images/s")
        return "\n".join(lines)


def evaluate(model, tau, images: np.ndarray, cfg: TrainConfig, seed=0) -> MetricReport:
    """Degrade each clean image with a per-image seeded draw, enhance, and
    score against the clean reference."""
    if len(images) == 0:
        raise DomainError("evaluate needs a non-empty split")
    per = []
    t0 = time.perf_counter()
    for i, clean in enumerate(images):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        lq, _ = degrade(clean, cfg.degradation, rng)
        out = enhance(model, tau, lq, cfg,
                      seed=np.random.SeedSequence([seed, i, 1]))
        per.append({"id": i, "psnr": psnr(out, clean), "ssim": ssim(out, clean)})
    elapsed = time.perf_counter() - t0
    return MetricReport(
        per_image=per,
        mean_psnr=float(np.mean([r["psnr"] for r in per])),
        mean_ssim=float(np.mean([r["ssim"] for r in per])),
        images_per_second=len(images) / elapsed if elapsed > 0 else float("inf"))


def baseline_report(images: np.ndarray, cfg: TrainConfig, seed=0) -> MetricReport:
    """Metrics of the degraded inputs themselves (the no-op baseline)."""
    per = []
    t0 = time.perf_counter()
    for i, clean in enumerate(images):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        lq, _ = degrade(clean, cfg.degradation, rng)
        per.append({"id": i, "psnr": psnr(lq, clean), "ssim": ssim(lq, clean)})
    elapsed = time.perf_counter() - t0
    return MetricReport(per_image=per,
                        mean_psnr=float(np.mean([r["psnr"] for r in per])),
                        mean_ssim=float(np.mean([r["ssim"] for r in per])),
                        images_per_second=len(images) / elapsed)


def sweep_midpoint_over_set(model, tau, images, cfg: TrainConfig, n=None, seed=0):
    """Paper-style midpoint selection on a small validation set: mean PSNR
    per candidate k, ties to the smallest k. Returns (best_k, scores)."""
    n = cfg.sampler.n if n is None else n
    eval_set = []
    for i, clean in enumerate(images):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        lq, _ = degrade(clean, cfg.degradation, rng)
        coarse = tau.restore(lq[None]) if (cfg.use_initial_stage and tau is not None) else lq[None]
        zrng = np.random.default_rng(np.random.SeedSequence([seed, i, 1]))
        z0 = zrng.standard_normal((1,) + clean.shape, dtype=np.float32)
        eval_set.append((z0, coarse, clean[None]))

    def field(z, t, coarse):
        return model.predict(z, t, build_condition(coarse, z))

    def metric(out, ref):
        return psnr(np.clip(out, 0.0, 1.0), ref)

    scores = flow.sweep_midpoint_scores(field, eval_set, n, metric)
    best_k = flow.sweep_midpoint(field, eval_set, n, metric)
    return best_k, scores


def bench_samplers(model, tau, images, cfg: TrainConfig, seed=0, euler_steps=20):
    """Same-machine, same-corpus throughput of mean-value sampling versus a
    long Euler schedule."""
    results = {}
    for label, override in (
            ("meanvalue", replace(cfg, use_flow=True, use_meanvalue=True)),
            (f"euler{euler_steps}", replace(
                cfg, use_flow=True, use_meanvalue=False,
                sampler=flow.SamplerConfig(mode=flow.EULER, n=euler_steps, k=0)))):
        counter = []
        t0 = time.perf_counter()
        for i, img in enumerate(images):
            enhance(model, tau, img, override,
                    seed=np.random.SeedSequence([seed, i]), counter=counter)
        elapsed = time.perf_counter() - t0
        results[label] = {"images_per_second": len(images) / elapsed,
                          "evaluations": len(counter),
                          "seconds": elapsed}
    return results


# --- checkpoint orchestration ----------------------------------------------

def save_checkpoint(path, model, opt=None, cfg: TrainConfig | None = None):
    """Model (and optionally optimizer/config) -> manifest+blob container."""
    tensors = dict(model.state_dict())
    meta = {"kind": "tau" if isinstance(model, InitialStageModel) else "velocity",
            "arch": model.arch_config()}
    if cfg is not None:
        meta["config"] = cfg.to_dict()
    if opt is not None:
        tensors.update(opt.state_tensors())
        meta["opt"] = opt.hyperparams()
    save_tensors(path, tensors, meta)


def load_checkpoint(path):
    """Rebuild the model recorded at `path`; returns (model, meta, tensors)."""
    tensors, meta = load_tensors(path)
    arch = meta.get("arch", {})
    if meta.get("kind") == "tau":
        model = InitialStageModel(**arch)
    else:
        model = VelocityNet(**arch)
    model.load_state_dict({k: v for k, v in tensors.items()
                           if not k.startswith("opt.")})
    return model, meta, tensors
