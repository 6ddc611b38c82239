"""The velocity network and its building blocks.

Architecture: a 3-level convolutional encoder-decoder with sinusoidal time
embedding added per block, plus a conditioning branch (a trainable copy of
the encoder and middle block) whose features enter the base network through
zero-initialized 1x1 convolutions, so conditioning contributes nothing at
initialization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DomainError, NumericError, ShapeMismatchError


def time_embed(t: float, dim: int) -> np.ndarray:
    """Sinusoidal embedding of t in [0,1], interleaved [sin, cos, ...] pairs.

    The input is scaled by 1000 so the geometric frequency ladder
    10000^(-2(j-1)/dim) resolves the unit interval.
    """
    if dim % 2 or dim < 2:
        raise DomainError(f"embedding dim must be even and >= 2, got {dim}")
    half = dim // 2
    freqs = 10000.0 ** (-2.0 * np.arange(half) / dim)
    angles = 1000.0 * float(t) * freqs
    emb = np.empty(dim, dtype=np.float32)
    emb[0::2] = np.sin(angles)
    emb[1::2] = np.cos(angles)
    return emb


def time_embed_batch(ts, dim: int) -> np.ndarray:
    """(B,) times -> (B, dim) embeddings."""
    ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
    return np.stack([time_embed(float(t), dim) for t in ts]).astype(np.float32)


class Module:
    """Tiny registry base: parameters discovered by attribute walk, names
    derived from attribute paths (deterministic across runs)."""

    def named_parameters(self, prefix=""):
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}" if prefix else attr
            if isinstance(value, Tensor):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=name + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def param_count(self):
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def set_trainable(self, flag: bool):
        for p in self.parameters():
            p.requires_grad = flag

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, tensors):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(tensors))
        if missing:
            raise ShapeMismatchError(f"missing parameters: {missing[:5]}")
        for name, p in own.items():
            arr = np.asarray(tensors[name], dtype=np.float32)
            if arr.shape != p.data.shape:
                raise ShapeMismatchError(
                    f"parameter {name}: checkpoint {arr.shape} != model {p.data.shape}")
            p.data = np.ascontiguousarray(arr)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module, list):
    """List container whose items participate in parameter discovery."""

    def __init__(self, items=()):
        list.__init__(self, items)

    def named_parameters(self, prefix=""):
        for i, item in enumerate(self):
            yield from item.named_parameters(prefix=f"{prefix}{i}.")

    def __call__(self, *args, **kwargs):
        raise TypeError("ModuleList is a container, not a layer")


def _param(data):
    return Tensor(np.asarray(data, dtype=np.float32), requires_grad=True)


def _kaiming_uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv2d(Module):
    def __init__(self, cin, cout, ksize, rng=None, stride=1, padding=None,
                 zero_init=False):
        self.stride = stride
        self.padding = ksize // 2 if padding is None else padding
        if zero_init:
            self.w = _param(np.zeros((cout, cin, ksize, ksize)))
        else:
            fan_in = cin * ksize * ksize
            self.w = _param(_kaiming_uniform(rng, (cout, cin, ksize, ksize), fan_in))
        self.b = _param(np.zeros(cout))

    def forward(self, x):
        return ad.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, din, dout, rng=None, zero_init=False):
        if zero_init:
            self.w = _param(np.zeros((din, dout)))
        else:
            self.w = _param(_kaiming_uniform(rng, (din, dout), din))
        self.b = _param(np.zeros(dout))

    def forward(self, x):
        return ad.add(ad.matmul(x, self.w), self.b)


class GroupNorm(Module):
    def __init__(self, channels, groups=8, eps=1e-5):
        self.groups = groups
        self.eps = eps
        self.gamma = _param(np.ones(channels))
        self.beta = _param(np.zeros(channels))

    def forward(self, x):
        return ad.group_norm(x, self.gamma, self.beta, self.groups, self.eps)


class ConvBlock(Module):
    """conv3x3 -> groupnorm -> +time bias -> SiLU."""

    def __init__(self, cin, cout, time_dim, rng, groups=8):
        self.conv = Conv2d(cin, cout, 3, rng)
        self.norm = GroupNorm(cout, groups)
        self.tproj = Linear(time_dim, cout, rng)

    def forward(self, x, temb):
        h = self.norm(self.conv(x))
        bias = self.tproj(temb)
        b, c = bias.data.shape
        h = ad.add(h, ad.reshape(bias, (b, c, 1, 1)))
        return ad.silu(h)


class Encoder(Module):
    """Stem, two levels with stride-2 transitions, and the middle block.
    Shared between the base network and the conditioning branch (separate
    instances, separate weights)."""

    def __init__(self, in_ch, base, time_dim, rng, groups=8):
        self.stem = Conv2d(in_ch, base, 3, rng)
        self.b1a = ConvBlock(base, base, time_dim, rng, groups)
        self.b1b = ConvBlock(base, base, time_dim, rng, groups)
        self.down1 = Conv2d(base, base * 2, 3, rng, stride=2)
        self.b2a = ConvBlock(base * 2, base * 2, time_dim, rng, groups)
        self.b2b = ConvBlock(base * 2, base * 2, time_dim, rng, groups)
        self.down2 = Conv2d(base * 2, base * 4, 3, rng, stride=2)
        self.mida = ConvBlock(base * 4, base * 4, time_dim, rng, groups)
        self.midb = ConvBlock(base * 4, base * 4, time_dim, rng, groups)

    def forward(self, x, temb):
        h = self.stem(x)
        s1 = self.b1b(self.b1a(h, temb), temb)
        h = self.down1(s1)
        s2 = self.b2b(self.b2a(h, temb), temb)
        h = self.down2(s2)
        mid = self.midb(self.mida(h, temb), temb)
        return s1, s2, mid


@dataclass(frozen=True)
class Condition:
    """Guidance tensor: coarse restoration and flow state stacked on the
    channel axis, (B, 2*C, H, W)."""

    tensor: np.ndarray


def build_condition(coarse: np.ndarray, zt: np.ndarray) -> Condition:
    coarse = np.asarray(coarse)
    zt = np.asarray(zt)
    if coarse.ndim == 3:
        coarse = coarse[None]
    if zt.ndim == 3:
        zt = zt[None]
    if coarse.shape[0] != zt.shape[0] or coarse.shape[2:] != zt.shape[2:]:
        raise ShapeMismatchError(
            f"coarse {coarse.shape} and state {zt.shape} disagree spatially")
    if not (np.isfinite(coarse).all() and np.isfinite(zt).all()):
        raise NumericError("non-finite condition inputs")
    return Condition(np.concatenate([coarse, zt], axis=1).astype(np.float32))


class ConditionAdapter(Module):
    """c + gamma * MLP(c) with a learnable scale gamma (starts tiny)."""

    def __init__(self, channels, rng, gamma_init=1e-4):
        hidden = channels * 2
        self.fc1 = Conv2d(channels, hidden, 1, rng, padding=0)
        self.fc2 = Conv2d(hidden, channels, 1, rng, padding=0)
        self.gamma = _param(np.full((1,), gamma_init))

    def forward(self, c):
        h = self.fc2(ad.silu(self.fc1(c)))
        return ad.add(c, ad.mul(ad.reshape(self.gamma, (1, 1, 1, 1)), h))


class ConditionEntry(Module):
    """Adapter followed by the entry zero convolution aligning the condition
    to the branch input width; the projected time embedding enters as a bias
    inside the zero convolution (also zero-initialized)."""

    def __init__(self, cond_ch, out_ch, time_dim, rng):
        self.adapter = ConditionAdapter(cond_ch, rng)
        self.zconv = Conv2d(cond_ch, out_ch, 1, padding=0, zero_init=True)
        self.ztproj = Linear(time_dim, out_ch, zero_init=True)
        self.identity_override = False  # test hook: bypass adapter scaling + F

    def forward(self, c, temb):
        if self.identity_override:
            return c
        h = self.adapter(c)
        h = self.zconv(h)
        bias = self.ztproj(temb)
        b, ch = bias.data.shape
        return ad.add(h, ad.reshape(bias, (b, ch, 1, 1)))


class VelocityNet(Module):
    """Path predictor v(z_t, t, C): encoder-decoder with skip connections;
    conditioning injected additively into the skips and middle features
    through per-junction zero convolutions."""

    def __init__(self, in_ch=3, cond_ch=6, base=32, time_dim=64, groups=8, seed=0):
        rng = np.random.default_rng(seed)
        self.in_ch = in_ch
        self.cond_ch = cond_ch
        self.base = base
        self.time_dim = time_dim
        self.groups = groups
        self.tmlp = Linear(time_dim, time_dim, rng)
        self.enc = Encoder(in_ch, base, time_dim, rng, groups)
        self.dec1a = ConvBlock(base * 6, base * 2, time_dim, rng, groups)
        self.dec1b = ConvBlock(base * 2, base * 2, time_dim, rng, groups)
        self.dec2a = ConvBlock(base * 3, base, time_dim, rng, groups)
        self.dec2b = ConvBlock(base, base, time_dim, rng, groups)
        self.out = Conv2d(base, in_ch, 3, zero_init=True)
        self.entry = ConditionEntry(cond_ch, in_ch, time_dim, rng)
        self.inj = Encoder(in_ch, base, time_dim, rng, groups)
        self.j1 = Conv2d(base, base, 1, padding=0, zero_init=True)
        self.j2 = Conv2d(base * 2, base * 2, 1, padding=0, zero_init=True)
        self.jmid = Conv2d(base * 4, base * 4, 1, padding=0, zero_init=True)

    def arch_config(self):
        return {"in_ch": self.in_ch, "cond_ch": self.cond_ch, "base": self.base,
                "time_dim": self.time_dim, "groups": self.groups}

    def _temb(self, t, batch):
        ts = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,))
        emb = Tensor(time_embed_batch(ts, self.time_dim))
        return ad.silu(self.tmlp(emb))

    def process_condition(self, cond: Condition, t) -> Tensor:
        """Entry transform only: what the injection branch will consume."""
        c = cond.tensor if isinstance(cond, Condition) else np.asarray(cond)
        temb = self._temb(t, c.shape[0])
        return self.entry(Tensor(c), temb)

    def forward(self, z, t, cond: Condition | None = None) -> Tensor:
        z = z if isinstance(z, Tensor) else Tensor(z)
        b, _, h, w = z.data.shape
        if h % 4 or w % 4:
            raise DomainError(f"spatial dims must be multiples of 4, got {h}x{w}")
        temb = self._temb(t, b)
        s1, s2, mid = self.enc(z, temb)
        if cond is not None:
            r = self.entry(Tensor(cond.tensor), temb)
            g1, g2, gmid = self.inj(r, temb)
            s1 = ad.add(s1, self.j1(g1))
            s2 = ad.add(s2, self.j2(g2))
            mid = ad.add(mid, self.jmid(gmid))
        u = ad.concat([ad.upsample_nearest2x(mid), s2], axis=1)
        u = self.dec1b(self.dec1a(u, temb), temb)
        u = ad.concat([ad.upsample_nearest2x(u), s1], axis=1)
        u = self.dec2b(self.dec2a(u, temb), temb)
        return self.out(u)

    def predict(self, z, t, cond=None) -> np.ndarray:
        """Inference forward (no tape), with a finiteness check."""
        with ad.no_grad():
            v = self.forward(z, t, cond).data
        if not np.all(np.isfinite(v)):
            layer = self._first_nonfinite_layer(z, t, cond)
            raise NumericError(f"non-finite activations in layer {layer!r}")
        return v

    def _first_nonfinite_layer(self, z, t, cond):
        # diagnostic re-run, only on the error path
        z = z if isinstance(z, Tensor) else Tensor(z)
        with ad.no_grad():
            temb = self._temb(t, z.data.shape[0])
            if not np.all(np.isfinite(temb.data)):
                return "tmlp"
            s1, s2, mid = self.enc(z, temb)
            for name, f in (("enc.level1", s1), ("enc.level2", s2), ("enc.middle", mid)):
                if not np.all(np.isfinite(f.data)):
                    return name
            if cond is not None:
                r = self.entry(Tensor(cond.tensor), temb)
                if not np.all(np.isfinite(r.data)):
                    return "entry"
                for name, f in zip(("inj.level1", "inj.level2", "inj.middle"),
                                   self.inj(r, temb)):
                    if not np.all(np.isfinite(f.data)):
                        return name
        return "decoder"


class InitialStageModel(Module):
    """Coarse restoration network: a small residual CNN with a zero-initialized
    output convolution (exact identity at initialization), output clamped to
    the image range. Normalization-free, as is usual for image regression."""

    def __init__(self, channels=24, depth=4, seed=0):
        rng = np.random.default_rng(seed)
        self.channels = channels
        self.depth = depth
        self.stem = Conv2d(3, channels, 3, rng)
        self.body = ModuleList(Conv2d(channels, channels, 3, rng)
                               for _ in range(depth))
        self.out = Conv2d(channels, 3, 3, zero_init=True)
        self.calls = 0  # instrumentation: restore() invocations

    def arch_config(self):
        return {"channels": self.channels, "depth": self.depth}

    def forward(self, x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        h = ad.silu(self.stem(x))
        for conv in self.body:
            h = ad.silu(conv(h))
        return ad.clamp(ad.add(x, self.out(h)), 0.0, 1.0)

    def restore(self, lq: np.ndarray) -> np.ndarray:
        """Inference-mode coarse restoration of a (B,3,H,W) or (3,H,W) array."""
        self.calls += 1
        squeeze = lq.ndim == 3
        x = lq[None] if squeeze else lq
        with ad.no_grad():
            y = self.forward(Tensor(np.asarray(x, dtype=np.float32))).data
        return y[0] if squeeze else y
