"""Synthetic degradation operators and their composition.

The restoration pipeline is blur -> downscale -> noise -> compression,
optionally repeated with freshly sampled parameters, then resized back to
the original resolution so the degraded and clean images stay aligned for
conditioning. Inpainting masks pixels; color degradation jitters channels
or collapses to grayscale.

Every sampled parameter lands in a `meta` dict; `replay(x, meta)` reruns
the pipeline without sampling and reproduces the output bitwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DomainError, ShapeMismatchError

SCHEMA_VERSION = 1

# JPEG Annex K luminance quantization table.
_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99]], dtype=np.float64)

_LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def _dct_matrix():
    n = np.arange(8)
    k = n[:, None]
    m = np.cos(math.pi * (2 * n[None, :] + 1) * k / 16.0)
    m[0] *= math.sqrt(1.0 / 8.0)
    m[1:] *= math.sqrt(2.0 / 8.0)
    return m


_DCT = _dct_matrix()


@dataclass
class BlurSpec:
    kind: str = "gaussian_iso"
    sigma_range: tuple = (0.2, 3.0)
    kernel_size: int = 13


@dataclass
class DownscaleSpec:
    r_range: tuple = (1.0, 4.0)
    resample: str = "bilinear"


@dataclass
class NoiseSpec:
    sigma_range: tuple = (0.0, 0.1)


@dataclass
class CompressionSpec:
    quality_range: tuple = (30, 95)


@dataclass
class MaskSpec:
    kind: str = "box"
    coverage_range: tuple = (0.1, 0.4)


@dataclass
class ColorSpec:
    kind: str = "jitter"
    strength_range: tuple = (0.1, 0.5)


@dataclass
class DegradationSpec:
    task: str = "restoration"
    blur: BlurSpec = field(default_factory=BlurSpec)
    downscale: DownscaleSpec = field(default_factory=DownscaleSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    compression: CompressionSpec = field(default_factory=CompressionSpec)
    order: int = 1
    mask: MaskSpec = field(default_factory=MaskSpec)
    color: ColorSpec = field(default_factory=ColorSpec)

    def __post_init__(self):
        if self.task not in ("restoration", "inpainting", "color"):
            raise DomainError(f"unknown task {self.task!r}")
        if self.order < 1:
            raise DomainError(f"order must be >= 1, got {self.order}")
        if self.blur.kernel_size % 2 == 0:
            raise DomainError("blur kernel size must be odd")
        for lo, hi, what in ((*self.blur.sigma_range, "blur sigma"),
                             (*self.downscale.r_range, "downscale r"),
                             (*self.noise.sigma_range, "noise sigma"),
                             (*self.compression.quality_range, "quality"),
                             (*self.mask.coverage_range, "mask coverage"),
                             (*self.color.strength_range, "color strength")):
            if lo > hi:
                raise DomainError(f"{what} range has lo > hi: ({lo}, {hi})")
        if self.downscale.r_range[0] < 1.0:
            raise DomainError("downscale factors must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        version = d.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise DomainError(f"degradation spec schema version {version} unsupported")
        kwargs = {}
        for key, sub in (("blur", BlurSpec), ("downscale", DownscaleSpec),
                         ("noise", NoiseSpec), ("compression", CompressionSpec),
                         ("mask", MaskSpec), ("color", ColorSpec)):
            if key in d:
                val = d.pop(key)
                kwargs[key] = sub(**{k: tuple(v) if isinstance(v, list) else v
                                     for k, v in val.items()})
        kwargs.update(d)
        return cls(**kwargs)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def gaussian_kernel(sigma, size: int) -> np.ndarray:
    """Discretized Gaussian blur kernel, normalized to sum 1.

    `sigma` is a scalar (isotropic) or (sigma_x, sigma_y, angle) triple.
    """
    if size % 2 == 0 or size < 1:
        raise DomainError(f"kernel size must be odd and positive, got {size}")
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    xx, yy = np.meshgrid(coords, coords, indexing="xy")
    if np.isscalar(sigma):
        if sigma <= 0:
            raise DomainError(f"sigma must be positive, got {sigma}")
        k = np.exp(-(xx ** 2 + yy ** 2) / (2.0 * float(sigma) ** 2))
    else:
        sx, sy, angle = sigma
        if sx <= 0 or sy <= 0:
            raise DomainError(f"sigma must be positive, got ({sx}, {sy})")
        ca, sa = math.cos(angle), math.sin(angle)
        u = ca * xx + sa * yy
        v = -sa * xx + ca * yy
        k = np.exp(-(u ** 2 / (2.0 * sx ** 2) + v ** 2 / (2.0 * sy ** 2)))
    k /= k.sum()
    return k.astype(np.float32)


def apply_blur(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel 2-D correlation with reflect padding; shape preserved."""
    c, h, w = x.shape
    kh, kw = kernel.shape
    if kh > h or kw > w:
        raise DomainError(f"kernel {kernel.shape} larger than image {(h, w)}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)), mode="reflect")
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    out = np.tensordot(windows, kernel.astype(np.float32), axes=([3, 4], [0, 1]))
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _round_half_up(v):
    return int(math.floor(v + 0.5))


def _nearest_indices(n_in, n_out):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    idx = np.ceil(src - 0.5).astype(int)  # exact ties pick the smaller index
    return np.clip(idx, 0, n_in - 1)


def _linear_indices(n_in, n_out):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, (src - i0).astype(np.float32)


def resize(x: np.ndarray, factor: float, resample="bilinear",
           direction="down") -> np.ndarray:
    """Rescale spatial dims by 1/factor (down) or factor (up) with
    half-pixel-center sampling."""
    if factor < 1.0:
        raise DomainError(f"factor must be >= 1, got {factor}")
    if direction not in ("down", "up"):
        raise DomainError(f"direction must be down or up, got {direction!r}")
    if resample not in ("bilinear", "nearest"):
        raise DomainError(f"unknown resample mode {resample!r}")
    c, h, w = x.shape
    scale = 1.0 / factor if direction == "down" else float(factor)
    ho, wo = _round_half_up(h * scale), _round_half_up(w * scale)
    if ho < 1 or wo < 1:
        raise DomainError(f"resize of {(h, w)} by {factor} degenerates to {(ho, wo)}")
    if (ho, wo) == (h, w):
        return x.astype(np.float32, copy=True)
    if resample == "nearest":
        out = x[:, _nearest_indices(h, ho), :][:, :, _nearest_indices(w, wo)]
        return out.astype(np.float32, copy=True)
    i0, i1, fy = _linear_indices(h, ho)
    rows = x[:, i0, :] * (1.0 - fy)[None, :, None] + x[:, i1, :] * fy[None, :, None]
    j0, j1, fx = _linear_indices(w, wo)
    out = rows[:, :, j0] * (1.0 - fx)[None, None, :] + rows[:, :, j1] * fx[None, None, :]
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def add_noise(x: np.ndarray, sigma: float, rng) -> np.ndarray:
    """Gaussian pixel noise, clamped back to [0, 1]."""
    if sigma < 0:
        raise DomainError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return x.astype(np.float32, copy=True)
    g = rng.standard_normal(x.shape, dtype=np.float32)
    return np.clip(x + np.float32(sigma) * g, 0.0, 1.0)


def _quant_table(quality: int) -> np.ndarray:
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    table = np.floor((_LUMA_TABLE * scale + 50.0) / 100.0)
    return np.clip(table, 1.0, 255.0)


def compress(x: np.ndarray, quality: int) -> np.ndarray:
    """Block-DCT compression surrogate: 8x8 DCT per channel, luminance-table
    quantization at the given quality, inverse DCT, clamp."""
    if not 1 <= quality <= 100:
        raise DomainError(f"quality must be in [1, 100], got {quality}")
    c, h, w = x.shape
    hp, wp = -h % 8, -w % 8
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, hp), (0, wp)), mode="edge")
    levels = xp * 255.0 - 128.0
    nbh, nbw = levels.shape[1] // 8, levels.shape[2] // 8
    blocks = np.ascontiguousarray(
        levels.reshape(c, nbh, 8, nbw, 8).transpose(0, 1, 3, 2, 4))
    coef = _DCT @ blocks @ _DCT.T
    qt = _quant_table(quality)
    coef = np.round(coef / qt) * qt
    rec = _DCT.T @ coef @ _DCT
    rec = rec.transpose(0, 1, 3, 2, 4).reshape(c, nbh * 8, nbw * 8)
    out = (rec[:, :h, :w] + 128.0) / 255.0
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def apply_mask(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero out hidden pixels; mask is (H, W) or (C, H, W) of {0, 1}."""
    if mask.ndim == 2:
        if mask.shape != x.shape[1:]:
            raise ShapeMismatchError(f"mask {mask.shape} vs image {x.shape}")
        mask = mask[None]
    elif mask.shape != x.shape:
        raise ShapeMismatchError(f"mask {mask.shape} vs image {x.shape}")
    return (x * mask).astype(np.float32)


def sample_mask_params(shape_hw, mask_spec: MaskSpec, rng) -> dict:
    h, w = shape_hw
    if mask_spec.kind == "box":
        cov = float(rng.uniform(*mask_spec.coverage_range))
        aspect = float(rng.uniform(0.5, 2.0))
        mh = int(np.clip(_round_half_up(math.sqrt(cov * h * w * aspect)), 1, h))
        mw = int(np.clip(_round_half_up(cov * h * w / mh), 1, w))
        top = int(rng.integers(0, h - mh + 1))
        left = int(rng.integers(0, w - mw + 1))
        return {"kind": "box", "top": top, "left": left, "height": mh, "width": mw}
    if mask_spec.kind == "polyline":
        strokes = []
        for _ in range(int(rng.integers(1, 5))):
            y, x = float(rng.uniform(0, h)), float(rng.uniform(0, w))
            pts = [[y, x]]
            for _ in range(int(rng.integers(2, 6))):
                ang = float(rng.uniform(0, 2 * math.pi))
                ln = float(rng.uniform(0.2, 0.5)) * min(h, w)
                y = float(np.clip(y + ln * math.sin(ang), 0, h - 1))
                x = float(np.clip(x + ln * math.cos(ang), 0, w - 1))
                pts.append([y, x])
            strokes.append({"points": pts, "width": int(rng.integers(1, 4))})
        return {"kind": "polyline", "strokes": strokes}
    raise DomainError(f"unknown mask kind {mask_spec.kind!r}")


def build_mask(shape_hw, params: dict) -> np.ndarray:
    """Rasterize recorded mask parameters into a {0,1} float mask
    (1 = visible)."""
    h, w = shape_hw
    mask = np.ones((h, w), dtype=np.float32)
    if params["kind"] == "box":
        t, l = params["top"], params["left"]
        mask[t:t + params["height"], l:l + params["width"]] = 0.0
        return mask
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    for stroke in params["strokes"]:
        pts = stroke["points"]
        half = stroke["width"] / 2.0
        for (y0, x0), (y1, x1) in zip(pts[:-1], pts[1:]):
            dy, dx = y1 - y0, x1 - x0
            norm2 = dy * dy + dx * dx
            if norm2 == 0:
                dist2 = (yy - y0) ** 2 + (xx - x0) ** 2
            else:
                s = np.clip(((yy - y0) * dy + (xx - x0) * dx) / norm2, 0.0, 1.0)
                dist2 = (yy - (y0 + s * dy)) ** 2 + (xx - (x0 + s * dx)) ** 2
            mask[dist2 <= half * half] = 0.0
    return mask


def _sample_color_params(color_spec: ColorSpec, rng) -> dict:
    if color_spec.kind == "grayscale":
        return {"kind": "grayscale"}
    if color_spec.kind == "jitter":
        s = float(rng.uniform(*color_spec.strength_range))
        gains = [float(rng.uniform(1.0 - s, 1.0 + s)) for _ in range(3)]
        biases = [float(rng.uniform(-s, s)) for _ in range(3)]
        return {"kind": "jitter", "strength": s, "gains": gains, "biases": biases}
    raise DomainError(f"unknown color kind {color_spec.kind!r}")


def _apply_color(x: np.ndarray, params: dict) -> np.ndarray:
    if params["kind"] == "grayscale":
        luma = sum(wt * x[i] for i, wt in enumerate(_LUMA_WEIGHTS))
        return np.repeat(luma[None], 3, axis=0).astype(np.float32)
    gains = np.asarray(params["gains"], dtype=np.float32).reshape(3, 1, 1)
    biases = np.asarray(params["biases"], dtype=np.float32).reshape(3, 1, 1)
    return np.clip(x * gains + biases, 0.0, 1.0).astype(np.float32)


def color_degrade(x: np.ndarray, kind: str, strength: float, rng) -> np.ndarray:
    """Channel jitter or grayscale collapse of a 3xHxW image."""
    if x.shape[0] != 3:
        raise ShapeMismatchError(f"color ops need 3 channels, got {x.shape}")
    params = _sample_color_params(ColorSpec(kind=kind, strength_range=(strength, strength)), rng)
    return _apply_color(x, params)


def _odd_fit(size: int, limit: int) -> int:
    """Largest odd kernel size <= size that fits inside `limit`."""
    fit = min(size, limit if limit % 2 else limit - 1)
    return max(1, fit)


def _sample_params(shape, spec: DegradationSpec, rng) -> dict:
    c, h, w = shape
    meta = {"schema_version": SCHEMA_VERSION, "task": spec.task,
            "original_size": [h, w]}
    if spec.task == "restoration":
        reps = []
        cur_h, cur_w = h, w
        for _ in range(spec.order):
            rep = {}
            if spec.blur.kind == "gaussian_aniso":
                rep["sigma"] = [float(rng.uniform(*spec.blur.sigma_range)),
                                float(rng.uniform(*spec.blur.sigma_range)),
                                float(rng.uniform(0, math.pi))]
            else:
                rep["sigma"] = float(rng.uniform(*spec.blur.sigma_range))
            rep["kernel_size"] = _odd_fit(spec.blur.kernel_size, min(cur_h, cur_w))
            rep["r"] = float(rng.uniform(*spec.downscale.r_range))
            rep["noise_sigma"] = float(rng.uniform(*spec.noise.sigma_range))
            rep["noise_seed"] = int(rng.integers(0, 2 ** 63 - 1))
            rep["quality"] = int(rng.integers(spec.compression.quality_range[0],
                                              spec.compression.quality_range[1] + 1))
            reps.append(rep)
            cur_h = max(1, _round_half_up(cur_h / rep["r"]))
            cur_w = max(1, _round_half_up(cur_w / rep["r"]))
        meta["reps"] = reps
        meta["resample"] = spec.downscale.resample
    elif spec.task == "inpainting":
        meta["mask"] = sample_mask_params((h, w), spec.mask, rng)
    else:
        meta["color"] = _sample_color_params(spec.color, rng)
    return meta


def replay(x: np.ndarray, meta: dict) -> np.ndarray:
    """Re-run a degradation from recorded parameters; no sampling involved."""
    h, w = meta["original_size"]
    if x.shape[1:] != (h, w):
        raise ShapeMismatchError(f"image {x.shape} vs recorded size {(h, w)}")
    if meta["task"] == "restoration":
        y = x.astype(np.float32, copy=True)
        for rep in meta["reps"]:
            sigma = rep["sigma"]
            sigma = tuple(sigma) if isinstance(sigma, list) else sigma
            y = apply_blur(y, gaussian_kernel(sigma, rep["kernel_size"]))
            if rep["r"] > 1.0:
                y = resize(y, rep["r"], meta["resample"], "down")
            y = add_noise(y, rep["noise_sigma"],
                          np.random.default_rng(rep["noise_seed"]))
            y = compress(y, rep["quality"])
        if y.shape[1:] != (h, w):
            y = _resize_to(y, h, w)
        return y
    if meta["task"] == "inpainting":
        return apply_mask(x, build_mask((h, w), meta["mask"]))
    return _apply_color(x, meta["color"])


def _resize_to(x, h, w):
    """Bilinear resize back to an exact target size (the conditioning path
    needs degraded and clean images spatially aligned)."""
    c, ch, cw = x.shape
    i0, i1, fy = _linear_indices(ch, h)
    rows = x[:, i0, :] * (1.0 - fy)[None, :, None] + x[:, i1, :] * fy[None, :, None]
    j0, j1, fx = _linear_indices(cw, w)
    out = rows[:, :, j0] * (1.0 - fx)[None, None, :] + rows[:, :, j1] * fx[None, None, :]
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def degrade(x: np.ndarray, spec: DegradationSpec, rng):
    """Sample a degradation from the spec and apply it.

    Returns (degraded image, meta); replay(x, meta) reproduces the image
    bitwise.
    """
    if x.min() < 0.0 or x.max() > 1.0:
        raise DomainError("input must lie in [0, 1]")
    meta = _sample_params(x.shape, spec, rng)
    return replay(x, meta), meta
