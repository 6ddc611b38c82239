"""Dataset ingestion, image IO, and the procedural toy corpus."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .degrade import _linear_indices
from .errors import IngestError

_EXTENSIONS = (".png", ".jpg", ".jpeg")


def load_image(path) -> np.ndarray:
    """8-bit RGB file -> float32 (3, H, W) in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_image(x: np.ndarray, path):
    """float32 (3, H, W) in [0, 1] -> 8-bit RGB PNG."""
    arr = np.clip(np.asarray(x), 0.0, 1.0)
    u8 = np.round(arr * 255.0).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(u8, mode="RGB").save(path)


@dataclass(frozen=True)
class ImageRecord:
    id: int
    path: str
    width: int
    height: int


@dataclass
class Dataset:
    root: str
    records: list
    splits: dict  # split name -> list of record ids

    def split_records(self, split):
        by_id = {r.id: r for r in self.records}
        return [by_id[i] for i in self.splits[split]]


def _fit_to_resolution(x: np.ndarray, resolution: int) -> np.ndarray:
    """Short side to `resolution` (bilinear), then center crop."""
    c, h, w = x.shape
    short = min(h, w)
    if short != resolution:
        scale = resolution / short
        nh = max(resolution, int(math.floor(h * scale + 0.5)))
        nw = max(resolution, int(math.floor(w * scale + 0.5)))
        i0, i1, fy = _linear_indices(h, nh)
        rows = x[:, i0, :] * (1 - fy)[None, :, None] + x[:, i1, :] * fy[None, :, None]
        j0, j1, fx = _linear_indices(w, nw)
        x = rows[:, :, j0] * (1 - fx)[None, None, :] + rows[:, :, j1] * fx[None, None, :]
        x = np.clip(x, 0.0, 1.0).astype(np.float32)
        c, h, w = x.shape
    top = (h - resolution) // 2
    left = (w - resolution) // 2
    return np.ascontiguousarray(x[:, top:top + resolution, left:left + resolution])


def ingest(root, split_fractions=(0.8, 0.1, 0.1), seed=0) -> Dataset:
    """Index a folder of images: deterministic filename order, then a seeded
    train/val/test split."""
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"corpus root {root} does not exist")
    paths = sorted(p for p in root.iterdir()
                   if p.suffix.lower() in _EXTENSIONS)
    records = []
    for p in paths:
        try:
            with Image.open(p) as im:
                w, h = im.size
        except Exception as exc:
            warnings.warn(f"skipping undecodable image {p}: {exc}")
            continue
        records.append(ImageRecord(id=len(records), path=str(p), width=w, height=h))
    if not records:
        raise IngestError(f"no decodable images under {root}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(records))
    n = len(records)
    n_train = int(split_fractions[0] * n)
    n_val = int(split_fractions[1] * n)
    splits = {"train": sorted(int(i) for i in order[:n_train]),
              "val": sorted(int(i) for i in order[n_train:n_train + n_val]),
              "test": sorted(int(i) for i in order[n_train + n_val:])}
    return Dataset(root=str(root), records=records, splits=splits)


def load_split(dataset: Dataset, split: str, resolution: int) -> np.ndarray:
    """Stack a split into (N, 3, resolution, resolution) float32."""
    recs = dataset.split_records(split)
    return np.stack([_fit_to_resolution(load_image(r.path), resolution)
                     for r in recs])


# --- procedural toy corpus ------------------------------------------------

def _texture(rng, size, kind):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / size
    img = np.zeros((3, size, size), dtype=np.float32)
    if kind == 0:  # smooth low-frequency plaid
        for ch in range(3):
            f1, f2 = rng.uniform(0.5, 3.0, size=2)
            p1, p2 = rng.uniform(0, 2 * math.pi, size=2)
            img[ch] = 0.5 + 0.25 * np.sin(2 * math.pi * f1 * xx + p1) \
                + 0.25 * np.sin(2 * math.pi * f2 * yy + p2)
    elif kind == 1:  # upsampled value noise
        cells = int(rng.integers(3, 7))
        coarse = rng.uniform(0, 1, size=(3, cells, cells)).astype(np.float32)
        i0, i1, fy = _linear_indices(cells, size)
        rows = coarse[:, i0, :] * (1 - fy)[None, :, None] \
            + coarse[:, i1, :] * fy[None, :, None]
        img = rows[:, :, i0] * (1 - fy)[None, None, :] \
            + rows[:, :, i1] * fy[None, None, :]
    elif kind == 2:  # two-color stripes or checks
        c0 = rng.uniform(0, 1, size=3).astype(np.float32)
        c1 = rng.uniform(0, 1, size=3).astype(np.float32)
        period = float(rng.uniform(0.1, 0.5))
        angle = float(rng.uniform(0, math.pi))
        coord = xx * math.cos(angle) + yy * math.sin(angle)
        sel = ((coord / period) % 1.0 < 0.5)
        if rng.uniform() < 0.5:
            coord2 = -xx * math.sin(angle) + yy * math.cos(angle)
            sel = sel ^ ((coord2 / period) % 1.0 < 0.5)
        img = np.where(sel[None], c0[:, None, None], c1[:, None, None])
    else:  # random shapes on a gradient background
        g0 = rng.uniform(0, 1, size=3).astype(np.float32)
        g1 = rng.uniform(0, 1, size=3).astype(np.float32)
        img = g0[:, None, None] * (1 - xx)[None] + g1[:, None, None] * xx[None]
        for _ in range(int(rng.integers(2, 6))):
            color = rng.uniform(0, 1, size=3).astype(np.float32)
            cy, cx = rng.uniform(0.1, 0.9, size=2)
            r = float(rng.uniform(0.08, 0.3))
            if rng.uniform() < 0.5:
                inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
            else:
                inside = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
            img = np.where(inside[None], color[:, None, None], img)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def make_toy_corpus(root, n=256, size=32, seed=0):
    """Write `n` procedurally generated RGB textures as PNGs."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n):
        img = _texture(rng, size, kind=i % 4)
        save_image(img, root / f"tex_{i:04d}.png")
    return str(root)
