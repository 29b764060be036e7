"""Synthetic gaze-annotated benchmark with a planted shortcut.

Each image is a smoothed-noise background; positive-class images add one
Gaussian "lesion" blob at a random location, and the readers' fixations
land on that blob (negatives get scattered short fixations). A small
bright corner tag is highly correlated with the positive label in the
training split but statistically independent of it in the test split, so
a model that keys on the tag instead of the lesion collapses at test time.

Every sample is generated from its own PCG64 sub-stream of the master
seed, so generation is deterministic and order-independent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ContractError
from .gaze import GazeRecord, read_gaze_csv, write_gaze_csv
from .pgm import read_pgm16, write_pgm16
from .rng import generator

DATASET_SCHEMA = "dataset/1"


@dataclass(frozen=True)
class DatasetConfig:
    n_train: int = 2000
    n_test: int = 500
    image_size: int = 32
    positive_fraction: float = 0.5
    rho_train: float = 0.95
    rho_test: float = 0.0
    background_low: float = 0.10
    background_high: float = 0.45
    background_smoothing: float = 1.5
    lesion_amplitude_low: float = 0.35
    lesion_amplitude_high: float = 0.55
    lesion_sigma_low: float = 2.0
    lesion_sigma_high: float = 3.0
    lesion_margin: int = 9
    tag_size: int = 4
    tag_value: float = 0.95
    fixations_positive: int = 5
    fixations_negative: int = 6
    fixation_jitter: float = 1.2
    duration_lesion: tuple = (200.0, 800.0)
    duration_scatter: tuple = (40.0, 120.0)

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 1:
            raise ContractError("split sizes must be positive")
        if not 0.0 < self.positive_fraction < 1.0:
            raise ContractError("positive_fraction must be strictly between 0 and 1")
        for rho in (self.rho_train, self.rho_test):
            if not -1.0 <= rho <= 1.0:
                raise ContractError(f"tag/label correlation must be in [-1, 1], got {rho}")
        if self.lesion_margin * 2 >= self.image_size:
            raise ContractError("lesion_margin leaves no room for lesion centers")

    def to_dict(self) -> dict:
        d = {}
        for k, v in self.__dict__.items():
            d[k] = list(v) if isinstance(v, tuple) else v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        for k in ("duration_lesion", "duration_scatter"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class SyntheticSample:
    image_id: str
    image: np.ndarray              # (1, H, W) in [0, 1]
    label: int
    gaze: GazeRecord
    shortcut_tag_present: bool
    lesion_center: tuple | None = None


def _split_labels(n: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Exactly round(n * fraction) positives, in a shuffled order."""
    n_pos = int(round(n * fraction))
    labels = np.array([1] * n_pos + [0] * (n - n_pos))
    return labels[rng.permutation(n)]


def _render_sample(image_id: str, label: int, rho: float, cfg: DatasetConfig,
                   rng: np.random.Generator) -> SyntheticSample:
    size = cfg.image_size
    noise = rng.uniform(0.0, 1.0, (size, size))
    bg = gaussian_filter(noise, sigma=cfg.background_smoothing, mode="reflect")
    lo, hi = bg.min(), bg.max()
    span = hi - lo if hi > lo else 1.0
    img = cfg.background_low + (bg - lo) / span * (cfg.background_high - cfg.background_low)

    lesion_center = None
    if label == 1:
        m = cfg.lesion_margin
        cx = int(rng.integers(m, size - m))
        cy = int(rng.integers(m, size - m))
        amp = rng.uniform(cfg.lesion_amplitude_low, cfg.lesion_amplitude_high)
        sig = rng.uniform(cfg.lesion_sigma_low, cfg.lesion_sigma_high)
        ys = np.arange(size)[:, None]
        xs = np.arange(size)[None, :]
        img = img + amp * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sig * sig))
        lesion_center = (cx, cy)

    # Tag agrees with the label except with probability (1 - rho)/2, which
    # makes the empirical tag/label phi coefficient approach rho.
    flip = rng.random() < (1.0 - rho) / 2.0
    tag = bool(label) ^ flip
    if tag:
        img[: cfg.tag_size, : cfg.tag_size] = cfg.tag_value
    np.clip(img, 0.0, 1.0, out=img)

    fixations = []
    if label == 1:
        cx, cy = lesion_center
        for _ in range(cfg.fixations_positive):
            fx = float(np.clip(cx + rng.normal(0.0, cfg.fixation_jitter), 0, size - 1))
            fy = float(np.clip(cy + rng.normal(0.0, cfg.fixation_jitter), 0, size - 1))
            fixations.append((fx, fy, float(rng.uniform(*cfg.duration_lesion))))
    else:
        for _ in range(cfg.fixations_negative):
            fx = float(rng.uniform(0, size - 1))
            fy = float(rng.uniform(0, size - 1))
            fixations.append((fx, fy, float(rng.uniform(*cfg.duration_scatter))))

    return SyntheticSample(
        image_id=image_id,
        image=img[None, :, :],
        label=int(label),
        gaze=GazeRecord(image_id=image_id, fixations=fixations),
        shortcut_tag_present=tag,
        lesion_center=lesion_center,
    )


def generate_dataset(cfg: DatasetConfig, seed: int):
    """Build (train, test) splits deterministically from the master seed."""
    splits = []
    for split_id, (name, n, rho) in enumerate(
        (("train", cfg.n_train, cfg.rho_train), ("test", cfg.n_test, cfg.rho_test))
    ):
        labels = _split_labels(n, cfg.positive_fraction, generator(seed, split_id, 0xA11))
        samples = [
            _render_sample(f"{name}_{i:05d}", int(labels[i]), rho, cfg,
                           generator(seed, split_id, i))
            for i in range(n)
        ]
        splits.append(samples)
    return splits[0], splits[1]


def tag_label_correlation(samples) -> float:
    """Empirical phi coefficient between the corner tag and the label."""
    tags = np.array([float(s.shortcut_tag_present) for s in samples])
    labels = np.array([float(s.label) for s in samples])
    return float(np.corrcoef(tags, labels)[0, 1])


# ---------------------------------------------------------------------------
# on-disk layout
# ---------------------------------------------------------------------------


def save_dataset(path, train, test, cfg: DatasetConfig, seed: int) -> None:
    """Write images (16-bit PGM), labels.csv, gaze.csv, and the manifest."""
    root = Path(path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    all_samples = list(train) + list(test)
    for s in all_samples:
        write_pgm16(root / "images" / f"{s.image_id}.pgm", s.image[0])
    with open(root / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write("image_id,label,shortcut_tag\n")
        for s in all_samples:
            fh.write(f"{s.image_id},{s.label},{int(s.shortcut_tag_present)}\n")
    write_gaze_csv(root / "gaze.csv", [s.gaze for s in all_samples])
    manifest = {
        "schema": DATASET_SCHEMA,
        "seed": seed,
        "config": cfg.to_dict(),
        "train_ids": [s.image_id for s in train],
        "test_ids": [s.image_id for s in test],
    }
    with open(root / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_dataset(path):
    """Read a saved dataset; images come back quantized to 16 bits."""
    root = Path(path)
    with open(root / "manifest.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("schema") != DATASET_SCHEMA:
        raise ContractError(f"{path}: unknown dataset schema {manifest.get('schema')!r}")
    labels = {}
    tags = {}
    with open(root / "labels.csv", "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "image_id,label,shortcut_tag":
            raise ContractError(f"{path}/labels.csv: unexpected header {header!r}")
        for line in fh:
            image_id, label, tag = line.strip().split(",")
            labels[image_id] = int(label)
            tags[image_id] = bool(int(tag))
    gaze = read_gaze_csv(root / "gaze.csv")

    def load_split(ids):
        out = []
        for image_id in ids:
            img = read_pgm16(root / "images" / f"{image_id}.pgm")
            out.append(SyntheticSample(
                image_id=image_id,
                image=img[None, :, :],
                label=labels[image_id],
                gaze=gaze.get(image_id, GazeRecord(image_id=image_id)),
                shortcut_tag_present=tags[image_id],
            ))
        return out

    return load_split(manifest["train_ids"]), load_split(manifest["test_ids"]), manifest
