"""Synthetic long-tailed multi-label data and the JSON-lines interchange format.

Record format, one per line::

    {"features": [0.1, -2.3, ...], "labels": [0, 4, 7], "split": "train"}

``labels`` holds strictly increasing 0-based indices. ``split`` is optional
and defaults to ``"train"``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .numerics import make_rng

SPLITS = ("train", "val", "test")


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray  # N x D float64
    labels: np.ndarray  # N x L uint8
    split: str = "train"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.features.ndim != 2 or self.labels.ndim != 2:
            raise DatasetError("features and labels must be matrices")
        if len(self.features) != len(self.labels):
            raise DatasetError("features and labels disagree on example count")
        if len(self.labels) and np.any(self.labels.sum(axis=1) == 0):
            raise DatasetError("every example needs at least one label")

    def __len__(self):
        return len(self.features)

    @property
    def num_labels(self) -> int:
        return self.labels.shape[1]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def label_frequencies(self) -> np.ndarray:
        return self.labels.sum(axis=0).astype(np.int64)

    @property
    def mean_labels(self) -> float:
        return float(self.labels.sum(axis=1).mean())

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.split)


@dataclass
class GeneratorConfig:
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 500
    num_features: int = 64
    num_labels: int = 20
    zipf_exponent: float = 1.2
    mean_labels: float = 2.4
    noise_scale: float = 3.0
    cooccurrence: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_labels < 2:
            raise ValueError("need at least two labels")
        if self.mean_labels < 1:
            raise ValueError("mean_labels must be at least 1")
        if self.mean_labels > self.num_labels:
            raise ValueError(f"mean_labels={self.mean_labels} exceeds num_labels={self.num_labels}")
        if self.zipf_exponent < 0 or self.noise_scale < 0 or self.cooccurrence <= 0:
            raise ValueError("zipf_exponent, noise_scale must be >= 0 and cooccurrence > 0")
        if min(self.n_train, self.n_val, self.n_test) < 0 or self.num_features < 1:
            raise ValueError("sizes must be non-negative")


def _sample_label_sets(cfg: GeneratorConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    L = cfg.num_labels
    prior = np.arange(1, L + 1, dtype=np.float64) ** -cfg.zipf_exponent
    prior /= prior.sum()
    # symmetric positive affinities; small concentration means strong co-occurrence
    aff = rng.gamma(cfg.cooccurrence, 1.0 / cfg.cooccurrence, size=(L, L))
    aff = 0.5 * (aff + aff.T)
    counts = np.minimum(rng.geometric(1.0 / cfg.mean_labels, size=n), L)
    labels = np.zeros((n, L), dtype=np.uint8)
    for i in range(n):
        chosen = [int(rng.choice(L, p=prior))]
        while len(chosen) < counts[i]:
            w = prior * aff[chosen].mean(axis=0)
            w[chosen] = 0.0
            chosen.append(int(rng.choice(L, p=w / w.sum())))
        labels[i, chosen] = 1
    return labels


def generate_longtail_dataset(cfg: GeneratorConfig) -> dict[str, Dataset]:
    """Draw train/val/test splits from one generative pass.

    Label ``j`` (0-based) has prior weight ``(j + 1) ** -zipf_exponent``.
    Features are the sum of fixed per-label Gaussian anchors plus isotropic
    noise, both scaled by ``1/sqrt(D)`` so the anchors have roughly unit norm.
    """
    rng = make_rng(cfg.seed)
    D = cfg.num_features
    anchors = rng.standard_normal((cfg.num_labels, D)) / np.sqrt(D)
    n = cfg.n_train + cfg.n_val + cfg.n_test
    labels = _sample_label_sets(cfg, n, rng)
    noise = rng.standard_normal((n, D)) / np.sqrt(D)
    features = labels.astype(np.float64) @ anchors + cfg.noise_scale * noise
    order = rng.permutation(n)
    bounds = np.cumsum([0, cfg.n_train, cfg.n_val, cfg.n_test])
    return {
        name: Dataset(features[order[lo:hi]], labels[order[lo:hi]], name)
        for name, lo, hi in zip(SPLITS, bounds[:-1], bounds[1:])
    }


def save_dataset(datasets, path) -> None:
    """Write one or more datasets to a single JSON-lines file."""
    if isinstance(datasets, Dataset):
        datasets = [datasets]
    elif isinstance(datasets, dict):
        datasets = list(datasets.values())
    with open(path, "w", encoding="utf-8") as fh:
        for ds in datasets:
            for x, y in zip(ds.features, ds.labels):
                rec = {"features": [float(v) for v in x],
                       "labels": [int(j) for j in np.flatnonzero(y)],
                       "split": ds.split}
                fh.write(json.dumps(rec) + "\n")


def _parse(path, num_labels):
    rows = []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                feats = rec["features"]
                labs = rec["labels"]
                split = rec.get("split", "train")
            except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
                raise DatasetError(f"{path}:{lineno}: malformed record ({exc})") from None
            if not isinstance(feats, list) or not all(
                    isinstance(v, (int, float)) and not isinstance(v, bool) for v in feats):
                raise DatasetError(f"{path}:{lineno}: features must be an array of numbers")
            if width is None:
                width = len(feats)
            elif len(feats) != width:
                raise DatasetError(f"{path}:{lineno}: feature width {len(feats)} != {width}")
            if not isinstance(labs, list) or not labs:
                raise DatasetError(f"{path}:{lineno}: empty label set")
            if not all(isinstance(j, int) and not isinstance(j, bool) for j in labs):
                raise DatasetError(f"{path}:{lineno}: labels must be integers")
            if any(b <= a for a, b in zip(labs, labs[1:])) or labs[0] < 0:
                raise DatasetError(f"{path}:{lineno}: labels must be strictly increasing and >= 0")
            if num_labels is not None and labs[-1] >= num_labels:
                raise DatasetError(f"{path}:{lineno}: label {labs[-1]} out of range for L={num_labels}")
            if split not in SPLITS:
                raise DatasetError(f"{path}:{lineno}: unknown split {split!r}")
            rows.append((feats, labs, split))
    if not rows:
        raise DatasetError(f"{path}: no records")
    if num_labels is None:
        num_labels = max(r[1][-1] for r in rows) + 1
    return rows, width, num_labels


def load_splits(path, num_labels: int | None = None) -> dict[str, Dataset]:
    """Parse a JSON-lines file into one :class:`Dataset` per split present."""
    rows, width, num_labels = _parse(Path(path), num_labels)
    out = {}
    for name in SPLITS:
        sel = [r for r in rows if r[2] == name]
        if not sel:
            continue
        feats = np.array([r[0] for r in sel], dtype=np.float64).reshape(len(sel), width)
        labels = np.zeros((len(sel), num_labels), dtype=np.uint8)
        for i, r in enumerate(sel):
            labels[i, r[1]] = 1
        out[name] = Dataset(feats, labels, name)
    return out


def load_dataset(path, num_labels: int | None = None, split: str | None = None) -> Dataset:
    """Load a single split (or the only split present) from a JSON-lines file."""
    splits = load_splits(path, num_labels)
    if split is None:
        if len(splits) != 1:
            raise DatasetError(f"{path} holds splits {sorted(splits)}; pick one")
        return next(iter(splits.values()))
    if split not in splits:
        raise DatasetError(f"{path} has no {split!r} records")
    return splits[split]


def batch_iterator(ds: Dataset, batch_size: int, seed: int, epoch: int) -> Iterator[np.ndarray]:
    """Yield index arrays of a seeded per-epoch shuffle.

    A trailing batch smaller than 2 is dropped since contrastive losses need
    at least one pair.
    """
    if batch_size < 2:
        raise ValueError("batch_size must be at least 2")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(epoch)])))
    order = rng.permutation(len(ds))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        if len(idx) >= 2:
            yield idx
