"""Subject loading, row-wise z-scoring, synthetic band-coupled data and k-fold splits."""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

ZSCORE_EPS = 1e-8
# cycles/sample; low sits below and high above the first dyadic split
DEFAULT_BANDS = ((0.02, 0.06), (0.15, 0.25))


class DataError(Exception):
    """Raised for unreadable or inconsistent datasets."""


@dataclass
class RoiTimeSeries:
    subject_id: str
    x: np.ndarray  # (N, T)
    label: int


@dataclass
class Dataset:
    subjects: list[RoiTimeSeries]
    n_classes: int
    atlas_size: int = field(init=False)
    t_len: int = field(init=False)

    def __post_init__(self):
        if not self.subjects:
            raise DataError("empty dataset")
        shapes = {s.x.shape for s in self.subjects}
        if len(shapes) != 1:
            raise DataError(f"subjects disagree on shape: {sorted(shapes)}")
        self.atlas_size, self.t_len = self.subjects[0].x.shape
        if self.atlas_size < 2 or self.t_len < 8:
            raise DataError(f"need N >= 2 and T >= 8, got N={self.atlas_size}, T={self.t_len}")
        labels = self.labels
        if labels.min() < 0 or labels.max() >= self.n_classes:
            raise DataError(f"labels must lie in [0, {self.n_classes})")
        missing = sorted(set(range(self.n_classes)) - set(labels.tolist()))
        if missing:
            raise DataError(f"classes {missing} have no subjects")

    def __len__(self) -> int:
        return len(self.subjects)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.subjects], dtype=int)

    def stack(self, idx=None) -> np.ndarray:
        """Subjects' series as one (B, N, T) array."""
        subs = self.subjects if idx is None else [self.subjects[i] for i in idx]
        return np.stack([s.x for s in subs])


def zscore_rows(x: np.ndarray) -> np.ndarray:
    """Per-ROI z-score; constant rows become exact zeros."""
    x = np.asarray(x, dtype=np.float64)
    centered = x - x.mean(axis=-1, keepdims=True)
    std = centered.std(axis=-1, keepdims=True)
    dead = std <= ZSCORE_EPS
    out = centered / np.where(dead, 1.0, std)
    out[np.broadcast_to(dead, out.shape)] = 0.0
    return out


def _read_subject_csv(path: Path, subject_id: str) -> np.ndarray:
    if not path.is_file():
        raise DataError(f"subject {subject_id!r}: missing file {path}")
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise DataError(f"subject {subject_id!r}: non-numeric cell on line {lineno} ({exc})") from None
    if not rows:
        raise DataError(f"subject {subject_id!r}: empty CSV {path}")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DataError(f"subject {subject_id!r}: ragged CSV, row lengths {sorted(widths)}")
    return np.array(rows, dtype=np.float64)


def load_dataset(manifest_path) -> Dataset:
    """Read a JSON manifest and its per-subject CSVs, truncating to ``t_len`` and z-scoring rows."""
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise DataError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
        n_classes = int(manifest["n_classes"])
        t_len = int(manifest["t_len"])
        entries = manifest["subjects"]
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"malformed manifest {manifest_path}: {exc}") from None
    if not entries:
        raise DataError("empty dataset")

    root = manifest_path.parent
    subjects = []
    n_roi = None
    for entry in entries:
        sid = str(entry["id"])
        x = _read_subject_csv(root / entry["path"], sid)
        if n_roi is None:
            n_roi = x.shape[0]
        elif x.shape[0] != n_roi:
            raise DataError(f"subject {sid!r}: {x.shape[0]} ROIs, expected {n_roi}")
        if x.shape[1] < t_len:
            raise DataError(f"subject {sid!r}: {x.shape[1]} time points, shorter than t_len={t_len}")
        subjects.append(RoiTimeSeries(sid, zscore_rows(x[:, :t_len]), int(entry["label"])))
    return Dataset(subjects, n_classes)


def write_dataset(dataset: Dataset, out_dir, ground_truth: Optional[dict] = None) -> Path:
    """Write the manifest + CSV layout that :func:`load_dataset` reads. Returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "subjects").mkdir(parents=True, exist_ok=True)
    entries = []
    for s in dataset.subjects:
        rel = f"subjects/{s.subject_id}.csv"
        np.savetxt(out_dir / rel, s.x, delimiter=",", fmt="%.17g")
        entries.append({"id": s.subject_id, "path": rel, "label": int(s.label)})
    manifest = {"n_classes": dataset.n_classes, "t_len": dataset.t_len, "subjects": entries}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    if ground_truth is not None:
        (out_dir / "ground_truth.json").write_text(json.dumps(ground_truth, indent=2))
    return path


def synth_band_dataset(n_subjects: int, n_roi: int, t_len: int, n_classes: int = 2,
                       seed: int = 0, balanced: bool = True, noise: float = 0.3,
                       n_pairs: Optional[int] = None, bands=DEFAULT_BANDS) -> tuple[Dataset, dict]:
    """Subjects whose class is visible only in which band carries the planted coupling.

    Every ROI gets one sinusoid per band (random frequency inside the band,
    random phase) plus white noise, so single-ROI spectra look alike across
    classes. For a subject of class ``c`` the planted ROI pairs share their
    band-``c`` sinusoid exactly. Raw-series correlation of a planted pair is
    therefore the same in every class; only a band-resolved view separates them.
    """
    if n_roi < 4 or t_len < 64:
        raise ValueError(f"need n_roi >= 4 and t_len >= 64, got {n_roi}, {t_len}")
    if n_classes > len(bands):
        raise ValueError(f"{n_classes} classes but only {len(bands)} plantable bands")
    if n_classes < 2:
        raise ValueError("need at least two classes")
    n_pairs = max(1, n_roi // 4) if n_pairs is None else n_pairs
    if 2 * n_pairs > n_roi:
        raise ValueError(f"{n_pairs} disjoint pairs do not fit in {n_roi} ROIs")

    rng = np.random.default_rng(seed)
    pairs = [(2 * p, 2 * p + 1) for p in range(n_pairs)]
    if balanced:
        labels = np.arange(n_subjects) % n_classes
    else:
        labels = rng.integers(n_classes, size=n_subjects)
        labels[:n_classes] = np.arange(n_classes)
    labels = rng.permutation(labels)

    t = np.arange(t_len)
    subjects = []
    for s, label in enumerate(labels):
        freqs = np.stack([rng.uniform(lo, hi, size=n_roi) for lo, hi in bands], axis=1)
        phases = rng.uniform(0, 2 * np.pi, size=(n_roi, len(bands)))
        for i, j in pairs:
            freqs[j, label] = freqs[i, label]
            phases[j, label] = phases[i, label]
        comps = np.sin(2 * np.pi * freqs[:, :, None] * t + phases[:, :, None])
        x = comps.sum(axis=1) + noise * rng.standard_normal((n_roi, t_len))
        subjects.append(RoiTimeSeries(f"sub{s:04d}", zscore_rows(x), int(label)))

    truth = {
        "bands": [list(b) for b in bands],
        "pairs": [list(p) for p in pairs],
        "class_band": {str(c): c for c in range(n_classes)},
        "noise": noise,
        "seed": seed,
    }
    return Dataset(subjects, n_classes), truth


def _deal(labels: np.ndarray, idx: np.ndarray, k: int, rng, warn: bool) -> list[list[int]]:
    shards: list[list[int]] = [[] for _ in range(k)]
    offset = 0
    for c in np.unique(labels[idx]):
        members = rng.permutation(idx[labels[idx] == c])
        if warn and len(members) < k:
            warnings.warn(f"class {c} has {len(members)} < k={k} members; shards cannot all contain it")
        for n, i in enumerate(members):
            shards[(offset + n) % k].append(int(i))
        offset = (offset + len(members)) % k
    return shards


def split_kfold(dataset_or_labels, k: int, fold: int, seed: int = 0):
    """Stratified k-fold shards: test is shard ``fold``, validation the next shard, train the rest.

    Each class is shuffled and dealt round-robin across shards, with the deal
    offset carried from class to class so shard sizes stay within one of each
    other. With k == 2 there is no spare shard, so validation is a stratified
    ninth of the non-test shard.
    """
    labels = dataset_or_labels.labels if isinstance(dataset_or_labels, Dataset) else np.asarray(dataset_or_labels)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if not 0 <= fold < k:
        raise ValueError(f"fold must lie in [0, {k}), got {fold}")
    rng = np.random.default_rng(seed)
    shards = _deal(labels, np.arange(len(labels)), k, rng, warn=True)
    test = np.sort(shards[fold]).astype(int)
    if k == 2:
        rest = np.sort(shards[1 - fold]).astype(int)
        inner = _deal(labels, rest, 9, rng, warn=False)
        val = np.sort(inner[0]).astype(int)
        train = np.sort([i for shard in inner[1:] for i in shard]).astype(int)
        return train, val, test
    val = np.sort(shards[(fold + 1) % k]).astype(int)
    train = np.sort([i for s, shard in enumerate(shards) if s not in (fold, (fold + 1) % k) for i in shard])
    return train.astype(int), val, test
