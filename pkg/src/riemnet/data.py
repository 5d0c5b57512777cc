"""Datasets for the classification task: seeded Gaussian clusters or CSV."""
from __future__ import annotations

import csv
import itertools
import math
import re
from pathlib import Path

import numpy as np

from .errors import LabelOutOfRange, MalformedCsv

MIN_MEAN_DISTANCE = 6.0

_SYNTHETIC = re.compile(r"^\s*synthetic\s*\(\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*\)\s*$")


def parse_synthetic(spec: str):
    """``"synthetic(c, d, n)"`` -> ``(c, d, n)``, or None for anything else."""
    m = _SYNTHETIC.match(spec)
    return tuple(int(g) for g in m.groups()) if m else None


def synthetic_clusters(clusters: int, dim: int, n: int, seed=None):
    """``n`` points around ``clusters`` unit-variance Gaussian centres placed
    pairwise at least 6 apart; labels are the cluster index."""
    if clusters < 1 or dim < 1 or n < 1:
        raise ValueError(f"synthetic({clusters}, {dim}, {n}): all sizes must be positive")
    rng = np.random.default_rng(seed)
    # typical pairwise distance of N(0, s^2 I_d) centres is s*sqrt(2d)
    spread = 8.0 / math.sqrt(2.0 * dim)
    while True:
        for _ in range(100):
            means = rng.normal(0.0, spread, size=(clusters, dim))
            if all(np.linalg.norm(means[i] - means[j]) >= MIN_MEAN_DISTANCE
                   for i, j in itertools.combinations(range(clusters), 2)):
                break
        else:
            spread *= 1.5
            continue
        break
    labels = np.arange(n) % clusters
    rng.shuffle(labels)
    features = means[labels] + rng.standard_normal((n, dim))
    return features, labels.astype(np.int64)


def read_csv(path, n_classes=None):
    """Rows of floats whose last column is an integer class label."""
    rows, labels = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise MalformedCsv("need at least one feature and a label", lineno)
            try:
                feats = [float(c) for c in row[:-1]]
                label_f = float(row[-1])
            except ValueError as exc:
                raise MalformedCsv(str(exc), lineno) from None
            if not label_f.is_integer():
                raise MalformedCsv(f"label {row[-1]!r} is not an integer", lineno)
            if rows and len(feats) != len(rows[0]):
                raise MalformedCsv(f"expected {len(rows[0])} features, got {len(feats)}", lineno)
            label = int(label_f)
            if label < 0 or (n_classes is not None and label >= n_classes):
                raise LabelOutOfRange(f"row {lineno}: label {label} outside [0, {n_classes})")
            rows.append(feats)
            labels.append(label)
    if not rows:
        raise MalformedCsv(f"{path} contains no data rows")
    return np.array(rows, dtype=np.float64), np.array(labels, dtype=np.int64)


def load_dataset(cfg):
    """Features and labels for a classification config."""
    n_classes = cfg.architecture.layers[-1]
    spec = parse_synthetic(cfg.dataset)
    if spec is not None:
        c, d, n = spec
        if c > n_classes:
            raise LabelOutOfRange(f"{c} clusters but only {n_classes} output classes")
        return synthetic_clusters(c, d, n, seed=cfg.seed)
    path = Path(cfg.dataset)
    return read_csv(path, n_classes=n_classes)
