"""Synthetic bi-temporal paired datasets, splits and the on-disk format.

A dataset is two feature matrices (one per acquisition time) with a label
per time. Pairs are either unchanged (same class at both times, the second
observation correlated with the first) or changed (the second time drawn
from a different class). The directory format below is deliberately plain
so real scene features can be dropped in:

    meta.json    n, d_in, n_classes and the generator config
    x1.f64       row-major little-endian float64, n x d_in
    x2.f64       same layout as x1.f64
    labels.csv   header ``l1,l2``, one row of two class ids per pair
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ManifestError
from .tensor import Matrix

SPLIT_RATIOS = (0.7, 0.1, 0.2)


@dataclass
class PairedDataset:
    x1: Matrix
    x2: Matrix
    l1: np.ndarray
    l2: np.ndarray
    n_classes: int
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.x1.shape[0]

    @property
    def d_in(self) -> int:
        return self.x1.shape[1]


@dataclass
class SplitIndices:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def gen_synthetic(n_classes: int, d_in: int, n_pairs: int, p_change: float,
                  noise_sigma: float, temporal_corr: float, seed: int,
                  imbalance: float = 0.0) -> PairedDataset:
    """Generate a paired dataset around Gaussian class prototypes.

    Time-1 samples are ``prototype(c1) + noise``. Unchanged pairs keep the
    class and reuse a ``temporal_corr`` fraction of the time-1 deviation, so
    the two observations are correlated; changed pairs draw a fresh sample
    from a uniformly chosen different class. ``imbalance`` is a power-law
    exponent on class frequencies (0 = uniform).
    """
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    if not (0.0 <= p_change <= 1.0):
        raise ValueError(f"p_change must lie in [0, 1], got {p_change}")
    if not (0.0 <= temporal_corr <= 1.0):
        raise ValueError(f"temporal_corr must lie in [0, 1], got {temporal_corr}")
    if noise_sigma < 0.0 or d_in < 1 or n_pairs < 1:
        raise ValueError("noise_sigma, d_in and n_pairs must be positive")
    if imbalance < 0.0:
        raise ValueError(f"imbalance must be nonnegative, got {imbalance}")

    rng = np.random.default_rng(seed)
    prototypes = rng.normal(size=(n_classes, d_in))
    freq = (1.0 + np.arange(n_classes)) ** (-imbalance)
    class_probs = freq / freq.sum()

    c1 = rng.choice(n_classes, size=n_pairs, p=class_probs)
    changed = rng.random(n_pairs) < p_change
    c2 = c1.copy()
    n_changed = int(changed.sum())
    if n_changed:
        # Uniform over the other classes: draw in [0, C-1) and skip c1.
        draw = rng.integers(0, n_classes - 1, size=n_changed)
        c2[changed] = draw + (draw >= c1[changed])

    noise1 = noise_sigma * rng.normal(size=(n_pairs, d_in))
    noise2 = noise_sigma * rng.normal(size=(n_pairs, d_in))
    x1 = prototypes[c1] + noise1
    unchanged_x2 = prototypes[c1] + temporal_corr * noise1 + noise2
    changed_x2 = prototypes[c2] + noise2
    x2 = np.where(changed[:, np.newaxis], changed_x2, unchanged_x2)

    meta = {
        "n_classes": n_classes, "d_in": d_in, "n_pairs": n_pairs,
        "p_change": p_change, "noise_sigma": noise_sigma,
        "temporal_corr": temporal_corr, "imbalance": imbalance, "seed": seed,
    }
    return PairedDataset(x1, x2, c1.astype(np.int64), c2.astype(np.int64),
                         n_classes, meta)


def split_dataset(n: int, ratios: tuple[float, float, float] = SPLIT_RATIOS,
                  seed: int = 0) -> SplitIndices:
    """Deterministic shuffle-and-cut split.

    Sizes are floors of ``ratio * n``; any remainder goes to the training
    split.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    if n < 1:
        raise ValueError("cannot split an empty dataset")
    # The epsilon absorbs float error in ratio * n when the product is an
    # exact integer (e.g. 0.2 * 23555).
    sizes = [int(np.floor(r * n + 1e-9)) for r in ratios]
    n_train = sizes[0] + (n - sum(sizes))
    n_val = sizes[1]
    perm = np.random.default_rng(seed).permutation(n)
    return SplitIndices(
        train=perm[:n_train],
        val=perm[n_train:n_train + n_val],
        test=perm[n_train + n_val:],
    )


def save_dataset(ds: PairedDataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "n": ds.n,
        "d_in": ds.d_in,
        "n_classes": ds.n_classes,
        "generator": ds.meta,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="ascii")
    (out / "x1.f64").write_bytes(ds.x1.astype("<f8").tobytes(order="C"))
    (out / "x2.f64").write_bytes(ds.x2.astype("<f8").tobytes(order="C"))
    lines = ["l1,l2"]
    lines += [f"{a},{b}" for a, b in zip(ds.l1.tolist(), ds.l2.tolist())]
    (out / "labels.csv").write_text("\n".join(lines) + "\n", encoding="ascii")


def load_dataset(in_dir) -> PairedDataset:
    src = Path(in_dir)
    for name in ("meta.json", "x1.f64", "x2.f64", "labels.csv"):
        if not (src / name).is_file():
            raise FileNotFoundError(str(src / name))
    meta = json.loads((src / "meta.json").read_text(encoding="ascii"))
    try:
        n, d_in, n_classes = meta["n"], meta["d_in"], meta["n_classes"]
    except KeyError as missing:
        raise ManifestError(f"meta.json lacks required key {missing}") from None

    def read_features(name: str) -> Matrix:
        raw = (src / name).read_bytes()
        if len(raw) != n * d_in * 8:
            raise ManifestError(
                f"{name} holds {len(raw)} bytes, expected {n * d_in * 8} for {n}x{d_in}"
            )
        return np.frombuffer(raw, dtype="<f8").reshape(n, d_in).copy()

    x1 = read_features("x1.f64")
    x2 = read_features("x2.f64")

    lines = (src / "labels.csv").read_text(encoding="ascii").splitlines()
    if not lines or lines[0] != "l1,l2":
        raise ManifestError("labels.csv must start with header 'l1,l2'")
    if len(lines) - 1 != n:
        raise ManifestError(f"labels.csv holds {len(lines) - 1} rows, expected {n}")
    pairs = np.array([[int(v) for v in line.split(",")] for line in lines[1:]],
                     dtype=np.int64)
    l1, l2 = pairs[:, 0], pairs[:, 1]
    if l1.min() < 0 or max(l1.max(), l2.max()) >= n_classes:
        raise ManifestError(f"labels fall outside [0, {n_classes})")
    return PairedDataset(x1, x2, l1, l2, n_classes, meta.get("generator", {}))


def batch_iter(indices: np.ndarray, batch_size: int, seed: int, epoch: int = 0):
    """Yield index batches covering ``indices`` once, in an order fixed by
    ``(seed, epoch)``. A final fragment of fewer than 2 rows is dropped
    (batch statistics need at least 2 rows).
    """
    if batch_size < 2:
        raise ValueError(f"batch_size must be at least 2, got {batch_size}")
    rng = np.random.default_rng([seed, epoch])
    perm = rng.permutation(np.asarray(indices))
    for start in range(0, len(perm), batch_size):
        chunk = perm[start:start + batch_size]
        if len(chunk) < 2:
            break
        yield chunk
