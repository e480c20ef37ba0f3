"""Training data generation: box sampling, oracle labeling, splitting, persistence.

Datasets are stored as CSV (header ``q_1,...,q_H,profit``, full round-trip
float precision) with a JSON sidecar (same stem, ``.meta.json``) holding the
sampling box, seed, and normalization statistics.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from esbo.oracles import batch_evaluate
from esbo.storage import StorageParams

TRAIN_FRACTION = 0.8


class DatasetFormatError(ValueError):
    """Raised when a dataset file cannot be parsed; carries line/field info."""


@dataclass
class SampleBox:
    """Per-hour sampling region: center, radius, and relative tolerance.

    The effective sampling interval at hour t is
    ``[cnt_t - rad_t*(1+eps), cnt_t + rad_t*(1+eps)]`` intersected with the
    epsilon-inflated power bounds.  The meta-model constraint uses the raw
    ``cnt +- rad`` interval (no inflation).
    """

    cnt: np.ndarray
    rad: np.ndarray
    epsilon: float = 0.0

    def __post_init__(self):
        self.cnt = np.atleast_1d(np.asarray(self.cnt, dtype=float))
        self.rad = np.atleast_1d(np.asarray(self.rad, dtype=float))
        if self.cnt.shape != self.rad.shape:
            raise ValueError("cnt and rad must have equal length")
        if np.any(self.rad < 0):
            raise ValueError("rad must be >= 0")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")

    @property
    def horizon(self) -> int:
        return self.cnt.shape[0]

    def sampling_bounds(self, p: StorageParams) -> tuple[np.ndarray, np.ndarray]:
        """Epsilon-inflated interval intersected with inflated power bounds."""
        infl = 1.0 + self.epsilon
        lo = np.maximum(self.cnt - self.rad * infl, -p.q_dis_max * infl)
        hi = np.minimum(self.cnt + self.rad * infl, p.q_ch_max * infl)
        if np.any(lo > hi):
            t = int(np.argmax(lo - hi))
            raise ValueError(f"empty sampling interval at hour {t}: [{lo[t]}, {hi[t]}]")
        return lo, hi

    def constraint_bounds(self, p: StorageParams) -> tuple[np.ndarray, np.ndarray]:
        """Raw box intersected with power bounds, as used by the meta-model."""
        lo = np.maximum(self.cnt - self.rad, -p.q_dis_max)
        hi = np.minimum(self.cnt + self.rad, p.q_ch_max)
        return lo, hi


def full_range_box(p: StorageParams, epsilon: float = 0.0) -> SampleBox:
    """First-iteration box: centered at zero, radius spanning all permitted values."""
    rad = max(p.q_ch_max, p.q_dis_max)
    return SampleBox(
        cnt=np.zeros(p.horizon), rad=np.full(p.horizon, rad), epsilon=epsilon,
    )


@dataclass
class Normalization:
    input_scale: np.ndarray
    target_mean: float
    target_std: float

    def __post_init__(self):
        self.input_scale = np.atleast_1d(np.asarray(self.input_scale, dtype=float))


@dataclass
class LabeledDataset:
    inputs: np.ndarray    # (N, horizon)
    targets: np.ndarray   # (N,)
    box: SampleBox
    seed: int
    normalization: Normalization

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.inputs.ndim != 2 or self.targets.ndim != 1:
            raise ValueError("inputs must be (N, H), targets (N,)")
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError("inputs and targets disagree on N")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def horizon(self) -> int:
        return self.inputs.shape[1]


def sample_box(box: SampleBox, p: StorageParams, n: int, seed: int) -> np.ndarray:
    """Draw n schedules, each entry independent uniform in its effective interval."""
    if n < 1:
        raise ValueError("n must be >= 1")
    lo, hi = box.sampling_bounds(p)
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, size=(n, box.horizon))


def split_indices(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic shuffled 80:20 split; train gets ceil(0.8 n) rows."""
    if n < 5:
        raise ValueError("need at least 5 rows to split 80:20")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(np.ceil(TRAIN_FRACTION * n))
    return perm[:n_train], perm[n_train:]


def build_dataset(oracle, box: SampleBox, p: StorageParams, n: int, seed: int,
                  workers: int = 1) -> LabeledDataset:
    """Sample the box, label with the oracle, attach normalization statistics.

    Target statistics come from the 80:20 training split keyed by the same
    seed, so trainers that split with ``seed=dataset.seed`` see matching
    normalization.
    """
    inputs = sample_box(box, p, n, seed)
    responses = batch_evaluate(oracle, inputs, workers=workers)
    targets = np.array([r.profit for r in responses])
    train_idx, _ = split_indices(n, seed)
    mean = float(np.mean(targets[train_idx]))
    std = float(np.std(targets[train_idx]))
    if std < 1e-12:
        std = 1.0  # constant targets: leave them centered only
    scale = max(p.q_ch_max, p.q_dis_max)
    norm = Normalization(
        input_scale=np.full(box.horizon, scale), target_mean=mean, target_std=std,
    )
    return LabeledDataset(inputs=inputs, targets=targets, box=box, seed=seed,
                          normalization=norm)


def split_dataset(d: LabeledDataset, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Disjoint, exhaustive 80:20 split, shuffled deterministically by seed."""
    train_idx, valid_idx = split_indices(d.n, seed)
    train = LabeledDataset(d.inputs[train_idx], d.targets[train_idx], d.box, d.seed,
                           d.normalization)
    valid = LabeledDataset(d.inputs[valid_idx], d.targets[valid_idx], d.box, d.seed,
                           d.normalization)
    return train, valid


def save_dataset(d: LabeledDataset, path) -> None:
    path = Path(path)
    header = [f"q_{t + 1}" for t in range(d.horizon)] + ["profit"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row, target in zip(d.inputs, d.targets):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(target))])
    meta = {
        "box": {"cnt": list(d.box.cnt), "rad": list(d.box.rad), "epsilon": d.box.epsilon},
        "seed": d.seed,
        "normalization": {
            "input_scale": list(d.normalization.input_scale),
            "target_mean": d.normalization.target_mean,
            "target_std": d.normalization.target_std,
        },
    }
    with open(path.with_suffix(".meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2)


def load_dataset(path) -> LabeledDataset:
    path = Path(path)
    meta_path = path.with_suffix(".meta.json")
    if not meta_path.exists():
        raise DatasetFormatError(f"missing sidecar metadata file {meta_path}")
    with open(meta_path) as fh:
        meta = json.load(fh)

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        horizon = len(header) - 1
        expected = [f"q_{t + 1}" for t in range(horizon)] + ["profit"]
        if header != expected:
            raise DatasetFormatError(f"{path}: bad header {header[:4]}..., expected q_1..q_H,profit")
        inputs, targets = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != horizon + 1:
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected {horizon + 1} columns, found {len(row)}"
                )
            try:
                values = [float(v) for v in row]
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
            inputs.append(values[:-1])
            targets.append(values[-1])

    box = SampleBox(cnt=meta["box"]["cnt"], rad=meta["box"]["rad"],
                    epsilon=meta["box"]["epsilon"])
    norm = Normalization(
        input_scale=meta["normalization"]["input_scale"],
        target_mean=meta["normalization"]["target_mean"],
        target_std=meta["normalization"]["target_std"],
    )
    return LabeledDataset(
        inputs=np.array(inputs, dtype=float).reshape(len(targets), horizon),
        targets=np.array(targets, dtype=float),
        box=box, seed=meta["seed"], normalization=norm,
    )
