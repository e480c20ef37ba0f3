"""Surrogate training: rectified Adam with lookahead under a flat-cosine schedule.

One optimizer step per mini batch; the learning rate stays at ``max_lr`` for
``flat_fraction`` of all steps and is then cosine-annealed to zero.  Weight
decay is decoupled (applied directly to the weights, scaled by the scheduled
learning rate).  Validation loss is evaluated once per epoch and never touches
gradients; the best-validation parameter snapshot is returned.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from esbo.cnn import ConvSurrogate, build_default_architecture, init_params
from esbo.dataset import LabeledDataset, split_dataset


class TrainingDivergedError(RuntimeError):
    """Training loss became non-finite."""


@dataclass
class TrainConfig:
    epochs: int = 500
    max_lr: float = 0.003
    batch_size: int = 128
    weight_decay: float = 0.01
    moment_decay_1: float = 0.95
    moment_decay_2: float = 0.85
    lookahead_sync_period: int = 6   # 0 disables lookahead
    lookahead_blend: float = 0.5
    flat_fraction: float = 0.72
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.max_lr <= 0:
            raise ValueError("max_lr must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0 < self.moment_decay_1 < 1 and 0 < self.moment_decay_2 < 1):
            raise ValueError("moment decays must lie in (0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not (0 <= self.flat_fraction <= 1):
            raise ValueError("flat_fraction must lie in [0, 1]")
        if self.lookahead_sync_period < 0:
            raise ValueError("lookahead_sync_period must be >= 0")
        if not (0 <= self.lookahead_blend <= 1):
            raise ValueError("lookahead_blend must lie in [0, 1]")


@dataclass
class TrainReport:
    train_mse: list[float]
    valid_mse: list[float]
    best_epoch: int          # 1-based
    best_valid_mse: float
    checkpoint_path: str | None = None


def flat_cosine_lr(step: int, total_steps: int, flat_fraction: float, max_lr: float) -> float:
    """Learning rate for 0-based ``step``; flat, then cosine-annealed to zero."""
    flat_steps = int(math.floor(flat_fraction * total_steps))
    if step < flat_steps or total_steps <= flat_steps:
        return max_lr
    progress = (step - flat_steps + 1) / (total_steps - flat_steps)
    return max_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class RectifiedAdamLookahead:
    """Rectified-Adam update with decoupled weight decay and slow-weight lookahead.

    While the variance estimate is unreliable (rectification term rho_t <= 4)
    the update degrades to bias-corrected momentum; afterwards the variance-
    rectified adaptive step applies.  Every ``sync_period`` steps the fast
    weights are blended into slow weights and reset onto them.
    """

    def __init__(self, shapes, cfg: TrainConfig, total_steps: int, eps: float = 1e-8):
        self.cfg = cfg
        self.total_steps = total_steps
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.slow = None
        self.rho_inf = 2.0 / (1.0 - cfg.moment_decay_2) - 1.0

    def lr_at(self, step: int) -> float:
        return flat_cosine_lr(step, self.total_steps, self.cfg.flat_fraction,
                              self.cfg.max_lr)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        cfg = self.cfg
        if self.slow is None and cfg.lookahead_sync_period:
            self.slow = [p.copy() for p in params]
        lr = self.lr_at(self.t)
        self.t += 1
        t = self.t
        b1, b2 = cfg.moment_decay_1, cfg.moment_decay_2
        b2t = b2**t
        rho = self.rho_inf - 2.0 * t * b2t / (1.0 - b2t)
        bias1 = 1.0 - b1**t
        rect = None
        if rho > 4.0:
            rect = math.sqrt(
                (rho - 4.0) * (rho - 2.0) * self.rho_inf
                / ((self.rho_inf - 4.0) * (self.rho_inf - 2.0) * rho)
            )
            bias2 = 1.0 - b2t
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] *= b1
            self.m[i] += (1.0 - b1) * g
            self.v[i] *= b2
            self.v[i] += (1.0 - b2) * g * g
            m_hat = self.m[i] / bias1
            if rect is None:
                update = m_hat
            else:
                denom = np.sqrt(self.v[i] / bias2) + self.eps
                update = rect * m_hat / denom
            if cfg.weight_decay:
                p *= 1.0 - lr * cfg.weight_decay
            p -= lr * update
        if cfg.lookahead_sync_period and self.t % cfg.lookahead_sync_period == 0:
            for i, p in enumerate(params):
                self.slow[i] += cfg.lookahead_blend * (p - self.slow[i])
                p[...] = self.slow[i]


def train(net: ConvSurrogate, train_set: LabeledDataset, valid_set: LabeledDataset,
          cfg: TrainConfig, save_path=None) -> tuple[ConvSurrogate, TrainReport]:
    """Train one surrogate; returns the net restored to its best-validation state.

    Losses are reported on standardized targets, so sqrt(valid_mse) reads as
    RMSE relative to the target standard deviation.
    """
    if train_set.n == 0 or valid_set.n == 0:
        raise ValueError("train and validation splits must be nonempty")
    norm = net.normalization
    x_train = train_set.inputs / norm.input_scale
    t_train = (train_set.targets - norm.target_mean) / norm.target_std
    x_valid = valid_set.inputs / norm.input_scale
    t_valid = (valid_set.targets - norm.target_mean) / norm.target_std

    n = x_train.shape[0]
    batches_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    total_steps = cfg.epochs * batches_per_epoch
    flat = _flatten_parameters(net)  # layer arrays become views into one buffer
    opt = RectifiedAdamLookahead([flat.shape], cfg, total_steps)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])  # independent of init stream

    train_hist: list[float] = []
    valid_hist: list[float] = []
    best_valid = np.inf
    best_epoch = 0
    best_params = net.copy_parameters()

    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for b in range(batches_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            loss, grads = net.loss_and_param_grads(x_train[idx], t_train[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}, step {opt.t}"
                )
            flat_grad = np.concatenate([arr.ravel() for g in grads for arr in g])
            opt.step([flat], [flat_grad])
            epoch_loss += loss * idx.shape[0]
        train_hist.append(epoch_loss / n)

        resid = net.predict_normalized(x_valid) - t_valid
        valid_mse = float(np.mean(resid**2))
        if not math.isfinite(valid_mse):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        valid_hist.append(valid_mse)
        if valid_mse < best_valid:
            best_valid = valid_mse
            best_epoch = epoch
            best_params = net.copy_parameters()

    net.set_parameters(best_params)
    report = TrainReport(train_mse=train_hist, valid_mse=valid_hist,
                         best_epoch=best_epoch, best_valid_mse=best_valid)
    if save_path is not None:
        from esbo.cnn import save_model

        save_model(net, save_path)
        report.checkpoint_path = str(save_path)
    return net, report


def _flatten_parameters(net: ConvSurrogate) -> np.ndarray:
    """Pack all weights/biases into one buffer; layer arrays become views."""
    total = sum(layer.weight.size + layer.bias.size for layer in net.layers)
    flat = np.empty(total)
    offset = 0
    for layer in net.layers:
        for name in ("weight", "bias"):
            arr = getattr(layer, name)
            view = flat[offset:offset + arr.size].reshape(arr.shape)
            view[...] = arr
            setattr(layer, name, view)
            offset += arr.size
    return flat


def _train_member(payload):
    (dataset, cfg, member_seed, beta, hidden_channels) = payload
    train_set, valid_set = split_dataset(dataset, seed=dataset.seed)
    net = build_default_architecture(
        horizon=dataset.horizon, hidden_channels=hidden_channels, beta=beta,
        normalization=dataset.normalization,
    )
    init_params(net, member_seed)
    member_cfg = replace(cfg, seed=member_seed)
    return train(net, train_set, valid_set, member_cfg)


def train_ensemble(dataset: LabeledDataset, cfg: TrainConfig, ensemble_size: int,
                   workers: int = 1, beta: float = 50.0,
                   hidden_channels=None) -> list[tuple[ConvSurrogate, TrainReport]]:
    """Train ``ensemble_size`` surrogates with seeds cfg.seed + 0 .. + M-1.

    Every member sees the identical 80:20 split (split seed = dataset seed);
    members differ only through initialization and mini-batch order.
    """
    if ensemble_size < 1:
        raise ValueError("ensemble_size must be >= 1")
    from esbo.cnn import DEFAULT_HIDDEN_CHANNELS

    if hidden_channels is None:
        hidden_channels = DEFAULT_HIDDEN_CHANNELS
    payloads = [
        (dataset, cfg, cfg.seed + n, beta, tuple(hidden_channels))
        for n in range(ensemble_size)
    ]
    if workers == 1 or ensemble_size == 1:
        return [_train_member(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=min(workers, ensemble_size)) as pool:
        return list(pool.map(_train_member, payloads))


def report_to_csv(report: TrainReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_mse", "valid_mse"])
        for i, (tr, va) in enumerate(zip(report.train_mse, report.valid_mse), start=1):
            writer.writerow([i, repr(tr), repr(va)])
