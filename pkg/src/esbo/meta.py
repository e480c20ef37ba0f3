"""Iterative meta-optimization: sample, train an ensemble, maximize, verify, shrink.

Each iteration builds a labeled dataset inside the current sampling box,
trains an ensemble of surrogates on it, maximizes every surrogate under the
storage constraints plus the box constraint, verifies the maximizers (and
their mean) against the true oracle, then recenters the box on the best
verified schedule and shrinks its radius from the ensemble spread.  The loop
stops as soon as the best verified profit fails to improve; the reported
answer is the best schedule over all iterations.

Seed derivation from the root seed: iteration ``i`` uses
``root + 1000*i + 11`` for the dataset, ``root + 1000*i + 101`` for the
ensemble (members then add 0..M-1), and ``root + 1000*i + 211 + n`` for the
maximizer of member ``n``.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from esbo.cnn import ConvSurrogate
from esbo.dataset import SampleBox, build_dataset
from esbo.storage import (
    InfeasibleBoxError,
    StorageParams,
    repair_batch,
    repair_schedule,
)
from esbo.training import TrainConfig, train_ensemble


class AllStartsFailedError(RuntimeError):
    """No ascent start could be repaired into the feasible set."""


class MetaRunAborted(RuntimeError):
    """A mid-run failure; carries the records of the completed iterations."""

    def __init__(self, message: str, records):
        super().__init__(message)
        self.records = records


@dataclass
class SurrogateMaxConfig:
    starts: int = 20
    steps: int = 500
    step_size: float = 0.1      # relative to the box half-width
    penalty_weight: float = 1e3  # profit units per (p.u. h)^2 of SoE violation
    seed: int = 0

    def __post_init__(self):
        if self.starts < 1:
            raise ValueError("starts must be >= 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.penalty_weight <= 0:
            raise ValueError("penalty_weight must be > 0")


@dataclass
class IterationRecord:
    index: int
    box_cnt: np.ndarray
    box_rad: float
    computed_profits: np.ndarray   # C_n, surrogate value at its maximizer
    actual_profits: np.ndarray     # V_n, verified against the oracle
    schedules: np.ndarray          # (M, horizon) maximizers
    mean_schedule: np.ndarray
    mean_actual_profit: float
    sigma: float | None
    best_schedule: np.ndarray
    best_actual_profit: float
    best_label: str                # "net<n>" or "mean"
    next_cnt: np.ndarray
    next_rad: float
    timings: dict = field(default_factory=dict)


@dataclass
class MetaRunResult:
    records: list[IterationRecord]
    best_schedule: np.ndarray
    best_profit: float
    best_iteration: int
    stopped_reason: str  # "no_improvement" | "max_iterations"


@dataclass
class SchemeConfig:
    dataset_size: int = 2000
    ensemble_size: int = 4
    epsilon: float = 0.1
    gamma: float = 5.0
    iterations_max: int = 8
    workers: int = 1
    seed: int = 0
    beta: float = 50.0
    hidden_channels: tuple = None
    train: TrainConfig = field(default_factory=TrainConfig)
    surrogate_max: SurrogateMaxConfig = field(default_factory=SurrogateMaxConfig)

    def __post_init__(self):
        if self.dataset_size < 5:
            raise ValueError("dataset_size must be >= 5")
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.iterations_max < 1:
            raise ValueError("iterations_max must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


def iteration_seeds(root: int, iteration: int) -> tuple[int, int, int]:
    base = root + 1000 * iteration
    return base + 11, base + 101, base + 211


def _soe_penalty_and_grad(p: StorageParams, q: np.ndarray,
                          weight: float) -> tuple[np.ndarray, np.ndarray]:
    """Quadratic SoE-violation penalty and its (sub)gradient, batched over rows."""
    charge = np.maximum(q, 0.0)
    discharge = np.maximum(-q, 0.0)
    soe = np.cumsum(charge * p.eta_ch - discharge / p.eta_dis, axis=1) + p.soe_init
    over = np.maximum(soe - p.soe_max, 0.0)
    under = np.maximum(-soe, 0.0)
    penalty = weight * np.sum(over**2 + under**2, axis=1)
    dsoe = 2.0 * weight * (over - under)
    upstream = np.cumsum(dsoe[:, ::-1], axis=1)[:, ::-1]  # sum over s >= t
    slope = np.where(q > 0, p.eta_ch, 1.0 / p.eta_dis)
    return penalty, upstream * slope


def maximize_surrogate(net: ConvSurrogate, p: StorageParams, box: SampleBox,
                       cfg: SurrogateMaxConfig) -> tuple[np.ndarray, float]:
    """Maximize the surrogate under power, SoE, and box constraints.

    Multi-start projected gradient ascent with a quadratic SoE penalty,
    tracking the surrogate value of the repair-projected iterates as the
    selection criterion; the winning repaired point then gets a deterministic
    coordinate polish.  Steps follow the infinity-norm-normalized penalized
    gradient, geometrically decayed and scaled to the box half-width.
    """
    lo, hi = box.constraint_bounds(p)
    if np.any(lo > hi + 1e-12):
        t = int(np.argmax(lo - hi))
        raise AllStartsFailedError(f"empty box/power intersection at hour {t}")
    rng = np.random.default_rng(cfg.seed)
    q_cur = rng.uniform(lo, hi, size=(cfg.starts, box.horizon))

    width = max(float(np.max(hi - lo)) / 2.0, 1e-12)
    best_q = repair_batch(p, q_cur, lo, hi)
    best_val = net.forward(best_q)
    step = cfg.step_size * width
    for it in range(cfg.steps):
        _, grads = net.value_and_grad_input(q_cur)
        _, dpen = _soe_penalty_and_grad(p, q_cur, cfg.penalty_weight)
        direction = grads - dpen
        norms = np.max(np.abs(direction), axis=1, keepdims=True)
        np.divide(direction, norms, out=direction, where=norms > 0)
        q_cur = np.clip(q_cur + step * direction, lo, hi)
        step *= 0.995
        if it % 10 == 9 or it == cfg.steps - 1:
            repaired = repair_batch(p, q_cur, lo, hi)
            vals = net.forward(repaired)
            improved = vals > best_val
            best_val[improved] = vals[improved]
            best_q[improved] = repaired[improved]

    # polish every start independently: with a shared seed the first k starts
    # are a prefix of any larger run, so the best value is monotone in starts
    best_schedule = None
    best_value = -np.inf
    for s in range(cfg.starts):
        try:
            repaired = repair_schedule(p, best_q[s], box=box)
        except InfeasibleBoxError:
            continue
        polished, value = _coordinate_polish(net, p, lo, hi, repaired, width)
        if value > best_value:
            best_value = value
            best_schedule = polished
    if best_schedule is None:
        # every ascent endpoint conflicted with the box; the clipped center is
        # the canonical in-box candidate (feasible whenever the box is usable)
        try:
            fallback = repair_schedule(p, np.clip(box.cnt, lo, hi), box=box)
        except InfeasibleBoxError as exc:
            raise AllStartsFailedError(f"no feasible point found in the box: {exc}") from exc
        best_schedule, best_value = _coordinate_polish(net, p, lo, hi, fallback, width)
    return best_schedule, float(best_value)


def _coordinate_polish(net: ConvSurrogate, p: StorageParams, lo, hi,
                       q0: np.ndarray, width: float,
                       deltas=(0.2, 0.05, 0.01), max_passes=60):
    """Greedy single-coordinate refinement on the repaired manifold.

    Each pass perturbs every hour at several scales, selects the best
    improving move on the batch-repaired candidates, and re-applies it through
    the strict repair so the accepted point always satisfies the tol=0
    feasibility contract.  Deterministic; stops when no move helps.

    ``q0`` must already be strictly feasible.
    """
    h = q0.shape[0]
    box_view = _BoxView(lo, hi)
    q = q0.copy()
    value = float(net.forward(q))
    moves = [(t, s * d * width) for d in deltas for t in range(h) for s in (1.0, -1.0)]
    for _ in range(max_passes):
        cands = np.repeat(q[None, :], len(moves), axis=0)
        for k, (t, dq) in enumerate(moves):
            cands[k, t] += dq
        vals = net.forward(repair_batch(p, cands, lo, hi))
        k_best = int(np.argmax(vals))
        if vals[k_best] <= value + 1e-12:
            break
        t, dq = moves[k_best]
        trial = q.copy()
        trial[t] += dq
        try:
            trial = repair_schedule(p, trial, box=box_view)
        except InfeasibleBoxError:
            break
        trial_value = float(net.forward(trial))
        if trial_value <= value + 1e-12:
            break
        q, value = trial, trial_value
    return q, value


class _BoxView:
    """Adapter giving repair_schedule cnt/rad views of explicit lo/hi bounds."""

    def __init__(self, lo, hi):
        self.cnt = 0.5 * (lo + hi)
        self.rad = 0.5 * (hi - lo)


def verify_schedule(oracle, q: np.ndarray) -> float:
    """True profit of a fixed schedule, from the lower-level oracle."""
    return oracle.evaluate(q).profit


def radius_update(prev_rad: float, schedules: np.ndarray, gamma: float) -> float:
    """Next radius: min(prev, gamma * max-over-hours population std of maximizers)."""
    schedules = np.asarray(schedules, dtype=float)
    if schedules.ndim != 2 or schedules.shape[0] < 2:
        raise ValueError("need at least two schedules to measure spread")
    sigma = float(np.max(np.std(schedules, axis=0)))
    return min(prev_rad, gamma * sigma)


def choose_center(candidates: list[tuple[str, np.ndarray, float]]) -> tuple[str, np.ndarray, float]:
    """Highest verified profit wins; ties keep the earliest entry (mean listed last)."""
    if not candidates:
        raise ValueError("no candidates")
    best = candidates[0]
    for cand in candidates[1:]:
        if cand[2] > best[2]:
            best = cand
    return best


def run(oracle, p: StorageParams, cfg: SchemeConfig,
        artifacts_dir=None) -> MetaRunResult:
    """Full scheme; see module docstring.

    With ``artifacts_dir`` set, per-member checkpoints and training reports
    are written under ``models/`` and ``training/`` as the run progresses.
    On a mid-run failure the completed iterations are attached to the raised
    :class:`MetaRunAborted`.
    """
    if artifacts_dir is not None:
        from pathlib import Path

        artifacts_dir = Path(artifacts_dir)
        (artifacts_dir / "models").mkdir(parents=True, exist_ok=True)
        (artifacts_dir / "training").mkdir(parents=True, exist_ok=True)
    records: list[IterationRecord] = []
    rad = max(p.q_ch_max, p.q_dis_max)
    cnt = np.zeros(p.horizon)
    stopped = "max_iterations"
    try:
        for i in range(1, cfg.iterations_max + 1):
            data_seed, ens_seed, max_seed = iteration_seeds(cfg.seed, i)
            box = SampleBox(cnt=cnt.copy(), rad=np.full(p.horizon, rad),
                            epsilon=cfg.epsilon)

            t0 = time.perf_counter()
            dataset = build_dataset(oracle, box, p, cfg.dataset_size, data_seed,
                                    workers=cfg.workers)
            t_data = time.perf_counter() - t0

            t0 = time.perf_counter()
            members = train_ensemble(
                dataset, replace(cfg.train, seed=ens_seed), cfg.ensemble_size,
                workers=cfg.workers, beta=cfg.beta,
                hidden_channels=cfg.hidden_channels,
            )
            t_train = time.perf_counter() - t0

            if artifacts_dir is not None:
                from esbo.cnn import save_model
                from esbo.training import report_to_csv

                for n, (net, report) in enumerate(members):
                    save_model(net, artifacts_dir / "models" / f"iter{i:02d}_member{n:02d}.npz")
                    report_to_csv(report, artifacts_dir / "training" / f"iter{i:02d}_member{n:02d}.csv")

            t0 = time.perf_counter()
            m = cfg.ensemble_size
            schedules = np.empty((m, p.horizon))
            computed = np.empty(m)
            actual = np.empty(m)
            # common random starts across members: the maximizer spread then
            # reflects surrogate disagreement, not multi-start sampling noise
            for n, (net, _) in enumerate(members):
                q_n, c_n = maximize_surrogate(
                    net, p, box, replace(cfg.surrogate_max, seed=max_seed)
                )
                schedules[n] = q_n
                computed[n] = c_n
                actual[n] = verify_schedule(oracle, q_n)
            # the mean of feasible schedules can slightly breach the SoE bounds
            # (efficiency split is concave); repair keeps the verified center physical
            mean_schedule = repair_schedule(p, schedules.mean(axis=0))
            mean_profit = verify_schedule(oracle, mean_schedule)
            t_meta = time.perf_counter() - t0

            candidates = [(f"net{n}", schedules[n], float(actual[n])) for n in range(m)]
            candidates.append(("mean", mean_schedule, float(mean_profit)))
            label, best_q, best_v = choose_center(candidates)

            sigma = None
            next_rad = rad
            if m >= 2:
                sigma = float(np.max(np.std(schedules, axis=0)))
                next_rad = radius_update(rad, schedules, cfg.gamma)

            records.append(IterationRecord(
                index=i, box_cnt=box.cnt, box_rad=rad,
                computed_profits=computed, actual_profits=actual,
                schedules=schedules, mean_schedule=mean_schedule,
                mean_actual_profit=float(mean_profit), sigma=sigma,
                best_schedule=best_q.copy(), best_actual_profit=float(best_v),
                best_label=label, next_cnt=best_q.copy(), next_rad=next_rad,
                timings={"dataset_s": t_data, "training_s": t_train,
                         "metaopt_s": t_meta, "total_s": t_data + t_train + t_meta},
            ))

            if i >= 2 and best_v <= records[-2].best_actual_profit:
                stopped = "no_improvement"
                break
            cnt = best_q.copy()
            rad = next_rad
    except Exception as exc:
        if not records:
            raise
        raise MetaRunAborted(
            f"aborted after {len(records)} completed iterations: {exc}", records
        ) from exc

    best_rec = max(records, key=lambda r: r.best_actual_profit)
    return MetaRunResult(
        records=records,
        best_schedule=best_rec.best_schedule,
        best_profit=best_rec.best_actual_profit,
        best_iteration=best_rec.index,
        stopped_reason=stopped,
    )


def write_iterations_csv(records: list[IterationRecord], path) -> None:
    """Deterministic per-iteration report (profit columns and radius)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "iteration", "radius", "mean_q_actual_profit",
            "best_nn_actual_profit", "best_nn_computed_profit",
            "best_actual_profit", "best_label", "sigma",
        ])
        for r in records:
            best_n = int(np.argmax(r.actual_profits))
            writer.writerow([
                r.index, repr(float(r.box_rad)), repr(r.mean_actual_profit),
                repr(float(r.actual_profits[best_n])),
                repr(float(np.max(r.computed_profits))),
                repr(r.best_actual_profit), r.best_label,
                "" if r.sigma is None else repr(r.sigma),
            ])


def write_timings_csv(records: list[IterationRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "dataset_s", "training_s", "metaopt_s", "total_s"])
        for r in records:
            writer.writerow([
                r.index, f"{r.timings['dataset_s']:.3f}", f"{r.timings['training_s']:.3f}",
                f"{r.timings['metaopt_s']:.3f}", f"{r.timings['total_s']:.3f}",
            ])


def write_radius_trace(records: list[IterationRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "radius"])
        for r in records:
            writer.writerow([r.index, repr(float(r.box_rad))])
