"""Energy storage asset model: parameters, state-of-energy dynamics, feasibility.

A schedule is a plain float64 vector ``q`` of length ``horizon`` holding the
net energy exchange per hour in p.u. (positive = charging, negative =
discharging).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class InfeasibleBoxError(ValueError):
    """The sampling box and the power bounds have an empty intersection."""


@dataclass(frozen=True)
class StorageParams:
    """Physical parameters of the storage asset.

    Energies are in p.u.*h, powers in p.u. against the system base.
    """

    soe_max: float = 1.0
    q_ch_max: float = 0.6
    q_dis_max: float = 0.6
    eta_ch: float = 0.9
    eta_dis: float = 0.9
    soe_init: float = 0.0
    horizon: int = 24

    def __post_init__(self):
        if not self.soe_max > 0:
            raise ValueError(f"soe_max must be > 0, got {self.soe_max}")
        if not (0 < self.eta_ch <= 1):
            raise ValueError(f"eta_ch must be in (0, 1], got {self.eta_ch}")
        if not (0 < self.eta_dis <= 1):
            raise ValueError(f"eta_dis must be in (0, 1], got {self.eta_dis}")
        if not (0 <= self.soe_init <= self.soe_max):
            raise ValueError(f"soe_init must be in [0, soe_max], got {self.soe_init}")
        if not self.q_ch_max > 0:
            raise ValueError(f"q_ch_max must be > 0, got {self.q_ch_max}")
        if not self.q_dis_max > 0:
            raise ValueError(f"q_dis_max must be > 0, got {self.q_dis_max}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")


def as_schedule(q, horizon: int | None = None) -> np.ndarray:
    """Validate and return ``q`` as a float64 schedule vector."""
    arr = np.asarray(q, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"schedule must be 1-D, got shape {arr.shape}")
    if horizon is not None and arr.shape[0] != horizon:
        raise ValueError(f"schedule length {arr.shape[0]} != horizon {horizon}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("schedule entries must be finite")
    return arr


def split_schedule(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a net schedule into nonnegative (charge, discharge) parts.

    At most one of the two is nonzero at each hour, and ``charge - discharge``
    reconstructs ``q`` exactly.
    """
    q = np.asarray(q, dtype=float)
    charge = np.maximum(q, 0.0)
    discharge = np.maximum(-q, 0.0)
    return charge, discharge


def simulate_soe(p: StorageParams, q: np.ndarray) -> np.ndarray:
    """State of energy after each hour; no clamping is applied.

    soe_t = soe_{t-1} + charge_t * eta_ch - discharge_t / eta_dis,
    starting from soe_init.  Infeasible trajectories are representable;
    use :func:`check_feasible` to detect them.
    """
    q = as_schedule(q, p.horizon)
    charge, discharge = split_schedule(q)
    delta = charge * p.eta_ch - discharge / p.eta_dis
    return p.soe_init + np.cumsum(delta)


@dataclass(frozen=True)
class Violation:
    kind: str  # "power_low" | "power_high" | "soe_low" | "soe_high" | "box_low" | "box_high"
    hour: int
    magnitude: float


@dataclass
class FeasibilityReport:
    ok: bool
    violations: list[Violation] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def check_feasible(p: StorageParams, q: np.ndarray, box=None, tol: float = 0.0) -> FeasibilityReport:
    """Check power bounds, SoE bounds, and optionally the sampling box.

    ``box`` is a ``dataset.SampleBox`` (or anything with ``cnt``/``rad``
    arrays); its bounds are applied without the epsilon inflation.
    """
    if tol < 0:
        raise ValueError("tol must be >= 0")
    q = as_schedule(q, p.horizon)
    violations: list[Violation] = []

    for t in range(p.horizon):
        if q[t] < -p.q_dis_max - tol:
            violations.append(Violation("power_low", t, -p.q_dis_max - q[t]))
        if q[t] > p.q_ch_max + tol:
            violations.append(Violation("power_high", t, q[t] - p.q_ch_max))

    soe = simulate_soe(p, q)
    for t in range(p.horizon):
        if soe[t] < -tol:
            violations.append(Violation("soe_low", t, -soe[t]))
        if soe[t] > p.soe_max + tol:
            violations.append(Violation("soe_high", t, soe[t] - p.soe_max))

    if box is not None:
        cnt = np.asarray(box.cnt, dtype=float)
        rad = np.asarray(box.rad, dtype=float)
        for t in range(p.horizon):
            if q[t] < cnt[t] - rad[t] - tol:
                violations.append(Violation("box_low", t, cnt[t] - rad[t] - q[t]))
            if q[t] > cnt[t] + rad[t] + tol:
                violations.append(Violation("box_high", t, q[t] - cnt[t] - rad[t]))

    return FeasibilityReport(ok=not violations, violations=violations)


def repair_schedule(p: StorageParams, q: np.ndarray, box=None) -> np.ndarray:
    """Project a schedule onto the feasible set (approximate, feasible by construction).

    First clips each entry into the intersection of the power box and the
    sampling box, then runs a forward sweep that shrinks the magnitude of the
    first SoE-violating exchange exactly onto the violated bound.  Repairing
    an already feasible schedule returns it unchanged.

    Raises :class:`InfeasibleBoxError` when the power box and the sampling box
    have an empty intersection at some hour, or when the box is incompatible
    with the SoE dynamics so that no sweep can restore feasibility.
    """
    q = as_schedule(q, p.horizon).copy()
    lo = np.full(p.horizon, -p.q_dis_max)
    hi = np.full(p.horizon, p.q_ch_max)
    if box is not None:
        cnt = np.asarray(box.cnt, dtype=float)
        rad = np.asarray(box.rad, dtype=float)
        lo = np.maximum(lo, cnt - rad)
        hi = np.minimum(hi, cnt + rad)
    if np.any(lo > hi + 1e-12):
        t = int(np.argmax(lo - hi))
        raise InfeasibleBoxError(
            f"power box and sample box do not intersect at hour {t}: "
            f"[{lo[t]}, {hi[t]}]"
        )
    q = np.clip(q, lo, hi)

    soe = p.soe_init
    for t in range(p.horizon):
        if q[t] >= 0.0:
            nxt = soe + q[t] * p.eta_ch
            if nxt > p.soe_max:
                # shrink the charge exactly onto the upper SoE bound, box permitting
                cand = max((p.soe_max - soe) / p.eta_ch, 0.0)  # reduce magnitude only
                while cand > 0.0 and soe + cand * p.eta_ch > p.soe_max:
                    cand = np.nextafter(cand, -np.inf)  # undo 1-ulp rounding overshoot
                q[t] = max(cand, lo[t])
                nxt = soe + q[t] * p.eta_ch if q[t] >= 0 else soe + q[t] / p.eta_dis
        else:
            nxt = soe + q[t] / p.eta_dis
            if nxt < 0.0:
                cand = min(-soe * p.eta_dis, 0.0)
                while cand < 0.0 and soe + cand / p.eta_dis < 0.0:
                    cand = np.nextafter(cand, np.inf)
                q[t] = min(cand, hi[t])
                nxt = soe + q[t] / p.eta_dis if q[t] <= 0 else soe + q[t] * p.eta_ch
        soe = nxt

    report = check_feasible(p, q, box=box, tol=0.0)
    if not report.ok:
        raise InfeasibleBoxError(
            f"sampling box incompatible with SoE dynamics: {report.violations[:3]}"
        )
    return q


def repair_batch(p: StorageParams, q: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Vectorized repair sweep over rows of ``q`` against precomputed bounds.

    Same forward sweep as :func:`repair_schedule` but applied to many
    schedules at once and without the feasibility post-check: rows whose box
    conflicts with the SoE dynamics come back best-effort infeasible and must
    be filtered by the caller (see meta.maximize_surrogate).
    """
    q = np.clip(np.asarray(q, dtype=float), lo, hi)
    n = q.shape[0]
    soe = np.full(n, float(p.soe_init))
    for t in range(p.horizon):
        qt = q[:, t]
        charging = qt >= 0.0
        nxt = np.where(charging, soe + qt * p.eta_ch, soe + qt / p.eta_dis)
        over = charging & (nxt > p.soe_max)
        if np.any(over):
            cand = np.maximum((p.soe_max - soe[over]) / p.eta_ch, 0.0)
            cand = np.where(soe[over] + cand * p.eta_ch > p.soe_max,
                            np.nextafter(cand, -np.inf), cand)
            qt[over] = np.maximum(cand, lo[t])
            nxt[over] = soe[over] + qt[over] * p.eta_ch
        under = ~charging & (nxt < 0.0)
        if np.any(under):
            cand = np.minimum(-soe[under] * p.eta_dis, 0.0)
            cand = np.where(soe[under] + cand / p.eta_dis < 0.0,
                            np.nextafter(cand, np.inf), cand)
            qt[under] = np.minimum(cand, hi[t])
            nxt[under] = soe[under] + qt[under] / p.eta_dis
        soe = nxt
    return q
