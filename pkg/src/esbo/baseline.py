"""Linearized-oracle baseline: optimize under fixed prices, evaluate on the truth.

The comparator mirrors a simpler market representation: the schedule is the
exact LP optimum of the storage arbitrage problem under the linearized
oracle's fixed prices (its prices at a zero schedule), and that schedule is
then verified on the true oracle.  The gap between the main scheme's verified
profit and ``profit_on_true`` measures what the richer market model buys.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from esbo.lp import LinearProgram, solve_lp
from esbo.meta import verify_schedule
from esbo.storage import StorageParams, split_schedule

SIMULTANEOUS_TOL = 1e-9


@dataclass
class BaselineResult:
    schedule_linear: np.ndarray
    profit_on_linear: float
    profit_on_true: float
    degenerate_simultaneous_flow: bool = False


def price_taker_lp(prices: np.ndarray, p: StorageParams) -> tuple[np.ndarray, float]:
    """Exact LP optimum of the storage arbitrage under fixed hourly prices.

    Variables are the split (charge, discharge) pair per hour; with lossy
    efficiencies and nonzero prices the optimum never charges and discharges
    simultaneously, so no binary exclusion is needed.
    """
    prices = np.asarray(prices, dtype=float)
    h = p.horizon
    if prices.shape != (h,):
        raise ValueError(f"prices must have length {h}")
    # columns: [charge_0..charge_{h-1}, discharge_0..discharge_{h-1}]
    c = np.concatenate([prices, -prices])  # minimize sum q_t * price_t
    lo = np.zeros(2 * h)
    hi = np.concatenate([np.full(h, p.q_ch_max), np.full(h, p.q_dis_max)])
    # SoE window: 0 <= soe_init + sum_{s<=t} (eta_ch ch_s - dis_s/eta_dis) <= soe_max
    a_ub = np.zeros((2 * h, 2 * h))
    b_ub = np.empty(2 * h)
    for t in range(h):
        a_ub[t, :t + 1] = p.eta_ch
        a_ub[t, h:h + t + 1] = -1.0 / p.eta_dis
        b_ub[t] = p.soe_max - p.soe_init
        a_ub[h + t] = -a_ub[t]
        b_ub[h + t] = p.soe_init
    sol = solve_lp(LinearProgram(c=c, a_ub=a_ub, b_ub=b_ub, lo=lo, hi=hi))
    if sol.status != "optimal":
        raise RuntimeError(f"price-taker LP ended {sol.status}")
    schedule = sol.x[:h] - sol.x[h:]
    return schedule, -sol.objective


def run_baseline(true_oracle, linear_oracle, p: StorageParams) -> BaselineResult:
    """Solve the linearized problem exactly, then price its schedule truthfully.

    ``linear_oracle`` should be the fixed-price linearization of
    ``true_oracle`` (its prices at a zero schedule are used as the LP prices).
    """
    zero = np.zeros(p.horizon)
    prices = linear_oracle.evaluate(zero).lam
    schedule, _ = price_taker_lp(prices, p)

    charge, discharge = split_schedule(schedule)
    degenerate = bool(np.any(charge * discharge > SIMULTANEOUS_TOL))

    return BaselineResult(
        schedule_linear=schedule,
        profit_on_linear=verify_schedule(linear_oracle, schedule),
        profit_on_true=verify_schedule(true_oracle, schedule),
        degenerate_simultaneous_flow=degenerate,
    )
