"""Lower-level problem oracles: map a schedule to hourly prices and profit.

Both oracles stand in for a full market clearing.  They are deterministic and
immutable after construction, so concurrent evaluation is safe.

The profit of a response is the arbitrage identity  profit = -sum_t q_t * lambda_t
over cleared hours; hours that cannot be cleared contribute a configurable
penalty proportional to the violation instead.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from esbo.lp import LinearProgram, solve_lp
from esbo.storage import as_schedule

CLEAR_TOL = 1e-7


@dataclass
class OracleResponse:
    lam: np.ndarray            # hourly price at the storage bus
    profit: float
    per_hour_status: list[str]  # "cleared" | "infeasible"
    violation: np.ndarray | None = None  # p.u. imbalance for infeasible hours

    @property
    def all_cleared(self) -> bool:
        return all(s == "cleared" for s in self.per_hour_status)


def daily_load_profile(horizon: int = 24, base: float = 0.6, peak: float = 1.0) -> np.ndarray:
    """Synthetic double-peak weekday demand shape, scaled to [base, peak]."""
    t = np.arange(horizon) * 24.0 / horizon
    shape = (
        0.55
        + 0.30 * np.exp(-0.5 * ((t - 9.0) / 2.5) ** 2)
        + 0.45 * np.exp(-0.5 * ((t - 19.0) / 2.0) ** 2)
        - 0.15 * np.exp(-0.5 * ((t - 3.5) / 2.5) ** 2)
    )
    shape = (shape - shape.min()) / (shape.max() - shape.min())
    return base + (peak - base) * shape


@dataclass
class SyntheticPriceParams:
    """Price response lambda_t = a_t + b*(d_t + q_t) + c*(d_t + q_t)^3."""

    a: np.ndarray                      # base price curve
    b: float = 0.0                     # linear price impact
    c: float = 0.0                     # cubic price impact (nonconvex profit)
    d: np.ndarray | None = None        # residual load seen by the price response

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        if self.d is None:
            self.d = np.zeros_like(self.a)
        else:
            self.d = np.asarray(self.d, dtype=float)
        if self.a.shape != self.d.shape or self.a.ndim != 1:
            raise ValueError("a and d must be 1-D vectors of equal length")


class SyntheticPriceOracle:
    """Closed-form nonconvex price oracle; every hour always clears."""

    def __init__(self, params: SyntheticPriceParams):
        self.params = params

    @property
    def horizon(self) -> int:
        return self.params.a.shape[0]

    def evaluate(self, q) -> OracleResponse:
        q = as_schedule(q, self.horizon)
        p = self.params
        load = p.d + q
        lam = p.a + p.b * load + p.c * load**3
        profit = -float(np.dot(q, lam)) + 0.0  # normalize -0.0
        return OracleResponse(
            lam=lam, profit=profit, per_hour_status=["cleared"] * self.horizon,
            violation=np.zeros(self.horizon),
        )


@dataclass
class Bus:
    id: int
    demand: np.ndarray  # length = horizon

    def __post_init__(self):
        self.demand = np.atleast_1d(np.asarray(self.demand, dtype=float))
        if np.any(self.demand < 0):
            raise ValueError(f"bus {self.id}: demand must be >= 0")


@dataclass
class Generator:
    bus: int
    cost_linear: float
    cost_quadratic: float
    p_min: float
    p_max: float

    def __post_init__(self):
        if self.p_min > self.p_max:
            raise ValueError(f"generator at bus {self.bus}: p_min > p_max")
        if self.cost_quadratic < 0:
            raise ValueError(f"generator at bus {self.bus}: cost_quadratic must be >= 0")


@dataclass
class Line:
    from_bus: int
    to_bus: int
    susceptance: float
    flow_limit: float

    def __post_init__(self):
        if self.flow_limit <= 0:
            raise ValueError("line flow_limit must be > 0")
        if self.susceptance <= 0:
            raise ValueError("line susceptance must be > 0")


@dataclass
class NetworkCase:
    buses: list[Bus]
    generators: list[Generator]
    lines: list[Line]
    storage_bus: int
    reference_bus: int

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate bus ids")
        known = set(ids)
        if self.storage_bus not in known:
            raise ValueError(f"storage_bus {self.storage_bus} not among buses")
        if self.reference_bus not in known:
            raise ValueError(f"reference_bus {self.reference_bus} not among buses")
        for g in self.generators:
            if g.bus not in known:
                raise ValueError(f"generator references unknown bus {g.bus}")
        adj = {i: set() for i in known}
        for ln in self.lines:
            if ln.from_bus not in known or ln.to_bus not in known:
                raise ValueError("line references unknown bus")
            adj[ln.from_bus].add(ln.to_bus)
            adj[ln.to_bus].add(ln.from_bus)
        if len(known) > 1:
            seen = {self.reference_bus}
            stack = [self.reference_bus]
            while stack:
                for nb in adj[stack.pop()]:
                    if nb not in seen:
                        seen.add(nb)
                        stack.append(nb)
            if seen != known:
                raise ValueError("network graph is not connected")
        horizons = {b.demand.shape[0] for b in self.buses}
        if len(horizons) != 1:
            raise ValueError("all bus demand vectors must share one horizon")

    @property
    def horizon(self) -> int:
        return self.buses[0].demand.shape[0]

    @classmethod
    def from_json(cls, path) -> "NetworkCase":
        with open(path) as fh:
            raw = json.load(fh)
        try:
            buses = [Bus(id=b["id"], demand=b["demand"]) for b in raw["buses"]]
            gens = [
                Generator(
                    bus=g["bus"], cost_linear=g["cost_linear"],
                    cost_quadratic=g.get("cost_quadratic", 0.0),
                    p_min=g.get("p_min", 0.0), p_max=g["p_max"],
                )
                for g in raw["generators"]
            ]
            lines = [
                Line(
                    from_bus=ln["from"], to_bus=ln["to"],
                    susceptance=ln["susceptance"], flow_limit=ln["flow_limit"],
                )
                for ln in raw["lines"]
            ]
            return cls(
                buses=buses, generators=gens, lines=lines,
                storage_bus=raw["storage_bus"], reference_bus=raw["reference_bus"],
            )
        except KeyError as exc:
            raise ValueError(f"case file {path}: missing field {exc}") from exc

    def to_json(self, path):
        raw = {
            "buses": [{"id": b.id, "demand": list(b.demand)} for b in self.buses],
            "generators": [
                {
                    "bus": g.bus, "cost_linear": g.cost_linear,
                    "cost_quadratic": g.cost_quadratic,
                    "p_min": g.p_min, "p_max": g.p_max,
                }
                for g in self.generators
            ],
            "lines": [
                {
                    "from": ln.from_bus, "to": ln.to_bus,
                    "susceptance": ln.susceptance, "flow_limit": ln.flow_limit,
                }
                for ln in self.lines
            ],
            "storage_bus": self.storage_bus,
            "reference_bus": self.reference_bus,
        }
        with open(path, "w") as fh:
            json.dump(raw, fh, indent=2)


class DcMarketOracle:
    """Hourly DC-OPF market clearing; the price is the storage-bus balance dual.

    Quadratic generation costs are piecewise-linearized with ``segments``
    equal-width pieces so each hour clears as an LP with well-defined duals.
    Hours decouple: all intertemporal coupling lives in the storage model.
    Elastic shedding/surplus variables keep every hour solvable; an hour whose
    elastic usage exceeds a tolerance is reported infeasible and enters the
    profit with ``-penalty * violation`` instead of the arbitrage identity.
    """

    def __init__(self, case: NetworkCase, segments: int = 8, penalty: float = 1e4):
        if segments < 1:
            raise ValueError("segments must be >= 1")
        self.case = case
        self.segments = segments
        self.penalty = penalty
        self._build_static()

    @property
    def horizon(self) -> int:
        return self.case.horizon

    def _build_static(self):
        case, K = self.case, self.segments
        bus_index = {b.id: i for i, b in enumerate(case.buses)}
        n_bus = len(case.buses)
        n_gen = len(case.generators)
        n_line = len(case.lines)
        # columns: [gen segments (n_gen*K) | angles (n_bus) | shed (n_bus) | surplus (n_bus)]
        n_seg = n_gen * K
        n_cols = n_seg + 3 * n_bus
        a_eq = np.zeros((n_bus, n_cols))
        lo = np.zeros(n_cols)
        hi = np.full(n_cols, np.inf)
        cost = np.zeros(n_cols)

        base_cost = 0.0
        for gi, g in enumerate(case.generators):
            width = (g.p_max - g.p_min) / K
            base_cost += g.cost_linear * g.p_min + g.cost_quadratic * g.p_min**2
            for k in range(K):
                col = gi * K + k
                a0 = g.p_min + k * width
                a1 = a0 + width
                # chord slope of the quadratic cost over the segment
                cost[col] = g.cost_linear + g.cost_quadratic * (a0 + a1)
                hi[col] = width
                a_eq[bus_index[g.bus], col] = 1.0

        ang0 = n_seg
        for li, ln in enumerate(case.lines):
            i, j = bus_index[ln.from_bus], bus_index[ln.to_bus]
            # flow i->j = B * (theta_i - theta_j) counts as outflow at i, inflow at j
            a_eq[i, ang0 + i] -= ln.susceptance
            a_eq[i, ang0 + j] += ln.susceptance
            a_eq[j, ang0 + i] += ln.susceptance
            a_eq[j, ang0 + j] -= ln.susceptance
        lo[ang0:ang0 + n_bus] = -np.inf
        ref = bus_index[case.reference_bus]
        lo[ang0 + ref] = 0.0
        hi[ang0 + ref] = 0.0

        shed0 = ang0 + n_bus
        surp0 = shed0 + n_bus
        for b in range(n_bus):
            a_eq[b, shed0 + b] = 1.0
            a_eq[b, surp0 + b] = -1.0
        cost[shed0:surp0 + n_bus] = self.penalty

        a_ub = np.zeros((2 * n_line, n_cols))
        b_ub = np.empty(2 * n_line)
        for li, ln in enumerate(case.lines):
            i, j = bus_index[ln.from_bus], bus_index[ln.to_bus]
            a_ub[2 * li, ang0 + i] = ln.susceptance
            a_ub[2 * li, ang0 + j] = -ln.susceptance
            b_ub[2 * li] = ln.flow_limit
            a_ub[2 * li + 1, ang0 + i] = -ln.susceptance
            a_ub[2 * li + 1, ang0 + j] = ln.susceptance
            b_ub[2 * li + 1] = ln.flow_limit

        p_min_at_bus = np.zeros(n_bus)
        for g in case.generators:
            p_min_at_bus[bus_index[g.bus]] += g.p_min

        self._bus_index = bus_index
        self._cost = cost
        self._a_eq = a_eq
        self._a_ub = a_ub
        self._b_ub = b_ub
        self._lo = lo
        self._hi = hi
        self._p_min_at_bus = p_min_at_bus
        self._base_cost = base_cost
        self._n_bus = n_bus
        self._shed0 = shed0

    def clear_hour(self, t: int, q_t: float) -> tuple[float, str, float]:
        """Clear one hour; returns (price at storage bus, status, violation)."""
        case = self.case
        b_eq = np.array([b.demand[t] for b in case.buses]) - self._p_min_at_bus
        b_eq[self._bus_index[case.storage_bus]] += q_t
        lp = LinearProgram(
            c=self._cost, a_eq=self._a_eq, b_eq=b_eq,
            a_ub=self._a_ub, b_ub=self._b_ub, lo=self._lo, hi=self._hi,
        )
        sol = solve_lp(lp)
        if sol.status != "optimal":
            # elastic variables keep the LP feasible; anything else is a bug
            raise RuntimeError(f"hour {t}: unexpected LP status {sol.status}")
        elastic = float(np.sum(sol.x[self._shed0:]))
        lam = float(sol.duals_eq[self._bus_index[case.storage_bus]])
        status = "cleared" if elastic <= CLEAR_TOL else "infeasible"
        return lam, status, elastic

    def evaluate(self, q) -> OracleResponse:
        q = as_schedule(q, self.horizon)
        lam = np.empty(self.horizon)
        status: list[str] = []
        viol = np.zeros(self.horizon)
        profit = 0.0
        for t in range(self.horizon):
            lam[t], st, v = self.clear_hour(t, float(q[t]))
            status.append(st)
            viol[t] = v
            if st == "cleared":
                profit += -q[t] * lam[t]
            else:
                profit += -self.penalty * v
        return OracleResponse(lam=lam, profit=float(profit), per_hour_status=status, violation=viol)


def _eval_one(args):
    oracle, q = args
    return oracle.evaluate(q)


def batch_evaluate(oracle, schedules, workers: int = 1) -> list[OracleResponse]:
    """Evaluate many schedules; result order matches input order exactly."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    schedules = list(schedules)
    if not schedules:
        return []
    if workers == 1 or len(schedules) < 4:
        return [oracle.evaluate(q) for q in schedules]
    chunk = max(1, len(schedules) // (workers * 8))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_eval_one, ((oracle, q) for q in schedules), chunksize=chunk))


def two_bus_case(horizon: int = 24, demand: float | np.ndarray = 1.0) -> NetworkCase:
    """Uncongested two-bus market: one generator, load and storage at bus 2."""
    d = np.broadcast_to(np.asarray(demand, dtype=float), (horizon,)).copy()
    return NetworkCase(
        buses=[Bus(1, np.zeros(horizon)), Bus(2, d)],
        generators=[Generator(bus=1, cost_linear=10.0, cost_quadratic=0.0, p_min=0.0, p_max=2.0)],
        lines=[Line(1, 2, susceptance=10.0, flow_limit=10.0)],
        storage_bus=2,
        reference_bus=1,
    )


def three_bus_congestion_case(horizon: int = 24, demand: float | np.ndarray = 1.2) -> NetworkCase:
    """Radial case where the cheap unit is bottlenecked by the 1-3 line."""
    d = np.broadcast_to(np.asarray(demand, dtype=float), (horizon,)).copy()
    return NetworkCase(
        buses=[Bus(1, np.zeros(horizon)), Bus(2, np.zeros(horizon)), Bus(3, d)],
        generators=[
            Generator(bus=1, cost_linear=10.0, cost_quadratic=0.0, p_min=0.0, p_max=1.0),
            Generator(bus=2, cost_linear=50.0, cost_quadratic=0.0, p_min=0.0, p_max=5.0),
        ],
        lines=[
            Line(1, 3, susceptance=10.0, flow_limit=0.5),
            Line(2, 3, susceptance=10.0, flow_limit=10.0),
        ],
        storage_bus=3,
        reference_bus=1,
    )
