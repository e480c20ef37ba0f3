"""Storage model: SoE dynamics, feasibility checks, schedule repair."""

import numpy as np
import pytest

from esbo.dataset import SampleBox
from esbo.storage import (
    InfeasibleBoxError,
    StorageParams,
    check_feasible,
    repair_schedule,
    simulate_soe,
    split_schedule,
)


class TestSplitSchedule:
    def test_sign_split(self):
        charge, discharge = split_schedule(np.array([0.5, -0.3]))
        assert np.array_equal(charge, [0.5, 0.0])
        assert np.array_equal(discharge, [0.0, 0.3])

    def test_zero_schedule(self):
        charge, discharge = split_schedule(np.zeros(3))
        assert np.array_equal(charge, np.zeros(3))
        assert np.array_equal(discharge, np.zeros(3))

    def test_full_discharge_at_power_limit(self):
        # 60 MW = 0.6 p.u. discharging limit
        charge, discharge = split_schedule(np.array([-0.6]))
        assert np.array_equal(charge, [0.0])
        assert np.array_equal(discharge, [0.6])

    def test_recombination_and_exclusivity(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            q = rng.uniform(-1, 1, 24)
            charge, discharge = split_schedule(q)
            assert np.array_equal(charge - discharge, q)
            assert np.all(charge * discharge == 0.0)


class TestSimulateSoe:
    def test_charging_efficiency(self):
        p = StorageParams(horizon=1, soe_max=2.0, q_ch_max=1.0)
        assert simulate_soe(p, np.array([1.0])) == pytest.approx([0.9])

    def test_zero_schedule_is_identity(self):
        p = StorageParams(soe_init=0.4)
        soe = simulate_soe(p, np.zeros(24))
        assert np.array_equal(soe, np.full(24, 0.4))

    def test_round_trip_hand_value(self):
        p = StorageParams(horizon=2)
        soe = simulate_soe(p, np.array([0.5, -0.405]))
        assert soe == pytest.approx([0.45, 0.0], abs=1e-15)

    def test_one_sided_linearity(self, params):
        rng = np.random.default_rng(1)
        q = np.abs(rng.uniform(0, 0.5, 24))
        base = simulate_soe(params, q) - params.soe_init
        scaled = simulate_soe(params, 0.5 * q) - params.soe_init
        assert scaled == pytest.approx(0.5 * base)


class TestCheckFeasible:
    def test_zero_is_feasible(self, params):
        assert check_feasible(params, np.zeros(24)).ok

    def test_power_bound_violation_magnitude(self, params):
        q = np.zeros(24)
        q[0] = params.q_ch_max + 1.0
        report = check_feasible(params, q)
        assert not report.ok
        v = report.violations[0]
        assert v.kind == "power_high" and v.hour == 0
        assert v.magnitude == pytest.approx(1.0)

    def test_soe_overflow_magnitude(self):
        p = StorageParams(horizon=2)
        report = check_feasible(p, np.array([0.6, 0.6]))
        assert not report.ok
        soe_viol = [v for v in report.violations if v.kind == "soe_high"]
        assert soe_viol and soe_viol[0].hour == 1
        assert soe_viol[0].magnitude == pytest.approx(0.08)

    def test_box_constraint(self, params):
        box = SampleBox(cnt=np.zeros(24), rad=np.full(24, 0.1))
        q = np.zeros(24)
        q[3] = 0.2
        report = check_feasible(params, q, box=box)
        kinds = {v.kind for v in report.violations}
        assert kinds == {"box_high"}
        assert check_feasible(params, q, box=box, tol=0.11).ok

    def test_tolerance_validation(self, params):
        with pytest.raises(ValueError):
            check_feasible(params, np.zeros(24), tol=-1.0)


class TestRepairSchedule:
    def test_feasible_unchanged(self, params):
        q = np.zeros(24)
        q[2] = 0.3
        q[10] = -0.2
        assert np.array_equal(repair_schedule(params, q), q)

    def test_power_clip(self):
        p = StorageParams(horizon=1, soe_max=10.0)
        assert repair_schedule(p, np.array([0.7])) == pytest.approx([0.6])

    def test_soe_boundary_solve(self):
        p = StorageParams(horizon=2)
        repaired = repair_schedule(p, np.array([0.6, 0.6]))
        # 0.54 + q_2 * 0.9 = 1  ->  q_2 = 0.51111...
        assert repaired == pytest.approx([0.6, (1.0 - 0.54) / 0.9], rel=1e-12)
        assert check_feasible(p, repaired).ok

    def test_discharge_floor(self):
        p = StorageParams(horizon=1, soe_init=0.2)
        repaired = repair_schedule(p, np.array([-0.6]))
        assert repaired[0] == pytest.approx(-0.18)  # 0.2 * 0.9
        assert check_feasible(p, repaired).ok

    def test_empty_box_intersection(self, params):
        box = SampleBox(cnt=np.full(24, 2.0), rad=np.zeros(24))
        with pytest.raises(InfeasibleBoxError):
            repair_schedule(params, np.zeros(24), box=box)

    def test_idempotent_and_always_feasible(self, params):
        rng = np.random.default_rng(7)
        for _ in range(200):
            q = rng.uniform(-1.5, 1.5, 24)
            repaired = repair_schedule(params, q)
            assert check_feasible(params, repaired, tol=0.0).ok
            assert np.array_equal(repair_schedule(params, repaired), repaired)

    def test_repair_respects_box(self, params):
        # a box far from its feasible center can conflict with the SoE sweep;
        # repair must then signal rather than return an infeasible schedule
        rng = np.random.default_rng(8)
        cnt = repair_schedule(params, rng.uniform(-0.3, 0.3, 24))
        box = SampleBox(cnt=cnt, rad=np.full(24, 0.15))
        succeeded = 0
        for _ in range(100):
            q = rng.uniform(cnt - 0.15, cnt + 0.15)
            try:
                repaired = repair_schedule(params, q, box=box)
            except InfeasibleBoxError:
                continue
            succeeded += 1
            assert check_feasible(params, repaired, box=box, tol=0.0).ok
        assert succeeded > 50  # conflicts are the exception, not the rule
        # the center itself always repairs to itself inside its own box
        assert np.array_equal(repair_schedule(params, cnt, box=box), cnt)

    def test_no_false_negatives_round_trip(self, params):
        # any schedule passing through repair must satisfy the checker at tol 0
        rng = np.random.default_rng(9)
        soe_fracs = []
        for _ in range(100):
            q = repair_schedule(params, rng.uniform(-0.66, 0.66, 24))
            report = check_feasible(params, q, tol=0.0)
            assert report.ok, report.violations
            soe_fracs.append(simulate_soe(params, q).max() / params.soe_max)
        assert max(soe_fracs) > 0.99  # the sweep actually rides the SoE bound
