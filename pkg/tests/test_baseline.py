"""Linearized-oracle baseline comparator."""

import numpy as np
import pytest

from esbo.baseline import price_taker_lp, run_baseline
from esbo.oracles import SyntheticPriceOracle, SyntheticPriceParams, daily_load_profile
from esbo.storage import check_feasible, split_schedule


def price_curve(horizon=24):
    return 20 + 70 * daily_load_profile(horizon, base=0.0, peak=1.0)


class TestPriceTakerLp:
    def test_schedule_feasible_and_profitable(self, params):
        schedule, profit = price_taker_lp(price_curve(), params)
        assert check_feasible(params, schedule, tol=1e-9).ok
        assert profit > 0.0

    def test_profit_matches_identity(self, params):
        prices = price_curve()
        schedule, profit = price_taker_lp(prices, params)
        assert profit == pytest.approx(-(schedule @ prices), rel=1e-12)

    def test_beats_random_feasible_schedules(self, params):
        from esbo.storage import repair_schedule

        prices = price_curve()
        _, lp_profit = price_taker_lp(prices, params)
        rng = np.random.default_rng(0)
        for _ in range(100):
            q = repair_schedule(params, rng.uniform(-0.66, 0.66, 24))
            assert -(q @ prices) <= lp_profit + 1e-9

    def test_flat_prices_give_zero_trading(self, params):
        # lossy efficiencies make any round trip strictly unprofitable
        schedule, profit = price_taker_lp(np.full(24, 30.0), params)
        assert profit == pytest.approx(0.0, abs=1e-9)
        assert schedule == pytest.approx(np.zeros(24), abs=1e-9)


class TestRunBaseline:
    def test_degenerate_linear_equals_true(self, params):
        oracle = SyntheticPriceOracle(SyntheticPriceParams(a=price_curve()))
        result = run_baseline(oracle, oracle, params)
        assert result.profit_on_true == pytest.approx(result.profit_on_linear, rel=1e-12)
        _, lp_profit = price_taker_lp(price_curve(), params)
        assert result.profit_on_linear == pytest.approx(lp_profit, rel=1e-12)

    def test_price_impact_erodes_price_taker_profit(self, params):
        curve = price_curve()
        true_oracle = SyntheticPriceOracle(SyntheticPriceParams(a=curve, b=25.0, c=8.0))
        linear = SyntheticPriceOracle(SyntheticPriceParams(a=curve))
        result = run_baseline(true_oracle, linear, params)
        assert result.profit_on_true < result.profit_on_linear

    def test_no_simultaneous_charge_discharge(self, params):
        oracle = SyntheticPriceOracle(SyntheticPriceParams(a=price_curve()))
        result = run_baseline(oracle, oracle, params)
        assert not result.degenerate_simultaneous_flow
        charge, discharge = split_schedule(result.schedule_linear)
        assert np.max(charge * discharge) == 0.0

    def test_linearization_uses_prices_at_zero_schedule(self, params):
        curve = price_curve()
        true_oracle = SyntheticPriceOracle(SyntheticPriceParams(a=curve, b=10.0, d=np.full(24, 0.2)))
        result = run_baseline(true_oracle, true_oracle, params)
        lam0 = true_oracle.evaluate(np.zeros(24)).lam
        expected, _ = price_taker_lp(lam0, params)
        assert result.schedule_linear == pytest.approx(expected)
