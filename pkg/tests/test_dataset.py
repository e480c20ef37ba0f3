"""Dataset generation, splitting, and persistence."""

import numpy as np
import pytest
from scipy import stats

from esbo.dataset import (
    DatasetFormatError,
    SampleBox,
    build_dataset,
    full_range_box,
    load_dataset,
    sample_box,
    save_dataset,
    split_dataset,
    split_indices,
)
from esbo.oracles import SyntheticPriceOracle, SyntheticPriceParams
from esbo.storage import StorageParams, check_feasible


@pytest.fixture
def oracle():
    return SyntheticPriceOracle(SyntheticPriceParams(a=np.linspace(20, 80, 24), b=2.0, c=1.0))


class TestSampleBox:
    def test_degenerate_radius_pins_center(self, params):
        box = SampleBox(cnt=np.full(24, 0.25), rad=np.zeros(24))
        rows = sample_box(box, params, n=8, seed=1)
        assert np.array_equal(rows, np.full((8, 24), 0.25))

    def test_first_iteration_interval(self, params):
        # radius 0.6 with eps 0.1 samples the inflated interval [-0.66, 0.66]
        box = full_range_box(params, epsilon=0.1)
        assert box.rad[0] == pytest.approx(0.6)
        lo, hi = box.sampling_bounds(params)
        assert lo == pytest.approx(np.full(24, -0.66))
        assert hi == pytest.approx(np.full(24, 0.66))
        rows = sample_box(box, params, n=2000, seed=2)
        assert rows.min() >= -0.66 and rows.max() <= 0.66

    def test_uniform_statistics(self, params):
        box = full_range_box(params, epsilon=0.1)
        rows = sample_box(box, params, n=10_000, seed=3)
        lo, hi = box.sampling_bounds(params)
        width = hi[0] - lo[0]
        sem = width / np.sqrt(12.0) / np.sqrt(rows.shape[0])
        for t in range(24):
            assert lo[t] <= rows[:, t].min() and rows[:, t].max() <= hi[t]
            mid = 0.5 * (lo[t] + hi[t])
            assert abs(rows[:, t].mean() - mid) < 3.0 * sem

    def test_uniform_ks_statistic(self, params):
        box = full_range_box(params, epsilon=0.1)
        rows = sample_box(box, params, n=10_000, seed=4)
        lo, hi = box.sampling_bounds(params)
        for t in range(0, 24, 3):
            u = (rows[:, t] - lo[t]) / (hi[t] - lo[t])
            d = stats.kstest(u, "uniform").statistic
            assert d < 1.63 / np.sqrt(rows.shape[0])  # 1% critical value

    def test_asymmetric_power_bounds_clip_interval(self):
        p = StorageParams(q_ch_max=0.3, q_dis_max=0.6)
        box = full_range_box(p, epsilon=0.0)
        lo, hi = box.sampling_bounds(p)
        assert lo[0] == pytest.approx(-0.6)
        assert hi[0] == pytest.approx(0.3)

    def test_deterministic(self, params):
        box = full_range_box(params, epsilon=0.1)
        assert np.array_equal(sample_box(box, params, 50, seed=5),
                              sample_box(box, params, 50, seed=5))

    def test_invalid_radius(self):
        with pytest.raises(ValueError):
            SampleBox(cnt=np.zeros(3), rad=np.array([0.1, -0.1, 0.1]))


class TestBuildAndSplit:
    def test_targets_match_direct_oracle_calls(self, oracle, params):
        d = build_dataset(oracle, full_range_box(params, 0.1), params, n=10, seed=6)
        for row, target in zip(d.inputs, d.targets):
            assert target == oracle.evaluate(row).profit

    def test_rows_feasible_under_inflated_bounds(self, oracle, params):
        eps = 0.1
        d = build_dataset(oracle, full_range_box(params, eps), params, n=200, seed=7)
        # SoE plays no role in sampling (labels cover infeasible rows too);
        # park the trajectory far from both SoE bounds to isolate power + box
        inflated = StorageParams(
            soe_max=np.inf, q_ch_max=params.q_ch_max * (1 + eps),
            q_dis_max=params.q_dis_max * (1 + eps), eta_ch=params.eta_ch,
            eta_dis=params.eta_dis, soe_init=1e6, horizon=params.horizon,
        )
        inflated_box = SampleBox(cnt=d.box.cnt, rad=d.box.rad * (1 + eps))
        for row in d.inputs:
            assert check_feasible(inflated, row, box=inflated_box, tol=0.0).ok

    def test_split_sizes(self):
        train_idx, valid_idx = split_indices(10, seed=0)
        assert len(train_idx) == 8 and len(valid_idx) == 2

    def test_split_disjoint_exhaustive_deterministic(self, oracle, params):
        d = build_dataset(oracle, full_range_box(params, 0.1), params, n=103, seed=8)
        a_train, a_valid = split_dataset(d, seed=9)
        b_train, b_valid = split_dataset(d, seed=9)
        assert a_train.n == int(np.ceil(0.8 * 103))
        assert a_train.n + a_valid.n == 103
        assert np.array_equal(a_train.inputs, b_train.inputs)
        joined = np.vstack([a_train.inputs, a_valid.inputs])
        assert np.unique(joined, axis=0).shape[0] == 103

    def test_normalization_from_training_split_only(self, oracle, params):
        d = build_dataset(oracle, full_range_box(params, 0.1), params, n=60, seed=10)
        train, _ = split_dataset(d, seed=d.seed)
        assert d.normalization.target_mean == pytest.approx(train.targets.mean())
        assert d.normalization.target_std == pytest.approx(train.targets.std())
        assert d.normalization.input_scale == pytest.approx(np.full(24, 0.6))

    def test_split_requires_minimum_rows(self):
        with pytest.raises(ValueError):
            split_indices(4, seed=0)

    def test_reproducible_generation(self, oracle, params):
        box = full_range_box(params, 0.1)
        a = build_dataset(oracle, box, params, n=40, seed=11)
        b = build_dataset(oracle, box, params, n=40, seed=11)
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.targets, b.targets)


class TestPersistence:
    def test_round_trip_bit_exact(self, oracle, params, tmp_path):
        d = build_dataset(oracle, full_range_box(params, 0.1), params, n=50, seed=12)
        path = tmp_path / "data.csv"
        save_dataset(d, path)
        loaded = load_dataset(path)
        assert np.array_equal(loaded.inputs, d.inputs)
        assert np.array_equal(loaded.targets, d.targets)
        assert loaded.seed == d.seed
        assert loaded.normalization.target_std == d.normalization.target_std
        assert np.array_equal(loaded.box.rad, d.box.rad)

    def test_large_round_trip_checksum(self, oracle, params, tmp_path):
        d = build_dataset(oracle, full_range_box(params, 0.1), params, n=10_000, seed=13)
        path = tmp_path / "big.csv"
        save_dataset(d, path)
        loaded = load_dataset(path)
        assert hash(loaded.inputs.tobytes()) == hash(d.inputs.tobytes())
        assert hash(loaded.targets.tobytes()) == hash(d.targets.tobytes())

    def test_wrong_column_count_diagnostic(self, oracle, params, tmp_path):
        d = build_dataset(oracle, full_range_box(params, 0.1), params, n=10, seed=14)
        path = tmp_path / "data.csv"
        save_dataset(d, path)
        lines = path.read_text().splitlines()
        lines[3] = lines[3].rsplit(",", 1)[0]  # drop one field on data line 3
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetFormatError, match=":4"):
            load_dataset(path)

    def test_bad_header_diagnostic(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("a,b,c\n1,2,3\n")
        (tmp_path / "data.meta.json").write_text("{}")
        with pytest.raises(DatasetFormatError, match="header"):
            load_dataset(path)

    def test_missing_sidecar(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("q_1,profit\n0.0,0.0\n")
        with pytest.raises(DatasetFormatError, match="sidecar"):
            load_dataset(path)
