"""Energy-storage bidding optimizer built on convolutional profit surrogates."""

from esbo.storage import (
    StorageParams,
    check_feasible,
    repair_schedule,
    simulate_soe,
    split_schedule,
)
from esbo.dataset import LabeledDataset, SampleBox, build_dataset, full_range_box, split_dataset
from esbo.oracles import DcMarketOracle, NetworkCase, SyntheticPriceOracle, batch_evaluate
from esbo.cnn import ConvSurrogate, build_default_architecture, init_params, load_model, save_model
from esbo.training import TrainConfig, train, train_ensemble
from esbo.meta import SchemeConfig, SurrogateMaxConfig, maximize_surrogate, run
from esbo.baseline import run_baseline

__all__ = [
    "StorageParams", "check_feasible", "repair_schedule", "simulate_soe", "split_schedule",
    "LabeledDataset", "SampleBox", "build_dataset", "full_range_box", "split_dataset",
    "DcMarketOracle", "NetworkCase", "SyntheticPriceOracle", "batch_evaluate",
    "ConvSurrogate", "build_default_architecture", "init_params", "load_model", "save_model",
    "TrainConfig", "train", "train_ensemble",
    "SchemeConfig", "SurrogateMaxConfig", "maximize_surrogate", "run",
    "run_baseline",
]

__version__ = "0.1.0"
