"""Run configuration: TOML schema, validation with field paths, oracle factory.

Top-level tables: ``oracle`` (required, with ``kind`` = "synthetic" or "dc"
and a matching subtable), ``storage``, ``scheme``, ``training``,
``surrogate``, ``surrogate_max``, ``baseline``.  Every scalar has a default
drawn from the reference experiment values; omitted tables mean "all
defaults".  Relative paths inside the file resolve against its directory.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - py310 path
    import tomli as tomllib

from esbo.cnn import DEFAULT_HIDDEN_CHANNELS
from esbo.meta import SchemeConfig, SurrogateMaxConfig
from esbo.oracles import (
    DcMarketOracle,
    NetworkCase,
    SyntheticPriceOracle,
    SyntheticPriceParams,
    daily_load_profile,
)
from esbo.storage import StorageParams
from esbo.training import TrainConfig


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"config error at {path}: {message}")
        self.field_path = path


@dataclass
class OracleConfig:
    kind: str
    synthetic: SyntheticPriceParams | None = None
    dc_case: NetworkCase | None = None
    dc_segments: int = 8
    dc_penalty: float = 1e4


@dataclass
class RunConfig:
    oracle: OracleConfig
    storage: StorageParams
    scheme: SchemeConfig
    baseline_enabled: bool = True
    out_dir: str = "run_out"
    raw: dict = field(default_factory=dict)

    def build_oracle(self):
        if self.oracle.kind == "synthetic":
            return SyntheticPriceOracle(self.oracle.synthetic)
        return DcMarketOracle(self.oracle.dc_case, segments=self.oracle.dc_segments,
                              penalty=self.oracle.dc_penalty)

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True, default=str).encode()
        ).hexdigest()


def _get(table: dict, key: str, default, path: str, types):
    value = table.get(key, default)
    if value is None:
        return None
    if types is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, types):
        raise ConfigError(f"{path}.{key}", f"expected {types}, got {type(value).__name__}")
    return value


def _vector(table: dict, key: str, horizon: int, path: str, default=None):
    value = table.get(key, default)
    if value is None:
        return None
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return np.full(horizon, float(value))
    if not isinstance(value, list):
        raise ConfigError(f"{path}.{key}", "expected a number or a list of numbers")
    arr = np.asarray(value, dtype=float)
    if arr.shape != (horizon,):
        raise ConfigError(f"{path}.{key}", f"expected {horizon} entries, got {arr.shape[0]}")
    return arr


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(str(path), "file not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"invalid TOML: {exc}") from None
    return parse_config(raw, base_dir=path.parent)


def parse_config(raw: dict, base_dir: Path | None = None) -> RunConfig:
    base_dir = Path(".") if base_dir is None else base_dir

    st = raw.get("storage", {})
    try:
        storage = StorageParams(
            soe_max=_get(st, "soe_max", 1.0, "storage", float),
            q_ch_max=_get(st, "q_ch_max", 0.6, "storage", float),
            q_dis_max=_get(st, "q_dis_max", 0.6, "storage", float),
            eta_ch=_get(st, "eta_ch", 0.9, "storage", float),
            eta_dis=_get(st, "eta_dis", 0.9, "storage", float),
            soe_init=_get(st, "soe_init", 0.0, "storage", float),
            horizon=_get(st, "horizon", 24, "storage", int),
        )
    except ValueError as exc:
        raise ConfigError("storage", str(exc)) from None

    if "oracle" not in raw:
        raise ConfigError("oracle", "missing required table")
    orc = raw["oracle"]
    kind = _get(orc, "kind", None, "oracle", str)
    if kind is None:
        raise ConfigError("oracle.kind", "missing required field")
    if kind not in ("synthetic", "dc"):
        raise ConfigError("oracle.kind", f"must be 'synthetic' or 'dc', got {kind!r}")

    oracle_cfg = OracleConfig(kind=kind)
    if kind == "synthetic":
        syn = orc.get("synthetic", {})
        horizon = storage.horizon
        base_price = _vector(syn, "base_price", horizon, "oracle.synthetic")
        if base_price is None:
            lo = _get(syn, "price_base", 20.0, "oracle.synthetic", float)
            hi = _get(syn, "price_peak", 90.0, "oracle.synthetic", float)
            base_price = lo + (hi - lo) * daily_load_profile(horizon, base=0.0, peak=1.0)
        base_load = _vector(syn, "base_load", horizon, "oracle.synthetic", default=0.0)
        try:
            oracle_cfg.synthetic = SyntheticPriceParams(
                a=base_price,
                b=_get(syn, "impact_linear", 0.0, "oracle.synthetic", float),
                c=_get(syn, "impact_cubic", 0.0, "oracle.synthetic", float),
                d=base_load,
            )
        except ValueError as exc:
            raise ConfigError("oracle.synthetic", str(exc)) from None
    else:
        dc = orc.get("dc", {})
        case_file = _get(dc, "case_file", None, "oracle.dc", str)
        if case_file is None:
            raise ConfigError("oracle.dc.case_file", "missing required field")
        case_path = Path(case_file)
        if not case_path.is_absolute():
            case_path = base_dir / case_path
        try:
            case = NetworkCase.from_json(case_path)
        except (OSError, ValueError) as exc:
            raise ConfigError("oracle.dc.case_file", str(exc)) from None
        if case.horizon != storage.horizon:
            raise ConfigError(
                "oracle.dc.case_file",
                f"case horizon {case.horizon} != storage.horizon {storage.horizon}",
            )
        oracle_cfg.dc_case = case
        oracle_cfg.dc_segments = _get(dc, "segments", 8, "oracle.dc", int)
        oracle_cfg.dc_penalty = _get(dc, "penalty", 1e4, "oracle.dc", float)

    tr = raw.get("training", {})
    try:
        train_cfg = TrainConfig(
            epochs=_get(tr, "epochs", 500, "training", int),
            max_lr=_get(tr, "max_lr", 0.003, "training", float),
            batch_size=_get(tr, "batch_size", 128, "training", int),
            weight_decay=_get(tr, "weight_decay", 0.01, "training", float),
            moment_decay_1=_get(tr, "moment_decay_1", 0.95, "training", float),
            moment_decay_2=_get(tr, "moment_decay_2", 0.85, "training", float),
            lookahead_sync_period=_get(tr, "lookahead_sync_period", 6, "training", int),
            lookahead_blend=_get(tr, "lookahead_blend", 0.5, "training", float),
            flat_fraction=_get(tr, "flat_fraction", 0.72, "training", float),
        )
    except ValueError as exc:
        raise ConfigError("training", str(exc)) from None

    sm = raw.get("surrogate_max", {})
    try:
        max_cfg = SurrogateMaxConfig(
            starts=_get(sm, "starts", 20, "surrogate_max", int),
            steps=_get(sm, "steps", 500, "surrogate_max", int),
            step_size=_get(sm, "step_size", 0.1, "surrogate_max", float),
            penalty_weight=_get(sm, "penalty_weight", 1e3, "surrogate_max", float),
        )
    except ValueError as exc:
        raise ConfigError("surrogate_max", str(exc)) from None

    sur = raw.get("surrogate", {})
    beta = _get(sur, "beta", 50.0, "surrogate", float)
    channels = sur.get("hidden_channels", list(DEFAULT_HIDDEN_CHANNELS))
    if not (isinstance(channels, list) and len(channels) == 6
            and all(isinstance(c, int) and c >= 1 for c in channels)):
        raise ConfigError("surrogate.hidden_channels", "expected a list of six positive ints")

    sc = raw.get("scheme", {})
    try:
        scheme = SchemeConfig(
            dataset_size=_get(sc, "dataset_size", 2000, "scheme", int),
            ensemble_size=_get(sc, "ensemble_size", 4, "scheme", int),
            epsilon=_get(sc, "epsilon", 0.1, "scheme", float),
            gamma=_get(sc, "gamma", 5.0, "scheme", float),
            iterations_max=_get(sc, "iterations_max", 8, "scheme", int),
            workers=_get(sc, "workers", 1, "scheme", int),
            seed=_get(sc, "seed", 0, "scheme", int),
            beta=beta,
            hidden_channels=tuple(channels),
            train=train_cfg,
            surrogate_max=max_cfg,
        )
    except ValueError as exc:
        raise ConfigError("scheme", str(exc)) from None

    bl = raw.get("baseline", {})
    enabled = _get(bl, "enabled", True, "baseline", bool)

    out_dir = _get(raw, "out_dir", "run_out", "", str)
    return RunConfig(oracle=oracle_cfg, storage=storage, scheme=scheme,
                     baseline_enabled=enabled, out_dir=out_dir, raw=raw)
