"""Training loop, metrics, evaluation, ablations and forecast reports."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import (
    DatasetPreset,
    RawSeries,
    SeriesSlice,
    SplitSpec,
    WindowSet,
    chronological_split,
    fit_standardizer,
    naive_forecast,
    standardize_slice,
)
from .model import ModelConfig, ModelParams, forward, init_params
from .tensor import ConfigError, ShapeError

log = logging.getLogger(__name__)

ABLATION_SWITCHES = ("w/o-variate", "w/o-hid", "w/o-diw", "w/o-adp", "w/o-gfc", "gcn", "plain")
EVAL_BATCH = 256


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-4
    shuffle_seed: int = 0
    early_metric: str = "val_mse"
    max_steps: int | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size <= 0:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.early_metric != "val_mse":
            raise ConfigError(f"early_metric must be 'val_mse', got {self.early_metric!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config key(s): {', '.join(sorted(unknown))}")
        return cls(**d)


# ---------------------------------------------------------------------------
# metrics


def _check_shapes(pred, target):
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return pred, target


def mse(pred, target) -> float:
    pred, target = _check_shapes(pred, target)
    return float(np.mean((pred - target) ** 2))


def mae(pred, target) -> float:
    pred, target = _check_shapes(pred, target)
    return float(np.mean(np.abs(pred - target)))


def mse_loss(pred: T.Tensor, target) -> T.Tensor:
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return T.tmean(T.square(pred - target))


# ---------------------------------------------------------------------------
# data preparation


@dataclass
class PreparedData:
    """Standardized train/val/test slices plus the scaler that produced them."""

    train: SeriesSlice
    val: SeriesSlice
    test: SeriesSlice
    scaler: object
    n_nodes: int

    def windows(self, part: str, h: int, s: int) -> WindowSet:
        return WindowSet(getattr(self, part), h, s)


def prepare_data(raw: RawSeries, spec: SplitSpec, standardize: bool = True) -> PreparedData:
    train, val, test = chronological_split(raw, spec)
    scaler = fit_standardizer(train, enabled=standardize)
    return PreparedData(standardize_slice(train, scaler), standardize_slice(val, scaler),
                        standardize_slice(test, scaler), scaler, raw.n_variates)


def prepare_preset(raw: RawSeries, preset: DatasetPreset, h: int = 96) -> PreparedData:
    if raw.n_variates != preset.n_variates:
        log.warning("preset %s expects %d variates, file has %d", preset.name, preset.n_variates, raw.n_variates)
    return prepare_data(raw, preset.split_spec(len(raw), h), standardize=preset.global_standardize)


# ---------------------------------------------------------------------------
# training


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    steps: int = 0


def _snapshot(params: ModelParams) -> list[np.ndarray]:
    return [p.data.copy() for p in params.parameters()]


def _restore(params: ModelParams, snap: list[np.ndarray]) -> None:
    for p, arr in zip(params.parameters(), snap):
        p.data = arr.copy()


def predict(params: ModelParams, cfg: ModelConfig, windows: WindowSet, batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Stacked forecasts ``(n_windows, N, S)``."""
    out = []
    with T.no_grad():
        for b in windows.batches(batch_size):
            out.append(forward(b.x, b.hid, b.diw, params, cfg).data)
    if not out:
        return np.zeros((0, cfg.n_nodes, cfg.output_len))
    return np.concatenate(out, axis=0)


def _window_metrics(params, cfg, windows: WindowSet) -> tuple[float, float]:
    """Mean MSE/MAE over all windows, accumulated batch by batch."""
    if len(windows) == 0:
        return math.nan, math.nan
    se = ae = 0.0
    count = 0
    with T.no_grad():
        for b in windows.batches(EVAL_BATCH):
            pred = forward(b.x, b.hid, b.diw, params, cfg).data
            diff = pred - b.y
            se += float(np.sum(diff * diff))
            ae += float(np.sum(np.abs(diff)))
            count += diff.size
    return se / count, ae / count


def train(cfg: ModelConfig, tcfg: TrainConfig, data: PreparedData, params: ModelParams | None = None,
          static_adjacency: np.ndarray | None = None) -> tuple[ModelParams, History]:
    """Adam on batch-mean MSE; returns the parameters of the best validation epoch."""
    params = params if params is not None else init_params(cfg, static_adjacency)
    history = History()
    train_w = data.windows("train", cfg.input_len, cfg.output_len)
    if len(train_w) == 0:
        raise ConfigError("training split yields no windows")
    val_w = data.windows("val", cfg.input_len, cfg.output_len)
    rng = np.random.default_rng(tcfg.shuffle_seed)
    trainable = params.trainable()
    best = (math.inf, None)
    step = 0
    for epoch in range(tcfg.epochs):
        order = rng.permutation(len(train_w))
        total, seen = 0.0, 0
        for b in train_w.batches(tcfg.batch_size, order):
            if tcfg.max_steps is not None and step >= tcfg.max_steps:
                break
            loss = mse_loss(forward(b.x, b.hid, b.diw, params, cfg), b.y)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite loss {value} at epoch {epoch}, step {step}")
            loss.backward()
            T.adam_step(trainable, tcfg.learning_rate)
            step += 1
            total += value * len(b)
            seen += len(b)
        history.train_loss.append(total / max(seen, 1))
        val_mse = _window_metrics(params, cfg, val_w)[0] if len(val_w) else history.train_loss[-1]
        history.val_loss.append(val_mse)
        log.info("epoch %d train %.6f val %.6f", epoch, history.train_loss[-1], val_mse)
        if val_mse < best[0]:
            best = (val_mse, _snapshot(params))
            history.best_epoch = epoch
        if tcfg.max_steps is not None and step >= tcfg.max_steps:
            break
    history.steps = step
    if best[1] is not None:
        _restore(params, best[1])
    return params, history


# ---------------------------------------------------------------------------
# evaluation and reports


@dataclass
class ForecastReport:
    per_horizon: dict[int, dict[str, float]]
    average: dict[str, float]
    fingerprint: str = ""
    seconds: float = 0.0
    history: dict[int, dict] = field(default_factory=dict)
    model: str = "ForecastGrapher"

    @classmethod
    def build(cls, per_horizon: dict[int, tuple[float, float]], **kw) -> "ForecastReport":
        rows = {int(s): {"mse": float(m), "mae": float(a)} for s, (m, a) in sorted(per_horizon.items())}
        avg = {
            "mse": float(np.mean([r["mse"] for r in rows.values()])),
            "mae": float(np.mean([r["mae"] for r in rows.values()])),
        }
        return cls(rows, avg, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_horizon"] = {str(k): v for k, v in self.per_horizon.items()}
        d["history"] = {str(k): v for k, v in self.history.items()}
        return d

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ForecastReport":
        d = json.loads(Path(path).read_text())
        d["per_horizon"] = {int(k): v for k, v in d["per_horizon"].items()}
        d["history"] = {int(k): v for k, v in d.get("history", {}).items()}
        return cls(**d)

    def metrics_only(self) -> dict:
        return {"per_horizon": self.to_dict()["per_horizon"], "average": self.average}


def evaluate(params: ModelParams, cfg: ModelConfig, data: PreparedData, split: str = "test") -> tuple[float, float]:
    """MSE and MAE over every window of ``split`` for this model's horizon."""
    return _window_metrics(params, cfg, data.windows(split, cfg.input_len, cfg.output_len))


def evaluate_naive(data: PreparedData, h: int, s: int, split: str = "test") -> tuple[float, float]:
    windows = data.windows(split, h, s)
    if len(windows) == 0:
        return math.nan, math.nan
    se = ae = 0.0
    count = 0
    for b in windows.batches(1024):
        diff = naive_forecast(b.x, s) - b.y
        se += float(np.sum(diff * diff))
        ae += float(np.sum(np.abs(diff)))
        count += diff.size
    return se / count, ae / count


def naive_report(data: PreparedData, horizons, h: int = 96, split: str = "test") -> ForecastReport:
    start = time.perf_counter()
    rows = {s: evaluate_naive(data, h, s, split) for s in horizons}
    return ForecastReport.build(rows, model="Naive", fingerprint=json.dumps({"h": h}),
                                seconds=time.perf_counter() - start)


def run_experiment(cfg: ModelConfig, tcfg: TrainConfig, data: PreparedData, horizons,
                   static_adjacency: np.ndarray | None = None, split: str = "test"):
    """Train one model per horizon and report test metrics.

    Returns ``(report, models)`` with ``models[S] = (params, cfg_S)``.
    """
    start = time.perf_counter()
    rows, histories, models = {}, {}, {}
    for s in horizons:
        cfg_s = replace(cfg, output_len=int(s))
        params, hist = train(cfg_s, tcfg, data, static_adjacency=static_adjacency)
        rows[s] = evaluate(params, cfg_s, data, split)
        histories[int(s)] = asdict(hist)
        models[int(s)] = (params, cfg_s)
    fp = json.dumps({"model": cfg.to_dict(), "train": asdict(tcfg)}, sort_keys=True)
    report = ForecastReport.build(rows, fingerprint=fp, seconds=time.perf_counter() - start, history=histories)
    return report, models


def write_plot_data(path, params: ModelParams, cfg: ModelConfig, windows: WindowSet, node: int = 0,
                    max_windows: int = 10) -> None:
    """CSV of input, truth and forecast for one node: offset < 0 are inputs, >= 0 targets."""
    if not 0 <= node < cfg.n_nodes:
        raise ConfigError(f"node index {node} outside [0, {cfg.n_nodes})")
    n = min(max_windows, len(windows))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window", "offset", "input", "truth", "prediction"])
        if n == 0:
            return
        b = windows.batch(np.arange(n))
        with T.no_grad():
            pred = forward(b.x, b.hid, b.diw, params, cfg).data
        h = cfg.input_len
        for i in range(n):
            for t in range(h):
                w.writerow([i, t - h, repr(float(b.x[i, node, t])), "", ""])
            for t in range(cfg.output_len):
                w.writerow([i, t, "", repr(float(b.y[i, node, t])), repr(float(pred[i, node, t]))])


# ---------------------------------------------------------------------------
# ablations


def apply_switches(cfg: ModelConfig, switches) -> ModelConfig:
    switches = set(switches)
    unknown = switches - set(ABLATION_SWITCHES)
    if unknown:
        raise ConfigError(f"unknown ablation switch(es): {', '.join(sorted(unknown))}")
    if "gcn" in switches and switches & {"w/o-gfc", "plain"}:
        raise ConfigError("contradictory switches: 'gcn' keeps GFC, 'w/o-gfc'/'plain' remove it")
    out = copy.deepcopy(cfg)
    if "w/o-variate" in switches:
        out.use_variate = False
    if "w/o-hid" in switches:
        out.use_hid = False
    if "w/o-diw" in switches:
        out.use_diw = False
    if "w/o-adp" in switches:
        out.adjacency = "static"
    if switches & {"w/o-gfc", "plain"}:
        out.variant = "plain_gcn"
    if "gcn" in switches:
        out.variant = "gcn_gfc"
    out.validate()
    return out


@dataclass
class AblationReport:
    rows: dict[str, ForecastReport]

    def table(self) -> str:
        horizons = sorted(next(iter(self.rows.values())).per_horizon)
        head = ["variant"] + [f"{s}:{m}" for s in horizons for m in ("mse", "mae")] + ["avg:mse", "avg:mae"]
        lines = [",".join(head)]
        for name, rep in self.rows.items():
            cells = [name]
            for s in horizons:
                cells += [f"{rep.per_horizon[s]['mse']:.6f}", f"{rep.per_horizon[s]['mae']:.6f}"]
            cells += [f"{rep.average['mse']:.6f}", f"{rep.average['mae']:.6f}"]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def ablation_run(base_cfg: ModelConfig, tcfg: TrainConfig, data: PreparedData, switches, horizons,
                 static_adjacency: np.ndarray | None = None) -> AblationReport:
    """Train the base model and the switched variant under identical seeds and data."""
    switches = sorted(set(switches))
    variant_cfg = apply_switches(base_cfg, switches)
    if "w/o-adp" in switches and static_adjacency is None:
        raise ConfigError("'w/o-adp' requires a static adjacency file")
    rows = {"base": run_experiment(base_cfg, tcfg, data, horizons)[0]}
    if switches:
        rows["+".join(switches)] = run_experiment(variant_cfg, tcfg, data, horizons, static_adjacency)[0]
    return AblationReport(rows)
