"""Training loop, error metrics, the cross-validated benchmark grid and its reports."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from fxcast.data import (
    SeriesFrame,
    WindowSet,
    FoldSplit,
    make_folds,
    make_windows,
    norm_fit_end,
    zscore_apply,
    zscore_fit,
)
from fxcast.errors import DataError, DimensionError, FxcastError, ParameterError
from fxcast.models import ForecastModel, ModelConfig, build, checkpoint
from fxcast.numerics import Adam, Tape, Tensor, absolute, as_tensor, sub

log = logging.getLogger(__name__)

BENCH_PAIRS: tuple[tuple[int, int], ...] = ((32, 16), (48, 24), (64, 32), (96, 48), (128, 64))

# Reference cells from the original study (proprietary data, never asserted).
REPORTED_CELLS = {
    ("tsmixer", 16): {"mae": 0.032, "mse": 0.002},
    ("tsmixer", 64): {"mae": 0.063, "mse": 0.007},
}


class BudgetExceeded(FxcastError):
    """The benchmark wall-clock budget ran out."""


# ---------------------------------------------------------------- metrics


def loss_mae(pred, target) -> Tensor:
    """Mean absolute error as a differentiable scalar (subgradient 0 at 0)."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} and target {target.shape} differ")
    return absolute(sub(pred, target)).mean()


def _pair(pred, target) -> tuple[np.ndarray, np.ndarray]:
    p, t = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    if p.shape != t.shape:
        raise DimensionError(f"prediction {p.shape} and target {t.shape} differ")
    return p, t


def metric_mae(pred, target) -> float:
    p, t = _pair(pred, target)
    return float(np.mean(np.abs(p - t)))


def metric_mse(pred, target) -> float:
    p, t = _pair(pred, target)
    d = p - t
    return float(np.mean(d * d))


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 1000
    batch_size: int = 32
    seed: int = 0
    loss: str = "mae"

    def validate(self) -> None:
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr < 0:
            raise ParameterError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.loss != "mae":
            raise ParameterError(f"unsupported loss {self.loss!r}")


def fit(model: ForecastModel, inputs: np.ndarray, targets: np.ndarray, config: TrainConfig,
        rng: np.random.Generator, deadline: float | None = None) -> list[float]:
    """Mini-batch Adam on ``(inputs, targets)``; returns the mean loss per epoch."""
    config.validate()
    n = len(inputs)
    if n == 0:
        raise DataError("empty training set")
    opt = Adam(model.parameters(), lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    trace = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            if deadline is not None and time.monotonic() > deadline:
                raise BudgetExceeded("time budget exceeded during training")
            idx = order[start : start + config.batch_size]
            with Tape() as tape:
                loss = loss_mae(model.forward(Tensor(inputs[idx])), Tensor(targets[idx]))
            tape.backward(loss)
            opt.step()
            total += float(loss.data) * len(idx)
        trace.append(total / n)
    return trace


def train(model: ForecastModel, windows: WindowSet, folds: FoldSplit, fold_index: int,
          config: TrainConfig, deadline: float | None = None) -> tuple[ForecastModel, list[float]]:
    """Train on every window outside validation block ``fold_index``.

    Runs a fixed number of epochs (no early stopping) and returns the
    final-epoch model with its per-epoch loss trace.
    """
    idx = folds.train_indices(fold_index)
    rng = np.random.default_rng([config.seed, fold_index])
    trace = fit(model, windows.inputs[idx], windows.targets[idx], config, rng, deadline)
    return model, trace


# ---------------------------------------------------------------- benchmark


@dataclass
class FoldResult:
    mae: float
    mse: float


@dataclass
class CellResult:
    model: str
    L: int
    H: int
    folds: list[FoldResult] = field(default_factory=list)
    mae_mean: float | None = None
    mse_mean: float | None = None
    error: str | None = None
    forecasts: list[dict[str, Any]] = field(default_factory=list, repr=False, compare=False)

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict[str, Any]:
        d = {"model": self.model, "L": self.L, "H": self.H,
             "folds": [{"mae": f.mae, "mse": f.mse} for f in self.folds],
             "mae_mean": self.mae_mean, "mse_mean": self.mse_mean}
        if self.error is not None:
            d["error"] = self.error
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CellResult":
        return cls(d["model"], int(d["L"]), int(d["H"]),
                   [FoldResult(float(f["mae"]), float(f["mse"])) for f in d["folds"]],
                   d.get("mae_mean"), d.get("mse_mean"), d.get("error"))


@dataclass
class MetricsTable:
    runs: list[CellResult] = field(default_factory=list)
    config_echo: dict[str, Any] = field(default_factory=dict)

    def cell(self, model: str, H: int) -> CellResult:
        for r in self.runs:
            if r.model == model and r.H == H:
                return r
        raise KeyError((model, H))

    @property
    def complete(self) -> bool:
        return all(r.ok for r in self.runs)

    def to_dict(self) -> dict[str, Any]:
        return {"runs": [r.to_dict() for r in self.runs], "config_echo": self.config_echo}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "MetricsTable":
        return cls([CellResult.from_dict(r) for r in d.get("runs", [])], d.get("config_echo", {}))

    @classmethod
    def from_json(cls, text: str) -> "MetricsTable":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class BenchConfig:
    train: TrainConfig = TrainConfig()
    features: tuple[str, ...] | None = None  # None: every column, target first
    k: int = 5
    hparams: dict[str, dict[str, Any]] = field(default_factory=dict)
    time_budget: float | None = None  # seconds for the whole grid
    jobs: int = 1
    checkpoint_dir: str | None = None  # save every fold's trained model here

    def echo(self) -> dict[str, Any]:
        d = asdict(self)
        for k in ("time_budget", "jobs", "checkpoint_dir"):
            d.pop(k)
        d["features"] = list(self.features) if self.features is not None else None
        d["hparams"] = {k: {hk: list(hv) if isinstance(hv, tuple) else hv for hk, hv in v.items()}
                        for k, v in sorted(self.hparams.items())}
        return d


def check_jensen(mae: float, mse: float) -> None:
    if mae * mae > mse * (1.0 + 1e-12) + 1e-300:
        raise ArithmeticError(f"mae^2 > mse ({mae}^2 > {mse}); metrics are inconsistent")


def feature_list(frame: SeriesFrame, features: Sequence[str] | None) -> list[str]:
    if features is None:
        return [frame.target_name] + [n for n in frame.names if n != frame.target_name]
    return list(features)


def evaluate_fold(frame: SeriesFrame, features: Sequence[str], tag: str, L: int, H: int,
                  fold_index: int, config: BenchConfig, deadline: float | None = None):
    """Normalize with this round's stats, train a fresh model, score the validation block."""
    probe = make_windows(frame, [frame.target_name], L, H)
    folds = make_folds(probe, config.k)
    stats = zscore_fit(frame, norm_fit_end(folds, fold_index, L))
    windows = make_windows(zscore_apply(frame, stats), features, L, H)
    target_ch = windows.target_index if windows.target_index is not None else 0
    mcfg = ModelConfig(tag, L, H, len(features), seed=config.train.seed + fold_index,
                       target_channel=target_ch, hparams=dict(config.hparams.get(tag, {})))
    model = build(mcfg)
    model, trace = train(model, windows, folds, fold_index, config.train, deadline)
    val = folds.val_indices(fold_index)
    pred = model.predict(windows.inputs[val])
    truth = windows.targets[val]
    if config.checkpoint_dir is not None:
        path = Path(config.checkpoint_dir)
        path.mkdir(parents=True, exist_ok=True)
        checkpoint.save(model, path / f"{tag}_L{L}_H{H}_fold{fold_index}.fxck",
                        extra={"features": list(features), "fold": fold_index, "k": config.k,
                               "norm": stats.to_dict()})
    return model, trace, val, pred, truth, windows


def run_cell(frame: SeriesFrame, features: Sequence[str], tag: str, L: int, H: int,
             config: BenchConfig, deadline: float | None = None) -> CellResult:
    cell = CellResult(tag, L, H)
    try:
        if deadline is not None and time.monotonic() > deadline:
            raise BudgetExceeded("time budget exceeded before cell start")
        for i in range(config.k):
            _, _, val, pred, truth, windows = evaluate_fold(frame, features, tag, L, H, i, config,
                                                            deadline)
            mae, mse = metric_mae(pred, truth), metric_mse(pred, truth)
            check_jensen(mae, mse)
            cell.folds.append(FoldResult(mae, mse))
            for row, w in enumerate(val):
                start = int(windows.window_start_indices[w]) + L
                for h in range(H):
                    cell.forecasts.append({
                        "fold": i, "window": int(w), "date": str(windows.timestamps[start + h]),
                        "step": h + 1, "truth": float(truth[row, h]), "pred": float(pred[row, h]),
                    })
        cell.mae_mean = float(np.mean([f.mae for f in cell.folds]))
        cell.mse_mean = float(np.mean([f.mse for f in cell.folds]))
    except (FxcastError, ArithmeticError, ValueError, MemoryError) as exc:
        cell.error = f"{type(exc).__name__}: {exc}"
        cell.forecasts = []
        log.warning("cell %s L=%d H=%d failed: %s", tag, L, H, cell.error)
    return cell


def _run_cell_job(args):
    return run_cell(*args)


def run_benchmark(frame: SeriesFrame, tags: Sequence[str],
                  pairs: Sequence[tuple[int, int]] = BENCH_PAIRS,
                  config: BenchConfig = BenchConfig()) -> MetricsTable:
    """Five-fold chronological evaluation of every (model, pair) cell.

    Cell failures are recorded in the table instead of aborting the grid.
    """
    config.train.validate()
    if not tags:
        raise ParameterError("no model tags given")
    features = feature_list(frame, config.features)
    L_max = max(L for L, _ in pairs)
    H_max = max(H for _, H in pairs)
    if len(frame) < L_max + H_max:
        raise DataError(f"frame of length {len(frame)} cannot be windowed at ({L_max}, {H_max})")
    deadline = None if config.time_budget is None else time.monotonic() + config.time_budget
    jobs = [(frame, features, tag, L, H, config, deadline) for tag in tags for L, H in pairs]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            runs = list(pool.map(_run_cell_job, jobs))
    else:
        runs = [_run_cell_job(j) for j in jobs]
    echo = config.echo() | {"models": list(tags), "pairs": [list(p) for p in pairs],
                            "features": features}
    return MetricsTable(runs, echo)


# ---------------------------------------------------------------- reports


def round3(x: float | None) -> str:
    """Three decimals, halves rounded up (away from zero), from the shortest repr."""
    if x is None:
        return "n/a"
    return str(Decimal(repr(float(x))).quantize(Decimal("0.001"), rounding=ROUND_HALF_UP))


def format_table(table: MetricsTable) -> str:
    horizons = sorted({r.H for r in table.runs})
    models = list(dict.fromkeys(r.model for r in table.runs))
    name_w = max([len("Model")] + [len(m) for m in models])
    col_w = 7
    head1 = f"{'Model':<{name_w}} | " + f"{'MAE':^{(col_w + 1) * len(horizons)}}| " + \
        f"{'MSE':^{(col_w + 1) * len(horizons)}}"
    hz = "".join(f"{h:>{col_w}} " for h in horizons)
    head2 = f"{'Prediction Length':<{name_w}} | {hz}| {hz}" if name_w >= 17 else \
        f"{'H':<{name_w}} | {hz}| {hz}"
    lines = [head1.rstrip(), head2.rstrip(), "-" * len(head2.rstrip())]
    for m in models:
        maes, mses = [], []
        for h in horizons:
            try:
                c = table.cell(m, h)
                maes.append(round3(c.mae_mean) if c.ok else "FAIL")
                mses.append(round3(c.mse_mean) if c.ok else "FAIL")
            except KeyError:
                maes.append("-")
                mses.append("-")
        row = f"{m:<{name_w}} | " + "".join(f"{v:>{col_w}} " for v in maes) + "| " + \
            "".join(f"{v:>{col_w}} " for v in mses)
        lines.append(row.rstrip())
    return "\n".join(lines) + "\n"


def emit_report(table: MetricsTable, out_dir: str | Path) -> list[Path]:
    """Write ``report.json``, ``table.txt`` and one forecast CSV per successful cell."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    p = out / "report.json"
    p.write_text(table.to_json())
    written.append(p)
    p = out / "table.txt"
    p.write_text(format_table(table))
    written.append(p)
    fc_dir = out / "forecasts"
    fc_dir.mkdir(exist_ok=True)
    for r in table.runs:
        if not r.ok:
            continue
        p = fc_dir / f"{r.model}_L{r.L}_H{r.H}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.DictWriter(fh, ["fold", "window", "date", "step", "truth", "pred"],
                               lineterminator="\n")
            w.writeheader()
            for row in r.forecasts:
                w.writerow({**row, "truth": repr(row["truth"]), "pred": repr(row["pred"])})
        written.append(p)
    return written
