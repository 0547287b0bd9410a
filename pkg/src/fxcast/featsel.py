"""Ridge regression and ridge-scored sequential forward feature selection."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from fxcast.data import SeriesFrame, make_windows, zscore_apply, zscore_fit
from fxcast.errors import DataError, DimensionError, NumericalError, ParameterError


@dataclass
class RidgeModel:
    weights: np.ndarray  # [f + 1], intercept last (0 when fitted without one)
    lam: float
    feature_names: list[str] = field(default_factory=list)
    fit_intercept: bool = True

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return X @ self.weights[:-1] + self.weights[-1]


def _normal_equations(X: np.ndarray, y: np.ndarray, lam: float, fit_intercept: bool):
    n, f = X.shape
    A = np.column_stack([X, np.ones(n)]) if fit_intercept else X
    G = A.T @ A
    pen = np.full(A.shape[1], lam)
    if fit_intercept:
        pen[-1] = 0.0
    G[np.diag_indices_from(G)] += pen
    return G, A.T @ y


def ridge_fit(X, y, lam: float, fit_intercept: bool = True,
              feature_names: Sequence[str] | None = None) -> RidgeModel:
    """Minimize ``||y - Xw - b||^2 + lam * ||w||^2`` (intercept ``b`` unpenalized).

    Solved through a Cholesky factorization of the normal equations with one
    round of iterative refinement.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise DimensionError(f"ridge_fit: X {X.shape} and y {y.shape} are incompatible")
    if X.shape[0] < 1:
        raise DataError("ridge_fit needs at least one sample")
    if lam < 0:
        raise ParameterError(f"lambda must be >= 0, got {lam}")
    G, rhs = _normal_equations(X, y, lam, fit_intercept)
    try:
        chol = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise NumericalError("normal equations are singular; use lambda > 0") from None
    diag = np.diag(chol)
    if diag.min() <= 1e-7 * diag.max():
        raise NumericalError("normal equations are numerically singular; use lambda > 0")

    def solve(b):
        z = np.linalg.solve(chol, b)
        return np.linalg.solve(chol.T, z)

    w = solve(rhs)
    w = w + solve(rhs - G @ w)
    if not fit_intercept:
        w = np.append(w, 0.0)
    names = list(feature_names) if feature_names is not None else []
    return RidgeModel(w, float(lam), names, fit_intercept)


def ridge_residual(model: RidgeModel, X, y) -> float:
    """Max-norm of ``(A'A + lam*D) w - A'y`` for the system ``model`` solved."""
    X = np.asarray(X, dtype=float)
    G, rhs = _normal_equations(X, np.asarray(y, dtype=float), model.lam, model.fit_intercept)
    w = model.weights if model.fit_intercept else model.weights[:-1]
    return float(np.max(np.abs(G @ w - rhs)))


# ---------------------------------------------------------------- wrapper


@dataclass(frozen=True)
class SelectionConfig:
    lam: float = 1.0
    L: int = 32
    H: int = 16
    max_features: int = 10
    patience: int = 2
    holdout: float = 0.2
    min_improvement: float = 0.01  # relative MAE drop that counts as progress

    def validate(self) -> None:
        if self.lam < 0:
            raise ParameterError("lambda must be >= 0")
        if self.max_features < 1 or self.patience < 1:
            raise ParameterError("max_features and patience must be >= 1")
        if not 0 < self.holdout < 1:
            raise ParameterError("holdout fraction must lie in (0, 1)")
        if self.min_improvement < 0:
            raise ParameterError("min_improvement must be >= 0")


@dataclass
class SelectionResult:
    selected: list[str]
    trace: list[float]
    lam: float
    baseline_mae: float = float("nan")

    def to_json(self) -> str:
        d = {"selected": self.selected, "trace": self.trace, "lambda": self.lam}
        return json.dumps(d, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SelectionResult":
        d = json.loads(text)
        return cls(list(d["selected"]), [float(v) for v in d["trace"]], float(d["lambda"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


class _Scorer:
    """Holds the normalized lag matrices so each candidate score is one ridge solve."""

    def __init__(self, frame: SeriesFrame, names: Sequence[str], cfg: SelectionConfig):
        try:
            probe = make_windows(frame, [frame.target_name], cfg.L, cfg.H)
        except DataError as exc:
            raise DataError(f"frame cannot be windowed for selection: {exc}") from None
        n = len(probe)
        n_val = max(1, int(round(n * cfg.holdout)))
        if n - n_val < 2:
            raise DataError(f"only {n} windows; too few for a {cfg.holdout:.0%} holdout")
        self.split = n - n_val
        stats = zscore_fit(frame, max(2, self.split + cfg.L))
        norm = zscore_apply(frame, stats)
        w = make_windows(norm, list(names), cfg.L, cfg.H)
        self.lags = {name: w.inputs[:, :, j] for j, name in enumerate(names)}
        self.y = w.targets.mean(axis=1)
        self.lam = cfg.lam

    def mae(self, subset: Sequence[str]) -> float:
        s = self.split
        if subset:
            X = np.concatenate([self.lags[c] for c in subset], axis=1)
        else:
            X = np.zeros((len(self.y), 0))
        model = ridge_fit(X[:s], self.y[:s], self.lam)
        return float(np.mean(np.abs(model.predict(X[s:]) - self.y[s:])))


def wrapper_select(frame: SeriesFrame, candidates: Sequence[str],
                   config: SelectionConfig = SelectionConfig()) -> SelectionResult:
    """Sequential forward selection scored by chronological-holdout ridge MAE.

    Each step adds the candidate giving the lowest holdout MAE (first in
    candidate order on ties).  The search stops at ``max_features`` or after
    ``patience`` consecutive steps that fail to lower the best MAE so far by
    the relative margin ``min_improvement`` (the intercept-only model is the
    starting reference).  The returned subset is
    the prefix ending at the best step, never empty.
    """
    config.validate()
    if not candidates:
        raise ParameterError("no candidate features given")
    if len(set(candidates)) != len(candidates):
        raise ParameterError("duplicate candidate names")
    for c in candidates:
        frame.column(c)
    scorer = _Scorer(frame, candidates, config)
    best = scorer.mae([])
    baseline = best
    chosen: list[str] = []
    trace: list[float] = []
    best_len = 0
    stale = 0
    remaining = list(candidates)
    while remaining and len(chosen) < config.max_features:
        scores = [scorer.mae(chosen + [c]) for c in remaining]
        k = int(np.argmin(scores))
        chosen.append(remaining.pop(k))
        trace.append(scores[k])
        if scores[k] < best * (1.0 - config.min_improvement):
            best, best_len, stale = scores[k], len(chosen), 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return SelectionResult(chosen[: max(best_len, 1)], trace, config.lam, baseline)


def single_feature_scores(frame: SeriesFrame, candidates: Sequence[str],
                          config: SelectionConfig = SelectionConfig()) -> dict[str, float]:
    """Holdout ridge MAE of each candidate used alone."""
    config.validate()
    scorer = _Scorer(frame, candidates, config)
    return {c: scorer.mae([c]) for c in candidates}

