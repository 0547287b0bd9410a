"""Grad-CAM and input-gradient attribution maps over (time x feature)."""

from __future__ import annotations

import csv
import json
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from fxcast.errors import AttributionError
from fxcast.models import ForecastModel
from fxcast.numerics import Tape, Tensor

HORIZON_MEAN = "horizon_mean"

# Three-stop linear colormap: low, mid, high.
COLORMAP = ("#f7fbff", "#fdae61", "#a50026")


@dataclass
class Heatmap:
    values: np.ndarray  # [L, F] in [0, 1]
    feature_names: list[str]
    timestamps: list[str]
    reduction: str = HORIZON_MEAN
    method: str = "grad_cam"

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise AttributionError(f"heatmap must be 2-D, got shape {self.values.shape}")
        L, F = self.values.shape
        if len(self.feature_names) != F or len(self.timestamps) != L:
            raise AttributionError(
                f"heatmap {self.values.shape} does not match {len(self.timestamps)} timestamps "
                f"and {len(self.feature_names)} feature names")
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise AttributionError("heatmap values must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def column_mass(self) -> dict[str, float]:
        """Mean value per feature column."""
        return {n: float(v) for n, v in zip(self.feature_names, self.values.mean(axis=0))}


def max_normalize(m: np.ndarray) -> np.ndarray:
    top = float(np.max(m, initial=0.0))
    return m / top if top > 0.0 else np.zeros_like(m)


def _reduce(out: Tensor, reduction: str | int) -> Tensor:
    if reduction == HORIZON_MEAN:
        return out.mean()
    step = reduction
    if isinstance(step, str):
        if not step.startswith("step:"):
            raise AttributionError(f"unknown reduction {reduction!r}; use {HORIZON_MEAN!r} or 'step:<k>'")
        step = int(step[5:])
    H = out.shape[1]
    if not 0 <= step < H:
        raise AttributionError(f"forecast step {step} out of range for H={H}")
    return out[:, step].sum()


def _reduction_tag(reduction: str | int) -> str:
    return reduction if isinstance(reduction, str) else f"step:{reduction}"


@contextmanager
def _parameters_frozen(model: ForecastModel):
    # attribution needs input and activation gradients only
    flags = [p.requires_grad for p in model.parameters()]
    for p in model.parameters():
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(model.parameters(), flags):
            p.requires_grad = f


def _window(model: ForecastModel, window) -> np.ndarray:
    x = np.asarray(window, dtype=float)
    c = model.config
    if x.shape != (c.L, c.F):
        raise AttributionError(f"window must be [{c.L}, {c.F}], got {x.shape}")
    return x


def _labels(model, feature_names, timestamps) -> tuple[list[str], list[str]]:
    c = model.config
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(c.F)]
    if timestamps is None:
        stamps = [f"t-{c.L - 1 - t}" for t in range(c.L)]
    else:
        stamps = [str(s) for s in timestamps]
    return names, stamps


def _gradients(model: ForecastModel, x: np.ndarray, reduction, need_activation: bool):
    xt = Tensor(x[None], requires_grad=True)
    with _parameters_frozen(model):
        with Tape() as tape:
            out = model.forward(xt)
            act = model.activation
            if need_activation and act is None:
                raise AttributionError(
                    f"{model.config.arch}: layer {model.cam_target!r} has no time axis; "
                    "use input-gradient attribution instead")
            s = _reduce(out, reduction)
        if tape.owns(s):
            tape.backward(s)
    dx = xt.grad[0] if xt.grad is not None else np.zeros_like(x)
    if not need_activation:
        return dx, None, None
    dA = act.grad[0] if act.grad is not None else np.zeros(act.shape[1:])
    return dx, act.data[0], dA


def output_gradient(model: ForecastModel, window, reduction: str | int = HORIZON_MEAN) -> np.ndarray:
    """dS/dx for one [L, F] window, as used by both attribution methods."""
    dx, _, _ = _gradients(model, _window(model, window), reduction, need_activation=False)
    return dx


def interpolate_time(m: np.ndarray, L: int) -> np.ndarray:
    """Linear interpolation of a length-T' profile onto L evenly spaced steps."""
    T = len(m)
    if T == L:
        return m.copy()
    if T == 1:
        return np.full(L, m[0])
    return np.interp(np.linspace(0.0, T - 1, L), np.arange(T), m)


def grad_cam(model: ForecastModel, window, layer: str | None = None,
             reduction: str | int = HORIZON_MEAN, feature_names: Sequence[str] | None = None,
             timestamps: Sequence | None = None) -> Heatmap:
    """Grad-CAM time profile at ``model.cam_target`` modulated by input-gradient magnitude.

    With s the reduced output and A [T', K] the layer activation:
    alpha_k = mean_t dS/dA[t, k], m = ReLU(A @ alpha) interpolated to L steps,
    M[t, f] = m[t] * |dS/dx[t, f]|, then scaled so the maximum is 1.
    """
    if layer is not None and layer != model.cam_target:
        raise AttributionError(f"{model.config.arch} exposes only layer {model.cam_target!r}")
    x = _window(model, window)
    dx, A, dA = _gradients(model, x, reduction, need_activation=True)
    alpha = dA.mean(axis=0)
    coarse = np.maximum(A @ alpha, 0.0)
    m = interpolate_time(coarse, model.config.L)
    names, stamps = _labels(model, feature_names, timestamps)
    return Heatmap(max_normalize(m[:, None] * np.abs(dx)), names, stamps,
                   _reduction_tag(reduction), "grad_cam")


def input_gradient(model: ForecastModel, window, reduction: str | int = HORIZON_MEAN,
                   feature_names: Sequence[str] | None = None,
                   timestamps: Sequence | None = None) -> Heatmap:
    """Gradient-times-input map ``ReLU(x * dS/dx)``, scaled so the maximum is 1."""
    x = _window(model, window)
    dx, _, _ = _gradients(model, x, reduction, need_activation=False)
    names, stamps = _labels(model, feature_names, timestamps)
    return Heatmap(max_normalize(np.maximum(x * dx, 0.0)), names, stamps,
                   _reduction_tag(reduction), "input_gradient")


def aggregate_heatmaps(maps: Sequence[Heatmap]) -> Heatmap:
    """Elementwise mean of same-shaped maps, re-normalized to a maximum of 1.

    Timestamps are kept when every map shares them, otherwise replaced by
    lag labels relative to the window end.
    """
    if not maps:
        raise AttributionError("no heatmaps to aggregate")
    first = maps[0]
    for m in maps[1:]:
        if m.shape != first.shape or m.feature_names != first.feature_names:
            raise AttributionError(
                f"cannot aggregate heatmaps of shape {m.shape} and {first.shape} "
                "or with different feature names")
    mean = np.mean([m.values for m in maps], axis=0)
    if all(m.timestamps == first.timestamps for m in maps):
        stamps = list(first.timestamps)
    else:
        L = first.shape[0]
        stamps = [f"t-{L - 1 - t}" for t in range(L)]
    return Heatmap(max_normalize(mean), list(first.feature_names), stamps, first.reduction,
                   first.method)


# ---------------------------------------------------------------- rendering


def _hex_to_rgb(color: str) -> np.ndarray:
    return np.array([int(color[i : i + 2], 16) for i in (1, 3, 5)], dtype=float)


def colormap(v: float) -> str:
    """Linear interpolation through the three colormap stops; 0, 0.5 and 1 hit them exactly."""
    v = min(max(float(v), 0.0), 1.0)
    lo, mid, hi = (_hex_to_rgb(c) for c in COLORMAP)
    if v <= 0.5:
        a, b, u = lo, mid, v / 0.5
    else:
        a, b, u = mid, hi, (v - 0.5) / 0.5
    rgb = np.rint(a + (b - a) * u).astype(int)
    return "#" + "".join(f"{c:02x}" for c in rgb)


def write_heatmap_csv(hm: Heatmap, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time"] + list(hm.feature_names))
        for stamp, row in zip(hm.timestamps, hm.values):
            w.writerow([stamp] + [repr(float(v)) for v in row])


def read_heatmap_csv(path: str | Path, reduction: str = HORIZON_MEAN) -> Heatmap:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["time"]:
        raise AttributionError(f"{path}: not a heatmap CSV")
    names = rows[0][1:]
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]]).reshape(len(rows) - 1, len(names))
    return Heatmap(values, names, [r[0] for r in rows[1:]], reduction)


def heatmap_svg(hm: Heatmap, cell: int = 14, max_ticks: int = 16) -> str:
    """Standalone SVG: one rect per cell, features along x, time along y."""
    L, F = hm.shape
    left = 12 + 7 * max((len(s) for s in hm.timestamps), default=1)
    top = 12 + 7 * max((len(s) for s in hm.feature_names), default=1)
    width, height = left + F * cell + 10, top + L * cell + 10
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="10">']
    for j, name in enumerate(hm.feature_names):
        x = left + j * cell + cell / 2
        out.append(f'<text x="{x:g}" y="{top - 4}" transform="rotate(-90 {x:g} {top - 4})" '
                   f'dominant-baseline="middle">{escape(name)}</text>')
    step = max(1, -(-L // max_ticks))
    for t in range(0, L, step):
        y = top + t * cell + cell / 2
        out.append(f'<text x="{left - 4}" y="{y:g}" text-anchor="end" '
                   f'dominant-baseline="middle">{escape(hm.timestamps[t])}</text>')
    for t in range(L):
        for j in range(F):
            out.append(f'<rect class="cell" x="{left + j * cell}" y="{top + t * cell}" '
                       f'width="{cell}" height="{cell}" fill="{colormap(hm.values[t, j])}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_heatmap(hm: Heatmap, path: str | Path) -> list[Path]:
    """Write ``<path>.csv`` and ``<path>.svg``; returns both paths."""
    base = Path(path)
    if base.suffix in (".csv", ".svg"):
        base = base.with_suffix("")
    csv_path, svg_path = base.with_suffix(".csv"), base.with_suffix(".svg")
    write_heatmap_csv(hm, csv_path)
    svg_path.write_text(heatmap_svg(hm))
    return [csv_path, svg_path]


@dataclass
class ExplainRun:
    maps: list[Heatmap]
    aggregate: Heatmap
    window_indices: list[int]
    files: list[Path] = field(default_factory=list)


def explain_windows(model: ForecastModel, inputs: np.ndarray, indices: Sequence[int],
                    out_dir: str | Path, feature_names: Sequence[str] | None = None,
                    timestamps: Sequence[Sequence] | None = None, method: str = "grad_cam",
                    reduction: str | int = HORIZON_MEAN) -> ExplainRun:
    """Attribute each listed window, aggregate, and render everything under ``out_dir``.

    ``timestamps[k]`` labels the rows of window ``indices[k]``.  A
    ``heatmaps.json`` manifest lists the window indices and written files.
    """
    if method not in ("grad_cam", "input_gradient"):
        raise AttributionError(f"unknown attribution method {method!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    maps, files = [], []
    for k, i in enumerate(indices):
        stamps = timestamps[k] if timestamps is not None else None
        if method == "grad_cam":
            hm = grad_cam(model, inputs[i], reduction=reduction, feature_names=feature_names,
                          timestamps=stamps)
        else:
            hm = input_gradient(model, inputs[i], reduction, feature_names, stamps)
        maps.append(hm)
        files += render_heatmap(hm, out / f"window_{i}")
    agg = aggregate_heatmaps(maps)
    files += render_heatmap(agg, out / "aggregate")
    manifest = out / "heatmaps.json"
    manifest.write_text(json.dumps({
        "method": method, "reduction": _reduction_tag(reduction),
        "layer": model.cam_target, "windows": [int(i) for i in indices],
        "files": [p.name for p in files],
        "aggregate_column_mass": agg.column_mass(),
    }, indent=2, sort_keys=True) + "\n")
    files.append(manifest)
    return ExplainRun(maps, agg, [int(i) for i in indices], files)
