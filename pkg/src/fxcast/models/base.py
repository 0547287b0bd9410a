"""Model configuration, the common forecaster interface and shared layers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from fxcast.errors import ConfigError, DimensionError
from fxcast.numerics import Tensor, as_tensor, layer_norm, linear, relu
from fxcast.numerics.init import ones, uniform_fan_in, zeros

ARCHITECTURES = (
    "mlp", "lstm", "tcn", "tsmixer", "transformer", "patchtst", "itransformer", "fedformer_lite",
)

# Sizes stated for each architecture; widths the source leaves open are
# filled in (tcn channels, patchtst/itransformer width, feed-forward sizes
# of patchtst/itransformer, tsmixer time-mixing width).
FULL_HPARAMS: dict[str, dict[str, Any]] = {
    "mlp": {"hidden": (128, 128, 128)},
    "lstm": {"hidden": (32, 64, 64)},
    "tcn": {"channels": 64, "kernels": (3, 3, 5), "dilations": (2, 2, 2)},
    "tsmixer": {"blocks": 5, "width": 16, "ff_hidden": 16, "time_hidden": None},
    "transformer": {"d_model": 512, "heads": 8, "enc_layers": 6, "dec_layers": 6, "d_ff": 2048,
                    "positional": True},
    "patchtst": {"d_model": 128, "heads": 8, "layers": 6, "d_ff": 256, "patch": 12},
    "itransformer": {"d_model": 128, "heads": 8, "blocks": 4, "layers_per_block": 2, "d_ff": 256},
    "fedformer_lite": {"d_model": 256, "heads": 8, "enc_layers": 3, "dec_layers": 2, "d_ff": 512,
                       "modes": 8, "ma_window": 25},
}


def toy_hparams(arch: str, width: int = 8) -> dict[str, Any]:
    """Full-size depths with every width capped at ``width`` (desk-scale runs).

    Attention widths are rounded up to a multiple of the head count.
    """
    if arch not in FULL_HPARAMS:
        raise ConfigError(f"unknown architecture {arch!r}")
    w = width
    # attention widths stay divisible by the full-size head count
    heads = FULL_HPARAMS[arch].get("heads", 1)
    d = heads * ceil_div(w, heads)
    return {
        "mlp": {"hidden": (w, w, w)},
        "lstm": {"hidden": (max(1, w // 2), w, w)},
        "tcn": {"channels": w},
        "tsmixer": {"width": min(16, w), "ff_hidden": min(16, w)},
        "transformer": {"d_model": d, "d_ff": 2 * d},
        "patchtst": {"d_model": d, "d_ff": 2 * d},
        "itransformer": {"d_model": d, "d_ff": 2 * d},
        "fedformer_lite": {"d_model": d, "d_ff": 2 * d},
    }[arch]


@dataclass
class ModelConfig:
    arch: str
    L: int
    H: int
    F: int
    seed: int = 0
    target_channel: int = 0
    hparams: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.arch!r}; expected one of {ARCHITECTURES}")
        if min(self.L, self.H, self.F) < 1:
            raise ConfigError(f"L, H, F must be >= 1, got L={self.L}, H={self.H}, F={self.F}")
        if not 0 <= self.target_channel < self.F:
            raise ConfigError(f"target_channel {self.target_channel} out of range for F={self.F}")
        unknown = set(self.hparams) - set(FULL_HPARAMS[self.arch])
        if unknown:
            raise ConfigError(f"{self.arch}: unknown hyperparameters {sorted(unknown)}")
        for k, v in self.resolved().items():
            vals = v if isinstance(v, (tuple, list)) else (v,)
            if any(isinstance(x, (int, float)) and not isinstance(x, bool) and x <= 0 for x in vals):
                raise ConfigError(f"{self.arch}: hyperparameter {k}={v!r} must be positive")

    def resolved(self) -> dict[str, Any]:
        out = dict(FULL_HPARAMS[self.arch])
        out.update(self.hparams)
        return out

    def to_dict(self) -> dict[str, Any]:
        hp = {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(self.hparams.items())}
        return {"arch": self.arch, "L": self.L, "H": self.H, "F": self.F, "seed": self.seed,
                "target_channel": self.target_channel, "hparams": hp}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        hp = {k: tuple(v) if isinstance(v, list) else v for k, v in d.get("hparams", {}).items()}
        return cls(d["arch"], int(d["L"]), int(d["H"]), int(d["F"]), int(d.get("seed", 0)),
                   int(d.get("target_channel", 0)), hp)


class ForecastModel:
    """Maps a normalized window ``[B, L, F]`` to a target forecast ``[B, H]``.

    Subclasses create parameters in ``__init__`` through :meth:`param` (the
    creation order fixes the seeded initialization) and implement
    :meth:`_forward`.  During a forward pass they store the activation named
    by ``cam_target`` in ``self.activation`` as ``[B, T', K]`` (or ``None`` when
    the layer has no time axis).
    """

    cam_target: str = ""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.hp = config.resolved()
        self.params: dict[str, Tensor] = {}
        self.rng = np.random.default_rng(config.seed)
        self.activation: Tensor | None = None
        self.keep_attention = False
        self.attention_maps: list[np.ndarray] = []

    # -- parameters -------------------------------------------------------
    def param(self, name: str, shape: tuple[int, ...], fan_in: int) -> Tensor:
        if name in self.params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = uniform_fan_in(self.rng, shape, fan_in, name=name)
        self.params[name] = t
        return t

    def const_param(self, name: str, shape: tuple[int, ...], value: float) -> Tensor:
        t = ones(shape, name) if value == 1.0 else zeros(shape, name)
        self.params[name] = t
        return t

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise ConfigError("state dict keys do not match model parameters")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise DimensionError(f"parameter {k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    # -- forward ----------------------------------------------------------
    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        c = self.config
        if x.ndim == 2:
            x = x.reshape(1, *x.shape)
        if x.ndim != 3 or x.shape[1:] != (c.L, c.F):
            raise DimensionError(f"{c.arch}: expected input [B, {c.L}, {c.F}], got {x.shape}")
        self.attention_maps = []
        out = self._forward(x)
        if out.shape != (x.shape[0], c.H):
            raise DimensionError(f"{c.arch}: produced {out.shape}, expected {(x.shape[0], c.H)}")
        return out

    __call__ = forward

    def predict(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Tape-free forward in batches; returns a plain array."""
        x = np.asarray(x, dtype=np.float64)
        outs = [self.forward(Tensor(x[i : i + batch_size])).data for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0) if outs else np.zeros((0, self.config.H))

    def _forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError


# ------------------------------------------------------------------ layers


class Dense:
    def __init__(self, model: ForecastModel, name: str, n_in: int, n_out: int, bias: bool = True):
        self.w = model.param(f"{name}.w", (n_in, n_out), n_in)
        self.b = model.param(f"{name}.b", (n_out,), n_in) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.w, self.b)


class LayerNorm:
    def __init__(self, model: ForecastModel, name: str, d: int):
        self.g = model.const_param(f"{name}.g", (d,), 1.0)
        self.b = model.const_param(f"{name}.b", (d,), 0.0)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.g, self.b, eps=1e-5)


class FeedForward:
    def __init__(self, model: ForecastModel, name: str, d: int, d_ff: int):
        self.up = Dense(model, f"{name}.up", d, d_ff)
        self.down = Dense(model, f"{name}.down", d_ff, d)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(relu(self.up(x)))


def sinusoidal_encoding(T: int, d: int) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def check_heads(d_model: int, heads: int, arch: str) -> None:
    if d_model % heads:
        raise ConfigError(f"{arch}: d_model {d_model} not divisible by {heads} heads")


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def isqrt_scale(dh: int) -> float:
    return 1.0 / math.sqrt(dh)
