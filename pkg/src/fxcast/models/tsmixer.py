"""MLP-mixer forecaster alternating time mixing and feature mixing."""

from __future__ import annotations

from fxcast.models.base import Dense, FeedForward, ForecastModel, LayerNorm
from fxcast.numerics import Tensor, relu, reshape, swapaxes


class MixerBlock:
    def __init__(self, model: ForecastModel, name: str, L: int, width: int, time_hidden: int,
                 ff_hidden: int):
        self.time_up = Dense(model, f"{name}.time.up", L, time_hidden)
        self.time_down = Dense(model, f"{name}.time.down", time_hidden, L)
        self.norm1 = LayerNorm(model, f"{name}.norm1", width)
        self.feat = FeedForward(model, f"{name}.feat", width, ff_hidden)
        self.norm2 = LayerNorm(model, f"{name}.norm2", width)

    def __call__(self, x: Tensor) -> Tensor:
        # x: [B, L, width]; time mixing runs along L for each channel
        t = swapaxes(x, 1, 2)
        t = self.time_down(relu(self.time_up(t)))
        x = self.norm1(x + swapaxes(t, 1, 2))
        return self.norm2(x + self.feat(x))


class TSMixerForecaster(ForecastModel):
    cam_target = "mixer.last"

    def __init__(self, config):
        super().__init__(config)
        c, hp = self.config, self.hp
        width = hp["width"]
        ff = min(hp["ff_hidden"], 16)
        time_hidden = hp["time_hidden"] or c.L
        self.proj = Dense(self, "proj", c.F, width)
        self.blocks = [MixerBlock(self, f"mixer.{i}", c.L, width, time_hidden, ff)
                       for i in range(hp["blocks"])]
        self.head = Dense(self, "head", c.L * width, c.H)

    def _forward(self, x: Tensor) -> Tensor:
        h = self.proj(x)
        for block in self.blocks:
            h = block(h)
        self.activation = h
        return self.head(reshape(h, (h.shape[0], -1)))
