"""Fully connected forecaster over the flattened window."""

from __future__ import annotations

from fxcast.models.base import Dense, ForecastModel
from fxcast.numerics import Tensor, relu, reshape


class MLPForecaster(ForecastModel):
    cam_target = "hidden.last"

    def __init__(self, config):
        super().__init__(config)
        c = self.config
        sizes = (c.L * c.F,) + tuple(self.hp["hidden"])
        self.layers = [Dense(self, f"hidden.{i}", a, b) for i, (a, b) in enumerate(zip(sizes, sizes[1:]))]
        self.head = Dense(self, "head", sizes[-1], c.H)

    def _forward(self, x: Tensor) -> Tensor:
        B = x.shape[0]
        h = reshape(x, (B, -1))
        for layer in self.layers:
            h = relu(layer(h))
        self.activation = reshape(h, (B, 1, h.shape[-1]))
        return self.head(self.activation)[:, 0, :]
