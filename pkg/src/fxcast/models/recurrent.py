"""Stacked LSTM forecaster."""

from __future__ import annotations

from fxcast.models.base import Dense, ForecastModel
from fxcast.numerics import Tensor, lstm_layer


class LSTMForecaster(ForecastModel):
    cam_target = "lstm.top"

    def __init__(self, config):
        super().__init__(config)
        c = self.config
        sizes = (c.F,) + tuple(self.hp["hidden"])
        self.cells = []
        for i, (n_in, hd) in enumerate(zip(sizes, sizes[1:])):
            wx = self.param(f"lstm.{i}.wx", (n_in, 4 * hd), hd)
            wh = self.param(f"lstm.{i}.wh", (hd, 4 * hd), hd)
            b = self.param(f"lstm.{i}.b", (4 * hd,), hd)
            self.cells.append((wx, wh, b))
        self.head = Dense(self, "head", sizes[-1], c.H)

    def _forward(self, x: Tensor) -> Tensor:
        h = x
        for wx, wh, b in self.cells:
            h = lstm_layer(h, wx, wh, b)
        self.activation = h
        return self.head(h[:, -1, :])
