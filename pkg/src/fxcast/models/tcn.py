"""Temporal convolutional network: residual blocks of causal dilated convolutions."""

from __future__ import annotations

from fxcast.errors import ConfigError
from fxcast.models.base import Dense, ForecastModel
from fxcast.numerics import Tensor, conv1d_causal, linear, relu


class TCNForecaster(ForecastModel):
    cam_target = "block.last"

    def __init__(self, config):
        super().__init__(config)
        c = self.config
        kernels, dilations = tuple(self.hp["kernels"]), tuple(self.hp["dilations"])
        if len(kernels) != len(dilations):
            raise ConfigError("tcn: kernels and dilations must have equal length")
        ch = self.hp["channels"]
        self.blocks = []
        n_in = c.F
        for i, (k, d) in enumerate(zip(kernels, dilations)):
            kern = self.param(f"block.{i}.kernel", (k, n_in, ch), k * n_in)
            bias = self.param(f"block.{i}.bias", (ch,), k * n_in)
            skip = self.param(f"block.{i}.skip", (n_in, ch), n_in) if n_in != ch else None
            self.blocks.append((kern, bias, skip, d))
            n_in = ch
        self.head = Dense(self, "head", ch, c.H)

    @property
    def receptive_field(self) -> int:
        return 1 + sum((kern.shape[0] - 1) * d for kern, _, _, d in self.blocks)

    def _forward(self, x: Tensor) -> Tensor:
        h = x
        for kern, bias, skip, d in self.blocks:
            res = h if skip is None else linear(h, skip)
            h = relu(conv1d_causal(h, kern, d) + bias) + res
        self.activation = h
        return self.head(h[:, -1, :])
