"""Attention forecasters: encoder-decoder transformer, PatchTST and iTransformer."""

from __future__ import annotations

import numpy as np

from fxcast.models.attention import DecoderLayer, EncoderLayer
from fxcast.models.base import Dense, ForecastModel, ceil_div, check_heads, sinusoidal_encoding
from fxcast.numerics import Tensor, concat, reshape, swapaxes, transpose


def broadcast_queries(queries: Tensor, batch: int) -> Tensor:
    """[T, d] learned embeddings -> [B, T, d]."""
    return queries + Tensor(np.zeros((batch, 1, 1)))


class TransformerForecaster(ForecastModel):
    """Encoder over the input window; decoder over H learned query positions."""

    cam_target = "encoder.out"

    def __init__(self, config):
        super().__init__(config)
        c, hp = self.config, self.hp
        d = hp["d_model"]
        check_heads(d, hp["heads"], c.arch)
        self.embed = Dense(self, "embed", c.F, d)
        self.encoder = [EncoderLayer(self, f"enc.{i}", d, hp["heads"], hp["d_ff"])
                        for i in range(hp["enc_layers"])]
        self.queries = self.param("queries", (c.H, d), d)
        self.decoder = [DecoderLayer(self, f"dec.{i}", d, hp["heads"], hp["d_ff"])
                        for i in range(hp["dec_layers"])]
        self.head = Dense(self, "head", d, 1)
        self.pe = sinusoidal_encoding(c.L, d)

    def _forward(self, x: Tensor) -> Tensor:
        h = self.embed(x)
        if self.hp["positional"]:
            h = h + self.pe
        for layer in self.encoder:
            h = layer(h)
        self.activation = h
        q = broadcast_queries(self.queries, x.shape[0])
        for layer in self.decoder:
            q = layer(q, h)
        return self.head(q)[:, :, 0]


class PatchTSTForecaster(ForecastModel):
    """Channel-independent patch transformer with weights shared across series."""

    cam_target = "encoder.out"

    def __init__(self, config):
        super().__init__(config)
        c, hp = self.config, self.hp
        d, p = hp["d_model"], hp["patch"]
        check_heads(d, hp["heads"], c.arch)
        self.n_patches = ceil_div(c.L, p)
        self.pad = self.n_patches * p - c.L
        self.embed = Dense(self, "embed", p, d)
        self.pos = self.param("pos", (self.n_patches, d), d)
        self.encoder = [EncoderLayer(self, f"enc.{i}", d, hp["heads"], hp["d_ff"])
                        for i in range(hp["layers"])]
        self.head = Dense(self, "head", c.F * self.n_patches * d, c.H)
        self.channel_repr: Tensor | None = None

    def _forward(self, x: Tensor) -> Tensor:
        B, L, F = x.shape
        d, p, n = self.hp["d_model"], self.hp["patch"], self.n_patches
        series = swapaxes(x, 1, 2)  # [B, F, L]
        if self.pad:
            series = concat([series, Tensor(np.zeros((B, F, self.pad)))], axis=2)
        patches = reshape(series, (B * F, n, p))
        h = self.embed(patches) + self.pos
        for layer in self.encoder:
            h = layer(h)
        per_channel = reshape(h, (B, F, n, d))
        self.channel_repr = per_channel
        # time axis = patch index, channels = (feature, width)
        self.activation = reshape(transpose(per_channel, (0, 2, 1, 3)), (B, n, F * d))
        return self.head(reshape(per_channel, (B, F * n * d)))


class ITransformerForecaster(ForecastModel):
    """Inverted transformer: one token per input feature, attention across features."""

    cam_target = "encoder.out"

    def __init__(self, config):
        super().__init__(config)
        c, hp = self.config, self.hp
        d = hp["d_model"]
        check_heads(d, hp["heads"], c.arch)
        self.embed = Dense(self, "embed", c.L, d)
        n_layers = hp["blocks"] * hp["layers_per_block"]
        self.encoder = [EncoderLayer(self, f"enc.{i}", d, hp["heads"], hp["d_ff"])
                        for i in range(n_layers)]
        self.head = Dense(self, "head", d, c.H)
        self.tokens: Tensor | None = None

    def _forward(self, x: Tensor) -> Tensor:
        h = self.embed(swapaxes(x, 1, 2))  # [B, F, d]
        for layer in self.encoder:
            h = layer(h)
        self.tokens = h
        self.activation = None  # tokens are features, there is no time axis
        return self.head(h[:, self.config.target_channel, :])
