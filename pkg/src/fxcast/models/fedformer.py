"""Simplified frequency-filtered decomposition transformer (``fedformer_lite``).

This is not the published FEDformer: the seasonal part of a moving-average
decomposition passes through encoder layers whose mixing step projects each
channel onto its lowest ``modes`` Fourier frequencies before attention, a
small decoder refines H learned queries, and the trend of the target channel
is extrapolated with a least-squares line and added back.
"""

from __future__ import annotations

import numpy as np

from fxcast.models.attention import DecoderLayer, EncoderLayer
from fxcast.models.base import Dense, ForecastModel, check_heads, sinusoidal_encoding
from fxcast.models.transformers import broadcast_queries
from fxcast.numerics import Tensor, linear_map


def moving_average_matrix(L: int, window: int) -> np.ndarray:
    """[L, L] centred moving average with edge replication."""
    window = max(1, min(window, L))
    left = (window - 1) // 2
    m = np.zeros((L, L))
    for t in range(L):
        for j in range(t - left, t - left + window):
            m[t, min(max(j, 0), L - 1)] += 1.0 / window
    return m


def fourier_projection_matrix(L: int, modes: int) -> np.ndarray:
    """[L, L] real projection keeping DFT frequencies ``0 .. modes-1``.

    Built from the direct DFT sum; symmetric and idempotent.
    """
    t = np.arange(L)
    m = np.zeros((L, L))
    for k in range(min(modes, L // 2 + 1)):
        ang = 2 * np.pi * k * (t[:, None] - t[None, :]) / L
        weight = 1.0 if k == 0 or (L % 2 == 0 and k == L // 2) else 2.0
        m += weight * np.cos(ang) / L
    return m


def trend_extrapolation_matrix(L: int, H: int) -> np.ndarray:
    """[H, L] map from a length-L series to its least-squares line at t = L..L+H-1."""
    t = np.arange(L, dtype=float)
    A = np.column_stack([t, np.ones(L)])
    fut = np.column_stack([np.arange(L, L + H, dtype=float), np.ones(H)])
    return fut @ np.linalg.pinv(A)


class FEDformerLite(ForecastModel):
    cam_target = "encoder.out"

    def __init__(self, config):
        super().__init__(config)
        c, hp = self.config, self.hp
        d = hp["d_model"]
        check_heads(d, hp["heads"], c.arch)
        self.ma = moving_average_matrix(c.L, hp["ma_window"])
        self.fourier = fourier_projection_matrix(c.L, hp["modes"])
        self.extrap = trend_extrapolation_matrix(c.L, c.H)
        self.embed = Dense(self, "embed", c.F, d)
        self.encoder = [EncoderLayer(self, f"enc.{i}", d, hp["heads"], hp["d_ff"])
                        for i in range(hp["enc_layers"])]
        self.queries = self.param("queries", (c.H, d), d)
        self.decoder = [DecoderLayer(self, f"dec.{i}", d, hp["heads"], hp["d_ff"])
                        for i in range(hp["dec_layers"])]
        self.head = Dense(self, "head", d, 1)
        self.pe = sinusoidal_encoding(c.L, d)

    def decompose(self, x: Tensor) -> tuple[Tensor, Tensor]:
        trend = linear_map(x, self.ma, axis=1)
        return x - trend, trend

    def _forward(self, x: Tensor) -> Tensor:
        seasonal, trend = self.decompose(x)
        h = self.embed(seasonal) + self.pe
        for layer in self.encoder:
            h = layer(h, mixed=linear_map(h, self.fourier, axis=1))
        self.activation = h
        q = broadcast_queries(self.queries, x.shape[0])
        for layer in self.decoder:
            q = layer(q, h)
        season_fc = self.head(q)[:, :, 0]
        trend_fc = linear_map(trend[:, :, self.config.target_channel], self.extrap, axis=1)
        return season_fc + trend_fc
