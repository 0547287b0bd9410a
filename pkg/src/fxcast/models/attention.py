"""Multi-head attention and post-norm transformer layers."""

from __future__ import annotations

from fxcast.models.base import Dense, FeedForward, ForecastModel, LayerNorm, check_heads, isqrt_scale
from fxcast.numerics import Tensor, attention, reshape, transpose


class MultiHeadAttention:
    def __init__(self, model: ForecastModel, name: str, d: int, heads: int):
        check_heads(d, heads, model.config.arch)
        self.model = model
        self.heads = heads
        self.dh = d // heads
        self.q = Dense(model, f"{name}.q", d, d)
        self.k = Dense(model, f"{name}.k", d, d)
        self.v = Dense(model, f"{name}.v", d, d)
        self.o = Dense(model, f"{name}.o", d, d)

    def _split(self, x: Tensor) -> Tensor:
        B, T, _ = x.shape
        return transpose(reshape(x, (B, T, self.heads, self.dh)), (0, 2, 1, 3))

    def __call__(self, query: Tensor, memory: Tensor) -> Tensor:
        B, Tq, d = query.shape
        q = self._split(self.q(query))
        k = self._split(self.k(memory))
        v = self._split(self.v(memory))
        ctx, weights = attention(q, k, v, isqrt_scale(self.dh))
        if self.model.keep_attention:
            self.model.attention_maps.append(weights)
        ctx = transpose(ctx, (0, 2, 1, 3))
        return self.o(reshape(ctx, (B, Tq, d)))


class EncoderLayer:
    def __init__(self, model: ForecastModel, name: str, d: int, heads: int, d_ff: int):
        self.attn = MultiHeadAttention(model, f"{name}.attn", d, heads)
        self.norm1 = LayerNorm(model, f"{name}.norm1", d)
        self.ff = FeedForward(model, f"{name}.ff", d, d_ff)
        self.norm2 = LayerNorm(model, f"{name}.norm2", d)

    def __call__(self, x: Tensor, mixed: Tensor | None = None) -> Tensor:
        src = x if mixed is None else mixed
        x = self.norm1(x + self.attn(src, src))
        return self.norm2(x + self.ff(x))


class DecoderLayer:
    def __init__(self, model: ForecastModel, name: str, d: int, heads: int, d_ff: int):
        self.self_attn = MultiHeadAttention(model, f"{name}.self", d, heads)
        self.norm1 = LayerNorm(model, f"{name}.norm1", d)
        self.cross_attn = MultiHeadAttention(model, f"{name}.cross", d, heads)
        self.norm2 = LayerNorm(model, f"{name}.norm2", d)
        self.ff = FeedForward(model, f"{name}.ff", d, d_ff)
        self.norm3 = LayerNorm(model, f"{name}.norm3", d)

    def __call__(self, q: Tensor, memory: Tensor) -> Tensor:
        q = self.norm1(q + self.self_attn(q, q))
        q = self.norm2(q + self.cross_attn(q, memory))
        return self.norm3(q + self.ff(q))
