"""Mechanisms for merging two per-view feature maps into one.

All five kinds first stack the source-view map on top of the binary-view map
(source first) into X of shape [2L, C], then differ in what they do with it:

    concat             Z = X
    attention          Z = Y * X              with Y = attention_map(X)
    highway            Z = highway(X)         per-channel gates, width C
    highway_attention  X' = highway(X);  Z = attention_map(X') * X'
    attention_highway  Y = attention_map(X);  Z = highway(Y) * X   (width-1 gate
                       refines the attention map before it scales the features)

The attention map is a per-position squeeze: channel average and max pooling,
a 1x1 convolution down to one channel, and a sigmoid, so every weight lies
strictly inside (0, 1).  The highway layer uses a coupled carry gate C = 1 - T.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor

FUSION_KINDS = ("concat", "attention", "highway", "highway_attention", "attention_highway")

_ATTENTION_KINDS = ("attention", "highway_attention", "attention_highway")
_HIGHWAY_KINDS = ("highway", "highway_attention", "attention_highway")


def concat_fuse(a: Tensor, b: Tensor) -> Tensor:
    """Stack the two view maps row-wise, source view first."""
    return T.concat_rows(a, b)


def attention_map(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Per-position spatial attention in (0, 1).

    Row t of the output is sigmoid(w . [mean_c x[t], max_c x[t]] + b); the
    1x1 convolution sees only that row's channel statistics, so each
    position's weight is independent of every other position.
    """
    pooled = T.channel_avg_max_pool(x)
    return T.sigmoid(T.conv1d(pooled, weight, bias, stride=1))


def highway(x: Tensor, wt: Tensor, bt: Tensor, wh: Tensor, bh: Tensor) -> Tensor:
    """Gated transform with coupled carry: T*H + x*(1 - T).

    Gates are elementwise with weights broadcast across positions; the
    operating width is the weight length (1 for a scalar-per-position gate,
    C for per-channel gates).  Driving bt towards -40 closes the transform
    gate and reduces the layer to the identity.
    """
    t_gate = T.sigmoid(x * wt + bt)
    h = T.tanh(x * wh + bh)
    return t_gate * h + x * (1.0 - t_gate)


def fuse(a: Tensor, b: Tensor, kind: str, params) -> Tensor:
    """Apply one fusion mechanism to a pair of [L, C] view maps."""
    if kind not in FUSION_KINDS:
        raise ConfigError(f"unknown fusion kind {kind!r}; known: {', '.join(FUSION_KINDS)}")
    if a.data.shape != b.data.shape:
        raise ShapeError(f"view maps must share a shape, got {a.data.shape} and {b.data.shape}")
    x = concat_fuse(a, b)
    if kind == "concat":
        return x
    if kind == "attention":
        return attention_map(x, params["att_w"], params["att_b"]) * x
    if kind == "highway":
        return highway(x, params["hw_wt"], params["hw_bt"], params["hw_wh"], params["hw_bh"])
    if kind == "highway_attention":
        hx = highway(x, params["hw_wt"], params["hw_bt"], params["hw_wh"], params["hw_bh"])
        return attention_map(hx, params["att_w"], params["att_b"]) * hx
    # attention_highway: the width-1 highway refines the attention map itself
    y = attention_map(x, params["att_w"], params["att_b"])
    return highway(y, params["hw_wt"], params["hw_bt"], params["hw_wh"], params["hw_bh"]) * x


def highway_width(kind: str, channels: int) -> int:
    return 1 if kind == "attention_highway" else channels


def init_fusion_params(kind: str, channels: int, rng: np.random.Generator) -> dict:
    """Fresh parameter tensors for one fusion kind, in a fixed creation order.

    The transform-gate bias starts at -1 so highway layers begin mostly in
    carry mode.
    """
    if kind not in FUSION_KINDS:
        raise ConfigError(f"unknown fusion kind {kind!r}; known: {', '.join(FUSION_KINDS)}")
    params: dict = {}
    if kind in _ATTENTION_KINDS:
        params["att_w"] = T.glorot_uniform(rng, (1, 1, 2), fan_in=2, fan_out=1)
        params["att_b"] = Tensor(np.zeros(1), requires_grad=True)
    if kind in _HIGHWAY_KINDS:
        w = highway_width(kind, channels)
        lim = math.sqrt(3.0)  # elementwise gains: fan_in = fan_out = 1
        params["hw_wt"] = Tensor(rng.uniform(-lim, lim, size=w), requires_grad=True)
        params["hw_bt"] = Tensor(np.full(w, -1.0), requires_grad=True)
        params["hw_wh"] = Tensor(rng.uniform(-lim, lim, size=w), requires_grad=True)
        params["hw_bh"] = Tensor(np.zeros(w), requires_grad=True)
    return params
