"""Shared network blocks built on :mod:`selfembed.autodiff`.

Parameters live in flat ``{name: Tensor}`` dicts; every ``init_*`` function
takes a name prefix and a numpy ``Generator`` and every ``*_forward`` takes
the dict back. Forward functions accept :class:`Tensor` inputs (to keep the
graph) or plain arrays.
"""

from dataclasses import dataclass
import math

import numpy as np

from . import autodiff as ad
from .geometry import feature_knn


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths including the input width, e.g. ``(4, 8, 3)``."""

    widths: tuple

    def __post_init__(self):
        if len(self.widths) < 2 or any(int(w) < 1 for w in self.widths):
            raise ValueError(f"MlpSpec: need >= 2 positive widths, got {self.widths}")


@dataclass(frozen=True)
class EdgeConvSpec:
    in_channels: int
    out_channels: int
    k_conv: int = 8
    hidden: tuple = ()

    def __post_init__(self):
        if self.k_conv < 1:
            raise ValueError("EdgeConvSpec: k_conv must be >= 1")


@dataclass(frozen=True)
class ExtractorSpec:
    out_channels: int = 32
    n_blocks: int = 3
    block_channels: tuple = (24, 24, 24)
    dense: bool = True
    k_conv: int = 8
    in_channels: int = 3

    def __post_init__(self):
        if len(self.block_channels) != self.n_blocks:
            raise ValueError("ExtractorSpec: block_channels must list one width per block")

    def block_specs(self):
        specs, width, total = [], self.in_channels, self.in_channels
        for ch in self.block_channels:
            cin = total if self.dense else width
            specs.append(EdgeConvSpec(cin, ch, self.k_conv))
            width = ch
            total += ch
        head_in = total if self.dense else width
        return specs, MlpSpec((head_in, self.out_channels))


def _he(rng, fan_in, fan_out, dtype):
    return (rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)).astype(dtype)


# ---------------------------------------------------------------------------
# MLP

def init_mlp(spec, rng, prefix, dtype=np.float32, zero_last=False, gain=1.0):
    params = {}
    w = spec.widths
    for layer in range(len(w) - 1):
        last = layer == len(w) - 2
        if last and zero_last:
            W = np.zeros((w[layer], w[layer + 1]), dtype=dtype)
        elif last:
            W = (_he(rng, w[layer], w[layer + 1], np.float64) * gain / math.sqrt(2.0)).astype(dtype)
        else:
            W = _he(rng, w[layer], w[layer + 1], dtype)
        params[f"{prefix}.{layer}.weight"] = ad.Tensor(W, requires_grad=True)
        params[f"{prefix}.{layer}.bias"] = ad.Tensor(np.zeros(w[layer + 1], dtype=dtype), requires_grad=True)
    return params


def mlp_forward(x, spec, params, prefix, final_activation=False):
    """Row-wise MLP over the last axis: ReLU between layers, linear output
    unless ``final_activation`` is set."""
    h = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
    n_layers = len(spec.widths) - 1
    if h.shape[-1] != spec.widths[0]:
        raise ad.ShapeError(f"mlp_forward: input width {h.shape[-1]} != {spec.widths[0]}")
    for layer in range(n_layers):
        h = ad.linear(h, params[f"{prefix}.{layer}.weight"], params[f"{prefix}.{layer}.bias"])
        if layer < n_layers - 1 or final_activation:
            h = ad.relu(h)
    return h


# ---------------------------------------------------------------------------
# EdgeConv

def init_edgeconv(spec, rng, prefix, dtype=np.float32):
    widths = (2 * spec.in_channels,) + tuple(spec.hidden) + (spec.out_channels,)
    # the last layer is followed by a ReLU too, so it keeps full He scaling
    return init_mlp(MlpSpec(widths), rng, prefix, dtype, gain=math.sqrt(2.0))


def edgeconv_forward(features, spec, params, prefix, neighbors=None):
    """Dynamic-graph EdgeConv: ``out_i = max_j h([f_i ; f_j - f_i])``.

    ``j`` ranges over the ``k_conv`` nearest rows of ``features`` in feature
    space (the row itself included), recomputed from the current values
    unless ``neighbors`` is given. ``h`` is an MLP with ReLU after every layer.
    """
    f = features if isinstance(features, ad.Tensor) else ad.Tensor(features)
    M, C = f.shape
    if C != spec.in_channels:
        raise ad.ShapeError(f"edgeconv_forward: expected {spec.in_channels} channels, got {C}")
    if spec.k_conv > M:
        raise ValueError(f"edgeconv_forward: k_conv={spec.k_conv} exceeds point count {M}")
    if neighbors is None:
        neighbors = feature_knn(f.data, spec.k_conv)
    centers = np.repeat(np.arange(M)[:, None], spec.k_conv, axis=1)

    W = params[f"{prefix}.0.weight"]
    b = params[f"{prefix}.0.bias"]
    # W [f_i; f_j - f_i] = (W_top - W_bot) f_i + W_bot f_j, evaluated per point before gathering
    w_top = ad.gather(W, np.arange(C))
    w_bot = ad.gather(W, np.arange(C, 2 * C))
    own = ad.linear(f, ad.sub(w_top, w_bot), b)
    other = ad.linear(f, w_bot)
    h = ad.add(ad.gather(own, centers), ad.gather(other, neighbors))
    h = ad.relu(h)
    n_layers = len(spec.hidden) + 1
    for layer in range(1, n_layers):
        h = ad.relu(ad.linear(h, params[f"{prefix}.{layer}.weight"], params[f"{prefix}.{layer}.bias"]))
    return ad.max(h, axis=1)


# ---------------------------------------------------------------------------
# feature extractor

def init_extractor(spec, rng, prefix, dtype=np.float32):
    blocks, head = spec.block_specs()
    params = {}
    for i, bs in enumerate(blocks):
        params.update(init_edgeconv(bs, rng, f"{prefix}.block{i}", dtype))
    params.update(init_mlp(head, rng, f"{prefix}.head", dtype))
    return params


def feature_extractor_forward(points, spec, params, prefix):
    """Stack of EdgeConv blocks on raw xyz with optional dense skips, then a
    per-point linear projection to ``spec.out_channels``."""
    x = points if isinstance(points, ad.Tensor) else ad.Tensor(points)
    blocks, head = spec.block_specs()
    feats = [x]
    cur = x
    for i, bs in enumerate(blocks):
        inp = ad.concat(feats, axis=1) if spec.dense and len(feats) > 1 else cur
        cur = edgeconv_forward(inp, bs, params, f"{prefix}.block{i}")
        feats.append(cur)
    top = ad.concat(feats, axis=1) if spec.dense else cur
    return mlp_forward(top, head, params, f"{prefix}.head")


# ---------------------------------------------------------------------------
# neighbourhood self-attention

def init_attention(in_channels, out_channels, rng, prefix, dtype=np.float32):
    params = {}
    for name in ("theta", "phi", "gamma"):
        W = (rng.standard_normal((in_channels, out_channels)) / math.sqrt(in_channels)).astype(dtype)
        params[f"{prefix}.{name}.weight"] = ad.Tensor(W, requires_grad=True)
        params[f"{prefix}.{name}.bias"] = ad.Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)
    return params


def neighborhood_self_attention(group_features, params, prefix, return_weights=False):
    """Aggregate ``(n, K, C)`` neighbourhood features into ``(n, C')``.

    Within each group, query ``j`` attends to every key ``k`` with weight
    ``softmax_k(phi(f_k) . theta(f_j) / sqrt(C'))``; the attended values
    ``gamma(f)`` are then averaged over the K queries.
    """
    g = group_features if isinstance(group_features, ad.Tensor) else ad.Tensor(group_features)
    if g.ndim != 3:
        raise ad.ShapeError(f"neighborhood_self_attention: expected (n, K, C), got {g.shape}")

    def proj(name):
        return ad.linear(g, params[f"{prefix}.{name}.weight"], params[f"{prefix}.{name}.bias"])

    queries, keys, values = proj("theta"), proj("phi"), proj("gamma")
    c_out = values.shape[-1]
    logits = ad.scale(ad.matmul(queries, ad.transpose(keys, (0, 2, 1))), 1.0 / math.sqrt(c_out))
    weights = ad.softmax(logits, axis=2)
    out = ad.mean(ad.matmul(weights, values), axis=1)
    if return_weights:
        return out, weights
    return out
