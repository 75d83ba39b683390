"""Self-embedding network: dense cloud P -> sparse cloud Q = Q' + dQ.

Q' is plain farthest point sampling of P and never depends on learned
parameters; the network only contributes the small offsets dQ.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .geometry import farthest_point_sample, knn
from .netblocks import (
    MlpSpec,
    feature_extractor_forward,
    init_attention,
    init_extractor,
    init_mlp,
    mlp_forward,
    neighborhood_self_attention,
)

PREFIX = "E"


@dataclass
class EmbedResult:
    Q: np.ndarray
    Q_prime: np.ndarray
    delta_Q: np.ndarray
    F_E: np.ndarray
    fps_indices: np.ndarray


def offset_spec_E(config):
    return MlpSpec((config.C_prime, max(1, config.C_prime // 2), 3))


def init_embedder(config, rng, dtype=np.float32):
    params = init_extractor(config.extractor_spec(), rng, f"{PREFIX}.extractor", dtype)
    params.update(init_attention(config.C, config.C_prime, rng, f"{PREFIX}.attn", dtype))
    params.update(init_mlp(offset_spec_E(config), rng, f"{PREFIX}.offset", dtype, zero_last=True))
    return params


def down_shuffle(P, F_P, n, K, params, start_index=0, return_groups=False):
    """Sample ``n`` points by FPS and aggregate the features of each one's K
    nearest neighbours in the full cloud into one embedded feature row.

    Returns ``(Q_prime, F_E)`` (plus FPS and group indices on request).
    """
    P_arr = np.asarray(P.data if isinstance(P, ad.Tensor) else P)
    N = P_arr.shape[0]
    if not n <= N:
        raise ValueError(f"down_shuffle: n={n} exceeds N={N}")
    # n == N is the degenerate full sample where every point is its own group
    if not ((K * n > N or n == N) and 1 <= K <= N):
        raise ValueError(f"down_shuffle: need N/n < K <= N, got K={K}, N={N}, n={n}")
    fps_idx = farthest_point_sample(P_arr, n, start_index)
    Q_prime = P_arr[fps_idx]
    groups = knn(Q_prime, P_arr, K)
    F_E = neighborhood_self_attention(ad.gather(F_P, groups), params, f"{PREFIX}.attn")
    if return_groups:
        return Q_prime, F_E, fps_idx, groups
    return Q_prime, F_E


def offset_generator_E(F_E, config, params):
    return mlp_forward(F_E, offset_spec_E(config), params, f"{PREFIX}.offset")


def embed_graph(P, config, params):
    """Differentiable forward pass; returns tensors ``(Q, delta_Q, F_E)`` and
    arrays ``(Q_prime, fps_indices)`` in a dict."""
    P_arr = np.asarray(P)
    N = P_arr.shape[0]
    if N % config.r:
        raise ValueError(f"embed: point count {N} is not divisible by r={config.r}")
    n = N // config.r
    F_P = feature_extractor_forward(P_arr, config.extractor_spec(), params, f"{PREFIX}.extractor")
    Q_prime, F_E, fps_idx, _ = down_shuffle(P_arr, F_P, n, config.K, params, return_groups=True)
    delta_Q = offset_generator_E(F_E, config, params)
    Q = ad.add(ad.Tensor(Q_prime), delta_Q)
    return {"Q": Q, "delta_Q": delta_Q, "F_E": F_E, "Q_prime": Q_prime, "fps_indices": fps_idx}


def embed(P, config, params):
    """Embed ``P`` (``N x 3``, N divisible by ``config.r``) into ``N / r`` points."""
    out = embed_graph(P, config, params)
    return EmbedResult(
        Q=out["Q"].data,
        Q_prime=out["Q_prime"],
        delta_Q=out["delta_Q"].data,
        F_E=out["F_E"].data,
        fps_indices=out["fps_indices"],
    )
