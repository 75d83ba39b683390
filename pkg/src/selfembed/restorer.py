"""Restoration network: sparse Q -> dense R = R' + dR with N = r * n points."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .netblocks import (
    EdgeConvSpec,
    MlpSpec,
    edgeconv_forward,
    feature_extractor_forward,
    init_edgeconv,
    init_extractor,
    init_mlp,
    mlp_forward,
)

PREFIX = "R"


@dataclass
class RestoreResult:
    R: np.ndarray
    R_prime: np.ndarray
    delta_R: np.ndarray
    F_R: np.ndarray


def expand_spec(config):
    return EdgeConvSpec(config.C, config.r * config.C, config.k_conv)


def offset_spec_R(config):
    return MlpSpec((config.C + 3, config.C, 3))


def init_restorer(config, rng, dtype=np.float32):
    params = init_extractor(config.extractor_spec(), rng, f"{PREFIX}.extractor", dtype)
    params.update(init_edgeconv(expand_spec(config), rng, f"{PREFIX}.expand", dtype))
    params.update(init_mlp(offset_spec_R(config), rng, f"{PREFIX}.offset", dtype, zero_last=True))
    return params


def periodic_shuffle(expanded, r):
    """``(n, r*C) -> (n*r, C)``: element ``(i, s*C + c)`` moves to ``(i*r + s, c)``."""
    n, rc = expanded.shape
    if rc % r:
        raise ad.ShapeError(f"periodic_shuffle: {rc} channels not divisible by r={r}")
    return ad.reshape(expanded, (n * r, rc // r))


def inverse_periodic_shuffle(shuffled, r):
    """Inverse of :func:`periodic_shuffle` on plain arrays."""
    arr = np.asarray(shuffled)
    N, C = arr.shape
    if N % r:
        raise ValueError(f"inverse_periodic_shuffle: {N} rows not divisible by r={r}")
    return arr.reshape(N // r, r * C)


def replicate(Q, r):
    """``r`` consecutive copies of every row: row ``i*r + s`` is ``Q[i]``."""
    Q = Q if isinstance(Q, ad.Tensor) else ad.Tensor(Q)
    return ad.gather(Q, np.repeat(np.arange(Q.shape[0]), r))


def up_shuffle(F_Q, Q, r, params, config):
    """Expand features C -> rC with EdgeConv, shuffle to N rows and append the
    replicated coordinates; returns ``(R_prime, F_R)``."""
    if r < 1:
        raise ValueError("up_shuffle: r must be >= 1")
    F_Q = F_Q if isinstance(F_Q, ad.Tensor) else ad.Tensor(F_Q)
    Q = Q if isinstance(Q, ad.Tensor) else ad.Tensor(Q)
    if F_Q.shape[0] != Q.shape[0]:
        raise ad.ShapeError(f"up_shuffle: {F_Q.shape[0]} feature rows for {Q.shape[0]} points")
    expanded = edgeconv_forward(F_Q, expand_spec(config), params, f"{PREFIX}.expand")
    shuffled = periodic_shuffle(expanded, r)
    R_prime = replicate(Q, r)
    F_R = ad.concat([shuffled, R_prime], axis=1)
    return R_prime, F_R


def offset_generator_R(F_R, config, params):
    return mlp_forward(F_R, offset_spec_R(config), params, f"{PREFIX}.offset")


def restore_graph(Q, config, params):
    Q = Q if isinstance(Q, ad.Tensor) else ad.Tensor(Q)
    F_Q = feature_extractor_forward(Q, config.extractor_spec(), params, f"{PREFIX}.extractor")
    R_prime, F_R = up_shuffle(F_Q, Q, config.r, params, config)
    delta_R = offset_generator_R(F_R, config, params)
    R = ad.add(R_prime, delta_R)
    return {"R": R, "R_prime": R_prime, "delta_R": delta_R, "F_R": F_R}


def restore(Q, config, params):
    """Restore ``r * len(Q)`` points from the (self-embedded) sparse cloud ``Q``."""
    out = restore_graph(Q, config, params)
    return RestoreResult(
        R=out["R"].data,
        R_prime=out["R_prime"].data,
        delta_R=out["delta_R"].data,
        F_R=out["F_R"].data,
    )
