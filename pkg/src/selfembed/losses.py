"""Training losses and evaluation metrics.

Differentiable losses take :class:`~selfembed.autodiff.Tensor` inputs (plain
arrays are treated as constants). Nearest-neighbour and sort selections are
made on the current values outside the graph; gradients then flow through the
selected pairs only.
"""

from dataclasses import dataclass
import math

import numpy as np

from . import autodiff as ad
from .assignment import auction, hungarian
from .geometry import as_cloud, knn, nearest_neighbor

EXACT_EMD_LIMIT = 1024


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 5.0
    beta: float = 2.0
    lam: float = 100.0
    tau: float = 1e-6
    m: int = 8
    shape_reduction: str = "sum"
    angle_floor: float = 1e-2

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.lam < 0:
            raise ValueError("LossWeights: alpha, beta and lam must be non-negative")
        if not self.tau > 0:
            raise ValueError("LossWeights: tau must be positive")
        if self.m < 1:
            raise ValueError("LossWeights: m must be >= 1")
        if self.shape_reduction not in ("sum", "mean"):
            raise ValueError("LossWeights: shape_reduction must be 'sum' or 'mean'")


@dataclass(frozen=True)
class MetricsReport:
    emd: float
    hd: float
    cd: float


def _t(x):
    return x if isinstance(x, ad.Tensor) else ad.Tensor(x)


def _check_nonempty(*clouds):
    for c in clouds:
        if c.shape[0] == 0:
            raise ValueError("empty point cloud")


def _distances(a, b):
    # sqrt has a zero adjoint at exactly zero, so coincident pairs contribute no NaNs
    return ad.sqrt(ad.sum(ad.square(ad.sub(a, b)), axis=-1))


# ---------------------------------------------------------------------------
# shape similarity

def chamfer(A, B, reduction="mean"):
    """Bidirectional closest-point distance between two clouds.

    ``sum``: plain sums of both directed terms. ``mean``: each directed term
    divided by the size of its source cloud.
    """
    A, B = _t(A), _t(B)
    _check_nonempty(A, B)
    if reduction not in ("sum", "mean"):
        raise ValueError(f"chamfer: unknown reduction {reduction!r}")
    ab, _ = nearest_neighbor(A.data, B.data)
    ba, _ = nearest_neighbor(B.data, A.data)
    d_ab = _distances(A, ad.gather(B, ab))
    d_ba = _distances(B, ad.gather(A, ba))
    if reduction == "sum":
        return ad.add(ad.sum(d_ab), ad.sum(d_ba))
    return ad.add(ad.mean(d_ab), ad.mean(d_ba))


def chamfer_value(A, B, reduction="mean"):
    return float(chamfer(np.asarray(A, dtype=np.float64), np.asarray(B, dtype=np.float64), reduction).data)


def hausdorff(A, B):
    """Symmetric Hausdorff distance."""
    A = as_cloud(A, "A").astype(np.float64)
    B = as_cloud(B, "B").astype(np.float64)
    _, d_ab = nearest_neighbor(A, B)
    _, d_ba = nearest_neighbor(B, A)
    return float(math.sqrt(max(d_ab.max(), d_ba.max())))


def emd(A, B, return_bound=False):
    """Mean matched distance under the optimal bijection between equal-size clouds.

    Exact (Hungarian) up to ``EXACT_EMD_LIMIT`` points; above that an auction
    solution is used and its bound on the excess mean distance is reported
    when ``return_bound`` is set (it is 0 for the exact path).
    """
    A = as_cloud(A, "A").astype(np.float64)
    B = as_cloud(B, "B").astype(np.float64)
    if A.shape[0] != B.shape[0]:
        raise ValueError(f"emd: size mismatch {A.shape[0]} vs {B.shape[0]}")
    n = A.shape[0]
    diff = A[:, None, :] - B[None, :, :]
    cost = np.sqrt((diff * diff).sum(axis=-1))
    if n <= EXACT_EMD_LIMIT:
        cols, bound = hungarian(cost), 0.0
    else:
        cols, bound = auction(cost)
    value = float(cost[np.arange(n), cols].sum() / n)
    if return_bound:
        return value, bound / n
    return value


def fixed_correspondence_error(P, R):
    """Mean distance between rows with the same index (needs identical ordering)."""
    P = np.asarray(P, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    if P.shape != R.shape:
        raise ValueError("fixed_correspondence_error: shapes differ")
    return float(np.sqrt(((P - R) ** 2).sum(axis=1)).mean())


def metrics(P, R):
    return MetricsReport(emd=emd(P, R), hd=hausdorff(P, R), cd=chamfer_value(P, R, "mean"))


# ---------------------------------------------------------------------------
# point distribution

def _neighbors_excluding_self(P, m):
    """``m`` nearest neighbours of each point of ``P`` in ``P`` minus the point itself."""
    N = P.shape[0]
    idx = knn(P, P, m + 1)
    keep = idx != np.arange(N)[:, None]
    # a row without its own index means m+1 duplicates at distance 0; drop the last
    no_self = keep.all(axis=1)
    keep[no_self, m] = False
    return idx[keep].reshape(N, m)


def distribution_loss(P, R, m=8, beta=2.0, exclude_self_in_r=False, angle_floor=1e-2, eps=1e-12):
    """Compare sorted local displacement vectors of each ``p_i`` in ``P`` and in ``R``.

    Per point, the ``m`` nearest neighbours in ``P`` (excluding ``p_i``) and in
    ``R`` give displacement vectors sorted by length; the loss averages the
    vector differences plus ``beta`` times ``1 - cos`` of corresponding pairs.
    ``exclude_self_in_r`` applies the same self-exclusion to ``R`` (only
    meaningful when ``R`` holds the points of ``P`` in the same order).

    In the cosine, lengths of R-side vectors are clamped below at
    ``angle_floor``: a restored point sitting on ``p_i`` has no direction, and
    an unclamped ``1/|v|`` gradient there swamps every other term.
    """
    P_arr = np.asarray(P.data if isinstance(P, ad.Tensor) else P)
    R = _t(R)
    N = P_arr.shape[0]
    if not 1 <= m < N or m > R.shape[0]:
        raise ValueError(f"distribution_loss: m={m} out of range for |P|={N}, |R|={R.shape[0]}")
    p64 = P_arr.astype(np.float64)
    nbr_p = _neighbors_excluding_self(p64, m)
    if exclude_self_in_r:
        nbr_r = _neighbors_excluding_self(np.asarray(R.data, dtype=np.float64), m)
    else:
        nbr_r = knn(p64, np.asarray(R.data, dtype=np.float64), m)
    centers = np.repeat(P_arr[:, None, :], m, axis=1).astype(R.dtype)
    v_p = (P_arr[nbr_p] - P_arr[:, None, :]).astype(R.dtype)
    v_r = ad.sub(ad.gather(R, nbr_r), centers)

    l_norm = ad.mean(_distances(v_r, v_p))
    dots = ad.sum(ad.mul(v_r, v_p), axis=-1)
    p_len = np.sqrt((v_p * v_p).sum(axis=-1) + eps)
    r_len = ad.clamp_min(ad.norm(v_r, axis=-1, eps=eps), angle_floor)
    # cos = dot / (|v_p| |v_r|); |v_p| is constant so fold it into the product
    inv = ad.mul(ad.Tensor(1.0 / p_len), ad.reciprocal(r_len))
    cos = ad.mul(dots, inv)
    l_angle = ad.sub(1.0, ad.mean(cos))
    return ad.add(l_norm, ad.scale(l_angle, beta))


# ---------------------------------------------------------------------------
# geometry conformity and total objective

def conformity_loss(delta_Q, tau=1e-6):
    """Mean over rows of ``max(0, |dq| - tau)``."""
    if not tau > 0:
        raise ValueError("conformity_loss: tau must be positive")
    dq = _t(delta_Q)
    lengths = ad.sqrt(ad.sum(ad.square(dq), axis=1))
    return ad.mean(ad.relu(ad.sub(lengths, tau)))


def total_loss(P, Q, R, delta_Q, weights=LossWeights()):
    """Restoration + conformity objective; returns ``(loss, components)``.

    ``components`` holds float values of ``shape``, ``dist`` and ``conform``.
    ``Q`` is accepted for symmetry with the model outputs; only its offsets
    enter the loss.
    """
    shape = chamfer(R, P, weights.shape_reduction)
    dist = distribution_loss(P, R, weights.m, weights.beta, angle_floor=weights.angle_floor)
    conform = conformity_loss(delta_Q, weights.tau)
    loss = ad.add(ad.add(shape, ad.scale(dist, weights.alpha)), ad.scale(conform, weights.lam))
    parts = {"shape": float(shape.data), "dist": float(dist.data), "conform": float(conform.data)}
    return loss, parts
