"""Joint end-to-end training of the embedding and restoration networks."""

from dataclasses import dataclass, field
import logging
import math

import numpy as np

from . import autodiff as ad
from .config import TrainConfig
from .embedder import embed, embed_graph, init_embedder
from .geometry import normalize_unit_sphere
from .losses import chamfer_value, metrics, total_loss
from .restorer import init_restorer, restore, restore_graph

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


class DivergenceError(RuntimeError):
    """Training produced a non-finite or exploding loss."""


@dataclass
class Checkpoint:
    config: TrainConfig
    params: dict
    adam: ad.AdamState
    epoch: int = 0
    log: list = field(default_factory=list)

    @property
    def param_list(self):
        return [self.params[k] for k in sorted(self.params)]


def init_model(config, dtype=np.float32):
    rng = np.random.default_rng(config.seed)
    params = init_embedder(config, rng, dtype)
    params.update(init_restorer(config, rng, dtype))
    return params


def new_checkpoint(config):
    params = init_model(config)
    adam = ad.AdamState([params[k] for k in sorted(params)])
    return Checkpoint(config=config, params=params, adam=adam)


def epoch_rng(seed, epoch):
    """Per-epoch generator, so a run can resume from (seed, epoch) alone."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(epoch)])


def augment(cloud, rng, scale_range=(0.8, 1.2), rotate=True, jitter_sigma=0.005, jitter_clip=0.015):
    """Random uniform scaling, rotation about the vertical (z) axis and
    clipped Gaussian per-point jitter."""
    pts = np.asarray(cloud, dtype=np.float64)
    s = rng.uniform(*scale_range)
    angle = rng.uniform(0.0, 2.0 * np.pi) if rotate else 0.0
    c, sn = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -sn, 0.0], [sn, c, 0.0], [0.0, 0.0, 1.0]])
    out = s * pts @ rot.T
    if jitter_sigma > 0:
        out = out + np.clip(rng.normal(0.0, jitter_sigma, pts.shape), -jitter_clip, jitter_clip)
    return out


def forward_loss(P, config, params):
    """One shape through E and R; returns ``(loss, parts, mean |dQ|)``."""
    emb = embed_graph(P, config, params)
    rest = restore_graph(emb["Q"], config, params)
    loss, parts = total_loss(P, emb["Q"], rest["R"], emb["delta_Q"], config.loss_weights())
    mean_dq = float(np.sqrt((emb["delta_Q"].data.astype(np.float64) ** 2).sum(axis=1)).mean())
    return loss, parts, mean_dq


def _prepare(cloud, config, rng):
    pts = augment(cloud, rng) if config.augment else np.asarray(cloud, dtype=np.float64)
    pts, _ = normalize_unit_sphere(pts)
    return pts.astype(np.float32)


def train(config, dataset, checkpoint=None, epochs=None, callback=None):
    """Train for ``config.epochs`` (or ``epochs``) more epochs.

    Each mini-batch averages per-shape gradients, accumulated in batch order,
    and takes a single Adam step over all parameters of both networks. Returns the
    checkpoint; its ``log`` gains one dict per epoch.
    """
    if len(dataset) == 0:
        raise ValueError("train: empty dataset")
    for i, shape in enumerate(dataset):
        if np.asarray(shape).shape != (config.N, 3):
            raise ValueError(f"train: shape {i} has {np.asarray(shape).shape}, expected ({config.N}, 3)")
    ckpt = checkpoint or new_checkpoint(config)
    params = ckpt.param_list
    total_epochs = config.epochs if epochs is None else epochs
    for _ in range(total_epochs):
        epoch = ckpt.epoch
        lr = config.lr_at(epoch)
        rng = epoch_rng(config.seed, epoch)
        order = rng.permutation(len(dataset))
        sums = {"total": 0.0, "shape": 0.0, "dist": 0.0, "conform": 0.0, "mean_dq": 0.0}
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            for p in params:
                p.grad = None
            for idx in batch:
                P = _prepare(dataset[idx], config, rng)
                loss, parts, mean_dq = forward_loss(P, config, ckpt.params)
                value = float(loss.data)
                if not math.isfinite(value) or abs(value) > DIVERGENCE_LIMIT:
                    raise DivergenceError(f"epoch {epoch}: loss {value} on shape {idx}")
                ad.backward(ad.scale(loss, 1.0 / len(batch)), params)
                sums["total"] += value
                sums["mean_dq"] += mean_dq
                for k, v in parts.items():
                    sums[k] += v
            ad.adam_step(params, [p.grad for p in params], ckpt.adam, lr)
        row = {"epoch": epoch, "lr": lr}
        row.update({k: v / len(dataset) for k, v in sums.items()})
        ckpt.log.append(row)
        ckpt.epoch += 1
        log.info("epoch %d lr %.2e loss %.6f cd %.6f dq %.2e", epoch, lr, row["total"], row["shape"], row["mean_dq"])
        if callback is not None:
            callback(ckpt, row)
    for p in params:
        p.grad = None
    return ckpt


def run_model(P, config, params, zero_offsets=False, perturb_rng=None):
    """Embed and restore one normalized cloud; returns ``(EmbedResult, R)``.

    ``zero_offsets`` restores from Q' instead of Q; ``perturb_rng`` restores
    from Q' plus row-permuted offsets.
    """
    P = np.asarray(P, dtype=np.float32)
    res = embed(P, config, params)
    if zero_offsets:
        source = res.Q_prime
    elif perturb_rng is not None:
        source = perturb_embedding(res, perturb_rng)
    else:
        source = res.Q
    return res, restore(source, config, params).R


def duplication_baseline(P, config):
    """R obtained with zero offsets everywhere: r copies of each FPS point."""
    from .geometry import farthest_point_sample

    P = np.asarray(P)
    idx = farthest_point_sample(P, P.shape[0] // config.r)
    return np.repeat(P[idx], config.r, axis=0)


def evaluate(checkpoint, dataset, with_emd=True):
    """Per-shape metrics of the restored clouds against the originals.

    Returns ``(reports, summary)`` where ``reports`` is a list of dicts with
    ``emd, hd, cd`` plus conformity diagnostics and ``summary`` averages them.
    """
    config, params = checkpoint.config, checkpoint.params
    reports = []
    for i, shape in enumerate(dataset):
        P = np.asarray(shape, dtype=np.float32)
        if P.shape[0] != config.N:
            raise ValueError(f"evaluate: shape {i} has {P.shape[0]} points, checkpoint expects {config.N}")
        res, R = run_model(P, config, params)
        P64, R64 = P.astype(np.float64), R.astype(np.float64)
        if with_emd:
            m = metrics(P64, R64)
            row = {"emd": m.emd, "hd": m.hd, "cd": m.cd}
        else:
            from .losses import hausdorff

            row = {"emd": float("nan"), "hd": hausdorff(P64, R64), "cd": chamfer_value(P64, R64)}
        dq = np.sqrt((res.delta_Q.astype(np.float64) ** 2).sum(axis=1))
        row.update(
            shape_id=i,
            mean_dq=float(dq.mean()),
            max_dq=float(dq.max()),
            cd_q_qprime=chamfer_value(res.Q, res.Q_prime),
            cd_baseline=chamfer_value(P64, duplication_baseline(P64, config)),
        )
        reports.append(row)
    keys = ("emd", "hd", "cd", "mean_dq", "max_dq", "cd_q_qprime", "cd_baseline")
    summary = {k: float(np.mean([r[k] for r in reports])) for k in keys}
    return reports, summary


def perturb_embedding(result, rng):
    """``Q' + dQ[perm]`` for a random row permutation that moves at least one
    row whenever there are two or more rows."""
    n = result.delta_Q.shape[0]
    perm = rng.permutation(n)
    while n > 1 and np.array_equal(perm, np.arange(n)):
        perm = rng.permutation(n)
    return result.Q_prime + result.delta_Q[perm]
