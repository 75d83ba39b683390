"""Command-line interface: ``selfembed <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

import argparse
import csv
import json
import logging
from pathlib import Path
import sys

import numpy as np

from .config import ConfigError, ToyDatasetSpec, TrainConfig
from .geometry import (
    InvalidInputError,
    NormalizationTransform,
    farthest_point_sample,
    nearest_neighbor,
    normalize_unit_sphere,
    split_patches,
)
from .io import CloudParseError, list_clouds, parse_cloud, write_cloud

log = logging.getLogger("selfembed")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(message)


def _csv_writer(fh):
    return csv.writer(fh, delimiter=",", lineterminator="\n", quoting=csv.QUOTE_NONE)


def _fmt(x):
    return f"{x:.6f}"


def write_train_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow(["epoch", "lr", "total", "shape", "dist", "conform", "mean_dq"])
        for r in rows:
            w.writerow([r["epoch"]] + [_fmt(r[k]) for k in ("lr", "total", "shape", "dist", "conform", "mean_dq")])


def write_metrics_report(path, rows):
    """``shape_id,emd,hd,cd`` with 6-decimal values."""
    with open(path, "w", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow(["shape_id", "emd", "hd", "cd"])
        for r in rows:
            w.writerow([r["shape_id"], _fmt(r["emd"]), _fmt(r["hd"]), _fmt(r["cd"])])


def _read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


def _load_cloud(path):
    try:
        return parse_cloud(path, with_meta=True)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except (CloudParseError, InvalidInputError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from None


def _load_ckpt(path):
    from .checkpoint import CheckpointError, load_checkpoint

    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except (CheckpointError, ConfigError) as exc:
        raise DataError(str(exc)) from None


def _load_dataset(directory):
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"{directory}: not a directory")
    files = list_clouds(d)
    if not files:
        raise DataError(f"{directory}: no .ply/.xyz files")
    shapes = []
    for f in files:
        pts, _ = _load_cloud(f)
        shapes.append(normalize_unit_sphere(pts)[0])
    return files, shapes


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(args):
    from .datasets import make_toy_dataset

    spec = ToyDatasetSpec.from_dict(_read_json(args.spec))
    if args.seed is not None:
        spec.seed = args.seed
    shapes = make_toy_dataset(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    families = [fam for fam in spec.families for _ in range(spec.samples_per_family)]
    manifest = []
    for i, (fam, pts) in enumerate(zip(families, shapes)):
        name = f"shape_{i:04d}.{args.format}"
        write_cloud(out / name, pts)
        manifest.append({"file": name, "family": fam})
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump({"spec": spec.to_dict(), "shapes": manifest}, fh, indent=1)
    print(f"wrote {len(shapes)} shapes to {out}")


def cmd_train(args):
    from . import training
    from .checkpoint import save_checkpoint

    cfg_dict = _read_json(args.config)
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    config = TrainConfig.from_dict(cfg_dict)
    _, shapes = _load_dataset(args.data)
    for s in shapes:
        if s.shape[0] != config.N:
            raise DataError(f"dataset cloud has {s.shape[0]} points, config expects N={config.N}")
    ckpt = training.train(config, shapes)
    save_checkpoint(args.out, ckpt)
    log_path = args.log or str(args.out) + ".log.csv"
    write_train_log(log_path, ckpt.log)
    print(f"saved {args.out} after {ckpt.epoch} epochs; log {log_path}")


def _pad_to_multiple(P, r):
    pad = (-P.shape[0]) % r
    if pad:
        P = np.concatenate([P, P[farthest_point_sample(P, pad)]])
    return P, pad


def cmd_embed(args):
    from .embedder import embed

    ckpt = _load_ckpt(args.ckpt)
    cfg = ckpt.config
    raw, _ = _load_cloud(args.input)
    P, transform = normalize_unit_sphere(raw)
    P, pad = _pad_to_multiple(P, cfg.r)
    if P.shape[0] < cfg.K:
        raise DataError(f"input has {raw.shape[0]} points; need at least K={cfg.K}")
    res = embed(P.astype(np.float32), cfg, ckpt.params)
    Q = transform.invert(res.Q.astype(np.float64))
    meta = {
        "center": [repr(float(c)) for c in transform.center],
        "scale": [repr(float(transform.scale))],
        "pad": [pad],
        "r": [cfg.r],
    }
    write_cloud(args.out, Q, meta)
    if args.export_offsets:
        with open(args.export_offsets, "w", newline="") as fh:
            w = _csv_writer(fh)
            w.writerow(["dx", "dy", "dz"])
            for row in res.delta_Q.astype(np.float64) * transform.scale:
                w.writerow([f"{v:.9g}" for v in row])
    print(f"embedded {raw.shape[0]} -> {Q.shape[0]} points")


def _transform_from_meta(meta):
    try:
        center = np.array([float(v) for v in meta["center"]])
        scale = float(meta["scale"][0])
    except (KeyError, ValueError, IndexError):
        return None
    if center.shape != (3,) or not scale > 0:
        return None
    return NormalizationTransform(center=center, scale=scale)


def _drop_pad(R, pad):
    """Remove ``pad`` points, most redundant (closest to another point) first."""
    if pad <= 0:
        return R
    keep = np.ones(R.shape[0], dtype=bool)
    for _ in range(pad):
        idx = np.flatnonzero(keep)
        pts = R[idx]
        from .geometry import knn

        nn = knn(pts, pts, 2, return_sqdist=True)[1][:, 1]
        keep[idx[int(np.argmin(nn))]] = False
    return R[keep]


def restore_cloud(Q_raw, ckpt, transform=None, patch_size=2048, use_patches=True):
    """Restore a sparse cloud given in source units; returns dense source-unit points."""
    from .restorer import restore

    cfg = ckpt.config
    q_patch = max(1, patch_size // cfg.r)
    if use_patches and Q_raw.shape[0] > q_patch:
        patches, layout = split_patches(Q_raw, q_patch)
        best = np.full(Q_raw.shape[0], np.iinfo(np.int64).max)
        owner = np.full(Q_raw.shape[0], -1)
        for p, members in enumerate(layout.patch_member_indices):
            for pos, idx in enumerate(members):
                if pos < best[idx]:
                    best[idx] = pos
                    owner[idx] = p
        # each sparse point keeps the replicas of its owning patch only, so the
        # output has exactly r points per input point and needs no dedup
        R_all = np.empty((Q_raw.shape[0] * cfg.r, 3))
        for p, (patch, members) in enumerate(zip(patches, layout.patch_member_indices)):
            R = restore(patch.astype(np.float32), cfg, ckpt.params).R.astype(np.float64)
            R = layout.transforms[p].invert(R).reshape(len(members), cfg.r, 3)
            mine = owner[members] == p
            R_all.reshape(-1, cfg.r, 3)[np.asarray(members)[mine]] = R[mine]
        return R_all
    if transform is None:
        Q, transform = normalize_unit_sphere(Q_raw)
    else:
        Q = transform.apply(Q_raw)
    R = restore(Q.astype(np.float32), cfg, ckpt.params).R.astype(np.float64)
    return transform.invert(R)


def cmd_restore(args):
    ckpt = _load_ckpt(args.ckpt)
    Q_raw, meta = _load_cloud(args.input)
    if Q_raw.shape[0] < ckpt.config.k_conv:
        raise DataError(f"input has {Q_raw.shape[0]} points; need at least k_conv={ckpt.config.k_conv}")
    if args.patch_size < ckpt.config.r * ckpt.config.k_conv:
        raise UsageError("--patch-size too small for the checkpoint's r and k_conv")
    R = restore_cloud(Q_raw, ckpt, _transform_from_meta(meta), args.patch_size, not args.no_patch)
    try:
        pad = int(meta.get("pad", [0])[0])
    except ValueError:
        pad = 0
    R = _drop_pad(R, pad)
    write_cloud(args.out, R)
    print(f"restored {Q_raw.shape[0]} -> {R.shape[0]} points")


def cmd_eval(args):
    from .training import evaluate

    ckpt = _load_ckpt(args.ckpt)
    files, shapes = _load_dataset(args.data)
    try:
        reports, summary = evaluate(ckpt, shapes)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    for f, r in zip(files, reports):
        r["shape_id"] = f.stem
    write_metrics_report(args.report, reports)
    print("mean emd {emd:.6f} hd {hd:.6f} cd {cd:.6f} (baseline cd {cd_baseline:.6f}, "
          "cd(Q,Q') {cd_q_qprime:.6f})".format(**summary))


def cmd_sample(args):
    pts, _ = _load_cloud(args.input)
    if not 1 <= args.n <= pts.shape[0]:
        raise UsageError(f"--n must be in [1, {pts.shape[0]}]")
    if not 0 <= args.start < pts.shape[0]:
        raise UsageError("--start out of range")
    write_cloud(args.out, pts[farthest_point_sample(pts, args.n, args.start)])


def cmd_perturb(args):
    from .losses import chamfer_value
    from .training import run_model

    ckpt = _load_ckpt(args.ckpt)
    cfg = ckpt.config
    raw, _ = _load_cloud(args.input)
    P, _ = normalize_unit_sphere(raw)
    if P.shape[0] % cfg.r:
        raise DataError(f"input point count {P.shape[0]} is not divisible by r={cfg.r}")
    P32 = P.astype(np.float32)
    _, R = run_model(P32, cfg, ckpt.params)
    _, R_perm = run_model(P32, cfg, ckpt.params, perturb_rng=np.random.default_rng(args.seed))
    cd = chamfer_value(P32, R)
    cd_perm = chamfer_value(P32, R_perm)
    with open(args.report, "w", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow(["shape_id", "cd_embedded", "cd_perturbed"])
        w.writerow([Path(args.input).stem, _fmt(cd), _fmt(cd_perm)])
    print(f"cd embedded {cd:.6f}  cd perturbed {cd_perm:.6f}")


def build_parser():
    parser = _Parser(prog="selfembed", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a procedural toy dataset")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("ply", "xyz"), default="ply")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="jointly train both networks")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None, help="training log CSV (default: <out>.log.csv)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="encode a dense cloud into its self-embedded sparse cloud")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--export-offsets", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("restore", help="restore a dense cloud from a sparse one")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--patch-size", type=int, default=2048)
    p.add_argument("--no-patch", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("eval", help="EMD/HD/CD of restorations over a dataset directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="plain farthest point sampling")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("perturb", help="restore from row-permuted offsets and compare")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_perturb)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
