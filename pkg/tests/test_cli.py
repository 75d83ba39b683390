import csv
import json

import numpy as np
import pytest

from selfembed import training
from selfembed.checkpoint import save_checkpoint
from selfembed.cli import main
from selfembed.config import ToyDatasetSpec, TrainConfig
from selfembed.datasets import make_shape
from selfembed.geometry import farthest_point_sample, normalize_unit_sphere
from selfembed.io import parse_cloud, write_cloud


@pytest.fixture(scope="module")
def zero_ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("ck") / "zero.pse"
    save_checkpoint(path, training.new_checkpoint(TrainConfig()))
    return path


@pytest.fixture(scope="module")
def small_setup(tmp_path_factory):
    """A tiny trained checkpoint plus a matching 64-point dataset directory."""
    root = tmp_path_factory.mktemp("small")
    spec = {"samples_per_family": 1, "N": 64, "seed": 3}
    (root / "spec.json").write_text(json.dumps(spec))
    assert main(["gen-data", "--spec", str(root / "spec.json"), "--out", str(root / "data")]) == 0
    cfg = dict(N=64, n=16, r=4, K=8, m=4, C=8, C_prime=8, k_conv=4, extractor_blocks=[8], batch_size=2, epochs=2)
    (root / "cfg.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(root / "cfg.json"), "--data", str(root / "data"),
                 "--out", str(root / "m.pse")]) == 0
    return root


def _read_csv(path):
    text = path.read_text()
    assert "\r" not in text and '"' not in text
    return list(csv.reader(text.splitlines()))


def test_gen_data_writes_manifest(small_setup):
    data = small_setup / "data"
    manifest = json.loads((data / "manifest.json").read_text())
    assert [s["family"] for s in manifest["shapes"]] == ["sphere", "box", "torus", "cylinder", "two_box"]
    for entry in manifest["shapes"]:
        assert parse_cloud(data / entry["file"]).shape == (64, 3)


def test_gen_data_seed_flag_is_deterministic(tmp_path):
    (tmp_path / "s.json").write_text(json.dumps({"samples_per_family": 1, "N": 32}))
    for name in ("a", "b"):
        assert main(["gen-data", "--spec", str(tmp_path / "s.json"), "--out", str(tmp_path / name),
                     "--format", "xyz", "--seed", "5"]) == 0
    for f in sorted((tmp_path / "a").glob("*.xyz")):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_train_log_format(small_setup):
    rows = _read_csv(small_setup / "m.pse.log.csv")
    assert rows[0] == ["epoch", "lr", "total", "shape", "dist", "conform", "mean_dq"]
    assert [r[0] for r in rows[1:]] == ["0", "1"]
    for r in rows[1:]:
        assert all(len(v.split(".")[1]) == 6 for v in r[1:])


def test_eval_report_format(small_setup, tmp_path):
    report = tmp_path / "r.csv"
    assert main(["eval", "--ckpt", str(small_setup / "m.pse"), "--data", str(small_setup / "data"),
                 "--report", str(report)]) == 0
    rows = _read_csv(report)
    assert rows[0] == ["shape_id", "emd", "hd", "cd"]
    assert [r[0] for r in rows[1:]] == [f"shape_{i:04d}" for i in range(5)]
    for r in rows[1:]:
        assert all(len(v.split(".")[1]) == 6 and float(v) > 0 for v in r[1:])


def test_sample_equals_fps(tmp_path, rng):
    pts = rng.normal(size=(2048, 3)).astype(np.float32)
    write_cloud(tmp_path / "in.ply", pts)
    assert main(["sample", "--in", str(tmp_path / "in.ply"), "--n", "512", "--out", str(tmp_path / "out.ply")]) == 0
    np.testing.assert_array_equal(parse_cloud(tmp_path / "out.ply"), pts[farthest_point_sample(pts, 512)])


def test_zero_init_embed_restore_gives_four_copies(zero_ckpt, tmp_path):
    P = make_shape("torus", 512, np.random.default_rng(1)) * 3.0 + 0.5
    write_cloud(tmp_path / "in.xyz", P)
    assert main(["embed", "--ckpt", str(zero_ckpt), "--in", str(tmp_path / "in.xyz"),
                 "--out", str(tmp_path / "q.xyz"), "--export-offsets", str(tmp_path / "dq.csv")]) == 0
    Q = parse_cloud(tmp_path / "q.xyz")
    Pn, _ = normalize_unit_sphere(P)
    fps = P[farthest_point_sample(Pn.astype(np.float32), 128)]
    assert Q.shape == (128, 3)
    np.testing.assert_allclose(Q, fps, atol=1e-6)
    rows = _read_csv(tmp_path / "dq.csv")
    assert rows[0] == ["dx", "dy", "dz"] and len(rows) == 129
    assert all(float(v) == 0.0 for r in rows[1:] for v in r)
    assert main(["restore", "--ckpt", str(zero_ckpt), "--in", str(tmp_path / "q.xyz"),
                 "--out", str(tmp_path / "r.xyz")]) == 0
    R = parse_cloud(tmp_path / "r.xyz")
    np.testing.assert_allclose(R, np.repeat(Q, 4, axis=0), atol=1e-6)


def test_patched_restore_keeps_r_points_per_input(zero_ckpt, tmp_path):
    Q = make_shape("two_box", 1024, np.random.default_rng(2))
    write_cloud(tmp_path / "q.ply", Q)
    for flags in (["--patch-size", "1024"], ["--no-patch"]):
        assert main(["restore", "--ckpt", str(zero_ckpt), "--in", str(tmp_path / "q.ply"),
                     "--out", str(tmp_path / "r.ply")] + flags) == 0
        R = parse_cloud(tmp_path / "r.ply")
        assert R.shape == (4096, 3)
        np.testing.assert_allclose(R, np.repeat(Q, 4, axis=0), atol=1e-5)


def test_embed_pads_and_restore_drops_padding(zero_ckpt, tmp_path, rng):
    P = rng.normal(size=(510, 3))
    write_cloud(tmp_path / "in.xyz", P)
    assert main(["embed", "--ckpt", str(zero_ckpt), "--in", str(tmp_path / "in.xyz"),
                 "--out", str(tmp_path / "q.xyz")]) == 0
    Q, meta = parse_cloud(tmp_path / "q.xyz", with_meta=True)
    assert Q.shape == (128, 3) and meta["pad"] == ["2"] and meta["r"] == ["4"]
    assert main(["restore", "--ckpt", str(zero_ckpt), "--in", str(tmp_path / "q.xyz"),
                 "--out", str(tmp_path / "r.xyz")]) == 0
    assert parse_cloud(tmp_path / "r.xyz").shape == (510, 3)


def test_perturb_report(small_setup, tmp_path):
    cloud = small_setup / "data" / "shape_0000.ply"
    outs = []
    for name in ("a.csv", "b.csv"):
        assert main(["perturb", "--ckpt", str(small_setup / "m.pse"), "--in", str(cloud),
                     "--seed", "4", "--report", str(tmp_path / name)]) == 0
        outs.append((tmp_path / name).read_text())
    assert outs[0] == outs[1]
    rows = _read_csv(tmp_path / "a.csv")
    assert rows[0] == ["shape_id", "cd_embedded", "cd_perturbed"] and rows[1][0] == "shape_0000"


def test_exit_codes(zero_ckpt, tmp_path, capsys):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["sample", "--in", "x.xyz", "--n", "3", "--out", "y.xyz", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main(["sample", "--in", str(tmp_path / "missing.xyz"), "--n", "3", "--out", "y.xyz"]) == 2
    (tmp_path / "bad.xyz").write_text("1 2\n")
    assert main(["sample", "--in", str(tmp_path / "bad.xyz"), "--n", "1", "--out", "y.xyz"]) == 2
    assert "line 1" in capsys.readouterr().err
    write_cloud(tmp_path / "ok.xyz", np.eye(3))
    assert main(["sample", "--in", str(tmp_path / "ok.xyz"), "--n", "9", "--out", str(tmp_path / "y.xyz")]) == 1
    (tmp_path / "junk.pse").write_bytes(b"junk")
    assert main(["embed", "--ckpt", str(tmp_path / "junk.pse"), "--in", str(tmp_path / "ok.xyz"),
                 "--out", str(tmp_path / "q.xyz")]) == 2
    (tmp_path / "cfg.json").write_text(json.dumps({"no_such_field": 1}))
    assert main(["train", "--config", str(tmp_path / "cfg.json"), "--data", str(tmp_path),
                 "--out", str(tmp_path / "m.pse")]) == 2
