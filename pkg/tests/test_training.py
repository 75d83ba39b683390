import numpy as np
import pytest

from selfembed import training
from selfembed.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from selfembed.config import ConfigError, ToyDatasetSpec, TrainConfig
from selfembed.datasets import make_shape, make_toy_dataset, sample_box
from selfembed.losses import chamfer_value


def small_config(**kw):
    base = dict(N=64, n=16, r=4, K=8, m=4, C=8, C_prime=8, k_conv=4, extractor_blocks=(8,),
                batch_size=2, epochs=3, decay_every=1, lr_floor=2e-4,
                dataset=ToyDatasetSpec(samples_per_family=1, N=64))
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def tiny_data():
    return make_toy_dataset(ToyDatasetSpec(samples_per_family=1, N=64))


# --- datasets ---------------------------------------------------------------

def test_dataset_deterministic_and_normalized():
    spec = ToyDatasetSpec(samples_per_family=2, N=128)
    a, b = make_toy_dataset(spec), make_toy_dataset(spec)
    assert len(a) == 10
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
        assert x.shape == (128, 3) and np.all(np.isfinite(x))
        assert np.linalg.norm(x, axis=1).max() <= 1.0 + 1e-12


def test_sphere_points_on_unit_sphere():
    from selfembed.datasets import sample_sphere

    pts = sample_sphere(500, np.random.default_rng(0))
    assert np.abs(np.linalg.norm(pts, axis=1) - 1.0).max() < 1e-6


def test_box_faces_get_area_proportional_counts():
    pts, which, faces = sample_box(512, np.random.default_rng(3), extents=[0.6, 1.0, 1.4], return_faces=True)
    areas = np.array([np.linalg.norm(np.cross(u, v)) for _, u, v in faces])
    p = areas / areas.sum()
    counts = np.bincount(which, minlength=6)
    sigma = np.sqrt(512 * p * (1 - p))
    assert np.all(np.abs(counts - 512 * p) <= 3 * sigma)


def test_unknown_family():
    with pytest.raises(ConfigError):
        make_toy_dataset(ToyDatasetSpec(families=("cone",)))


# --- config and schedule ----------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(N=512, n=100, r=4)
    with pytest.raises(ConfigError):
        TrainConfig(lr=1e-3, lr_floor=1e-2)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"bogus": 1})


def test_config_json_round_trip():
    cfg = small_config(alpha=3.0)
    assert TrainConfig.from_json(cfg.to_json()) == cfg


def test_lr_schedule():
    cfg = TrainConfig(lr=1e-3, decay_every=20, lr_floor=1e-6)
    assert cfg.lr_at(0) == 1e-3
    assert cfg.lr_at(39) == 5e-4
    assert cfg.lr_at(40) == 2.5e-4
    assert cfg.lr_at(10_000) == 1e-6


# --- augmentation -----------------------------------------------------------

def test_augment_identity_settings(rng):
    pts = rng.normal(size=(30, 3))
    out = training.augment(pts, rng, scale_range=(1.0, 1.0), rotate=False, jitter_sigma=0.0)
    np.testing.assert_array_equal(out, pts)


def test_augment_rotation_is_isometry(rng):
    pts = rng.normal(size=(30, 3))
    out = training.augment(pts, rng, scale_range=(1.0, 1.0), jitter_sigma=0.0)
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    d1 = np.linalg.norm(out[:, None] - out[None], axis=-1)
    assert np.abs(d0 - d1).max() < 1e-9
    np.testing.assert_allclose(out[:, 2], pts[:, 2], atol=1e-15)


def test_augment_scale_homogeneity(rng):
    A, B = rng.normal(size=(20, 3)), rng.normal(size=(20, 3))
    s = 1.13
    assert abs(chamfer_value(s * A, s * B) - s * chamfer_value(A, B)) < 1e-9


def test_augment_jitter_is_clipped(rng):
    pts = np.zeros((2000, 3))
    out = training.augment(pts, rng, scale_range=(1, 1), rotate=False, jitter_sigma=0.01, jitter_clip=0.015)
    assert np.abs(out).max() <= 0.015


# --- train loop -------------------------------------------------------------

def test_zero_epochs_returns_initialization(tiny_data):
    cfg = small_config()
    ckpt = training.train(cfg, tiny_data, epochs=0)
    init = training.init_model(cfg)
    for k in init:
        np.testing.assert_array_equal(ckpt.params[k].data, init[k].data)
    assert ckpt.epoch == 0 and ckpt.log == []


def test_training_is_deterministic_and_logs_schedule(tiny_data):
    cfg = small_config()
    a = training.train(cfg, tiny_data)
    b = training.train(cfg, tiny_data)
    assert a.log == b.log
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)
    assert [row["lr"] for row in a.log] == [cfg.lr_at(e) for e in range(3)]
    assert [row["epoch"] for row in a.log] == [0, 1, 2]
    for row in a.log:
        assert row["total"] == pytest.approx(row["shape"] + cfg.alpha * row["dist"] + cfg.lam * row["conform"], rel=1e-5)


def test_resume_matches_uninterrupted_run(tiny_data, tmp_path):
    cfg = small_config()
    full = training.train(cfg, tiny_data)
    part = training.train(cfg, tiny_data, epochs=1)
    save_checkpoint(tmp_path / "c.pse", part)
    resumed = training.train(cfg, tiny_data, checkpoint=load_checkpoint(tmp_path / "c.pse"), epochs=2)
    for k in full.params:
        np.testing.assert_array_equal(full.params[k].data, resumed.params[k].data)
    assert resumed.epoch == 3


def test_training_moves_both_networks(tiny_data):
    cfg = small_config()
    init = training.init_model(cfg)
    ckpt = training.train(cfg, tiny_data, epochs=2)
    for prefix in ("E.", "R."):
        changed = [k for k in init if k.startswith(prefix) and not np.array_equal(init[k].data, ckpt.params[k].data)]
        assert changed, prefix


def test_divergence_guard(tiny_data):
    cfg = small_config()
    ckpt = training.new_checkpoint(cfg)
    ckpt.params["R.offset.1.bias"].data[:] = np.float32(1e7)
    with pytest.raises(training.DivergenceError):
        training.train(cfg, tiny_data, checkpoint=ckpt, epochs=1)


def test_train_rejects_bad_dataset():
    cfg = small_config()
    with pytest.raises(ValueError):
        training.train(cfg, [])
    with pytest.raises(ValueError):
        training.train(cfg, [np.zeros((10, 3))])


# --- evaluation -------------------------------------------------------------

def test_zero_init_evaluation_equals_duplication_baseline(tiny_data):
    cfg = small_config()
    reports, summary = training.evaluate(training.new_checkpoint(cfg), tiny_data)
    for P, rep in zip(tiny_data, reports):
        assert rep["cd"] == rep["cd_baseline"]
        assert rep["cd_q_qprime"] == 0.0 and rep["mean_dq"] == 0.0
    assert summary["cd"] == summary["cd_baseline"]


def test_evaluate_rejects_n_mismatch():
    cfg = small_config()
    with pytest.raises(ValueError):
        training.evaluate(training.new_checkpoint(cfg), [np.zeros((32, 3))])


def test_perturb_embedding():
    from selfembed.embedder import EmbedResult

    Qp = np.arange(6, dtype=float).reshape(2, 3)
    zero = EmbedResult(Q=Qp, Q_prime=Qp, delta_Q=np.zeros((2, 3)), F_E=None, fps_indices=None)
    np.testing.assert_array_equal(training.perturb_embedding(zero, np.random.default_rng(0)), Qp)
    dq = np.array([[1.0, 0, 0], [0, 2.0, 0]])
    res = EmbedResult(Q=Qp + dq, Q_prime=Qp, delta_Q=dq, F_E=None, fps_indices=None)
    for seed in range(5):
        np.testing.assert_array_equal(training.perturb_embedding(res, np.random.default_rng(seed)), Qp + dq[::-1])


# --- checkpoint file --------------------------------------------------------

def test_checkpoint_round_trip(tiny_data, tmp_path):
    cfg = small_config()
    ckpt = training.train(cfg, tiny_data, epochs=2)
    path = tmp_path / "m.pse"
    save_checkpoint(path, ckpt)
    back = load_checkpoint(path)
    assert back.config == cfg and back.epoch == 2
    assert back.adam.step == ckpt.adam.step
    for k in ckpt.params:
        np.testing.assert_array_equal(back.params[k].data, ckpt.params[k].data)
    for a, b in zip(ckpt.adam.m + ckpt.adam.v, back.adam.m + back.adam.v):
        np.testing.assert_array_equal(a, b)
    r1, _ = training.evaluate(ckpt, tiny_data)
    r2, _ = training.evaluate(back, tiny_data)
    assert r1 == r2


def test_checkpoint_header_layout(tmp_path):
    import json
    import struct

    path = tmp_path / "m.pse"
    save_checkpoint(path, training.new_checkpoint(small_config()))
    raw = path.read_bytes()
    assert raw[:4] == b"PSE1"
    assert struct.unpack("<I", raw[4:8])[0] == 1
    n = struct.unpack("<I", raw[8:12])[0]
    assert json.loads(raw[12:12 + n])["config"]["N"] == 64
    seed, epoch = struct.unpack("<QQ", raw[-16:])
    assert (seed, epoch) == (0, 0)


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.pse"
    bad.write_bytes(b"NOPE" + b"\0" * 20)
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    good = tmp_path / "good.pse"
    save_checkpoint(good, training.new_checkpoint(small_config()))
    bad.write_bytes(good.read_bytes()[:-40])
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
