import math

import numpy as np
import pytest

import dbpn


def fnv1a(img):
    h = 1469598103934665603
    c = img.shape[2] if img.ndim == 3 else 1
    data = b"".join(int(v).to_bytes(8, "little") for v in (img.shape[1], img.shape[0], c)) + img.tobytes()
    for b in data:
        h = ((h ^ b) * 1099511628211) & 0xFFFFFFFFFFFFFFFF
    return h


def keys(x):
    x = abs(x)
    if x <= 1:
        return 1.5 * x**3 - 2.5 * x**2 + 1
    if x < 2:
        return -0.5 * x**3 + 2.5 * x**2 - 4 * x + 2
    return 0.0


def test_preset_param_counts():
    assert dbpn.build("S", 4).param_count == 596033
    assert dbpn.build("L", 4).param_count == 2170561
    dd = dbpn.build("DDBPN", 8)
    assert dd.param_count == 23209283
    assert (dd.unit_count, dd.merge_count) == (13, 10)
    assert sum(layer[-1] for layer in dd.layers()) == dd.param_count


def test_parameter_arrays_match_count():
    net = dbpn.build("SS", 2, seed=5)
    params = net.parameters()
    assert sum(a.size for a in params.values()) == net.param_count
    w = params["up1.scale_up.weight"]
    assert w.dtype == np.float32 and w.shape == (18, 18, 6, 6)


def test_forward_shape_and_determinism():
    net = dbpn.build("SS", 4, seed=1)
    x = np.random.default_rng(0).random((2, 1, 7, 5), dtype=np.float32)
    y = net.forward(x)
    assert y.shape == (2, 1, 28, 20)
    assert np.array_equal(y, dbpn.build("SS", 4, seed=1).forward(x))
    assert not np.array_equal(y, dbpn.build("SS", 4, seed=2).forward(x))
    feats = net.features(x)
    assert len(feats) == 2 and all(f.shape == (2, 18, 28, 20) for f in feats)


def test_wrong_input_raises():
    net = dbpn.build("SS", 2)
    with pytest.raises(dbpn.ShapeError):
        net.forward(np.zeros((1, 3, 4, 4), np.float32))
    with pytest.raises(dbpn.ShapeError):
        net.forward(np.zeros((4, 4), np.float32))
    with pytest.raises(dbpn.ConfigError):
        dbpn.NetworkConfig.preset("S", 3)


def test_synth_checksums_independent():
    images = dbpn.synth_images(1, 3, 64)
    assert [n for n, _ in images] == ["synth_000", "synth_001", "synth_002"]
    for _, img in images:
        assert img.shape == (64, 64, 3) and img.dtype == np.uint8
        assert dbpn.checksum(img) == fnv1a(img)


def test_image_ops_against_formulas():
    for x in np.linspace(-2.5, 2.5, 41):
        assert dbpn.cubic_kernel(x) == pytest.approx(keys(x), abs=1e-12)
    rgb = np.random.default_rng(3).integers(0, 256, (5, 6, 3)).astype(np.float64)
    y = dbpn.rgb_to_y(rgb)
    want = 16 + (65.481 * rgb[..., 0] + 128.553 * rgb[..., 1] + 24.966 * rgb[..., 2]) / 255
    assert np.allclose(y, want, atol=1e-9)
    assert np.allclose(dbpn.bicubic_resize(rgb, 6, 5), rgb, atol=1e-9)
    a = rgb[..., 0]
    b = a + np.random.default_rng(4).normal(0, 3, a.shape)
    mse = np.mean((a[1:-1, 1:-1] - b[1:-1, 1:-1]) ** 2)
    assert dbpn.psnr(a, b, 1) == pytest.approx(10 * math.log10(255**2 / mse), rel=1e-12)
    with pytest.raises(dbpn.ContractError):
        dbpn.ssim(a, a)
    hr = dbpn.synth_images(2, 1, 48)[0][1]
    luma = dbpn.rgb_to_y(hr.astype(np.float64))
    assert dbpn.ssim(luma, luma, 4) == pytest.approx(1.0)
    assert dbpn.make_lr(hr, 4).shape == (12, 12, 3)
    assert dbpn.modcrop(hr[:47, :46], 4).shape == (44, 44, 3)


def test_png_round_trip(tmp_path):
    img = dbpn.synth_images(5, 1, 16)[0][1]
    dbpn.save_png(img, tmp_path / "a.png")
    assert np.array_equal(dbpn.load_png(tmp_path / "a.png"), img)
    with pytest.raises(dbpn.IoError):
        dbpn.load_png(tmp_path / "missing.png")


def test_train_save_load_evaluate(tmp_path):
    ds = dbpn.Dataset.synth(1, 4, 32, 2)
    assert len(ds) == 4 and ds.lr(0).shape == (16, 16, 3)
    cfg = dbpn.TrainConfig()
    cfg.iterations, cfg.batch, cfg.patch, cfg.lr0, cfg.log_every, cfg.seed = 6, 2, 8, 1e-3, 2, 9

    def run(path):
        net = dbpn.build("SS", 2, seed=4)
        log = dbpn.train(net, ds, cfg, path)
        return net, log

    net, log = run(tmp_path / "a.ckpt")
    _, log2 = run(tmp_path / "b.ckpt")
    assert [row[0] for row in log] == [2, 4, 6]
    assert log == log2
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert all(math.isfinite(row[2]) for row in log)

    loaded = dbpn.Network.load(tmp_path / "a.ckpt")
    x = ds.lr(1)[None, None, :, :, 0].astype(np.float32) / 255
    assert np.array_equal(loaded.forward(x), net.forward(x))

    report = dbpn.evaluate(loaded, ds)
    assert [r[0] for r in report["rows"]] == [ds.name(i) for i in range(4)]
    assert report["mean_psnr"] == pytest.approx(np.mean([r[1] for r in report["rows"]]))
    assert report["csv"].splitlines()[-1].startswith("MEAN,")
    base = dbpn.bicubic_baseline(ds)
    assert base["method"] == "bicubic" and base["crop"] == 2

    sr = loaded.super_resolve(ds.lr(0))
    assert sr.shape == (32, 32)


def test_train_rejects_bad_config():
    cfg = dbpn.TrainConfig()
    cfg.batch = 0
    with pytest.raises(dbpn.ConfigError):
        dbpn.train(dbpn.build("SS", 2), dbpn.Dataset.synth(1, 1, 32, 2), cfg)


def test_lr_schedule():
    cfg = dbpn.TrainConfig()
    cfg.lr0, cfg.decay_interval = 1e-4, 10
    assert dbpn.lr_schedule(9, cfg) == pytest.approx(1e-4)
    assert dbpn.lr_schedule(10, cfg) == pytest.approx(1e-5)


def test_gradient_suite():
    reports = dbpn.gradient_suite(11)
    assert reports and all(r["passed"] for r in reports)
    assert max(r["max_rel_error"] for r in reports) < 1e-4
