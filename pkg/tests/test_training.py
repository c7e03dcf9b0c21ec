from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spfilter.geometry import CameraIntrinsics, SparseDepthImage
from spfilter.io import FormatError
from spfilter.labels import SsdeLabel, TrainingSample
from spfilter.training import (AugmentConfig, TinyConvPredictor, TrainConfig, TrainingDivergedError,
                               augment_sample, crop_sample, depth_loss, hflip_sample, init_params,
                               load_checkpoint, n_parameters, sample_loss_and_grad, save_checkpoint,
                               seg_loss, total_loss, train_predictor)


def make_sample(seed=0, shape=(8, 8), intr=False):
    r = np.random.default_rng(seed)
    m, n = shape
    valid = r.random(shape) < 0.5
    xd = SparseDepthImage(np.where(valid, r.uniform(1, 4, shape), np.nan), valid,
                          np.where(valid[..., None], r.uniform(0, min(m, n) - 1, shape + (2,)), np.nan))
    ssde = SsdeLabel(r.uniform(1, 4, shape), r.uniform(0.001, 0.03, shape), r.random(shape) < 0.7)
    seg = (r.random(shape) < 0.4).astype(np.uint8)
    K = CameraIntrinsics(20.0, 20.0, (n - 1) / 2 + 0.3, (m - 1) / 2, n, m) if intr else None
    return TrainingSample(r.random(shape + (3,)), xd, ssde, seg, None, K)


def one_pixel_label(var):
    return SsdeLabel(np.array([[2.0, 5.0]]), np.array([[var, 1.0]]), np.array([[True, False]]))


def test_depth_loss_examples():
    lab = one_pixel_label(1.0)
    assert depth_loss(lab.depth, lab) == (0.0, False)
    assert depth_loss(np.array([[2.1, 0.0]]), lab)[0] == pytest.approx(0.01, abs=1e-15)
    assert depth_loss(np.array([[2.1, 0.0]]), one_pixel_label(4.0))[0] == pytest.approx(0.0025, abs=1e-15)


def test_halving_sigma_quadruples_contribution():
    pred = np.array([[2.3, 0.0]])
    sigma = 0.4
    a = depth_loss(pred, one_pixel_label(sigma ** 2))[0]
    b = depth_loss(pred, one_pixel_label((sigma / 2) ** 2))[0]
    assert b == pytest.approx(4 * a, rel=1e-12)


def test_depth_loss_empty_and_floor():
    lab = SsdeLabel(np.ones((2, 2)), np.ones((2, 2)), np.zeros((2, 2), dtype=bool))
    assert depth_loss(np.zeros((2, 2)), lab) == (0.0, True)
    tiny = SsdeLabel(np.array([[1.0]]), np.array([[0.0]]), np.array([[True]]))
    assert depth_loss(np.array([[1.001]]), tiny)[0] == pytest.approx(1e-6 / 1e-6, rel=1e-9)


def test_depth_loss_sum_reduction():
    s = make_sample(1)
    d = np.ones(s.shape)
    mean, _ = depth_loss(d, s.ssde)
    total, _ = depth_loss(d, s.ssde, reduction="sum")
    assert total == pytest.approx(mean * s.ssde.valid.sum(), rel=1e-12)


@given(st.integers(0, 2 ** 16))
def test_depth_loss_ignores_pixels_outside_label(seed):
    s = make_sample(3)
    r = np.random.default_rng(seed)
    pred = r.uniform(1, 4, s.shape)
    fuzzed = np.where(s.ssde.valid, pred, r.normal(0, 100, s.shape))
    lab2 = SsdeLabel(np.where(s.ssde.valid, s.ssde.depth, r.normal(size=s.shape)),
                     np.where(s.ssde.valid, s.ssde.variance, r.uniform(0, 5, s.shape)), s.ssde.valid)
    assert depth_loss(pred, s.ssde)[0] == depth_loss(fuzzed, lab2)[0]
    assert depth_loss(pred, s.ssde)[0] >= 0


def test_seg_loss_examples():
    y = np.array([[0, 1, 1]])
    confident = np.stack([np.where(y == 0, 50.0, -50.0), np.where(y == 1, 50.0, -50.0)], axis=-1)
    assert seg_loss(confident, y) < 1e-40
    assert seg_loss(np.zeros((1, 3, 2)), y) == pytest.approx(np.log(2), abs=1e-15)
    scores = np.array([[[2.0, 0.0], [0.5, 1.5], [1.0, -1.0]]])
    # hand-computed: -log of the softmax probability of the true class
    p0 = 1 / (1 + np.exp(-2.0))
    p1 = 1 / (1 + np.exp(-1.0))
    p2 = 1 / (1 + np.exp(2.0))
    assert seg_loss(scores, y) == pytest.approx(-(np.log(p0) + np.log(p1) + np.log(p2)) / 3, abs=1e-14)


def test_seg_loss_stable_for_large_scores():
    assert np.isfinite(seg_loss(np.array([[[1e6, -1e6]]]), np.array([[1]])))


def test_total_loss_examples():
    assert total_loss(0.0, 0.0, 0.02) == 0
    assert total_loss(0.5, 1.0, 0.02) == pytest.approx(0.52)
    assert total_loss(0.7, 123.0, 0.0) == 0.7
    with pytest.raises(ValueError):
        total_loss(-1.0, 0.0)


def test_loss_report_identity():
    params = init_params(0)
    for seed in range(3):
        rep, _ = sample_loss_and_grad(params, make_sample(seed), need_grad=False)
        assert abs(rep.L_total - (rep.L_seg + 0.02 * rep.L_de)) <= 1e-12
        assert min(rep.L_de, rep.L_seg, rep.L_total) >= 0


def _same(a: TrainingSample, b: TrainingSample, uv_tol=0.0):
    np.testing.assert_array_equal(a.rgb, b.rgb)
    np.testing.assert_array_equal(a.sparse_depth.depth, b.sparse_depth.depth)
    np.testing.assert_array_equal(a.sparse_depth.valid, b.sparse_depth.valid)
    np.testing.assert_allclose(a.sparse_depth.uv, b.sparse_depth.uv, rtol=0, atol=uv_tol)
    for k in ("depth", "variance", "valid"):
        np.testing.assert_array_equal(getattr(a.ssde, k), getattr(b.ssde, k))
    np.testing.assert_array_equal(a.seg, b.seg)


def test_hflip_twice_is_identity():
    s = make_sample(4, (6, 9), intr=True)
    back = hflip_sample(hflip_sample(s))
    # mirrored sub-pixel coordinates pick up at most round-off
    _same(s, back, uv_tol=1e-12)
    assert back.intrinsics == s.intrinsics


def test_flip_mirrors_every_raster():
    s = make_sample(5, (6, 9))
    f = hflip_sample(s)
    n = 9
    for r in range(6):
        for c in range(n):
            mc = n - 1 - c
            np.testing.assert_array_equal(f.rgb[r, c], s.rgb[r, mc])
            assert f.sparse_depth.valid[r, c] == s.sparse_depth.valid[r, mc]
            assert f.ssde.valid[r, c] == s.ssde.valid[r, mc]
            assert f.ssde.depth[r, c] == s.ssde.depth[r, mc]
            assert f.ssde.variance[r, c] == s.ssde.variance[r, mc]
            assert f.seg[r, c] == s.seg[r, mc]
            if s.sparse_depth.valid[r, mc]:
                assert f.sparse_depth.depth[r, c] == s.sparse_depth.depth[r, mc]


def test_full_crop_is_identity():
    s = make_sample(6, (6, 9), intr=True)
    c = crop_sample(s, 0, 0, 6, 9)
    _same(s, c)
    assert c.intrinsics == s.intrinsics


def test_flip_commutes_with_loss():
    s = make_sample(7, (8, 10))
    r = np.random.default_rng(0)
    depth, scores = r.uniform(1, 4, s.shape), r.normal(size=s.shape + (2,))
    f = hflip_sample(s)
    before = depth_loss(depth, s.ssde)[0], seg_loss(scores, s.seg)
    after = depth_loss(depth[:, ::-1], f.ssde)[0], seg_loss(scores[:, ::-1], f.seg)
    assert before == pytest.approx(after, rel=1e-12)


def test_default_augmentation_shapes():
    s = make_sample(8, (540, 720), intr=True)
    cfg = AugmentConfig()
    a = augment_sample(s, cfg)
    assert a.shape == (352, 704) and a.sparse_depth.shape == (352, 704)
    b = augment_sample(s, cfg)
    _same(a, b)
    with pytest.raises(ValueError):
        augment_sample(make_sample(0, (100, 100)), cfg)
    with pytest.raises(ValueError):
        AugmentConfig(crop_from=(10, 10), crop_to=(11, 10))


def test_crop_keeps_pixel_rays():
    s = make_sample(9, (12, 14), intr=True)
    c = crop_sample(s, 3, 2, 6, 8)
    assert c.intrinsics.cx == s.intrinsics.cx - 2 and c.intrinsics.cy == s.intrinsics.cy - 3
    valid = c.sparse_depth.valid
    np.testing.assert_allclose(c.intrinsics.pixel_rays(c.sparse_depth.uv[valid]),
                               s.intrinsics.pixel_rays(s.sparse_depth.uv[3:9, 2:10][valid]), atol=1e-12)


def _flat(params):
    return np.concatenate([params[k].ravel() for k in sorted(params)])


def test_gradient_check():
    params = init_params(2)
    s = make_sample(10)
    _, grads = sample_loss_and_grad(params, s)
    h = 1e-6
    worst = 0.0
    for k in sorted(params):
        for idx in np.ndindex(params[k].shape):
            p = {n: v.copy() for n, v in params.items()}
            p[k][idx] += h
            up = sample_loss_and_grad(p, s, need_grad=False)[0].L_total
            p[k][idx] -= 2 * h
            down = sample_loss_and_grad(p, s, need_grad=False)[0].L_total
            num = (up - down) / (2 * h)
            a = grads[k][idx]
            worst = max(worst, abs(a - num) / max(abs(a) + abs(num), 1e-6))
    assert worst < 1e-4


def test_parameter_budget():
    assert n_parameters(init_params(0)) <= 100_000


def test_overfit_single_sample():
    _, hist = train_predictor([make_sample(11)], TrainConfig(epochs=500, learning_rate=0.01))
    assert hist[-1].L_total <= 0.5 * hist[0].L_total


def test_zero_learning_rate_keeps_params():
    params, hist = train_predictor([make_sample(12)], TrainConfig(epochs=7, learning_rate=0.0, seed=5))
    ref = init_params(5)
    for k in ref:
        np.testing.assert_array_equal(params[k], ref[k])
    assert len({h.L_total for h in hist}) == 1


def test_same_seed_identical_history():
    samples = [make_sample(13), make_sample(14)]
    cfg = TrainConfig(epochs=20, seed=3, augment=AugmentConfig(crop_from=(8, 8), crop_to=(6, 6)))
    _, a = train_predictor(samples, cfg)
    _, b = train_predictor(samples, cfg)
    assert [h.L_total for h in a] == [h.L_total for h in b]


def test_divergence_aborts_with_last_good_params(monkeypatch):
    import spfilter.training as tr

    real = tr.batch_loss_and_grad
    calls = []

    def flaky(params, samples, **kw):
        rep, g = real(params, samples, **kw)
        calls.append({k: v.copy() for k, v in params.items()})
        if len(calls) == 4:
            rep.L_total = float("nan")
        return rep, g

    monkeypatch.setattr(tr, "batch_loss_and_grad", flaky)
    with pytest.raises(TrainingDivergedError) as info:
        train_predictor([make_sample(15)], TrainConfig(epochs=10))
    assert len(info.value.history) == 3
    for k, v in calls[-1].items():
        np.testing.assert_array_equal(info.value.params[k], v)


def test_training_needs_labels():
    s = make_sample(0)
    empty = TrainingSample(s.rgb, s.sparse_depth, SsdeLabel(s.ssde.depth, s.ssde.variance,
                                                            np.zeros(s.shape, dtype=bool)))
    with pytest.raises(ValueError):
        train_predictor([empty])


def test_checkpoint_round_trip(tmp_path):
    params = init_params(1)
    save_checkpoint(tmp_path / "m.spfm", params, {"hidden": 16, "depth_scale": 5.0})
    raw = (tmp_path / "m.spfm").read_bytes()
    assert raw[:4] == b"SPFM"
    back, cfg = load_checkpoint(tmp_path / "m.spfm")
    assert cfg["hidden"] == 16
    for k in params:
        np.testing.assert_array_equal(back[k], params[k].astype(np.float32))
    (tmp_path / "bad.spfm").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "bad.spfm")


def test_tiny_predictor_save_load_predict(tmp_path):
    s = make_sample(16, (10, 12))
    model = TinyConvPredictor(epochs=3).fit([s])
    model.save(tmp_path / "m.spfm")
    loaded = TinyConvPredictor.load(tmp_path / "m.spfm")
    d1, s1 = model.predict(s.rgb, s.sparse_depth)
    d2, s2 = loaded.predict(s.rgb, s.sparse_depth)
    assert d1.shape == s.shape and s1.shape == s.shape + (2,)
    assert np.all(d2 > 0)
    np.testing.assert_allclose(d1, d2, rtol=1e-5)
    np.testing.assert_allclose(s1, s2, rtol=1e-4, atol=1e-5)
