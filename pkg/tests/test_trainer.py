import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wstal.postprocess import NmsConfig
from wstal.trainer import (RefineConfig, ToyModel, TrainConfig, extract_features, infer,
                           init_model, make_clips, objective, train_mil, window_starts)


def test_clip_examples():
    assert [s for s, _ in make_clips(100, 40)] == [0, 20, 40, 60]
    assert list(make_clips(40, 40)) == [(0, 40)]
    assert [s for s, _ in make_clips(99, 40)] == [0, 20, 40]
    with pytest.raises(ValueError):
        make_clips(10, 40)


@given(st.integers(2, 60), st.integers(0, 200))
def test_clip_coverage(W, extra):
    T = W + extra
    clips = list(make_clips(T, W))
    stride = int(math.floor(W / 2 + 0.5))
    assert all(b[0] - a[0] == stride for a, b in zip(clips, clips[1:]))
    assert all(e - s == W and e <= T for s, e in clips)
    cover = np.zeros(T, int)
    for s, e in clips:
        cover[s:e] += 1
    last = clips[-1][1]
    assert T - last < stride or T - last == 0
    assert np.all(cover[:last] >= 1)
    if W % 2 == 0:
        assert np.all(cover[stride:last - stride] == 2)


def test_feature_examples():
    const = np.full((2, 30), 4.0)
    f = extract_features(const, 5)
    assert f.shape == (30, 6)
    assert np.allclose(f[:, :2], 4.0) and np.allclose(f[:, 2:], 0.0)

    rng = np.random.default_rng(0)
    sig = rng.normal(size=(3, 20))
    f = extract_features(sig, 1)
    assert np.allclose(f[:, :3], sig.T) and np.allclose(f[:, 3:6], 0.0)

    ramp = np.arange(20, dtype=float)[None, :]
    f = extract_features(ramp, 3)
    assert np.allclose(f[1:-1, 0], ramp[0, 1:-1])
    assert np.allclose(f[1:-1, 2], 1.0)
    with pytest.raises(ValueError):
        extract_features(ramp, 4)


def test_features_match_naive_windows():
    rng = np.random.default_rng(1)
    sig = rng.normal(size=(2, 25))
    win, half = 7, 3
    f = extract_features(sig, win)
    for t in range(25):
        lo, hi = max(0, t - half), min(25, t + half + 1)
        chunk = sig[:, lo:hi]
        assert np.allclose(f[t, :2], chunk.mean(axis=1))
        assert np.allclose(f[t, 2:4], chunk.std(axis=1))
        assert np.allclose(f[t, 4:], np.abs(np.diff(chunk, axis=1)).mean(axis=1))


def _toy_data(seed=0, n=6, T=30, D=4, C=2):
    rng = np.random.default_rng(seed)
    feats = [rng.normal(size=(T, D)) for _ in range(n)]
    labels = [rng.integers(0, 2, C) for _ in range(n)]
    return feats, labels


def test_zero_epochs_returns_init():
    feats, labels = _toy_data()
    cfg = TrainConfig(epochs=0, seed=5)
    m, ref = train_mil(feats, labels, cfg), init_model(4, 2, cfg)
    assert np.array_equal(m.W_cls, ref.W_cls) and np.array_equal(m.w_att, ref.w_att)


def test_empty_training_set():
    with pytest.raises(ValueError):
        train_mil([], [], TrainConfig())


def _flat(model):
    return np.concatenate([model.W_cls.ravel(), model.b_cls, model.w_att, [model.b_att]])


def _unflat(v, like):
    D, C = like.W_cls.shape
    return ToyModel(v[:D * C].reshape(D, C), v[D * C:D * C + C], v[D * C + C:D * C + C + D],
                    float(v[-1]), like.pooling)


@pytest.mark.parametrize("pooling", ["attention", "linsoft", "max"])
def test_objective_gradient(pooling):
    feats, labels = _toy_data(seed=2)
    cfg = TrainConfig(pooling=pooling, init_scale=0.5, weight_decay=1e-2)
    model = init_model(4, 2, cfg)
    model.b_att = 0.3
    _, g = objective(model, feats, labels, cfg)
    analytic = _flat(ToyModel(g["W_cls"], g["b_cls"], g["w_att"], g["b_att"]))
    x0 = _flat(model)
    fd = np.zeros_like(x0)
    h = 1e-6
    for i in range(len(x0)):
        up, dn = x0.copy(), x0.copy()
        up[i] += h
        dn[i] -= h
        fd[i] = (objective(_unflat(up, model), feats, labels, cfg)[0]
                 - objective(_unflat(dn, model), feats, labels, cfg)[0]) / (2 * h)
    if pooling != "attention":
        # the attention head is not used, only decayed
        fd[-5:] = analytic[-5:]
    rel = np.max(np.abs(fd - analytic)) / max(np.max(np.abs(fd)), 1e-8)
    assert rel < 1e-4


def test_loss_monotone_when_convex():
    feats, labels = _toy_data(seed=3, C=1)
    cfg = TrainConfig(learning_rate=1e-3, epochs=200, freeze_attention=True)
    hist = []
    train_mil(feats, labels, cfg, history=hist)
    assert all(b <= a + 1e-15 for a, b in zip(hist, hist[1:]))
    assert hist[-1] < hist[0]


def test_all_negative_bag_is_driven_down():
    feats, _ = _toy_data(seed=4, n=1, C=2)
    cfg = TrainConfig(learning_rate=1.0, epochs=200)
    model = train_mil(feats, [np.zeros(2)], cfg)
    p = model.frame_scores(feats[0])
    a = model.attention(feats[0])
    bag = a @ p / a.sum()
    assert np.all(bag <= 0.1)


def test_training_is_deterministic():
    feats, labels = _toy_data(seed=5)
    cfg = TrainConfig(learning_rate=0.5, epochs=30)
    a, b = train_mil(feats, labels, cfg), train_mil(feats, labels, cfg)
    assert np.array_equal(a.W_cls, b.W_cls) and a.b_att == b.b_att


def test_model_roundtrip():
    m = init_model(3, 2, TrainConfig(seed=9))
    m2 = ToyModel.from_dict(m.to_dict())
    assert np.array_equal(m.W_cls, m2.W_cls) and m2.pooling == m.pooling


def _cas_model():
    # identity classifier: the feature is the logit of the desired activation
    return ToyModel(np.eye(1), np.zeros(1), np.zeros(1), 0.0)


def _logit(p):
    return np.log(p / (1 - p))


def test_infer_constant_cas():
    X = np.full((50, 1), _logit(0.9))
    segs = infer(_cas_model(), X, "full", thresh=0.5)
    assert len(segs) == 1 and (segs[0].start, segs[0].end) == (0, 50)
    assert segs[0].score == pytest.approx(0.9)
    assert infer(_cas_model(), np.full((50, 1), _logit(0.2)), "full") == []


def test_infer_two_runs_full_and_window():
    cas = np.full(60, 0.1)
    cas[10:20] = 0.9
    cas[30:40] = 0.9
    X = _logit(cas)[:, None]
    full = infer(_cas_model(), X, "full")
    assert [(s.start, s.end) for s in full] == [(10, 20), (30, 40)]
    win = infer(_cas_model(), X, "window", window_len=50)
    assert [(s.start, s.end, s.class_id) for s in win] == [(s.start, s.end, s.class_id) for s in full]


def test_infer_fps_and_duration():
    X = np.full((20, 1), _logit(0.8))
    segs = infer(_cas_model(), X, "full", fps=10, duration=1.5, sequence_id="q")
    assert len(segs) == 1
    s = segs[0]
    assert (s.class_id, s.start, s.end, s.sequence_id) == (1, 0.0, 1.5, "q")
    assert s.score == pytest.approx(0.8)


def test_infer_refine_smooths_isolated_spike():
    cas = np.full(40, 0.3)
    cas[20] = 0.9
    X = _logit(cas)[:, None]
    assert len(infer(_cas_model(), X, "full")) == 1
    assert infer(_cas_model(), X, "full", refine=RefineConfig(alpha=0.8, steps=20, radius=4)) == []


def test_infer_errors():
    X = np.zeros((10, 1))
    with pytest.raises(ValueError):
        infer(_cas_model(), X, "window", window_len=1)
    with pytest.raises(ValueError):
        infer(_cas_model(), X, "bogus")


def test_window_starts_cover_stream():
    assert window_starts(100, 40) == [0, 20, 40, 60]
    assert window_starts(105, 40) == [0, 20, 40, 60, 65]
    assert window_starts(30, 40) == [0]


@given(st.integers(0, 2**32 - 1))
def test_runs_are_disjoint_per_class(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(60, 3))
    model = ToyModel(rng.normal(size=(3, 2)), np.zeros(2), np.zeros(3), 0.0)
    segs = infer(model, X, "full", nms=NmsConfig(iou_thresh=1.0))
    for c in (1, 2):
        iv = sorted((s.start, s.end) for s in segs if s.class_id == c)
        assert all(a[1] < b[0] for a, b in zip(iv, iv[1:]))
