"""Desk-scale weakly supervised training and CAS-based localization.

The model is deliberately small: a linear per-frame classifier
``p_t = sigmoid(x_t W + b)`` and a linear attention head
``a_t = sigmoid(x_t w + b_a)``, trained with full-batch gradient descent
against bag labels through a MIL pooling operator.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import uniform_filter1d

from .core import Segment, runs
from .milkern import BAG_EPS, bce_bag_loss, frame_affinity, rskp_propagate, sigmoid
from .postprocess import NmsConfig, temporal_nms

POOLINGS = ("attention", "max", "linsoft")


@dataclass(frozen=True)
class ClipIndex:
    clips: tuple[tuple[int, int], ...]
    W: int
    stride: int

    def __len__(self) -> int:
        return len(self.clips)

    def __iter__(self):
        return iter(self.clips)


def half_stride(W: int) -> int:
    # round half up so odd windows behave the same on every platform
    return max(1, int(np.floor(0.5 * W + 0.5)))


def make_clips(T: int, W: int) -> ClipIndex:
    """Fixed-length clips with 50 % overlap; an incomplete tail clip is dropped."""
    if W < 2:
        raise ValueError("clip length must be >= 2 frames")
    if T < W:
        raise ValueError(f"stream of {T} frames is shorter than the clip length {W}")
    stride = half_stride(W)
    starts = range(0, T - W + 1, stride)
    return ClipIndex(tuple((s, s + W) for s in starts), W, stride)


def extract_features(signal: np.ndarray, win: int) -> np.ndarray:
    """Per-frame window statistics of an (S, T) signal.

    Columns are ``[mean_1..mean_S, std_1..std_S, absdiff_1..absdiff_S]``:
    centered-window mean, population std and mean absolute first difference,
    with windows clamped at the stream edges.
    """
    x = np.atleast_2d(np.asarray(signal, dtype=float))
    if win < 1 or win % 2 == 0:
        raise ValueError("window must be an odd number >= 1")
    S, T = x.shape
    half = win // 2
    mean = np.empty((T, S))
    std = np.empty((T, S))
    dabs = np.zeros((T, S))
    diff = np.abs(np.diff(x, axis=1))

    inner = range(half, T - half) if T >= win else range(0)
    if len(inner):
        view = sliding_window_view(x, win, axis=1)  # (S, T - win + 1, win)
        mean[half:T - half] = view.mean(axis=2).T
        std[half:T - half] = view.std(axis=2).T
        if win > 1:
            dview = sliding_window_view(diff, win - 1, axis=1)
            dabs[half:T - half] = dview.mean(axis=2).T
    edges = [t for t in range(T) if t not in inner]
    for t in edges:
        lo, hi = max(0, t - half), min(T, t + half + 1)
        mean[t] = x[:, lo:hi].mean(axis=1)
        std[t] = x[:, lo:hi].std(axis=1)
        if hi - lo > 1:
            dabs[t] = diff[:, lo:hi - 1].mean(axis=1)
    return np.concatenate([mean, std, dabs], axis=1)


@dataclass
class ToyModel:
    W_cls: np.ndarray
    b_cls: np.ndarray
    w_att: np.ndarray
    b_att: float
    pooling: str = "attention"

    @property
    def num_classes(self) -> int:
        return self.W_cls.shape[1]

    def frame_scores(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(np.asarray(X, dtype=float) @ self.W_cls + self.b_cls)

    def attention(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(np.asarray(X, dtype=float) @ self.w_att + self.b_att)

    def copy(self) -> "ToyModel":
        return ToyModel(self.W_cls.copy(), self.b_cls.copy(), self.w_att.copy(),
                        float(self.b_att), self.pooling)

    def to_dict(self) -> dict:
        return {"W_cls": self.W_cls.tolist(), "b_cls": self.b_cls.tolist(),
                "w_att": self.w_att.tolist(), "b_att": float(self.b_att),
                "pooling": self.pooling}

    @classmethod
    def from_dict(cls, obj: dict) -> "ToyModel":
        return cls(np.asarray(obj["W_cls"], dtype=float), np.asarray(obj["b_cls"], dtype=float),
                   np.asarray(obj["w_att"], dtype=float), float(obj["b_att"]),
                   obj.get("pooling", "attention"))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    epochs: int = 80
    lr_decay: float = 0.9
    lr_decay_every: int = 10
    seed: int = 2022
    init_scale: float = 0.01
    pooling: str = "attention"
    freeze_attention: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        return cls(**{k: v for k, v in obj.items() if k in cls.__dataclass_fields__})

    def as_dict(self) -> dict:
        return asdict(self)


def init_model(D: int, C: int, cfg: TrainConfig) -> ToyModel:
    rng = np.random.default_rng(cfg.seed)
    return ToyModel(W_cls=cfg.init_scale * rng.standard_normal((D, C)),
                    b_cls=np.zeros(C),
                    w_att=np.zeros(D) if cfg.freeze_attention else cfg.init_scale * rng.standard_normal(D),
                    b_att=0.0, pooling=cfg.pooling)


@dataclass
class _Batch:
    X: np.ndarray          # all frames of all bags, stacked
    offsets: np.ndarray    # first frame of each bag
    bag_of: np.ndarray     # bag index per frame
    Y: np.ndarray          # (n_bags, C)


def _batch(features: Sequence[np.ndarray], labels: Sequence[np.ndarray]) -> _Batch:
    if len(features) == 0:
        raise ValueError("empty training set")
    if len(features) != len(labels):
        raise ValueError("one bag label per feature matrix is required")
    dims = {np.asarray(f).shape[1] for f in features}
    if len(dims) != 1:
        raise ValueError(f"inconsistent feature dimensions: {sorted(dims)}")
    lengths = np.array([len(f) for f in features])
    if np.any(lengths == 0):
        raise ValueError("empty bag")
    X = np.concatenate([np.asarray(f, dtype=float) for f in features])
    offsets = np.concatenate(([0], np.cumsum(lengths)[:-1]))
    return _Batch(X, offsets, np.repeat(np.arange(len(features)), lengths),
                  np.asarray(labels, dtype=float))


def _pool_forward(model: ToyModel, b: _Batch, frozen: bool):
    p = model.frame_scores(b.X)
    if model.pooling == "attention":
        alpha = np.ones(len(b.X)) if frozen else model.attention(b.X)
        s_alpha = np.add.reduceat(alpha, b.offsets)
        bag = np.add.reduceat(alpha[:, None] * p, b.offsets) / s_alpha[:, None]
        return p, bag, (alpha, s_alpha)
    if model.pooling == "max":
        bag = np.maximum.reduceat(p, b.offsets)
        return p, bag, None
    s1 = np.add.reduceat(p, b.offsets)
    s2 = np.add.reduceat(p * p, b.offsets)
    return p, s2 / s1, (s1, s2)


def objective(model: ToyModel, features, labels, cfg: TrainConfig, batch: _Batch | None = None):
    """Training loss and its gradient with respect to every model parameter.

    Loss = mean over bags of the bag BCE + weight_decay * squared L2 norm of
    the trainable parameters.
    """
    b = batch if batch is not None else _batch(features, labels)
    frozen = cfg.freeze_attention
    p, bag_raw, aux = _pool_forward(model, b, frozen)
    bag = np.clip(bag_raw, BAG_EPS, 1 - BAG_EPS)
    # mean over bags of per-bag class-mean BCE == mean over all entries
    loss, G = bce_bag_loss(bag.ravel(), b.Y.ravel())
    G = G.reshape(bag.shape) * ((bag_raw > BAG_EPS) & (bag_raw < 1 - BAG_EPS))

    d_alpha = None
    if model.pooling == "attention":
        alpha, s_alpha = aux
        scale = (G / s_alpha[:, None])[b.bag_of]
        dp = scale * alpha[:, None]
        if not frozen:
            d_alpha = np.sum(scale * (p - bag_raw[b.bag_of]), axis=1)
    elif model.pooling == "max":
        dp = np.zeros_like(p)
        for i, (lo, hi) in enumerate(zip(b.offsets, list(b.offsets[1:]) + [len(p)])):
            arg = np.argmax(p[lo:hi], axis=0)
            dp[lo + arg, np.arange(p.shape[1])] += G[i]
    else:
        s1, s2 = aux
        dp = G[b.bag_of] * (2 * p * s1[b.bag_of] - s2[b.bag_of]) / s1[b.bag_of] ** 2

    wd = cfg.weight_decay
    dz = dp * p * (1 - p)
    grads = {"W_cls": b.X.T @ dz + 2 * wd * model.W_cls,
             "b_cls": dz.sum(axis=0) + 2 * wd * model.b_cls}
    loss += wd * (np.sum(model.W_cls ** 2) + np.sum(model.b_cls ** 2))
    if model.pooling == "attention" and not frozen:
        du = d_alpha * alpha * (1 - alpha)
        grads["w_att"] = b.X.T @ du + 2 * wd * model.w_att
        grads["b_att"] = float(du.sum() + 2 * wd * model.b_att)
        loss += wd * (np.sum(model.w_att ** 2) + model.b_att ** 2)
    else:
        grads["w_att"] = np.zeros_like(model.w_att)
        grads["b_att"] = 0.0
    return float(loss), grads


def train_mil(features: Sequence[np.ndarray], labels: Sequence[np.ndarray],
              cfg: TrainConfig = TrainConfig(), history: list | None = None) -> ToyModel:
    """Fit a :class:`ToyModel` to bags of frame features with bag labels.

    ``history``, when given, receives the objective value before each epoch's
    update and once more after the last one.
    """
    b = _batch(features, labels)
    model = init_model(b.X.shape[1], b.Y.shape[1], cfg)
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate * cfg.lr_decay ** (epoch // cfg.lr_decay_every)
        loss, g = objective(model, None, None, cfg, batch=b)
        if history is not None:
            history.append(loss)
        model.W_cls -= lr * g["W_cls"]
        model.b_cls -= lr * g["b_cls"]
        model.w_att -= lr * g["w_att"]
        model.b_att -= lr * g["b_att"]
    if history is not None and cfg.epochs:
        history.append(objective(model, None, None, cfg, batch=b)[0])
    return model


# inference ------------------------------------------------------------------

@dataclass(frozen=True)
class RefineConfig:
    """Score propagation over neighbouring frames before thresholding."""
    alpha: float = 0.5
    steps: int = 10
    radius: int = 5


def class_activation(model: ToyModel, X: np.ndarray, smooth: int = 1,
                     refine: RefineConfig | None = None) -> np.ndarray:
    cas = model.frame_scores(X)
    if refine is not None and len(cas) > 1:
        A = frame_affinity(len(cas), refine.radius)
        cas = rskp_propagate(cas, A, refine.alpha, refine.steps)
    if smooth > 1:
        cas = uniform_filter1d(cas, size=smooth, axis=0, mode="nearest")
    return np.clip(cas, 0.0, 1.0)


def cas_to_segments(cas: np.ndarray, thresh: float, fps: float = 1.0, offset: int = 0,
                    sequence_id: str = "", duration: float | None = None) -> list[Segment]:
    """Maximal above-threshold runs per class, scored by their mean activation."""
    out = []
    for c in range(cas.shape[1]):
        for lo, hi in runs(cas[:, c] >= thresh):
            start, end = (offset + lo) / fps, (offset + hi) / fps
            if duration is not None:
                end = min(end, duration)
            if end <= start:
                continue
            score = float(np.clip(cas[lo:hi, c].mean(), 0.0, 1.0))
            out.append(Segment(c + 1, start, end, score, sequence_id))
    return out


def window_starts(T: int, window_len: int) -> list[int]:
    """Window starts with 50 % overlap; a last window is aligned to the stream end."""
    if T <= window_len:
        return [0]
    stride = half_stride(window_len)
    starts = list(range(0, T - window_len + 1, stride))
    if starts[-1] + window_len < T:
        starts.append(T - window_len)
    return starts


def infer(model: ToyModel, features: np.ndarray, mode: str = "full", window_len: int | None = None,
          thresh: float = 0.5, *, fps: float = 1.0, smooth: int = 1,
          nms: NmsConfig = NmsConfig(), refine: RefineConfig | None = None,
          sequence_id: str = "", duration: float | None = None) -> list[Segment]:
    """Localize actions in one stream from its frame class activations.

    ``full`` thresholds the CAS of the whole stream; ``window`` processes
    overlapping windows independently and merges their segments with NMS.
    """
    X = np.asarray(features, dtype=float)
    T = len(X)
    if mode == "full":
        cas = class_activation(model, X, smooth, refine)
        segs = cas_to_segments(cas, thresh, fps, 0, sequence_id, duration)
    elif mode == "window":
        if window_len is None or window_len < 2:
            raise ValueError("window mode needs window_len >= 2")
        segs = []
        for s in window_starts(T, window_len):
            cas = class_activation(model, X[s:s + window_len], smooth, refine)
            segs.extend(cas_to_segments(cas, thresh, fps, s, sequence_id, duration))
    else:
        raise ValueError(f"unknown inference mode {mode!r}")
    return temporal_nms(segs, nms)
