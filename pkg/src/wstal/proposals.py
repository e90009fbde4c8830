"""Multi-scale temporal proposal sampling for 1-D streams.

A content-agnostic stand-in for Selective Search: a fixed share of the
proposals is drawn from per-scale sliding-window pools, the rest have
uniformly random duration and start. All boxes are in feature-frame units.

Randomness comes from ``numpy.random.default_rng(seed)`` (PCG64), so a
config always yields bit-identical boxes.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class ProposalConfig:
    T_global: int = 1000
    N: int = 3000
    fps: float = 50.0
    W: float = 100.0
    min_sec: float = 1.0
    max_sec: float = 30.0
    sec_resolution: float = 1.0
    fixed_keep_ratio: float = 0.7
    seed: int = 2022
    raw_frames: int | None = None

    def __post_init__(self):
        if self.T_global < 1:
            raise ValueError("T_global must be >= 1")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if not 0 < self.min_sec <= self.max_sec <= self.W:
            raise ValueError("need 0 < min_sec <= max_sec <= W")
        if self.sec_resolution <= 0:
            raise ValueError("sec_resolution must be positive")
        if not 0.0 <= self.fixed_keep_ratio <= 1.0:
            raise ValueError("fixed_keep_ratio must lie in [0, 1]")
        if self.raw_frames is not None and self.raw_frames < 1:
            raise ValueError("raw_frames must be >= 1")

    @classmethod
    def from_dict(cls, obj: dict) -> "ProposalConfig":
        known = {k: v for k, v in obj.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def as_dict(self) -> dict:
        return asdict(self)

    @property
    def frame_ratio(self) -> float:
        raw = self.raw_frames if self.raw_frames is not None else round(self.W * self.fps)
        return self.T_global / raw

    def scales(self) -> list[float]:
        count = int(math.floor((self.max_sec - self.min_sec) / self.sec_resolution + 1e-9)) + 1
        return [self.min_sec + i * self.sec_resolution for i in range(count)]

    def feat_len(self, seconds: float) -> int:
        return int(round(seconds * self.fps * self.frame_ratio))


@dataclass(frozen=True)
class ProposalSet:
    boxes: np.ndarray
    feature_len: int
    seed: int
    n_structured: int = 0
    fallback: bool = False

    def __len__(self) -> int:
        return len(self.boxes)


def _fallback(cfg: ProposalConfig) -> ProposalSet:
    boxes = np.tile(np.array([[0, cfg.T_global]], dtype=np.int64), (cfg.N, 1))
    return ProposalSet(boxes, cfg.T_global, cfg.seed, n_structured=0, fallback=True)


def scale_quotas(n_fixed: int, n_scales: int) -> list[int]:
    """Even split of the structured budget; leftovers go to the longest scales."""
    base, extra = divmod(n_fixed, n_scales)
    return [base + (1 if i >= n_scales - extra else 0) for i in range(n_scales)]


def generate_proposals(cfg: ProposalConfig) -> ProposalSet:
    rng = np.random.default_rng(cfg.seed)
    T = cfg.T_global
    r_f = cfg.frame_ratio

    # per-scale pools, kept implicit as (length, number of feasible starts)
    pool = []
    for s in cfg.scales():
        length = cfg.feat_len(s)
        if 1 <= length <= T:
            pool.append((length, T - length + 1))
    if not pool:
        return _fallback(cfg)

    n_fixed = int(round(cfg.N * cfg.fixed_keep_ratio))
    boxes = []
    for (length, n_starts), quota in zip(pool, scale_quotas(n_fixed, len(pool))):
        q = min(quota, n_starts)
        if q == 0:
            continue
        starts = np.sort(rng.choice(n_starts, size=q, replace=False))
        boxes.append(np.stack([starts, starts + length], axis=1))
    structured = np.concatenate(boxes) if boxes else np.empty((0, 2), dtype=np.int64)
    n_structured = len(structured)

    n_random = cfg.N - n_structured
    # durations are capped at the longest length that fits the feature axis
    max_len = max(length for length, _ in pool)
    max_dur = min(cfg.max_sec, max_len / (cfg.fps * r_f))
    dur = rng.uniform(cfg.min_sec, max(cfg.min_sec, max_dur), size=n_random)
    start_sec = rng.uniform(0.0, 1.0, size=n_random) * np.maximum(cfg.W - dur, 0.0)
    lengths = np.clip(np.round(dur * cfg.fps * r_f), 1, T).astype(np.int64)
    starts = np.round(start_sec * cfg.fps * r_f).astype(np.int64)
    starts = np.clip(starts, 0, T - lengths)
    random_boxes = np.stack([starts, starts + lengths], axis=1)

    all_boxes = np.concatenate([structured.astype(np.int64), random_boxes])
    return ProposalSet(all_boxes, T, cfg.seed, n_structured=n_structured)
