"""MIL pooling, proposal scoring/refinement and loss kernels.

Score matrices are ``(L, C)`` arrays: rows are instances (frames or
proposals), columns are classes. Losses return ``(value, gradient)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .core import tiou_matrix
from .proposals import ProposalSet

BAG_EPS = 1e-6
OICR_IOU_POS = 0.5
PCL_IOU_CLUSTER = 0.4


@dataclass(frozen=True)
class PseudoLabels:
    assignments: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if not (np.all(np.isfinite(w)) and np.all((w >= 0) & (w <= 1))):
            raise ValueError("pseudo-label weights must be finite and lie in [0, 1]")


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _as_scores(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if p.ndim != 2:
        raise ValueError("score matrix must be 2-D (instances x classes)")
    if not np.all(np.isfinite(p)):
        raise ValueError("score matrix has non-finite entries")
    return p


# pooling -------------------------------------------------------------------

def attention_pool(p, alpha) -> np.ndarray:
    """Attention-weighted mean of instance scores, sum(a_t p_t) / sum(a_t)."""
    p = _as_scores(p)
    alpha = np.asarray(alpha, dtype=float).ravel()
    if len(alpha) != len(p):
        raise ValueError(f"{len(alpha)} attention weights for {len(p)} instances")
    if np.any(alpha < 0):
        raise ValueError("attention weights must be non-negative")
    total = alpha.sum()
    if not total > 0:
        raise ValueError("attention weights are all zero")
    return alpha @ p / total


def max_pool(p) -> np.ndarray:
    return _as_scores(p).max(axis=0)


def linear_softmax_pool(p) -> np.ndarray:
    """sum(p^2) / sum(p) per class; an all-zero column pools to 0."""
    p = _as_scores(p)
    s1 = p.sum(axis=0)
    s2 = (p * p).sum(axis=0)
    return np.divide(s2, s1, out=np.zeros_like(s1), where=s1 > 0)


# proposal scoring ----------------------------------------------------------

def wsddn_score(cls_logits, det_logits, eps: float = BAG_EPS):
    """Two-stream proposal scores and the clamped bag prediction.

    Returns ``(s, bag)`` where ``s = softmax_classes(cls) * softmax_proposals(det)``
    and ``bag = clip(s.sum(0), eps, 1 - eps)``.
    """
    cls_logits = np.asarray(cls_logits, dtype=float)
    det_logits = np.asarray(det_logits, dtype=float)
    if cls_logits.shape != det_logits.shape or cls_logits.ndim != 2:
        raise ValueError(f"shape mismatch: {cls_logits.shape} vs {det_logits.shape}")
    c = softmax(cls_logits, axis=1)
    l = softmax(det_logits, axis=0)
    s = c * l
    bag = np.clip(s.sum(axis=0), eps, 1.0 - eps)
    return s, bag


def _boxes(proposals) -> np.ndarray:
    if isinstance(proposals, ProposalSet):
        return np.asarray(proposals.boxes, dtype=float)
    return np.asarray(proposals, dtype=float).reshape(-1, 2)


def oicr_refine(prev_scores, proposals, bag, iou_pos: float = OICR_IOU_POS) -> PseudoLabels:
    """One OICR stage: label proposals near each positive class's top scorer."""
    scores = _as_scores(prev_scores)
    boxes = _boxes(proposals)
    if len(boxes) != len(scores):
        raise ValueError(f"{len(scores)} score rows for {len(boxes)} proposals")
    n = len(boxes)
    assignments = np.zeros(n, dtype=np.int64)
    weights = np.ones(n)
    positives = np.flatnonzero(np.asarray(bag) > 0)
    if positives.size == 0 or n == 0:
        return PseudoLabels(assignments, weights)

    seeds = [int(np.argmax(scores[:, c])) for c in positives]
    seed_scores = np.array([scores[j, c] for j, c in zip(seeds, positives)])
    overlap = tiou_matrix(boxes, boxes[seeds])  # (n, n_pos)
    best = np.full(n, -np.inf)
    for k in np.argsort(-seed_scores, kind="stable"):
        # positives are ascending, so a stable sort keeps lower ids first on ties
        hit = (overlap[:, k] >= iou_pos) & (seed_scores[k] > best)
        assignments[hit] = positives[k] + 1
        weights[hit] = seed_scores[k]
        best[hit] = seed_scores[k]
    return PseudoLabels(assignments, weights)


def pcl_cluster(prev_scores, proposals, bag, iou_cluster: float = PCL_IOU_CLUSTER):
    """PCL-style clustering of above-median proposals per positive class.

    Returns ``(clusters, labels)``; ``clusters`` is a list of
    ``(class_id, member_indices)``. A proposal claimed by clusters of several
    classes goes to the cluster with the larger mean score.
    """
    scores = _as_scores(prev_scores)
    boxes = _boxes(proposals)
    if len(boxes) != len(scores):
        raise ValueError(f"{len(scores)} score rows for {len(boxes)} proposals")
    n = len(boxes)
    clusters: list[tuple[int, np.ndarray]] = []
    for c in np.flatnonzero(np.asarray(bag) > 0):
        col = scores[:, c]
        members = np.flatnonzero(col > np.median(col))
        if members.size == 0:
            continue
        adj = tiou_matrix(boxes[members], boxes[members]) >= iou_cluster
        n_comp, comp = connected_components(sparse.csr_matrix(adj), directed=False)
        for k in range(n_comp):
            clusters.append((int(c) + 1, members[comp == k]))

    assignments = np.zeros(n, dtype=np.int64)
    weights = np.ones(n)
    best = np.full(n, -np.inf)
    means = [float(scores[idx, cid - 1].mean()) for cid, idx in clusters]
    for k in sorted(range(len(clusters)), key=lambda k: (-means[k], clusters[k][0])):
        cid, idx = clusters[k]
        free = idx[means[k] > best[idx]]
        assignments[free] = cid
        weights[free] = means[k]
        best[free] = means[k]
    return clusters, PseudoLabels(assignments, weights)


# propagation ---------------------------------------------------------------

def normalize_affinity(A):
    """Row-normalize a non-negative affinity; all-zero rows become identity rows."""
    if sparse.issparse(A):
        A = sparse.csr_matrix(A, dtype=float)
        if A.shape[0] != A.shape[1]:
            raise ValueError("affinity matrix must be square")
        if A.nnz and A.data.min() < 0:
            raise ValueError("affinity entries must be non-negative")
        rows = np.asarray(A.sum(axis=1)).ravel()
        zero = rows <= 0
        inv = np.where(zero, 0.0, 1.0 / np.where(zero, 1.0, rows))
        out = sparse.diags(inv) @ A + sparse.diags(zero.astype(float))
        return sparse.csr_matrix(out)
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("affinity matrix must be square")
    if np.any(A < 0):
        raise ValueError("affinity entries must be non-negative")
    rows = A.sum(axis=1)
    out = np.divide(A, rows[:, None], out=np.zeros_like(A), where=rows[:, None] > 0)
    zero = np.flatnonzero(rows <= 0)
    out[zero, zero] = 1.0
    return out


def rskp_propagate(S0, A, alpha: float, steps: int) -> np.ndarray:
    """Iterate S <- (1 - alpha) S0 + alpha * norm(A) S for ``steps`` rounds."""
    S0 = _as_scores(S0)
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    A_n = normalize_affinity(A)
    if A_n.shape[0] != len(S0):
        raise ValueError(f"affinity is {A_n.shape} but scores have {len(S0)} rows")
    S = S0.copy()
    for _ in range(steps):
        S = (1.0 - alpha) * S0 + alpha * (A_n @ S)
    return S


def proposal_affinity(boxes) -> np.ndarray:
    """Temporal-proximity affinity between overlapping proposals.

    ``A_ij = exp(-|center_i - center_j| / sigma)`` where the proposals
    overlap, 0 elsewhere; sigma is the median gap between sorted centers.
    """
    boxes = _boxes(boxes)
    centers = boxes.mean(axis=1)
    gaps = np.diff(np.sort(centers))
    gaps = gaps[gaps > 0]
    sigma = float(np.median(gaps)) if gaps.size else 1.0
    dist = np.abs(centers[:, None] - centers[None, :])
    return np.exp(-dist / sigma) * (tiou_matrix(boxes, boxes) > 0)


def frame_affinity(T: int, radius: int, sigma: float | None = None):
    """Sparse banded affinity between frames within ``radius`` of each other."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    sigma = float(sigma) if sigma else max(radius / 2.0, 1.0)
    offsets = list(range(-radius, radius + 1))
    diags = [np.full(T - abs(k), np.exp(-abs(k) / sigma)) for k in offsets]
    return sparse.diags(diags, offsets, shape=(T, T), format="csr")


# losses --------------------------------------------------------------------

def _cosine_and_grads(a: np.ndarray, b: np.ndarray):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    cos = float(a @ b / (na * nb))
    da = b / (na * nb) - cos * a / na**2
    db = a / (na * nb) - cos * b / nb**2
    return cos, da, db


def cola_loss(anchor, positive, negatives, tau: float):
    """InfoNCE-style snippet contrastive loss on cosine similarities.

    Returns ``(loss, grads)`` with ``grads`` holding ``anchor``, ``positive``
    and ``negatives`` (an ``(N, d)`` array).
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    a = np.asarray(anchor, dtype=float).ravel()
    pos = np.asarray(positive, dtype=float).ravel()
    negs = np.atleast_2d(np.asarray(negatives, dtype=float))
    if negs.shape[0] < 1:
        raise ValueError("need at least one negative")
    if pos.shape != a.shape or negs.shape[1] != a.size:
        raise ValueError("all feature vectors must share one dimension")

    sims, d_anchor, d_other = [], [], []
    for other in (pos, *negs):
        s, da, db = _cosine_and_grads(a, other)
        sims.append(s)
        d_anchor.append(da)
        d_other.append(db)
    logits = np.array(sims) / tau
    m = logits.max()
    lse = m + np.log(np.exp(logits - m).sum())
    loss = float(lse - logits[0])

    coef = softmax(logits)
    coef[0] -= 1.0
    coef /= tau  # dL/dsim
    grads = {
        "anchor": np.einsum("k,kd->d", coef, np.array(d_anchor)),
        "positive": coef[0] * d_other[0],
        "negatives": coef[1:, None] * np.array(d_other[1:]),
    }
    return loss, grads


def bce_bag_loss(pred, y):
    """Mean binary cross-entropy over classes and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if pred.shape != y.shape:
        raise ValueError("prediction and label lengths differ")
    if np.any(pred <= 0) or np.any(pred >= 1):
        raise ValueError("predictions must lie strictly inside (0, 1); clamp upstream")
    loss = float(-np.mean(y * np.log(pred) + (1 - y) * np.log1p(-pred)))
    grad = (pred - y) / (pred * (1 - pred)) / pred.size
    return loss, grad
