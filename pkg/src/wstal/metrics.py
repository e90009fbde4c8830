"""Frame-level P/R/F1, misalignment ratios and segment-level AP/mAP.

Frame metrics run on rasterized label vectors (0 = null). Segment metrics
match predictions to ground truth of the same class and sequence by tIoU.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import Segment, SequenceRecord, rasterize, runs, tiou

DEFAULT_THRESHOLDS = (0.3, 0.4, 0.5, 0.6, 0.7)
WARD_KEYS = ("UR", "OR", "DR", "IR", "FR", "MR")
REPORT_COLUMNS = ("P", "R", "F1", "UR", "OR", "DR", "IR", "FR", "MR", "mAP")


@dataclass(frozen=True)
class ClassPRF:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class FramePRF:
    per_class: dict[int, ClassPRF]
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class MisalignmentRatios:
    UR: float = 0.0
    OR: float = 0.0
    DR: float = 0.0
    IR: float = 0.0
    FR: float = 0.0
    MR: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in WARD_KEYS}


@dataclass
class EvalReport:
    per_class: dict[int, dict[str, float]]
    precision: float
    recall: float
    f1: float
    ward: MisalignmentRatios
    ap: dict[int, dict[float, float]]
    map_per_threshold: dict[float, float]
    mAP: float
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    meta: dict = field(default_factory=dict)

    def row(self) -> dict[str, float]:
        """The headline numbers in table order; P/R/F1/mAP as percentages."""
        out = {"P": 100 * self.precision, "R": 100 * self.recall, "F1": 100 * self.f1}
        out.update(self.ward.as_dict())
        out["mAP"] = 100 * self.mAP
        return out

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "per_class": {str(c): v for c, v in sorted(self.per_class.items())},
            "misalignment": self.ward.as_dict(),
            "ap": {str(c): {f"{t:g}": v for t, v in sorted(per.items())}
                   for c, per in sorted(self.ap.items())},
            "map_per_threshold": {f"{t:g}": v for t, v in sorted(self.map_per_threshold.items())},
            "mAP": self.mAP,
            "thresholds": list(self.thresholds),
            "meta": self.meta,
        }


def _ratio(num: int, den: int) -> float:
    return num / den if den > 0 else 0.0


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def confusion_counts(gt: np.ndarray, pred: np.ndarray, num_classes: int) -> np.ndarray:
    """(num_classes + 1, 3) array of TP, FP, FN frame counts indexed by class."""
    gt = np.asarray(gt, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if gt.shape != pred.shape:
        raise ValueError(f"label sequences differ in length: {gt.shape} vs {pred.shape}")
    n = num_classes + 1
    hit = gt == pred
    tp = np.bincount(gt[hit], minlength=n)
    fp = np.bincount(pred[~hit], minlength=n)
    fn = np.bincount(gt[~hit], minlength=n)
    return np.stack([tp, fp, fn], axis=1)


def prf_from_counts(counts: np.ndarray, classes: Iterable[int]) -> FramePRF:
    per_class = {}
    for c in classes:
        tp, fp, fn = (int(v) for v in counts[c])
        p, r = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
        per_class[c] = ClassPRF(tp, fp, fn, p, r, _f1(p, r))
    if not per_class:
        return FramePRF({}, 0.0, 0.0, 0.0)
    vals = list(per_class.values())
    return FramePRF(per_class,
                    float(np.mean([v.precision for v in vals])),
                    float(np.mean([v.recall for v in vals])),
                    float(np.mean([v.f1 for v in vals])))


def frame_prf(gt, pred) -> FramePRF:
    """Per-class and macro precision/recall/F1 over frames.

    Zero denominators give 0. The macro average covers classes that occur in
    either sequence, never the null class.
    """
    gt = np.asarray(gt, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if gt.shape != pred.shape:
        raise ValueError(f"label sequences differ in length: {gt.shape} vs {pred.shape}")
    top = int(max(gt.max(initial=0), pred.max(initial=0)))
    counts = confusion_counts(gt, pred, top)
    present = (set(np.unique(gt).tolist()) | set(np.unique(pred).tolist())) - {0}
    return prf_from_counts(counts, sorted(present))


# misalignment ---------------------------------------------------------------

def ward_frame_counts(gt, pred, class_id: int) -> dict[str, int]:
    """Frame counts of the six alignment errors for one class.

    Ground-truth runs with no predicted frame are deletions; otherwise the
    uncovered frames before the first / after the last covered frame are
    underfill and those in between are fragmentation. Prediction runs are
    split the same way into insertion, overfill and merge.
    """
    g = np.asarray(gt) == class_id
    p = np.asarray(pred) == class_id
    out = dict.fromkeys(WARD_KEYS, 0)
    for ref, other, whole, edge, inner in ((g, p, "DR", "UR", "FR"), (p, g, "IR", "OR", "MR")):
        for lo, hi in runs(ref):
            hits = np.flatnonzero(other[lo:hi])
            if hits.size == 0:
                out[whole] += hi - lo
                continue
            first, last = int(hits[0]), int(hits[-1])
            out[edge] += first + (hi - lo - 1 - last)
            out[inner] += (last - first + 1) - hits.size
    return out


def ward_errors(gt_segments: Sequence[Segment], pred_segments: Sequence[Segment], fps: float,
                duration: float, num_classes: int | None = None,
                normalize: str = "sequence") -> MisalignmentRatios:
    """Six misalignment ratios for one sequence, as class-averaged percentages."""
    gt = rasterize(gt_segments, fps, duration)
    pred = rasterize(pred_segments, fps, duration)
    return ward_ratios([(gt, pred)], num_classes=num_classes, normalize=normalize)


def ward_ratios(pairs: Iterable[tuple[np.ndarray, np.ndarray]], num_classes: int | None = None,
                normalize: str = "sequence") -> MisalignmentRatios:
    """Pool error frames over several (gt, pred) label pairs, then normalize.

    ``normalize="sequence"`` divides by the total number of frames,
    ``"gt"`` by the class's ground-truth frames (classes with none are skipped).
    Ratios are averaged over classes seen in either gt or pred.
    """
    if normalize not in ("sequence", "gt"):
        raise ValueError(f"unknown normalization {normalize!r}")
    pairs = [(np.asarray(g), np.asarray(p)) for g, p in pairs]
    if num_classes is None:
        num_classes = int(max([0] + [max(g.max(initial=0), p.max(initial=0)) for g, p in pairs]))
    totals = {c: dict.fromkeys(WARD_KEYS, 0) for c in range(1, num_classes + 1)}
    gt_frames = dict.fromkeys(totals, 0)
    pred_frames = dict.fromkeys(totals, 0)
    n_frames = 0
    for g, p in pairs:
        n_frames += len(g)
        for c in totals:
            for k, v in ward_frame_counts(g, p, c).items():
                totals[c][k] += v
            gt_frames[c] += int(np.count_nonzero(g == c))
            pred_frames[c] += int(np.count_nonzero(p == c))

    ratios = []
    for c, counts in totals.items():
        den = n_frames if normalize == "sequence" else gt_frames[c]
        # classes absent from both sides do not enter the average
        if den == 0 or gt_frames[c] + pred_frames[c] == 0:
            continue
        ratios.append({k: 100.0 * v / den for k, v in counts.items()})
    if not ratios:
        return MisalignmentRatios()
    return MisalignmentRatios(**{k: float(np.mean([r[k] for r in ratios])) for k in WARD_KEYS})


# average precision ----------------------------------------------------------

def _match(preds: list[Segment], gts: list[Segment], tau: float) -> np.ndarray:
    gts_by_seq: dict[str, list[int]] = defaultdict(list)
    for i, g in enumerate(gts):
        gts_by_seq[g.sequence_id].append(i)
    used = np.zeros(len(gts), dtype=bool)
    is_tp = np.zeros(len(preds), dtype=bool)
    for k, pr in enumerate(preds):
        best, best_iou = -1, -1.0
        for i in gts_by_seq.get(pr.sequence_id, ()):
            if used[i]:
                continue
            ov = tiou(pr.interval, gts[i].interval)
            if ov >= tau and ov > best_iou:
                best, best_iou = i, ov
        if best >= 0:
            used[best] = True
            is_tp[k] = True
    return is_tp


def interpolated_ap(is_tp: np.ndarray, n_pos: int) -> float:
    """All-point AP: area under the monotone precision envelope."""
    if n_pos == 0 or len(is_tp) == 0:
        return 0.0
    tp = np.cumsum(is_tp)
    fp = np.cumsum(~is_tp)
    recall = tp / n_pos
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate(([0.0], recall)))
    return float(np.sum(steps * envelope))


def ranked(preds: Iterable[Segment]) -> list[Segment]:
    return sorted(preds, key=lambda s: (-s.score, s.start, s.end, s.sequence_id))


def ap_at_tiou(preds: Iterable[Segment], gts: Iterable[Segment], class_id: int,
               tau: float) -> float | None:
    """AP of one class at one tIoU threshold (match counts when tIoU >= tau).

    With no ground truth of the class the AP is 0 if anything was predicted
    and ``None`` (not evaluable) otherwise.
    """
    p = ranked(s for s in preds if s.class_id == class_id)
    g = [s for s in gts if s.class_id == class_id]
    if any(s.score is None for s in p):
        raise ValueError("predictions must carry scores")
    if not g:
        return 0.0 if p else None
    return interpolated_ap(_match(p, g, tau), len(g))


def ap_table(preds, gts, thresholds=DEFAULT_THRESHOLDS, classes=None) -> dict[int, dict[float, float]]:
    preds, gts = list(preds), list(gts)
    if classes is None:
        classes = sorted({s.class_id for s in preds} | {s.class_id for s in gts})
    table = {}
    for c in classes:
        per = {t: ap_at_tiou(preds, gts, c, t) for t in thresholds}
        if all(v is not None for v in per.values()):
            table[c] = per
    return table


def mean_ap(preds, gts, thresholds=DEFAULT_THRESHOLDS, classes=None) -> float:
    """Mean over thresholds of the mean AP over evaluable classes."""
    thresholds = tuple(thresholds)
    if not thresholds:
        raise ValueError("need at least one tIoU threshold")
    table = ap_table(preds, gts, thresholds, classes)
    if not table:
        raise ValueError("no evaluable classes: neither ground truth nor predictions")
    return float(np.mean([np.mean([table[c][t] for c in table]) for t in thresholds]))


# full report ------------------------------------------------------------------

def evaluate(records: Sequence[SequenceRecord], preds: Iterable[Segment],
             thresholds=DEFAULT_THRESHOLDS, normalize: str = "sequence") -> EvalReport:
    """Every metric over a set of sequences; ``records`` carry the ground truth.

    Frame counts are pooled over sequences before computing ratios.
    """
    preds = list(preds)
    known = {r.sequence_id for r in records}
    stray = {s.sequence_id for s in preds} - known
    if stray:
        raise ValueError(f"predictions for unknown sequences: {sorted(stray)}")
    num_classes = max(r.num_classes for r in records)
    pred_by_seq: dict[str, list[Segment]] = defaultdict(list)
    for s in preds:
        pred_by_seq[s.sequence_id].append(s)

    counts = np.zeros((num_classes + 1, 3), dtype=np.int64)
    pairs = []
    present: set[int] = set()
    for rec in records:
        g = rasterize(list(rec.gt), rec.fps, rec.duration)
        p = rasterize(pred_by_seq.get(rec.sequence_id, []), rec.fps, rec.duration)
        counts += confusion_counts(g, p, num_classes)
        pairs.append((g, p))
        present |= set(np.unique(g).tolist()) | set(np.unique(p).tolist())
    prf = prf_from_counts(counts, sorted(present - {0}))
    ward = ward_ratios(pairs, num_classes=num_classes, normalize=normalize)

    gts = [s for r in records for s in r.gt]
    table = ap_table(preds, gts, thresholds)
    if table:
        per_t = {t: float(np.mean([table[c][t] for c in table])) for t in thresholds}
        m = float(np.mean(list(per_t.values())))
    else:
        per_t = {t: 0.0 for t in thresholds}
        m = 0.0
    per_class = {c: {"precision": v.precision, "recall": v.recall, "f1": v.f1,
                     "tp": v.tp, "fp": v.fp, "fn": v.fn} for c, v in prf.per_class.items()}
    return EvalReport(per_class, prf.precision, prf.recall, prf.f1, ward, table, per_t, m,
                      tuple(thresholds))


def format_table(rows: Mapping[str, Mapping[str, object]], columns=REPORT_COLUMNS) -> str:
    """Plain-text table; values that are not strings are printed with 2 decimals."""
    name_w = max([len("model")] + [len(k) for k in rows])
    cells = {k: [v if isinstance(v, str) else f"{v:.2f}" for v in (r[c] for c in columns)]
             for k, r in rows.items()}
    widths = [max([len(c)] + [len(cells[k][i]) for k in rows]) for i, c in enumerate(columns)]
    lines = ["  ".join(["model".ljust(name_w)] + [c.rjust(w) for c, w in zip(columns, widths)])]
    for k in rows:
        lines.append("  ".join([k.ljust(name_w)] + [v.rjust(w) for v, w in zip(cells[k], widths)]))
    return "\n".join(lines)
