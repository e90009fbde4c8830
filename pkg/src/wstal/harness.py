"""Benchmark orchestration: run accounting, LOSO splits, the end-to-end
pipeline (train -> infer -> postprocess -> eval) and result aggregation.
"""

from __future__ import annotations

import csv
import fcntl
import math
import re
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import io
from .core import rasterize
from .metrics import DEFAULT_THRESHOLDS, REPORT_COLUMNS, EvalReport, evaluate, format_table
from .postprocess import NmsConfig, resolve_and_merge
from .synth import load_dataset
from .trainer import RefineConfig, TrainConfig, infer, make_clips, train_mil

DEFAULT_SEEDS = (2022, 2024, 2026)

# (dataset, seeds, subjects, models) reference counts for the seven IMU corpora;
# XRFV2 counts its four LOSO subjects plus the in-domain split.
REFERENCE_ACCOUNTING = (
    ("SBHAR", 3, 30, 10),
    ("Opportunity", 3, 4, 10),
    ("WetLab", 3, 22, 10),
    ("Hang-Time", 3, 24, 10),
    ("RWHAR", 3, 15, 10),
    ("WEAR", 3, 18, 10),
    ("XRFV2", 3, 5, 10),
)

# window_input lengths in seconds
REFERENCE_WINDOWS = {"Opportunity": 100.0, "Hang-Time": 100.0, "RWHAR": 1000.0, "SBHAR": 1000.0,
                 "WEAR": 1000.0, "WetLab": 1000.0, "XRFV2": 30.0}


@dataclass(frozen=True)
class ModelSpec:
    pooling: str
    refine: bool
    description: str


MODELS = {
    "attention": ModelSpec("attention", False, "frame scores + attention MIL pooling (DCASE-style)"),
    "linsoft": ModelSpec("linsoft", False, "frame scores + linear-softmax pooling (CDur's pooling)"),
    "max": ModelSpec("max", False, "frame scores + max pooling"),
    "attention+rskp": ModelSpec("attention", True, "attention pooling + score propagation (RSKP)"),
}


# accounting -------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetPlan:
    dataset: str
    seeds: int
    subjects: int
    models: int

    @property
    def runs(self) -> int:
        return self.seeds * self.subjects * self.models


@dataclass(frozen=True)
class BenchmarkPlan:
    datasets: tuple[DatasetPlan, ...]

    @property
    def total(self) -> int:
        return sum(d.runs for d in self.datasets)

    def table(self) -> str:
        lines = [f"{'dataset':<12} {'seeds':>5} {'subjects':>8} {'models':>6} {'runs':>6}"]
        for d in self.datasets:
            lines.append(f"{d.dataset:<12} {d.seeds:>5} {d.subjects:>8} {d.models:>6} {d.runs:>6}")
        lines.append(f"{'total':<12} {'':>5} {'':>8} {'':>6} {self.total:>6}")
        return "\n".join(lines)


def _count(v) -> int:
    n = len(v) if isinstance(v, (list, tuple)) else int(v)
    if n < 1:
        raise ValueError("seed, subject and model counts must be positive")
    return n


def plan_runs(entries: Iterable = REFERENCE_ACCOUNTING) -> BenchmarkPlan:
    """Seeds x subjects x models per dataset; lists are counted by length."""
    plans = []
    for e in entries:
        if isinstance(e, dict):
            e = (e["dataset"], e["seeds"], e["subjects"], e["models"])
        name, seeds, subjects, models = e
        plans.append(DatasetPlan(str(name), _count(seeds), _count(subjects), _count(models)))
    return BenchmarkPlan(tuple(plans))


def loso_splits(subject_ids: Iterable[str]) -> list[tuple[list[str], str]]:
    """(train subjects, test subject) per subject, in sorted subject order."""
    subjects = sorted(set(subject_ids))
    if len(subjects) < 2:
        raise ValueError("leave-one-subject-out needs at least two subjects")
    return [([s for s in subjects if s != test], test) for test in subjects]


# pipeline -----------------------------------------------------------------------

@dataclass(frozen=True)
class HarnessConfig:
    train: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=1.0, epochs=300))
    clip_sec: float = 4.0
    thresh: float = 0.5
    smooth: int = 9
    nms_iou: float = 0.5
    class_wise: bool = True
    merge: bool = False
    refine: RefineConfig = field(default_factory=RefineConfig)
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    num_proposals: int = 3000
    ward_normalize: str = "sequence"

    @classmethod
    def from_dict(cls, obj: dict) -> "HarnessConfig":
        kw = {k: v for k, v in obj.items() if k in cls.__dataclass_fields__}
        if "train" in kw:
            kw["train"] = TrainConfig.from_dict(kw["train"])
        if "refine" in kw:
            kw["refine"] = RefineConfig(**kw["refine"])
        for key in ("thresholds", "seeds"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RunConfig:
    dataset: str
    seed: int
    held_out: str | None
    model: str = "attention"
    mode: str = "full"
    window_sec: float | None = None

    def __post_init__(self):
        if self.mode not in ("full", "window"):
            raise ValueError(f"mode must be full or window, got {self.mode!r}")
        if (self.window_sec is not None) != (self.mode == "window"):
            raise ValueError("window_sec is required for window mode and only for it")
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; known: {sorted(MODELS)}")

    @property
    def name(self) -> str:
        ds = Path(self.dataset).name or "dataset"
        parts = [ds, self.model, self.mode, f"seed{self.seed}", self.held_out or "indomain"]
        return re.sub(r"[^A-Za-z0-9_.-]+", "-", "__".join(parts))


def clip_bags(records_feats, clip_frames: int):
    """Clips with 50 % overlap and the multi-hot label of classes inside each."""
    feats, labels = [], []
    for rec, X in records_feats:
        lab = rasterize(list(rec.gt), rec.fps, rec.duration)
        W = min(clip_frames, len(X))
        for lo, hi in make_clips(len(X), W):
            y = np.zeros(rec.num_classes)
            present = np.unique(lab[lo:hi])
            y[present[present > 0] - 1] = 1
            feats.append(X[lo:hi])
            labels.append(y)
    return feats, labels


def execute(run: RunConfig, data, config: HarnessConfig = HarnessConfig()):
    """Train and evaluate one run on in-memory data; returns (report, predictions, model)."""
    spec = MODELS[run.model]
    if run.held_out is None:
        train_set = test_set = list(data)
    else:
        subjects = {rec.subject_id for rec, _ in data}
        if run.held_out not in subjects:
            raise ValueError(f"held-out subject {run.held_out!r} not in dataset")
        train_set = [d for d in data if d[0].subject_id != run.held_out]
        test_set = [d for d in data if d[0].subject_id == run.held_out]
    if not train_set:
        raise ValueError("no training sequences left")

    fps = train_set[0][0].fps
    feats, labels = clip_bags(train_set, max(2, int(round(config.clip_sec * fps))))
    tcfg = TrainConfig.from_dict({**config.train.as_dict(), "seed": run.seed, "pooling": spec.pooling})
    model = train_mil(feats, labels, tcfg)

    nms = NmsConfig(config.nms_iou, config.class_wise)
    preds = []
    for rec, X in test_set:
        wlen = None if run.window_sec is None else max(2, int(round(run.window_sec * rec.fps)))
        segs = infer(model, X, run.mode, wlen, config.thresh, fps=rec.fps, smooth=config.smooth,
                     nms=nms, refine=config.refine if spec.refine else None,
                     sequence_id=rec.sequence_id, duration=rec.duration)
        if config.merge:
            segs = resolve_and_merge(segs)
        preds.extend(segs)
    report = evaluate([rec for rec, _ in test_set], preds, config.thresholds, config.ward_normalize)
    report.meta = {"dataset": Path(run.dataset).name, "model": run.model, "mode": run.mode,
                   "seed": run.seed, "held_out": run.held_out, "window_sec": run.window_sec,
                   "train_sequences": len(train_set), "test_sequences": len(test_set)}
    return report, preds, model


AGG_FIELDS = ("dataset", "model", "mode", "window_sec", "seed", "subject") + REPORT_COLUMNS


def append_aggregate(path, report: EvalReport) -> None:
    """Append one result row; appends are serialized with an exclusive file lock."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    m = report.meta
    row = {"dataset": m["dataset"], "model": m["model"], "mode": m["mode"],
           "window_sec": "" if m["window_sec"] is None else repr(float(m["window_sec"])),
           "seed": m["seed"], "subject": m["held_out"] or "indomain"}
    row.update({k: repr(float(v)) for k, v in report.row().items()})
    with path.open("a", newline="") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            fh.seek(0, 2)
            writer = csv.DictWriter(fh, fieldnames=AGG_FIELDS)
            if fh.tell() == 0:
                writer.writeheader()
            writer.writerow(row)
            fh.flush()
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def run_pipeline(run: RunConfig, dataset_dir, out_dir=None,
                 config: HarnessConfig = HarnessConfig()) -> EvalReport:
    """Run one configuration on a dataset directory and persist its outputs.

    Writes ``runs/<name>/{report.json,predictions.jsonl,model.json}`` under
    ``out_dir`` and appends a row to ``out_dir/aggregate.csv``.
    """
    root = Path(dataset_dir)
    for required in ("metadata.jsonl", "gt.jsonl"):
        if not (root / required).exists():
            raise FileNotFoundError(f"missing dataset file: {root / required}")
    data = load_dataset(root)
    report, preds, model = execute(run, data, config)
    if out_dir is not None:
        run_dir = Path(out_dir) / "runs" / run.name
        io.write_json(run_dir / "report.json", report.to_dict())
        io.write_segments(run_dir / "predictions.jsonl", preds)
        io.write_json(run_dir / "model.json", model.to_dict())
        append_aggregate(Path(out_dir) / "aggregate.csv", report)
    return report


# aggregation ----------------------------------------------------------------------

def read_aggregate(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def summarize(rows: Sequence[dict]) -> dict[str, dict[str, dict[str, float]]]:
    """Mean of every metric per ``dataset/model`` and inference mode."""
    if not rows:
        raise ValueError("aggregate has no runs")
    groups: dict[tuple[str, str], list[dict]] = defaultdict(list)
    for r in rows:
        groups[(f"{r['dataset']}/{r['model']}", r["mode"])].append(r)
    out: dict[str, dict[str, dict[str, float]]] = defaultdict(dict)
    for (key, mode), members in sorted(groups.items()):
        # fsum is exactly rounded, so the mean does not depend on row order
        out[key][mode] = {c: math.fsum(float(m[c]) for m in members) / len(members)
                          for c in REPORT_COLUMNS}
        out[key][mode]["runs"] = len(members)
    return dict(out)


def report(rows_or_path) -> str:
    """Text table of per-model means; cells read ``window|full`` when both exist."""
    rows = read_aggregate(rows_or_path) if isinstance(rows_or_path, (str, Path)) else rows_or_path
    table = {}
    for key, modes in summarize(rows).items():
        if "window" in modes and "full" in modes:
            table[key] = {c: f"{modes['window'][c]:.2f}|{modes['full'][c]:.2f}" for c in REPORT_COLUMNS}
        else:
            only = next(iter(modes.values()))
            table[key] = {c: only[c] for c in REPORT_COLUMNS}
    return format_table(table)


def write_summary_csv(path, summary) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["key", "mode", "runs", *REPORT_COLUMNS])
        for key, modes in summary.items():
            for mode, vals in sorted(modes.items()):
                w.writerow([key, mode, vals["runs"], *(f"{vals[c]:.6f}" for c in REPORT_COLUMNS)])


def plan_loso(dataset_dir, models: Sequence[str], seeds: Sequence[int], mode: str = "full",
              window_sec: float | None = None, in_domain: bool = False) -> list[RunConfig]:
    """Every RunConfig of a LOSO sweep over a dataset directory."""
    subjects = [r.subject_id for r in io.read_metadata(Path(dataset_dir) / "metadata.jsonl")]
    held = [None] if in_domain else [test for _, test in loso_splits(subjects)]
    return [RunConfig(str(dataset_dir), seed, h, m, mode, window_sec)
            for m in models for seed in seeds for h in held]
