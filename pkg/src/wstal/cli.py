"""Command line entry point: ``wstal <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .core import SequenceRecord
from .harness import (MODELS, REFERENCE_ACCOUNTING, HarnessConfig, RunConfig, clip_bags, plan_loso,
                      plan_runs, read_aggregate, report, run_pipeline, summarize, write_summary_csv)
from .metrics import DEFAULT_THRESHOLDS, evaluate, format_table
from .postprocess import NmsConfig, resolve_and_merge, temporal_nms
from .proposals import ProposalConfig, generate_proposals
from .synth import SynthConfig, gen_benchmark, load_dataset
from .trainer import RefineConfig, ToyModel, TrainConfig, infer, train_mil


def _load_config(args) -> dict:
    return io.read_json(args.config) if getattr(args, "config", None) else {}


def _harness_config(args) -> HarnessConfig:
    return HarnessConfig.from_dict(_load_config(args))


def _thresholds(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _emit(text: str, path=None) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


# commands -------------------------------------------------------------------

def cmd_synth(args) -> int:
    obj = _load_config(args)
    if args.seed is not None:
        obj["seed"] = args.seed
    cfg = SynthConfig.from_dict(obj)
    subjects = args.subjects or obj.get("subjects", 5)
    per = args.sequences or obj.get("sequences_per_subject", 1)
    if not args.out:
        raise ValueError("synth needs --out <dir>")
    out = gen_benchmark(cfg, subjects, per, args.out)
    print(f"wrote {subjects * per} sequences to {out}")
    return 0


def cmd_propose(args) -> int:
    obj = _load_config(args)
    if args.seed is not None:
        obj["seed"] = args.seed
    props = generate_proposals(ProposalConfig.from_dict(obj))
    lines = ["feat_start,feat_end"] + [f"{a},{b}" for a, b in props.boxes]
    _emit("\n".join(lines) + "\n", args.out)
    if args.out:
        print(f"wrote {len(props)} proposals ({props.n_structured} structured) to {args.out}",
              file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    hc = _harness_config(args)
    data = load_dataset(args.dataset)
    if args.subjects:
        keep = set(args.subjects.split(","))
        data = [d for d in data if d[0].subject_id in keep]
    if not data:
        raise ValueError("no training sequences selected")
    spec = MODELS[args.model]
    fps = data[0][0].fps
    feats, labels = clip_bags(data, max(2, int(round(hc.clip_sec * fps))))
    seed = args.seed if args.seed is not None else hc.train.seed
    tcfg = TrainConfig.from_dict({**hc.train.as_dict(), "seed": seed, "pooling": spec.pooling})
    model = train_mil(feats, labels, tcfg)
    payload = {**model.to_dict(), "model_id": args.model, "train_config": tcfg.as_dict()}
    _emit(json.dumps(payload, indent=2, sort_keys=True) + "\n", args.out)
    return 0


def cmd_infer(args) -> int:
    obj = io.read_json(args.model)
    model = ToyModel.from_dict(obj)
    X = io.read_features(args.features)
    wlen = None if args.window_sec is None else max(2, int(round(args.window_sec * args.fps)))
    spec = MODELS.get(obj.get("model_id", ""))
    refine = RefineConfig() if args.refine or (spec is not None and spec.refine) else None
    segs = infer(model, X, args.mode, wlen, args.thresh, fps=args.fps, smooth=args.smooth,
                 nms=NmsConfig(args.iou_thresh), refine=refine,
                 sequence_id=args.sequence_id or Path(args.features).stem,
                 duration=len(X) / args.fps)
    if args.out:
        io.write_segments(args.out, segs)
    else:
        for s in segs:
            print(json.dumps(io.segment_to_dict(s)))
    return 0


def cmd_postprocess(args) -> int:
    segs = io.read_segments(args.input)
    out = temporal_nms(segs, NmsConfig(args.iou_thresh, args.class_wise))
    if args.merge:
        out = resolve_and_merge(out)
    if args.out:
        io.write_segments(args.out, out)
    else:
        for s in out:
            print(json.dumps(io.segment_to_dict(s)))
    return 0


def _records_without_metadata(gt, preds, fps: float) -> list[SequenceRecord]:
    by_gt, by_pred = io.group_by_sequence(gt), io.group_by_sequence(preds)
    num_classes = max([s.class_id for s in [*gt, *preds]] + [1])
    records = []
    for sid in sorted(set(by_gt) | set(by_pred)):
        end = max(s.end for s in by_gt.get(sid, []) + by_pred.get(sid, []))
        n = int(np.ceil(end * fps - 1e-9))
        records.append(SequenceRecord(sid, "", fps, n / fps if n / fps >= end else end, 1,
                                      num_classes, tuple(by_gt.get(sid, ()))))
    return records


def cmd_eval(args) -> int:
    gt = io.read_segments(args.gt)
    preds = io.read_segments(args.pred)
    if args.metadata:
        records = io.read_metadata(args.metadata, gt)
    else:
        if args.fps is None:
            raise ValueError("eval needs --fps when no --metadata is given")
        records = _records_without_metadata(gt, preds, args.fps)
    thresholds = _thresholds(args.thresholds)
    rep = evaluate(records, preds, thresholds, args.ward_normalize)
    print(json.dumps(rep.to_dict(), indent=2, sort_keys=True))
    print(format_table({"eval": rep.row()}))
    if args.out:
        out = Path(args.out)
        io.write_json(out / "report.json", rep.to_dict())
        with (out / "ap_by_threshold.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class_id", *(f"{t:g}" for t in thresholds)])
            for c, per in sorted(rep.ap.items()):
                w.writerow([c, *(f"{per[t]:.6f}" for t in thresholds)])
            w.writerow(["mean", *(f"{rep.map_per_threshold[t]:.6f}" for t in thresholds)])
        from .plotting import plot_ap_vs_threshold
        plot_ap_vs_threshold(rep.map_per_threshold, out / "map_vs_tiou.png")
    return 0


def cmd_plan(args) -> int:
    entries = _load_config(args).get("datasets", REFERENCE_ACCOUNTING)
    plan = plan_runs(entries)
    print(plan.table())
    if args.out:
        with Path(args.out).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dataset", "seeds", "subjects", "models", "runs"])
            for d in plan.datasets:
                w.writerow([d.dataset, d.seeds, d.subjects, d.models, d.runs])
            w.writerow(["total", "", "", "", plan.total])
    return 0


def cmd_run(args) -> int:
    hc = _harness_config(args)
    if not args.out:
        raise ValueError("run needs --out <dir>")
    models = args.model.split(",")
    seeds = [args.seed] if args.seed is not None else list(hc.seeds)
    if args.subject:
        runs = [RunConfig(args.dataset, s, args.subject, m, args.mode, args.window_sec)
                for m in models for s in seeds]
    else:
        runs = plan_loso(args.dataset, models, seeds, args.mode, args.window_sec, args.in_domain)
    for run in runs:
        rep = run_pipeline(run, args.dataset, args.out, hc)
        print(f"{run.name}: mAP={100 * rep.mAP:.2f} F1={100 * rep.f1:.2f}")
    return 0


def cmd_report(args) -> int:
    path = args.aggregate or (Path(args.out) / "aggregate.csv" if args.out else None)
    if path is None:
        raise ValueError("report needs --aggregate <csv> or --out <dir>")
    rows = read_aggregate(path)
    text = report(rows)
    print(text)
    if args.out:
        from .plotting import write_figures
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "table.txt").write_text(text + "\n")
        summary = summarize(rows)
        write_summary_csv(out / "summary.csv", summary)
        write_figures(summary, out / "figures")
    return 0


# parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON configuration file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS, help="output file or directory")

    parser = argparse.ArgumentParser(prog="wstal", parents=[common],
                                     description="Weakly supervised temporal action localization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic benchmark")
    p.add_argument("--subjects", type=int)
    p.add_argument("--sequences", type=int, help="sequences per subject")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("propose", parents=[common], help="sample temporal proposals")
    p.set_defaults(func=cmd_propose)

    p = sub.add_parser("train", parents=[common], help="train a toy MIL model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", default="attention", choices=sorted(MODELS))
    p.add_argument("--subjects", help="comma-separated training subjects (default: all)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="localize actions with a trained model")
    p.add_argument("--model", required=True, help="model JSON written by train")
    p.add_argument("--features", required=True)
    p.add_argument("--fps", type=float, required=True)
    p.add_argument("--mode", choices=("full", "window"), default="full")
    p.add_argument("--window-sec", type=float)
    p.add_argument("--thresh", type=float, default=0.5)
    p.add_argument("--smooth", type=int, default=9)
    p.add_argument("--iou-thresh", type=float, default=0.5)
    p.add_argument("--refine", action="store_true", help="propagate scores before thresholding")
    p.add_argument("--sequence-id")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("postprocess", parents=[common], help="temporal NMS and merge rule")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--iou-thresh", type=float, default=0.5)
    p.add_argument("--class-wise", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--merge", action="store_true")
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("eval", parents=[common], help="evaluate predictions against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--fps", type=float)
    p.add_argument("--metadata", help="sequence metadata JSON Lines (durations, fps)")
    p.add_argument("--thresholds", default=",".join(f"{t:g}" for t in DEFAULT_THRESHOLDS))
    p.add_argument("--ward-normalize", choices=("sequence", "gt"), default="sequence")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plan", parents=[common], help="experiment accounting")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("run", parents=[common], help="run the benchmark pipeline")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", default="attention", help="model id(s), comma-separated")
    p.add_argument("--mode", choices=("full", "window"), default="full")
    p.add_argument("--window-sec", type=float)
    p.add_argument("--subject", help="held-out subject (default: every LOSO split)")
    p.add_argument("--in-domain", action="store_true", help="train and test on all subjects")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", parents=[common], help="summarize an aggregate CSV")
    p.add_argument("--aggregate")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("config", "seed", "out"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"wstal {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
