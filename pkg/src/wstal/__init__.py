"""Weakly supervised temporal action localization on 1-D multi-channel streams."""

from .core import Segment, SequenceRecord, bag_label, profile_durations, rasterize, tiou
from .metrics import ap_at_tiou, evaluate, frame_prf, mean_ap, ward_errors
from .postprocess import NmsConfig, resolve_and_merge, temporal_nms
from .proposals import ProposalConfig, generate_proposals

__version__ = "0.1.0"

__all__ = [
    "NmsConfig",
    "ProposalConfig",
    "Segment",
    "SequenceRecord",
    "ap_at_tiou",
    "bag_label",
    "evaluate",
    "frame_prf",
    "generate_proposals",
    "mean_ap",
    "profile_durations",
    "rasterize",
    "resolve_and_merge",
    "temporal_nms",
    "tiou",
    "ward_errors",
]
