"""Mask evaluation: binarization, confusion counts, mIoU, F-score, aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from openavs.errors import ShapeMismatchError
from openavs.model import BinaryMask

# Weight favoring precision in the F-measure, per the AVS benchmark convention.
DEFAULT_BETA2 = 0.3


@dataclass(frozen=True)
class ConfusionCounts:
    """Pixel counts for the foreground class."""

    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class FrameScore:
    miou: float
    fscore: float
    iou_fg: float
    iou_bg: float


def binarize_semantic(label_grid: np.ndarray) -> BinaryMask:
    """Collapse semantic labels to object/background: each cell becomes min(label, 1)."""
    grid = np.asarray(label_grid)
    if (grid < 0).any():
        raise ValueError("semantic labels must be nonnegative")
    return BinaryMask(np.minimum(grid, 1).astype(np.uint8))


def binarize_prediction(grid: np.ndarray) -> BinaryMask:
    """Threshold an 8-bit prediction grid at 128, matching the {0,255} mask PNGs."""
    return BinaryMask((np.asarray(grid) >= 128).astype(np.uint8))


def confusion(pred: BinaryMask, gt: BinaryMask) -> ConfusionCounts:
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"pred {pred.shape} vs gt {gt.shape}")
    p = pred.bits.astype(bool)
    g = gt.bits.astype(bool)
    return ConfusionCounts(
        tp=int((p & g).sum()),
        fp=int((p & ~g).sum()),
        fn=int((~p & g).sum()),
        tn=int((~p & ~g).sum()),
    )


def _iou(tp: int, fp: int, fn: int) -> float:
    denom = tp + fp + fn
    # Both prediction and truth agree the class is absent: count as perfect.
    if denom == 0:
        return 1.0
    return tp / denom


def miou_from_counts(c: ConfusionCounts) -> FrameScore:
    iou_fg = _iou(c.tp, c.fp, c.fn)
    iou_bg = _iou(c.tn, c.fn, c.fp)
    return FrameScore(
        miou=(iou_fg + iou_bg) / 2.0,
        fscore=fscore_from_counts(c),
        iou_fg=iou_fg,
        iou_bg=iou_bg,
    )


def miou(pred: BinaryMask, gt: BinaryMask) -> float:
    """Mean of foreground and background IoU."""
    c = confusion(pred, gt)
    return miou_from_counts(c).miou


def fscore_from_counts(c: ConfusionCounts, beta2: float = DEFAULT_BETA2) -> float:
    pred_empty = c.tp + c.fp == 0
    gt_empty = c.tp + c.fn == 0
    if pred_empty and gt_empty:
        return 1.0
    if pred_empty or gt_empty:
        return 0.0
    precision = c.tp / (c.tp + c.fp)
    recall = c.tp / (c.tp + c.fn)
    if precision == 0.0 and recall == 0.0:
        return 0.0
    return (1.0 + beta2) * precision * recall / (beta2 * precision + recall)


def fscore(pred: BinaryMask, gt: BinaryMask, beta2: float = DEFAULT_BETA2) -> float:
    """Weighted precision/recall measure over foreground pixels."""
    if beta2 <= 0:
        raise ValueError(f"beta2 must be > 0, got {beta2}")
    return fscore_from_counts(confusion(pred, gt), beta2)


def score_frame(pred: BinaryMask, gt: BinaryMask) -> FrameScore:
    return miou_from_counts(confusion(pred, gt))


@dataclass
class DatasetReport:
    """Per-frame, per-video, and dataset-level scores plus bookkeeping.

    The headline numbers are macro means over evaluated frames; pooled-confusion
    (micro) figures are included separately for cross-checking.
    """

    dataset_name: str = ""
    frame_scores: list[tuple[str, int, FrameScore]] = field(default_factory=list)
    video_means: dict[str, tuple[float, float]] = field(default_factory=dict)
    miou: float | None = None
    fscore: float | None = None
    micro_miou: float | None = None
    micro_fscore: float | None = None
    evaluated: int = 0
    skipped: int = 0
    errors: list[str] = field(default_factory=list)
    config_echo: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset_name,
            "aggregation": "macro over frames",
            "miou": self.miou,
            "fscore": self.fscore,
            "micro_miou": self.micro_miou,
            "micro_fscore": self.micro_fscore,
            "evaluated_frames": self.evaluated,
            "skipped_frames": self.skipped,
            "videos": {
                vid: {"miou": m, "fscore": f, "frames": sum(1 for v, _, _ in self.frame_scores if v == vid)}
                for vid, (m, f) in sorted(self.video_means.items())
            },
            "frames": [
                {
                    "video_id": vid,
                    "frame_index": idx,
                    "miou": s.miou,
                    "fscore": s.fscore,
                    "iou_fg": s.iou_fg,
                    "iou_bg": s.iou_bg,
                }
                for vid, idx, s in self.frame_scores
            ],
            "errors": self.errors,
            "config": self.config_echo,
        }

    def to_table(self) -> str:
        """Aligned text table: subset, M_J, M_F, frames, videos."""
        header = ("subset", "M_J", "M_F", "frames", "videos")
        mj = f"{self.miou:.4f}" if self.miou is not None else "-"
        mf = f"{self.fscore:.4f}" if self.fscore is not None else "-"
        row = (
            self.dataset_name or "all",
            mj,
            mf,
            str(self.evaluated),
            str(len(self.video_means)),
        )
        widths = [max(len(h), len(r)) for h, r in zip(header, row)]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        return fmt.format(*header) + "\n" + fmt.format(*row)


def aggregate(
    pairs: list[tuple[BinaryMask | None, BinaryMask | None]],
    grouping: dict[str, list[int]] | None = None,
    dataset_name: str = "",
    config_echo: dict | None = None,
) -> DatasetReport:
    """Score (pred, gt) pairs and macro-average over frames and per-video groups.

    Pairs with a missing side are skipped and counted; shape mismatches are
    recorded as errors and skipped rather than aborting the whole report.
    """
    report = DatasetReport(dataset_name=dataset_name, config_echo=config_echo or {})
    if grouping is None:
        grouping = {"all": list(range(len(pairs)))}
    index_to_video = {}
    for vid, indices in grouping.items():
        for i in indices:
            index_to_video[i] = vid

    pooled = ConfusionCounts(0, 0, 0, 0)
    for i, (pred, gt) in enumerate(pairs):
        vid = index_to_video.get(i, "all")
        if pred is None or gt is None:
            report.skipped += 1
            continue
        try:
            c = confusion(pred, gt)
        except ShapeMismatchError as e:
            report.errors.append(f"{vid}[{i}]: {e}")
            report.skipped += 1
            continue
        pooled = ConfusionCounts(
            pooled.tp + c.tp, pooled.fp + c.fp, pooled.fn + c.fn, pooled.tn + c.tn
        )
        report.frame_scores.append((vid, i, miou_from_counts(c)))
        report.evaluated += 1

    if report.evaluated:
        report.miou = sum(s.miou for _, _, s in report.frame_scores) / report.evaluated
        report.fscore = sum(s.fscore for _, _, s in report.frame_scores) / report.evaluated
        micro = miou_from_counts(pooled)
        report.micro_miou = micro.miou
        report.micro_fscore = micro.fscore
        for vid in sorted(grouping):
            scores = [s for v, _, s in report.frame_scores if v == vid]
            if scores:
                report.video_means[vid] = (
                    sum(s.miou for s in scores) / len(scores),
                    sum(s.fscore for s in scores) / len(scores),
                )
    return report
