# /ucsl/metrics.py
"""
CLEAR-MOT (MOTA, FP, FN, IDS, MT, ML) and identity (IDF1) metrics.

Both take MOT records, ground truth and predictions, and match boxes by IoU
with a threshold (0.5 unless told otherwise). HOTA is not computed.
"""
import logging
from collections import defaultdict
from typing import Sequence

import numpy as np
from rich.table import Table
from scipy.optimize import linear_sum_assignment

from exceptions import EmptyGroundTruth
from models import Box, MetricsReport, MotRecord
from tracker import GATED_COST, iou
from utils import json_line

logger = logging.getLogger(__name__)

MOSTLY_TRACKED = 0.8
MOSTLY_LOST = 0.2


def _by_frame(records: Sequence[MotRecord]) -> dict[int, dict[int, Box]]:
    frames: dict[int, dict[int, Box]] = defaultdict(dict)
    for r in records:
        frames[r.frame][r.id] = r.box
    return frames


def _require_gt(gt: Sequence[MotRecord]) -> None:
    if not gt:
        raise EmptyGroundTruth("Ground truth holds no boxes; MOTA and IDF1 are undefined.")


def _match_frame(
    gts: dict[int, Box], preds: dict[int, Box], carried: dict[int, int], threshold: float
) -> dict[int, int]:
    """gt id -> pred id for one frame: keep still-valid correspondences, then solve the rest optimally."""
    matches = {}
    for g in sorted(gts):
        p = carried.get(g)
        if p in preds and p not in matches.values() and iou(gts[g], preds[p]) >= threshold:
            matches[g] = p
    free_g = [g for g in sorted(gts) if g not in matches]
    taken = set(matches.values())
    free_p = [p for p in sorted(preds) if p not in taken]
    if free_g and free_p:
        overlap = np.array([[iou(gts[g], preds[p]) for p in free_p] for g in free_g])
        cost = np.where(overlap >= threshold, 1.0 - overlap, GATED_COST)
        for r, c in zip(*linear_sum_assignment(cost)):
            if overlap[r, c] >= threshold:
                matches[free_g[r]] = free_p[c]
    return matches


def clear_metrics(gt: Sequence[MotRecord], pred: Sequence[MotRecord], iou_threshold: float = 0.5) -> MetricsReport:
    """
    Frame-by-frame CLEAR-MOT accounting.

    Correspondences of the previous frame are kept while their IoU stays at
    or above the threshold; the remaining boxes are matched by minimum
    1 - IoU. An identity switch is counted when a ground-truth object is
    matched to a different prediction id than the last time it was matched.
    MT / ML count objects tracked for >= 80% / <= 20% of the frames they appear in.

    Raises:
        EmptyGroundTruth: if gt is empty.
    """
    _require_gt(gt)
    gt_frames, pred_frames = _by_frame(gt), _by_frame(pred)
    fp = fn = ids = total_matches = 0
    carried: dict[int, int] = {}
    last_pred: dict[int, int] = {}
    presence: dict[int, int] = defaultdict(int)
    tracked: dict[int, int] = defaultdict(int)

    for frame in sorted(set(gt_frames) | set(pred_frames)):
        gts, preds = gt_frames.get(frame, {}), pred_frames.get(frame, {})
        matches = _match_frame(gts, preds, carried, iou_threshold)
        for g, p in matches.items():
            if g in last_pred and last_pred[g] != p:
                ids += 1
            last_pred[g] = p
            tracked[g] += 1
        for g in gts:
            presence[g] += 1
        fn += len(gts) - len(matches)
        fp += len(preds) - len(matches)
        total_matches += len(matches)
        carried = matches

    ratios = {g: tracked[g] / presence[g] for g in presence}
    mt = sum(1 for r in ratios.values() if r >= MOSTLY_TRACKED)
    ml = sum(1 for r in ratios.values() if r <= MOSTLY_LOST)
    gt_count = len(gt)
    return MetricsReport(
        mota=1.0 - (fp + fn + ids) / gt_count,
        fp=fp,
        fn=fn,
        ids=ids,
        mt=mt,
        ml=ml,
        mt_ratio=mt / len(ratios),
        ml_ratio=ml / len(ratios),
        gt_count=gt_count,
        num_trajectories=len(ratios),
        num_frames=len(set(gt_frames) | set(pred_frames)),
        matches=total_matches,
    )


def identity_counts(
    gt: Sequence[MotRecord], pred: Sequence[MotRecord], iou_threshold: float = 0.5
) -> tuple[int, int, int]:
    """(IDTP, IDFP, IDFN) under the one-to-one gt/pred identity mapping that maximizes IDTP."""
    _require_gt(gt)
    gt_ids = sorted({r.id for r in gt})
    pred_ids = sorted({r.id for r in pred})
    if not pred_ids:
        return 0, 0, len(gt)
    gi = {g: i for i, g in enumerate(gt_ids)}
    pi = {p: j for j, p in enumerate(pred_ids)}
    overlap = np.zeros((len(gt_ids), len(pred_ids)), dtype=np.int64)
    gt_frames, pred_frames = _by_frame(gt), _by_frame(pred)
    for frame, gts in gt_frames.items():
        preds = pred_frames.get(frame, {})
        for g, g_box in gts.items():
            for p, p_box in preds.items():
                if iou(g_box, p_box) >= iou_threshold:
                    overlap[gi[g], pi[p]] += 1
    rows, cols = linear_sum_assignment(overlap, maximize=True)
    idtp = int(overlap[rows, cols].sum())
    return idtp, len(pred) - idtp, len(gt) - idtp


def idf1(gt: Sequence[MotRecord], pred: Sequence[MotRecord], iou_threshold: float = 0.5) -> float:
    """IDF1 = 2 IDTP / (2 IDTP + IDFP + IDFN)."""
    idtp, idfp, idfn = identity_counts(gt, pred, iou_threshold)
    return 2 * idtp / (2 * idtp + idfp + idfn)


def evaluate(gt: Sequence[MotRecord], pred: Sequence[MotRecord], iou_threshold: float = 0.5) -> MetricsReport:
    clear = clear_metrics(gt, pred, iou_threshold)
    idtp, idfp, idfn = identity_counts(gt, pred, iou_threshold)
    report = clear.model_copy(
        update={"idf1": 2 * idtp / (2 * idtp + idfp + idfn), "idtp": idtp, "idfp": idfp, "idfn": idfn}
    )
    logger.info(f"Evaluated {report.gt_count} gt boxes: MOTA {report.mota:.4f}, IDF1 {report.idf1:.4f}")
    return report


def format_report(report: MetricsReport, title: str = "Tracking metrics") -> Table:
    table = Table(title=title)
    for name in ("MOTA", "IDF1", "FP", "FN", "IDS", "MT", "ML", "GT"):
        table.add_column(name, justify="right")
    table.add_row(
        f"{report.mota:.4f}",
        f"{report.idf1:.4f}",
        str(report.fp),
        str(report.fn),
        str(report.ids),
        f"{report.mt} ({report.mt_ratio:.0%})",
        f"{report.ml} ({report.ml_ratio:.0%})",
        str(report.gt_count),
    )
    return table


def summary_line(report: MetricsReport) -> str:
    """The report as one sorted-key JSON line."""
    return json_line(report.model_dump())
