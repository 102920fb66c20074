# /ucsl/tracker.py
"""
Online tracker: Kalman prediction, two-stage association (appearance
embedding first, then IoU for the leftovers) and a lost-track buffer.

Lost tracks stay matchable by embedding for ``TrackerConfig.buffer`` frames,
which is what lets an identity that vanished behind something pick up its
old track id when it re-emerges.
"""
import logging
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from exceptions import DegenerateBox, NonMonotoneFrames
from kalman_filter import CHI2_GATE_4DOF, gating_distance, kalman_initiate, kalman_predict, kalman_update, state_box
from models import AssociationResult, Box, Detection, Track, TrackerConfig, TrackRecord, TrackStatus
from utils import check_box, tlwh_to_xyah, tlwh_to_xyxy

logger = logging.getLogger(__name__)

# stands in for an infinite cost so the assignment stays feasible
GATED_COST = 1e5


def iou(box_a: Box, box_b: Box) -> float:
    """
    Intersection over union of two (left, top, w, h) boxes.

    Raises:
        DegenerateBox: if either box has a non-positive width or height.
    """
    ax1, ay1, ax2, ay2 = tlwh_to_xyxy(check_box(box_a))
    bx1, by1, bx2, by2 = tlwh_to_xyxy(check_box(box_b))
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = box_a[2] * box_a[3] + box_b[2] * box_b[3] - inter
    return inter / union


def _track_iou(track: Track, det: Detection) -> float:
    try:
        return iou(state_box(track.kalman), det.box)
    except DegenerateBox:
        return 0.0


def solve_assignment(cost: np.ndarray, limit: float) -> list[tuple[int, int]]:
    """Min-cost assignment, keeping only pairs whose cost does not exceed limit."""
    if cost.size == 0:
        return []
    rows, cols = linear_sum_assignment(cost)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if cost[r, c] <= limit]


def embedding_cost(tracks: Sequence[Track], detections: Sequence[Detection], cfg: TrackerConfig) -> np.ndarray:
    """1 - cosine between track and detection embeddings, optionally gated by motion."""
    if not tracks or not detections:
        return np.zeros((len(tracks), len(detections)))
    track_emb = np.stack([t.smooth_embedding for t in tracks])
    det_emb = np.stack([d.embedding for d in detections])
    cost = 1.0 - track_emb @ det_emb.T
    if cfg.motion_gate:
        measurements = np.stack([tlwh_to_xyah(d.box) for d in detections])
        for i, track in enumerate(tracks):
            cost[i, gating_distance(track.kalman, measurements) > CHI2_GATE_4DOF] = GATED_COST
    return cost


def associate(tracks: Sequence[Track], detections: Sequence[Detection], cfg: TrackerConfig) -> AssociationResult:
    """
    Two-stage matching of predicted tracks to one frame's detections.

    Stage 1 runs over every track (Active and Lost) on embedding distance and
    discards pairs costing more than cfg.embed_gate. Stage 2 matches what is
    left by 1 - IoU among Active tracks (Lost ones too with
    cfg.lost_iou_matching), accepting IoU >= cfg.iou_gate.
    """
    stage1 = solve_assignment(embedding_cost(tracks, detections, cfg), cfg.embed_gate)

    used_tracks = {t for t, _ in stage1}
    used_dets = {d for _, d in stage1}
    pool_tracks = [
        i
        for i, track in enumerate(tracks)
        if i not in used_tracks and (track.status == TrackStatus.ACTIVE or cfg.lost_iou_matching)
    ]
    pool_dets = [j for j in range(len(detections)) if j not in used_dets]
    iou_cost = np.array([[1.0 - _track_iou(tracks[i], detections[j]) for j in pool_dets] for i in pool_tracks])
    iou_cost = iou_cost.reshape(len(pool_tracks), len(pool_dets))
    stage2 = [(pool_tracks[r], pool_dets[c]) for r, c in solve_assignment(iou_cost, 1.0 - cfg.iou_gate)]

    matches = sorted(stage1 + stage2)
    matched_tracks = {t for t, _ in matches}
    matched_dets = {d for _, d in matches}
    return AssociationResult(
        matches=matches,
        unmatched_tracks=[i for i in range(len(tracks)) if i not in matched_tracks],
        unmatched_detections=[j for j in range(len(detections)) if j not in matched_dets],
    )


def _blend(old: np.ndarray, new: np.ndarray, alpha: float) -> np.ndarray:
    mixed = alpha * old + (1 - alpha) * new
    norm = np.linalg.norm(mixed)
    # opposite embeddings at alpha 0.5 cancel out
    return mixed / norm if norm > 1e-12 else np.array(new)


class Tracker:
    """Single-sequence tracker state. Not shared between threads."""

    def __init__(self, cfg: TrackerConfig | None = None):
        self.cfg = cfg or TrackerConfig()
        self.tracks: list[Track] = []
        self._next_id = 1

    @property
    def issued_ids(self) -> int:
        return self._next_id - 1

    def _new_track(self, det: Detection) -> Track:
        track = Track(
            track_id=self._next_id,
            kalman=kalman_initiate(det.box),
            smooth_embedding=np.array(det.embedding),
            confidence=det.confidence,
        )
        self._next_id += 1
        return track

    def step(self, detections: Sequence[Detection], frame: int = 0) -> list[TrackRecord]:
        """
        Advances every track by one frame and returns the Active tracks' boxes, by increasing track id.
        """
        cfg = self.cfg
        dets = [d for d in detections if d.confidence >= cfg.min_confidence]
        for track in self.tracks:
            track.kalman = kalman_predict(track.kalman, freeze_height_velocity=track.status == TrackStatus.LOST)

        result = associate(self.tracks, dets, cfg)
        for i, j in result.matches:
            track, det = self.tracks[i], dets[j]
            track.kalman = kalman_update(track.kalman, det.box)
            track.smooth_embedding = _blend(track.smooth_embedding, det.embedding, cfg.ema_alpha)
            if track.status == TrackStatus.LOST:
                logger.debug(f"Frame {frame}: track {track.track_id} re-found after {track.lost_age} frames")
            track.status = TrackStatus.ACTIVE
            track.lost_age = 0
            track.hits += 1
            track.confidence = det.confidence

        dropped = set()
        for i in result.unmatched_tracks:
            track = self.tracks[i]
            track.status = TrackStatus.LOST
            track.lost_age += 1
            if track.lost_age > cfg.buffer:
                dropped.add(i)
        if dropped:
            logger.debug(f"Frame {frame}: dropping tracks {[self.tracks[i].track_id for i in sorted(dropped)]}")
        self.tracks = [t for i, t in enumerate(self.tracks) if i not in dropped]
        self.tracks.extend(self._new_track(dets[j]) for j in result.unmatched_detections)

        active = sorted((t for t in self.tracks if t.status == TrackStatus.ACTIVE), key=lambda t: t.track_id)
        return [
            TrackRecord(frame=frame, track_id=t.track_id, box=state_box(t.kalman), confidence=t.confidence)
            for t in active
        ]


def run(frames: Iterable[tuple[int, Sequence[Detection]]], cfg: TrackerConfig | None = None) -> list[TrackRecord]:
    """
    Tracks a whole sequence given as (frame index, detections) pairs.

    Pass ``enumerate(per_frame_detections)`` for a dense 0-based sequence.
    Skipped frame indices are stepped through as empty frames, so lost tracks
    age once per elapsed frame.

    Raises:
        NonMonotoneFrames: if frame indices are not strictly increasing.
    """
    tracker = Tracker(cfg)
    records: list[TrackRecord] = []
    previous = None
    for frame, detections in frames:
        if previous is not None and frame <= previous:
            raise NonMonotoneFrames(f"Frame {frame} arrived after frame {previous}.")
        if previous is not None:
            for gap in range(previous + 1, frame):
                records.extend(tracker.step([], gap))
        records.extend(tracker.step(detections, frame))
        previous = frame
    logger.info(f"Tracked {0 if previous is None else previous + 1} frames, {tracker.issued_ids} track ids issued")
    return records
