# /ucsl/models.py
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from strenum import StrEnum

Box = tuple[float, float, float, float]  # (left, top, width, height)

ROW_SUM_TOLERANCE = 1e-9


def _frozen_matrix(value, ndim: int = 2) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


# --- Embedding algebra ---


class _MatrixModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: np.ndarray

    @field_validator("data", mode="before")
    @classmethod
    def _as_matrix(cls, value):
        return _frozen_matrix(value)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


class EmbeddingMatrix(_MatrixModel):
    """D x count matrix; column j is the identity embedding of object j in one frame."""

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def count(self) -> int:
        return self.data.shape[1]

    def col(self, index: int) -> np.ndarray:
        return self.data[:, index]

    def subset(self, indices: list[int]) -> "EmbeddingMatrix":
        return EmbeddingMatrix(data=self.data[:, indices])

    @classmethod
    def from_rows(cls, rows, dim: int | None = None) -> "EmbeddingMatrix":
        """Builds the matrix from a (count, D) stack of embeddings, one row per object."""
        arr = np.asarray(rows, dtype=np.float64)
        if arr.size == 0:
            if dim is None:
                raise ValueError("dim is required to build an empty EmbeddingMatrix")
            return cls(data=np.zeros((dim, 0)))
        return cls(data=arr.reshape(len(arr), -1).T)


class SimilarityMatrix(_MatrixModel):
    """Cosine similarities between the objects of two frames."""


class AssignmentMatrix(_MatrixModel):
    """Row-stochastic matching probabilities."""

    @field_validator("data")
    @classmethod
    def _row_stochastic(cls, value: np.ndarray) -> np.ndarray:
        if value.size == 0:
            return value
        if value.min() < -1e-12 or value.max() > 1 + 1e-12:
            raise ValueError("assignment probabilities must lie in [0, 1]")
        sums = value.sum(axis=1)
        if np.abs(sums - 1.0).max() > ROW_SUM_TOLERANCE:
            raise ValueError("assignment rows must sum to 1")
        return value


# --- Losses ---


class LossConfig(BaseModel):
    """Hyper-parameters shared by every contrast loss."""

    model_config = ConfigDict(frozen=True)

    tau: float = Field(0.1, gt=0, description="Softmax temperature applied in every row softmax.")
    theta: float = Field(0.7, gt=0, lt=1, description="Cosine threshold below which an object is ambiguous.")
    epsilon: float = Field(1e-12, gt=0, description="Clamp for logarithms and divergence denominators.")
    interval: int = Field(1, ge=1, description="Frame gap g between the three input frames.")
    w_dsc: float = Field(1.0, ge=0, description="Weight of direct self-contrast.")
    w_isc: float = Field(1.0, ge=0, description="Weight of indirect self-contrast.")
    w_cc: float = Field(1.0, ge=0, description="Weight of cross-contrast.")
    w_ac: float = Field(1.0, ge=0, description="Weight of ambiguity contrast.")
    indirect_pairs: Literal["adjacent", "all"] = Field(
        "adjacent", description="Frame pairings used for indirect self-contrast."
    )


class AmbiguousSet(BaseModel):
    frame_index: int
    indices: list[int]

    @field_validator("indices")
    @classmethod
    def _strictly_increasing(cls, value: list[int]) -> list[int]:
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("ambiguous indices must be strictly increasing")
        if value and value[0] < 0:
            raise ValueError("ambiguous indices must be non-negative")
        return value

    @property
    def count(self) -> int:
        return len(self.indices)


class LossReport(BaseModel):
    """Weighted loss components; total is always (l_sc + l_cc) + l_ac."""

    l_dsc: float = Field(0.0, description="Unweighted direct self-contrast term.")
    l_isc: float = Field(0.0, description="Unweighted indirect self-contrast term.")
    l_sc: float = 0.0
    l_cc: float = 0.0
    l_ac: float = 0.0
    total: float = 0.0
    skipped: bool = False


class GradientField(BaseModel):
    """dL/d(raw embedding) for each input frame, shape-congruent with the frames."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    frames: list[np.ndarray]

    @field_validator("frames", mode="before")
    @classmethod
    def _finite(cls, value):
        arrays = [_frozen_matrix(v) for v in value]
        for arr in arrays:
            if not np.all(np.isfinite(arr)):
                raise ValueError("gradient contains NaN or Inf")
        return arrays


class OptimizationTrace(BaseModel):
    step: int
    loss_report: LossReport
    mean_self_diag: float


# --- Synthetic world ---


class OcclusionEvent(BaseModel):
    victim: int
    occluder: int
    start: int
    end: int
    alpha: float = Field(..., ge=0, le=1, description="Share of the victim's own latent kept while occluded.")


class Lifespan(BaseModel):
    identity: int
    birth: int
    death: int


class Absence(BaseModel):
    """Frames [start, end] during which an identity keeps moving but is not detected."""

    identity: int
    start: int
    end: int


class ScenarioSpec(BaseModel):
    schema_version: int = 1
    seed: int = Field(0, ge=0, lt=2**64)
    num_identities: int = Field(20, ge=1)
    num_frames: int = Field(100, ge=1)
    arena_width: float = Field(200.0, gt=0)
    arena_height: float = Field(200.0, gt=0)
    embed_dim: int = Field(128, ge=2)
    embed_noise: float = Field(0.02, ge=0, description="Per-component standard deviation of embedding noise.")
    orthogonal_latents: bool = False
    box_width: tuple[float, float] = (6.0, 12.0)
    box_height: tuple[float, float] = (12.0, 24.0)
    max_speed: float = Field(2.0, ge=0)
    box_noise: float = Field(0.0, ge=0)
    confidence: tuple[float, float] = (0.6, 1.0)
    occlusion_events: list[OcclusionEvent] = Field(default_factory=list)
    lifespans: list[Lifespan] = Field(default_factory=list)
    absences: list[Absence] = Field(default_factory=list)

    def lifespan(self, identity: int) -> tuple[int, int]:
        for span in self.lifespans:
            if span.identity == identity:
                return span.birth, span.death
        return 0, self.num_frames - 1

    @model_validator(mode="after")
    def _check_invariants(self) -> "ScenarioSpec":
        if self.schema_version != 1:
            raise ValueError(f"unsupported schema_version {self.schema_version}")
        ids = range(1, self.num_identities + 1)
        frames = range(self.num_frames)
        for lo, hi, name in (
            (*self.box_width, "box_width"),
            (*self.box_height, "box_height"),
        ):
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must be a positive (min, max) range")
        lo, hi = self.confidence
        if not 0 <= lo <= hi <= 1:
            raise ValueError("confidence must be a (min, max) range inside [0, 1]")
        if self.box_width[1] >= self.arena_width or self.box_height[1] >= self.arena_height:
            raise ValueError("boxes must be smaller than the arena")
        if self.orthogonal_latents and self.num_identities > self.embed_dim:
            raise ValueError("orthogonal_latents needs num_identities <= embed_dim")
        seen = set()
        for span in self.lifespans:
            if span.identity not in ids:
                raise ValueError(f"lifespan for unknown identity {span.identity}")
            if span.identity in seen:
                raise ValueError(f"identity {span.identity} has more than one lifespan")
            seen.add(span.identity)
            if span.birth not in frames or span.death not in frames or span.birth > span.death:
                raise ValueError(f"lifespan of identity {span.identity} is outside [0, num_frames) or birth > death")
        for event in self.occlusion_events:
            if event.victim not in ids or event.occluder not in ids:
                raise ValueError("occlusion event references an unknown identity")
            if event.victim == event.occluder:
                raise ValueError("occlusion victim and occluder must differ")
            if event.start not in frames or event.end not in frames or event.start > event.end:
                raise ValueError("occlusion event frames must lie in [0, num_frames) with start <= end")
            for identity in (event.victim, event.occluder):
                birth, death = self.lifespan(identity)
                if event.start < birth or event.end > death:
                    raise ValueError(f"identity {identity} is not alive for the whole occlusion event")
        for absence in self.absences:
            if absence.identity not in ids:
                raise ValueError(f"absence for unknown identity {absence.identity}")
            if absence.start not in frames or absence.end not in frames or absence.start > absence.end:
                raise ValueError("absence frames must lie in [0, num_frames) with start <= end")
        return self


class GroundTruthEntry(BaseModel):
    identity: int
    box: Box
    visible: bool = True


class GroundTruth(BaseModel):
    frames: list[list[GroundTruthEntry]]

    @model_validator(mode="after")
    def _unique_per_frame(self) -> "GroundTruth":
        for t, entries in enumerate(self.frames):
            ids = [e.identity for e in entries]
            if len(ids) != len(set(ids)):
                raise ValueError(f"frame {t} lists an identity twice")
        return self


class Detection(BaseModel):
    """One observed object. The embedding is stored L2-normalized."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    frame: int = Field(..., ge=0)
    box: Box
    confidence: float = Field(..., ge=0, le=1)
    embedding: np.ndarray

    @field_validator("embedding", mode="before")
    @classmethod
    def _unit_embedding(cls, value):
        arr = np.array(value, dtype=np.float64).reshape(-1)
        norm = np.linalg.norm(arr)
        if not np.isfinite(norm) or norm < 1e-12:
            raise ValueError("detection embedding must have a finite, non-zero norm")
        arr = arr / norm
        arr.setflags(write=False)
        return arr


# --- Tracker ---


class TrackStatus(StrEnum):
    ACTIVE = "Active"
    LOST = "Lost"


class KalmanState(BaseModel):
    """8-d state (cx, cy, aspect, height, and their velocities) with its covariance."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mean: np.ndarray
    covariance: np.ndarray

    @field_validator("mean", mode="before")
    @classmethod
    def _mean_vector(cls, value):
        arr = _frozen_matrix(value, ndim=1)
        if arr.shape != (8,):
            raise ValueError("Kalman mean must have 8 entries")
        return arr

    @field_validator("covariance", mode="before")
    @classmethod
    def _covariance_matrix(cls, value):
        arr = _frozen_matrix(value)
        if arr.shape != (8, 8):
            raise ValueError("Kalman covariance must be 8 x 8")
        return arr


class TrackerConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    embed_gate: float = Field(0.4, gt=0, lt=1, description="Largest embedding distance accepted in stage 1.")
    iou_gate: float = Field(0.5, gt=0, lt=1, description="Smallest IoU accepted in stage 2.")
    buffer: int = Field(30, ge=1, description="Frames a lost track is kept for re-association.")
    ema_alpha: float = Field(0.9, ge=0, le=1, description="Weight of the old embedding in the track's moving average.")
    min_confidence: float = Field(0.4, ge=0, le=1)
    motion_gate: bool = Field(False, description="Gate stage 1 by Mahalanobis distance to the predicted box.")
    lost_iou_matching: bool = Field(False, description="Let lost tracks take part in stage 2 (IoU) matching.")


class Track(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    track_id: int
    kalman: KalmanState
    smooth_embedding: np.ndarray
    status: TrackStatus = TrackStatus.ACTIVE
    lost_age: int = 0
    hits: int = 1
    confidence: float = Field(1.0, description="Confidence of the last matched detection.")


class AssociationResult(BaseModel):
    matches: list[tuple[int, int]] = Field(default_factory=list, description="(track index, detection index) pairs.")
    unmatched_tracks: list[int] = Field(default_factory=list)
    unmatched_detections: list[int] = Field(default_factory=list)


class TrackRecord(BaseModel):
    frame: int
    track_id: int
    box: Box
    confidence: float = 1.0


# --- File formats ---


class MotKind(StrEnum):
    DET = "det"
    GT = "gt"
    RESULT = "result"


class MotRecord(BaseModel):
    """One line of a MOT-Challenge style file (0-based frames never appear here)."""

    model_config = ConfigDict(allow_inf_nan=False)

    frame: int = Field(..., ge=1)
    id: int = -1
    bb_left: float
    bb_top: float
    bb_width: float = Field(..., gt=0)
    bb_height: float = Field(..., gt=0)
    conf: float = -1.0
    x: float = -1.0
    y: float = -1.0
    z: float = -1.0

    @property
    def box(self) -> Box:
        return (self.bb_left, self.bb_top, self.bb_width, self.bb_height)


# --- Metrics ---


class MetricsReport(BaseModel):
    mota: float
    idf1: float = Field(0.0, ge=0, le=1)
    fp: int = Field(..., ge=0)
    fn: int = Field(..., ge=0)
    ids: int = Field(..., ge=0)
    mt: int = Field(..., ge=0)
    ml: int = Field(..., ge=0)
    mt_ratio: float = 0.0
    ml_ratio: float = 0.0
    gt_count: int = Field(..., ge=1)
    num_trajectories: int = 0
    num_frames: int = 0
    matches: int = Field(0, description="Number of CLEAR correspondences over all frames.")
    idtp: int = 0
    idfp: int = 0
    idfn: int = 0


class AblationRow(BaseModel):
    variant: str
    seed: int
    interval: int
    embed_dim: int
    idf1: float
    mota: float
    ids: int
    mt: int
    ml: int
    final_loss: float
