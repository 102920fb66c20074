# /ucsl/synthetic_world.py
"""
Seeded generator of multi-object scenes with identity embeddings.

Every identity owns a unit latent vector and a box that moves with constant
velocity, bouncing off the arena walls. Each frame, every alive and visible
identity yields one detection whose embedding is its latent plus Gaussian
noise, re-normalized. While an occlusion event is running the victim's
embedding mixes in the occluder's latent instead.

Random numbers come from numpy's PCG64 bit generator seeded with
``ScenarioSpec.seed``, drawn in a fixed order, so a spec fully determines
the output on any platform numpy supports.
"""
import logging
import os
from pathlib import Path

import numpy as np
import yaml
from pydantic import ValidationError

import mot_io
from embedding_core import normalize_array
from exceptions import ConfigFileError, InvalidParameter, InvalidSpec, OutOfRange
from models import (
    Absence,
    Detection,
    EmbeddingMatrix,
    GroundTruth,
    GroundTruthEntry,
    OcclusionEvent,
    ScenarioSpec,
)

logger = logging.getLogger(__name__)

GT_FILENAME = "gt.txt"
DET_FILENAME = "det.txt"
EMB_FILENAME = "det.emb"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _validated(spec: ScenarioSpec) -> ScenarioSpec:
    try:
        return ScenarioSpec.model_validate(spec.model_dump())
    except ValidationError as exc:
        raise InvalidSpec("; ".join(err["msg"] for err in exc.errors()))


def _draw_latents(rng: np.random.Generator, spec: ScenarioSpec) -> np.ndarray:
    """D x n matrix of unit latents, column k for identity k + 1."""
    gaussian = rng.standard_normal((spec.embed_dim, spec.num_identities))
    if spec.orthogonal_latents:
        q, _ = np.linalg.qr(gaussian)
        return q[:, : spec.num_identities]
    return normalize_array(gaussian)


class _Mover:
    """Constant-velocity box reflected at the arena walls."""

    def __init__(self, rng: np.random.Generator, spec: ScenarioSpec):
        self.w = rng.uniform(*spec.box_width)
        self.h = rng.uniform(*spec.box_height)
        self.left = rng.uniform(0, spec.arena_width - self.w)
        self.top = rng.uniform(0, spec.arena_height - self.h)
        speed = rng.uniform(0, spec.max_speed)
        heading = rng.uniform(0, 2 * np.pi)
        self.vx, self.vy = speed * np.cos(heading), speed * np.sin(heading)
        self.max_left = spec.arena_width - self.w
        self.max_top = spec.arena_height - self.h

    @property
    def box(self) -> tuple[float, float, float, float]:
        return (float(self.left), float(self.top), float(self.w), float(self.h))

    def advance(self) -> None:
        self.left, self.vx = _reflect(self.left + self.vx, self.vx, self.max_left)
        self.top, self.vy = _reflect(self.top + self.vy, self.vy, self.max_top)


def _reflect(position: float, velocity: float, upper: float) -> tuple[float, float]:
    if position < 0:
        return -position, -velocity
    if position > upper:
        return 2 * upper - position, -velocity
    return position, velocity


def _active_event(events: list[OcclusionEvent], identity: int, t: int) -> OcclusionEvent | None:
    for event in events:
        if event.victim == identity and event.start <= t <= event.end:
            return event
    return None


def _is_absent(absences: list[Absence], identity: int, t: int) -> bool:
    return any(a.identity == identity and a.start <= t <= a.end for a in absences)


def generate(spec: ScenarioSpec) -> tuple[GroundTruth, list[list[Detection]]]:
    """
    Builds the ground truth and the per-frame detections of a scenario.

    Detections of a frame follow the order of that frame's visible
    ground-truth entries (increasing identity), so detection k of frame t is
    the k-th visible identity.

    Raises:
        InvalidSpec: if the spec breaks one of its invariants.
    """
    spec = _validated(spec)
    rng = make_rng(spec.seed)
    latents = _draw_latents(rng, spec)
    movers = [_Mover(rng, spec) for _ in range(spec.num_identities)]
    spans = {i: spec.lifespan(i) for i in range(1, spec.num_identities + 1)}

    gt_frames, det_frames = [], []
    for t in range(spec.num_frames):
        entries, detections = [], []
        for identity, mover in enumerate(movers, start=1):
            birth, death = spans[identity]
            if not birth <= t <= death:
                continue
            visible = not _is_absent(spec.absences, identity, t)
            entries.append(GroundTruthEntry(identity=identity, box=mover.box, visible=visible))
            if not visible:
                continue

            event = _active_event(spec.occlusion_events, identity, t)
            base = latents[:, identity - 1]
            if event is not None:
                base = event.alpha * base + (1 - event.alpha) * latents[:, event.occluder - 1]
            embedding = base + rng.normal(0.0, spec.embed_noise, spec.embed_dim)
            left, top, w, h = mover.box
            if spec.box_noise:
                left, top = np.array([left, top]) + rng.normal(0.0, spec.box_noise, 2)
            confidence = rng.uniform(*spec.confidence)
            detections.append(
                Detection(frame=t, box=(float(left), float(top), w, h), confidence=confidence, embedding=embedding)
            )
        gt_frames.append(entries)
        det_frames.append(detections)
        for mover in movers:
            mover.advance()

    logger.info(
        f"Generated scenario seed={spec.seed}: {spec.num_identities} identities, "
        f"{spec.num_frames} frames, {sum(len(d) for d in det_frames)} detections"
    )
    return GroundTruth(frames=gt_frames), det_frames


def frame_batch(
    detections: list[list[Detection]], t: int, interval: int, dim: int | None = None
) -> tuple[EmbeddingMatrix, EmbeddingMatrix, EmbeddingMatrix]:
    """
    The embedding matrices of frames t - 2g, t - g and t, columns in detection order.

    dim is only needed when all three frames are empty.

    Raises:
        OutOfRange: if t - 2g < 0 or t is past the last frame.
    """
    if interval < 1:
        raise InvalidParameter(f"interval must be >= 1, got {interval}.")
    if t - 2 * interval < 0 or t >= len(detections):
        raise OutOfRange(f"Frame triple ({t - 2 * interval}, {t - interval}, {t}) is outside 0..{len(detections) - 1}.")
    picked = [detections[t - 2 * interval], detections[t - interval], detections[t]]
    if dim is None:
        dim = next((frame[0].embedding.shape[0] for frame in picked if frame), None)
    if dim is None:
        raise OutOfRange(f"Frames of triple ending at {t} are all empty and no dimension was given.")
    return tuple(EmbeddingMatrix.from_rows([d.embedding for d in frame], dim=dim) for frame in picked)


def benchmark_spec(
    seed: int,
    num_identities: int = 20,
    num_frames: int = 100,
    embed_dim: int = 128,
    embed_noise: float = 0.12,
    occlusion_share: float = 0.2,
    occlusion_alpha: float = 0.4,
    occlusion_length: int = 5,
    absence_share: float = 0.2,
    absence_length: int = 31,
    gap_share: float = 0.2,
    gap_length: int = 20,
) -> ScenarioSpec:
    """
    A scenario stressing the ambiguity cases.

    A share of identities is occluded (embedding mixed with another
    identity's), a further share goes undetected for ``absence_length``
    frames, and a third share drops out for ``gap_length`` frames. Gaps
    shorter than the tracker buffer leave a Lost track that only the
    embedding stage can re-find.
    """
    margin = 5
    longest = max(absence_length, occlusion_length, gap_length)
    if num_frames < longest + 2 * margin:
        raise InvalidParameter(f"num_frames={num_frames} is too short for the benchmark events.")
    rng = make_rng(seed)
    order = rng.permutation(np.arange(1, num_identities + 1)).tolist()
    n_occluded = int(round(occlusion_share * num_identities))
    n_absent = min(int(round(absence_share * num_identities)), num_identities - n_occluded)
    n_gapped = min(int(round(gap_share * num_identities)), num_identities - n_occluded - n_absent)

    events = []
    for victim in order[:n_occluded]:
        occluder = int(rng.choice([i for i in range(1, num_identities + 1) if i != victim]))
        start = int(rng.integers(margin, num_frames - occlusion_length - margin + 1))
        events.append(
            OcclusionEvent(
                victim=victim, occluder=occluder, start=start, end=start + occlusion_length - 1, alpha=occlusion_alpha
            )
        )
    absences = []
    for identity in order[n_occluded : n_occluded + n_absent]:
        start = int(rng.integers(margin, num_frames - absence_length - margin + 1))
        absences.append(Absence(identity=identity, start=start, end=start + absence_length - 1))
    for identity in order[n_occluded + n_absent : n_occluded + n_absent + n_gapped]:
        start = int(rng.integers(margin, num_frames - gap_length - margin + 1))
        absences.append(Absence(identity=identity, start=start, end=start + gap_length - 1))

    return ScenarioSpec(
        seed=seed,
        num_identities=num_identities,
        num_frames=num_frames,
        embed_dim=embed_dim,
        embed_noise=embed_noise,
        occlusion_events=events,
        absences=absences,
    )


# --- Scenario documents ---


def load_spec(path: str | os.PathLike) -> ScenarioSpec:
    """
    Reads a YAML scenario document.

    Raises:
        ConfigFileError: if the file does not exist or is not readable.
        InvalidSpec: if it is not a mapping or violates a spec invariant.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigFileError(f"Scenario file not found: {path}")
    try:
        document = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise InvalidSpec(f"{path} is not valid YAML: {exc}")
    if not isinstance(document, dict):
        raise InvalidSpec(f"{path} must hold a mapping of spec fields")
    try:
        return ScenarioSpec.model_validate(document)
    except ValidationError as exc:
        raise InvalidSpec("; ".join(f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors()))


def dump_spec(spec: ScenarioSpec, path: str | os.PathLike) -> None:
    Path(path).write_text(yaml.safe_dump(spec.model_dump(mode="json"), sort_keys=False), encoding="utf-8")


def export(ground_truth: GroundTruth, detections: list[list[Detection]], out_dir: str | os.PathLike) -> dict[str, str]:
    """Writes gt.txt, det.txt and det.emb into out_dir and returns their paths by name."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, name) for name in (GT_FILENAME, DET_FILENAME, EMB_FILENAME)}
    mot_io.write(mot_io.ground_truth_to_records(ground_truth), paths[GT_FILENAME])
    mot_io.write_detections(detections, paths[DET_FILENAME], paths[EMB_FILENAME])
    return paths
