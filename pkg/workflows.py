# /ucsl/workflows.py
"""
The pipelines behind the CLI subcommands, free of any terminal handling so
they can be called (and tested) as plain functions.
"""
import logging
import os
from functools import partial
from typing import Sequence

import anyio
import anyio.to_thread
import numpy as np
from rich.table import Table

import metrics
import mot_io
import synthetic_world
import tracker
from contrast_losses import total_loss
from exceptions import InvalidParameter
from loss_optimizer import optimize_sequence, sequence_loss
from models import (
    AblationRow,
    Detection,
    LossConfig,
    MetricsReport,
    MotRecord,
    OptimizationTrace,
    ScenarioSpec,
    TrackerConfig,
)

logger = logging.getLogger(__name__)

SCENARIO_FILENAME = "scenario.yaml"
TRACE_FILENAME = "trace.jsonl"
LOSSES_FILENAME = "losses.jsonl"
RESULT_FILENAME = "result.txt"
OPTIMIZED_DET_FILENAME = "det.opt.txt"
OPTIMIZED_EMB_FILENAME = "det.opt.emb"
ABLATION_FILENAME = "ablation.jsonl"

# weights (w_dsc, w_isc, w_cc, w_ac) per ablation variant; None means no optimization
VARIANT_WEIGHTS: dict[str, tuple[float, float, float, float] | None] = {
    "raw": None,
    "dsc": (1.0, 0.0, 0.0, 0.0),
    "isc": (0.0, 1.0, 0.0, 0.0),
    "sc": (1.0, 1.0, 0.0, 0.0),
    "sc+cc": (1.0, 1.0, 1.0, 0.0),
    "sc+cc+ac": (1.0, 1.0, 1.0, 1.0),
}


def with_variant(cfg: LossConfig, variant: str) -> LossConfig:
    weights = VARIANT_WEIGHTS[variant]
    if weights is None:
        return cfg
    return cfg.model_copy(update=dict(zip(("w_dsc", "w_isc", "w_cc", "w_ac"), weights)))


def embedding_frames(detections: Sequence[Sequence[Detection]], dim: int) -> list[np.ndarray]:
    """One D x n_t array per frame, columns in detection order."""
    return [np.stack([d.embedding for d in frame], axis=1) if frame else np.zeros((dim, 0)) for frame in detections]


def embedding_dim(detections: Sequence[Sequence[Detection]]) -> int:
    for frame in detections:
        if frame:
            return frame[0].embedding.shape[0]
    return mot_io.DEFAULT_EMBED_DIM


def simulate(spec: ScenarioSpec, out_dir: str) -> dict[str, str]:
    """Generates a scenario and writes gt.txt, det.txt, det.emb and scenario.yaml into out_dir."""
    ground_truth, detections = synthetic_world.generate(spec)
    paths = synthetic_world.export(ground_truth, detections, out_dir)
    paths[SCENARIO_FILENAME] = os.path.join(out_dir, SCENARIO_FILENAME)
    synthetic_world.dump_spec(spec, paths[SCENARIO_FILENAME])
    return paths


def loss_rows(detections: Sequence[Sequence[Detection]], cfg: LossConfig) -> list[dict]:
    """
    One record per frame triple (t - 2g, t - g, t) of the sequence, g = cfg.interval.

    ``frame`` is the 1-based index of the newest frame t.
    """
    dim = embedding_dim(detections)
    rows = []
    for t in range(2 * cfg.interval, len(detections)):
        x1, x2, x3 = synthetic_world.frame_batch(detections, t, cfg.interval, dim=dim)
        report = total_loss(x1, x2, x3, cfg)
        rows.append({"frame": t + 1, "counts": [x1.count, x2.count, x3.count], **report.model_dump()})
    return rows


def optimize_embeddings(
    detections: Sequence[Sequence[Detection]], cfg: LossConfig, steps: int, lr: float
) -> tuple[list[OptimizationTrace], list[list[Detection]]]:
    """Runs sequence-level descent and returns the trace and the detections carrying the optimized embeddings."""
    dim = embedding_dim(detections)
    trace, optimized = optimize_sequence(embedding_frames(detections, dim), cfg, steps, lr)
    rebuilt = [
        [Detection(frame=d.frame, box=d.box, confidence=d.confidence, embedding=emb[:, k]) for k, d in enumerate(frame)]
        for frame, emb in zip(detections, optimized)
    ]
    return trace, rebuilt


def track(detections: Sequence[Sequence[Detection]], cfg: TrackerConfig) -> list[MotRecord]:
    return mot_io.track_records_to_mot(tracker.run(enumerate(detections), cfg))


def evaluate(gt: Sequence[MotRecord], pred: Sequence[MotRecord], iou_threshold: float) -> MetricsReport:
    return metrics.evaluate(gt, pred, iou_threshold)


def ablation_row(
    variant: str,
    seed: int,
    interval: int,
    dim: int,
    loss_cfg: LossConfig,
    tracker_cfg: TrackerConfig,
    steps: int,
    lr: float,
    iou_threshold: float,
) -> AblationRow:
    """Generates the benchmark scenario for one seed, optionally optimizes its embeddings, tracks and scores it."""
    cfg = with_variant(loss_cfg.model_copy(update={"interval": interval}), variant)
    ground_truth, detections = synthetic_world.generate(synthetic_world.benchmark_spec(seed, embed_dim=dim))
    if VARIANT_WEIGHTS[variant] is None:
        final_loss = sequence_loss(embedding_frames(detections, dim), cfg).total
    else:
        trace, detections = optimize_embeddings(detections, cfg, steps, lr)
        final_loss = trace[-1].loss_report.total
    report = evaluate(mot_io.ground_truth_to_records(ground_truth), track(detections, tracker_cfg), iou_threshold)
    logger.info(f"Ablation {variant} seed={seed} interval={interval} dim={dim}: IDF1 {report.idf1:.4f}")
    return AblationRow(
        variant=variant,
        seed=seed,
        interval=interval,
        embed_dim=dim,
        idf1=report.idf1,
        mota=report.mota,
        ids=report.ids,
        mt=report.mt,
        ml=report.ml,
        final_loss=final_loss,
    )


def ablate(
    seeds: Sequence[int],
    loss_cfg: LossConfig,
    tracker_cfg: TrackerConfig,
    steps: int,
    lr: float,
    iou_threshold: float = 0.5,
    variants: Sequence[str] = tuple(VARIANT_WEIGHTS),
    intervals: Sequence[int] | None = None,
    dims: Sequence[int] = (128,),
    workers: int = 4,
) -> list[AblationRow]:
    """
    One row per variant x interval x dim x seed, in that nesting order.

    Jobs run on up to ``workers`` threads; the row order does not depend on
    which job finishes first.
    """
    unknown = [v for v in variants if v not in VARIANT_WEIGHTS]
    if unknown:
        raise InvalidParameter(f"Unknown ablation variants {unknown}; choose from {list(VARIANT_WEIGHTS)}.")
    jobs = [
        partial(ablation_row, variant, seed, interval, dim, loss_cfg, tracker_cfg, steps, lr, iou_threshold)
        for variant in variants
        for interval in (intervals or [loss_cfg.interval])
        for dim in dims
        for seed in seeds
    ]
    results: list[AblationRow | Exception | None] = [None] * len(jobs)

    async def _run_all() -> None:
        limiter = anyio.CapacityLimiter(workers)

        async def _run_one(index: int) -> None:
            try:
                results[index] = await anyio.to_thread.run_sync(jobs[index], limiter=limiter)
            except Exception as exc:
                results[index] = exc

        async with anyio.create_task_group() as tg:
            for index in range(len(jobs)):
                tg.start_soon(_run_one, index)

    anyio.run(_run_all)
    # surface the first failure in job order rather than an exception group
    for result in results:
        if isinstance(result, Exception):
            raise result
    return results


def ablation_table(rows: Sequence[AblationRow]) -> Table:
    table = Table(title="Loss ablation")
    for name in ("variant", "seed", "interval", "dim", "IDF1", "MOTA", "IDS", "MT", "ML", "final loss"):
        table.add_column(name, justify="left" if name == "variant" else "right")
    for r in rows:
        table.add_row(
            r.variant,
            str(r.seed),
            str(r.interval),
            str(r.embed_dim),
            f"{r.idf1:.4f}",
            f"{r.mota:.4f}",
            str(r.ids),
            str(r.mt),
            str(r.ml),
            f"{r.final_loss:.6f}",
        )
    return table
