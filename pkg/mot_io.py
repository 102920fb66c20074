# /ucsl/mot_io.py
"""
Reading and writing MOT-Challenge style text files and the binary embedding
sidecar that travels with a detection file.

Text layout, one record per line, ten comma-separated fields:

    frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z

Frames are 1-based. ``id`` is -1 for detections that carry no identity.
Integers are written without a decimal point; reals use the shortest
decimal that round-trips (``repr``), with a trailing ``.0`` dropped.

Sidecar layout (little-endian): a 14-byte header ``b"UCSE"``, uint16
version, uint32 embedding dimension, uint32 row count; then ``count x D``
float32 values, one row per record in file order.
"""
import logging
import math
import os
import struct
from typing import Iterable, Sequence

import numpy as np
from pydantic import ValidationError

from exceptions import CountMismatch, HeaderMismatch, IdRequired, ParseError, RecordValidationError
from models import Detection, GroundTruth, MotKind, MotRecord, TrackRecord

logger = logging.getLogger(__name__)

FIELDS = ("frame", "id", "bb_left", "bb_top", "bb_width", "bb_height", "conf", "x", "y", "z")
INTEGER_FIELDS = frozenset({"frame", "id"})

SIDECAR_MAGIC = b"UCSE"
SIDECAR_VERSION = 1
SIDECAR_HEADER = struct.Struct("<4sHII")
SIDECAR_DTYPE = np.dtype("<f4")
DEFAULT_EMBED_DIM = 128


# --- Number formatting ---


def format_real(value: float) -> str:
    text = repr(float(value))
    return text[:-2] if text.endswith(".0") else text


def format_record(record: MotRecord) -> str:
    values = record.model_dump()
    return ",".join(str(int(values[f])) if f in INTEGER_FIELDS else format_real(values[f]) for f in FIELDS)


def _parse_integer(text: str, line: int, name: str) -> int:
    try:
        return int(text)
    except ValueError:
        pass
    try:
        value = float(text)
    except ValueError:
        raise ParseError(line, f"{name} is not a number: {text!r}")
    if not value.is_integer():
        raise ParseError(line, f"{name} must be an integer, got {text!r}")
    return int(value)


def _parse_real(text: str, line: int, name: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(line, f"{name} is not a number: {text!r}")
    if not math.isfinite(value):
        raise ParseError(line, f"{name} must be finite, got {text!r}")
    return value


def parse_line(text: str, line: int) -> MotRecord:
    fields = [part.strip() for part in text.split(",")]
    if len(fields) != len(FIELDS):
        raise ParseError(line, f"expected {len(FIELDS)} fields, got {len(fields)}")
    values = {
        name: _parse_integer(raw, line, name) if name in INTEGER_FIELDS else _parse_real(raw, line, name)
        for name, raw in zip(FIELDS, fields)
    }
    try:
        return MotRecord(**values)
    except ValidationError as exc:
        raise ParseError(line, "; ".join(err["msg"] for err in exc.errors()))


# --- Text records ---


def _read_in_file_order(source: str | os.PathLike, kind: MotKind) -> list[MotRecord]:
    records = []
    with open(source, "rb") as f:
        for line_no, raw in enumerate(f, start=1):
            try:
                text = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise ParseError(line_no, f"not valid UTF-8: {exc.reason}")
            if not text.strip():
                continue
            record = parse_line(text, line_no)
            if kind == MotKind.GT and record.id < 1:
                raise IdRequired(line_no)
            records.append(record)
    logger.info(f"Read {len(records)} {kind} records from {source}")
    return records


def sort_key(record: MotRecord) -> tuple[int, int]:
    return (record.frame, record.id)


def read(source: str | os.PathLike, kind: MotKind | str = MotKind.DET) -> list[MotRecord]:
    """
    Parses a record file.

    Returns:
        Records sorted by (frame, id); records sharing both keep file order.

    Raises:
        ParseError: on a line with the wrong field count, a non-numeric field
            or a value violating the record invariants. Carries the 1-based line.
        IdRequired: for ground truth lines whose id is below 1.
    """
    return sorted(_read_in_file_order(source, MotKind(kind)), key=sort_key)


def validate_records(records: Iterable[MotRecord]) -> list[MotRecord]:
    checked = []
    for index, record in enumerate(records):
        try:
            checked.append(MotRecord.model_validate(dict(record)))
        except ValidationError as exc:
            raise RecordValidationError(index, "; ".join(err["msg"] for err in exc.errors()))
    return checked


def write(records: Sequence[MotRecord], destination: str | os.PathLike) -> None:
    """Writes records in the given order, one line each, newline terminated."""
    checked = validate_records(records)
    with open(destination, "w", encoding="utf-8", newline="\n") as f:
        f.write("".join(format_record(r) + "\n" for r in checked))
    logger.info(f"Wrote {len(checked)} records to {destination}")


# --- Embedding sidecar ---


def write_embeddings(embeddings: np.ndarray, destination: str | os.PathLike) -> None:
    rows = np.asarray(embeddings)
    if rows.ndim != 2:
        raise ValueError(f"embeddings must be a (count, D) array, got shape {rows.shape}")
    count, dim = rows.shape
    with open(destination, "wb") as f:
        f.write(SIDECAR_HEADER.pack(SIDECAR_MAGIC, SIDECAR_VERSION, dim, count))
        f.write(rows.astype(SIDECAR_DTYPE).tobytes(order="C"))


def read_embeddings(source: str | os.PathLike, expected_count: int | None = None) -> np.ndarray:
    """
    Loads a sidecar as a (count, D) float32 array.

    Raises:
        HeaderMismatch: bad magic, unknown version, truncated header or a
            payload whose size disagrees with the header.
        CountMismatch: if expected_count is given and differs from the stored count.
    """
    with open(source, "rb") as f:
        blob = f.read()
    if len(blob) < SIDECAR_HEADER.size:
        raise HeaderMismatch(f"{source}: file is shorter than the {SIDECAR_HEADER.size}-byte header.")
    magic, version, dim, count = SIDECAR_HEADER.unpack_from(blob)
    if magic != SIDECAR_MAGIC:
        raise HeaderMismatch(f"{source}: bad magic {magic!r}.")
    if version != SIDECAR_VERSION:
        raise HeaderMismatch(f"{source}: unsupported sidecar version {version}.")
    payload = blob[SIDECAR_HEADER.size :]
    if len(payload) != count * dim * SIDECAR_DTYPE.itemsize:
        raise HeaderMismatch(f"{source}: header announces {count}x{dim} floats, payload holds {len(payload)} bytes.")
    if expected_count is not None and count != expected_count:
        raise CountMismatch(expected_count, count)
    return np.frombuffer(payload, dtype=SIDECAR_DTYPE).reshape(count, dim).copy()


# --- Domain conversions ---


def detections_to_records(detections: Sequence[Sequence[Detection]]) -> tuple[list[MotRecord], np.ndarray]:
    """Flattens per-frame detections into (records, embedding rows) aligned by position."""
    records, rows = [], []
    for frame in detections:
        for det in frame:
            left, top, w, h = det.box
            records.append(
                MotRecord(frame=det.frame + 1, bb_left=left, bb_top=top, bb_width=w, bb_height=h, conf=det.confidence)
            )
            rows.append(det.embedding)
    dim = rows[0].shape[0] if rows else DEFAULT_EMBED_DIM
    return records, np.array(rows, dtype=np.float64).reshape(len(rows), dim)


def records_to_detections(
    records: Sequence[MotRecord], embeddings: np.ndarray, num_frames: int | None = None
) -> list[list[Detection]]:
    """Groups aligned records and embeddings into 0-based frames; missing conf (-1) reads as 1."""
    if len(records) != len(embeddings):
        raise CountMismatch(len(records), len(embeddings))
    order = sorted(range(len(records)), key=lambda i: sort_key(records[i]))
    last = max((r.frame for r in records), default=0)
    frames: list[list[Detection]] = [[] for _ in range(max(last, num_frames or 0))]
    for i in order:
        r = records[i]
        conf = 1.0 if r.conf < 0 else min(r.conf, 1.0)
        frames[r.frame - 1].append(Detection(frame=r.frame - 1, box=r.box, confidence=conf, embedding=embeddings[i]))
    return frames


def read_detections(
    det_path: str | os.PathLike, emb_path: str | os.PathLike, num_frames: int | None = None
) -> list[list[Detection]]:
    """Loads a detection file and its sidecar into per-frame Detection lists."""
    records = _read_in_file_order(det_path, MotKind.DET)
    embeddings = read_embeddings(emb_path, expected_count=len(records))
    return records_to_detections(records, embeddings, num_frames)


def write_detections(
    detections: Sequence[Sequence[Detection]], det_path: str | os.PathLike, emb_path: str | os.PathLike
) -> None:
    records, rows = detections_to_records(detections)
    write(records, det_path)
    write_embeddings(rows, emb_path)


def ground_truth_to_records(ground_truth: GroundTruth) -> list[MotRecord]:
    """Visible entries only; hidden ones are not annotated."""
    records = []
    for t, entries in enumerate(ground_truth.frames):
        for entry in sorted(entries, key=lambda e: e.identity):
            if not entry.visible:
                continue
            left, top, w, h = entry.box
            records.append(
                MotRecord(frame=t + 1, id=entry.identity, bb_left=left, bb_top=top, bb_width=w, bb_height=h, conf=1.0)
            )
    return records


def track_records_to_mot(tracks: Sequence[TrackRecord]) -> list[MotRecord]:
    return [
        MotRecord(
            frame=r.frame + 1,
            id=r.track_id,
            bb_left=r.box[0],
            bb_top=r.box[1],
            bb_width=r.box[2],
            bb_height=r.box[3],
            conf=r.confidence,
        )
        for r in tracks
    ]
