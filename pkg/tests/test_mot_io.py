import numpy as np
import pytest

import mot_io
from exceptions import CountMismatch, HeaderMismatch, IdRequired, ParseError, RecordValidationError
from models import GroundTruth, GroundTruthEntry, MotRecord, TrackRecord


def _record(frame=1, id=-1, left=0.0, top=0.0, w=10.0, h=20.0, conf=-1.0):
    return MotRecord(frame=frame, id=id, bb_left=left, bb_top=top, bb_width=w, bb_height=h, conf=conf)


# --- Text format ---


@pytest.mark.parametrize(("value", "text"), [(1.0, "1"), (0.5, "0.5"), (-1.0, "-1"), (0.1, "0.1"), (1e-7, "1e-07")])
def test_format_real(value, text):
    assert mot_io.format_real(value) == text


def test_format_record():
    line = mot_io.format_record(_record(frame=3, id=7, left=1.5, top=2.0, conf=0.75))
    assert line == "3,7,1.5,2,10,20,0.75,-1,-1,-1"


def test_parse_line_accepts_integral_reals():
    record = mot_io.parse_line("2.0, 5, 1.25, 3, 4, 8, 0.9, -1, -1, -1", 1)
    assert record.frame == 2 and record.id == 5
    assert record.box == (1.25, 3.0, 4.0, 8.0)


@pytest.mark.parametrize(
    "text",
    [
        "1,2,3,4,5,6,7,8,9",
        "1,2,3,4,5,6,7,8,9,10,11",
        "one,2,3,4,5,6,7,8,9,10",
        "1.5,2,3,4,5,6,7,8,9,10",
        "1,2,3,4,0,6,7,8,9,10",
        "0,2,3,4,5,6,7,8,9,10",
    ],
)
def test_parse_line_rejects_bad_lines(text):
    with pytest.raises(ParseError) as exc_info:
        mot_io.parse_line(text, 12)
    assert exc_info.value.line == 12


def test_read_sorts_and_skips_blank_lines(tmp_path):
    path = tmp_path / "res.txt"
    path.write_text("2,1,0,0,1,1,1,-1,-1,-1\n\n1,3,0,0,1,1,1,-1,-1,-1\n1,2,0,0,1,1,1,-1,-1,-1\n")
    records = mot_io.read(path, "result")
    assert [(r.frame, r.id) for r in records] == [(1, 2), (1, 3), (2, 1)]


def test_read_reports_line_of_bad_record(tmp_path):
    path = tmp_path / "det.txt"
    path.write_text("1,-1,0,0,1,1,1,-1,-1,-1\n1,-1,0,0,1\n")
    with pytest.raises(ParseError) as exc_info:
        mot_io.read(path)
    assert exc_info.value.line == 2


def test_ground_truth_requires_identity(tmp_path):
    path = tmp_path / "gt.txt"
    path.write_text("1,1,0,0,1,1,1,-1,-1,-1\n1,-1,0,0,1,1,1,-1,-1,-1\n")
    with pytest.raises(IdRequired) as exc_info:
        mot_io.read(path, "gt")
    assert exc_info.value.line == 2
    assert len(mot_io.read(path, "det")) == 2


def test_write_then_read_keeps_values(tmp_path):
    records = [_record(frame=1, id=4, left=0.1, top=1 / 3, conf=0.123456789), _record(frame=2, id=1, left=-3.5)]
    path = tmp_path / "out.txt"
    mot_io.write(records, path)
    assert path.read_text().endswith("\n")
    assert mot_io.read(path, "result") == records


def test_write_validates_records(tmp_path):
    bad = MotRecord.model_construct(frame=0, id=1, bb_left=0.0, bb_top=0.0, bb_width=1.0, bb_height=1.0)
    with pytest.raises(RecordValidationError) as exc_info:
        mot_io.write([_record(), bad], tmp_path / "out.txt")
    assert exc_info.value.index == 1


# --- Sidecar ---


def test_sidecar_round_trip(tmp_path, rng):
    rows = rng.standard_normal((5, 12)).astype(np.float32)
    path = tmp_path / "det.emb"
    mot_io.write_embeddings(rows, path)
    assert path.stat().st_size == mot_io.SIDECAR_HEADER.size + 5 * 12 * 4
    assert np.array_equal(mot_io.read_embeddings(path, expected_count=5), rows)


def test_sidecar_count_mismatch(tmp_path):
    path = tmp_path / "det.emb"
    mot_io.write_embeddings(np.ones((3, 4)), path)
    with pytest.raises(CountMismatch) as exc_info:
        mot_io.read_embeddings(path, expected_count=4)
    assert (exc_info.value.expected, exc_info.value.actual) == (4, 3)


@pytest.mark.parametrize(
    "blob",
    [
        b"UCS",
        mot_io.SIDECAR_HEADER.pack(b"NOPE", 1, 2, 1) + b"\x00" * 8,
        mot_io.SIDECAR_HEADER.pack(b"UCSE", 2, 2, 1) + b"\x00" * 8,
        mot_io.SIDECAR_HEADER.pack(b"UCSE", 1, 2, 3) + b"\x00" * 8,
    ],
)
def test_sidecar_header_mismatch(tmp_path, blob):
    path = tmp_path / "det.emb"
    path.write_bytes(blob)
    with pytest.raises(HeaderMismatch):
        mot_io.read_embeddings(path)


# --- Conversions ---


def test_records_to_detections_groups_frames():
    records = [_record(frame=3, conf=0.5), _record(frame=1), _record(frame=3, conf=2.0, left=5.0)]
    embeddings = np.eye(3)
    frames = mot_io.records_to_detections(records, embeddings, num_frames=5)
    assert [len(f) for f in frames] == [1, 0, 2, 0, 0]
    assert frames[0][0].confidence == 1.0
    assert frames[0][0].frame == 0
    assert np.allclose(frames[0][0].embedding, [0, 1, 0])
    # same (frame, id): file order is kept
    assert [d.confidence for d in frames[2]] == [0.5, 1.0]


def test_records_to_detections_count_mismatch():
    with pytest.raises(CountMismatch):
        mot_io.records_to_detections([_record()], np.eye(2))


def test_detection_files_round_trip(tmp_path, make_detection):
    detections = [[make_detection(frame=0, hot=1)], [], [make_detection(frame=2, hot=2), make_detection(frame=2)]]
    det_path, emb_path = tmp_path / "det.txt", tmp_path / "det.emb"
    mot_io.write_detections(detections, det_path, emb_path)
    loaded = mot_io.read_detections(det_path, emb_path)
    assert [len(f) for f in loaded] == [1, 0, 2]
    assert np.allclose(loaded[2][0].embedding, detections[2][0].embedding, atol=1e-7)
    assert loaded[2][1].box == detections[2][1].box


def test_ground_truth_to_records_skips_hidden_entries():
    ground_truth = GroundTruth(
        frames=[
            [GroundTruthEntry(identity=2, box=(0, 0, 1, 1)), GroundTruthEntry(identity=1, box=(5, 5, 1, 1))],
            [GroundTruthEntry(identity=1, box=(6, 5, 1, 1), visible=False)],
        ]
    )
    records = mot_io.ground_truth_to_records(ground_truth)
    assert [(r.frame, r.id) for r in records] == [(1, 1), (1, 2)]


def test_track_records_are_one_based():
    mot = mot_io.track_records_to_mot([TrackRecord(frame=0, track_id=3, box=(1, 2, 3, 4), confidence=0.8)])
    assert mot[0].frame == 1 and mot[0].id == 3 and mot[0].conf == 0.8


def test_large_seeded_files_round_trip_exactly(tmp_path, rng):
    count = 10_000
    frames = np.sort(rng.integers(1, 500, count))
    records = [
        MotRecord(
            frame=int(f),
            id=int(i),
            bb_left=float(left),
            bb_top=float(top),
            bb_width=float(w),
            bb_height=float(h),
            conf=float(c),
        )
        for f, i, left, top, w, h, c in zip(
            frames,
            np.arange(count),
            rng.uniform(-50, 1000, count),
            rng.uniform(-50, 1000, count),
            rng.uniform(0.5, 80, count),
            rng.uniform(0.5, 160, count),
            rng.uniform(0, 1, count),
        )
    ]
    mot_io.write(records, tmp_path / "big.txt")
    assert mot_io.read(tmp_path / "big.txt", "result") == records

    rows = rng.standard_normal((count, 32)).astype(np.float32)
    mot_io.write_embeddings(rows, tmp_path / "big.emb")
    assert mot_io.read_embeddings(tmp_path / "big.emb", expected_count=count).tobytes() == rows.tobytes()


@pytest.mark.parametrize("text", ["1,-1,nan,20,4,8,0.9,-1,-1,-1", "1,-1,0,inf,4,8,0.9,-1,-1,-1", "1,-1,0,0,4,8,-inf,-1,-1,-1"])
def test_parse_line_rejects_non_finite_values(text):
    with pytest.raises(ParseError) as exc_info:
        mot_io.parse_line(text, 3)
    assert exc_info.value.line == 3


def test_records_reject_non_finite_values():
    with pytest.raises(ValueError):
        _record(left=float("nan"))


def test_read_reports_line_of_invalid_utf8(tmp_path):
    path = tmp_path / "det.txt"
    path.write_bytes(b"1,-1,0,0,1,1,1,-1,-1,-1\n1,1,\xff,0,1,1,1,-1,-1,-1\n")
    with pytest.raises(ParseError) as exc_info:
        mot_io.read(path)
    assert exc_info.value.line == 2
