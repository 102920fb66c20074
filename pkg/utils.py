# /ucsl/utils.py
import logging
import os

import numpy as np
import orjson
import yaml

from exceptions import DegenerateBox
from models import Box

logger = logging.getLogger(__name__)


# --- Box conversions ---


def check_box(box: Box) -> Box:
    """Returns the box unchanged, or raises DegenerateBox if an extent is not positive."""
    _, _, w, h = box
    if not (w > 0 and h > 0):
        raise DegenerateBox(box)
    return box


def tlwh_to_xyah(box: Box) -> np.ndarray:
    """(left, top, w, h) -> (center x, center y, w / h, h)."""
    left, top, w, h = check_box(box)
    return np.array([left + w / 2, top + h / 2, w / h, h], dtype=np.float64)


def xyah_to_tlwh(xyah) -> Box:
    cx, cy, a, h = (float(v) for v in xyah[:4])
    w = a * h
    return (cx - w / 2, cy - h / 2, w, h)


def tlwh_to_xyxy(box: Box) -> tuple[float, float, float, float]:
    left, top, w, h = box
    return (left, top, left + w, top + h)


# --- Output files ---


def ensure_output_dir(output_dir: str) -> str:
    os.makedirs(output_dir, exist_ok=True)
    return output_dir


def write_text_file(content: str, output_dir: str, filename: str) -> str:
    """
    Writes content to output_dir/filename, creating the directory if needed.
    Returns the full path to the written file.
    """
    ensure_output_dir(output_dir)
    path = os.path.join(output_dir, filename)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(content)
    logger.info(f"Wrote {path}")
    return path


def write_yaml_file(document: dict, output_dir: str, filename: str) -> str:
    return write_text_file(yaml.safe_dump(document, sort_keys=True), output_dir, filename)


def json_line(payload) -> str:
    """One JSON document on one line, keys sorted, numpy scalars allowed."""
    return orjson.dumps(payload, option=orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY).decode()


def write_json_lines(rows: list, output_dir: str, filename: str) -> str:
    return write_text_file("".join(json_line(row) + "\n" for row in rows), output_dir, filename)
