# /ucsl/embedding_core.py
"""
Dense-matrix primitives every contrast loss is built from: column
normalization, cosine similarity, temperature row softmax and composition of
assignment matrices.

The public functions take and return the typed containers from ``models``;
the ``*_array`` helpers do the same work on bare numpy arrays
and are what the loss and gradient code call in its inner loops.
"""
import logging

import numpy as np

from exceptions import DimMismatch, EmptyMatrix, InvalidParameter, ShapeMismatch, ZeroColumn
from models import AssignmentMatrix, EmbeddingMatrix, SimilarityMatrix

logger = logging.getLogger(__name__)

MIN_COLUMN_NORM = 1e-12


# --- Array helpers ---


def normalize_array(data: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(data, axis=0)
    bad = np.flatnonzero(norms < MIN_COLUMN_NORM)
    if bad.size:
        raise ZeroColumn(int(bad[0]))
    return data / norms


def softmax_rows_array(scores: np.ndarray, tau: float) -> np.ndarray:
    """Row softmax of scores / tau, stabilized by subtracting each row's max."""
    scaled = scores / tau
    scaled = scaled - scaled.max(axis=1, keepdims=True)
    weights = np.exp(scaled)
    return weights / weights.sum(axis=1, keepdims=True)


# --- Typed operations ---


def normalize_columns(embeddings: EmbeddingMatrix) -> EmbeddingMatrix:
    """
    Scales every column to unit L2 norm.

    Raises:
        ZeroColumn: if a column's norm is below 1e-12.
    """
    return EmbeddingMatrix(data=normalize_array(embeddings.data))


def similarity(a: EmbeddingMatrix, b: EmbeddingMatrix) -> SimilarityMatrix:
    """Cosine similarity matrix a^T b for two normalized embedding matrices."""
    if a.dim != b.dim:
        raise DimMismatch(a.dim, b.dim)
    return SimilarityMatrix(data=a.data.T @ b.data)


def row_softmax(scores: SimilarityMatrix, tau: float) -> AssignmentMatrix:
    """
    Turns similarities into matching probabilities, one distribution per row.

    Args:
        scores: raw similarities; needs at least one row and one column.
        tau: temperature, strictly positive. Smaller values sharpen the rows.

    Raises:
        EmptyMatrix: if scores has no rows or no columns.
        InvalidParameter: if tau is not positive.
    """
    if tau <= 0:
        raise InvalidParameter(f"Softmax temperature must be positive, got {tau}.")
    if scores.rows == 0 or scores.cols == 0:
        raise EmptyMatrix(f"Cannot softmax an empty {scores.rows}x{scores.cols} matrix.")
    return AssignmentMatrix(data=softmax_rows_array(scores.data, tau))


def compose(a: AssignmentMatrix, b: AssignmentMatrix) -> AssignmentMatrix:
    """Chains two assignments (a: X->Y, b: Y->Z) into X->Z by matrix product."""
    if a.cols != b.rows:
        raise ShapeMismatch(f"Cannot compose {a.rows}x{a.cols} with {b.rows}x{b.cols}.")
    return AssignmentMatrix(data=a.data @ b.data)
