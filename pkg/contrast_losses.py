# /ucsl/contrast_losses.py
"""
The three unsupervised contrast losses over identity embeddings and their sum.

Inputs are the normalized embedding matrices of three frames taken ``interval``
apart, oldest first: X1 = frame t-2g, X2 = frame t-g, X3 = frame t.

- Self-contrast pushes every object to match itself, both within a frame
  (direct) and after a forward/backward round trip through another frame
  (indirect).
- Cross-contrast aligns the direct 1->3 assignment with the one composed
  through the middle frame, using a Jensen-Shannon divergence.
- Ambiguity contrast minimizes the matching entropy among the objects whose
  best cross-frame cosine stays below theta (occluded, lost, emerging).
"""
import logging

import numpy as np

from embedding_core import softmax_rows_array
from exceptions import DimMismatch, EmptyFrame, LengthMismatch, ShapeMismatch
from models import AmbiguousSet, AssignmentMatrix, EmbeddingMatrix, LossConfig, LossReport, SimilarityMatrix

logger = logging.getLogger(__name__)

INDIRECT_PAIRS = {
    "adjacent": ((0, 1),),
    "all": ((0, 1), (1, 2), (0, 2)),
}


def _require_frames(*frames: EmbeddingMatrix) -> None:
    dims = {f.dim for f in frames}
    if len(dims) > 1:
        first, *rest = [f.dim for f in frames]
        raise DimMismatch(first, next(d for d in rest if d != first))
    for position, frame in enumerate(frames, start=1):
        if frame.count == 0:
            raise EmptyFrame(f"Frame {position} has no objects.")


# --- Array-level building blocks ---


def kl_rows(p: np.ndarray, q: np.ndarray, epsilon: float) -> np.ndarray:
    """Row-wise KL(p || q); zero-probability entries of p contribute nothing."""
    q = np.maximum(q, epsilon)
    safe_p = np.where(p > 0, p, 1.0)
    return np.where(p > 0, p * np.log(safe_p / q), 0.0).sum(axis=-1)


def js_rows(p: np.ndarray, q: np.ndarray, epsilon: float) -> np.ndarray:
    t = (p + q) / 2
    return 0.5 * kl_rows(p, t, epsilon) + 0.5 * kl_rows(q, t, epsilon)


def entropy_sum(probs: np.ndarray, epsilon: float) -> float:
    """Sum of p * log p over the whole matrix (non-positive)."""
    return float(np.sum(probs * np.log(np.maximum(probs, epsilon))))


def ambiguous_rows(sim: np.ndarray, theta: float) -> list[int]:
    if sim.shape[1] == 0:
        return list(range(sim.shape[0]))
    return np.flatnonzero(sim.max(axis=1) < theta).tolist()


def ambiguity_coefficient(n_r: int, m_r: int) -> float:
    return 1.0 / (abs(n_r - m_r) + 1)


def direct_value(x1: np.ndarray, cfg: LossConfig) -> float:
    s_dsc = softmax_rows_array(x1.T @ x1, cfg.tau)
    return -float(np.mean(np.log(np.maximum(np.diag(s_dsc), cfg.epsilon))))


def indirect_value(xa: np.ndarray, xb: np.ndarray, cfg: LossConfig) -> float:
    s = xa.T @ xb
    s_isc = softmax_rows_array(s, cfg.tau) @ softmax_rows_array(s.T, cfg.tau)
    return -float(np.mean(np.log(np.maximum(np.diag(s_isc), cfg.epsilon))))


def cross_value(x1: np.ndarray, x2: np.ndarray, x3: np.ndarray, cfg: LossConfig) -> float:
    tau, eps = cfg.tau, cfg.epsilon
    s12, s23, s13 = x1.T @ x2, x2.T @ x3, x1.T @ x3
    p12, p21 = softmax_rows_array(s12, tau), softmax_rows_array(s12.T, tau)
    p23, p32 = softmax_rows_array(s23, tau), softmax_rows_array(s23.T, tau)
    p13, p31 = softmax_rows_array(s13, tau), softmax_rows_array(s13.T, tau)
    q13 = softmax_rows_array(p12 @ p23, tau)
    q31 = softmax_rows_array(p32 @ p21, tau)
    n, k = x1.shape[1], x3.shape[1]
    forward = float(js_rows(q13, p13, eps).sum()) / n
    backward = float(js_rows(q31, p31, eps).sum()) / k
    return forward + backward


def ambiguity_value_for_sets(
    x1: np.ndarray, x2: np.ndarray, rows1: list[int], rows2: list[int], cfg: LossConfig
) -> float:
    n_r, m_r = len(rows1), len(rows2)
    if n_r == 0 or m_r == 0:
        return 0.0
    r = x1[:, rows1].T @ x2[:, rows2]
    forward = entropy_sum(softmax_rows_array(r, cfg.tau), cfg.epsilon) / n_r
    backward = entropy_sum(softmax_rows_array(r.T, cfg.tau), cfg.epsilon) / m_r
    return -ambiguity_coefficient(n_r, m_r) * (forward + backward)


def ambiguity_value(x1: np.ndarray, x2: np.ndarray, cfg: LossConfig) -> float:
    s = x1.T @ x2
    return ambiguity_value_for_sets(x1, x2, ambiguous_rows(s, cfg.theta), ambiguous_rows(s.T, cfg.theta), cfg)


# --- Self-contrast ---


def direct_self_assignment(x1: EmbeddingMatrix, cfg: LossConfig) -> AssignmentMatrix:
    """S_dsc: row softmax of the within-frame self-similarity X1^T X1."""
    _require_frames(x1)
    return AssignmentMatrix(data=softmax_rows_array(x1.data.T @ x1.data, cfg.tau))


def indirect_self_assignment(x1: EmbeddingMatrix, x2: EmbeddingMatrix, cfg: LossConfig) -> AssignmentMatrix:
    """S_isc = S^{1->2} S^{2->1}: where each frame-1 object lands after a round trip through frame 2."""
    _require_frames(x1, x2)
    s = x1.data.T @ x2.data
    forward = softmax_rows_array(s, cfg.tau)
    backward = softmax_rows_array(s.T, cfg.tau)
    return AssignmentMatrix(data=forward @ backward)


def direct_self_contrast(x1: EmbeddingMatrix, cfg: LossConfig) -> float:
    _require_frames(x1)
    return direct_value(x1.data, cfg)


def indirect_self_contrast(x1: EmbeddingMatrix, x2: EmbeddingMatrix, cfg: LossConfig) -> float:
    _require_frames(x1, x2)
    return indirect_value(x1.data, x2.data, cfg)


def self_contrast_loss(x1: EmbeddingMatrix, x2: EmbeddingMatrix, cfg: LossConfig) -> float:
    """
    L_sc = -(1/N) (sum log diag(S_dsc) + sum log diag(S_isc)).

    Diagonal entries are clamped to cfg.epsilon before the logarithm. The value
    is zero only when both diagonals are all ones.
    """
    return direct_self_contrast(x1, cfg) + indirect_self_contrast(x1, x2, cfg)


# --- Divergences ---


def kl_divergence(p, q, epsilon: float = 1e-12) -> float:
    """KL(p || q) for two discrete distributions; q is clamped to epsilon."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise LengthMismatch(f"Distributions must be 1-d and equally long, got {p.shape} and {q.shape}.")
    return float(kl_rows(p, q, epsilon))


def js_divergence(p: AssignmentMatrix, q: AssignmentMatrix, epsilon: float = 1e-12) -> float:
    """
    Jensen-Shannon divergence applied row by row and summed over rows.

    Each row contributes a value in [0, log 2]; the result is symmetric in p and q.
    """
    if p.data.shape != q.data.shape:
        raise ShapeMismatch(f"Cannot compare {p.data.shape} with {q.data.shape} assignments.")
    return float(js_rows(p.data, q.data, epsilon).sum())


# --- Cross-contrast ---


def cross_assignments(
    x1: EmbeddingMatrix, x2: EmbeddingMatrix, x3: EmbeddingMatrix, cfg: LossConfig
) -> dict[str, AssignmentMatrix]:
    """All pairwise assignments between the three frames plus the two composed routes."""
    _require_frames(x1, x2, x3)
    tau = cfg.tau
    a, b, c = x1.data, x2.data, x3.data
    named = {
        "1->2": softmax_rows_array(a.T @ b, tau),
        "2->1": softmax_rows_array(b.T @ a, tau),
        "2->3": softmax_rows_array(b.T @ c, tau),
        "3->2": softmax_rows_array(c.T @ b, tau),
        "1->3": softmax_rows_array(a.T @ c, tau),
        "3->1": softmax_rows_array(c.T @ a, tau),
    }
    named["*1->3"] = softmax_rows_array(named["1->2"] @ named["2->3"], tau)
    named["*3->1"] = softmax_rows_array(named["3->2"] @ named["2->1"], tau)
    return {key: AssignmentMatrix(data=value) for key, value in named.items()}


def cross_contrast_loss(x1: EmbeddingMatrix, x2: EmbeddingMatrix, x3: EmbeddingMatrix, cfg: LossConfig) -> float:
    """
    L_cc = (1/N) JSD(S_*^{1->3} || S^{1->3}) + (1/K) JSD(S_*^{3->1} || S^{3->1}).

    The composed routes are re-softmaxed with the same temperature, exactly as
    the direct ones.
    """
    _require_frames(x1, x2, x3)
    return cross_value(x1.data, x2.data, x3.data, cfg)


# --- Ambiguity contrast ---


def find_ambiguous(
    assign: AssignmentMatrix, sim: SimilarityMatrix, cfg: LossConfig, frame_index: int = 0
) -> AmbiguousSet:
    """
    Rows whose best raw cosine similarity is below cfg.theta.

    The threshold is compared against the cosine in ``sim``, not against the
    softmax probability in ``assign``; ``assign`` only fixes the direction and
    shape. A row with no candidates at all (empty other frame) is ambiguous.
    """
    if assign.data.shape != sim.data.shape:
        raise ShapeMismatch(f"Assignment {assign.data.shape} and similarity {sim.data.shape} differ in shape.")
    return AmbiguousSet(frame_index=frame_index, indices=ambiguous_rows(sim.data, cfg.theta))


def ambiguity_contrast_loss(x1: EmbeddingMatrix, x2: EmbeddingMatrix, cfg: LossConfig) -> float:
    """
    Entropy of the matching among ambiguous objects of two frames.

    L_ac = -c ((1/N_r) sum S_r^{1->2} log S_r^{1->2} + (1/M_r) sum S_r^{2->1} log S_r^{2->1}),
    with c = 1 / (|N_r - M_r| + 1). S_r^{1->2} is the N_r x M_r row softmax of
    cosines between the two ambiguous subsets. Returns 0 when either subset
    is empty.
    """
    _require_frames(x1, x2)
    return ambiguity_value(x1.data, x2.data, cfg)


# --- Combined loss ---


def total_loss(x1: EmbeddingMatrix, x2: EmbeddingMatrix, x3: EmbeddingMatrix, cfg: LossConfig) -> LossReport:
    """
    Weighted sum of the three contrast losses over one frame triple.

    With the default unit weights this is L = L_sc + L_cc + L_ac. A triple
    containing an empty frame yields an all-zero report flagged as skipped.
    """
    frames = (x1, x2, x3)
    if len({f.dim for f in frames}) > 1:
        _require_frames(*frames)
    if any(f.count == 0 for f in frames):
        logger.info(f"Skipping frame triple with object counts {[f.count for f in frames]}.")
        return LossReport(skipped=True)
    return report_for_arrays([f.data for f in frames], cfg)


def report_for_arrays(frames: list[np.ndarray], cfg: LossConfig) -> LossReport:
    """total_loss on bare normalized arrays; every frame must be non-empty."""
    x1, x2, x3 = frames
    l_dsc = direct_value(x1, cfg)
    l_isc = sum(indirect_value(frames[a], frames[b], cfg) for a, b in INDIRECT_PAIRS[cfg.indirect_pairs])
    cc = cross_value(x1, x2, x3, cfg)
    ac = ambiguity_value(x1, x2, cfg)
    l_sc = cfg.w_dsc * l_dsc + cfg.w_isc * l_isc
    l_cc = cfg.w_cc * cc
    l_ac = cfg.w_ac * ac
    return LossReport(l_dsc=l_dsc, l_isc=l_isc, l_sc=l_sc, l_cc=l_cc, l_ac=l_ac, total=(l_sc + l_cc) + l_ac)
