# /ucsl/loss_optimizer.py
"""
Gradients of the contrast losses with respect to raw (pre-normalization)
embeddings, a finite-difference checker, and a plain gradient-descent loop.

The analytic path is a hand-written reverse pass through the same graph the
forward losses build: column normalization -> cosine similarity -> row
softmax -> matrix product -> softmax / log / JSD / entropy. The ambiguous
subsets used by ambiguity contrast are piecewise constant in the inputs, so
they are selected on the forward pass and treated as fixed.
"""
import logging
from typing import Callable, Sequence

import numpy as np

from contrast_losses import (
    INDIRECT_PAIRS,
    ambiguity_coefficient,
    ambiguous_rows,
    entropy_sum,
    js_rows,
    report_for_arrays,
)
from embedding_core import MIN_COLUMN_NORM, normalize_array, softmax_rows_array
from exceptions import DimMismatch, EmptyFrame, InvalidParameter, NonFiniteLoss, ZeroColumn
from models import GradientField, LossConfig, LossReport, OptimizationTrace

logger = logging.getLogger(__name__)

LossFn = Callable[[list[np.ndarray], LossConfig], float]


# --- Vector-Jacobian products ---


def _softmax_vjp(probs: np.ndarray, grad: np.ndarray, tau: float) -> np.ndarray:
    return probs * (grad - np.sum(grad * probs, axis=1, keepdims=True)) / tau


def _normalize_vjp(raw: np.ndarray, unit: np.ndarray, grad: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(raw, axis=0)
    return (grad - unit * np.sum(unit * grad, axis=0, keepdims=True)) / norms


def _log_diag_grad(diag: np.ndarray, epsilon: float) -> np.ndarray:
    """d/d diag of -(1/N) sum log(max(diag, eps))."""
    n = diag.shape[0]
    return np.where(diag > epsilon, -1.0 / (n * np.maximum(diag, epsilon)), 0.0)


# --- Per-term forward + backward on normalized arrays ---


def _direct_term(x1: np.ndarray, cfg: LossConfig) -> tuple[float, np.ndarray]:
    p = softmax_rows_array(x1.T @ x1, cfg.tau)
    diag = np.diag(p)
    value = -float(np.mean(np.log(np.maximum(diag, cfg.epsilon))))
    g_p = np.diag(_log_diag_grad(diag, cfg.epsilon))
    g_s = _softmax_vjp(p, g_p, cfg.tau)
    return value, x1 @ (g_s + g_s.T)


def _indirect_term(xa: np.ndarray, xb: np.ndarray, cfg: LossConfig) -> tuple[float, np.ndarray, np.ndarray]:
    tau = cfg.tau
    s = xa.T @ xb
    p_ab = softmax_rows_array(s, tau)
    p_ba = softmax_rows_array(s.T, tau)
    diag = np.einsum("ij,ji->i", p_ab, p_ba)
    value = -float(np.mean(np.log(np.maximum(diag, cfg.epsilon))))
    g_diag = _log_diag_grad(diag, cfg.epsilon)
    # C = p_ab @ p_ba with dL/dC = diag(g_diag)
    g_ab = g_diag[:, None] * p_ba.T
    g_ba = p_ab.T * g_diag[None, :]
    g_s = _softmax_vjp(p_ab, g_ab, tau) + _softmax_vjp(p_ba, g_ba, tau).T
    return value, xb @ g_s.T, xa @ g_s


def _cross_term(
    x1: np.ndarray, x2: np.ndarray, x3: np.ndarray, cfg: LossConfig
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    tau, eps = cfg.tau, cfg.epsilon
    s12, s23, s13 = x1.T @ x2, x2.T @ x3, x1.T @ x3
    p12, p21 = softmax_rows_array(s12, tau), softmax_rows_array(s12.T, tau)
    p23, p32 = softmax_rows_array(s23, tau), softmax_rows_array(s23.T, tau)
    p13, p31 = softmax_rows_array(s13, tau), softmax_rows_array(s13.T, tau)
    q13 = softmax_rows_array(p12 @ p23, tau)
    q31 = softmax_rows_array(p32 @ p21, tau)
    n, k = x1.shape[1], x3.shape[1]
    value = float(js_rows(q13, p13, eps).sum()) / n + float(js_rows(q31, p31, eps).sum()) / k

    # dJSD/dp = 0.5 log(p / t), t = (p + q) / 2
    t13 = np.maximum((q13 + p13) / 2, eps)
    t31 = np.maximum((q31 + p31) / 2, eps)
    g_q13 = 0.5 * np.log(np.maximum(q13, eps) / t13) / n
    g_p13 = 0.5 * np.log(np.maximum(p13, eps) / t13) / n
    g_q31 = 0.5 * np.log(np.maximum(q31, eps) / t31) / k
    g_p31 = 0.5 * np.log(np.maximum(p31, eps) / t31) / k

    g_c13 = _softmax_vjp(q13, g_q13, tau)
    g_c31 = _softmax_vjp(q31, g_q31, tau)
    g_p12 = g_c13 @ p23.T
    g_p23 = p12.T @ g_c13
    g_p32 = g_c31 @ p21.T
    g_p21 = p32.T @ g_c31

    g_s12 = _softmax_vjp(p12, g_p12, tau) + _softmax_vjp(p21, g_p21, tau).T
    g_s23 = _softmax_vjp(p23, g_p23, tau) + _softmax_vjp(p32, g_p32, tau).T
    g_s13 = _softmax_vjp(p13, g_p13, tau) + _softmax_vjp(p31, g_p31, tau).T

    g1 = x2 @ g_s12.T + x3 @ g_s13.T
    g2 = x1 @ g_s12 + x3 @ g_s23.T
    g3 = x2 @ g_s23 + x1 @ g_s13
    return value, g1, g2, g3


def _ambiguity_term(x1: np.ndarray, x2: np.ndarray, cfg: LossConfig) -> tuple[float, np.ndarray, np.ndarray]:
    tau, eps = cfg.tau, cfg.epsilon
    g1, g2 = np.zeros_like(x1), np.zeros_like(x2)
    s = x1.T @ x2
    rows1, rows2 = ambiguous_rows(s, cfg.theta), ambiguous_rows(s.T, cfg.theta)
    n_r, m_r = len(rows1), len(rows2)
    if n_r == 0 or m_r == 0:
        return 0.0, g1, g2
    a, b = x1[:, rows1], x2[:, rows2]
    r = a.T @ b
    p_f = softmax_rows_array(r, tau)
    p_b = softmax_rows_array(r.T, tau)
    coef = ambiguity_coefficient(n_r, m_r)
    value = -coef * (entropy_sum(p_f, eps) / n_r + entropy_sum(p_b, eps) / m_r)

    g_pf = -coef / n_r * (np.log(np.maximum(p_f, eps)) + 1.0)
    g_pb = -coef / m_r * (np.log(np.maximum(p_b, eps)) + 1.0)
    g_r = _softmax_vjp(p_f, g_pf, tau) + _softmax_vjp(p_b, g_pb, tau).T
    g1[:, rows1] = b @ g_r.T
    g2[:, rows2] = a @ g_r
    return value, g1, g2


def loss_and_gradient(frames: Sequence[np.ndarray], cfg: LossConfig) -> tuple[LossReport, list[np.ndarray]]:
    """
    Total loss of one raw frame triple and its gradient w.r.t. the raw embeddings.

    Terms whose weight is zero are neither evaluated nor differentiated; their
    report fields are 0.
    """
    raw = [np.asarray(f, dtype=np.float64) for f in frames]
    for frame in raw[1:]:
        if frame.shape[0] != raw[0].shape[0]:
            raise DimMismatch(raw[0].shape[0], frame.shape[0])
    for position, frame in enumerate(raw, start=1):
        if frame.shape[1] == 0:
            raise EmptyFrame(f"Frame {position} has no objects.")
    units = [normalize_array(f) for f in raw]
    grads = [np.zeros_like(u) for u in units]
    x1, x2, x3 = units

    l_dsc = l_isc = cc = ac = 0.0
    if cfg.w_dsc:
        l_dsc, g = _direct_term(x1, cfg)
        grads[0] += cfg.w_dsc * g
    if cfg.w_isc:
        for a, b in INDIRECT_PAIRS[cfg.indirect_pairs]:
            value, ga, gb = _indirect_term(units[a], units[b], cfg)
            l_isc += value
            grads[a] += cfg.w_isc * ga
            grads[b] += cfg.w_isc * gb
    if cfg.w_cc:
        cc, g1, g2, g3 = _cross_term(x1, x2, x3, cfg)
        for i, g in enumerate((g1, g2, g3)):
            grads[i] += cfg.w_cc * g
    if cfg.w_ac:
        ac, g1, g2 = _ambiguity_term(x1, x2, cfg)
        grads[0] += cfg.w_ac * g1
        grads[1] += cfg.w_ac * g2

    l_sc = cfg.w_dsc * l_dsc + cfg.w_isc * l_isc
    l_cc = cfg.w_cc * cc
    l_ac = cfg.w_ac * ac
    report = LossReport(l_dsc=l_dsc, l_isc=l_isc, l_sc=l_sc, l_cc=l_cc, l_ac=l_ac, total=(l_sc + l_cc) + l_ac)
    raw_grads = [_normalize_vjp(r, u, g) for r, u, g in zip(raw, units, grads)]
    return report, raw_grads


# --- Public operations ---


def loss_value(frames: Sequence[np.ndarray], cfg: LossConfig) -> float:
    """Total loss of a raw frame triple, normalizing inside; what numeric_gradient differentiates."""
    return report_for_arrays([normalize_array(np.asarray(f, dtype=np.float64)) for f in frames], cfg).total


def numeric_gradient(loss_fn: LossFn, frames: Sequence[np.ndarray], cfg: LossConfig, h: float = 1e-5) -> GradientField:
    """
    Central-difference gradient (L(x+h) - L(x-h)) / 2h, one raw entry at a time.

    loss_fn receives the perturbed raw frames, so any normalization belongs
    inside it.

    Raises:
        InvalidParameter: if h is outside [1e-7, 1e-4].
        NonFiniteLoss: if the loss is not finite at the base point or at a perturbation.
    """
    if not 1e-7 <= h <= 1e-4:
        raise InvalidParameter(f"Finite-difference step must lie in [1e-7, 1e-4], got {h}.")
    work = [np.array(f, dtype=np.float64) for f in frames]
    base = loss_fn(work, cfg)
    if not np.isfinite(base):
        raise NonFiniteLoss(f"Loss is {base} at the base point.")

    grads = []
    for frame in work:
        grad = np.zeros_like(frame)
        for index in np.ndindex(frame.shape):
            original = frame[index]
            frame[index] = original + h
            plus = loss_fn(work, cfg)
            frame[index] = original - h
            minus = loss_fn(work, cfg)
            frame[index] = original
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise NonFiniteLoss(f"Loss became non-finite when perturbing entry {index}.")
            grad[index] = (plus - minus) / (2 * h)
        grads.append(grad)
    return GradientField(frames=grads)


def analytic_gradient(frames: Sequence[np.ndarray], cfg: LossConfig) -> GradientField:
    """Exact gradient of total_loss w.r.t. the raw embeddings of a frame triple."""
    _, grads = loss_and_gradient(frames, cfg)
    return GradientField(frames=grads)


def mean_self_diag(x1: np.ndarray, x2: np.ndarray, tau: float) -> float:
    """Mean of diag(S_isc) between two normalized frames; 1.0 means perfect round trips."""
    s = x1.T @ x2
    return float(np.mean(np.einsum("ij,ji->i", softmax_rows_array(s, tau), softmax_rows_array(s.T, tau))))


def _descend(frame: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    stepped = frame - lr * grad
    try:
        return normalize_array(stepped)
    except ZeroColumn as exc:
        logger.warning(f"Gradient step collapsed column {exc.index}; keeping its previous value.")
        norms = np.linalg.norm(stepped, axis=0)
        stepped[:, norms < MIN_COLUMN_NORM] = frame[:, norms < MIN_COLUMN_NORM]
        return normalize_array(stepped)


def _check_schedule(steps: int, lr: float) -> None:
    if steps < 1:
        raise InvalidParameter(f"steps must be >= 1, got {steps}.")
    if not 0 < lr <= 1:
        raise InvalidParameter(f"Learning rate must lie in (0, 1], got {lr}.")


def optimize(
    frames: Sequence[np.ndarray], cfg: LossConfig, steps: int, lr: float
) -> tuple[list[OptimizationTrace], list[np.ndarray]]:
    """
    Plain full-batch gradient descent on one frame triple.

    Embeddings are re-normalized after every step. The trace holds the state
    before each of the ``steps`` updates and after the last one, so it has
    steps + 1 records numbered 0..steps.

    Returns:
        (trace, optimized normalized frames)
    """
    _check_schedule(steps, lr)
    current = [normalize_array(np.asarray(f, dtype=np.float64)) for f in frames]
    trace = []
    for step in range(steps + 1):
        report, grads = loss_and_gradient(current, cfg)
        trace.append(
            OptimizationTrace(
                step=step, loss_report=report, mean_self_diag=mean_self_diag(current[0], current[1], cfg.tau)
            )
        )
        if step == steps:
            break
        current = [_descend(f, g, lr) for f, g in zip(current, grads)]
    logger.info(f"Descent finished: loss {trace[0].loss_report.total:.6f} -> {trace[-1].loss_report.total:.6f}")
    return trace, current


def sequence_triples(num_frames: int, interval: int) -> list[tuple[int, int, int]]:
    """Every (t - 2g, t - g, t) with t - 2g >= 0, in increasing t."""
    return [(t - 2 * interval, t - interval, t) for t in range(2 * interval, num_frames)]


def _sequence_step(
    frames: list[np.ndarray], triples: list[tuple[int, int, int]], cfg: LossConfig
) -> tuple[LossReport, float, list[np.ndarray]]:
    grads = [np.zeros_like(f) for f in frames]
    totals = np.zeros(6)
    diag_sum = 0.0
    used = 0
    for triple in triples:
        batch = [frames[i] for i in triple]
        if any(f.shape[1] == 0 for f in batch):
            continue
        report, triple_grads = loss_and_gradient(batch, cfg)
        for i, g in zip(triple, triple_grads):
            grads[i] += g
        totals += (report.l_dsc, report.l_isc, report.l_sc, report.l_cc, report.l_ac, report.total)
        diag_sum += mean_self_diag(batch[0], batch[1], cfg.tau)
        used += 1
    if used == 0:
        return LossReport(skipped=True), 0.0, grads
    l_dsc, l_isc, l_sc, l_cc, l_ac, _ = totals / used
    report = LossReport(l_dsc=l_dsc, l_isc=l_isc, l_sc=l_sc, l_cc=l_cc, l_ac=l_ac, total=(l_sc + l_cc) + l_ac)
    return report, diag_sum / used, [g / used for g in grads]


def _normalized_sequence(frames: Sequence[np.ndarray]) -> list[np.ndarray]:
    normalized = []
    for frame in frames:
        frame = np.asarray(frame, dtype=np.float64)
        normalized.append(normalize_array(frame) if frame.shape[1] else frame)
    return normalized


def sequence_loss(frames: Sequence[np.ndarray], cfg: LossConfig) -> LossReport:
    """Mean LossReport over every frame triple of a sequence; skipped if no triple has three non-empty frames."""
    current = _normalized_sequence(frames)
    report, _, _ = _sequence_step(current, sequence_triples(len(current), cfg.interval), cfg)
    return report


def optimize_sequence(
    frames: Sequence[np.ndarray], cfg: LossConfig, steps: int, lr: float
) -> tuple[list[OptimizationTrace], list[np.ndarray]]:
    """
    Gradient descent on the mean total loss over every frame triple of a sequence.

    frames holds one raw D x n_t array per frame (n_t may be 0). Triples are
    spaced by cfg.interval; embeddings shared between overlapping triples
    accumulate their gradients.
    """
    _check_schedule(steps, lr)
    current = _normalized_sequence(frames)
    triples = sequence_triples(len(current), cfg.interval)
    if not triples:
        raise EmptyFrame(f"A sequence of {len(current)} frames has no triple at interval {cfg.interval}.")
    trace = []
    for step in range(steps + 1):
        report, diag, grads = _sequence_step(current, triples, cfg)
        trace.append(OptimizationTrace(step=step, loss_report=report, mean_self_diag=diag))
        if step == steps:
            break
        current = [_descend(f, g, lr) if f.shape[1] else f for f, g in zip(current, grads)]
        if step % 10 == 0:
            logger.info(f"Sequence descent step {step}: loss {report.total:.6f}")
    return trace, current
