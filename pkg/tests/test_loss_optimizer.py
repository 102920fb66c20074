import numpy as np
import pytest

from embedding_core import normalize_array
from exceptions import DimMismatch, EmptyFrame, InvalidParameter, NonFiniteLoss
from loss_optimizer import (
    analytic_gradient,
    loss_and_gradient,
    loss_value,
    mean_self_diag,
    numeric_gradient,
    optimize,
    optimize_sequence,
    sequence_loss,
    sequence_triples,
)
from models import LossConfig

GRADIENT_CONFIGS = [
    LossConfig(),
    LossConfig(tau=0.5),
    LossConfig(indirect_pairs="all"),
    LossConfig(w_dsc=0.3, w_isc=2.0, w_cc=0.5, w_ac=1.5),
    LossConfig(theta=0.3),
]


def _near_threshold(frames, theta, margin=1e-3):
    """True if some best cross cosine between frames 1 and 2 sits within margin of theta."""
    x1, x2 = normalize_array(frames[0]), normalize_array(frames[1])
    s = x1.T @ x2
    best = np.concatenate([s.max(axis=1), s.max(axis=0)])
    return bool(np.any(np.abs(best - theta) < margin))


def _random_triple(rng, theta):
    while True:
        dim = int(rng.integers(4, 17))
        frames = [rng.standard_normal((dim, int(rng.integers(2, 9)))) for _ in range(3)]
        if not _near_threshold(frames, theta):
            return frames


def _identity_frames(rng, identities, dim, sigma, count=3):
    """count frames showing the same identities in the same column order, each a noisy copy of shared latents."""
    latents = normalize_array(rng.standard_normal((dim, identities)))
    return [normalize_array(latents + sigma * rng.standard_normal((dim, identities))) for _ in range(count)]


@pytest.mark.parametrize("cfg", GRADIENT_CONFIGS)
def test_analytic_gradient_matches_central_differences(cfg):
    rng = np.random.default_rng(11)
    for _ in range(5):
        frames = _random_triple(rng, cfg.theta)
        analytic = analytic_gradient(frames, cfg).frames
        numeric = numeric_gradient(loss_value, frames, cfg, h=1e-5).frames
        a = np.concatenate([g.ravel() for g in analytic])
        n = np.concatenate([g.ravel() for g in numeric])
        assert np.max(np.abs(a - n)) / max(np.max(np.abs(n)), 1e-8) < 1e-5


def test_numeric_gradient_of_simple_functionals(rng):
    frames = [rng.standard_normal((3, 2)) for _ in range(3)]
    constant = numeric_gradient(lambda f, c: 4.2, frames, LossConfig()).frames
    assert all(np.all(g == 0) for g in constant)
    squared = numeric_gradient(lambda f, c: float(sum(np.sum(x * x) for x in f)), frames, LossConfig()).frames
    for frame, grad in zip(frames, squared):
        assert np.allclose(grad, 2 * frame, atol=1e-6)


def test_gradient_is_linear_in_terms(rng):
    frames = _random_triple(rng, LossConfig().theta)
    parts = [
        LossConfig(w_cc=0, w_ac=0),
        LossConfig(w_dsc=0, w_isc=0, w_ac=0),
        LossConfig(w_dsc=0, w_isc=0, w_cc=0),
    ]
    total = analytic_gradient(frames, LossConfig()).frames
    summed = [sum(g) for g in zip(*(analytic_gradient(frames, cfg).frames for cfg in parts))]
    for a, b in zip(total, summed):
        assert np.allclose(a, b, atol=1e-10)


def test_gradient_follows_column_permutation(rng):
    frames = [rng.standard_normal((6, n)) for n in (3, 4, 3)]
    perm = [2, 0, 3, 1]
    permuted = [frames[0], frames[1][:, perm], frames[2]]
    base = analytic_gradient(frames, LossConfig()).frames
    moved = analytic_gradient(permuted, LossConfig()).frames
    assert np.allclose(moved[1], base[1][:, perm], atol=1e-10)
    assert np.allclose(moved[0], base[0], atol=1e-10)


def test_gradient_shapes_follow_frames(rng):
    frames = [rng.standard_normal((6, n)) for n in (2, 3, 4)]
    grads = analytic_gradient(frames, LossConfig()).frames
    assert [g.shape for g in grads] == [(6, 2), (6, 3), (6, 4)]


def test_gradient_is_orthogonal_to_columns(rng):
    frames = [rng.standard_normal((6, n)) for n in (3, 3, 3)]
    grads = analytic_gradient(frames, LossConfig()).frames
    for raw, grad in zip(frames, grads):
        # the loss is scale invariant per column, so the gradient has no radial part
        assert np.allclose(np.sum(raw * grad, axis=0), 0.0, atol=1e-10)


def test_zero_weights_give_zero_report_and_gradient(rng):
    frames = [rng.standard_normal((5, 3)) for _ in range(3)]
    report, grads = loss_and_gradient(frames, LossConfig(w_dsc=0, w_isc=0, w_cc=0, w_ac=0))
    assert report.total == 0.0
    assert all(np.all(g == 0) for g in grads)


def test_loss_and_gradient_report_matches_loss_value(rng):
    frames = [rng.standard_normal((8, n)) for n in (4, 5, 3)]
    cfg = LossConfig()
    report, _ = loss_and_gradient(frames, cfg)
    assert report.total == pytest.approx(loss_value(frames, cfg), abs=1e-12)


def test_loss_and_gradient_rejects_bad_frames(rng):
    with pytest.raises(DimMismatch):
        loss_and_gradient([rng.standard_normal((5, 2)), rng.standard_normal((6, 2)), rng.standard_normal((5, 2))], LossConfig())
    with pytest.raises(EmptyFrame):
        loss_and_gradient([rng.standard_normal((5, 2)), np.zeros((5, 0)), rng.standard_normal((5, 2))], LossConfig())


@pytest.mark.parametrize("h", [1e-8, 1e-3])
def test_numeric_gradient_rejects_step_out_of_range(rng, h):
    frames = [rng.standard_normal((4, 2)) for _ in range(3)]
    with pytest.raises(InvalidParameter):
        numeric_gradient(loss_value, frames, LossConfig(), h=h)


def test_numeric_gradient_reports_non_finite_loss(rng):
    frames = [rng.standard_normal((4, 2)) for _ in range(3)]
    with pytest.raises(NonFiniteLoss):
        numeric_gradient(lambda f, c: float("nan"), frames, LossConfig())


def test_numeric_gradient_does_not_modify_inputs(rng):
    frames = [rng.standard_normal((4, 2)) for _ in range(3)]
    before = [f.copy() for f in frames]
    numeric_gradient(loss_value, frames, LossConfig())
    assert all(np.array_equal(a, b) for a, b in zip(before, frames))


# --- Descent ---


def test_optimize_trace_has_steps_plus_one_records(rng):
    frames = _identity_frames(rng, identities=5, dim=16, sigma=0.05)
    trace, optimized = optimize(frames, LossConfig(), steps=7, lr=0.01)
    assert [r.step for r in trace] == list(range(8))
    assert all(np.allclose(np.linalg.norm(f, axis=0), 1.0) for f in optimized)


@pytest.mark.parametrize("seed", range(5))
def test_optimize_reduces_loss_on_clean_triple(seed):
    rng = np.random.default_rng(seed)
    frames = _identity_frames(rng, identities=10, dim=32, sigma=0.05)
    trace, _ = optimize(frames, LossConfig(), steps=50, lr=0.05)
    assert trace[-1].loss_report.total <= trace[0].loss_report.total


def test_optimize_loss_does_not_rise_over_windows():
    rng = np.random.default_rng(5)
    frames = _identity_frames(rng, identities=10, dim=32, sigma=0.05)
    trace, _ = optimize(frames, LossConfig(), steps=100, lr=0.01)
    totals = [r.loss_report.total for r in trace]
    for t in range(0, len(totals) - 10, 10):
        assert totals[t + 10] <= totals[t] + 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_self_contrast_descent_sharpens_round_trips(seed):
    rng = np.random.default_rng(100 + seed)
    frames = _identity_frames(rng, identities=10, dim=32, sigma=0.088)
    cfg = LossConfig(w_cc=0, w_ac=0)
    trace, optimized = optimize(frames, cfg, steps=200, lr=0.5)
    assert trace[-1].mean_self_diag >= 0.9
    assert trace[-1].loss_report.l_sc <= trace[0].loss_report.l_sc
    assert mean_self_diag(optimized[0], optimized[1], cfg.tau) == pytest.approx(trace[-1].mean_self_diag)


@pytest.mark.parametrize(("steps", "lr"), [(0, 0.1), (5, 0.0), (5, 1.5)])
def test_optimize_rejects_bad_schedule(rng, steps, lr):
    frames = [rng.standard_normal((4, 2)) for _ in range(3)]
    with pytest.raises(InvalidParameter):
        optimize(frames, LossConfig(), steps=steps, lr=lr)


def test_mean_self_diag_is_one_for_separated_identical_frames():
    x = np.eye(4)
    assert mean_self_diag(x, x, 0.01) == pytest.approx(1.0, abs=1e-12)


# --- Sequences ---


def test_sequence_triples():
    assert sequence_triples(5, 1) == [(0, 1, 2), (1, 2, 3), (2, 3, 4)]
    assert sequence_triples(5, 2) == [(0, 2, 4)]
    assert sequence_triples(4, 2) == []


def test_sequence_loss_is_mean_over_triples(rng):
    frames = _identity_frames(rng, identities=4, dim=8, sigma=0.2, count=4)
    cfg = LossConfig()
    expected = np.mean([loss_value([frames[i] for i in triple], cfg) for triple in sequence_triples(4, 1)])
    assert sequence_loss(frames, cfg).total == pytest.approx(expected, abs=1e-12)


def test_sequence_loss_skips_triples_with_empty_frames(rng):
    frames = _identity_frames(rng, identities=3, dim=8, sigma=0.1, count=4)
    frames[1] = np.zeros((8, 0))
    # only (1, 2, 3) and (0, 1, 2) exist, and both contain the empty frame
    assert sequence_loss(frames, LossConfig()).skipped


def test_optimize_sequence_keeps_empty_frames(rng):
    frames = _identity_frames(rng, identities=3, dim=8, sigma=0.1, count=6)
    frames[2] = np.zeros((8, 0))
    trace, optimized = optimize_sequence(frames, LossConfig(), steps=3, lr=0.05)
    assert len(trace) == 4
    assert optimized[2].shape == (8, 0)
    assert [f.shape for f in optimized] == [f.shape for f in frames]


def test_optimize_sequence_needs_a_triple(rng):
    frames = _identity_frames(rng, identities=3, dim=8, sigma=0.1, count=2)
    with pytest.raises(EmptyFrame):
        optimize_sequence(frames, LossConfig(), steps=1, lr=0.1)
