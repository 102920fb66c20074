import math

import numpy as np
import pytest

from contrast_losses import (
    ambiguity_contrast_loss,
    cross_assignments,
    cross_contrast_loss,
    direct_self_contrast,
    find_ambiguous,
    indirect_self_assignment,
    indirect_self_contrast,
    js_divergence,
    kl_divergence,
    self_contrast_loss,
    total_loss,
)
from embedding_core import row_softmax, similarity
from exceptions import DimMismatch, EmptyFrame, LengthMismatch, ShapeMismatch
from models import AssignmentMatrix, EmbeddingMatrix, LossConfig, SimilarityMatrix


def _softmax(row, tau):
    weights = [math.exp(v / tau) for v in row]
    total = sum(weights)
    return [w / total for w in weights]


def _naive_js(p_rows, q_rows):
    total = 0.0
    for p, q in zip(p_rows, q_rows):
        for pi, qi in zip(p, q):
            t = (pi + qi) / 2
            if pi > 0:
                total += 0.5 * pi * math.log(pi / t)
            if qi > 0:
                total += 0.5 * qi * math.log(qi / t)
    return total


def _naive_cross(x1, x2, x3, tau):
    def assign(a, b):
        return [_softmax([float(a[:, i] @ b[:, j]) for j in range(b.shape[1])], tau) for i in range(a.shape[1])]

    def matmul(a, b):
        return [[sum(a[i][k] * b[k][j] for k in range(len(b))) for j in range(len(b[0]))] for i in range(len(a))]

    p12, p23, p13 = assign(x1, x2), assign(x2, x3), assign(x1, x3)
    p32, p21, p31 = assign(x3, x2), assign(x2, x1), assign(x3, x1)
    q13 = [_softmax(row, tau) for row in matmul(p12, p23)]
    q31 = [_softmax(row, tau) for row in matmul(p32, p21)]
    return _naive_js(q13, p13) / x1.shape[1] + _naive_js(q31, p31) / x3.shape[1]


def _frames(unit_columns, dim=6, counts=(3, 4, 5), seed=0):
    return [EmbeddingMatrix(data=unit_columns(dim, n, seed + i)) for i, n in enumerate(counts)]


# --- Self-contrast ---


def test_self_contrast_two_orthonormal_objects_closed_form():
    x = EmbeddingMatrix(data=np.eye(2))
    cfg = LossConfig(tau=1.0)
    p = math.e / (math.e + 1)
    expected = -(math.log(p) + math.log(p * p + (1 - p) ** 2))
    assert self_contrast_loss(x, x, cfg) == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(0.812857, abs=1e-6)
    s_isc = indirect_self_assignment(x, x, cfg)
    assert np.allclose(np.diag(s_isc.data), p * p + (1 - p) ** 2)


def test_self_contrast_is_sum_of_direct_and_indirect(unit_columns, loss_cfg):
    x1, x2, _ = _frames(unit_columns)
    total = self_contrast_loss(x1, x2, loss_cfg)
    assert total == pytest.approx(direct_self_contrast(x1, loss_cfg) + indirect_self_contrast(x1, x2, loss_cfg))


def test_self_contrast_is_invariant_to_consistent_relabeling(unit_columns, loss_cfg):
    x1, x2, _ = _frames(unit_columns)
    perm1, perm2 = [2, 0, 1], [3, 1, 0, 2]
    permuted = self_contrast_loss(x1.subset(perm1), x2.subset(perm2), loss_cfg)
    assert permuted == pytest.approx(self_contrast_loss(x1, x2, loss_cfg), abs=1e-12)


def test_self_contrast_near_zero_for_well_separated_objects():
    x = EmbeddingMatrix(data=np.eye(4))
    assert self_contrast_loss(x, x, LossConfig(tau=0.01)) < 1e-12


# --- Divergences ---


def test_kl_of_certain_vs_uniform_is_log_two():
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-12)


def test_kl_length_mismatch():
    with pytest.raises(LengthMismatch):
        kl_divergence([1.0, 0.0], [0.2, 0.3, 0.5])


def test_js_divergence_properties(rng):
    for _ in range(1000):
        rows, cols = rng.integers(1, 5), rng.integers(2, 6)
        p = AssignmentMatrix(data=rng.dirichlet(np.ones(cols), size=rows))
        q = AssignmentMatrix(data=rng.dirichlet(np.ones(cols), size=rows))
        forward, backward = js_divergence(p, q), js_divergence(q, p)
        assert forward == pytest.approx(backward, abs=1e-12)
        assert js_divergence(p, p) == pytest.approx(0.0, abs=1e-12)
        assert forward <= rows * math.log(2) + 1e-9


def test_js_divergence_disjoint_rows_reach_log_two():
    p = AssignmentMatrix(data=np.array([[1.0, 0.0]]))
    q = AssignmentMatrix(data=np.array([[0.0, 1.0]]))
    assert js_divergence(p, q) == pytest.approx(math.log(2), abs=1e-12)


def test_js_divergence_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        js_divergence(AssignmentMatrix(data=np.eye(2)), AssignmentMatrix(data=np.eye(3)))


# --- Cross-contrast ---


def test_cross_contrast_matches_naive_loops(unit_columns, loss_cfg):
    x1, x2, x3 = _frames(unit_columns, seed=3)
    expected = _naive_cross(x1.data, x2.data, x3.data, loss_cfg.tau)
    assert cross_contrast_loss(x1, x2, x3, loss_cfg) == pytest.approx(expected, rel=1e-9)


def test_cross_assignments_shapes(unit_columns, loss_cfg):
    x1, x2, x3 = _frames(unit_columns)
    named = cross_assignments(x1, x2, x3, loss_cfg)
    assert named["1->2"].data.shape == (3, 4)
    assert named["*1->3"].data.shape == (3, 5)
    assert named["*3->1"].data.shape == (5, 3)


def test_cross_contrast_grows_when_middle_frame_is_noise(unit_columns, loss_cfg):
    for seed in range(10):
        q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((16, 4)))
        x = EmbeddingMatrix(data=q)
        noise = EmbeddingMatrix(data=unit_columns(16, 4, seed=1000 + seed))
        assert cross_contrast_loss(x, noise, x, loss_cfg) > cross_contrast_loss(x, x, x, loss_cfg)


def test_cross_contrast_of_single_object_is_zero(loss_cfg):
    x = EmbeddingMatrix(data=np.array([[1.0], [0.0]]))
    assert cross_contrast_loss(x, x, x, loss_cfg) == pytest.approx(0.0, abs=1e-15)


def test_cross_contrast_is_non_negative(unit_columns, loss_cfg):
    for seed in range(10):
        assert cross_contrast_loss(*_frames(unit_columns, seed=seed * 3), loss_cfg) >= 0


# --- Ambiguity contrast ---


def test_ambiguity_contrast_uniform_case():
    eye = np.eye(4)
    x1 = EmbeddingMatrix(data=eye[:, :2])
    x2 = EmbeddingMatrix(data=eye[:, 2:])
    # every cross cosine is 0 < theta, so both rows of each direction are uniform: entropy log 2 per direction
    assert ambiguity_contrast_loss(x1, x2, LossConfig()) == pytest.approx(2 * math.log(2), abs=1e-12)


def test_ambiguity_contrast_zero_without_ambiguous_objects():
    x = EmbeddingMatrix(data=np.eye(3))
    assert ambiguity_contrast_loss(x, x, LossConfig()) == 0.0


def test_ambiguity_coefficient_weakens_unbalanced_sets():
    eye = np.eye(6)
    x1 = EmbeddingMatrix(data=eye[:, :1])
    x2 = EmbeddingMatrix(data=eye[:, 1:4])
    # N_r = 1, M_r = 3: forward row entropy log 3, backward rows are certain
    expected = (1 / 3) * math.log(3)
    assert ambiguity_contrast_loss(x1, x2, LossConfig()) == pytest.approx(expected, abs=1e-12)


def test_find_ambiguous_uses_cosine_not_probability():
    sim = SimilarityMatrix(data=np.array([[0.9, 0.1], [0.5, 0.6], [0.69, 0.2]]))
    assign = row_softmax(sim, 0.1)
    found = find_ambiguous(assign, sim, LossConfig(theta=0.7), frame_index=1)
    assert found.indices == [1, 2]
    assert found.count == 2
    assert found.frame_index == 1


def test_find_ambiguous_with_empty_other_frame():
    sim = SimilarityMatrix(data=np.zeros((3, 0)))
    assign = AssignmentMatrix(data=np.zeros((3, 0)))
    assert find_ambiguous(assign, sim, LossConfig()).indices == [0, 1, 2]


def test_find_ambiguous_shape_mismatch():
    sim = SimilarityMatrix(data=np.zeros((2, 2)))
    assign = AssignmentMatrix(data=np.full((2, 3), 1 / 3))
    with pytest.raises(ShapeMismatch):
        find_ambiguous(assign, sim, LossConfig())


def test_find_ambiguous_flags_occluded_row(unit_columns):
    x1 = EmbeddingMatrix(data=unit_columns(32, 4, seed=5))
    mixed = x1.data.copy()
    mixed[:, 1] = 0.5 * x1.data[:, 1] + 0.5 * x1.data[:, 3]
    x2 = EmbeddingMatrix(data=mixed / np.linalg.norm(mixed, axis=0))
    sim = similarity(x2, x1)
    cfg = LossConfig()
    found = find_ambiguous(row_softmax(sim, cfg.tau), sim, cfg)
    if np.abs(x1.data[:, 1] @ x1.data[:, 3]) < 0.3:
        assert 1 in found.indices
    assert 0 not in found.indices and 2 not in found.indices


# --- Total loss ---


def test_total_loss_is_sum_of_components(unit_columns, loss_cfg):
    x1, x2, x3 = _frames(unit_columns, seed=9)
    report = total_loss(x1, x2, x3, loss_cfg)
    assert report.total == pytest.approx(report.l_sc + report.l_cc + report.l_ac, abs=1e-12)
    assert report.l_sc == pytest.approx(self_contrast_loss(x1, x2, loss_cfg), abs=1e-12)
    assert report.l_cc == pytest.approx(cross_contrast_loss(x1, x2, x3, loss_cfg), abs=1e-12)
    assert report.l_ac == pytest.approx(ambiguity_contrast_loss(x1, x2, loss_cfg), abs=1e-12)
    assert not report.skipped


def test_total_loss_weights_select_terms(unit_columns):
    frames = _frames(unit_columns, seed=2)
    cc_only = total_loss(*frames, LossConfig(w_dsc=0, w_isc=0, w_ac=0))
    assert cc_only.l_sc == 0 and cc_only.l_ac == 0
    assert cc_only.total == pytest.approx(cross_contrast_loss(*frames, LossConfig()), abs=1e-12)


def test_total_loss_all_indirect_pairs(unit_columns, loss_cfg):
    x1, x2, x3 = _frames(unit_columns, seed=4)
    report = total_loss(x1, x2, x3, LossConfig(indirect_pairs="all"))
    expected = (
        indirect_self_contrast(x1, x2, loss_cfg)
        + indirect_self_contrast(x2, x3, loss_cfg)
        + indirect_self_contrast(x1, x3, loss_cfg)
    )
    assert report.l_isc == pytest.approx(expected, abs=1e-12)


def test_total_loss_skips_triple_with_empty_frame(unit_columns, loss_cfg):
    x1, x2, _ = _frames(unit_columns)
    empty = EmbeddingMatrix(data=np.zeros((6, 0)))
    report = total_loss(x1, x2, empty, loss_cfg)
    assert report.skipped
    assert report.total == 0.0


def test_total_loss_dim_mismatch(unit_columns, loss_cfg):
    x1, x2, _ = _frames(unit_columns)
    other = EmbeddingMatrix(data=unit_columns(7, 2))
    with pytest.raises(DimMismatch):
        total_loss(x1, x2, other, loss_cfg)


def test_single_loss_rejects_empty_frame(unit_columns, loss_cfg):
    x1 = EmbeddingMatrix(data=unit_columns(6, 3))
    with pytest.raises(EmptyFrame):
        self_contrast_loss(x1, EmbeddingMatrix(data=np.zeros((6, 0))), loss_cfg)


# --- Naive oracles ---


def _naive_self(x1, x2, tau):
    n, m = x1.shape[1], x2.shape[1]
    direct = [_softmax([float(x1[:, i] @ x1[:, j]) for j in range(n)], tau) for i in range(n)]
    forward = [_softmax([float(x1[:, i] @ x2[:, j]) for j in range(m)], tau) for i in range(n)]
    backward = [_softmax([float(x2[:, j] @ x1[:, i]) for i in range(n)], tau) for j in range(m)]
    total = 0.0
    for i in range(n):
        round_trip = sum(forward[i][j] * backward[j][i] for j in range(m))
        total += math.log(direct[i][i]) + math.log(round_trip)
    return -total / n


def _naive_entropies(x1, x2, theta, tau):
    """Returns (N_r, M_r, forward mean entropy sum, backward mean entropy sum) over the ambiguous subsets."""
    n, m = x1.shape[1], x2.shape[1]
    cos = [[float(x1[:, i] @ x2[:, j]) for j in range(m)] for i in range(n)]
    rows1 = [i for i in range(n) if max(cos[i]) < theta]
    rows2 = [j for j in range(m) if max(cos[i][j] for i in range(n)) < theta]
    if not rows1 or not rows2:
        return len(rows1), len(rows2), 0.0, 0.0
    forward = sum(
        p * math.log(p) for i in rows1 for p in _softmax([cos[i][j] for j in rows2], tau) if p > 0
    ) / len(rows1)
    backward = sum(
        p * math.log(p) for j in rows2 for p in _softmax([cos[i][j] for i in rows1], tau) if p > 0
    ) / len(rows2)
    return len(rows1), len(rows2), forward, backward


def _naive_ambiguity(x1, x2, theta, tau):
    n_r, m_r, forward, backward = _naive_entropies(x1, x2, theta, tau)
    return -(forward + backward) / (abs(n_r - m_r) + 1)


def test_kl_of_skewed_pair_closed_form():
    value = kl_divergence([0.75, 0.25], [0.25, 0.75])
    assert value == pytest.approx(0.75 * math.log(3) + 0.25 * math.log(1 / 3), abs=1e-12)
    assert value == pytest.approx(0.54931, abs=1e-5)


def test_self_contrast_matches_naive_loops(unit_columns, loss_cfg):
    for seed in range(5):
        x1, x2, _ = _frames(unit_columns, counts=(4, 5, 3), seed=seed)
        expected = _naive_self(x1.data, x2.data, loss_cfg.tau)
        assert self_contrast_loss(x1, x2, loss_cfg) == pytest.approx(expected, rel=1e-9)


def test_ambiguity_contrast_matches_naive_loops(unit_columns):
    cfg = LossConfig(theta=0.5)
    for seed in range(5):
        x1, x2, _ = _frames(unit_columns, dim=4, counts=(5, 4, 3), seed=seed)
        expected = _naive_ambiguity(x1.data, x2.data, cfg.theta, cfg.tau)
        assert ambiguity_contrast_loss(x1, x2, cfg) == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_ambiguity_coefficient_halves_for_one_extra_object():
    eye = np.eye(6)
    cfg = LossConfig()
    cases = {0: (eye[:, :2], eye[:, 2:4]), 1: (eye[:, :2], eye[:, 2:5])}
    for gap, (a, b) in cases.items():
        n_r, m_r, forward, backward = _naive_entropies(a, b, cfg.theta, cfg.tau)
        assert abs(n_r - m_r) == gap
        loss = ambiguity_contrast_loss(EmbeddingMatrix(data=a), EmbeddingMatrix(data=b), cfg)
        # ratio of the loss to its raw entropy part is the coefficient alone
        assert loss / -(forward + backward) == pytest.approx(1.0 if gap == 0 else 0.5, abs=1e-12)


def test_total_loss_matches_naive_loops(unit_columns, loss_cfg):
    for seed in range(3):
        x1, x2, x3 = _frames(unit_columns, dim=5, counts=(3, 4, 3), seed=10 + seed)
        expected = (
            _naive_self(x1.data, x2.data, loss_cfg.tau)
            + _naive_cross(x1.data, x2.data, x3.data, loss_cfg.tau)
            + _naive_ambiguity(x1.data, x2.data, loss_cfg.theta, loss_cfg.tau)
        )
        assert total_loss(x1, x2, x3, loss_cfg).total == pytest.approx(expected, rel=1e-9)
