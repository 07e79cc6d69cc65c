#!/usr/bin/env python3
"""
測試 NMF、MDL 角色數選擇與成員估計
"""

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest

from core.errors import InvalidArgumentError, SchemaMismatchError
from core.feature_extraction import FeatureDefinition, FeatureMatrix
from core.role_discovery import (
    MembershipMatrix, RoleFactorizer, RoleModel, column_scale, description_length,
    estimate_memberships, mdl_select_rank, memberships_from_frame, memberships_to_frame,
    nmf, normalize_rows, quantize, solve_rows,
)
from create_test_network import create_planted_rank_matrix


def _defs(f):
    return [FeatureDefinition('total_degree', ('sum',) * j) for j in range(f)]


def _relative_residual(V, G, F):
    return np.linalg.norm(V - G @ F) / np.linalg.norm(V)


def test_nmf_rank_one_exact(rng):
    """外積矩陣以 r=1 分解幾乎沒有殘差"""
    V = np.outer(rng.uniform(0.5, 2, 10), rng.uniform(0.5, 2, 8))
    result = nmf(V, 1, max_iters=500, tol=1e-12)
    assert _relative_residual(V, result.G, result.F) < 1e-6


def test_nmf_zero_matrix():
    result = nmf(np.zeros((4, 4)), 1)
    assert result.objective < 1e-20
    assert result.G.min() >= 0 and result.F.min() >= 0


def test_nmf_planted_block_structure():
    """30×3 區塊結構的 G* 與 3×8 的 F*，r=3 時相對殘差 < 1e-3"""
    V, _, _ = create_planted_rank_matrix(30, 8, 3, seed=4)
    result = RoleFactorizer(max_iters=5000, tol=1e-10, n_restarts=3).factorize(V, 3)
    assert _relative_residual(V, result.G, result.F) < 1e-3


def test_nmf_objective_is_monotone():
    """100 個隨機矩陣上，每次乘法更新後目標函數都不增加"""
    rng = np.random.default_rng(7)
    for trial in range(100):
        V = rng.random((50, 20))
        r = int(rng.integers(1, 6))
        result = nmf(V, r, max_iters=60, tol=1e-15, seed=trial, init='kmeans' if trial % 2 else 'random')
        trace = np.array(result.objective_trace)
        assert np.all(np.diff(trace) <= 1e-10), f"trial {trial}"
        assert result.G.min() >= 0 and result.F.min() >= 0


@pytest.mark.parametrize('r', [2, 3, 4])
def test_nmf_recovers_planted_rank(r):
    """60×15 的已知秩矩陣，單次執行至少 9/10 個種子能重建"""
    successes = 0
    for seed in range(10):
        V, _, _ = create_planted_rank_matrix(60, 15, r, seed=seed)
        result = RoleFactorizer(max_iters=4000, tol=1e-10, n_restarts=1, seed=seed).factorize(V, r)
        if _relative_residual(V, result.G, result.F) < 1e-3:
            successes += 1
    assert successes >= 9


def test_nmf_is_seeded():
    V = np.random.default_rng(1).random((12, 6))
    a = nmf(V, 2, seed=5)
    b = nmf(V, 2, seed=5)
    np.testing.assert_array_equal(a.G, b.G)
    np.testing.assert_array_equal(a.F, b.F)
    c = nmf(V, 2, seed=5, init='kmeans')
    d = nmf(V, 2, seed=5, init='kmeans')
    np.testing.assert_array_equal(c.F, d.F)


def test_kmeans_start_on_planted_blocks():
    """區塊結構的矩陣從 k-means++ 中心開始，起點就幾乎沒有殘差"""
    V, _, _ = create_planted_rank_matrix(60, 15, 4, seed=3)
    result = nmf(V, 4, max_iters=1, seed=0, init='kmeans')
    assert np.sqrt(2 * result.objective_trace[0]) / np.linalg.norm(V) < 1e-4
    assert _relative_residual(V, result.G, result.F) < 1e-4


def test_kmeans_start_falls_back_to_random():
    """相異方向不足 r 個時改用隨機初始化"""
    V = np.tile([[1.0, 2.0, 0.5, 1.0]], (6, 1))
    fallback = nmf(V, 2, max_iters=20, seed=4, init='kmeans')
    plain = nmf(V, 2, max_iters=20, seed=4)
    np.testing.assert_array_equal(fallback.G, plain.G)
    np.testing.assert_array_equal(fallback.F, plain.F)


@pytest.mark.parametrize('kwargs', [
    {'r': 4},
    {'r': 0},
    {'r': 1, 'max_iters': 0},
    {'r': 1, 'tol': 0.0},
    {'r': 1, 'init': 'svd'},
])
def test_nmf_invalid_arguments(kwargs):
    V = np.ones((4, 6))
    with pytest.raises(InvalidArgumentError):
        nmf(V, **kwargs)


def test_nmf_rejects_negative_input():
    V = np.ones((5, 5))
    V[2, 3] = -0.1
    with pytest.raises(InvalidArgumentError):
        nmf(V, 1)


def test_quantize_levels(rng):
    values = rng.random((20, 7))
    quantized = quantize(values, 3)
    assert quantized.shape == values.shape
    assert np.unique(quantized).size <= 8
    assert np.abs(quantized - values).max() < 0.25


def test_quantize_few_unique_values_unchanged():
    values = np.array([[0.0, 1.0], [0.5, 1.0]])
    np.testing.assert_array_equal(quantize(values, 2), values)


def test_description_length_prefers_better_fit():
    V, G, F = create_planted_rank_matrix(20, 8, 2, seed=3)
    V = V / column_scale(V)
    exact = nmf(V, 2, max_iters=3000, tol=1e-10)
    poor = nmf(V, 1, max_iters=3000, tol=1e-10)
    # 加上模型位元差距後仍應偏好 r=2
    assert description_length(V, exact.G, exact.F) < description_length(V, poor.G, poor.F)
    for model in ('squared', 'kl'):
        assert np.isfinite(description_length(V, exact.G, exact.F, error_model=model))
    with pytest.raises(InvalidArgumentError):
        description_length(V, exact.G, exact.F, error_model='huber')


def test_description_length_encodes_repeated_rows_once():
    """重複的成員列只編碼一次，另加每列的索引"""
    F = np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.5]])
    G = np.tile([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], (100, 1))
    # 3 個相異列：4·3·2 + 300·2 索引 + 4·2·3
    assert description_length(G @ F, G, F, bits=4) == pytest.approx(648.0)

    few = G[:3]
    # 沒有重複時直接編碼：4·3·2 + 4·2·3
    assert description_length(few @ F, few, F, bits=4) == pytest.approx(48.0)


def test_solve_rows_identical_rows_get_identical_memberships(rng):
    F = rng.uniform(0.1, 1.0, (3, 6))
    rows = rng.uniform(0.0, 2.0, (4, 6))
    V = rows[[0, 1, 2, 3, 1, 0, 2, 1]]
    V[5] = 0.0
    G = solve_rows(V, F)
    assert G.shape == (8, 3)
    np.testing.assert_array_equal(G[1], G[4])
    np.testing.assert_array_equal(G[1], G[7])
    np.testing.assert_array_equal(G[5], np.zeros(3))
    assert G.min() >= 0
    assert solve_rows(np.zeros((0, 6)), F).shape == (0, 3)


def test_mdl_selects_planted_rank_two():
    """無雜訊且區塊分明的 rank-2 矩陣，掃描 r∈[1,5] 選出 2"""
    V, _, _ = create_planted_rank_matrix(40, 10, 2, seed=0)
    model = mdl_select_rank(V, 1, 5, max_iters=2000, tol=1e-7)
    assert model.rank == 2
    scores = dict(model.mdl_trace)
    assert sorted(scores) == [1, 2, 3, 4, 5]
    assert scores[2] == min(scores.values())


def test_mdl_selects_rank_one_for_outer_product(rng):
    V = np.outer(rng.uniform(0.5, 2, 25), rng.uniform(0.5, 2, 9))
    model = mdl_select_rank(V, 1, 3, max_iters=2000, tol=1e-7)
    assert model.rank == 1
    assert [r for r, _ in model.mdl_trace] == [1, 2, 3]


@pytest.mark.slow
def test_mdl_planted_rank_recovery_rate():
    """40 組已知秩（雜訊 1%）的矩陣中至少 90% 選出正確的角色數"""
    correct = 0
    trials = 0
    for r in (2, 3, 4, 5):
        for seed in range(10):
            V, _, _ = create_planted_rank_matrix(50, 12, r, noise=0.01, seed=100 + seed)
            model = mdl_select_rank(V, 1, 8, max_iters=2000, tol=1e-7, seed=seed, workers=4)
            correct += model.rank == r
            trials += 1
    assert correct >= 0.9 * trials


def test_select_rank_ties_prefer_smaller_rank(monkeypatch):
    factorizer = RoleFactorizer(max_iters=50)
    monkeypatch.setattr('core.role_discovery.description_length', lambda *args, **kwargs: 100.0)
    model = factorizer.select_rank(np.random.default_rng(0).random((10, 6)), 2, 4)
    assert model.rank == 2


@pytest.mark.parametrize('r_min, r_max', [(0, 2), (3, 2), (2, 6)])
def test_select_rank_invalid_range(r_min, r_max):
    with pytest.raises(InvalidArgumentError):
        RoleFactorizer().select_rank(np.ones((10, 6)), r_min, r_max)


def test_selected_model_is_in_original_scale():
    """基底還原到原始欄位尺度，G·F 近似原矩陣"""
    V, _, _ = create_planted_rank_matrix(30, 8, 2, seed=2)
    V[:, 0] *= 1000.0
    model = RoleFactorizer(max_iters=3000, tol=1e-10).select_rank(V, 2, 2, _defs(8))
    G = estimate_memberships(FeatureMatrix(1, np.arange(30), _defs(8), V), model).values
    assert _relative_residual(V, G, model.basis) < 1e-3
    np.testing.assert_allclose(model.column_scale, column_scale(V))


def test_estimate_memberships_recovers_planted(rng):
    F = rng.uniform(0.1, 1.0, (3, 9))
    G_true = rng.uniform(0, 2, (25, 3))
    V = FeatureMatrix(1, np.arange(25), _defs(9), G_true @ F)
    G = estimate_memberships(V, RoleModel(F, _defs(9))).values
    assert np.linalg.norm(G - G_true) / np.linalg.norm(G_true) < 1e-4


def test_estimate_memberships_fixed_point(rng):
    """由 (G·F, F) 重新估計得到相同的 G"""
    F = rng.uniform(0.0, 1.0, (4, 10))
    G = rng.uniform(0.0, 3.0, (15, 4))
    G[rng.random(G.shape) < 0.3] = 0.0
    model = RoleModel(F, _defs(10), column_scale=column_scale(G @ F))
    estimated = estimate_memberships(FeatureMatrix(2, np.arange(15), _defs(10), G @ F), model)
    np.testing.assert_allclose(estimated.values, G, atol=1e-6)
    assert estimated.timestep == 2
    assert not estimated.normalized


def test_estimate_memberships_zero_input():
    F = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 1.0]])
    G = estimate_memberships(FeatureMatrix(1, [0, 1], _defs(3), np.zeros((2, 3))), RoleModel(F, _defs(3)))
    np.testing.assert_array_equal(G.values, np.zeros((2, 2)))


def test_single_node_matching_role_row():
    F = np.array([[1.0, 0.0, 0.0, 2.0], [0.0, 3.0, 1.0, 0.0], [1.0, 1.0, 1.0, 1.0]])
    for k in range(3):
        V = FeatureMatrix(1, [0], _defs(4), F[k:k + 1] * 2.5)
        G = estimate_memberships(V, RoleModel(F, _defs(4))).normalize()
        assert int(np.argmax(G.values[0])) == k
        assert G.values[0].sum() == pytest.approx(1.0)


def test_membership_scale_covariance(rng):
    F = rng.uniform(0.1, 1.0, (3, 7))
    V = rng.uniform(0.0, 5.0, (20, 7))
    model = RoleModel(F, _defs(7))
    G = estimate_memberships(FeatureMatrix(1, np.arange(20), _defs(7), V), model)
    G_scaled = estimate_memberships(FeatureMatrix(1, np.arange(20), _defs(7), V * 4.0), model)
    np.testing.assert_allclose(G_scaled.values, G.values * 4.0, rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(G_scaled.normalize().values, G.normalize().values, atol=1e-9)


def test_missing_columns_are_zero_filled():
    defs = _defs(4)
    F = np.array([[1.0, 2.0, 0.0, 1.0], [0.0, 1.0, 3.0, 0.0]])
    model = RoleModel(F, defs)
    partial = FeatureMatrix(1, [0, 1], [defs[0], defs[1], defs[3]], np.array([[1.0, 2, 1], [2, 4, 2]]))
    full = FeatureMatrix(1, [0, 1], defs, np.array([[1.0, 2, 0, 1], [2, 4, 0, 2]]))
    np.testing.assert_allclose(estimate_memberships(partial, model).values,
                               estimate_memberships(full, model).values)


def test_unknown_nonzero_column_is_schema_error():
    defs = _defs(3)
    model = RoleModel(np.ones((1, 2)), defs[:2])
    zero_extra = FeatureMatrix(4, [0], defs, np.array([[1.0, 1.0, 0.0]]))
    assert estimate_memberships(zero_extra, model).values.shape == (1, 1)

    nonzero_extra = FeatureMatrix(4, [0], defs, np.array([[1.0, 1.0, 2.0]]))
    with pytest.raises(SchemaMismatchError) as info:
        estimate_memberships(nonzero_extra, model)
    assert info.value.timestep == 4


def test_normalize_rows_keeps_zero_rows():
    values = np.array([[1.0, 3.0], [0.0, 0.0], [2.0, 0.0]])
    normalized = normalize_rows(values)
    np.testing.assert_allclose(normalized, [[0.25, 0.75], [0.0, 0.0], [1.0, 0.0]])
    m = MembershipMatrix(1, [0, 1, 2], values).normalize()
    assert m.normalized
    np.testing.assert_allclose(m.values.sum(axis=1), [1.0, 0.0, 1.0], atol=1e-9)


def test_membership_row_lookup():
    m = MembershipMatrix(1, [3, 7, 9], np.eye(3))
    np.testing.assert_array_equal(m.row_for(7), [0, 1, 0])
    assert m.row_for(4) is None


def test_membership_frame_round_trip():
    matrices = [
        MembershipMatrix(1, [0, 2], np.array([[0.5, 1.0], [0.0, 2.0]])),
        MembershipMatrix(2, np.zeros(0, dtype=np.int64), np.zeros((0, 2))),
        MembershipMatrix(3, [1], np.array([[3.0, 0.0]])),
    ]
    frame = memberships_to_frame(matrices, ['a', 'b', 'c'])
    assert list(frame.columns) == ['node', 'node_id', 't', 'role_1', 'role_2']
    assert frame['node'].tolist() == ['a', 'c', 'b']

    restored = memberships_from_frame(frame, [1, 2, 3])
    for original, copy in zip(matrices, restored):
        assert copy.timestep == original.timestep
        np.testing.assert_array_equal(copy.nodes, original.nodes)
        np.testing.assert_array_equal(copy.values, original.values)


def test_role_model_json_round_trip(tmp_path, rng):
    model = RoleModel(rng.random((3, 5)), _defs(5), [(1, 120.5), (2, 99.0), (3, 101.25)],
                      column_scale=np.array([1.0, 2.0, 3.0, 4.0, 5.0]))
    path = str(tmp_path / 'role_model.json')
    model.save(path)
    restored = RoleModel.load(path)
    assert restored.rank == 3
    assert restored.feature_defs == model.feature_defs
    assert restored.mdl_trace == model.mdl_trace
    np.testing.assert_array_equal(restored.basis, model.basis)
    np.testing.assert_array_equal(restored.column_scale, model.column_scale)


def test_role_model_rejects_invalid_basis():
    with pytest.raises(InvalidArgumentError):
        RoleModel(np.array([[1.0, -1.0]]), _defs(2))
    with pytest.raises(InvalidArgumentError):
        RoleModel(np.ones((2, 3)), _defs(2))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, '-v']))
