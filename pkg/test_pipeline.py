#!/usr/bin/env python3
"""
測試完整分析流程：輸出檔案、manifest、可重現性與角色轉換偵測
"""

import sys
import os
import json
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pandas as pd
import pytest

from core.config import RunConfig
from core.errors import DataError, EdgeParseError
from core.interpretation import MEASURES
from core.pipeline import MANIFEST_FILE, STAGES, RoleDynamicsPipeline, load_explanation, run_pipeline
from create_test_network import create_scaling_network, create_switch_network, write_edge_file
from utils.helpers import file_sha256


def _config(input_path, output_dir, **overrides):
    options = dict(input_path=str(input_path), output_dir=str(output_dir), schema='src,dst,time',
                   window_width=1.0, r_max=5)
    options.update(overrides)
    return RunConfig(**options)


def _read_manifest(output_dir):
    with open(os.path.join(str(output_dir), MANIFEST_FILE), encoding='utf-8') as f:
        return json.load(f)


def _checksums(output_dir):
    return {a['path']: a['sha256'] for a in _read_manifest(output_dir)['artifacts']}


@pytest.fixture(scope='module')
def switch_run(tmp_path_factory):
    """300 個節點、20 個時間步，30 個星狀中心在第 10 步轉換"""
    base = tmp_path_factory.mktemp('switch')
    edges, switchers = create_switch_network()
    input_path = write_edge_file(edges, str(base / 'edges.csv'))
    output_dir = base / 'output'
    manifest = run_pipeline(_config(input_path, output_dir, r_max=8))
    return output_dir, manifest, switchers


@pytest.fixture
def small_network(tmp_path):
    edges, switchers = create_switch_network(n_stars=6, leaves=4, n_cliques=6, clique_size=4, t_max=8, switch_at=4)
    return write_edge_file(edges, str(tmp_path / 'small.csv')), switchers


# ---- 完整流程 ----

def test_all_stages_complete(switch_run):
    output_dir, manifest, _ = switch_run
    assert manifest['completed_stages'] == list(STAGES)
    assert 'failure' not in manifest
    assert manifest['stats']['nodes'] == 300
    assert manifest['stats']['t_max'] == 20
    assert manifest['ingest']['malformed_lines'] == 0
    assert manifest['feature_count'] > 0
    assert set(manifest['timings']) == set(STAGES)

    for relative in ('snapshots.jsonl', 'features/definitions.json', 'features/features_t001.csv',
                     'roles/role_model.json', 'roles/role_distance.csv', 'track/memberships.csv',
                     'track/change_scores.csv', 'interpret/node_measures.csv', 'interpret/explanation.csv',
                     'report/network_dynamics.svg', 'report/node_dynamics.svg', 'report/report.html'):
        assert os.path.exists(os.path.join(str(output_dir), relative)), relative


def test_switch_network_selects_several_roles(switch_run):
    """轉換網路的全域特徵矩陣選出至少兩個角色"""
    _, manifest, _ = switch_run
    assert manifest['rank'] >= 2
    scores = dict(manifest['mdl_trace'])
    assert scores[manifest['rank']] == min(scores.values())
    assert scores[manifest['rank']] < scores[1]


def test_manifest_checksums_match_files(switch_run):
    output_dir, _, _ = switch_run
    manifest = _read_manifest(output_dir)
    assert manifest['artifacts']
    for artifact in manifest['artifacts']:
        full = os.path.join(str(output_dir), artifact['path'])
        assert file_sha256(full) == artifact['sha256']
        assert os.path.getsize(full) == artifact['bytes']


def test_switchers_change_at_switch_step(switch_run):
    """至少 90% 的轉換節點在第 10 步有最大的行為變化分數"""
    output_dir, _, switchers = switch_run
    changes = pd.read_csv(os.path.join(str(output_dir), 'track', 'change_scores.csv'))
    hits = 0
    for label in switchers:
        rows = changes[changes['label'] == label].sort_values('t')
        assert len(rows) == 19
        position = int(np.argmax(rows['score'].to_numpy()))
        hits += int(rows['t'].iloc[position]) == 10
    assert hits >= 0.9 * len(switchers)


def test_importance_shift_peaks_at_switch(switch_run):
    output_dir, _, _ = switch_run
    with open(os.path.join(str(output_dir), 'track', 'role_dynamics.json'), encoding='utf-8') as f:
        dynamics = json.load(f)
    assert dynamics['importance_shift']['argmax'] == 10
    assert dynamics['metric'] == 'hellinger'
    assert len(dynamics['classes']) >= 1


def test_importance_rows_sum_to_one(switch_run):
    output_dir, manifest, _ = switch_run
    assert manifest['importance_normalized'] is True
    importance = pd.read_csv(os.path.join(str(output_dir), 'track', 'importance.csv'))
    totals = importance.groupby('t')['value'].sum()
    np.testing.assert_allclose(totals.to_numpy(), 1.0, atol=1e-9)


def test_normalized_memberships_sum_to_one(switch_run):
    output_dir, _, _ = switch_run
    frame = pd.read_csv(os.path.join(str(output_dir), 'track', 'memberships_normalized.csv'))
    roles = [c for c in frame.columns if c.startswith('role_')]
    totals = frame[roles].sum(axis=1).to_numpy()
    assert np.all((np.abs(totals - 1.0) <= 1e-9) | (totals == 0.0))


def test_saved_explanation_matches_csv(switch_run):
    output_dir, manifest, _ = switch_run
    explanation = load_explanation(os.path.join(str(output_dir), 'interpret', 'explanation.json'))
    assert explanation.averaged.shape == (manifest['rank'], len(MEASURES))
    assert explanation.timesteps == list(range(1, 21))

    frame = pd.read_csv(os.path.join(str(output_dir), 'interpret', 'explanation.csv'))
    pivot = frame.pivot(index='role', columns='measure', values='contribution')[list(MEASURES)]
    np.testing.assert_allclose(pivot.to_numpy(), explanation.averaged, rtol=1e-9, atol=1e-12)
    assert [item['role'] for item in manifest['interpretation']['role_labels']] == \
        list(range(1, manifest['rank'] + 1))


# ---- 可重現性與分階段執行 ----

def test_runs_are_reproducible(small_network, tmp_path):
    input_path, _ = small_network
    run_pipeline(_config(input_path, tmp_path / 'a'))
    run_pipeline(_config(input_path, tmp_path / 'b'))
    assert _checksums(tmp_path / 'a') == _checksums(tmp_path / 'b')


def test_stagewise_run_matches_full_run(small_network, tmp_path):
    """每個階段用新的流程物件執行，結果與一次執行全部相同"""
    input_path, _ = small_network
    run_pipeline(_config(input_path, tmp_path / 'full'))
    for stage in STAGES:
        RoleDynamicsPipeline(_config(input_path, tmp_path / 'staged')).run([stage])

    manifest = _read_manifest(tmp_path / 'staged')
    assert manifest['completed_stages'] == list(STAGES)
    assert _checksums(tmp_path / 'full') == _checksums(tmp_path / 'staged')


def test_missing_stage_output_records_failure(small_network, tmp_path):
    input_path, _ = small_network
    pipeline = RoleDynamicsPipeline(_config(input_path, tmp_path / 'out'))
    pipeline.run(['ingest'])
    with pytest.raises(DataError, match='features'):
        pipeline.run(['roles'])

    manifest = _read_manifest(tmp_path / 'out')
    assert manifest['failure']['stage'] == 'roles'
    assert manifest['failure']['exit_code'] == 2
    assert manifest['completed_stages'] == ['ingest']


def test_malformed_input_fails_at_ingest(tmp_path):
    bad = tmp_path / 'bad.csv'
    bad.write_text('a,b,notanumber\n', encoding='utf-8')
    with pytest.raises(EdgeParseError):
        run_pipeline(_config(bad, tmp_path / 'out', strict=True))
    manifest = _read_manifest(tmp_path / 'out')
    assert manifest['failure']['stage'] == 'ingest'
    assert manifest['completed_stages'] == []


def test_success_clears_previous_failure(small_network, tmp_path):
    input_path, _ = small_network
    output_dir = tmp_path / 'out'
    with pytest.raises(DataError):
        RoleDynamicsPipeline(_config(input_path, output_dir)).run(['features'])
    assert 'failure' in _read_manifest(output_dir)
    RoleDynamicsPipeline(_config(input_path, output_dir)).run(['ingest'])
    assert 'failure' not in _read_manifest(output_dir)


def test_rerunning_ingest_resets_later_stages(small_network, tmp_path):
    """重新執行 ingest 會清掉之後各階段的輸出與紀錄"""
    input_path, _ = small_network
    output_dir = tmp_path / 'out'
    run_pipeline(_config(input_path, output_dir))
    assert os.path.exists(os.path.join(str(output_dir), 'features', 'features_t008.csv'))

    edges, _ = create_switch_network(n_stars=3, leaves=3, n_cliques=3, clique_size=4, t_max=3, switch_at=2)
    shorter = write_edge_file(edges, str(tmp_path / 'shorter.csv'))
    manifest = RoleDynamicsPipeline(_config(shorter, output_dir)).run(['ingest'])

    assert manifest['completed_stages'] == ['ingest']
    assert manifest['stats']['t_max'] == 3
    assert set(manifest['timings']) == {'ingest'}
    for key in ('feature_count', 'rank', 'mdl_trace', 'interpretation'):
        assert key not in manifest
    paths = set(_checksums(output_dir))
    assert paths == {'snapshots.jsonl', 'snapshots_manifest.json'}
    for directory in ('features', 'roles', 'track', 'interpret', 'report'):
        assert not os.path.exists(os.path.join(str(output_dir), directory))


def test_rerunning_a_stage_replaces_its_outputs(small_network, tmp_path):
    input_path, _ = small_network
    output_dir = tmp_path / 'out'
    run_pipeline(_config(input_path, output_dir))
    stale = os.path.join(str(output_dir), 'roles', 'stale.json')
    with open(stale, 'w', encoding='utf-8') as f:
        f.write('{}')

    manifest = RoleDynamicsPipeline(_config(input_path, output_dir)).run(['roles'])
    assert manifest['completed_stages'] == ['ingest', 'features', 'roles']
    assert not os.path.exists(stale)
    assert not os.path.exists(os.path.join(str(output_dir), 'track'))
    assert all(not a['path'].startswith(('track/', 'report/')) for a in _read_manifest(output_dir)['artifacts'])


# ---- 角色漂移模式 ----

def test_drift_mode_run(small_network, tmp_path):
    input_path, _ = small_network
    output_dir = tmp_path / 'drift'
    manifest = run_pipeline(_config(input_path, output_dir, mode='per-timestep-refit', r_max=3))

    assert manifest['drift']['heuristic_matching'] is True
    assert len(manifest['drift']['ranks']) == 8
    assert manifest['rank'] == manifest['drift']['n_tracks']
    assert not os.path.exists(os.path.join(str(output_dir), 'roles', 'role_model.json'))
    with open(os.path.join(str(output_dir), 'roles', 'drift_models.json'), encoding='utf-8') as f:
        drift = json.load(f)
    assert drift['heuristic_matching'] is True
    assert len(drift['assignments']) == 8

    with open(os.path.join(str(output_dir), 'report', 'report.md'), encoding='utf-8') as f:
        assert '啟發式' in f.read()


# ---- 效能 ----

@pytest.mark.slow
def test_pipeline_scales_linearly(tmp_path):
    """邊數每加倍，總執行時間成長不超過 2.5 倍（不計算精確介數中心性）"""
    totals = []
    for n_edges in (10000, 20000, 40000):
        input_path = write_edge_file(create_scaling_network(n_edges), str(tmp_path / f'e{n_edges}.csv'))
        best = None
        for attempt in range(2):
            manifest = run_pipeline(_config(input_path, tmp_path / f'out{n_edges}_{attempt}', r_min=3, r_max=3,
                                            restarts=1, n_bins=8, max_depth=3, betweenness_node_cap=0))
            elapsed = sum(manifest['timings'].values())
            best = elapsed if best is None else min(best, elapsed)
        totals.append(best)
    assert totals[1] / totals[0] <= 2.5
    assert totals[2] / totals[1] <= 2.5


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, '-v']))
