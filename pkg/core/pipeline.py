"""
分析流程模組
依序執行 ingest → features → roles → track → interpret → report 各階段；
階段之間只透過輸出目錄中的檔案交換資料，並維護 run_manifest.json
"""

import logging
import os
import shutil
import time
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from utils.helpers import ensure_directory_exists, file_sha256, read_json, write_csv, write_json

from .config import RunConfig
from .dynamics import (DynamicsAnalyzer, align_drift_memberships, importance_series, refit_per_timestep,
                       role_distance, stack_global, union_features)
from .errors import DataError, InsufficientDataError, exit_code_for
from .feature_extraction import (FeatureExtractor, FeatureMatrix,
                                 definitions_to_json)
from .interpretation import MEASURES, RoleExplanation, RoleInterpreter, role_labels
from .report_generator import ReportGenerator
from .role_discovery import (MembershipMatrix, RoleFactorizer, RoleModel, memberships_from_frame,
                             memberships_to_frame)
from .svg_plotter import plot_network_dynamics, plot_node_dynamics
from .temporal_graph import ARCHIVE_FILE, ARCHIVE_MANIFEST, SnapshotSequence, bin_snapshots, load_edge_file, \
    load_snapshot_archive, save_snapshot_archive


logger = logging.getLogger(__name__)

STAGES = ('ingest', 'features', 'roles', 'track', 'interpret', 'report')
MANIFEST_FILE = 'run_manifest.json'
FEATURES_DIR = 'features'
ROLES_DIR = 'roles'
TRACK_DIR = 'track'
INTERPRET_DIR = 'interpret'
REPORT_DIR = 'report'
TOP_CHANGED = 20

# 各階段寫出的檔案與 manifest 欄位；重新執行某階段時連同之後的階段一起清除
STAGE_OUTPUTS = {
    'ingest': (ARCHIVE_FILE, ARCHIVE_MANIFEST),
    'features': (FEATURES_DIR,),
    'roles': (ROLES_DIR,),
    'track': (TRACK_DIR,),
    'interpret': (INTERPRET_DIR,),
    'report': (REPORT_DIR,),
}
STAGE_KEYS = {
    'ingest': ('ingest', 'stats'),
    'features': ('feature_count',),
    'roles': ('rank', 'mdl_trace', 'drift'),
    'track': ('importance_normalized',),
    'interpret': ('interpretation',),
    'report': (),
}


class RoleDynamicsPipeline:
    """角色動態分析流程"""

    def __init__(self, config: RunConfig):
        self.config = config.validate()
        self.output_dir = config.output_dir
        self.manifest = self._load_manifest()

    # ---- 路徑與 manifest ----

    def path(self, *parts: str) -> str:
        return os.path.join(self.output_dir, *parts)

    def _load_manifest(self) -> Dict:
        path = self.path(MANIFEST_FILE)
        manifest = read_json(path) if os.path.exists(path) else {}
        manifest.setdefault('completed_stages', [])
        manifest.setdefault('timings', {})
        manifest['config'] = self.config.to_dict()
        manifest.pop('failure', None)
        return manifest

    def list_artifacts(self) -> List[Dict[str, object]]:
        """輸出目錄中除了 manifest 之外的所有檔案與其 SHA-256"""
        artifacts = []
        for root, _, files in os.walk(self.output_dir):
            for name in files:
                full = os.path.join(root, name)
                relative = os.path.relpath(full, self.output_dir).replace(os.sep, '/')
                if relative == MANIFEST_FILE:
                    continue
                artifacts.append({'path': relative, 'sha256': file_sha256(full),
                                  'bytes': os.path.getsize(full)})
        return sorted(artifacts, key=lambda a: a['path'])

    def write_manifest(self) -> str:
        self.manifest['artifacts'] = self.list_artifacts()
        return write_json(self.path(MANIFEST_FILE), self.manifest)

    def _invalidate(self, name: str) -> None:
        """清除 name 與之後各階段的輸出和 manifest 紀錄"""
        for stage in STAGES[STAGES.index(name):]:
            if stage in self.manifest['completed_stages']:
                self.manifest['completed_stages'].remove(stage)
            self.manifest['timings'].pop(stage, None)
            for key in STAGE_KEYS[stage]:
                self.manifest.pop(key, None)
            for relative in STAGE_OUTPUTS[stage]:
                target = self.path(relative)
                if os.path.isdir(target):
                    shutil.rmtree(target)
                elif os.path.exists(target):
                    os.remove(target)

    def _run_stage(self, name: str, func: Callable[[], None]) -> None:
        if not ensure_directory_exists(self.output_dir):
            raise OSError(f"無法建立輸出目錄: {self.output_dir}")
        self._invalidate(name)
        logger.info("階段 %s 開始", name)
        start = time.perf_counter()
        try:
            func()
        except Exception as e:
            self.manifest['failure'] = {'stage': name, 'error': str(e), 'exit_code': exit_code_for(e)}
            self.write_manifest()
            logger.error("階段 %s 失敗: %s", name, e)
            raise
        elapsed = time.perf_counter() - start
        self.manifest['timings'][name] = round(elapsed, 3)
        if name not in self.manifest['completed_stages']:
            self.manifest['completed_stages'].append(name)
        self.write_manifest()
        logger.info("階段 %s 完成（%.2f 秒）", name, elapsed)

    def _require(self, path: str, stage: str) -> str:
        if not os.path.exists(path):
            raise DataError(f"找不到 {os.path.relpath(path, self.output_dir)}，請先執行 {stage} 階段")
        return path

    # ---- 讀取前一階段的輸出 ----

    def load_sequence(self) -> SnapshotSequence:
        self._require(self.path('snapshots_manifest.json'), 'ingest')
        return load_snapshot_archive(self.output_dir)

    def load_features(self, sequence: SnapshotSequence) -> List[FeatureMatrix]:
        self._require(self.path(FEATURES_DIR, 'definitions.json'), 'features')
        return [FeatureMatrix.load_csv(self.path(FEATURES_DIR, f'features_t{s.index:03d}.csv'), s.index)
                for s in sequence]

    def load_memberships(self, sequence: SnapshotSequence) -> List[MembershipMatrix]:
        path = self._require(self.path(TRACK_DIR, 'memberships.csv'), 'track')
        frame = pd.read_csv(path, float_precision='round_trip', keep_default_na=False)
        return memberships_from_frame(frame, [s.index for s in sequence])

    # ---- 各階段 ----

    def ingest(self) -> None:
        def stage():
            cfg = self.config
            edges = load_edge_file(cfg.input_path, cfg.schema, delimiter=cfg.delimiter, strict=cfg.strict,
                                   keep_self_loops=cfg.keep_self_loops)
            sequence = bin_snapshots(edges, cfg.window_width, cfg.aggregation, cfg.origin)
            save_snapshot_archive(sequence, self.output_dir)
            self.manifest['ingest'] = {
                'edges_read': len(edges),
                'malformed_lines': edges.malformed_lines,
                'first_malformed_line': edges.first_malformed_line,
                'self_loops_dropped': edges.self_loops_dropped,
            }
            self.manifest['stats'] = sequence.stats()
        self._run_stage('ingest', stage)

    def features(self) -> None:
        def stage():
            cfg = self.config
            sequence = self.load_sequence()
            extractor = FeatureExtractor(cfg.bin_fraction, cfg.n_bins, cfg.max_depth, cfg.workers)
            per_timestep = extractor.learn_all(sequence)
            if not any(per_timestep):
                raise InsufficientDataError("所有快照都是空的，無法學習特徵")
            global_set = union_features(per_timestep, [s.index for s in sequence])
            matrices = extractor.extract_all(sequence, global_set.defs)

            directory = self.path(FEATURES_DIR)
            os.makedirs(directory, exist_ok=True)
            for V in matrices:
                V.save_csv(os.path.join(directory, f'features_t{V.timestep:03d}.csv'))
            write_json(os.path.join(directory, 'definitions.json'), {
                'global': definitions_to_json(global_set.defs),
                'per_timestep': [definitions_to_json(defs) for defs in per_timestep],
                'provenance': {d.key: ts for d, ts in global_set.provenance.items()},
            })
            self.manifest['feature_count'] = len(global_set)
            logger.info("全域特徵數: %d", len(global_set))
        self._run_stage('features', stage)

    def _factorizer(self) -> RoleFactorizer:
        cfg = self.config
        return RoleFactorizer(cfg.max_iters, cfg.tol, cfg.restarts, cfg.seed, cfg.bits, cfg.error_model,
                              workers=cfg.workers)

    def roles(self) -> None:
        def stage():
            cfg = self.config
            sequence = self.load_sequence()
            matrices = self.load_features(sequence)
            directory = self.path(ROLES_DIR)
            os.makedirs(directory, exist_ok=True)

            if cfg.mode == 'per-timestep-refit':
                drift = refit_per_timestep(matrices, self._factorizer(), cfg.r_min, cfg.r_max)
                write_json(os.path.join(directory, 'drift_models.json'), {
                    'heuristic_matching': drift.heuristic_matching,
                    'n_tracks': drift.n_tracks,
                    'ranks': drift.ranks,
                    'assignments': drift.track_assignment,
                    'models': [None if m is None else m.to_dict() for m in drift.models],
                })
                self.manifest['rank'] = drift.n_tracks
                self.manifest['drift'] = {'ranks': drift.ranks, 'n_tracks': drift.n_tracks,
                                          'heuristic_matching': True}
                return

            stacked = stack_global(matrices)
            n, f = stacked.shape
            upper = min(cfg.r_max, min(n, f) - 1)
            if upper < 1:
                raise InsufficientDataError(f"全域特徵矩陣太小（{n}×{f}），無法分解")
            if upper < cfg.r_max:
                logger.warning("角色數上限由 %d 下修為 %d（min(n, f) − 1）", cfg.r_max, upper)
            model = self._factorizer().select_rank(stacked.values, min(cfg.r_min, upper), upper,
                                                   stacked.definitions)
            model.save(os.path.join(directory, 'role_model.json'))
            write_csv(os.path.join(directory, 'role_distance.csv'),
                      role_distance(model, cfg.change_metric).to_frame().reset_index(names='role'))
            self.manifest['rank'] = model.rank
            self.manifest['mdl_trace'] = [[r, bits] for r, bits in model.mdl_trace]
        self._run_stage('roles', stage)

    def track(self) -> None:
        def stage():
            cfg = self.config
            sequence = self.load_sequence()
            matrices = self.load_features(sequence)
            analyzer = DynamicsAnalyzer(cfg.change_metric, cfg.workers)

            if cfg.mode == 'per-timestep-refit':
                drift = read_json(self._require(self.path(ROLES_DIR, 'drift_models.json'), 'roles'))
                models = [None if m is None else RoleModel.from_dict(m) for m in drift['models']]
                memberships = align_drift_memberships(matrices, models, drift['assignments'], drift['n_tracks'])
            else:
                model = RoleModel.load(self._require(self.path(ROLES_DIR, 'role_model.json'), 'roles'))
                memberships = analyzer.track(matrices, model)

            self._write_tracking(sequence, memberships, analyzer)
        self._run_stage('track', stage)

    def _write_tracking(self, sequence: SnapshotSequence, memberships: List[MembershipMatrix],
                        analyzer: DynamicsAnalyzer) -> None:
        directory = self.path(TRACK_DIR)
        os.makedirs(directory, exist_ok=True)
        labels = sequence.node_labels

        write_csv(os.path.join(directory, 'memberships.csv'), memberships_to_frame(memberships, labels))
        write_csv(os.path.join(directory, 'memberships_normalized.csv'),
                  memberships_to_frame([G.normalize() for G in memberships], labels))

        result = analyzer.analyze(memberships, len(labels), top_k=TOP_CHANGED)
        series = result['series']
        shift = result['shift']
        write_csv(os.path.join(directory, 'importance.csv'), series.to_frame())
        write_json(os.path.join(directory, 'importance.json'), series.to_dict())

        scores = result['scores']
        frames = [s.to_frame() for s in scores]
        changes = pd.concat(frames, ignore_index=True) if frames else \
            pd.DataFrame(columns=['node', 't', 'score', 'spans_gap'])
        changes = changes.sort_values(['node', 't'], kind='stable').reset_index(drop=True)
        changes.insert(1, 'label', [labels[int(v)] for v in changes['node']])
        write_csv(os.path.join(directory, 'change_scores.csv'), changes)

        top = []
        for s in result['top_changed']:
            position = int(np.argmax(s.scores))
            top.append({'node': labels[s.node], 'node_id': s.node, 't': s.argmax,
                        'score': float(s.scores[position]), 'spans_gap': bool(s.spans_gap[position])})
        write_json(os.path.join(directory, 'role_dynamics.json'), {
            'importance_shift': {
                'timesteps': shift.timesteps,
                'shifts': shift.shifts.tolist(),
                'argmax': shift.argmax,
                'max': float(shift.shifts.max()) if len(shift.shifts) else 0.0,
            },
            'classes': result['classes'],
            'top_changed': top,
            'metric': analyzer.metric,
        })
        self.manifest['importance_normalized'] = all(
            abs(float(series.values[i].sum()) - 1.0) <= 1e-9
            for i, empty in enumerate(series.empty) if not empty and series.values[i].any())

    def interpret(self) -> None:
        def stage():
            cfg = self.config
            sequence = self.load_sequence()
            memberships = [G.normalize() for G in self.load_memberships(sequence)]
            interpreter = RoleInterpreter(cfg.normalize_measures, cfg.betweenness_node_cap, cfg.workers)
            measures = interpreter.measures(sequence)
            explanation = interpreter.explain(memberships, measures)

            directory = self.path(INTERPRET_DIR)
            os.makedirs(directory, exist_ok=True)
            labels = sequence.node_labels
            frames = [M.to_frame(labels) for M in measures if M.n_rows]
            write_csv(os.path.join(directory, 'node_measures.csv'),
                      pd.concat(frames, ignore_index=True) if frames else
                      pd.DataFrame(columns=['node', 't'] + list(MEASURES)))
            explanation.save_csv(os.path.join(directory, 'explanation.csv'))
            payload = explanation.to_dict()
            payload['role_labels'] = role_labels(explanation)
            payload['per_timestep'] = [E.tolist() for E in explanation.per_timestep]
            write_json(os.path.join(directory, 'explanation.json'), payload)

            omitted = [[M.timestep, M.omitted] for M in measures if M.omitted]
            self.manifest['interpretation'] = {
                'normalize_measures': cfg.normalize_measures,
                'betweenness_node_cap': cfg.betweenness_node_cap,
                'omitted_measures': omitted,
                'skipped_timesteps': explanation.skipped,
                'role_labels': payload['role_labels'],
            }
        self._run_stage('interpret', stage)

    def report(self) -> None:
        def stage():
            cfg = self.config
            sequence = self.load_sequence()
            memberships = self.load_memberships(sequence)
            series = importance_series(memberships)
            dynamics = read_json(self._require(self.path(TRACK_DIR, 'role_dynamics.json'), 'track'))

            explanation_path = self.path(INTERPRET_DIR, 'explanation.json')
            labels_info = read_json(explanation_path)['role_labels'] if os.path.exists(explanation_path) else []
            legend = [f"role {k + 1}" for k in range(series.rank)]
            for item in labels_info:
                if item['role'] <= len(legend):
                    legend[item['role'] - 1] = f"role {item['role']}: {item['measure']}"

            directory = self.path(REPORT_DIR)
            os.makedirs(directory, exist_ok=True)
            with open(os.path.join(directory, 'network_dynamics.svg'), 'w', encoding='utf-8', newline='\n') as f:
                f.write(plot_network_dynamics(series, legend))

            analyzer = DynamicsAnalyzer(cfg.change_metric, cfg.workers)
            chosen = [item['node_id'] for item in dynamics['top_changed']]
            if not chosen:
                chosen = sorted({int(v) for G in memberships for v in G.nodes})[:TOP_CHANGED]
            if chosen:
                trajectories = analyzer.trajectories(memberships, len(sequence.node_labels))
                picked = [trajectories[node] for node in chosen]
                with open(os.path.join(directory, 'node_dynamics.svg'), 'w', encoding='utf-8', newline='\n') as f:
                    f.write(plot_node_dynamics(picked, sequence.node_labels, series.rank))

            summary = {
                'stats': sequence.stats(),
                'mode': cfg.mode,
                'feature_count': self.manifest.get('feature_count', 0),
                'rank': series.rank,
                'mdl_trace': self.manifest.get('mdl_trace', []),
                'role_labels': labels_info,
                'role_classes': dynamics['classes'],
                'importance_shift': dynamics['importance_shift'],
                'top_changed': dynamics['top_changed'],
                'omitted_measures': self.manifest.get('interpretation', {}).get('omitted_measures', []),
                'drift': self.manifest.get('drift'),
            }
            ReportGenerator().generate(summary, directory)
        self._run_stage('report', stage)

    def run(self, stages: Optional[List[str]] = None) -> Dict:
        """
        執行指定階段（預設全部）並回傳 manifest

        Returns:
            Dict: run_manifest.json 的內容
        """
        for name in stages or STAGES:
            getattr(self, name)()
        return self.manifest


def run_pipeline(config: RunConfig) -> Dict:
    """執行完整流程"""
    return RoleDynamicsPipeline(config).run()


def load_explanation(path: str) -> RoleExplanation:
    """讀回 explanation.json"""
    data = read_json(path)
    per_timestep = [np.asarray(E, dtype=float) for E in data['per_timestep']]
    residuals = {int(t): r for t, r in data.get('residuals', {}).items()}
    return RoleExplanation(per_timestep, data['timesteps'], residuals, data.get('skipped', []),
                           tuple(data.get('measures', MEASURES)))
