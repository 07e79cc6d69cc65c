"""
角色動態分析網頁 API
上傳邊列表、執行分析流程並下載產生的檔案（僅批次作業，不提供互動式視覺化）
"""

import logging
import os
import uuid

from flask import Flask, jsonify, request, send_from_directory
from werkzeug.exceptions import HTTPException
from werkzeug.utils import secure_filename

from core.config import RunConfig
from core.errors import EXIT_USAGE, RoleDynamicsError, exit_code_for
from core.pipeline import RoleDynamicsPipeline
from utils.helpers import EDGE_FILE_EXTENSIONS, format_file_size, validate_edge_file


logger = logging.getLogger(__name__)

DATA_DIR = os.environ.get('ROLE_DYNAMICS_DATA_DIR', 'data')

app = Flask(__name__)
app.config['MAX_CONTENT_LENGTH'] = 100 * 1024 * 1024  # 100MB max file size
app.config['UPLOAD_FOLDER'] = os.path.join(DATA_DIR, 'uploads')
app.config['OUTPUT_FOLDER'] = os.path.join(DATA_DIR, 'runs')

# 不允許透過 API 覆寫的設定
PROTECTED_KEYS = {'input_path', 'output_dir'}


def allowed_file(filename):
    """檢查檔案類型是否允許"""
    return filename.lower().endswith(EDGE_FILE_EXTENSIONS)


def _folders():
    os.makedirs(app.config['UPLOAD_FOLDER'], exist_ok=True)
    os.makedirs(app.config['OUTPUT_FOLDER'], exist_ok=True)


@app.route('/health')
def health():
    return jsonify({'status': 'healthy'})


@app.route('/status')
def get_status():
    """獲取系統狀態"""
    _folders()
    runs = sorted(os.listdir(app.config['OUTPUT_FOLDER']))
    return jsonify({
        'upload_folder': app.config['UPLOAD_FOLDER'],
        'output_folder': app.config['OUTPUT_FOLDER'],
        'runs': len(runs),
        'max_file_size': format_file_size(app.config['MAX_CONTENT_LENGTH']),
        'accepted_extensions': list(EDGE_FILE_EXTENSIONS),
    })


@app.route('/upload', methods=['POST'])
def upload_file():
    """處理邊列表上傳"""
    if 'file' not in request.files:
        return jsonify({'error': '沒有選擇檔案'}), 400

    file = request.files['file']
    if file.filename == '':
        return jsonify({'error': '沒有選擇檔案'}), 400

    if not allowed_file(file.filename):
        return jsonify({'error': '不支援的檔案格式'}), 400

    _folders()
    filename = f"{uuid.uuid4().hex[:8]}_{secure_filename(file.filename)}"
    file_path = os.path.join(app.config['UPLOAD_FOLDER'], filename)
    file.save(file_path)
    size = os.path.getsize(file_path)
    logger.info("上傳檔案: %s（%s）", filename, format_file_size(size))

    return jsonify({
        'success': True,
        'filename': filename,
        'file_size': format_file_size(size),
        'message': '檔案上傳成功'
    })


@app.route('/analyze', methods=['POST'])
def analyze():
    """以上傳的檔案執行完整分析流程（同步），回傳 run manifest"""
    if not request.is_json:
        return jsonify({'error': f'請求必須是JSON格式，當前Content-Type: {request.headers.get("Content-Type")}'}), 400

    data = request.get_json(silent=True)
    if not data:
        return jsonify({'error': '無效的JSON數據或空數據'}), 400

    filename = data.get('filename')
    if not filename:
        return jsonify({'error': '沒有指定檔案名稱'}), 400

    file_path = os.path.join(app.config['UPLOAD_FOLDER'], secure_filename(filename))
    if not validate_edge_file(file_path):
        return jsonify({'error': f'檔案不存在: {filename}'}), 404

    overrides = data.get('config', {})
    if not isinstance(overrides, dict):
        return jsonify({'error': 'config 必須是物件'}), 400
    blocked = sorted(PROTECTED_KEYS & set(overrides))
    if blocked:
        return jsonify({'error': f"不可覆寫的設定: {', '.join(blocked)}"}), 400

    run_id = uuid.uuid4().hex[:12]
    output_dir = os.path.join(app.config['OUTPUT_FOLDER'], run_id)
    try:
        config = RunConfig.from_dict({**overrides, 'input_path': file_path, 'output_dir': output_dir})
        config.apply_env()
        manifest = RoleDynamicsPipeline(config).run()
    except RoleDynamicsError as e:
        status = 400 if e.exit_code == EXIT_USAGE else 422
        return jsonify({'error': str(e), 'exit_code': e.exit_code, 'run_id': run_id}), status
    except TypeError as e:
        return jsonify({'error': f'設定格式錯誤: {e}'}), 400

    return jsonify({
        'success': True,
        'run_id': run_id,
        'manifest': manifest,
        'files': [a['path'] for a in manifest.get('artifacts', [])],
        'message': '分析完成'
    })


@app.route('/download/<run_id>/<path:filename>')
def download_file(run_id, filename):
    """下載分析產生的檔案"""
    run_dir = os.path.join(app.config['OUTPUT_FOLDER'], secure_filename(run_id))
    target = os.path.join(run_dir, filename)
    if not os.path.isdir(run_dir) or not os.path.isfile(target):
        return jsonify({'error': '檔案不存在'}), 404
    return send_from_directory(os.path.abspath(run_dir), filename, as_attachment=True)


@app.errorhandler(404)
def not_found(error):
    """404錯誤處理"""
    return jsonify({'error': 'API端點不存在'}), 404


@app.errorhandler(Exception)
def handle_exception(e):
    """全局異常處理"""
    if isinstance(e, HTTPException):
        return jsonify({'error': e.description}), e.code
    logger.exception("未處理的異常: %s", e)
    return jsonify({'error': f'服務器錯誤: {str(e)}', 'exit_code': exit_code_for(e)}), 500


if __name__ == '__main__':
    logging.basicConfig(level=logging.INFO, format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    port = int(os.environ.get('PORT', 5001))
    debug = os.environ.get('FLASK_ENV') != 'production'
    app.run(host='0.0.0.0', port=port, debug=debug)
