#!/usr/bin/env python3
"""
角色動態分析主程式
從時間邊列表學習結構角色，追蹤角色隨時間的變化並輸出報告
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

# 添加專案根目錄到Python路徑
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from core.config import AGGREGATIONS, CHANGE_METRICS, ERROR_MODELS, MODES, RunConfig
from core.errors import EXIT_OK, EXIT_USAGE, InvalidArgumentError, exit_code_for
from utils.helpers import validate_output_path


logger = logging.getLogger('role_dynamics')

SUBCOMMANDS = ('ingest', 'features', 'roles', 'track', 'interpret', 'report', 'all')


class ArgumentParser(argparse.ArgumentParser):
    """用法錯誤以結束碼 1 離開"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: 錯誤: {message}\n")


def check_dependencies() -> bool:
    """檢查必要的依賴套件"""
    missing_packages = []

    for module, package in (('numpy', 'numpy'), ('scipy', 'scipy'), ('networkx', 'networkx'),
                            ('pandas', 'pandas'), ('markdown', 'markdown'), ('markupsafe', 'MarkupSafe')):
        try:
            __import__(module)
        except ImportError:
            missing_packages.append(package)

    if missing_packages:
        print(f"缺少必要的套件: {', '.join(missing_packages)}", file=sys.stderr)
        print("請執行以下命令安裝:", file=sys.stderr)
        print(f"pip install {' '.join(missing_packages)}", file=sys.stderr)
        return False

    return True


def build_parser() -> ArgumentParser:
    """建立命令列參數解析器；旗標與 RunConfig 欄位一一對應"""
    common = ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument('--config', dest='config_file', help='JSON 設定檔，旗標會覆寫其中的值')
    common.add_argument('-v', '--verbose', action='store_true', help='顯示除錯訊息')

    group = common.add_argument_group('輸入')
    group.add_argument('--input', dest='input_path', help='邊列表檔案')
    group.add_argument('--schema', help='欄位對應，例如 src,dst,time 或 src,dst,begin,end,weight')
    group.add_argument('--delimiter', help='分隔字元（預設自動判斷逗號或空白）')
    group.add_argument('--strict', action='store_true', help='遇到格式錯誤的行即停止')
    group.add_argument('--keep-self-loops', action='store_true', help='保留自迴圈')

    group = common.add_argument_group('快照')
    group.add_argument('--window-width', type=float, help='時間窗寬度')
    group.add_argument('--origin', type=float, help='第一個時間窗的起點（預設為最早的時間）')
    group.add_argument('--aggregation', choices=AGGREGATIONS, help='平行邊合併方式')

    group = common.add_argument_group('特徵')
    group.add_argument('--bin-fraction', type=float, help='對數分箱比例 p')
    group.add_argument('--n-bins', type=int, help='分箱數 s（預設由節點數推得）')
    group.add_argument('--max-depth', type=int, help='遞迴聚合的最大深度')

    group = common.add_argument_group('角色')
    group.add_argument('--max-iters', type=int, help='NMF 最大迭代次數')
    group.add_argument('--tol', type=float, help='NMF 收斂門檻')
    group.add_argument('--restarts', type=int, help='NMF 重啟次數')
    group.add_argument('--seed', type=int, help='亂數種子')
    group.add_argument('--r-min', type=int, help='最小角色數')
    group.add_argument('--r-max', type=int, help='最大角色數')
    group.add_argument('--bits', type=int, help='MDL 每個參數的位元數')
    group.add_argument('--error-model', choices=ERROR_MODELS, help='MDL 誤差模型')

    group = common.add_argument_group('動態與解釋')
    group.add_argument('--mode', choices=MODES, help='全域基底或逐時間步重新擬合')
    group.add_argument('--change-metric', choices=CHANGE_METRICS, help='行為變化距離')
    group.add_argument('--no-normalize-measures', dest='normalize_measures', action='store_false',
                       help='迴歸前不正規化節點指標')
    group.add_argument('--betweenness-node-cap', type=int, help='計算介數的節點數上限')

    group = common.add_argument_group('執行')
    group.add_argument('--workers', type=int, help='執行緒數')
    group.add_argument('--output-dir', help='輸出目錄')

    parser = ArgumentParser(prog='main.py', description='時間網路的角色動態分析')
    subparsers = parser.add_subparsers(dest='command', metavar='COMMAND')
    subparsers.required = True
    descriptions = {
        'ingest': '讀取邊列表並切分快照',
        'features': '學習並擷取遞迴結構特徵',
        'roles': '以 NMF + MDL 學習角色',
        'track': '追蹤角色成員與行為變化',
        'interpret': '以節點指標解釋角色',
        'report': '輸出 SVG 圖表與報告',
        'all': '依序執行所有階段',
    }
    for name in SUBCOMMANDS:
        subparsers.add_parser(name, parents=[common], help=descriptions[name])
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """
    依序套用：預設值 → 設定檔 → 環境變數 → 命令列旗標

    Returns:
        RunConfig: 已驗證的設定
    """
    options = vars(args).copy()
    options.pop('command', None)
    options.pop('verbose', None)
    config_file = options.pop('config_file', None)

    if config_file:
        with open(config_file, encoding='utf-8') as f:
            config = RunConfig.from_json(f.read())
    else:
        config = RunConfig()
    config.apply_env()

    for key, value in options.items():
        setattr(config, key, value)
    return config.validate()


def setup_logging(verbose: bool = False) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')


def main(argv: Optional[List[str]] = None) -> int:
    """主函數"""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(getattr(args, 'verbose', False))

    if not check_dependencies():
        return EXIT_USAGE

    from core.pipeline import STAGES, RoleDynamicsPipeline

    try:
        config = config_from_args(args)
        if args.command in ('ingest', 'all') and not config.input_path:
            raise InvalidArgumentError("ingest 需要 --input")
        valid, message = validate_output_path(config.output_dir)
        if not valid:
            raise InvalidArgumentError(message)

        pipeline = RoleDynamicsPipeline(config)
        stages = list(STAGES) if args.command == 'all' else [args.command]
        manifest = pipeline.run(stages)
        logger.info("完成: %s（角色數 %s）", ', '.join(stages), manifest.get('rank', '-'))
        return EXIT_OK

    except KeyboardInterrupt:
        logger.warning("程式被使用者中斷")
        return EXIT_USAGE

    except Exception as e:
        code = exit_code_for(e)
        logger.error("程式執行錯誤: %s", e)
        logger.debug("詳細錯誤", exc_info=True)
        return code


if __name__ == "__main__":
    sys.exit(main())
