"""
報告生成器
把一次分析的結果整理成 Markdown 報告，並以 markdown 套件轉為 HTML
"""

import logging
import os
from typing import Dict, List, Sequence, Tuple

import markdown


logger = logging.getLogger(__name__)

HTML_TEMPLATE = """<!DOCTYPE html>
<html lang="zh-Hant">
<head>
<meta charset="utf-8">
<title>{title}</title>
<style>
body {{ font-family: sans-serif; line-height: {line_height}; max-width: 960px; margin: 2em auto; }}
table {{ border-collapse: collapse; }}
th, td {{ border: 1px solid #cccccc; padding: 2px 8px; text-align: right; }}
</style>
</head>
<body>
{body}
</body>
</html>
"""


def _table(headers: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    lines = ['| ' + ' | '.join(headers) + ' |', '|' + '---|' * len(headers)]
    for row in rows:
        lines.append('| ' + ' | '.join(str(cell) for cell in row) + ' |')
    return '\n'.join(lines)


class ReportGenerator:
    """分析報告生成器"""

    def __init__(self, title: str = '角色動態分析報告', line_height: float = 1.6):
        self.title = title
        self.line_height = line_height

    def build_markdown(self, summary: Dict) -> str:
        """
        由分析摘要組成 Markdown 報告（不含任何時間戳記，重跑結果相同）

        Args:
            summary: 分析摘要，鍵值包含 stats、mode、feature_count、rank、mdl_trace、
                role_labels、role_classes、importance_shift、top_changed、omitted_measures、drift

        Returns:
            str: Markdown 文字
        """
        stats = summary.get('stats', {})
        sections: List[str] = [f"# {self.title}"]

        sections.append('\n'.join([
            '## 資料集資訊',
            '',
            f"- **節點數**: {stats.get('nodes', 0)}",
            f"- **邊數（快照合計）**: {stats.get('edges', 0)}",
            f"- **時間步數**: {stats.get('t_max', 0)}",
            f"- **時間窗寬度**: {stats.get('window_width', '')}",
            f"- **各時間步活躍節點數**: {', '.join(str(n) for n in stats.get('n_t', []))}",
        ]))

        sections.append('\n'.join([
            '## 角色模型',
            '',
            f"- **模式**: {summary.get('mode', 'global-basis')}",
            f"- **特徵數**: {summary.get('feature_count', 0)}",
            f"- **角色數**: {summary.get('rank', 0)}",
        ]))

        mdl_trace: Sequence[Tuple[int, float]] = summary.get('mdl_trace', [])
        if mdl_trace:
            sections.append('### 描述長度\n\n' + _table(
                ['r', '描述長度（位元）'], [(r, f'{bits:.1f}') for r, bits in mdl_trace]))

        labels = summary.get('role_labels', [])
        classes = {item['role']: item['class'] for item in summary.get('role_classes', [])}
        if labels or classes:
            roles = sorted({item['role'] for item in labels} | set(classes))
            label_of = {item['role']: item for item in labels}
            rows = []
            for role in roles:
                item = label_of.get(role, {})
                measure = item.get('measure', '-')
                if item.get('degenerate'):
                    measure += '（無貢獻）'
                rows.append((role, measure, classes.get(role, '-')))
            sections.append('## 角色說明\n\n' + _table(['角色', '主要指標', '重要性變化'], rows))

        omitted = summary.get('omitted_measures', [])
        if omitted:
            sections.append('\n'.join(
                ['## 略過的指標', ''] + [f"- 時間步 {t}: {', '.join(names)}" for t, names in omitted]))

        shift = summary.get('importance_shift')
        if shift:
            argmax = shift.get('argmax')
            sections.append('\n'.join([
                '## 網路層級變化',
                '',
                f"- **最大單步變化時間步**: {'無（角色重要性沒有變化）' if argmax is None else argmax}",
                f"- **變化量（L1）**: {shift.get('max', 0.0):.4f}",
            ]))

        drift = summary.get('drift')
        if drift:
            sections.append('\n'.join([
                '## 逐時間步重新擬合',
                '',
                f"- **各時間步角色數**: {', '.join(str(r) for r in drift.get('ranks', []))}",
                f"- **角色軌道數**: {drift.get('n_tracks', 0)}",
                '- 跨時間步的角色對應以貪婪配對求得，屬啟發式結果',
            ]))

        top_changed = summary.get('top_changed', [])
        if top_changed:
            rows = [(item['node'], item['t'], f"{item['score']:.4f}", '是' if item.get('spans_gap') else '否')
                    for item in top_changed]
            sections.append('## 行為變化最大的節點\n\n' + _table(['節點', '時間步', '分數', '跨越不活躍'], rows))

        sections.append('---\n\n*本報告由角色動態分析工具自動生成*')
        return '\n\n'.join(sections) + '\n'

    def render_html(self, markdown_text: str) -> str:
        body = markdown.markdown(markdown_text, extensions=['tables'])
        return HTML_TEMPLATE.format(title=self.title, line_height=self.line_height, body=body)

    def generate(self, summary: Dict, output_dir: str,
                 basename: str = 'report') -> Tuple[str, str]:
        """
        寫出 report.md 與 report.html

        Args:
            summary: 分析摘要
            output_dir: 輸出目錄
            basename: 檔名（不含副檔名）

        Returns:
            Tuple[str, str]: Markdown 與 HTML 檔案路徑
        """
        os.makedirs(output_dir, exist_ok=True)
        text = self.build_markdown(summary)

        md_path = os.path.join(output_dir, f"{basename}.md")
        with open(md_path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)

        html_path = os.path.join(output_dir, f"{basename}.html")
        with open(html_path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(self.render_html(text))

        logger.info("報告已生成: %s", md_path)
        return md_path, html_path
