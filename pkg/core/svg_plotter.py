"""
SVG 繪圖模組
直接輸出 SVG 1.1：網路角色重要性隨時間變化（堆疊面積或折線）與節點角色帶狀圖
"""

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
from markupsafe import escape

from .dynamics import NodeTrajectory, RoleImportanceSeries
from .errors import InvalidArgumentError


logger = logging.getLogger(__name__)

WIDTH = 800
HEIGHT = 400
BAND_HEIGHT = 24
MARGIN_LEFT = 60
MARGIN_RIGHT = 20
MARGIN_TOP = 30
MARGIN_BOTTOM = 40
INACTIVE_COLOR = '#ffffff'
PALETTE = (
    '#1f77b4', '#ff7f0e', '#2ca02c', '#d62728', '#9467bd', '#8c564b',
    '#e377c2', '#7f7f7f', '#bcbd22', '#17becf', '#393b79', '#637939',
)


def role_color(role: int) -> str:
    """角色（從 1 開始）的固定顏色"""
    return PALETTE[(role - 1) % len(PALETTE)]


class SvgBuilder:
    """逐段累積 SVG 文字"""

    def __init__(self):
        self.svg = ""

    def header(self, width: float, height: float) -> None:
        self.svg += (
            '<?xml version="1.0" standalone="no"?>\n'
            '<!DOCTYPE svg PUBLIC "-//W3C//DTD SVG 1.1//EN" '
            '"http://www.w3.org/Graphics/SVG/1.1/DTD/svg11.dtd">\n'
            f'<svg version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}" '
            'xmlns="http://www.w3.org/2000/svg">\n'
        )

    @staticmethod
    def _attrs(attr: Optional[Dict[str, object]]) -> str:
        if not attr:
            return ''
        return ' ' + ' '.join(f'{key}="{escape(str(value))}"' for key, value in attr.items())

    def group_start(self, attr: Optional[Dict[str, object]] = None, title: Optional[str] = None) -> None:
        self.svg += f'<g{self._attrs(attr)}>\n'
        if title:
            self.svg += f'<title>{escape(title)}</title>\n'

    def group_end(self) -> None:
        self.svg += '</g>\n'

    def filled_rectangle(self, x1: float, y1: float, x2: float, y2: float, fill: str,
                         attr: Optional[Dict[str, object]] = None) -> None:
        self.svg += (f'<rect x="{x1:.2f}" y="{y1:.2f}" width="{x2 - x1:.2f}" height="{y2 - y1:.2f}" '
                     f'fill="{fill}"{self._attrs(attr)}/>\n')

    def polygon(self, points: Sequence[tuple], fill: str, attr: Optional[Dict[str, object]] = None) -> None:
        coords = ' '.join(f'{x:.2f},{y:.2f}' for x, y in points)
        self.svg += f'<polygon points="{coords}" fill="{fill}" stroke="none"{self._attrs(attr)}/>\n'

    def polyline(self, points: Sequence[tuple], stroke: str, attr: Optional[Dict[str, object]] = None) -> None:
        coords = ' '.join(f'{x:.2f},{y:.2f}' for x, y in points)
        self.svg += (f'<polyline points="{coords}" fill="none" stroke="{stroke}" '
                     f'stroke-width="2"{self._attrs(attr)}/>\n')

    def line(self, x1: float, y1: float, x2: float, y2: float, stroke: str = '#000000') -> None:
        self.svg += f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" stroke="{stroke}"/>\n'

    def text(self, x: float, y: float, string: str, anchor: str = 'start', size: int = 11) -> None:
        self.svg += (f'<text x="{x:.2f}" y="{y:.2f}" font-family="sans-serif" font-size="{size}" '
                     f'text-anchor="{anchor}">{escape(string)}</text>\n')

    def get_svg(self) -> str:
        return f"{self.svg}</svg>\n"


def _x_positions(count: int) -> np.ndarray:
    plot_width = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    if count == 1:
        return np.array([MARGIN_LEFT + plot_width / 2.0])
    return MARGIN_LEFT + np.arange(count) * plot_width / (count - 1)


def _tick_stride(count: int, max_ticks: int = 20) -> int:
    return max(1, -(-count // max_ticks))


def _legend(svg: SvgBuilder, labels: Sequence[str]) -> None:
    svg.group_start({'class': 'legend'})
    for k, label in enumerate(labels):
        x = MARGIN_LEFT + k * 120
        svg.filled_rectangle(x, 10, x + 10, 20, role_color(k + 1))
        svg.text(x + 14, 19, label)
    svg.group_end()


def plot_network_dynamics(series: RoleImportanceSeries, labels: Optional[Sequence[str]] = None,
                          style: str = 'area') -> str:
    """
    繪製角色重要性隨時間的變化

    版面固定：寬 800、高 400，邊界左 60 右 20 上 30 下 40；y = 0..1 對應繪圖區高度。

    Args:
        series: 角色重要性序列
        labels: 圖例文字，預設為 role 1..r
        style: area（堆疊面積）或 line（每個角色一條折線）

    Returns:
        str: SVG 文件
    """
    if not len(series.timesteps) or series.rank == 0:
        raise InvalidArgumentError("角色重要性序列是空的")
    if style not in ('area', 'line'):
        raise InvalidArgumentError(f"不支援的圖形樣式: {style}")
    labels = list(labels) if labels is not None else [f'role {k + 1}' for k in range(series.rank)]

    bottom = HEIGHT - MARGIN_BOTTOM
    plot_height = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
    xs = _x_positions(len(series.timesteps))

    def y_of(value):
        return bottom - value * plot_height

    svg = SvgBuilder()
    svg.header(WIDTH, HEIGHT)
    _legend(svg, labels)

    svg.group_start({'class': 'series', 'data-style': style})
    cumulative = np.zeros(len(series.timesteps))
    for k in range(series.rank):
        values = series.values[:, k]
        attr = {'class': f'role-{k + 1}', 'data-role': k + 1}
        if style == 'area':
            upper = cumulative + values
            points = [(x, y_of(v)) for x, v in zip(xs, upper)]
            points += [(x, y_of(v)) for x, v in zip(xs[::-1], cumulative[::-1])]
            svg.polygon(points, role_color(k + 1), attr)
            cumulative = upper
        else:
            svg.polyline([(x, y_of(v)) for x, v in zip(xs, values)], role_color(k + 1), attr)
    svg.group_end()

    svg.group_start({'class': 'axes'})
    svg.line(MARGIN_LEFT, bottom, WIDTH - MARGIN_RIGHT, bottom)
    svg.line(MARGIN_LEFT, MARGIN_TOP, MARGIN_LEFT, bottom)
    for value in (0.0, 0.5, 1.0):
        svg.text(MARGIN_LEFT - 6, y_of(value) + 4, f'{value:.1f}', anchor='end')
    stride = _tick_stride(len(series.timesteps))
    for i in range(0, len(series.timesteps), stride):
        svg.text(xs[i], bottom + 16, str(series.timesteps[i]), anchor='middle')
    svg.text(MARGIN_LEFT + (WIDTH - MARGIN_LEFT - MARGIN_RIGHT) / 2, HEIGHT - 6, 'time', anchor='middle')
    svg.group_end()
    return svg.get_svg()


def plot_node_dynamics(trajectories: Sequence[NodeTrajectory], node_labels: Optional[Sequence[str]] = None,
                       rank: Optional[int] = None) -> str:
    """
    繪製節點角色帶狀圖：每個節點一條高 24 的橫帶，每個時間步依正規化成員比例由上往下堆疊；不活躍時為白色

    Args:
        trajectories: 節點軌跡
        node_labels: 節點標籤（以節點編號索引）
        rank: 角色數，用於圖例；預設由軌跡推得

    Returns:
        str: SVG 文件
    """
    if not trajectories:
        raise InvalidArgumentError("至少需要一條節點軌跡")
    timesteps = trajectories[0].timesteps
    if rank is None:
        rank = max((len(m) for traj in trajectories for m in traj.memberships if m is not None), default=0)

    height = MARGIN_TOP + BAND_HEIGHT * len(trajectories) + MARGIN_BOTTOM
    cell = (WIDTH - MARGIN_LEFT - MARGIN_RIGHT) / len(timesteps)

    svg = SvgBuilder()
    svg.header(WIDTH, height)
    _legend(svg, [f'role {k + 1}' for k in range(rank)])

    for row, traj in enumerate(trajectories):
        top = MARGIN_TOP + row * BAND_HEIGHT
        label = node_labels[traj.node] if node_labels is not None else str(traj.node)
        svg.group_start({'class': 'node-band', 'data-node': traj.node}, title=str(label))
        svg.text(MARGIN_LEFT - 6, top + BAND_HEIGHT / 2 + 4, str(label), anchor='end')
        for j, membership in enumerate(traj.normalized()):
            x1 = MARGIN_LEFT + j * cell
            t = timesteps[j]
            if membership is None or not np.any(membership > 0):
                svg.filled_rectangle(x1, top, x1 + cell, top + BAND_HEIGHT, INACTIVE_COLOR,
                                     {'class': 'inactive', 'data-t': t})
                continue
            y = top
            for k, share in enumerate(membership):
                if share <= 0:
                    continue
                segment = share * BAND_HEIGHT
                svg.filled_rectangle(x1, y, x1 + cell, y + segment, role_color(k + 1),
                                     {'class': 'segment', 'data-t': t, 'data-role': k + 1})
                y += segment
        svg.group_end()

    bottom = height - MARGIN_BOTTOM
    stride = _tick_stride(len(timesteps))
    for j in range(0, len(timesteps), stride):
        svg.text(MARGIN_LEFT + (j + 0.5) * cell, bottom + 16, str(timesteps[j]), anchor='middle')
    return svg.get_svg()
