"""实验进度输出处理器 - 管理逐层结果的 UI 渲染"""

from typing import Any, Dict, List, Optional

from rich import box
from rich.console import Console
from rich.live import Live
from rich.table import Table

from utils.save_content import format_float


class StudyStreamHandler:
    """把 lab.study 发出的事件渲染成实时刷新的逐层表格"""

    def __init__(self, console: Console, transient: bool = False):
        self.console = console
        self.transient = transient

        # 状态管理
        self.study: Optional[str] = None
        self.header: List[str] = []
        self.rows: List[Dict[str, Any]] = []
        self.total = 0
        self.failed: Optional[str] = None

        # Live 显示管理
        self.current_live: Optional[Live] = None

    def reset(self):
        """重置所有状态"""
        self._stop_live()
        self.study = None
        self.header = []
        self.rows.clear()
        self.total = 0
        self.failed = None

    # ==================== Live 管理 ====================

    def _render(self) -> Table:
        done = len(self.rows)
        table = Table(
            title=f"[bold cyan]{self.study}[/bold cyan]  [dim]{done}/{self.total}[/dim]",
            box=box.SIMPLE,
            header_style="bold cyan",
        )
        columns = self.header or (list(self.rows[0]) if self.rows else [])
        for name in columns:
            table.add_column(name, justify="right")
        for row in self.rows:
            table.add_row(*(self._cell(row.get(name)) for name in columns))
        return table

    @staticmethod
    def _cell(value: Any) -> str:
        if isinstance(value, float):
            return f"{value:.4e}"
        return format_float(value) if value is not None else ""

    def _update_live(self):
        """更新 Live 显示"""
        renderable = self._render()
        if self.current_live is None:
            self.current_live = Live(renderable, console=self.console, refresh_per_second=8,
                                     transient=self.transient)
            self.current_live.start()
        else:
            self.current_live.update(renderable)

    def _stop_live(self):
        if self.current_live is not None:
            self.current_live.stop()
            self.current_live = None

    # ==================== 事件 ====================

    def handle_event(self, event: Dict[str, Any]):
        """
        处理单个事件

        Args:
            event: {"type": "start" | "level" | "failed" | "done", ...}
        """
        kind = event.get("type")
        if kind == "start":
            self.reset()
            self.study = event.get("study")
            self.header = list(event.get("header") or [])
            self.total = int(event.get("total", 0))
            self._update_live()
        elif kind == "level":
            self.rows.append(dict(event.get("row", {})))
            self._update_live()
        elif kind == "failed":
            self.failed = str(event.get("error", ""))
            self._update_live()
            self._stop_live()
        elif kind == "done":
            self._update_live()
            self._stop_live()

    __call__ = handle_event

    def finalize(self):
        """中断或结束时清理"""
        self._stop_live()
