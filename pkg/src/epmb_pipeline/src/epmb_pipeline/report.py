"""Benchmark tables and grouped bar charts.

Every bar of a chart carries an SVG ``id`` of the form ``bar|<method>|<group>|<value>``
so that a chart can be checked against the CSV it was drawn from.
"""

import logging
import re
from collections.abc import Sequence
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402
from pydantic import BaseModel  # noqa: E402

from epmb_core.errors import CsvFormatError  # noqa: E402
from epmb_pipeline.bench import BenchmarkReport, SweepPoint  # noqa: E402

logger = logging.getLogger(__name__)

ROW_COLUMNS = ["scene", "method", "rpmd", "windows", "valid_pixels"]
VALUE_FORMAT = "{:.9g}"
_BAR_ID = re.compile(r'id="bar\|([^|"]*)\|([^|"]*)\|([^"]*)"')


class ReportRow(BaseModel):
    """Aggregate RPMD of one method on one scene."""

    scene: str
    method: str
    rpmd: float
    windows: int
    valid_pixels: int


def rows_from_reports(scene: str, reports: Sequence[BenchmarkReport]) -> list[ReportRow]:
    return [
        ReportRow(
            scene=scene,
            method=report.method,
            rpmd=report.aggregate_rpmd,
            windows=len(report.windows),
            valid_pixels=report.valid_pixels,
        )
        for report in reports
    ]


def write_rows_csv(path: Path, rows: Sequence[ReportRow]) -> None:
    frame = pd.DataFrame([row.model_dump() for row in rows], columns=ROW_COLUMNS)
    frame.to_csv(path, index=False, float_format="%.9g")


def read_rows_csv(path: Path) -> list[ReportRow]:
    """Raises CsvFormatError if the table lacks a column or holds a non-numeric score."""
    try:
        frame = pd.read_csv(path, dtype={"scene": str, "method": str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise CsvFormatError(f"Unreadable report table {path}: {e}") from e
    if list(frame.columns) != ROW_COLUMNS:
        raise CsvFormatError(f"Report table {path} has columns {list(frame.columns)}, expected {ROW_COLUMNS}")
    try:
        return [ReportRow(**record) for record in frame.to_dict(orient="records")]
    except ValueError as e:
        raise CsvFormatError(f"Invalid row in {path}: {e}") from e


def write_sweep_csv(path: Path, points: Sequence[SweepPoint]) -> None:
    frame = pd.DataFrame([point.model_dump() for point in points], columns=list(SweepPoint.model_fields))
    frame.to_csv(path, index=False, float_format="%.9g")


def _grouped_bars(
    groups: list[str], methods: list[str], values: dict[tuple[str, str], float], xlabel: str, title: str
) -> Figure:
    figure = Figure(figsize=(max(6.0, 1.2 * len(groups) * max(1, len(methods)) / 3), 4.0))
    ax = figure.subplots()
    width = 0.8 / max(1, len(methods))
    positions = np.arange(len(groups))
    for i, method in enumerate(methods):
        for j, group in enumerate(groups):
            if (group, method) not in values:
                continue
            value = values[(group, method)]
            (bar,) = ax.bar(positions[j] + (i - (len(methods) - 1) / 2) * width, value, width, color=f"C{i % 10}")
            bar.set_gid(f"bar|{method}|{group}|{VALUE_FORMAT.format(value)}")
            if j == 0 or (groups[0], method) not in values:
                bar.set_label(method)
    ax.set_xticks(positions, groups)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("RPMD")
    ax.set_title(title)
    ax.legend(loc="upper left", fontsize="small")
    figure.tight_layout()
    return figure


def _save_svg(figure: Figure, path: Path) -> None:
    with matplotlib.rc_context({"svg.hashsalt": "epmbench", "svg.fonttype": "none"}):
        figure.savefig(path, format="svg", metadata={"Date": None, "Creator": "epmbench"})
    logger.debug(f"Wrote chart {path}")


def render_scene_chart(path: Path, rows: Sequence[ReportRow], title: str = "RPMD per scene") -> None:
    """Scenes on the x axis, one bar per method."""
    groups = list(dict.fromkeys(row.scene for row in rows))
    methods = list(dict.fromkeys(row.method for row in rows))
    values = {(row.scene, row.method): row.rpmd for row in rows}
    _save_svg(_grouped_bars(groups, methods, values, "scene", title), path)


def render_sweep_chart(path: Path, points: Sequence[SweepPoint], title: str = "RPMD vs background activity") -> None:
    """Noise percentages on the x axis, one bar per method."""
    groups = [VALUE_FORMAT.format(p) for p in dict.fromkeys(point.noise_percent for point in points)]
    methods = list(dict.fromkeys(point.method for point in points))
    values = {(VALUE_FORMAT.format(point.noise_percent), point.method): point.rpmd for point in points}
    _save_svg(_grouped_bars(groups, methods, values, "background activity (% of signal events)", title), path)


def parse_chart_bars(path: Path) -> list[tuple[str, str, float]]:
    """``(method, group, value)`` of every bar in a chart written by this module, in drawing order."""
    text = path.read_text(encoding="utf-8")
    return [(method, group, float(value)) for method, group, value in _BAR_ID.findall(text)]
