"""Aggregation of per-cell metric reports into tables, gaps and chart data.

Averages across languages/tasks are unweighted. Output formats are diffable
by construction: Markdown/CSV tables, CSV + static SVG chart data, all
byte-deterministic for identical inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from babelgen.metrics import MetricReport, aggregate_seeds
from babelgen.strategies import ALL_STRATEGIES

GOLD = "gold"


class ReportError(Exception):
    """Raised for incomplete grids and malformed report inputs."""


CellKey = tuple[str, str, str, str]  # (task, language, model, strategy-or-gold)


@dataclass
class ResultsGrid:
    cells: dict[CellKey, MetricReport] = field(default_factory=dict)
    tasks: list[str] = field(default_factory=list)
    languages: list[str] = field(default_factory=list)
    models: list[str] = field(default_factory=list)
    strategies: list[str] = field(default_factory=list)

    def put(self, task: str, language: str, model: str, strategy: str, report: MetricReport) -> None:
        self.cells[(task, language, model, strategy)] = report
        for value, ordering in (
            (task, self.tasks),
            (language, self.languages),
            (model, self.models),
        ):
            if value not in ordering:
                ordering.append(value)
        if strategy != GOLD and strategy not in self.strategies:
            self.strategies.append(strategy)

    def get(self, task: str, language: str, model: str, strategy: str) -> MetricReport | None:
        return self.cells.get((task, language, model, strategy))

    def validate(self) -> list[str]:
        """Every non-gold cell needs a gold cell for its (task, language, model)."""
        problems = []
        for (task, language, model, strategy) in self.cells:
            if strategy == GOLD:
                continue
            if (task, language, model, GOLD) not in self.cells:
                problems.append(f"no gold cell for ({task}, {language}, {model})")
        return sorted(set(problems))

    def to_dict(self) -> dict:
        return {
            "tasks": self.tasks,
            "languages": self.languages,
            "models": self.models,
            "strategies": self.strategies,
            "cells": [
                {
                    "task": task,
                    "language": language,
                    "model": model,
                    "strategy": strategy,
                    "report": report.to_dict(),
                }
                for (task, language, model, strategy), report in sorted(self.cells.items())
            ],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, data: dict) -> "ResultsGrid":
        grid = cls(
            tasks=list(data.get("tasks", [])),
            languages=list(data.get("languages", [])),
            models=list(data.get("models", [])),
            strategies=list(data.get("strategies", [])),
        )
        for cell in data.get("cells", []):
            grid.put(
                cell["task"],
                cell["language"],
                cell["model"],
                cell["strategy"],
                MetricReport.from_dict(cell["report"]),
            )
        return grid

    @classmethod
    def load(cls, path: str | Path) -> "ResultsGrid":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class TableRow:
    name: str
    values: dict[str, float | None]
    is_gold: bool = False


@dataclass
class TableDocument:
    title: str
    columns: list[str]
    rows: list[TableRow]
    bold: dict[str, str] = field(default_factory=dict)  # column -> row name
    underline: dict[str, str] = field(default_factory=dict)
    footnotes: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def value(self, row_name: str, column: str) -> float | None:
        for row in self.rows:
            if row.name == row_name:
                return row.values.get(column)
        raise ReportError(f"no row named {row_name!r}")

    def render_markdown(self, underline_html: bool = False) -> str:
        def fmt(row: TableRow, col: str) -> str:
            value = row.values.get(col)
            if value is None:
                return "—"
            text = f"{value:.2f}"
            if row.is_gold:
                return f"*{text}*"
            if self.bold.get(col) == row.name:
                return f"**{text}**"
            if self.underline.get(col) == row.name:
                return f"<u>{text}</u>" if underline_html else f"_{text}_"
            return text

        header = "| " + " | ".join([self.title, *self.columns]) + " |"
        divider = "|" + "|".join(["---"] * (len(self.columns) + 1)) + "|"
        lines = [header, divider]
        for row in self.rows:
            name = f"*{row.name}*" if row.is_gold else row.name
            lines.append("| " + " | ".join([name, *[fmt(row, c) for c in self.columns]]) + " |")
        for note in self.footnotes:
            lines.append("")
            lines.append(f"> {note}")
        return "\n".join(lines) + "\n"

    def render_csv(self) -> str:
        # full float repr so parsing the CSV recovers every cell exactly
        lines = [",".join(["row", *self.columns])]
        for row in self.rows:
            cells = [row.name]
            for col in self.columns:
                value = row.values.get(col)
                cells.append("" if value is None else repr(value))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def _mark_columns(table: TableDocument) -> None:
    for col in table.columns:
        ranked = []
        for index, row in enumerate(table.rows):
            if row.is_gold:
                continue
            value = row.values.get(col)
            if value is not None:
                ranked.append((-value, index, row.name))
        ranked.sort()
        if ranked:
            table.bold[col] = ranked[0][2]
        if len(ranked) > 1:
            table.underline[col] = ranked[1][2]
            if ranked[0][0] == ranked[1][0]:
                table.footnotes.append(
                    f"tie in column {col!r}: first-listed row {ranked[0][2]!r} marked best"
                )


def results_table(grid: ResultsGrid, task: str, model: str | None = None) -> TableDocument:
    """One row per strategy (gold first), one column per language plus avg.

    Cell values are f1_mean; the avg column is the unweighted mean over the
    language columns. Best strategy per column is bolded, second best
    underlined; the gold row is excluded from marking.
    """
    if task not in grid.tasks:
        raise ReportError(f"grid has no cells for task {task!r}")
    models = [model] if model is not None else grid.models
    if len(models) != 1:
        raise ReportError(f"pick one model dimension value from {grid.models}")
    model = models[0]

    languages = list(grid.languages)
    strategies = [s for s in (grid.strategies or ALL_STRATEGIES)]
    table = TableDocument(title=task, columns=[*languages, "avg"], rows=[])

    for name, is_gold in [(GOLD, True), *[(s, False) for s in strategies]]:
        values: dict[str, float | None] = {}
        present = []
        for language in languages:
            report = grid.get(task, language, model, name)
            value = report.f1_mean if report is not None else None
            values[language] = value
            if value is None:
                table.warnings.append(f"missing cell ({task}, {language}, {model}, {name})")
            else:
                present.append(value)
        values["avg"] = sum(present) / len(present) if present else None
        table.rows.append(TableRow(name=name, values=values, is_gold=is_gold))

    _mark_columns(table)
    return table


@dataclass
class DiffToGold:
    mean: float
    per_cell: dict[tuple[str, str, str], float]  # (task, language, model) -> gap


def diff_to_gold(
    grid: ResultsGrid,
    tasks: list[str] | None = None,
    languages: list[str] | None = None,
    models: list[str] | None = None,
) -> dict[str, DiffToGold]:
    """Gold F1 minus strategy F1 per cell, averaged unweighted over the scope.

    Smaller means better; the caller reads the best strategy off the minimum
    mean. Raises when a scoped cell has no gold counterpart.
    """
    results: dict[str, DiffToGold] = {}
    for strategy in grid.strategies:
        per_cell: dict[tuple[str, str, str], float] = {}
        for (task, language, model, name), report in sorted(grid.cells.items()):
            if name != strategy:
                continue
            if tasks is not None and task not in tasks:
                continue
            if languages is not None and language not in languages:
                continue
            if models is not None and model not in models:
                continue
            gold = grid.get(task, language, model, GOLD)
            if gold is None or gold.f1_mean is None:
                raise ReportError(f"missing gold cell for ({task}, {language}, {model})")
            if report.f1_mean is None:
                continue
            per_cell[(task, language, model)] = gold.f1_mean - report.f1_mean
        if per_cell:
            results[strategy] = DiffToGold(
                mean=sum(per_cell.values()) / len(per_cell), per_cell=per_cell
            )
    return results


def best_strategies(diffs: dict[str, DiffToGold]) -> tuple[str, str | None]:
    """Best (minimum mean gap) and second-best strategy names."""
    if not diffs:
        raise ReportError("no strategies in scope")
    ordered = sorted(diffs.items(), key=lambda item: item[1].mean)
    best = ordered[0][0]
    second = ordered[1][0] if len(ordered) > 1 else None
    return best, second


@dataclass
class ChartRow:
    group: str
    series: str
    value: float
    ci_low: float | None = None
    ci_high: float | None = None


def chart_rows_from_diffs(diffs: dict[str, DiffToGold], group: str) -> list[ChartRow]:
    return [
        ChartRow(group=group, series=strategy, value=diffs[strategy].mean)
        for strategy in diffs
    ]


def chart_csv(rows: list[ChartRow]) -> str:
    lines = ["group,series,value,ci_low,ci_high"]
    for row in rows:
        ci_low = "" if row.ci_low is None else f"{row.ci_low:.6f}"
        ci_high = "" if row.ci_high is None else f"{row.ci_high:.6f}"
        lines.append(f"{row.group},{row.series},{row.value:.6f},{ci_low},{ci_high}")
    return "\n".join(lines) + "\n"


_PALETTE = [
    "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3",
    "#937860", "#da8bc3", "#8c8c8c", "#ccb974", "#64b5cd",
]

_SVG_W, _SVG_H, _MARGIN = 640, 360, 50


def _scale(value: float, lo: float, hi: float, out_lo: float, out_hi: float) -> float:
    if hi == lo:
        return (out_lo + out_hi) / 2.0
    return out_lo + (value - lo) * (out_hi - out_lo) / (hi - lo)


def _svg_header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" '
        f'viewBox="0 0 {_SVG_W} {_SVG_H}">',
        f'<text x="{_SVG_W / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
    ]


def chart_svg_bars(rows: list[ChartRow], title: str = "") -> str:
    """Grouped bar chart; deterministic bytes for identical rows."""
    groups = sorted({r.group for r in rows})
    series = sorted({r.series for r in rows})
    values = {(r.group, r.series): r.value for r in rows}
    hi = max((r.value for r in rows), default=1.0)
    lo = min(0.0, min((r.value for r in rows), default=0.0))
    parts = _svg_header(title)
    plot_w = _SVG_W - 2 * _MARGIN
    plot_h = _SVG_H - 2 * _MARGIN
    group_w = plot_w / max(len(groups), 1)
    bar_w = group_w / (len(series) + 1)
    baseline = _MARGIN + plot_h - _scale(0.0, lo, hi, 0.0, plot_h)
    parts.append(
        f'<line x1="{_MARGIN}" y1="{baseline:.2f}" x2="{_SVG_W - _MARGIN}" '
        f'y2="{baseline:.2f}" stroke="#333"/>'
    )
    for gi, group in enumerate(groups):
        for si, name in enumerate(series):
            value = values.get((group, name))
            if value is None:
                continue
            height = abs(_scale(value, lo, hi, 0.0, plot_h) - _scale(0.0, lo, hi, 0.0, plot_h))
            x = _MARGIN + gi * group_w + (si + 0.5) * bar_w
            y = baseline - height if value >= 0 else baseline
            color = _PALETTE[si % len(_PALETTE)]
            parts.append(
                f'<rect x="{x:.2f}" y="{y:.2f}" width="{bar_w:.2f}" height="{height:.2f}" '
                f'fill="{color}"><title>{group}/{name}: {value:.4f}</title></rect>'
            )
        parts.append(
            f'<text x="{_MARGIN + (gi + 0.5) * group_w:.2f}" y="{_SVG_H - _MARGIN + 16}" '
            f'text-anchor="middle" font-size="11">{group}</text>'
        )
    for si, name in enumerate(series):
        color = _PALETTE[si % len(_PALETTE)]
        y = 28 + 14 * si
        parts.append(f'<rect x="{_SVG_W - 170}" y="{y - 9}" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text x="{_SVG_W - 155}" y="{y}" font-size="10">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def chart_svg_lines(rows: list[ChartRow], title: str = "") -> str:
    """Line chart over numeric groups with CI whiskers when present."""

    def group_key(value: str) -> float:
        try:
            return float(value)
        except ValueError:
            raise ReportError(f"seed-sweep groups must be numeric, got {value!r}") from None

    groups = sorted({r.group for r in rows}, key=group_key)
    series = sorted({r.series for r in rows})
    xs = {g: group_key(g) for g in groups}
    lo_y = min(min((r.ci_low if r.ci_low is not None else r.value) for r in rows), 0.0)
    hi_y = max((r.ci_high if r.ci_high is not None else r.value) for r in rows)
    lo_x, hi_x = min(xs.values()), max(xs.values())
    plot_w = _SVG_W - 2 * _MARGIN
    plot_h = _SVG_H - 2 * _MARGIN

    def px(value: float) -> float:
        return _MARGIN + _scale(value, lo_x, hi_x, 0.0, plot_w)

    def py(value: float) -> float:
        return _MARGIN + plot_h - _scale(value, lo_y, hi_y, 0.0, plot_h)

    parts = _svg_header(title)
    indexed = {(r.group, r.series): r for r in rows}
    for si, name in enumerate(series):
        color = _PALETTE[si % len(_PALETTE)]
        points = []
        for group in groups:
            row = indexed.get((group, name))
            if row is None:
                continue
            x, y = px(xs[group]), py(row.value)
            points.append(f"{x:.2f},{y:.2f}")
            if row.ci_low is not None and row.ci_high is not None:
                parts.append(
                    f'<line x1="{x:.2f}" y1="{py(row.ci_low):.2f}" x2="{x:.2f}" '
                    f'y2="{py(row.ci_high):.2f}" stroke="{color}" stroke-width="1"/>'
                )
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{" ".join(points)}"/>'
        )
        y = 28 + 14 * si
        parts.append(f'<rect x="{_SVG_W - 170}" y="{y - 9}" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text x="{_SVG_W - 155}" y="{y}" font-size="10">{name}</text>')
    for group in groups:
        parts.append(
            f'<text x="{px(xs[group]):.2f}" y="{_SVG_H - _MARGIN + 16}" '
            f'text-anchor="middle" font-size="11">{group}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_chart_data(rows: list[ChartRow], kind: str, out: str | Path) -> list[Path]:
    """Write <out>.csv and <out>.svg for a chart kind; returns written paths."""
    if kind not in ("diff_bars", "seed_sweep"):
        raise ReportError(f"unknown chart kind {kind!r}")
    if not rows:
        raise ReportError("no chart rows to emit")
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out.with_suffix(".csv")
    svg_path = out.with_suffix(".svg")
    csv_path.write_text(chart_csv(rows), encoding="utf-8", newline="\n")
    if kind == "diff_bars":
        svg = chart_svg_bars(rows, title="difference to gold (percentage points)")
    else:
        svg = chart_svg_lines(rows, title="performance vs. seed samples per label")
    svg_path.write_text(svg, encoding="utf-8", newline="\n")
    return [csv_path, svg_path]


def metric_report_from_train_result(data: dict, run_id: str = "trainer") -> MetricReport:
    """Wrap a trainer result file (per_seed_f1 / mean_f1 / epochs_run / config)."""
    try:
        per_seed = [float(v) for v in data["per_seed_f1"]]
        mean = float(data["mean_f1"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ReportError(f"not a trainer result payload: {exc}") from exc
    if len(per_seed) >= 2:
        _, ci_low, ci_high = aggregate_seeds(per_seed)
    else:
        ci_low = ci_high = mean
    return MetricReport(
        run_id=run_id,
        f1_mean=mean,
        f1_ci_low=min(ci_low, mean),
        f1_ci_high=max(ci_high, mean),
        per_seed_f1=per_seed,
    )
