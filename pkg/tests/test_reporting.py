import hashlib

import pytest

from babelgen.metrics import MetricReport
from babelgen.reporting import (
    ChartRow,
    ReportError,
    ResultsGrid,
    best_strategies,
    chart_csv,
    diff_to_gold,
    emit_chart_data,
    metric_report_from_train_result,
    results_table,
)
from tests.conftest import FIXTURES

STRATEGIES = [
    "sl", "en-demos-sl", "en-demos-rev", "target-demos",
    "target-demos-sl", "target-demos-rev", "target-demos-sl-rev",
]


@pytest.fixture(scope="module")
def reference_grid():
    return ResultsGrid.load(FIXTURES / "reference_results_grid.json")


def small_grid(values: dict, languages=("aa", "bb")):
    """values: strategy -> per-language f1 list; 'gold' included."""
    grid = ResultsGrid()
    for strategy, row in values.items():
        for language, value in zip(languages, row):
            grid.put(
                "intent", language, "all", strategy,
                MetricReport(run_id=f"{strategy}-{language}", f1_mean=value),
            )
    return grid


class TestResultsTable:
    def test_reference_intent_avg_and_marks(self, reference_grid):
        table = results_table(reference_grid, "intent")
        assert table.value("target-demos-sl-rev", "avg") == pytest.approx(87.74, abs=0.005)
        assert table.value("target-demos-sl", "avg") == pytest.approx(87.15, abs=0.005)
        assert table.bold["avg"] == "target-demos-sl-rev"
        assert table.underline["avg"] == "target-demos-sl"

    def test_gold_first_excluded_from_marking(self, reference_grid):
        table = results_table(reference_grid, "intent")
        assert table.rows[0].name == "gold"
        assert table.rows[0].is_gold
        # gold beats every strategy in every column yet is never marked
        assert "gold" not in set(table.bold.values()) | set(table.underline.values())

    def test_single_strategy_grid_bold_everywhere(self):
        grid = small_grid({"gold": [90.0, 91.0], "sl": [80.0, 81.0]})
        table = results_table(grid, "intent")
        assert all(name == "sl" for name in table.bold.values())
        assert not table.underline

    def test_missing_cells_render_dash_with_warning(self):
        grid = small_grid({"gold": [90.0, 91.0], "sl": [80.0, 81.0]})
        grid.put("intent", "cc", "all", "gold", MetricReport(run_id="g", f1_mean=92.0))
        table = results_table(grid, "intent")
        assert table.warnings
        markdown = table.render_markdown()
        assert "—" in markdown

    def test_tie_first_listed_wins_with_footnote(self):
        grid = small_grid({"gold": [90.0, 90.0], "sl": [85.0, 80.0], "target-demos": [85.0, 70.0]})
        table = results_table(grid, "intent")
        assert table.bold["aa"] == "sl"
        assert table.underline["aa"] == "target-demos"
        assert any("tie" in note for note in table.footnotes)

    def test_markdown_markers(self, reference_grid):
        table = results_table(reference_grid, "intent")
        markdown = table.render_markdown()
        assert "**87.74**" in markdown
        assert "_87.15_" in markdown
        gold_avg = table.value("gold", "avg")
        assert f"*{gold_avg:.2f}*" in markdown  # italicized gold row
        html = table.render_markdown(underline_html=True)
        assert "<u>87.15</u>" in html

    def test_csv_round_trip_exact(self, reference_grid):
        table = results_table(reference_grid, "intent")
        lines = table.render_csv().strip().splitlines()
        header = lines[0].split(",")
        assert header[0] == "row"
        for line in lines[1:]:
            cells = line.split(",")
            row_name = cells[0]
            for column, cell in zip(header[1:], cells[1:]):
                if cell:
                    assert float(cell) == table.value(row_name, column)

    def test_marking_invariant_under_positive_scaling(self, reference_grid):
        table = results_table(reference_grid, "intent")
        scaled = ResultsGrid()
        for (task, language, model, strategy), report in reference_grid.cells.items():
            scaled.put(task, language, model, strategy,
                       MetricReport(run_id=report.run_id, f1_mean=report.f1_mean * 3.7))
        scaled_table = results_table(scaled, "intent")
        assert scaled_table.bold == table.bold
        assert scaled_table.underline == table.underline

    def test_unknown_task(self, reference_grid):
        with pytest.raises(ReportError, match="no cells"):
            results_table(reference_grid, "parsing")


class TestDiffToGold:
    def test_intent_gap_matches_published_difference(self, reference_grid):
        diffs = diff_to_gold(reference_grid, tasks=["intent"])
        assert diffs["target-demos-sl-rev"].mean == pytest.approx(5.02, abs=0.01)

    def test_equal_to_gold_means_zero_and_best(self):
        grid = small_grid({"gold": [90.0, 80.0], "sl": [70.0, 60.0], "target-demos": [90.0, 80.0]})
        diffs = diff_to_gold(grid)
        assert diffs["target-demos"].mean == pytest.approx(0.0, abs=1e-12)
        assert all(v == pytest.approx(0.0) for v in diffs["target-demos"].per_cell.values())
        best, second = best_strategies(diffs)
        assert best == "target-demos"
        assert second == "sl"

    def test_topic_best_gap(self, reference_grid):
        diffs = diff_to_gold(reference_grid, tasks=["topic"])
        best, _ = best_strategies(diffs)
        assert best == "target-demos-rev"
        assert diffs["target-demos-rev"].mean == pytest.approx(9.95, abs=0.01)

    def test_missing_gold_cell_raises(self):
        grid = ResultsGrid()
        grid.put("intent", "aa", "all", "sl", MetricReport(run_id="x", f1_mean=1.0))
        with pytest.raises(ReportError, match="missing gold"):
            diff_to_gold(grid)

    def test_scope_filters(self, reference_grid):
        diffs = diff_to_gold(reference_grid, tasks=["intent"], languages=["cy"])
        assert set(diffs["sl"].per_cell) == {("intent", "cy", "all")}
        assert diffs["sl"].per_cell[("intent", "cy", "all")] == pytest.approx(91.46 - 63.22, abs=1e-9)

    def test_grid_validate_reports_missing_gold(self):
        grid = ResultsGrid()
        grid.put("intent", "aa", "all", "sl", MetricReport(run_id="x", f1_mean=1.0))
        assert grid.validate() == ["no gold cell for (intent, aa, all)"]


class TestChartEmission:
    def test_diff_bars_has_seven_rows_per_group(self, reference_grid, tmp_path):
        diffs = diff_to_gold(reference_grid, tasks=["intent"])
        rows = [ChartRow(group="intent", series=s, value=diffs[s].mean) for s in STRATEGIES]
        csv_path, svg_path = emit_chart_data(rows, "diff_bars", tmp_path / "bars")
        lines = csv_path.read_text(encoding="utf-8").strip().splitlines()
        assert lines[0] == "group,series,value,ci_low,ci_high"
        assert len(lines) == 1 + 7
        assert svg_path.read_text(encoding="utf-8").startswith("<svg")

    def test_seed_sweep_shape_with_ci_columns(self, tmp_path):
        rows = [
            ChartRow(group=str(k), series=strategy, value=0.5 + k / 1000,
                     ci_low=0.4 + k / 1000, ci_high=0.6 + k / 1000)
            for strategy in ("target-demos", "sl")
            for k in range(10, 101, 10)
        ]
        csv_path, svg_path = emit_chart_data(rows, "seed_sweep", tmp_path / "sweep")
        lines = csv_path.read_text(encoding="utf-8").strip().splitlines()
        assert len(lines) == 1 + 20
        assert all(len(line.split(",")) == 5 for line in lines)
        assert "polyline" in svg_path.read_text(encoding="utf-8")

    def test_deterministic_bytes(self, tmp_path):
        rows = [ChartRow(group="g", series="s", value=1.2345)]
        paths1 = emit_chart_data(rows, "diff_bars", tmp_path / "one")
        paths2 = emit_chart_data(rows, "diff_bars", tmp_path / "two")
        for a, b in zip(paths1, paths2):
            assert hashlib.sha256(a.read_bytes()).hexdigest() == hashlib.sha256(b.read_bytes()).hexdigest()

    def test_unknown_kind_and_empty_rows(self, tmp_path):
        with pytest.raises(ReportError, match="unknown chart kind"):
            emit_chart_data([ChartRow("g", "s", 1.0)], "pie", tmp_path / "x")
        with pytest.raises(ReportError, match="no chart rows"):
            emit_chart_data([], "diff_bars", tmp_path / "x")

    def test_csv_formatting(self):
        text = chart_csv([ChartRow("g", "s", 0.123456789, None, None)])
        assert text == "group,series,value,ci_low,ci_high\ng,s,0.123457,,\n"


class TestGridSerialization:
    def test_save_load_round_trip(self, reference_grid, tmp_path):
        path = tmp_path / "grid.json"
        reference_grid.save(path)
        loaded = ResultsGrid.load(path)
        assert loaded.cells.keys() == reference_grid.cells.keys()
        sample_key = ("intent", "cy", "all", "target-demos-sl-rev")
        assert loaded.cells[sample_key].f1_mean == reference_grid.cells[sample_key].f1_mean
        assert loaded.strategies == reference_grid.strategies


class TestTrainerIngestion:
    def test_values_pass_through_unchanged(self):
        payload = {
            "per_seed_f1": [0.97, 0.95, 0.99],
            "mean_f1": 0.97,
            "epochs_run": [8, 9, 7],
            "config": {"epochs": 50},
        }
        report = metric_report_from_train_result(payload, run_id="trainer-1")
        assert report.f1_mean == 0.97
        assert report.per_seed_f1 == [0.97, 0.95, 0.99]
        assert report.f1_ci_low <= report.f1_mean <= report.f1_ci_high

    def test_appears_in_results_table(self):
        grid = small_grid({"gold": [90.0, 91.0], "sl": [80.0, 81.0]})
        payload = {"per_seed_f1": [88.0, 90.0], "mean_f1": 89.0, "epochs_run": [3, 4], "config": {}}
        grid.put("intent", "aa", "all", "target-demos",
                 metric_report_from_train_result(payload))
        table = results_table(grid, "intent")
        assert table.value("target-demos", "aa") == 89.0
        assert table.bold["aa"] == "target-demos"

    def test_malformed_payload(self):
        with pytest.raises(ReportError, match="trainer result"):
            metric_report_from_train_result({"f1": 1.0})
