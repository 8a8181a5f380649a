import json

import pytest

from spdefd.experiments import ConvergenceReport, Row
from spdefd.report import COLUMNS, emit, render, to_csv, to_gnuplot, to_json


def sample():
    rows = [Row(0, 0.2, 1e-3, 10.0, 4e-4, 0.02, 1e-6, 5), Row(1, 0.1, 1e-3, 10.0, 2.5e-5, 0.005, 1e-7, 5)]
    return ConvergenceReport("space", rows, {"slope": 2.0, "residual": 0.0}, {"seed": 0, "nan": float("nan")})


def test_empty_report_header_only():
    assert to_csv(ConvergenceReport("space")) == ",".join(COLUMNS) + "\n"


def test_one_row_eight_fields():
    rep = sample()
    rep.rows = rep.rows[:1]
    lines = to_csv(rep).splitlines()
    assert len(lines) == 2 and len(lines[1].split(",")) == 8


@pytest.mark.parametrize("fmt", ["csv", "json", "gnuplot-dat"])
def test_byte_stable(tmp_path, fmt):
    p1 = emit(sample(), fmt, tmp_path / "a")
    p2 = emit(sample(), fmt, tmp_path / "b")
    assert p1.read_bytes() == p2.read_bytes()


def test_json_mirrors_rows():
    doc = json.loads(to_json(sample()))
    assert doc["rows"][1]["rmse"] == 0.005
    assert doc["fit"]["slope"] == 2.0
    assert doc["metadata"]["nan"] == "nan"


def test_gnuplot_log_columns():
    lines = [ln for ln in to_gnuplot(sample()).splitlines() if not ln.startswith("#")]
    cols = lines[0].split()
    assert float(cols[2]) == pytest.approx(-0.69897, abs=1e-5)


def test_unknown_format_and_io_error(tmp_path):
    with pytest.raises(ValueError):
        render(sample(), "xml")
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit(sample(), "csv", blocker)
