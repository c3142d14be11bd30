from __future__ import annotations

import math

import pandas as pd

from src.rig_ident.estimator import DeviationRow, VerificationRow
from src.rig_ident.report import (
    render_deviation_table,
    render_verification_table,
    table_to_markdown,
    write_excel,
)


def _verification_rows():
    return [
        VerificationRow(
            sigma_n=0.001,
            seed=0,
            estimates={"cm": 1.8139e-4, "ke": 0.06016},
            deviations={"cm": 0.77, "ke": 0.0023},
            misfit=3.9,
            iterations=120,
            evals=231,
            termination="converged",
        ),
        VerificationRow(
            sigma_n=1.0,
            seed=3,
            estimates={"cm": 1.9e-4, "ke": 0.0601},
            deviations={"cm": 5.5, "ke": 0.1},
            misfit=40012.5,
            iterations=98,
            evals=190,
            termination="stalled",
        ),
    ]


def test_table_to_markdown():
    text = table_to_markdown(["a", "b|c"], [[1, 0.5], ["x|y", math.nan]])
    assert text.splitlines() == [
        "| a | b\\|c |",
        "| --- | --- |",
        "| 1 | 0.5 |",
        "| x\\|y | - |",
    ]


def test_infinite_cells():
    text = table_to_markdown(["v"], [[math.inf], [-math.inf]])
    assert "| inf |" in text and "| -inf |" in text


def test_verification_table():
    text = render_verification_table(_verification_rows())
    lines = text.splitlines()
    assert lines[0] == "## Two-parameter verification"
    assert lines[2].startswith("| sigma_n | cm estimate | cm deviation (%) | ke estimate | ke deviation (%)")
    assert "| 0.001 | 0.00018139 | 0.77 | 0.06016 | 0.0023 |" in text
    assert text.count("\n| 1 |") == 1


def test_deviation_table_with_summary():
    rows = [DeviationRow("jm", 4.0e-4, 4.2e-4, 4.0e-4, 5.0)]
    text = render_deviation_table(rows, summary={"final misfit": 12.5, "cycles": 3})
    assert "- final misfit: 12.5" in text
    assert "- cycles: 3" in text
    assert "| jm | 0.0004 | 0.00042 | 0.0004 | 5 |" in text


def test_excel_workbook(tmp_path):
    frame = pd.DataFrame({"parameter": ["cm", "ke"], "estimate": [1.8e-4, 0.06]})
    path = tmp_path / "report.xlsx"
    write_excel({"report": frame, "trace": frame.head(1)}, path)

    back = pd.read_excel(path, sheet_name=None, engine="openpyxl")
    assert set(back) == {"report", "trace"}
    pd.testing.assert_frame_equal(back["report"], frame)
