from __future__ import annotations

import math
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Union

import pandas as pd

from .estimator import DeviationRow, VerificationRow


def _md_escape(text: str) -> str:
    # pipes would split the cell
    return text.replace("|", "\\|")


def _cell(value: object) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "-"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.6g}"
    return str(value)


def table_to_markdown(header: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    lines: List[str] = []
    lines.append("| " + " | ".join(_md_escape(str(c)) for c in header) + " |")
    lines.append("| " + " | ".join(["---"] * len(header)) + " |")
    for row in rows:
        lines.append("| " + " | ".join(_md_escape(_cell(c)) for c in row) + " |")
    return "\n".join(lines) + "\n"


def render_verification_table(rows: Sequence[VerificationRow], mask: Sequence[str] = ("cm", "ke")) -> str:
    """Estimates of the verification pair per noise level, with their deviation from the truth."""
    header = ["sigma_n"]
    for name in mask:
        header += [f"{name} estimate", f"{name} deviation (%)"]
    header += ["misfit", "iterations", "termination"]
    body = []
    for row in rows:
        cells: List[object] = [row.sigma_n]
        for name in mask:
            cells += [row.estimates[name], row.deviations[name]]
        cells += [row.misfit, row.iterations, row.termination]
        body.append(cells)
    return "## Two-parameter verification\n\n" + table_to_markdown(header, body)


def render_deviation_table(
    rows: Sequence[DeviationRow],
    *,
    title: str = "Nine-parameter estimation",
    summary: Mapping[str, object] | None = None,
) -> str:
    out = [f"## {title}", ""]
    for key, value in (summary or {}).items():
        out.append(f"- {key}: {_cell(value)}")
    if summary:
        out.append("")
    header = ["parameter", "initial guess", "estimate", "reference", "relative deviation (%)"]
    body = [[r.parameter, r.initial_guess, r.estimate, r.reference, r.relative_deviation_pct] for r in rows]
    out.append(table_to_markdown(header, body).rstrip())
    return "\n".join(out) + "\n"


def write_excel(sheets: Dict[str, pd.DataFrame], path: Union[str, Path]) -> None:
    with pd.ExcelWriter(path, engine="openpyxl") as writer:
        for name, frame in sheets.items():
            frame.to_excel(writer, sheet_name=name[:31], index=False)
