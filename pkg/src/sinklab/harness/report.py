"""Report emission: CSV tables, a findings summary, SVG curves."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from ..errors import DomainError, SinkLabError


class ReportIOError(SinkLabError, OSError):
    pass


@dataclass
class Table:
    name: str
    columns: list[str]
    rows: list[list] = field(default_factory=list)
    footer: str = ""

    def add(self, *row) -> None:
        if len(row) != len(self.columns):
            raise DomainError(f"table {self.name}: row has {len(row)} cells, expected {len(self.columns)}")
        self.rows.append(list(row))

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def formatted_rows(self) -> list[list[str]]:
        return [[format_cell(v) for v in r] for r in self.rows]


@dataclass
class Finding:
    question: str
    answer: str
    evidence: str


def format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def table_csv(table: Table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    w.writerows(table.formatted_rows())
    return buf.getvalue()


def read_table_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return f"{v:.4g}"
    return format_cell(v)


def markdown_table(table: Table) -> str:
    lines = ["| " + " | ".join(table.columns) + " |", "|" + "---|" * len(table.columns)]
    lines += ["| " + " | ".join(_fmt(v) for v in r) + " |" for r in table.rows]
    if table.footer:
        lines += ["", f"_{table.footer}_"]
    return "\n".join(lines)


def svg_lines(title: str, series: dict[str, Sequence[tuple[float, float]]], x_label: str, y_label: str,
              width: int = 480, height: int = 320) -> str:
    """Minimal deterministic SVG line chart."""
    pts = [p for s in series.values() for p in s]
    if not pts:
        raise DomainError("nothing to plot")
    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    ml, mr, mt, mb = 60, 110, 30, 40
    pw, ph = width - ml - mr, height - mt - mb

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    palette = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
               "#bcbd22", "#17becf")
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{title}</text>',
           f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
           f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
           f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" font-size="11">{x_label}</text>',
           f'<text x="14" y="{mt + ph / 2:.1f}" text-anchor="middle" font-size="11" '
           f'transform="rotate(-90 14 {mt + ph / 2:.1f})">{y_label}</text>',
           f'<text x="{ml - 4}" y="{mt + ph:.1f}" text-anchor="end" font-size="9">{y0:.4g}</text>',
           f'<text x="{ml - 4}" y="{mt + 8}" text-anchor="end" font-size="9">{y1:.4g}</text>',
           f'<text x="{ml}" y="{mt + ph + 12:.1f}" text-anchor="middle" font-size="9">{x0:.3g}</text>',
           f'<text x="{ml + pw}" y="{mt + ph + 12:.1f}" text-anchor="middle" font-size="9">{x1:.3g}</text>']
    for n, (name, s) in enumerate(series.items()):
        color = palette[n % len(palette)]
        path = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in s)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        ly = mt + 12 * n + 6
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 24}" y2="{ly}" stroke="{color}"/>')
        out.append(f'<text x="{ml + pw + 28}" y="{ly + 3}" font-size="9">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(out_dir: str | Path, family: str, tables: list[Table], findings: list[Finding],
                plots: dict[str, str] | None = None, notes: Sequence[str] = ()) -> list[Path]:
    """Write ``tables/*.csv``, ``summary.md`` and ``plots/*.svg`` under ``out_dir``."""
    if not tables and not findings:
        raise DomainError("nothing to report")
    out = Path(out_dir)
    written: list[Path] = []
    try:
        (out / "tables").mkdir(parents=True, exist_ok=True)
        for t in tables:
            p = out / "tables" / f"{t.name}.csv"
            p.write_text(table_csv(t))
            written.append(p)
        if plots:
            (out / "plots").mkdir(exist_ok=True)
            for name, svg in plots.items():
                p = out / "plots" / f"{name}.svg"
                p.write_text(svg)
                written.append(p)
        doc = [f"# {family}: summary of findings", ""]
        if findings:
            doc += ["| Question | Answer | Evidence |", "|---|---|---|"]
            doc += [f"| {f.question} | {f.answer} | {f.evidence} |" for f in findings]
            doc.append("")
        for t in tables:
            doc += [f"## {t.name}", "", markdown_table(t), ""]
        for n in notes:
            doc += [f"> {n}", ""]
        p = out / "summary.md"
        p.write_text("\n".join(doc))
        written.append(p)
    except OSError as exc:
        raise ReportIOError(f"cannot write report to {out}: {exc}") from exc
    return written
