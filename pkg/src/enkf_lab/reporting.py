"""Sweep artifacts: ``results.csv``, ``report.json`` and a standalone ``rates.svg``.

results.csv columns (schema version 1)::

    row_type,sweep,epsilon,J,replicate,metric,value,stderr,n

``row_type`` is ``replicate`` (one error at step N for one replicate) or
``aggregate`` (RMS over the cell's replicates, with its standard error).
Empty ``J``/``replicate``/``stderr``/``n`` fields mean "not applicable".
Floats are written with ``repr`` so parsing returns the exact values.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import InsufficientDataError
from .experiments import AggregateRow, SweepReport, fit_rate

SCHEMA_VERSION = 1
CSV_COLUMNS = ["row_type", "sweep", "epsilon", "J", "replicate", "metric", "value", "stderr", "n"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def results_rows(report: SweepReport) -> list[list[str]]:
    rows = []
    for rec in report.records:
        metrics = {"mean_error": rec.mean_error, "cov_error": rec.cov_error, **rec.test_function_errors}
        if rec.d_g is not None:
            metrics["d_g"] = rec.d_g
        if rec.gaussianity_gap is not None and rec.gaussianity_gap.size:
            metrics["gaussianity_gap_max"] = np.array([rec.gaussianity_gap.max()])
        for name, errs in metrics.items():
            rows.append(["replicate", report.kind, _fmt(rec.epsilon), _fmt(rec.J), _fmt(rec.replicate),
                         name, _fmt(errs[-1]), "", ""])
    for a in report.aggregates:
        rows.append(["aggregate", report.kind, _fmt(a.epsilon), _fmt(a.J), "", a.metric,
                     _fmt(a.value), _fmt(a.stderr), _fmt(a.n)])
    return rows


def results_csv(report: SweepReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    writer.writerows(results_rows(report))
    return buf.getvalue()


def read_results(path) -> tuple[str, list[AggregateRow]]:
    """Parse a results.csv; returns the sweep kind and its aggregate rows."""
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != CSV_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
    kind = None
    rows = []
    for r in reader:
        kind = r["sweep"]
        if r["row_type"] != "aggregate":
            continue
        rows.append(AggregateRow(
            float(r["epsilon"]),
            int(r["J"]) if r["J"] else None,
            r["metric"],
            float(r["value"]),
            float(r["stderr"]),
            int(r["n"]),
        ))
    if kind is None:
        raise InsufficientDataError(f"{path}: no rows")
    return kind, rows


def plot_series(kind: str, aggregates: list[AggregateRow]) -> dict[str, list[tuple[float, float]]]:
    """Log-log series to draw: RMS vs J per epsilon (first metric) or d_g vs epsilon."""
    series: dict[str, list[tuple[float, float]]] = {}
    if kind == "j":
        metric = next((a.metric for a in aggregates), None)
        for a in aggregates:
            if a.metric == metric and a.value > 0:
                series.setdefault(f"{metric}, eps={a.epsilon:g}", []).append((float(a.J), a.value))
    else:
        for a in aggregates:
            if a.metric == "d_g" and a.epsilon > 0 and a.value > 0:
                series.setdefault("d_g", []).append((a.epsilon, a.value))
    return series


_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"]


def render_svg(kind: str, aggregates: list[AggregateRow], width: int = 640, height: int = 440) -> str:
    """Self-contained SVG: one circle per sweep cell and a fitted line per series (3+ points)."""
    series = plot_series(kind, aggregates)
    pts = [p for s in series.values() for p in s]
    left, right, top, bottom = 70, 20, 30, 50
    pw, ph = width - left - right, height - top - bottom
    if pts:
        lx = np.log10([p[0] for p in pts])
        ly = np.log10([p[1] for p in pts])
        x0, x1 = lx.min() - 0.1, lx.max() + 0.1
        y0, y1 = ly.min() - 0.1, ly.max() + 0.1
    else:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0

    def sx(x):
        return left + (math.log10(x) - x0) / (x1 - x0) * pw

    def sy(y):
        return top + (y1 - math.log10(y)) / (y1 - y0) * ph

    xlabel = "ensemble size J" if kind == "j" else "epsilon"
    ylabel = "RMS error at step N" if kind == "j" else "d_g(mean-field, true filter) at step N"
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
        f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">{xlabel} (log scale)</text>',
        f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {top + ph / 2:.1f})">{ylabel} (log scale)</text>',
    ]
    for dec in range(math.ceil(x0), math.floor(x1) + 1):
        x = sx(10.0**dec)
        out.append(f'<text x="{x:.1f}" y="{top + ph + 16}" text-anchor="middle">1e{dec}</text>')
    for dec in range(math.ceil(y0), math.floor(y1) + 1):
        y = sy(10.0**dec)
        out.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end">1e{dec}</text>')

    for i, (label, s) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        if len(s) >= 3:
            fit = fit_rate(s)
            xs = [min(p[0] for p in s), max(p[0] for p in s)]
            ys = [math.exp(fit.intercept) * x**fit.slope for x in xs]
            out.append(f'<line x1="{sx(xs[0]):.2f}" y1="{sy(ys[0]):.2f}" x2="{sx(xs[1]):.2f}" '
                       f'y2="{sy(ys[1]):.2f}" stroke="{color}" stroke-dasharray="4 3"/>')
            label = f"{label}: slope {fit.slope:.3f} +/- {fit.stderr:.3f}"
        for x, y in s:
            out.append(f'<circle class="cell" cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="4" fill="{color}"/>')
        out.append(f'<text x="{left + 10}" y="{top + 16 + 16 * i}" fill="{color}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _json_safe(x):
    if isinstance(x, dict):
        return {str(k): _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, np.ndarray):
        return _json_safe(x.tolist())
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def report_json(report: SweepReport, config_doc: dict | None = None, extra: dict | None = None) -> str:
    fits = []
    for f in report.fits:
        d = asdict(f)
        d["in_band"] = f.in_band
        fits.append(d)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "sweep": report.kind,
        "config": config_doc,
        "fits": fits,
        "aggregates": [a._asdict() for a in report.aggregates],
        "metadata": report.metadata,
    }
    if report.kind == "epsilon":
        doc["note"] = "epsilon-rate check tests consistency with an upper bound, not an exact rate"
    if extra:
        doc.update(extra)
    return json.dumps(_json_safe(doc), indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str) -> Path:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def emit_report(report: SweepReport, out_dir, config_doc: dict | None = None,
                extra: dict | None = None) -> list[Path]:
    """Write results.csv, report.json and rates.svg into ``out_dir``; returns their paths."""
    if not report.records:
        raise InsufficientDataError("report has no replicate records")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror or exc}") from exc
    return [
        _write(out / "results.csv", results_csv(report)),
        _write(out / "report.json", report_json(report, config_doc, extra)),
        _write(out / "rates.svg", render_svg(report.kind, report.aggregates)),
    ]
