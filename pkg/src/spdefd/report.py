"""Writing convergence reports as CSV, JSON or gnuplot data.

Output is a pure function of the report: floats are printed with ``repr``
and JSON keys are sorted, so equal reports give equal bytes.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict
from pathlib import Path

COLUMNS = ("level", "h", "tau", "R", "mse", "rmse", "stderr", "samples")
FORMATS = ("csv", "json", "gnuplot-dat")
SUFFIX = {"csv": ".csv", "json": ".json", "gnuplot-dat": ".dat"}


def _num(v):
    if isinstance(v, bool) or v is None:
        return str(v)
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def _log(v):
    v = float(v)
    return repr(math.log10(v)) if v > 0 and math.isfinite(v) else "nan"


def _clean(obj):
    """JSON-safe copy: non-finite floats become strings, tuples become lists."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if hasattr(obj, "item") and callable(obj.item):
        return _clean(obj.item())
    return obj


def to_csv(report):
    lines = [",".join(COLUMNS)]
    for row in report.rows:
        lines.append(",".join(_num(getattr(row, c)) for c in COLUMNS))
    return "\n".join(lines) + "\n"


def to_json(report):
    doc = {
        "kind": report.kind,
        "columns": list(COLUMNS),
        "rows": [asdict(r) for r in report.rows],
        "fit": report.fit,
        "metadata": report.metadata,
    }
    return json.dumps(_clean(doc), sort_keys=True, indent=2) + "\n"


def to_gnuplot(report):
    """Whitespace-separated columns with log10 of the abscissa and of the errors."""
    xname = {"space": "h", "time": "tau", "localization": "R"}.get(report.kind, "h")
    head = f"# kind={report.kind} x={xname}\n# level {xname} log10_{xname} mse log10_mse rmse log10_rmse stderr samples\n"
    lines = []
    for r in report.rows:
        x = getattr(r, xname)
        lx = repr(float(x) ** 2) if xname == "R" else _log(x)
        lines.append(" ".join([
            str(r.level), _num(x), lx, _num(r.mse), _log(r.mse),
            _num(r.rmse), _log(r.rmse), _num(r.stderr), str(r.samples),
        ]))
    if xname == "R":
        head = head.replace(f"log10_{xname}", "R^2")
    return head + "".join(line + "\n" for line in lines)


RENDER = {"csv": to_csv, "json": to_json, "gnuplot-dat": to_gnuplot}


def render(report, fmt):
    if fmt not in RENDER:
        raise ValueError(f"unknown format {fmt!r}; choose from {', '.join(FORMATS)}")
    return RENDER[fmt](report)


def emit(report, fmt, out_dir, stem=None):
    """Write one file to ``out_dir``; returns its path.  I/O failures propagate as OSError."""
    text = render(report, fmt)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{stem or report.kind}{SUFFIX[fmt]}"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def field_csv(grid, values):
    """Dump of a single field: coordinates then value, one point per line."""
    pts = grid.points
    names = [f"x{i + 1}" for i in range(pts.shape[1])]
    lines = [",".join(names + ["value"])]
    for p, v in zip(pts, values):
        lines.append(",".join([repr(float(c)) for c in p] + [repr(float(v))]))
    return "\n".join(lines) + "\n"
