"""Deterministic JSON / CSV / aligned-text output."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def format_table(header, rows, floatfmt: str = ".4f") -> str:
    cells = [[str(h) for h in header]]
    for row in rows:
        cells.append([format(v, floatfmt) if isinstance(v, float) else str(v) for v in row])
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) if j else c.ljust(w) for j, (c, w) in enumerate(zip(r, widths)))
                     for r in cells) + "\n"


def write_report(results: dict, out, table: tuple | None = None, echo=print) -> list[Path]:
    """Write ``results`` as JSON and, when given, ``table=(header, rows)`` as CSV.

    Files share the stem of ``out``; written paths are echoed.
    """
    stem = str(out)
    for ext in (".json", ".csv"):
        if stem.endswith(ext):
            stem = stem[: -len(ext)]
    paths = [Path(stem + ".json")]
    paths[0].write_text(to_json(results), encoding="utf-8")
    if table is not None:
        paths.append(Path(stem + ".csv"))
        paths[1].write_text(to_csv(*table), encoding="utf-8")
    for p in paths:
        echo(f"wrote {p}")
    return paths
