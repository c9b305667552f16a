"""Writing a :class:`RunReport` to a directory: report.json, checks.csv and plot-ready data files."""

from __future__ import annotations

import csv
import json
import os

from .errors import LeafwiseError


class ReportIOError(LeafwiseError, OSError):
    def __init__(self, path, message: str):
        super().__init__(f"{path}: {message}")
        self.path = str(path)


def _write(path: str, writer_fn) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer_fn(fh)
    except OSError as exc:
        raise ReportIOError(path, exc.strerror or str(exc)) from exc


def emit_report(report, directory, overwrite: bool = False) -> list:
    """Write all artifacts of ``report`` into ``directory``; returns the written paths.

    Refuses to touch a directory that already holds a report.json unless
    ``overwrite`` is set.
    """
    directory = str(directory)
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise ReportIOError(directory, exc.strerror or str(exc)) from exc
    main = os.path.join(directory, "report.json")
    if os.path.exists(main) and not overwrite:
        raise ReportIOError(main, "already exists; pass --overwrite to replace it")
    written = []

    def table(name, header, rows):
        path = os.path.join(directory, name)

        def fill(fh):
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        _write(path, fill)
        written.append(path)

    def document(name, doc):
        path = os.path.join(directory, name)
        _write(path, lambda fh: fh.write(json.dumps(doc, indent=2, sort_keys=False) + "\n"))
        written.append(path)

    table("checks.csv", ["name", "value", "tolerance", "flag", "passed"],
          [[c["name"], c["value"], c["tolerance"], c["flag"], "" if c["passed"] is None else c["passed"]]
           for c in (chk.to_dict() for chk in report.checks)])
    for name, (header, rows) in sorted(report.tables.items()):
        table(name, header, rows)
    for name, doc in sorted(report.documents.items()):
        document(name, doc)
    document("report.json", report.to_dict())
    return written
