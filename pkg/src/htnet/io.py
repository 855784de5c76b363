"""CSV/JSON emission with an embedded run configuration.

Every CSV starts with one ``# htnet-config: {...}`` comment line holding
the resolved run configuration, so downstream subcommands (``scale``,
``regulate``) can rebuild the network without a separate config file.
Trailing ``# summary: {...}`` lines carry per-replication diagnostics.
Floats are written with 17 significant digits so they round-trip.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

CONFIG_PREFIX = "# htnet-config: "
SUMMARY_PREFIX = "# summary: "


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, default=_json_default) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


class CsvWriter:
    """Line-oriented writer; use as a context manager."""

    def __init__(self, path, config: dict, columns):
        self.path = Path(path)
        self.config = config
        self.columns = list(columns)
        self._fh = None
        self._summaries = []

    def __enter__(self):
        self._fh = open(self.path, "w", newline="")
        self._fh.write(CONFIG_PREFIX + json.dumps(self.config, sort_keys=True, default=_json_default) + "\n")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(self.columns)
        return self

    def rows(self, rows):
        for row in rows:
            self._writer.writerow([fmt(x) for x in row])

    def summary(self, obj: dict):
        self._summaries.append(obj)

    def __exit__(self, *exc):
        for s in self._summaries:
            self._fh.write(SUMMARY_PREFIX + json.dumps(s, sort_keys=True, default=_json_default) + "\n")
        self._fh.close()
        return False


def read_csv(path) -> tuple[dict, list[str], np.ndarray, list[dict]]:
    """Return ``(config, columns, values, summaries)``; values as a float array."""
    config = {}
    summaries = []
    body = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith(CONFIG_PREFIX):
                config = json.loads(line[len(CONFIG_PREFIX):])
            elif line.startswith(SUMMARY_PREFIX):
                summaries.append(json.loads(line[len(SUMMARY_PREFIX):]))
            elif not line.startswith("#"):
                body.append(line)
    reader = csv.reader(body)
    columns = next(reader)
    data = [[float(x) for x in row] for row in reader if row]
    values = np.array(data, dtype=float).reshape(len(data), len(columns))
    return config, columns, values, summaries


def split_reps(columns: list[str], values: np.ndarray) -> dict[int, np.ndarray]:
    rep = values[:, columns.index("rep")].astype(int)
    return {int(r): values[rep == r] for r in np.unique(rep)}


def column_block(columns: list[str], prefix: str) -> list[int]:
    """Indices of ``prefix_1 .. prefix_d`` in order."""
    idx = []
    i = 1
    while f"{prefix}_{i}" in columns:
        idx.append(columns.index(f"{prefix}_{i}"))
        i += 1
    return idx
