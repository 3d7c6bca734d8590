"""Deterministic writers for tables and summaries.

Every file starts with the library version and the hash of the resolved
configuration; nothing time-dependent is written, so identical runs give
identical bytes.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

from . import __version__


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


class Writer:
    def __init__(self, out_dir: str, digest: str, fmt: str = "csv"):
        self.out_dir = out_dir
        self.digest = digest
        self.fmt = fmt
        self.written: list[str] = []
        os.makedirs(out_dir, exist_ok=True)

    def _path(self, name: str) -> str:
        path = os.path.join(self.out_dir, name)
        self.written.append(path)
        return path

    def table(self, stem: str, columns: list[str], rows) -> str:
        """Write rows as CSV (``#`` header lines) or as JSON records, per the format."""
        rows = [list(r) for r in rows]
        if self.fmt == "json":
            records = [dict(zip(columns, r)) for r in rows]
            return self.summary(stem, {"columns": columns, "rows": records})
        path = self._path(stem + ".csv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# periodic-engine {__version__}\n# config-sha256 {self.digest}\n")
            fh.write(",".join(columns) + "\n")
            for r in rows:
                fh.write(",".join(_fmt(x) for x in r) + "\n")
        return path

    def summary(self, stem: str, data: dict) -> str:
        path = self._path(stem + ".json")
        doc = {"meta": {"version": __version__, "config_sha256": self.digest}, **_clean(data)}
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=False)
            fh.write("\n")
        return path
