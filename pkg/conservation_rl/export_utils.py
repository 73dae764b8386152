"""
Artifact writers: CSV and XLSX tables, run manifests.

Every file is written next to its destination and renamed into place, so
an interrupted command never leaves a half-written artifact.
"""
from __future__ import annotations

import csv
import json
import os
from typing import Any

import numpy as np
import pandas as pd

from . import __version__
from .errors import ConfigurationError
from .helpers import atomic_write, git_revision, log_event
from .time_utils import utc_timestamp

FORMATS = ("csv", "xlsx")


def _cell(value: Any) -> Any:
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


def write_csv(frame: pd.DataFrame, path: str | os.PathLike) -> None:
    """Header plus one row per record; floats use their shortest round-trip repr."""
    fieldnames = [str(c) for c in frame.columns]
    with atomic_write(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames)
        writer.writeheader()
        for record in frame.to_dict(orient="records"):
            writer.writerow({str(k): _cell(v) for k, v in record.items()})


def write_xlsx(frame: pd.DataFrame, path: str | os.PathLike, sheet: str = "Results") -> None:
    from openpyxl import Workbook

    wb = Workbook()
    ws = wb.active
    ws.title = sheet[:31]
    headers = [str(c) for c in frame.columns]
    ws.append(headers)
    for row in frame.itertuples(index=False):
        ws.append([None if (isinstance(v, float) and not np.isfinite(v)) else
                   (v.item() if isinstance(v, np.generic) else v) for v in row])
    with atomic_write(path, "wb") as handle:
        wb.save(handle)


def write_frame(frame: pd.DataFrame, path: str | os.PathLike, fmt: str = "csv") -> str:
    """Write `frame` as CSV or XLSX; returns the path written."""
    fmt = (fmt or "csv").lower()
    if fmt not in FORMATS:
        raise ConfigurationError(f"unsupported output format {fmt!r}; choose one of {', '.join(FORMATS)}")
    path = os.fspath(path)
    root, ext = os.path.splitext(path)
    if ext.lower() != f".{fmt}":
        path = f"{root}.{fmt}"
    if fmt == "csv":
        write_csv(frame, path)
    else:
        write_xlsx(frame, path, sheet=os.path.basename(root))
    log_event("artifact_written", path=path, rows=len(frame), format=fmt)
    return path


def write_manifest(directory: str | os.PathLike, *, command: str, seed: int | None, config_hash: str,
                   config: dict | None = None, outputs: list[str] | None = None) -> str:
    """manifest.json recording how the artifacts in `directory` were produced."""
    payload = {
        "command": command,
        "seed": seed,
        "config_hash": config_hash,
        "created_at": utc_timestamp(),
        "version": __version__,
        "git_revision": git_revision(),
        "outputs": sorted(os.path.basename(p) for p in (outputs or [])),
        "config": config or {},
    }
    path = os.path.join(os.fspath(directory), "manifest.json")
    with atomic_write(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True, default=str)
        handle.write("\n")
    return path
