"""
Utility functions shared across conservation_rl.

This module holds the structured-logging helper used by every command and
long-running routine, atomic file writes for artifacts, configuration hashing
and seed derivation.  Centralizing them here keeps the simulation modules
free of I/O concerns and avoids circular imports.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import subprocess
import tempfile
from contextlib import contextmanager
from typing import Any, Iterator

import numpy as np

LOGGER_NAME = "conservation_rl"
logger = logging.getLogger(LOGGER_NAME)

_settings = {"json": True}


def configure_logging(level: str = "INFO", json_format: bool = True) -> logging.Logger:
    """Configure the package logger once per process.

    Args:
        level: Logging level name (e.g. "INFO", "DEBUG").
        json_format: Emit events as JSON payloads instead of key=value lines.
    """
    log_level = getattr(logging, str(level).upper(), logging.INFO)
    logger.setLevel(log_level)
    _settings["json"] = bool(json_format)
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s %(message)s"))
        logger.addHandler(handler)
    return logger


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


def log_event(event: str, *, level: int = logging.INFO, exc_info: bool = False, **fields: Any) -> None:
    """Record a structured event.

    With JSON logging enabled (the default) the event is a single JSON object
    `{"event": ..., **fields}`; otherwise a `event key=value ...` line.
    """
    if not logger.isEnabledFor(level):
        return
    payload = {"event": event, **{k: _jsonable(v) for k, v in fields.items()}}
    if _settings["json"]:
        message = json.dumps(payload, default=str)
    else:
        message = " ".join([event] + [f"{k}={v}" for k, v in payload.items() if k != "event"])
    logger.log(level, message, exc_info=exc_info)


@contextmanager
def atomic_write(path: str | os.PathLike, mode: str = "w", **open_kwargs: Any) -> Iterator[Any]:
    """Write to a temporary file next to `path`, then rename it into place."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, mode, **open_kwargs) as handle:
            yield handle
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def config_hash(payload: dict) -> str:
    """SHA-256 of the canonical JSON dump of a configuration mapping."""
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def git_revision(cwd: str | None = None) -> str | None:
    """Best-effort git revision of the working tree, None outside a checkout."""
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            cwd=cwd or os.getcwd(),
            check=True,
            capture_output=True,
            text=True,
            timeout=5,
        )
    except Exception:
        return None
    return out.stdout.strip() or None


def spawn_rngs(seed: int, count: int) -> list[np.random.Generator]:
    """Independent generators derived from one seed (SeedSequence spawning)."""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [np.random.default_rng(child) for child in children]
