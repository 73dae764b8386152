"""Time helpers for manifests and trial timing."""

import time
from datetime import datetime, timezone


def utcnow() -> datetime:
    """Return an aware UTC datetime."""
    return datetime.now(timezone.utc)


def utc_timestamp() -> str:
    """ISO-8601 UTC timestamp for run manifests."""
    return utcnow().isoformat(timespec="seconds")


def elapsed_ms(start: float) -> int:
    """Milliseconds since a `time.perf_counter()` reading."""
    return int((time.perf_counter() - start) * 1000)
