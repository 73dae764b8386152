"""
Stock-assessment series and quota recommendations.

A stock series is a CSV with header `year,biomass,catch` in assessment
units.  `K_estimate` maps those units onto the fishery model, where the
carrying capacity is `model_K` (1 by default): biomass equal to
0.5 * K_estimate is observation 0.5.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .decision_process import Policy
from .errors import SimulationError, StockSeriesError
from .helpers import atomic_write, log_event

REQUIRED_COLUMNS = ("year", "biomass", "catch")


@dataclass(frozen=True)
class StockSeries:
    years: np.ndarray
    biomass: np.ndarray
    catch: np.ndarray
    k_estimate: float

    def __len__(self) -> int:
        return int(self.years.size)

    def normalized_biomass(self, model_K: float = 1.0) -> np.ndarray:
        return self.biomass / self.k_estimate * model_K

    def normalized_catch(self, model_K: float = 1.0) -> np.ndarray:
        return self.catch / self.k_estimate * model_K

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"year": self.years, "biomass": self.biomass, "catch": self.catch})

    def to_csv(self, path: str | os.PathLike) -> None:
        with atomic_write(path, "w", newline="", encoding="utf-8") as handle:
            self.to_frame().to_csv(handle, index=False, float_format="%.17g")


def _numeric_column(frame: pd.DataFrame, column: str) -> np.ndarray:
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = np.flatnonzero(values.isna().to_numpy())
    if bad.size:
        raise StockSeriesError(f"value {frame[column].iloc[bad[0]]!r} is not a number", row=int(bad[0]) + 1, column=column)
    return values.to_numpy(dtype=np.float64)


def ingest_stock_series(path: str | os.PathLike, k_estimate: float) -> StockSeries:
    """Read and validate a stock-assessment CSV.

    Row numbers in errors count data rows from 1 (the header is not a row).
    """
    if not (np.isfinite(k_estimate) and k_estimate > 0):
        raise StockSeriesError(f"K_estimate must be positive, got {k_estimate}")
    try:
        frame = pd.read_csv(path, dtype=str, skipinitialspace=True)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        raise StockSeriesError(f"cannot parse stock series {os.fspath(path)}: {exc}") from exc
    frame.columns = [str(c).strip().lower() for c in frame.columns]
    for column in REQUIRED_COLUMNS:
        if column not in frame.columns:
            raise StockSeriesError(f"missing required column '{column}' in {os.fspath(path)}", column=column)
    if frame.empty:
        raise StockSeriesError(f"stock series {os.fspath(path)} has no data rows")

    years_raw = _numeric_column(frame, "year")
    non_integer = np.flatnonzero(years_raw != np.round(years_raw))
    if non_integer.size:
        raise StockSeriesError(f"year {years_raw[non_integer[0]]} is not an integer",
                               row=int(non_integer[0]) + 1, column="year")
    years = years_raw.astype(np.int64)
    biomass = _numeric_column(frame, "biomass")
    catch = _numeric_column(frame, "catch")

    for column, values in (("biomass", biomass), ("catch", catch)):
        bad = np.flatnonzero((values < 0) | ~np.isfinite(values))
        if bad.size:
            raise StockSeriesError(f"{column} must be finite and non-negative, got {values[bad[0]]}",
                                   row=int(bad[0]) + 1, column=column)
    steps = np.flatnonzero(np.diff(years) <= 0)
    if steps.size:
        row = int(steps[0]) + 2
        raise StockSeriesError(
            f"years must be strictly increasing, {years[row - 1]} follows {years[row - 2]}", row=row, column="year"
        )
    return StockSeries(years=years, biomass=biomass, catch=catch, k_estimate=float(k_estimate))


def recommend_quotas(policy: Policy, series: StockSeries, model_K: float = 1.0) -> pd.DataFrame:
    """Per-year policy query: quota = policy(normalized biomass) in assessment units.

    No dynamics are simulated.  Observations outside [0, 2 model_K] are
    clipped with a warning.
    """
    observations = series.normalized_biomass(model_K)
    upper = 2.0 * model_K
    quotas = np.empty(len(series))
    for i, (year, obs) in enumerate(zip(series.years, observations)):
        if not 0.0 <= obs <= upper:
            clipped = float(np.clip(obs, 0.0, upper))
            log_event("observation_clipped", level=logging.WARNING, year=int(year), observation=float(obs), clipped=clipped)
            obs = clipped
        action = float(np.asarray(policy(np.array([obs])), dtype=np.float64).reshape(-1)[0])
        if not np.isfinite(action):
            raise SimulationError(f"policy returned non-finite quota for year {int(year)}", step=i)
        quotas[i] = max(action, 0.0) / model_K * series.k_estimate
    return pd.DataFrame({
        "year": series.years,
        "biomass": series.biomass,
        "historical_catch": series.catch,
        "recommended_quota": quotas,
    })
