"""Price series to period-grouped quarterly return samples.

Input prices are CSV rows ``date,area,price`` (ISO dates). For each area the
monthly rolling median of sale prices is taken over a trailing window, read
off at quarter ends, and turned into percentage growth between consecutive
quarters.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from datetime import date
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .core import ModelError

logger = logging.getLogger(__name__)

GROUPING_KINDS = ("quarterly", "annual", "terms")
QUARTER_END_MONTHS = (3, 6, 9, 12)


class InputError(ModelError):
    pass


class InsufficientHistory(UserWarning):
    pass


class UnsortedTermWindows(ModelError):
    pass


# "mid-year" boundaries are July 1; each window is [start, end)
DEFAULT_TERMS = (
    ("Pre Crash", date(2006, 7, 1), date(2008, 1, 1)),
    ("Crash", date(2008, 1, 1), date(2009, 1, 1)),
    ("Recovery 1", date(2009, 1, 1), date(2011, 7, 1)),
    ("Small Crash", date(2011, 7, 1), date(2012, 7, 1)),
    ("Recovery 2", date(2012, 7, 1), date(2018, 7, 1)),
    ("Recent Crash", date(2018, 7, 1), date(2021, 1, 1)),
)


@dataclass(frozen=True)
class PriceRecord:
    date: date
    area: str
    price: float

    def __post_init__(self):
        if not self.price > 0:
            raise InputError(f"price must be positive, got {self.price}")


@dataclass(frozen=True)
class PeriodGrouping:
    kind: str
    terms: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in GROUPING_KINDS:
            raise ModelError(f"grouping must be one of {GROUPING_KINDS}")
        if self.kind == "terms":
            terms = tuple((str(label), _as_date(start), _as_date(end))
                          for label, start, end in (self.terms or DEFAULT_TERMS))
            for label, start, end in terms:
                if not start < end:
                    raise UnsortedTermWindows(f"term {label!r} ends before it starts")
            for (l1, _, e1), (l2, s2, _) in zip(terms, terms[1:]):
                if s2 < e1:
                    raise UnsortedTermWindows(f"term {l2!r} starts before {l1!r} ends")
            object.__setattr__(self, "terms", terms)

    @classmethod
    def from_config(cls, kind: str, terms: Optional[Sequence] = None) -> "PeriodGrouping":
        """``terms`` entries are ``{"label", "start", "end"}`` mappings or triples."""
        if terms is not None:
            terms = tuple((t["label"], t["start"], t["end"]) if isinstance(t, dict) else tuple(t)
                          for t in terms)
        return cls(kind, terms)


def _as_date(value) -> date:
    if isinstance(value, date):
        return value
    return date.fromisoformat(str(value))


def records_frame(records) -> pd.DataFrame:
    """Normalize ``PriceRecord`` objects or a DataFrame into ``date, area, price`` columns."""
    if isinstance(records, pd.DataFrame):
        df = records.loc[:, ["date", "area", "price"]].copy()
    else:
        df = pd.DataFrame([(r.date, r.area, r.price) for r in records], columns=["date", "area", "price"])
    df["date"] = pd.to_datetime(df["date"], format="ISO8601")
    df["area"] = df["area"].astype(str)
    df["price"] = df["price"].astype(float)
    if (df["price"] <= 0).any() or df["price"].isna().any():
        raise InputError("prices must be positive")
    return df


def read_prices(path) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype={"area": str}, encoding="utf-8")
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise InputError(f"cannot parse {path}: {exc}") from exc
    missing = {"date", "area", "price"} - set(df.columns)
    if missing:
        raise InputError(f"{path} is missing columns {sorted(missing)}")
    try:
        return records_frame(df)
    except (ValueError, TypeError) as exc:
        raise InputError(f"{path}: {exc}") from exc


def read_returns(path) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype={"area": str}, encoding="utf-8")
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise InputError(f"cannot parse {path}: {exc}") from exc
    missing = {"date", "area", "return"} - set(df.columns)
    if missing:
        raise InputError(f"{path} is missing columns {sorted(missing)}")
    try:
        df = df.loc[:, ["date", "area", "return"]].copy()
        df["date"] = pd.to_datetime(df["date"], format="ISO8601")
        df["area"] = df["area"].astype(str)
        df["return"] = df["return"].astype(float)
    except (ValueError, TypeError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    return df


def _area_returns(prices: pd.DataFrame, window: int) -> pd.DataFrame:
    months = prices["date"].dt.to_period("M")
    by_month = {m: g.to_numpy() for m, g in prices["price"].groupby(months)}
    first, last = min(by_month), max(by_month)
    rows = []
    for m in pd.period_range(first, last, freq="M"):
        if m.month not in QUARTER_END_MONTHS:
            continue
        pooled = [by_month[m - k] for k in range(window) if (m - k) in by_month]
        median = float(np.median(np.concatenate(pooled))) if pooled else np.nan
        rows.append((m.to_timestamp(how="end").normalize(), median))
    q = pd.DataFrame(rows, columns=["date", "median"])
    prev = q["median"].shift(1)
    q["return"] = 100.0 * (q["median"] - prev) / prev
    # a missing quarter median leaves NaN on both sides of the gap
    return q.dropna(subset=["return"])


def compute_returns(records, median_window: int = 3) -> pd.DataFrame:
    """Quarterly percentage returns per area, columns ``date, area, return``.

    ``date`` is the quarter-end date. Areas with fewer than two quarters of
    usable medians are dropped with an :class:`InsufficientHistory` warning.
    """
    if median_window < 1:
        raise ModelError("median window must be at least one month")
    df = records_frame(records)
    frames = []
    for area, prices in df.groupby("area", sort=True):
        r = _area_returns(prices, median_window)
        if r.empty:
            warnings.warn(f"area {area!r} has fewer than two usable quarters; dropped", InsufficientHistory)
            continue
        r.insert(1, "area", area)
        frames.append(r[["date", "area", "return"]])
    if not frames:
        return pd.DataFrame({"date": pd.Series(dtype="datetime64[ns]"),
                             "area": pd.Series(dtype=str), "return": pd.Series(dtype=float)})
    out = pd.concat(frames, ignore_index=True)
    return out.sort_values(["date", "area"], kind="mergesort").reset_index(drop=True)


def period_labels(dates: pd.Series, grouping: PeriodGrouping) -> pd.Series:
    """Label every date with its period; dates outside all terms get ``None``."""
    if grouping.kind == "quarterly":
        return dates.dt.to_period("Q").astype(str)
    if grouping.kind == "annual":
        return dates.dt.year.astype(str)
    labels = pd.Series([None] * len(dates), index=dates.index, dtype=object)
    for label, start, end in grouping.terms:
        mask = (dates >= pd.Timestamp(start)) & (dates < pd.Timestamp(end))
        labels[mask] = label
    return labels


def group_periods(returns: pd.DataFrame, grouping: PeriodGrouping) -> list[tuple[str, np.ndarray]]:
    """Split returns into chronologically ordered ``(label, samples)`` periods.

    Term windows are half-open, so a return dated on a boundary goes to the
    later term. Returns outside every term are dropped with a warning.
    """
    if returns is None or len(returns) == 0:
        raise ModelError("no returns to group")
    df = returns.sort_values(["date", "area"], kind="mergesort")
    labels = period_labels(df["date"], grouping)
    outside = labels.isna()
    if outside.any():
        warnings.warn(f"{int(outside.sum())} returns fall outside every term window and are dropped")
    df = df.assign(period=labels)[~outside]
    if grouping.kind == "terms":
        order = [t[0] for t in grouping.terms]
    else:
        order = list(dict.fromkeys(df["period"]))
    groups = []
    for label in order:
        samples = df.loc[df["period"] == label, "return"].to_numpy()
        if samples.size == 0:
            warnings.warn(f"period {label!r} is empty and is dropped")
            continue
        groups.append((label, samples))
    return groups


def synthetic_prices(n_areas: int = 20, start: str = "2005-01-01", end: str = "2020-12-31",
                     sales_per_month: int = 6, seed: int = 0) -> pd.DataFrame:
    """Fixture generator: sale prices following a shared regime-switching growth path plus area noise."""
    rng = np.random.default_rng(seed)
    months = pd.period_range(start, end, freq="M")
    t = np.arange(len(months))
    market = 0.006 + 0.012 * np.sin(2 * np.pi * t / 60.0)
    rows = []
    for a in range(n_areas):
        level = np.log(rng.uniform(4e5, 1.2e6))
        drift = rng.normal(0, 0.002)
        for m, g in zip(months, market):
            level += g + drift + rng.normal(0, 0.01)
            days = rng.integers(1, m.days_in_month + 1, size=sales_per_month)
            prices = np.exp(level + rng.normal(0, 0.05, size=sales_per_month))
            for d, p in zip(days, prices):
                rows.append((date(m.year, m.month, int(d)).isoformat(), f"area{a:03d}", round(float(p), 2)))
    return pd.DataFrame(rows, columns=["date", "area", "price"])
