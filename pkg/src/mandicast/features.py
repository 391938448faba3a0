"""Snippet feature rows plus the aligned hourly weather blocks.

A curated (Sunday-removed) series is cut into consecutive non-overlapping
blocks of ``n`` days.  Each block becomes one model input row of 16
features; per-day features are averaged over the block while day, month,
year and the cyclic encodings come from the block's first day.  The
prediction target of block k is the mean modal price of block k+1 (the
final block has none).

The hourly weather block of a snippet keeps the 24 hours of each of its n
(non-Sunday) days, so every block has exactly 4 x 24n values regardless of
removed Sundays inside its calendar span.
"""

from __future__ import annotations

import calendar
import csv
import struct
from dataclasses import dataclass, replace
from datetime import date, datetime, time
from pathlib import Path

import numpy as np

from .curate import ObservedSeries, Tag
from .ingest import MandiMeta, WeatherSeries

SNIPPET_LENGTHS = (4, 6, 9, 15, 30)

FEATURE_NAMES = (
    "modal_price",
    "arrival",
    "temperature",
    "precipitation",
    "solar_radiation",
    "humidity",
    "day",
    "month",
    "year",
    "latitude",
    "longitude",
    "day_sin",
    "day_cos",
    "month_sin",
    "month_cos",
    "prev_week_price",
)
PRICE_IDX = 0
CYCLIC_IDX = (11, 12, 13, 14)

WEATHER_BLOCK_MAGIC = b"MCWB"
WEATHER_BLOCK_VERSION = 1


class FeatureError(ValueError):
    pass


def cyclic_encode(x: int, max_x: int) -> tuple[float, float]:
    """(sin, cos) of 2*pi*x/max_x for a 1-based cyclic index."""
    if not 1 <= x <= max_x:
        raise FeatureError(f"cyclic value {x} outside [1, {max_x}]")
    angle = 2.0 * np.pi * x / max_x
    return float(np.sin(angle)), float(np.cos(angle))


def trailing_week_average(series: ObservedSeries, day: date) -> float:
    """Mean of the 7 values preceding ``day`` in the (Sunday-removed) series.

    Fewer than 7 earlier values: mean of what exists; none at all: the
    value at ``day`` itself.
    """
    i = series.index_of(day)
    lo = max(0, i - 7)
    if i == 0:
        return float(series.values[0])
    return float(series.values[lo:i].mean())


@dataclass
class Snippet:
    """One n-day model row: 16 features, the hourly weather block, target."""

    mandi_id: str
    crop: str
    start_date: date
    n: int
    features: np.ndarray        # (16,)
    weather_block: np.ndarray   # (4, 24*n)
    target: float | None        # mean modal price of the next block, Rs
    norm_target: float | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.weather_block = np.asarray(self.weather_block, dtype=np.float64)
        if self.features.shape != (len(FEATURE_NAMES),):
            raise FeatureError(f"expected {len(FEATURE_NAMES)} features, got {self.features.shape}")
        if self.weather_block.shape != (4, 24 * self.n):
            raise FeatureError(
                f"weather block must be (4, {24 * self.n}) for n={self.n}, got {self.weather_block.shape}"
            )


def _day_hours(weather: WeatherSeries, day: date) -> np.ndarray:
    start = weather.hour_index(datetime.combine(day, time(0)))
    if start < 0 or start + 24 > weather.hours:
        raise FeatureError(f"weather for mandi {weather.mandi_id} does not cover {day}")
    return weather.data[:, start:start + 24]


def build_snippets(price: ObservedSeries, arrival: ObservedSeries, weather: WeatherSeries,
                   meta: MandiMeta, n: int) -> list[Snippet]:
    """Cut aligned curated series into n-day snippets with targets."""
    if n not in SNIPPET_LENGTHS:
        raise FeatureError(f"snippet length {n} not in {SNIPPET_LENGTHS}")
    if price.dates != arrival.dates:
        raise FeatureError(f"price/arrival series misaligned for mandi {meta.mandi_id}")
    if np.any(price.tags == Tag.MISSING) or np.any(arrival.tags == Tag.MISSING):
        raise FeatureError("series must be fully curated before snippet building")
    length = len(price)
    blocks = length // n
    if blocks < 2:
        raise FeatureError(
            f"series of {length} days yields {blocks} block(s) at n={n}; need at least 2"
        )

    prev_avgs = np.empty(length)
    for i in range(length):
        prev_avgs[i] = price.values[max(0, i - 7):i].mean() if i else price.values[0]

    snippets: list[Snippet] = []
    for k in range(blocks):
        sel = slice(k * n, (k + 1) * n)
        days = price.dates[sel]
        first = days[0]
        block_weather = np.concatenate([_day_hours(weather, d) for d in days], axis=1)
        day_sin, day_cos = cyclic_encode(first.day, calendar.monthrange(first.year, first.month)[1])
        month_sin, month_cos = cyclic_encode(first.month, 12)
        feats = np.array(
            [
                price.values[sel].mean(),
                arrival.values[sel].mean(),
                block_weather[0].mean(),
                block_weather[1].mean(),
                block_weather[2].mean(),
                block_weather[3].mean(),
                float(first.day),
                float(first.month),
                float(first.year),
                meta.latitude,
                meta.longitude,
                day_sin,
                day_cos,
                month_sin,
                month_cos,
                prev_avgs[sel].mean(),
            ]
        )
        snippets.append(Snippet(meta.mandi_id, price.crop, first, n, feats, block_weather, None))
    for k in range(blocks - 1):
        # exact alignment: the target IS the next block's price feature
        snippets[k].target = float(snippets[k + 1].features[PRICE_IDX])
    return snippets


@dataclass
class NormStats:
    """Min-max ranges fitted on training snippets only.

    Cyclic features pass through unchanged (their range is pinned to
    [0, 1) scale parameters at fit time); constant features get scale 1 so
    they normalize to 0.  Weather ranges are per channel over the hourly
    blocks.
    """

    feature_min: np.ndarray
    feature_scale: np.ndarray
    weather_min: np.ndarray
    weather_scale: np.ndarray

    def normalize_price(self, x: float) -> float:
        return (x - self.feature_min[PRICE_IDX]) / self.feature_scale[PRICE_IDX]

    def denormalize_price(self, y) :
        return y * self.feature_scale[PRICE_IDX] + self.feature_min[PRICE_IDX]


def fit_normalizer(training_snippets: list[Snippet]) -> NormStats:
    if not training_snippets:
        raise FeatureError("cannot fit a normalizer on an empty training set")
    feats = np.stack([s.features for s in training_snippets])
    fmin = feats.min(axis=0)
    fmax = feats.max(axis=0)
    scale = fmax - fmin
    scale[scale == 0.0] = 1.0
    for i in CYCLIC_IDX:
        fmin[i], scale[i] = 0.0, 1.0
    blocks = np.stack([s.weather_block for s in training_snippets])  # (S, 4, 24n)
    wmin = blocks.min(axis=(0, 2))
    wmax = blocks.max(axis=(0, 2))
    wscale = wmax - wmin
    wscale[wscale == 0.0] = 1.0
    return NormStats(fmin, scale, wmin, wscale)


def apply_normalizer(stats: NormStats, snippet: Snippet) -> Snippet:
    """Min-max scale features, weather block and target (no clipping)."""
    feats = (snippet.features - stats.feature_min) / stats.feature_scale
    block = (snippet.weather_block - stats.weather_min[:, None]) / stats.weather_scale[:, None]
    norm_target = None if snippet.target is None else stats.normalize_price(snippet.target)
    return replace(snippet, features=feats, weather_block=block, norm_target=norm_target)


# ---------------------------------------------------------------------------
# exports

SNIPPET_HEADER = ["mandi_id", "crop", "start_date", "n", *FEATURE_NAMES, "target"]


def write_snippets_csv(path: str | Path, snippets: list[Snippet]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SNIPPET_HEADER)
        for s in snippets:
            writer.writerow(
                [s.mandi_id, s.crop, s.start_date.isoformat(), s.n]
                + [repr(float(v)) for v in s.features]
                + ["" if s.target is None else repr(float(s.target))]
            )


def write_weather_blocks(path: str | Path, snippets: list[Snippet]) -> None:
    """Binary tensor (snippet_index, channel, hour), float64 little-endian.

    Layout: magic ``MCWB``, u32 version, u32 count, u32 channels, u32
    hours, then the C-order payload.
    """
    if not snippets:
        raise FeatureError("nothing to write")
    block = np.stack([s.weather_block for s in snippets])
    count, channels, hours = block.shape
    with Path(path).open("wb") as fh:
        fh.write(WEATHER_BLOCK_MAGIC)
        fh.write(struct.pack("<IIII", WEATHER_BLOCK_VERSION, count, channels, hours))
        fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def read_weather_blocks(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != WEATHER_BLOCK_MAGIC:
        raise FeatureError(f"{path}: not a weather block file")
    version, count, channels, hours = struct.unpack("<IIII", raw[4:20])
    if version != WEATHER_BLOCK_VERSION:
        raise FeatureError(f"{path}: unsupported version {version}")
    expected = 20 + count * channels * hours * 8
    if len(raw) != expected:
        raise FeatureError(f"{path}: truncated payload ({len(raw)} bytes, expected {expected})")
    data = np.frombuffer(raw[20:], dtype="<f8").reshape(count, channels, hours)
    return data.astype(np.float64)


def read_snippets_csv(path: str | Path, weather_path: str | Path) -> list[Snippet]:
    blocks = read_weather_blocks(weather_path)
    snippets: list[Snippet] = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != SNIPPET_HEADER:
            raise FeatureError(f"bad snippet header: {header}")
        for i, row in enumerate(reader):
            mandi_id, crop, start_s, n_s = row[:4]
            feats = np.array([float(v) for v in row[4:4 + len(FEATURE_NAMES)]])
            target_s = row[4 + len(FEATURE_NAMES)]
            snippets.append(
                Snippet(
                    mandi_id,
                    crop,
                    date.fromisoformat(start_s),
                    int(n_s),
                    feats,
                    blocks[i],
                    None if target_s == "" else float(target_s),
                )
            )
    if len(snippets) != blocks.shape[0]:
        raise FeatureError(
            f"snippet rows ({len(snippets)}) and weather blocks ({blocks.shape[0]}) disagree"
        )
    return snippets
