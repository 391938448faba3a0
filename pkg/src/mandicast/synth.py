"""Synthetic desk-scale market scenario in the raw ingest formats.

Prices combine a shared seasonal curve, a regional latent factor,
propagating local shocks and independent observation noise.  The regional
factor follows a spatial diffusion: each day a mandi's latent level
relaxes toward the mean of its neighbors within the correlation length
while receiving its own random shock.  On top of that, produce-movement
style waves travel outward: a shock at one mandi reaches its neighbors a
day later, their neighbors a day after that, with decaying amplitude.
Neighboring mandis therefore share genuinely correlated price series, and
a model that can observe its neighbors sees incoming waves before they
arrive -- information a mandi's own history simply does not contain.

The generator also injects data-entry style misreports (value x10 or /10
on random days) and random missingness, and logs the injected misreports
so curation recall can be measured against ground truth.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date, datetime, time, timedelta
from pathlib import Path

import numpy as np

from .geograph import pairwise_distances_km
from .ingest import (
    MandiMeta,
    RawPriceRecord,
    WeatherSeries,
    write_mandi_csv,
    write_price_csv,
    write_weather_csv,
)

# diffusion dynamics of the regional factor
DIFFUSION_RHO = 0.992       # day-to-day persistence
DIFFUSION_ALPHA = 0.6       # pull toward the neighborhood mean
BURN_IN_DAYS = 200

# outward wave propagation: events replay at k-hop neighbors k*WAVE_HOP_LAG
# days later, attenuated per hop, each arrival lasting WAVE_PROFILE days
WAVE_HOP_GAIN = (1.0, 0.8, 0.55, 0.3)
WAVE_HOP_LAG = 4            # days of travel per graph hop
WAVE_EVENT_RATE = 0.02      # per mandi per day
WAVE_PROFILE = (1.0, 1.0, 0.85, 0.65, 0.45, 0.25)

MISREPORT_LOG_HEADER = ["mandi_id", "crop", "date", "original_value", "injected_value"]


@dataclass(frozen=True)
class SyntheticSpec:
    """Scenario knobs; defaults give the standard 30-mandi desk scenario."""

    n_mandis: int = 30
    seed: int = 0
    correlation_km: float = 200.0
    seasonal_amplitude: float = 800.0
    regional_shock_std: float = 15.0
    wave_shock_std: float = 85.0
    noise_level: float = 10.0
    years: tuple[int, int] = (2014, 2018)
    missing_rate: float = 0.25
    misreport_rate: float = 0.01
    crop: str = "tomato"
    base_price: float = 2400.0

    def __post_init__(self):
        if self.n_mandis < 2:
            raise ValueError("need at least 2 mandis")
        if self.correlation_km <= 0:
            raise ValueError("correlation length must be positive")
        if self.years[1] < self.years[0]:
            raise ValueError("years range reversed")


@dataclass(frozen=True)
class SynthPaths:
    mandis: Path
    prices: Path
    weather: Path
    misreports: Path


def _layout(spec: SyntheticSpec, rng: np.random.Generator) -> list[MandiMeta]:
    # roughly a 1000 x 1000 km box over central India
    lat = rng.uniform(18.0, 27.0, size=spec.n_mandis)
    lon = rng.uniform(75.0, 85.4, size=spec.n_mandis)
    return [
        MandiMeta(f"M{i:03d}", f"Mandi {i:03d}", float(lat[i]), float(lon[i]))
        for i in range(spec.n_mandis)
    ]


def _neighbor_mean_op(spec: SyntheticSpec, mandis: list[MandiMeta]) -> np.ndarray:
    d = pairwise_distances_km(mandis)
    adj = (d <= spec.correlation_km) & ~np.eye(len(mandis), dtype=bool)
    deg = adj.sum(axis=1)
    return np.where(deg[:, None] > 0, adj / np.maximum(deg, 1)[:, None], 0.0)


def _regional_factor(spec: SyntheticSpec, rng: np.random.Generator,
                     mean_op: np.ndarray, n_days: int) -> np.ndarray:
    """Diffusion latent, shape (n_mandis, n_days)."""
    n = mean_op.shape[0]
    mix = DIFFUSION_RHO * ((1.0 - DIFFUSION_ALPHA) * np.eye(n) + DIFFUSION_ALPHA * mean_op)
    # isolated nodes keep plain AR dynamics
    iso = mean_op.sum(axis=1) == 0
    mix[iso] = 0.0
    mix[iso, iso] = DIFFUSION_RHO
    w = rng.normal(0.0, spec.regional_shock_std * 3.0, size=n)
    out = np.empty((n, n_days))
    shocks = rng.normal(0.0, spec.regional_shock_std, size=(BURN_IN_DAYS + n_days, n))
    for t in range(BURN_IN_DAYS + n_days):
        w = mix @ w + shocks[t]
        if t >= BURN_IN_DAYS:
            out[:, t - BURN_IN_DAYS] = w
    return out


def _hop_masks(mean_op: np.ndarray) -> list[np.ndarray]:
    """Boolean reach masks per graph hop (0 = self) up to the wave range."""
    n = mean_op.shape[0]
    adj = mean_op > 0
    masks = [np.eye(n, dtype=bool)]
    reached = masks[0].copy()
    for _ in WAVE_HOP_GAIN[1:]:
        frontier = (masks[-1] @ adj) & ~reached
        masks.append(frontier)
        reached |= frontier
    return masks


def _wave_factor(spec: SyntheticSpec, rng: np.random.Generator,
                 mean_op: np.ndarray, n_days: int) -> np.ndarray:
    """Produce-movement waves moving outward from event epicenters."""
    n = mean_op.shape[0]
    masks = _hop_masks(mean_op)
    events = rng.normal(0.0, spec.wave_shock_std, size=(n_days, n))
    events *= rng.random((n_days, n)) < WAVE_EVENT_RATE
    out = np.zeros((n, n_days))
    for k, gain in enumerate(WAVE_HOP_GAIN):
        spread = gain * (events @ masks[k].T).T         # (n, n_days), at the epicenter day
        for i, weight in enumerate(WAVE_PROFILE):
            delay = k * WAVE_HOP_LAG + i
            if delay == 0:
                out += weight * spread
            elif delay < n_days:
                out[:, delay:] += weight * spread[:, :-delay]
    return out


def _seasonal_curve(spec: SyntheticSpec, rng: np.random.Generator, days: list[date]) -> np.ndarray:
    doy = np.array([d.timetuple().tm_yday for d in days], dtype=np.float64)
    phase1, phase2 = rng.uniform(0.0, 2.0 * np.pi, size=2)
    curve = spec.seasonal_amplitude * np.sin(2.0 * np.pi * doy / 365.25 + phase1)
    curve += 0.35 * spec.seasonal_amplitude * np.sin(4.0 * np.pi * doy / 365.25 + phase2)
    return curve


def _weather_series(spec: SyntheticSpec, rng: np.random.Generator, mandi: MandiMeta,
                    start: datetime, hours: int) -> WeatherSeries:
    h = np.arange(hours)
    day_frac = h / 24.0
    doy = np.array(
        [(start + timedelta(hours=int(i))).timetuple().tm_yday for i in h[::24]], dtype=np.float64
    ).repeat(24)[:hours]
    hod = h % 24
    season = np.sin(2.0 * np.pi * (doy - 105.0) / 365.25)
    monsoon = np.exp(-(((doy - 200.0) / 35.0) ** 2))
    temp = (
        24.0
        + 7.0 * season
        - 0.4 * (mandi.latitude - 22.0)
        + 5.5 * np.sin(2.0 * np.pi * (hod - 8.0) / 24.0)
        + rng.normal(0.0, 0.6, size=hours)
    )
    rain_draw = rng.gamma(0.5, 1.0, size=hours) - 0.55
    precip = np.maximum(0.0, (2.2 * monsoon + 0.12) * rain_draw)
    sun = np.maximum(0.0, np.sin(np.pi * (hod - 6.0) / 12.0))
    solar = 650.0 * sun * (0.85 + 0.15 * season) * (1.0 - 0.3 * np.minimum(precip, 1.0))
    solar = np.maximum(0.0, solar + rng.normal(0.0, 8.0, size=hours) * sun)
    humidity = np.clip(
        68.0 - 1.1 * (temp - 24.0) + 18.0 * monsoon + rng.normal(0.0, 2.0, size=hours), 15.0, 100.0
    )
    del day_frac
    return WeatherSeries(mandi.mandi_id, start, np.stack([temp, precip, solar, humidity]))


def generate(spec: SyntheticSpec, out_dir: str | Path) -> SynthPaths:
    """Write mandi metadata, price/arrival, weather and misreport-log CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    mandis = _layout(spec, rng)
    start_day = date(spec.years[0], 1, 1)
    end_day = date(spec.years[1], 12, 31)
    n_days = (end_day - start_day).days + 1
    days = [start_day + timedelta(days=i) for i in range(n_days)]

    seasonal = _seasonal_curve(spec, rng, days)
    mean_op = _neighbor_mean_op(spec, mandis)
    regional = _regional_factor(spec, rng, mean_op, n_days)
    waves = _wave_factor(spec, rng, mean_op, n_days)
    clean = np.maximum(50.0, spec.base_price + seasonal[None, :] + regional + waves)
    observed = clean + rng.normal(0.0, spec.noise_level, size=clean.shape)
    observed = np.maximum(50.0, observed)

    arr_phase = rng.uniform(0.0, 2.0 * np.pi, size=spec.n_mandis)
    doy = np.array([d.timetuple().tm_yday for d in days], dtype=np.float64)
    arrivals = (
        55.0
        + 18.0 * np.sin(2.0 * np.pi * doy[None, :] / 365.25 + arr_phase[:, None])
        + rng.normal(0.0, 3.0, size=clean.shape)
    )
    arrivals = np.maximum(0.5, arrivals)

    price_missing = rng.random(clean.shape) < spec.missing_rate
    arrival_missing = rng.random(clean.shape) < spec.missing_rate

    # misreports only on present price cells, never on a mandi's first day
    candidates = (rng.random(clean.shape) < spec.misreport_rate) & ~price_missing
    candidates[:, 0] = False
    factors = np.where(rng.random(clean.shape) < 0.5, 10.0, 0.1)

    records: list[RawPriceRecord] = []
    misreport_rows: list[tuple[str, str, str, float, float]] = []
    for m, meta in enumerate(mandis):
        for t, day in enumerate(days):
            price = None
            if not price_missing[m, t]:
                price = round(float(observed[m, t]), 2)
                if candidates[m, t]:
                    injected = round(price * float(factors[m, t]), 2)
                    misreport_rows.append(
                        (meta.mandi_id, spec.crop, day.isoformat(), price, injected)
                    )
                    price = injected
            arrival = None if arrival_missing[m, t] else round(float(arrivals[m, t]), 2)
            if price is None and arrival is None:
                continue
            records.append(RawPriceRecord(meta.mandi_id, spec.crop, day, price, arrival))

    weather_start = datetime.combine(start_day, time(0))
    weather = [
        _weather_series(spec, rng, meta, weather_start, n_days * 24) for meta in mandis
    ]

    paths = SynthPaths(
        out / "mandis.csv", out / "prices.csv", out / "weather.csv", out / "misreports.csv"
    )
    write_mandi_csv(paths.mandis, mandis)
    write_price_csv(paths.prices, records)
    write_weather_csv(paths.weather, weather, fmt="%.3f")
    with paths.misreports.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MISREPORT_LOG_HEADER)
        for mandi_id, crop, day, original, injected in misreport_rows:
            writer.writerow([mandi_id, crop, day, repr(original), repr(injected)])
    return paths


def read_misreport_log(path: str | Path) -> list[tuple[str, date, float, float]]:
    rows = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader) != MISREPORT_LOG_HEADER:
            raise ValueError(f"bad misreport log header in {path}")
        for mandi_id, _crop, day, original, injected in reader:
            rows.append((mandi_id, date.fromisoformat(day), float(original), float(injected)))
    return rows
