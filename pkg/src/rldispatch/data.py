"""Time-series ingestion, preprocessing, and run configuration.

The preprocessing pipeline turns a raw 5-minute load/wind series into
per-day hourly net-demand instances: hourly mean aggregation, wind
rescaling to a target penetration, and ramp-limit calibration from the
average absolute hourly change. A seeded synthetic benchmark generates
structurally similar days when no dataset is available.

Input CSV schema: header ``timestamp,load_mw,wind_mw``, ISO-8601
timestamps, comma-separated, UTF-8. Net demand may go negative at high
penetration; downstream costs use the shortfall ``(d - g)^+`` so
surplus is costless.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from datetime import datetime, timezone

import numpy as np

from .errors import ConfigError, DataError
from .params import DispatchParams
from .validation import check_int, check_scalar, check_vector

CSV_HEADER = ["timestamp", "load_mw", "wind_mw"]
RAMP_FACTOR = 0.8
SAMPLES_PER_HOUR = 12
HOURS_PER_DAY = 24


@dataclass(frozen=True)
class RawSeries:
    """Validated load/wind series on a strictly increasing time axis."""

    timestamps: tuple
    load: np.ndarray
    wind: np.ndarray

    def __post_init__(self):
        n = len(self.timestamps)
        if self.load.shape != (n,) or self.wind.shape != (n,):
            raise DataError("timestamps, load, and wind must have equal length")
        if n == 0:
            raise DataError("series is empty")

    def __len__(self):
        return len(self.timestamps)


@dataclass(frozen=True)
class DayInstance:
    """One dispatch day: raw hourly profiles plus derived quantities."""

    date: str
    load: np.ndarray
    wind: np.ndarray
    net_demand: np.ndarray
    r_up: float
    r_down: float
    p: float

    def __post_init__(self):
        for name in ("load", "wind", "net_demand"):
            arr = getattr(self, name)
            if arr.shape != (HOURS_PER_DAY,):
                raise DataError(f"{name} must have {HOURS_PER_DAY} hourly values")


def _parse_timestamp(text: str, line_no: int) -> datetime:
    try:
        ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as exc:
        raise DataError(f"line {line_no}: bad timestamp {text!r}: {exc}") from exc
    if ts.tzinfo is not None:
        ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
    return ts


def load_series(path) -> RawSeries:
    """Parse and validate the documented CSV schema."""
    timestamps = []
    load = []
    wind = []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if [h.strip() for h in header] != CSV_HEADER:
            raise DataError(
                f"{path}: expected header {','.join(CSV_HEADER)}, "
                f"got {','.join(header)}")
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise DataError(f"line {line_no}: expected 3 fields, got {len(row)}")
            ts = _parse_timestamp(row[0].strip(), line_no)
            try:
                load_v = float(row[1])
                wind_v = float(row[2])
            except ValueError as exc:
                raise DataError(f"line {line_no}: bad number: {exc}") from exc
            if not (np.isfinite(load_v) and np.isfinite(wind_v)):
                raise DataError(f"line {line_no}: non-finite value")
            if load_v < 0:
                raise DataError(f"line {line_no}: negative load {load_v}")
            if wind_v < 0:
                raise DataError(f"line {line_no}: negative wind {wind_v}")
            if timestamps and ts <= timestamps[-1]:
                raise DataError(
                    f"line {line_no}: timestamp {ts.isoformat()} not after "
                    f"previous {timestamps[-1].isoformat()}")
            timestamps.append(ts)
            load.append(load_v)
            wind.append(wind_v)
    return RawSeries(timestamps=tuple(timestamps),
                     load=np.asarray(load), wind=np.asarray(wind))


def aggregate_hourly(series: RawSeries):
    """Hourly means of a strict 5-minute series, grouped into whole days.

    Returns a list of ``(date_iso, hourly_load, hourly_wind)`` with 24
    values per day. Hours with a sample count other than 12 and days
    with missing hours are rejected.
    """
    by_day = {}
    for ts, lo, wi in zip(series.timestamps, series.load, series.wind):
        day = ts.date()
        by_day.setdefault(day, {}).setdefault(ts.hour, []).append((lo, wi))
    days = []
    for day in sorted(by_day):
        hours = by_day[day]
        if set(hours) != set(range(HOURS_PER_DAY)):
            missing = sorted(set(range(HOURS_PER_DAY)) - set(hours))
            raise DataError(f"day {day.isoformat()}: missing hours {missing}")
        load24 = np.empty(HOURS_PER_DAY)
        wind24 = np.empty(HOURS_PER_DAY)
        for hour in range(HOURS_PER_DAY):
            samples = hours[hour]
            if len(samples) != SAMPLES_PER_HOUR:
                raise DataError(
                    f"day {day.isoformat()} hour {hour}: expected "
                    f"{SAMPLES_PER_HOUR} samples, got {len(samples)}")
            load24[hour] = np.mean([s[0] for s in samples])
            wind24[hour] = np.mean([s[1] for s in samples])
        days.append((day.isoformat(), load24, wind24))
    return days


def scale_wind(load, wind, p: float) -> np.ndarray:
    """Net demand after rescaling wind to ``p`` percent of total load."""
    load = check_vector(load, "load")
    wind = check_vector(wind, "wind", size=load.size)
    check_scalar(p, "p", minimum=0.0, maximum=100.0)
    if p == 0.0:
        return load.copy()
    total_wind = float(np.sum(wind))
    if total_wind <= 0.0:
        raise DataError("cannot scale wind: total wind is zero with p > 0")
    kappa = (p / 100.0) * float(np.sum(load)) / total_wind
    return load - kappa * wind


def calibrate_ramp(d, factor: float = RAMP_FACTOR) -> tuple:
    """Symmetric ramp limits from the average absolute hourly change."""
    d = check_vector(d, "d")
    if d.size < 2:
        raise DataError("ramp calibration needs at least 2 periods")
    r = factor * float(np.mean(np.abs(np.diff(d))))
    return r, r


def make_day_instance(date: str, load, wind, p: float) -> DayInstance:
    """Scale wind, compute net demand, and calibrate ramps for one day."""
    load = check_vector(load, "load", size=HOURS_PER_DAY)
    wind = check_vector(wind, "wind", size=HOURS_PER_DAY)
    d = scale_wind(load, wind, p)
    r_down, r_up = calibrate_ramp(d)
    return DayInstance(date=date, load=load, wind=wind, net_demand=d,
                       r_up=r_up, r_down=r_down, p=p)


def pick_days(instances, k: int, rng) -> list:
    """Uniform subset of ``k`` days without replacement, original order."""
    check_int(k, "k", minimum=1)
    if k > len(instances):
        raise DataError(f"cannot pick {k} of {len(instances)} days")
    idx = np.sort(rng.choice(len(instances), size=k, replace=False))
    return [instances[i] for i in idx]


@dataclass(frozen=True)
class SynthSpec:
    """Shape parameters of the synthetic day generator.

    The load is a mild two-harmonic diurnal profile with an evening
    shoulder; wind follows a weakly diurnal envelope modulated by a
    positively correlated AR(1) sequence.  The defaults keep hourly
    demand changes small relative to the one-step forecast error, so
    the calibrated ramp limits (a fixed fraction of the mean hourly
    change) bind against the noise rather than against the shape.
    """

    n_days: int = 100
    base_load: float = 1000.0
    harmonic1: float = 40.0
    harmonic2: float = 15.0
    shoulder: float = 130.0
    shoulder_hour: float = 18.5
    shoulder_width: float = 2.0
    load_noise: float = 3.0
    wind_level: float = 0.35
    wind_ar: float = 0.9
    wind_noise: float = 0.03
    p: float = 20.0

    def __post_init__(self):
        check_int(self.n_days, "n_days", minimum=1)
        check_scalar(self.base_load, "base_load", minimum=0.0, strict_min=True)
        check_scalar(self.p, "p", minimum=0.0, maximum=100.0)
        check_scalar(self.wind_ar, "wind_ar", minimum=0.0, maximum=0.999)


def synth_benchmark(spec: SynthSpec, rng) -> list:
    """Seeded synthetic day instances exercising the full pipeline."""
    hours = np.arange(HOURS_PER_DAY, dtype=float)
    diurnal = (spec.base_load
               + spec.harmonic1 * np.sin(2.0 * np.pi * (hours - 9.0) / 24.0)
               + spec.harmonic2 * np.sin(4.0 * np.pi * (hours - 3.0) / 24.0)
               + spec.shoulder * np.exp(
                   -0.5 * ((hours - spec.shoulder_hour) / spec.shoulder_width) ** 2))
    envelope = 0.8 + 0.2 * np.sin(2.0 * np.pi * (hours - 8.0) / 24.0)
    days = []
    for day in range(spec.n_days):
        load = diurnal + spec.load_noise * rng.standard_normal(HOURS_PER_DAY)
        load = np.maximum(load, 0.0)
        ar = np.empty(HOURS_PER_DAY)
        z = rng.standard_normal()
        for h in range(HOURS_PER_DAY):
            z = spec.wind_ar * z + np.sqrt(1 - spec.wind_ar ** 2) * rng.standard_normal()
            ar[h] = z
        shape = envelope * (1.0 + spec.wind_noise * ar)
        wind = np.maximum(shape, 0.02) * spec.wind_level * spec.base_load
        days.append(make_day_instance(f"synthetic-{day:03d}", load, wind, spec.p))
    return days


@dataclass
class RunConfig:
    """Fully resolved experiment configuration (JSON round-trippable)."""

    T: int = 24
    c: float = 50.0
    q: float = 2000.0
    betas: tuple = (0.03, 0.03, 0.03, 0.03)
    ramp_factor: float = RAMP_FACTOR
    penetrations: tuple = (5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    sigma_kind: str = "proportional"
    sigma_rho: float = 0.05
    law: str = "gaussian"
    n_scenarios: int = 200
    n_days: int = 100
    seed: int = 0
    policies: tuple = ("cc_gaussian", "cc_laplace", "one_step", "multi_step")
    solver: dict = field(default_factory=dict)

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        self.penetrations = tuple(float(p) for p in self.penetrations)
        self.policies = tuple(str(p) for p in self.policies)
        check_int(self.T, "T", minimum=1)
        check_int(self.n_scenarios, "n_scenarios", minimum=1)
        check_int(self.n_days, "n_days", minimum=1)
        check_int(self.seed, "seed", minimum=0)
        check_scalar(self.sigma_rho, "sigma_rho", minimum=0.0)
        check_scalar(self.ramp_factor, "ramp_factor", minimum=0.0,
                     strict_min=True)
        if self.sigma_kind != "proportional":
            raise ConfigError(f"unknown sigma_kind {self.sigma_kind!r}")
        self.dispatch_params(r_up=1.0, r_down=1.0)

    def dispatch_params(self, r_up: float, r_down: float) -> DispatchParams:
        """Instance parameters for one day's calibrated ramps."""
        return DispatchParams(T=self.T, r_up=r_up, r_down=r_down,
                              c=self.c, q=self.q, betas=self.betas)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["penetrations"] = list(self.penetrations)
        d["policies"] = list(self.policies)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad config value: {exc}") from exc


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return RunConfig.from_dict(raw)


def dump_config(config: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_results_csv(rows, path) -> None:
    """Deterministic CSV: one row per policy/penetration/day, sorted."""
    ordered = sorted(rows, key=lambda r: (r["policy"], r["p"], r["day"]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["policy", "p", "day", "mean_cost", "oracle_cost",
                         "ratio"])
        for r in ordered:
            writer.writerow([r["policy"], f"{r['p']:.10g}", r["day"],
                             f"{r['mean_cost']:.10g}",
                             f"{r['oracle_cost']:.10g}",
                             f"{r['ratio']:.10g}"])


def write_json(payload: dict, path) -> None:
    """Deterministic JSON: sorted keys, no timestamps."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
