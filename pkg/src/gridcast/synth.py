"""Synthetic grid dataset generator.

Produces a deterministic CSV of load, PV, wind and ground-truth weather
channels: a double-peaked daily load sinusoid with weekday/weekend
amplitude modulation and a slow seasonal drift, PV driven by a clear-sky
curve scaled by an autocorrelated cloud factor, wind power from a smooth
ramp over an autocorrelated wind-speed series, plus Gaussian noise. Net
load is left to the loader (load - pv - wind).
"""

from __future__ import annotations

import datetime as dt
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import PreconditionError

LOAD_BASE_MW = 420.0
PV_CAPACITY_MW = 200.0
WIND_CAPACITY_MW = 140.0
#: weekday -> demand amplitude factor (Mon..Sun)
WEEK_PROFILE = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 0.86, 0.80])


def _ar1(rng: np.random.Generator, n: int, corr_steps: float) -> np.ndarray:
    """Unit-variance AR(1) series with the given correlation length."""
    rho = float(np.exp(-1.0 / corr_steps))
    out = np.empty(n)
    out[0] = rng.standard_normal()
    innov = rng.standard_normal(n - 1) * np.sqrt(1.0 - rho * rho)
    for k in range(1, n):
        out[k] = rho * out[k - 1] + innov[k - 1]
    return out


def synth_table(
    days: int,
    start: dt.date,
    step_minutes: int = 15,
    seed: int = 0,
) -> pd.DataFrame:
    """Build the synthetic dataset as a dataframe with a timestamp column."""
    if days < 1:
        raise PreconditionError(f"days must be >= 1, got {days}")
    if step_minutes < 1 or 1440 % step_minutes != 0:
        raise PreconditionError(
            f"step_minutes must divide a day evenly, got {step_minutes}"
        )
    ppd = 1440 // step_minutes
    n = days * ppd
    rng = np.random.default_rng(seed)
    steps_per_hour = 60.0 / step_minutes

    idx = np.arange(n)
    hour = (idx % ppd) / ppd * 24.0
    day_no = idx // ppd
    weekday = (start.weekday() + day_no) % 7
    doy = (start.timetuple().tm_yday - 1 + day_no) % 365

    # weather drivers
    cloud = np.clip(0.64 + 0.30 * _ar1(rng, n, 6 * steps_per_hour), 0.10, 1.0)
    clear_sky = np.clip(np.sin(np.pi * (hour - 6.0) / 12.0), 0.0, None)
    pv_season = 1.0 + 0.25 * np.sin(2 * np.pi * (doy - 80) / 365.0)
    irradiance = clear_sky * cloud * pv_season

    wind_speed = np.clip(6.5 + 3.4 * _ar1(rng, n, 9 * steps_per_hour), 0.2, None)
    ramp = np.clip((wind_speed - 3.0) / 9.0, 0.0, 1.0)
    wind_power_frac = ramp * ramp * (3.0 - 2.0 * ramp)  # smooth cubic ramp

    temperature = (
        11.0
        + 9.0 * np.sin(2 * np.pi * (doy - 110) / 365.0)
        + 3.5 * np.sin(2 * np.pi * (hour - 15.0) / 24.0)
        + 1.5 * _ar1(rng, n, 12 * steps_per_hour)
    )

    # demand: double-peaked day, weekly amplitude, slow seasonal drift, and a
    # slow behavioural wobble the weather channels do not explain
    shape = (
        1.0
        + 0.16 * np.sin(2 * np.pi * (hour - 9.5) / 24.0)
        + 0.07 * np.sin(4 * np.pi * (hour - 8.0) / 24.0)
    )
    season = 1.0 + 0.06 * np.sin(2 * np.pi * (doy - 20) / 365.0)
    comfort = 1.0 + 0.004 * np.abs(temperature - 16.0)
    wobble = 1.0 + 0.03 * _ar1(rng, n, 8 * steps_per_hour)
    load = (
        LOAD_BASE_MW * WEEK_PROFILE[weekday] * shape * season * comfort * wobble
        + 6.0 * rng.standard_normal(n)
    )

    # RES output noise is smooth (derating, soiling, gusts), not white
    pv_derate = 0.02 * rng.standard_normal(n) + 0.10 * _ar1(rng, n, 4 * steps_per_hour)
    pv = np.clip(PV_CAPACITY_MW * irradiance * (1.0 + pv_derate), 0.0, None)
    wind_derate = 0.03 * rng.standard_normal(n) + 0.12 * _ar1(rng, n, 6 * steps_per_hour)
    wind = np.clip(
        WIND_CAPACITY_MW * wind_power_frac * (1.0 + wind_derate), 0.0, None
    )

    times = pd.date_range(
        pd.Timestamp(start), periods=n, freq=dt.timedelta(minutes=step_minutes)
    )
    return pd.DataFrame(
        {
            "timestamp": times,
            "load": load,
            "pv": pv,
            "wind": wind,
            "weather_temp": temperature,
            "weather_irr": irradiance,
            "weather_wind": wind_speed,
        }
    )


def write_synth_csv(
    path: str | Path,
    days: int,
    start: dt.date,
    step_minutes: int = 15,
    seed: int = 0,
) -> Path:
    """Write the synthetic dataset; same arguments give identical bytes."""
    table = synth_table(days, start, step_minutes, seed)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = table.copy()
    out["timestamp"] = out["timestamp"].map(lambda ts: ts.isoformat())
    for col in out.columns[1:]:
        out[col] = out[col].map(lambda v: format(v, ".6f"))
    tmp = path.with_suffix(path.suffix + ".tmp")
    out.to_csv(tmp, index=False)
    tmp.replace(path)
    return path
