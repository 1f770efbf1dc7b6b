"""CSV ingestion, normalization, and weekly-arranged window construction.

A forecast window covers 7 consecutive civil days: 6 days of history plus the
forecast day. The days are reordered Monday..Sunday with each day slotted at
its weekday, so every window shares a weekly shape and the forecast day's
slot is marked unknown in the mask. The stored permutation makes the
de-arrangement exact.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import DataError, PreconditionError

KNOWN_ROLES = {"load", "pv", "wind", "net_load", "weather"}
SECONDS_PER_DAY = 86_400
#: calendar encodings appended to the weather features of each condition token
CALENDAR_FEATURES = 5  # sin/cos hour, sin/cos day-of-week, weekend flag


@dataclass
class SeriesFrame:
    """Uniformly sampled multichannel series with role-tagged channels."""

    start_time: pd.Timestamp
    step: dt.timedelta
    channels: dict[str, np.ndarray]
    roles: dict[str, str]
    interpolated_points: int = 0
    #: max |load - pv - wind - net_load| observed at load time, if all present
    net_load_residual: float | None = None

    def __post_init__(self) -> None:
        if set(self.channels) != set(self.roles):
            raise DataError("channels and roles must name the same set")
        bad = {r for r in self.roles.values() if r not in KNOWN_ROLES}
        if bad:
            raise DataError(f"unknown channel roles: {sorted(bad)}")
        lengths = {len(v) for v in self.channels.values()}
        if len(lengths) != 1:
            raise DataError(f"channel lengths differ: {sorted(lengths)}")
        step_s = self.step.total_seconds()
        if step_s <= 0 or SECONDS_PER_DAY % int(step_s) != 0:
            raise DataError(f"step {self.step} does not divide 24 h evenly")
        self.channels = {k: np.asarray(v, dtype=np.float64) for k, v in self.channels.items()}

    @property
    def length(self) -> int:
        return len(next(iter(self.channels.values())))

    @property
    def points_per_day(self) -> int:
        return SECONDS_PER_DAY // int(self.step.total_seconds())

    def time_at(self, index: int) -> pd.Timestamp:
        return self.start_time + index * self.step

    def timestamps(self) -> pd.DatetimeIndex:
        return pd.date_range(self.start_time, periods=self.length, freq=self.step)

    def channel_by_role(self, role: str) -> str:
        names = [n for n, r in self.roles.items() if r == role]
        if len(names) != 1:
            raise DataError(f"expected exactly one channel with role {role!r}, found {names}")
        return names[0]

    def weather_channels(self) -> list[str]:
        return sorted(n for n, r in self.roles.items() if r == "weather")

    def day_start_index(self, day: dt.date) -> int:
        """Index of 00:00 on the given civil day; the day must be fully
        contained in the frame."""
        midnight = pd.Timestamp(day)
        offset = (midnight - self.start_time) / self.step
        idx = int(round(offset))
        if abs(offset - idx) > 1e-9:
            raise PreconditionError(f"day {day} is not aligned to the sampling grid")
        if idx < 0 or idx + self.points_per_day > self.length:
            raise PreconditionError(f"day {day} is not fully contained in the frame")
        return idx


def load_csv(path: str, schema: dict[str, str]) -> SeriesFrame:
    """Read a `timestamp,<channels...>` CSV into a SeriesFrame.

    `schema` maps column names to roles. Gaps of at most 4 consecutive
    missing points are linearly interpolated and counted; longer gaps are
    rejected with the offending row range. A missing net_load column is
    synthesized as load - pv - wind.
    """
    try:
        raw = pd.read_csv(path)
    except FileNotFoundError as e:
        raise DataError(f"data file not found: {path}") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"unparseable CSV {path}: {e}") from e
    if "timestamp" not in raw.columns:
        raise DataError(f"{path}: missing required column 'timestamp'")
    missing = [c for c in schema if c not in raw.columns]
    if missing:
        raise DataError(f"{path}: missing required columns {missing}")
    if len(raw) < 2:
        raise DataError(f"{path}: need at least 2 rows")

    times = pd.to_datetime(raw["timestamp"])
    diffs = times.diff().dropna()
    if (diffs <= pd.Timedelta(0)).any():
        bad = int(np.argmax(diffs.to_numpy() <= pd.Timedelta(0).to_timedelta64()))
        raise DataError(f"{path}: non-monotonic timestamps near row {bad + 1}")
    step = diffs.mode().iloc[0].to_pytimedelta()
    ratio = diffs / pd.Timedelta(step)
    if not np.allclose(ratio, np.round(ratio), atol=1e-9):
        raise DataError(f"{path}: non-uniform timestamps (not multiples of {step})")

    full_index = pd.date_range(times.iloc[0], times.iloc[-1], freq=step)
    frame = raw.set_index(times)[list(schema)].reindex(full_index)
    gap_mask = frame[next(iter(schema))].isna().to_numpy()
    interpolated = int(gap_mask.sum())
    if interpolated:
        run = 0
        for i, missing_here in enumerate(gap_mask):
            run = run + 1 if missing_here else 0
            if run > 4:
                raise DataError(
                    f"{path}: gap longer than 4 points starting at {full_index[i - run + 1]}"
                )
        frame = frame.interpolate(method="linear", limit_area="inside")

    channels = {name: frame[name].to_numpy(dtype=np.float64) for name in schema}
    roles = dict(schema)
    residual = None
    by_role = {r: n for n, r in roles.items()}
    if "net_load" not in roles.values():
        if not {"load", "pv", "wind"} <= set(roles.values()):
            raise DataError(f"{path}: cannot synthesize net_load without load, pv and wind")
        channels["net_load"] = (
            channels[by_role["load"]] - channels[by_role["pv"]] - channels[by_role["wind"]]
        )
        roles["net_load"] = "net_load"
    elif {"load", "pv", "wind"} <= set(roles.values()):
        residual = float(
            np.max(
                np.abs(
                    channels[by_role["load"]]
                    - channels[by_role["pv"]]
                    - channels[by_role["wind"]]
                    - channels[by_role["net_load"]]
                )
            )
        )
    return SeriesFrame(
        start_time=pd.Timestamp(times.iloc[0]),
        step=step,
        channels=channels,
        roles=roles,
        interpolated_points=interpolated,
        net_load_residual=residual,
    )


@dataclass(frozen=True)
class NormStats:
    """Per-channel z-score statistics, fitted on a declared split."""

    mean: dict[str, float]
    std: dict[str, float]
    fitted_on: str

    def normalize(self, name: str, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.mean[name]) / self.std[name]

    def denormalize(self, name: str, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.std[name] + self.mean[name]


def fit_norm(frame: SeriesFrame, split: tuple[int, int]) -> NormStats:
    """Fit per-channel mean/std (population std) over the half-open index
    range ``split``. Channels with zero variance on the split are rejected."""
    start, stop = split
    if not 0 <= start < stop <= frame.length:
        raise PreconditionError(f"empty or out-of-range split {split} for length {frame.length}")
    mean: dict[str, float] = {}
    std: dict[str, float] = {}
    for name, values in frame.channels.items():
        seg = values[start:stop]
        m, s = float(np.mean(seg)), float(np.std(seg))
        if s == 0.0:
            raise PreconditionError(f"zero variance channel {name!r} on split {split}")
        mean[name], std[name] = m, s
    return NormStats(mean=mean, std=std, fitted_on=f"{start}:{stop}")


@dataclass(frozen=True)
class ConditionTokens:
    """One feature row per forecast-window timestep: normalized weather
    channels followed by sin/cos hour-of-day, sin/cos day-of-week, and a
    weekend flag."""

    tokens: np.ndarray  # [s, d_feat]

    def __post_init__(self) -> None:
        t = np.asarray(self.tokens, dtype=np.float64)
        if t.ndim != 2:
            raise DataError(f"condition tokens must be 2-D, got shape {t.shape}")
        if not np.all(np.isfinite(t)):
            raise DataError("condition tokens contain non-finite values")
        object.__setattr__(self, "tokens", t)

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def d_feat(self) -> int:
        return self.tokens.shape[1]


def condition_tokens(frame: SeriesFrame, day: dt.date, stats: NormStats) -> ConditionTokens:
    """Build the conditioning features for every timestep of ``day``."""
    base = frame.day_start_index(day)
    ppd = frame.points_per_day
    weather = frame.weather_channels()
    rows = np.empty((ppd, len(weather) + CALENDAR_FEATURES), dtype=np.float64)
    for j, name in enumerate(weather):
        rows[:, j] = stats.normalize(name, frame.channels[name][base : base + ppd])
    frac = np.arange(ppd, dtype=np.float64) / ppd
    dow = day.weekday()
    rows[:, len(weather) + 0] = np.sin(2 * np.pi * frac)
    rows[:, len(weather) + 1] = np.cos(2 * np.pi * frac)
    rows[:, len(weather) + 2] = np.sin(2 * np.pi * dow / 7.0)
    rows[:, len(weather) + 3] = np.cos(2 * np.pi * dow / 7.0)
    rows[:, len(weather) + 4] = 1.0 if dow >= 5 else 0.0
    return ConditionTokens(tokens=rows)


@dataclass
class ArrangedWindow:
    """One weekly-arranged training or sampling window (normalized values)."""

    values: np.ndarray  # [l + s]
    mask: np.ndarray  # [l + s] bool, True = historical/observed
    forecast_weekday: int  # 0 = Monday .. 6 = Sunday
    source_indices: np.ndarray  # arranged position -> chronological position
    conditions: ConditionTokens
    forecast_day: dt.date
    start_time: pd.Timestamp  # chronological start of the 7-day slice
    step: dt.timedelta

    @property
    def length(self) -> int:
        return len(self.values)

    @property
    def points_per_day(self) -> int:
        return len(self.values) // 7


def arrangement_for_day(
    frame: SeriesFrame, forecast_day: dt.date
) -> tuple[np.ndarray, np.ndarray, int]:
    """Compute (source_indices, mask, forecast_weekday) for a 7-day window
    ending on ``forecast_day``. source_indices maps arranged positions to
    chronological positions 0..7*ppd-1 within the window; the mask is False
    exactly on the forecast day's slot."""
    ppd = frame.points_per_day
    first_day = forecast_day - dt.timedelta(days=6)
    try:
        frame.day_start_index(first_day)
        frame.day_start_index(forecast_day)
    except PreconditionError as e:
        raise PreconditionError(f"incomplete preceding window for {forecast_day}: {e}") from e
    fw = forecast_day.weekday()
    # slot j (Monday..Sunday) hosts the chronological day whose weekday is j
    day_offset_for_slot = np.empty(7, dtype=np.int64)
    for offset in range(7):
        day_offset_for_slot[(first_day + dt.timedelta(days=offset)).weekday()] = offset
    source = np.empty(7 * ppd, dtype=np.int64)
    mask = np.ones(7 * ppd, dtype=bool)
    within_day = np.arange(ppd, dtype=np.int64)
    for slot in range(7):
        source[slot * ppd : (slot + 1) * ppd] = day_offset_for_slot[slot] * ppd + within_day
        if slot == fw:
            mask[slot * ppd : (slot + 1) * ppd] = False
    return source, mask, fw


def weekly_arrange(
    frame: SeriesFrame,
    forecast_day: dt.date,
    stats: NormStats,
    zero_fill_forecast: bool = False,
) -> ArrangedWindow:
    """Extract and arrange the 7-day window ending on ``forecast_day``.

    With ``zero_fill_forecast`` the unknown forecast-day values are zeroed
    (sampling mode); otherwise ground truth is retained (training mode).
    """
    source, mask, fw = arrangement_for_day(frame, forecast_day)
    first_day = forecast_day - dt.timedelta(days=6)
    base = frame.day_start_index(first_day)
    nl_name = frame.channel_by_role("net_load")
    chron = stats.normalize(nl_name, frame.channels[nl_name][base : base + 7 * frame.points_per_day])
    values = chron[source]
    if zero_fill_forecast:
        values = np.where(mask, values, 0.0)
    return ArrangedWindow(
        values=values,
        mask=mask,
        forecast_weekday=fw,
        source_indices=source,
        conditions=condition_tokens(frame, forecast_day, stats),
        forecast_day=forecast_day,
        start_time=frame.time_at(base),
        step=frame.step,
    )


def weekly_dearrange(window: ArrangedWindow) -> np.ndarray:
    """Restore a window's values to chronological order (exact inverse of the
    arrangement permutation)."""
    source = np.asarray(window.source_indices)
    if sorted(source.tolist()) != list(range(len(source))):
        raise DataError("source_indices is not a permutation")
    chron = np.empty_like(np.asarray(window.values, dtype=np.float64))
    chron[source] = window.values
    return chron


def forecast_slice(window: ArrangedWindow) -> np.ndarray:
    """The forecast day's values in chronological order (normalized)."""
    return np.asarray(window.values, dtype=np.float64)[~window.mask]


def make_dataset(
    frame: SeriesFrame, stats: NormStats, index_range: tuple[int, int]
) -> list[ArrangedWindow]:
    """One training window per eligible forecast day inside the half-open
    index range: a day is eligible when it and its 6 preceding days are fully
    contained in the range."""
    start, stop = index_range
    if not 0 <= start < stop <= frame.length:
        raise PreconditionError(f"empty or out-of-range index range {index_range}")
    ppd = frame.points_per_day
    windows: list[ArrangedWindow] = []
    first_time = frame.time_at(start)
    # first civil day starting at or after the range start
    day = first_time.date()
    if pd.Timestamp(day) < first_time:
        day += dt.timedelta(days=1)
    while True:
        try:
            day_idx = frame.day_start_index(day)
        except PreconditionError:
            break  # off the sampling grid or past the end of the frame
        if day_idx + ppd > stop:
            break
        if day_idx - 6 * ppd >= start:
            windows.append(weekly_arrange(frame, day, stats))
        day += dt.timedelta(days=1)
    if not windows:
        raise PreconditionError(
            f"index range {index_range} is too short: no day has 6 complete preceding days"
        )
    return windows
