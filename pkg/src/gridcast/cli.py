"""Command-line harness: synth, train, forecast, evaluate, plot, multi.

One YAML run-config file drives everything. Documented key set (all
sections optional, defaults shown):

    data:
      csv: data.csv            # required; must exist when a command starts
      schema: {load: load, pv: pv, wind: wind, weather_temp: weather}
                               # optional column -> role map; inferred from
                               # the header when omitted (weather_* columns
                               # become weather channels)
    output_dir: runs/out
    split:
      train: [2021-01-04, 2021-05-02]   # inclusive civil dates
      test:  [2021-05-03, 2021-05-16]
    schedule: {steps: 50, beta_start: 1.0e-4, beta_end: 0.25}
    model: {depth: 3, heads: 8, base_channels: 32, time_embed_dim: 64, seed: 0}
    train: {learning_rate: 5.0e-4, batch_size: 64, epochs: 500, seed: 0}
    sampler: {n_scenarios: 100, p_uncond: 0.28, seed: 0, literal_noise_index: false}
    dps: {zeta: 1.0, sigma_meas: 0.05}
    intervals: {gammas: [0.5, 0.7, 0.9], kind: adaptive}
    multi: {enabled: false, epochs: null}   # epochs overrides train.epochs
                                            # for the joint 3-channel model

Any key can be overridden on the command line with repeated
``--set section.key=value`` flags (values parsed as YAML).

Exit codes: 0 ok, 2 IO or config error, 3 precondition violation,
4 numeric failure. Artifacts are written to a temp file in the target
directory and atomically renamed; commands that write into output_dir
hold a lock file for their duration.
"""

from __future__ import annotations

import argparse
import contextlib
import copy
import dataclasses
import datetime as dt
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    CALENDAR_FEATURES,
    NormStats,
    SeriesFrame,
    fit_norm,
    load_csv,
    make_dataset,
    weekly_arrange,
)
from .diffusion import NoiseSchedule, linear_schedule
from .errors import DataError, NumericError, PreconditionError
from .kde import IntervalForecast, interval_forecast
from .metrics import EvalRecord, season_of, seasonal_report
from .model import ModelConfig, TrainConfig, train
from .multi import ROW_ORDER, DpsConfig, guided_sample, multi_arrange, multi_dataset, multi_norm
from .sampler import SamplerConfig, ScenarioSet, generate_set
from .synth import write_synth_csv

log = logging.getLogger(__name__)

_DEFAULTS: dict = {
    "data": {"csv": None, "schema": None},
    "output_dir": "runs/out",
    "split": {"train": None, "test": None},
    "schedule": {"steps": 50, "beta_start": 1.0e-4, "beta_end": 0.25},
    "model": {"depth": 3, "heads": 8, "base_channels": 32, "time_embed_dim": 64, "seed": 0},
    "train": {"learning_rate": 5.0e-4, "batch_size": 64, "epochs": 500, "seed": 0},
    "sampler": {"n_scenarios": 100, "p_uncond": 0.28, "seed": 0, "literal_noise_index": False},
    "dps": {"zeta": 1.0, "sigma_meas": 0.05},
    "intervals": {"gammas": [0.5, 0.7, 0.9], "kind": "adaptive"},
    "multi": {"enabled": False, "epochs": None},
}


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; see the module docstring for the file
    format."""

    data_csv: Path
    schema: dict[str, str] | None
    output_dir: Path
    train_range: tuple[dt.date, dt.date]
    test_range: tuple[dt.date, dt.date] | None
    steps: int
    beta_start: float
    beta_end: float
    model: dict
    train: TrainConfig
    sampler: SamplerConfig
    dps: DpsConfig
    gammas: tuple[float, ...]
    interval_kind: str
    multi_enabled: bool
    multi_train: TrainConfig


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in out:
            raise DataError(f"unknown config key {where!r}")
        if isinstance(out[key], dict) and out[key] and isinstance(value, dict):
            out[key] = _merge(out[key], value, where)
        else:
            out[key] = value
    return out


def _apply_override(raw: dict, spec: str) -> None:
    key, sep, value = spec.partition("=")
    if not sep or not key:
        raise DataError(f"override must look like section.key=value, got {spec!r}")
    try:
        parsed = yaml.safe_load(value)
    except yaml.YAMLError as e:
        raise DataError(f"unparseable override value {value!r}: {e}") from e
    node = raw
    parts = key.split(".")
    for part in parts[:-1]:
        nxt = node.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise DataError(f"override {key!r} descends into non-mapping {part!r}")
        node = nxt
    node[parts[-1]] = parsed


def _as_date(value, where: str) -> dt.date:
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    if isinstance(value, str):
        try:
            return dt.date.fromisoformat(value)
        except ValueError as e:
            raise DataError(f"{where}: invalid date {value!r}") from e
    raise DataError(f"{where}: expected a date, got {value!r}")


def _date_range(value, where: str) -> tuple[dt.date, dt.date] | None:
    if value is None:
        return None
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise DataError(f"{where}: expected [first, last], got {value!r}")
    first, last = (_as_date(v, where) for v in value)
    if last < first:
        raise DataError(f"{where}: range {first}..{last} is empty")
    return first, last


def load_run_config(path: str | Path, overrides: tuple[str, ...] = ()) -> RunConfig:
    """Parse the YAML config, apply --set overrides, validate everything."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"config file not found: {path}") from e
    try:
        user = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        raise DataError(f"unparseable config {path}: {e}") from e
    if not isinstance(user, dict):
        raise DataError(f"config {path} must be a mapping, got {type(user).__name__}")
    for spec in overrides:
        _apply_override(user, spec)
    raw = _merge(_DEFAULTS, user)

    if not raw["data"]["csv"]:
        raise DataError("config: data.csv is required")
    data_csv = Path(raw["data"]["csv"])
    if not data_csv.exists():
        raise DataError(f"data file not found: {data_csv}")
    schema = raw["data"]["schema"]
    if schema is not None and not (
        isinstance(schema, dict) and all(isinstance(v, str) for v in schema.values())
    ):
        raise DataError("config: data.schema must map column names to roles")

    train_range = _date_range(raw["split"]["train"], "split.train")
    if train_range is None:
        raise DataError("config: split.train is required")
    test_range = _date_range(raw["split"]["test"], "split.test")

    sch = raw["schedule"]
    if not isinstance(sch["steps"], int) or sch["steps"] < 1:
        raise DataError(f"config: schedule.steps must be a positive integer, got {sch['steps']}")
    if not 0.0 < sch["beta_start"] <= sch["beta_end"] < 1.0:
        raise DataError(
            f"config: need 0 < beta_start <= beta_end < 1, got {sch['beta_start']}, {sch['beta_end']}"
        )

    # sub-config constructors validate their own fields; surface any
    # violation as a config error, not a runtime precondition
    try:
        train_cfg = TrainConfig(
            learning_rate=float(raw["train"]["learning_rate"]),
            batch_size=int(raw["train"]["batch_size"]),
            epochs=int(raw["train"]["epochs"]),
            seed=int(raw["train"]["seed"]),
        )
        sampler_cfg = SamplerConfig(
            N=int(raw["sampler"]["n_scenarios"]),
            p_uncond=float(raw["sampler"]["p_uncond"]),
            seed=int(raw["sampler"]["seed"]),
            literal_noise_index=bool(raw["sampler"]["literal_noise_index"]),
        )
        dps_cfg = DpsConfig(
            zeta=float(raw["dps"]["zeta"]), sigma_meas=float(raw["dps"]["sigma_meas"])
        )
        # the joint model may get its own epoch budget; it learns three
        # channels and typically needs more passes than the single-channel pair
        multi_train_cfg = (
            train_cfg
            if raw["multi"]["epochs"] is None
            else dataclasses.replace(train_cfg, epochs=int(raw["multi"]["epochs"]))
        )
    except (PreconditionError, TypeError, ValueError) as e:
        raise DataError(f"config: {e}") from e

    gammas = tuple(float(g) for g in raw["intervals"]["gammas"])
    if not gammas:
        raise DataError("config: intervals.gammas must be non-empty")
    for g in gammas:
        if not 0.0 < g < 1.0:
            raise DataError(f"config: interval level {g} outside (0, 1)")
    if any(b <= a for a, b in zip(gammas, gammas[1:])):
        raise DataError(f"config: intervals.gammas must be strictly increasing, got {list(gammas)}")
    kind = raw["intervals"]["kind"]
    if kind not in ("adaptive", "symmetric"):
        raise DataError(f"config: intervals.kind must be adaptive or symmetric, got {kind!r}")

    return RunConfig(
        data_csv=data_csv,
        schema=schema,
        output_dir=Path(raw["output_dir"]),
        train_range=train_range,
        test_range=test_range,
        steps=sch["steps"],
        beta_start=float(sch["beta_start"]),
        beta_end=float(sch["beta_end"]),
        model=dict(raw["model"]),
        train=train_cfg,
        sampler=sampler_cfg,
        dps=dps_cfg,
        gammas=gammas,
        interval_kind=kind,
        multi_enabled=bool(raw["multi"]["enabled"]),
        multi_train=multi_train_cfg,
    )


# ---------------------------------------------------------------------------
# artifact plumbing


def _fmt(v: float) -> str:
    # repr round-trips float64 exactly: reruns and re-reads stay bit-identical
    return repr(float(v))


def _write_text(path: Path, content: str) -> None:
    """Write via a sibling temp file and atomic rename; a failed run never
    leaves a partial artifact at the final path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


class _OutputLock:
    """Mutual exclusion for an output directory across processes."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.path = self.out_dir / ".gridcast.lock"
        self._fd: int | None = None

    def __enter__(self) -> "_OutputLock":
        self.out_dir.mkdir(parents=True, exist_ok=True)
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise DataError(
                f"output directory is locked by another run: {self.path} "
                "(delete the lock file if that run is dead)"
            ) from None
        os.write(self._fd, f"{os.getpid()}\n".encode())
        return self

    def __exit__(self, *exc) -> bool:
        if self._fd is not None:
            os.close(self._fd)
        with contextlib.suppress(FileNotFoundError):
            os.unlink(self.path)
        return False


def _infer_schema(csv_path: Path) -> dict[str, str]:
    """Column -> role map from header names: load/pv/wind/net_load map to
    themselves, weather_* columns become weather channels."""
    try:
        header = list(pd.read_csv(csv_path, nrows=0).columns)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"unreadable CSV header {csv_path}: {e}") from e
    schema: dict[str, str] = {}
    for col in header:
        if col == "timestamp":
            continue
        if col in ("load", "pv", "wind", "net_load"):
            schema[col] = col
        elif col.startswith("weather_"):
            schema[col] = "weather"
        else:
            log.warning("ignoring unrecognized column %r in %s", col, csv_path)
    if not ({"load", "pv", "wind"} <= set(schema.values()) or "net_load" in schema.values()):
        raise DataError(
            f"{csv_path}: cannot infer a usable schema from columns {header} "
            "(need load/pv/wind or net_load); set data.schema explicitly"
        )
    return schema


def _load_frame(config: RunConfig) -> SeriesFrame:
    schema = config.schema or _infer_schema(config.data_csv)
    frame = load_csv(str(config.data_csv), schema)
    if frame.interpolated_points:
        log.info("interpolated %d missing points in %s", frame.interpolated_points, config.data_csv)
    return frame


def _range_indices(frame: SeriesFrame, span: tuple[dt.date, dt.date]) -> tuple[int, int]:
    first, last = span
    return frame.day_start_index(first), frame.day_start_index(last) + frame.points_per_day


def _schedule(config: RunConfig) -> NoiseSchedule:
    return linear_schedule(config.steps, config.beta_start, config.beta_end)


def _model_configs(config: RunConfig, frame: SeriesFrame) -> dict[str, ModelConfig]:
    ppd = frame.points_per_day
    d_feat = len(frame.weather_channels()) + CALENDAR_FEATURES
    base = dict(
        depth=int(config.model["depth"]),
        heads=int(config.model["heads"]),
        base_channels=int(config.model["base_channels"]),
        time_embed_dim=int(config.model["time_embed_dim"]),
        window_len=7 * ppd,
    )
    seed = int(config.model["seed"])
    return {
        "cond": ModelConfig(**base, conditional=True, d_feat=d_feat, seed=seed, channels=1),
        "uncond": ModelConfig(**base, conditional=False, d_feat=0, seed=seed + 1, channels=1),
        "multi": ModelConfig(**base, conditional=True, d_feat=d_feat, seed=seed + 2, channels=3),
    }


def _ckpt_path(config: RunConfig, role: str) -> Path:
    return config.output_dir / f"model_{role}.ckpt"


def _load_models(config: RunConfig, roles: tuple[str, ...]) -> dict:
    out = {}
    for role in roles:
        path = _ckpt_path(config, role)
        if not path.exists():
            raise DataError(f"checkpoint not found: {path} (run `gridcast train` first)")
        out[role] = load_checkpoint(path)
    return out


def _loss_csv(trace: list[float]) -> str:
    lines = ["epoch,mean_loss"]
    lines += [f"{epoch},{_fmt(loss)}" for epoch, loss in enumerate(trace)]
    return "\n".join(lines) + "\n"


def _scenario_csv(scen: ScenarioSet) -> str:
    s = scen.scenarios.shape[1]
    header = "scenario_id,provenance," + ",".join(f"t{k}" for k in range(s))
    lines = [header]
    for i in range(scen.scenarios.shape[0]):
        values = ",".join(_fmt(v) for v in scen.scenarios[i])
        lines.append(f"{i},{scen.provenance[i]},{values}")
    return "\n".join(lines) + "\n"


def _read_scenario_matrix(path: Path) -> np.ndarray:
    try:
        table = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"unreadable scenario CSV {path}: {e}") from e
    cols = list(table.columns)
    if cols[:2] != ["scenario_id", "provenance"] or not all(
        c == f"t{k}" for k, c in enumerate(cols[2:])
    ):
        raise DataError(f"{path}: not a scenario CSV (columns {cols[:4]}...)")
    if len(cols) < 3 or len(table) < 2:
        raise DataError(f"{path}: scenario CSV needs >= 2 scenarios and >= 1 timestep")
    return table[cols[2:]].to_numpy(dtype=np.float64)


def _interval_csv(iv: IntervalForecast, times: list[pd.Timestamp]) -> str:
    levels = iv.levels()
    cols = ["timestamp", "z_max"]
    for g in levels:
        tag = int(round(g * 100))
        cols += [f"lo_{tag}", f"hi_{tag}"]
    lines = [",".join(cols)]
    for k, ts in enumerate(times):
        row = [ts.isoformat(), _fmt(iv.z_max[k])]
        for g in levels:
            row += [_fmt(iv.lower[g][k]), _fmt(iv.upper[g][k])]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _sidecar_json(config: RunConfig, sched: NoiseSchedule, day: dt.date, scen: ScenarioSet) -> str:
    payload = {
        "day": day.isoformat(),
        "n_scenarios": config.sampler.N,
        "p_uncond": config.sampler.p_uncond,
        "seed": config.sampler.seed,
        "literal_noise_index": config.sampler.literal_noise_index,
        "schedule": {
            "steps": sched.T,
            "beta_start": config.beta_start,
            "beta_end": config.beta_end,
        },
        "provenance_counts": {
            flag: sum(1 for p in scen.provenance if p == flag)
            for flag in ("conditional", "unconditional")
        },
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _day_times(frame: SeriesFrame, day: dt.date) -> list[pd.Timestamp]:
    base = frame.day_start_index(day)
    return [frame.time_at(base + k) for k in range(frame.points_per_day)]


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(out: Path, days: int, start: dt.date, step_minutes: int, seed: int) -> None:
    path = write_synth_csv(out, days, start, step_minutes, seed)
    print(f"wrote {days} synthetic days to {path}")


def cmd_train(config: RunConfig) -> None:
    frame = _load_frame(config)
    tr = _range_indices(frame, config.train_range)
    sched = _schedule(config)
    stats = fit_norm(frame, tr)
    dataset = make_dataset(frame, stats, tr)
    if not dataset:
        raise PreconditionError(
            f"training split {config.train_range} yields no 7-day windows"
        )
    cfgs = _model_configs(config, frame)
    roles = ("cond", "uncond") + (("multi",) if config.multi_enabled else ())
    with _OutputLock(config.output_dir):
        for role in roles:
            if role == "multi":
                mstats = multi_norm(frame, tr)
                data = multi_dataset(frame, mstats, tr)
            else:
                data = dataset
            log.info("training %s model on %d windows", role, len(data))
            tcfg = config.multi_train if role == "multi" else config.train
            params = train(data, sched, cfgs[role], tcfg)
            save_checkpoint(params, _ckpt_path(config, role))
            _write_text(config.output_dir / f"loss_{role}.csv", _loss_csv(params.loss_trace))
            print(f"{role}: {len(data)} windows, final loss {params.loss_trace[-1]:.6f}")


def _forecast_day(
    config: RunConfig,
    frame: SeriesFrame,
    stats: NormStats,
    sched: NoiseSchedule,
    models: dict,
    day: dt.date,
) -> tuple[ScenarioSet, IntervalForecast]:
    window = weekly_arrange(frame, day, stats, zero_fill_forecast=True)
    scen = generate_set(models["cond"], models["uncond"], sched, window, config.sampler, stats)
    iv = interval_forecast(scen, list(config.gammas), config.interval_kind)
    return scen, iv


def _write_forecast_files(
    config: RunConfig,
    frame: SeriesFrame,
    sched: NoiseSchedule,
    day: dt.date,
    scen: ScenarioSet,
    iv: IntervalForecast,
) -> None:
    tag = day.isoformat()
    _write_text(config.output_dir / f"scenarios_{tag}.csv", _scenario_csv(scen))
    _write_text(config.output_dir / f"scenarios_{tag}.json", _sidecar_json(config, sched, day, scen))
    _write_text(config.output_dir / f"intervals_{tag}.csv", _interval_csv(iv, _day_times(frame, day)))


def cmd_forecast(config: RunConfig, day: dt.date) -> None:
    frame = _load_frame(config)
    sched = _schedule(config)
    models = _load_models(config, ("cond", "uncond"))
    stats = fit_norm(frame, _range_indices(frame, config.train_range))
    with _OutputLock(config.output_dir):
        scen, iv = _forecast_day(config, frame, stats, sched, models, day)
        _write_forecast_files(config, frame, sched, day, scen, iv)
    n_uncond = sum(1 for p in scen.provenance if p == "unconditional")
    top = max(config.gammas)
    width = float(np.mean(iv.upper[top] - iv.lower[top]))
    print(
        f"{day}: {config.sampler.N} scenarios ({n_uncond} unconditional), "
        f"mean {int(round(top * 100))}% width {width:.2f} MW"
    )


def cmd_evaluate(config: RunConfig, first: dt.date, last: dt.date) -> None:
    if last < first:
        raise PreconditionError(f"empty evaluation range {first}..{last}")
    frame = _load_frame(config)
    sched = _schedule(config)
    stats = fit_norm(frame, _range_indices(frame, config.train_range))
    net_name = frame.channel_by_role("net_load")
    ppd = frame.points_per_day
    days = [first + dt.timedelta(days=i) for i in range((last - first).days + 1)]
    models: dict | None = None
    records: list[EvalRecord] = []
    with _OutputLock(config.output_dir):
        for day in days:
            base = frame.day_start_index(day)  # no actuals for this day -> precondition
            scen_path = config.output_dir / f"scenarios_{day.isoformat()}.csv"
            if scen_path.exists():
                matrix = _read_scenario_matrix(scen_path)
                iv = interval_forecast(matrix, list(config.gammas), config.interval_kind)
            else:
                if models is None:
                    models = _load_models(config, ("cond", "uncond"))
                scen, iv = _forecast_day(config, frame, stats, sched, models, day)
                _write_forecast_files(config, frame, sched, day, scen, iv)
            point = iv.z_max if config.interval_kind == "adaptive" else iv.median
            actual = frame.channels[net_name][base : base + ppd]
            season = season_of(pd.Timestamp(day))
            for k in range(ppd):
                records.append(
                    EvalRecord(
                        timestep=k,
                        actual=float(actual[k]),
                        point=float(point[k]),
                        bounds={
                            g: (float(iv.lower[g][k]), float(iv.upper[g][k]))
                            for g in config.gammas
                        },
                        season=season,
                    )
                )
        report = seasonal_report(records, list(config.gammas))
        stem = f"report_{first.isoformat()}_{last.isoformat()}"
        _write_text(config.output_dir / f"{stem}.csv", report.to_csv())
        _write_text(config.output_dir / f"{stem}.json", report.to_json())
    total = report.sections["Total"]
    summary = ", ".join(
        f"ACE@{int(round(g * 100))}% {total['ace'][g]:+.2f}%" for g in config.gammas
    )
    print(f"{len(days)} days, {total['count']} points: MAPE {total['mape']:.2f}%, {summary}")


# ---------------------------------------------------------------------------
# plotting


def _plot_levels(columns: list[str]) -> list[int]:
    tags = sorted(int(c[3:]) for c in columns if c.startswith("lo_"))
    for tag in tags:
        if f"hi_{tag}" not in columns:
            raise DataError(f"interval CSV has lo_{tag} without hi_{tag}")
    if not tags:
        raise DataError(f"no lo_*/hi_* interval columns in {columns}")
    return tags


def _actual_series(table: pd.DataFrame, path: Path) -> pd.Series:
    cols = [c for c in table.columns if c != "timestamp"]
    if "net_load" in cols:
        return table["net_load"]
    if {"load", "pv", "wind"} <= set(cols):
        return table["load"] - table["pv"] - table["wind"]
    if len(cols) == 1:
        return table[cols[0]]
    raise DataError(
        f"{path}: cannot pick an actuals column from {cols} "
        "(need net_load, or load/pv/wind, or a single value column)"
    )


def _svg_path_points(xs: np.ndarray, ys: np.ndarray) -> str:
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))


def _fan_svg(
    times: list[str],
    actual: np.ndarray,
    z_max: np.ndarray,
    bands: list[tuple[int, np.ndarray, np.ndarray]],
) -> str:
    """Static fan chart: one shaded polygon per level (widest first, so
    overlapping fills darken toward the center), plus actual and max-density
    polylines. Exactly len(bands) <polygon> and 2 <polyline> elements."""
    width, height, ml, mr, mt, mb = 960.0, 420.0, 64.0, 18.0, 18.0, 46.0
    n = len(actual)
    lo_all = np.min([b[1] for b in bands], axis=0)
    hi_all = np.max([b[2] for b in bands], axis=0)
    vmin = float(min(np.min(lo_all), np.min(actual), np.min(z_max)))
    vmax = float(max(np.max(hi_all), np.max(actual), np.max(z_max)))
    pad = 0.05 * (vmax - vmin) or 1.0
    vmin, vmax = vmin - pad, vmax + pad
    plot_w, plot_h = width - ml - mr, height - mt - mb

    def x(i: np.ndarray) -> np.ndarray:
        return ml + plot_w * (np.asarray(i, dtype=np.float64) / max(n - 1, 1))

    def y(v: np.ndarray) -> np.ndarray:
        return mt + plot_h * (vmax - np.asarray(v, dtype=np.float64)) / (vmax - vmin)

    idx = np.arange(n)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}" font-family="sans-serif">'
    ]
    for tag, lo, hi in sorted(bands, key=lambda b: -b[0]):
        pts = _svg_path_points(
            np.concatenate([x(idx), x(idx[::-1])]), np.concatenate([y(hi), y(lo[::-1])])
        )
        parts.append(
            f'<polygon points="{pts}" fill="#4878b8" fill-opacity="0.20" stroke="none">'
            f"<title>{tag}% interval</title></polygon>"
        )
    parts.append(
        f'<polyline points="{_svg_path_points(x(idx), y(actual))}" '
        'fill="none" stroke="#222222" stroke-width="1.5"><title>actual</title></polyline>'
    )
    parts.append(
        f'<polyline points="{_svg_path_points(x(idx), y(z_max))}" '
        'fill="none" stroke="#1f5fae" stroke-width="1.8"><title>forecast</title></polyline>'
    )
    # axes and sparse labels; <line>/<text> only, to keep the element
    # counts above unambiguous
    x0, x1, y0, y1 = ml, width - mr, height - mb, mt
    parts.append(
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="#444444" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="#444444" stroke-width="1"/>'
    )
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        v = vmin + frac * (vmax - vmin)
        yy = float(y(v))
        parts.append(
            f'<line x1="{x0 - 4}" y1="{yy:.2f}" x2="{x0}" y2="{yy:.2f}" '
            'stroke="#444444" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{x0 - 8}" y="{yy + 4:.2f}" text-anchor="end" font-size="11" '
            f'fill="#444444">{v:.0f}</text>'
        )
    parts.append(
        f'<text x="{x0}" y="{height - 12:.0f}" text-anchor="start" font-size="11" '
        f'fill="#444444">{times[0]}</text>'
    )
    parts.append(
        f'<text x="{x1}" y="{height - 12:.0f}" text-anchor="end" font-size="11" '
        f'fill="#444444">{times[-1]}</text>'
    )
    parts.append(
        f'<text x="{x1 - 6}" y="{mt + 14:.0f}" text-anchor="end" font-size="11" fill="#222222">'
        "actual (dark), max-density forecast (blue), shaded interval bands</text>"
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plot(intervals_path: Path, actuals_path: Path, out_path: Path) -> None:
    try:
        iv = pd.read_csv(intervals_path)
        act = pd.read_csv(actuals_path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"unreadable CSV: {e}") from e
    for name, table in ((intervals_path, iv), (actuals_path, act)):
        if "timestamp" not in table.columns:
            raise DataError(f"{name}: missing timestamp column")
    if "z_max" not in iv.columns:
        raise DataError(f"{intervals_path}: missing z_max column")
    levels = _plot_levels(list(iv.columns))

    iv_times = pd.to_datetime(iv["timestamp"])
    actual = _actual_series(act, actuals_path).set_axis(pd.to_datetime(act["timestamp"]))
    if actual.index.has_duplicates:
        raise DataError(f"{actuals_path}: duplicate timestamps")
    missing = [t for t in iv_times if t not in actual.index]
    if missing:
        raise PreconditionError(
            f"timestamps misaligned: {len(missing)} interval rows have no actuals "
            f"(first: {missing[0]})"
        )
    aligned = actual.loc[iv_times].to_numpy(dtype=np.float64)
    bands = [
        (tag, iv[f"lo_{tag}"].to_numpy(np.float64), iv[f"hi_{tag}"].to_numpy(np.float64))
        for tag in levels
    ]
    svg = _fan_svg(
        [t.isoformat() for t in iv_times],
        aligned,
        iv["z_max"].to_numpy(np.float64),
        bands,
    )
    _write_text(out_path, svg)
    print(f"wrote {out_path} ({len(levels)} bands, {len(iv)} points)")


def cmd_multi(config: RunConfig, day: dt.date) -> None:
    frame = _load_frame(config)
    sched = _schedule(config)
    path = _ckpt_path(config, "multi")
    if not path.exists():
        raise DataError(
            f"checkpoint not found: {path} (train with multi.enabled=true first)"
        )
    params = load_checkpoint(path)
    mstats = multi_norm(frame, _range_indices(frame, config.train_range))
    window = multi_arrange(frame, day, mstats, zero_fill_forecast=True)
    with _OutputLock(config.output_dir):
        sets = guided_sample(params, sched, window, config.dps, config.sampler)
        tag = day.isoformat()
        for row in ROW_ORDER:
            _write_text(config.output_dir / f"multi_{row}_{tag}.csv", _scenario_csv(sets[row]))
        residual = np.abs(
            sets["load"].scenarios - sets["res"].scenarios - sets["net_load"].scenarios
        ).mean(axis=1)
        lines = ["scenario_id,mean_abs_residual_mw"]
        lines += [f"{i},{_fmt(r)}" for i, r in enumerate(residual)]
        _write_text(config.output_dir / f"consistency_{tag}.csv", "\n".join(lines) + "\n")
    print(
        f"{day}: {config.sampler.N} joint scenarios, median |load-res-net| "
        f"{float(np.median(residual)):.2f} MW (zeta={config.dps.zeta})"
    )


# ---------------------------------------------------------------------------
# entry point


def _parse_day(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError as e:
        raise DataError(f"invalid date {text!r} (expected YYYY-MM-DD)") from e


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridcast",
        description="Probabilistic day-ahead net-load forecasting with diffusion scenario ensembles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="write a deterministic synthetic dataset CSV")
    synth.add_argument("--out", required=True, help="output CSV path")
    synth.add_argument("--days", type=int, default=134)
    synth.add_argument("--start", default="2021-01-04", help="first civil day (YYYY-MM-DD)")
    synth.add_argument("--step-minutes", type=int, default=15)
    synth.add_argument("--seed", type=int, default=0)

    def with_config(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="YAML run-config path")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            dest="overrides",
            help="override a config key, e.g. --set sampler.p_uncond=0.6",
        )

    tr = sub.add_parser("train", help="train the denoiser models and write checkpoints")
    with_config(tr)

    fc = sub.add_parser("forecast", help="generate scenarios and intervals for one day")
    with_config(fc)
    fc.add_argument("--day", required=True, help="forecast day (YYYY-MM-DD)")

    ev = sub.add_parser("evaluate", help="score forecasts against actuals over a date range")
    with_config(ev)
    ev.add_argument("--first", required=True, help="first day of the range")
    ev.add_argument("--last", required=True, help="last day of the range (inclusive)")

    pl = sub.add_parser("plot", help="render an interval CSV as a fan-chart SVG")
    pl.add_argument("--intervals", required=True)
    pl.add_argument("--actuals", required=True)
    pl.add_argument("--out", required=True)

    mu = sub.add_parser("multi", help="consistency-guided joint load/res/net-load scenarios")
    with_config(mu)
    mu.add_argument("--day", required=True, help="forecast day (YYYY-MM-DD)")

    return parser


def _dispatch(args: argparse.Namespace) -> None:
    if args.command == "synth":
        cmd_synth(
            Path(args.out), args.days, _parse_day(args.start), args.step_minutes, args.seed
        )
        return
    if args.command == "plot":
        cmd_plot(Path(args.intervals), Path(args.actuals), Path(args.out))
        return
    config = load_run_config(args.config, tuple(args.overrides))
    if args.command == "train":
        cmd_train(config)
    elif args.command == "forecast":
        cmd_forecast(config, _parse_day(args.day))
    elif args.command == "evaluate":
        cmd_evaluate(config, _parse_day(args.first), _parse_day(args.last))
    elif args.command == "multi":
        cmd_multi(config, _parse_day(args.day))


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        _dispatch(args)
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except PreconditionError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
