"""Joint load / renewables / net-load scenarios with consistency guidance.

The three series are stacked as channels of one diffusion model (row order
load, res, net_load). During sampling, posterior guidance nudges each
reverse step so the implied clean estimate respects the power balance
load - res - net_load = 0 in MW: the squared residual norm is
differentiated through the noise predictor and the gradient, mapped into
noise space, is added to the predicted noise before the reverse step.

Guidance descends the residual. zeta scales the pull (0 disables it
bit-exactly); the measurement-noise scale is reported in the config but
its 1/sigma^2 factor is folded into zeta rather than applied separately.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np
import torch

from .data import (
    ConditionTokens,
    NormStats,
    SeriesFrame,
    arrangement_for_day,
    condition_tokens,
    fit_norm,
    make_dataset,
)
from .diffusion import NoiseSchedule, reverse_step
from .errors import NumericError, PreconditionError
from .model import ModelParams, predict_noise
from .sampler import SamplerConfig, ScenarioSet

ROW_ORDER = ("load", "res", "net_load")


@dataclass(frozen=True)
class MultiWindow:
    """A weekly-arranged window of all three series, shared mask."""

    values: np.ndarray  # [3, l+s], rows in ROW_ORDER, normalized per row
    mask: np.ndarray  # [l+s] bool, True = historical
    conditions: ConditionTokens | None
    stats: NormStats  # must carry the ROW_ORDER keys
    forecast_day: dt.date
    forecast_weekday: int
    source_indices: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != 3:
            raise PreconditionError(f"multi window needs 3 rows, got shape {v.shape}")
        if np.asarray(self.mask).shape != (v.shape[1],):
            raise PreconditionError("mask length does not match the window rows")
        missing = [r for r in ROW_ORDER if r not in self.stats.mean]
        if missing:
            raise PreconditionError(f"stats lack per-row entries for {missing}")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))

    @property
    def row_order(self) -> tuple[str, ...]:
        return ROW_ORDER


@dataclass(frozen=True)
class DpsConfig:
    """Consistency-guidance settings."""

    zeta: float = 1.0
    sigma_meas: float = 0.05

    def __post_init__(self) -> None:
        if not np.isfinite(self.zeta) or self.zeta < 0:
            raise PreconditionError(f"zeta must be finite and >= 0, got {self.zeta}")
        if not self.sigma_meas > 0:
            raise PreconditionError(f"sigma_meas must be positive, got {self.sigma_meas}")


# ----------------------------------------------------------- frame plumbing


def res_series(frame: SeriesFrame) -> np.ndarray:
    """Total renewable output in MW: pv plus wind, whichever are present."""
    parts = [
        frame.channels[name]
        for name, role in frame.roles.items()
        if role in ("pv", "wind")
    ]
    if not parts:
        raise PreconditionError("frame has no pv or wind channel to form res from")
    return np.sum(parts, axis=0)


def multi_norm(frame: SeriesFrame, split: tuple[int, int]) -> NormStats:
    """Channel stats extended with the three row aliases load/res/net_load.

    The alias entries make one stats object usable for both condition
    tokens (weather channel names) and row normalization.
    """
    base = fit_norm(frame, split)
    start, stop = split
    mean = dict(base.mean)
    std = dict(base.std)
    for alias, series in (
        ("load", frame.channels[frame.channel_by_role("load")]),
        ("res", res_series(frame)),
        ("net_load", frame.channels[frame.channel_by_role("net_load")]),
    ):
        m = float(np.mean(series[start:stop]))
        s = float(np.std(series[start:stop]))
        if s == 0.0:
            raise PreconditionError(f"row {alias} has zero variance on the fit split")
        if alias in mean and not (mean[alias] == m and std[alias] == s):
            raise PreconditionError(
                f"channel name {alias!r} collides with a row alias but has "
                f"different statistics"
            )
        mean[alias] = m
        std[alias] = s
    return NormStats(mean=mean, std=std, fitted_on=base.fitted_on)


def multi_arrange(
    frame: SeriesFrame,
    forecast_day: dt.date,
    stats: NormStats,
    zero_fill_forecast: bool = False,
) -> MultiWindow:
    """Arrange the 7-day window of all three rows with one shared permutation."""
    source, mask, fw = arrangement_for_day(frame, forecast_day)
    ppd = frame.points_per_day
    base = frame.day_start_index(forecast_day - dt.timedelta(days=6))
    span = slice(base, base + 7 * ppd)
    rows = []
    series = {
        "load": frame.channels[frame.channel_by_role("load")],
        "res": res_series(frame),
        "net_load": frame.channels[frame.channel_by_role("net_load")],
    }
    for name in ROW_ORDER:
        arranged = stats.normalize(name, series[name][span])[source]
        if zero_fill_forecast:
            arranged = np.where(mask, arranged, 0.0)
        rows.append(arranged)
    return MultiWindow(
        values=np.stack(rows),
        mask=mask,
        conditions=condition_tokens(frame, forecast_day, stats),
        stats=stats,
        forecast_day=forecast_day,
        forecast_weekday=fw,
        source_indices=source,
    )


def multi_dataset(
    frame: SeriesFrame, stats: NormStats, index_range: tuple[int, int]
) -> list[MultiWindow]:
    """Training windows for the 3-row model, same eligibility rule as the
    univariate dataset."""
    days = [w.forecast_day for w in make_dataset(frame, stats, index_range)]
    return [multi_arrange(frame, day, stats) for day in days]


# --------------------------------------------------------------- guidance


def measurement_residual(x: np.ndarray, stats: NormStats) -> np.ndarray:
    """Power-balance residual load - res - net_load in MW, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != 3:
        raise PreconditionError(f"expected a 3-row matrix, got shape {x.shape}")
    load, res, net = (stats.denormalize(name, x[i]) for i, name in enumerate(ROW_ORDER))
    return load - res - net


def _row_scales(stats: NormStats | None, dtype) -> tuple[torch.Tensor, torch.Tensor, float]:
    if stats is None:
        mean = torch.zeros(3, dtype=dtype)
        std = torch.ones(3, dtype=dtype)
        return mean, std, 1.0
    mean = torch.tensor([stats.mean[n] for n in ROW_ORDER], dtype=dtype)
    std = torch.tensor([stats.std[n] for n in ROW_ORDER], dtype=dtype)
    return mean, std, float(stats.std["net_load"])


def dps_gradient(
    params: ModelParams,
    xt: np.ndarray,
    t: int,
    sched: NoiseSchedule,
    cfg: DpsConfig,
    stats: NormStats | None = None,
    conditions: ConditionTokens | None = None,
) -> np.ndarray:
    """Gradient of the squared consistency residual with respect to xt.

    The clean estimate implied by the noise prediction is denormalized, the
    MW residual is rescaled by the net-load std (dimensionless objective),
    and the whole map is differentiated through the network. zeta is NOT
    applied here; callers scale the returned gradient.
    """
    x = np.asarray(xt, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != 3:
        raise PreconditionError(f"expected a 3-row matrix, got shape {x.shape}")
    if not 1 <= t <= sched.T:
        raise PreconditionError(f"step {t} outside schedule range 1..{sched.T}")
    net = params.net
    dtype = next(net.parameters()).dtype
    net.eval()
    xt_t = torch.from_numpy(x[None]).to(dtype).requires_grad_(True)
    t_t = torch.full((1,), t, dtype=torch.long)
    c_t = None
    if conditions is not None:
        tokens = np.asarray(getattr(conditions, "tokens", conditions), dtype=np.float64)
        c_t = torch.from_numpy(tokens[None].copy()).to(dtype)
    eps_hat = net(xt_t, t_t, c_t)
    ab = float(sched.alpha_bar[t])
    x0 = (xt_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
    mean, std, net_scale = _row_scales(stats, dtype)
    mw = x0[0] * std[:, None] + mean[:, None]
    residual = (mw[0] - mw[1] - mw[2]) / net_scale
    objective = (residual**2).sum()
    (grad,) = torch.autograd.grad(objective, xt_t)
    out = grad[0].detach().numpy().astype(np.float64)
    if not np.all(np.isfinite(out)):
        raise NumericError(f"consistency gradient non-finite at step {t}")
    return out


def guided_sample(
    params: ModelParams,
    sched: NoiseSchedule,
    window: MultiWindow,
    cfg: DpsConfig,
    sampler_cfg: SamplerConfig,
) -> dict[str, ScenarioSet]:
    """Generate N joint scenarios; returns one ScenarioSet per row, rows of
    equal index coming from the same trajectory.

    The single joint model serves every scenario (the unconditional mix
    ratio does not apply here); scenario i uses rng stream seed xor i, the
    same stream layout as the univariate sampler. With zeta = 0 the loop
    never calls the gradient and reduces bit-exactly to unguided sampling.
    """
    if params.config.channels != 3:
        raise PreconditionError(
            f"joint sampling needs a 3-channel model, got {params.config.channels}"
        )
    if params.config.conditional != (window.conditions is not None):
        raise PreconditionError(
            "conditional model requires condition tokens and an unconditional "
            "model forbids them"
        )
    if params.schedule_fingerprint != sched.fingerprint():
        raise PreconditionError(
            f"model was trained against schedule {params.schedule_fingerprint}, "
            f"sampler uses {sched.fingerprint()}"
        )
    y0 = window.values
    length = y0.shape[1]
    if params.config.window_len != length:
        raise PreconditionError(
            f"model window_len {params.config.window_len} does not match "
            f"window length {length}"
        )
    mask = window.mask
    s = int(np.count_nonzero(~mask))
    label = "conditional" if params.config.conditional else "unconditional"
    rows = {name: np.empty((sampler_cfg.N, s)) for name in ROW_ORDER}
    for i in range(sampler_cfg.N):
        rng = np.random.default_rng(sampler_cfg.seed ^ i)
        x = rng.standard_normal((3, length))
        for t in range(sched.T, 0, -1):
            eps_hist = rng.standard_normal((3, length))
            level = t if sampler_cfg.literal_noise_index else t - 1
            ab = sched.alpha_bar[level]
            y = np.sqrt(ab) * y0 + np.sqrt(1.0 - ab) * eps_hist
            eps_hat = predict_noise(params, x, t, window.conditions)
            if cfg.zeta != 0.0:
                grad = dps_gradient(
                    params, x, t, sched, cfg,
                    stats=window.stats, conditions=window.conditions,
                )
                eps_hat = eps_hat + np.sqrt(1.0 - sched.alpha_bar[t]) * cfg.zeta * grad
            z = rng.standard_normal((3, length)) if t > 1 else np.zeros((3, length))
            x = reverse_step(x, t, eps_hat, z, sched)
            x = np.where(mask[None, :], y, x)
        if not np.all(np.isfinite(x)):
            raise NumericError(f"joint sampling produced non-finite values (scenario {i})")
        for c, name in enumerate(ROW_ORDER):
            rows[name][i] = window.stats.denormalize(name, x[c][~mask])
    return {
        name: ScenarioSet(
            scenarios=rows[name],
            provenance=(label,) * sampler_cfg.N,
            window_ref=window,
        )
        for name in ROW_ORDER
    }
