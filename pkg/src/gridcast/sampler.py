"""History-guided reverse diffusion producing day-ahead scenario ensembles.

Each scenario runs the full reverse chain on the arranged weekly window:
at every step the historical positions are overwritten with a freshly
noised copy of the observed history at the matching noise level, so the
generated forecast day stays consistent with the week that led into it.
A scenario set mixes conditional and unconditional generations.

Every scenario is computed independently at batch size one with its own
rng stream (seed xor scenario index), so any fan-out over scenarios is
bitwise-equivalent to the sequential loop.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import ArrangedWindow, ConditionTokens, NormStats
from .diffusion import NoiseSchedule, reverse_step
from .errors import NumericError, PreconditionError
from .model import ModelParams, predict_noise

ObserveFn = Callable[[int, np.ndarray, np.ndarray, np.ndarray], None]


@dataclass(frozen=True)
class SamplerConfig:
    """Scenario-ensemble settings."""

    N: int = 100
    p_uncond: float = 0.28
    seed: int = 0
    literal_noise_index: bool = False

    def __post_init__(self) -> None:
        if self.N < 1:
            raise PreconditionError(f"N must be >= 1, got {self.N}")
        if not 0.0 <= self.p_uncond <= 1.0:
            raise PreconditionError(f"p_uncond must lie in [0, 1], got {self.p_uncond}")

    @property
    def n_unconditional(self) -> int:
        # round-half-to-even, matching python's round
        return int(round(self.p_uncond * self.N))


@dataclass(frozen=True)
class ScenarioSet:
    """Generated day-ahead scenarios in MW, chronological forecast order."""

    scenarios: np.ndarray  # [N, s]
    provenance: tuple[str, ...]  # per row: "conditional" | "unconditional"
    window_ref: ArrangedWindow

    def __post_init__(self) -> None:
        if self.scenarios.ndim != 2 or self.scenarios.shape[0] != len(self.provenance):
            raise PreconditionError(
                f"scenario matrix {self.scenarios.shape} does not match "
                f"{len(self.provenance)} provenance flags"
            )
        if not np.all(np.isfinite(self.scenarios)):
            raise NumericError("scenario set contains non-finite values")
        bad = set(self.provenance) - {"conditional", "unconditional"}
        if bad:
            raise PreconditionError(f"unknown provenance flags: {sorted(bad)}")

    @property
    def n_scenarios(self) -> int:
        return self.scenarios.shape[0]


def sample_one(
    params: ModelParams,
    sched: NoiseSchedule,
    window: ArrangedWindow,
    conditions: ConditionTokens | None,
    rng: np.random.Generator,
    literal_noise_index: bool = False,
    observe: ObserveFn | None = None,
) -> np.ndarray:
    """One reverse-diffusion pass over the arranged window.

    Returns the generated window (normalized, arranged order). Historical
    positions (mask True) are re-noised to the destination level t-1 and
    blended back in after every reverse step; with literal_noise_index the
    history track is noised to level t instead. ``observe(t, x, y, eps)``
    sees the post-blend state at every step for instrumentation.
    """
    if params.config.conditional != (conditions is not None):
        raise PreconditionError(
            "conditional model requires condition tokens and an unconditional "
            "model forbids them"
        )
    y0 = np.asarray(window.values, dtype=np.float64)
    mask = np.asarray(window.mask, dtype=bool)
    if y0.shape != mask.shape:
        raise PreconditionError("window values and mask disagree in shape")
    if y0.shape[0] != params.config.window_len:
        raise PreconditionError(
            f"window length {y0.shape[0]} does not match model "
            f"window_len {params.config.window_len}"
        )
    x = rng.standard_normal(y0.shape[0])
    for t in range(sched.T, 0, -1):
        eps_hist = rng.standard_normal(y0.shape[0])
        level = t if literal_noise_index else t - 1
        ab = sched.alpha_bar[level]
        y = np.sqrt(ab) * y0 + np.sqrt(1.0 - ab) * eps_hist
        eps_hat = predict_noise(params, x, t, conditions)
        z = rng.standard_normal(y0.shape[0]) if t > 1 else np.zeros(y0.shape[0])
        x = reverse_step(x, t, eps_hat, z, sched)
        x = np.where(mask, y, x)
        if observe is not None:
            observe(t, x, y, eps_hist)
    if not np.all(np.isfinite(x)):
        raise NumericError("sampling produced non-finite values")
    return x


def _check_model(params: ModelParams, sched: NoiseSchedule, length: int, name: str) -> None:
    if params.schedule_fingerprint != sched.fingerprint():
        raise PreconditionError(
            f"{name} model was trained against schedule "
            f"{params.schedule_fingerprint}, sampler uses {sched.fingerprint()}"
        )
    if params.config.window_len != length:
        raise PreconditionError(
            f"{name} model window_len {params.config.window_len} does not "
            f"match the arranged window length {length}"
        )


def generate_set(
    cond_params: ModelParams,
    uncond_params: ModelParams,
    sched: NoiseSchedule,
    window: ArrangedWindow,
    cfg: SamplerConfig,
    stats: NormStats,
) -> ScenarioSet:
    """Generate the full ensemble: N - K conditional scenarios followed by
    K unconditional ones, forecast-day slices denormalized to MW.

    Scenario i uses rng stream seed xor i regardless of provenance, so the
    set is reproducible and order-independent.
    """
    if not cond_params.config.conditional:
        raise PreconditionError("cond_params must be a conditional model")
    if uncond_params.config.conditional:
        raise PreconditionError("uncond_params must be an unconditional model")
    length = len(window.values)
    _check_model(cond_params, sched, length, "conditional")
    _check_model(uncond_params, sched, length, "unconditional")
    k = cfg.n_unconditional
    m = cfg.N - k
    mask = np.asarray(window.mask, dtype=bool)
    s = int(np.count_nonzero(~mask))
    rows = np.empty((cfg.N, s), dtype=np.float64)
    provenance = []
    for i in range(cfg.N):
        rng = np.random.default_rng(cfg.seed ^ i)
        if i < m:
            sample = sample_one(
                cond_params, sched, window, window.conditions, rng,
                literal_noise_index=cfg.literal_noise_index,
            )
            provenance.append("conditional")
        else:
            sample = sample_one(
                uncond_params, sched, window, None, rng,
                literal_noise_index=cfg.literal_noise_index,
            )
            provenance.append("unconditional")
        rows[i] = stats.denormalize("net_load", sample[~mask])
    return ScenarioSet(scenarios=rows, provenance=tuple(provenance), window_ref=window)
