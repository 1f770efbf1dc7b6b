"""Noise schedule and exact denoising-diffusion kernels.

Everything here is plain float64 numpy and shape-agnostic: the kernels act
elementwise on arrays of any shape, and callers handle channel/time layout.
Step indices t run 1..T; index 0 of ``alpha_bar`` is defined as 1 so the
final reverse step (t=1) is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule of the noising chain.

    beta[t-1] is the noise variance added at step t; alpha = 1 - beta;
    alpha_bar has length T+1 with alpha_bar[0] = 1 and
    alpha_bar[t] = alpha_bar[t-1] * alpha[t-1] exactly.
    """

    T: int
    beta: np.ndarray
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)

    def fingerprint(self) -> tuple[int, float, float]:
        """(T, beta_1, beta_T) triple used to match models to schedules."""
        return (self.T, float(self.beta[0]), float(self.beta[-1]))


def linear_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Build a schedule with beta linearly spaced from beta_start to beta_end.

    Raises PreconditionError unless T >= 1 and 0 < beta_start <= beta_end < 1.
    """
    if T < 1:
        raise PreconditionError(f"schedule length must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise PreconditionError(
            f"beta bounds must satisfy 0 < start <= end < 1, got ({beta_start}, {beta_end})"
        )
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.empty(T + 1, dtype=np.float64)
    alpha_bar[0] = 1.0
    # cumulative product kept exact against the recurrence invariant
    np.cumprod(alpha, out=alpha_bar[1:])
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def _check_t(t: int, sched: NoiseSchedule) -> None:
    if not 1 <= t <= sched.T:
        raise PreconditionError(f"step index {t} outside schedule range 1..{sched.T}")


def _check_shapes(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if np.shape(a) != np.shape(b):
        raise PreconditionError(f"{what}: shape mismatch {np.shape(a)} vs {np.shape(b)}")


def forward_sample(x0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Noise clean data straight to step t:
    sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps."""
    _check_t(t, sched)
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _check_shapes(x0, eps, "forward_sample")
    ab = sched.alpha_bar[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def reverse_step(
    xt: np.ndarray, t: int, eps_hat: np.ndarray, z: np.ndarray, sched: NoiseSchedule
) -> np.ndarray:
    """One ancestral denoising step from level t to t-1.

    Returns (xt - (1-alpha_t)/sqrt(1-alpha_bar_t) * eps_hat) / sqrt(alpha_t)
    plus sqrt((1-alpha_bar_{t-1})/(1-alpha_bar_t) * beta_t) * z. The noise
    coefficient is exactly 0 at t=1 (alpha_bar_0 = 1), and z must be all
    zeros there.
    """
    _check_t(t, sched)
    xt = np.asarray(xt, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    _check_shapes(xt, eps_hat, "reverse_step eps_hat")
    _check_shapes(xt, z, "reverse_step z")
    if t == 1 and np.any(z != 0.0):
        raise PreconditionError("the final reverse step (t=1) is deterministic: z must be 0")
    a = sched.alpha[t - 1]
    ab = sched.alpha_bar[t]
    ab_prev = sched.alpha_bar[t - 1]
    mean = (xt - (1.0 - a) / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a)
    sigma = np.sqrt((1.0 - ab_prev) / (1.0 - ab) * sched.beta[t - 1])
    return mean + sigma * z


def epsilon_to_score(eps_hat: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    """Map a noise estimate to the score of the noised marginal:
    -eps_hat / sqrt(1 - alpha_bar_t)."""
    _check_t(t, sched)
    return -np.asarray(eps_hat, dtype=np.float64) / np.sqrt(1.0 - sched.alpha_bar[t])


def predict_x0(xt: np.ndarray, t: int, eps_hat: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Clean-data estimate implied by a noise estimate at level t:
    (xt - sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_bar_t)."""
    _check_t(t, sched)
    xt = np.asarray(xt, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    _check_shapes(xt, eps_hat, "predict_x0")
    ab = sched.alpha_bar[t]
    return (xt - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


def cfg_combine(eps_cond: np.ndarray, eps_uncond: np.ndarray, omega: float) -> np.ndarray:
    """Classifier-free mixture of noise estimates:
    (1 - omega) * eps_uncond + omega * eps_cond."""
    eps_cond = np.asarray(eps_cond, dtype=np.float64)
    eps_uncond = np.asarray(eps_uncond, dtype=np.float64)
    _check_shapes(eps_cond, eps_uncond, "cfg_combine")
    return (1.0 - omega) * eps_uncond + omega * eps_cond


def training_loss(eps_true: np.ndarray, eps_pred: np.ndarray) -> float:
    """Mean squared error between true and predicted noise."""
    eps_true = np.asarray(eps_true, dtype=np.float64)
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    _check_shapes(eps_true, eps_pred, "training_loss")
    diff = eps_pred - eps_true
    return float(np.mean(diff * diff))


def gaussian_oracle_eps(
    xt: np.ndarray, t: int, mu: float, var0: float, sched: NoiseSchedule
) -> np.ndarray:
    """Analytically optimal noise predictor for scalar Gaussian data N(mu, var0).

    At level t the noised marginal is N(sqrt(ab)*mu, ab*var0 + 1 - ab) with
    ab = alpha_bar_t; the minimum-MSE noise estimate is
    sqrt(1-ab) * (xt - sqrt(ab)*mu) / (ab*var0 + 1 - ab). Used as a ground
    truth predictor in tests and calibration checks.
    """
    _check_t(t, sched)
    xt = np.asarray(xt, dtype=np.float64)
    ab = sched.alpha_bar[t]
    vt = ab * var0 + 1.0 - ab
    return np.sqrt(1.0 - ab) * (xt - np.sqrt(ab) * mu) / vt
