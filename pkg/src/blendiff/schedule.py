"""Noise schedules and the closed-form diffusion algebra built on them.

A schedule is a table of per-step noise variances beta_t for t = 1..T,
together with alpha_t = 1 - beta_t and the running products
alpha_bar_t = prod_{s<=t} alpha_s.  Everything downstream (forward noising,
x0 prediction, posterior moments) is a few lines of arithmetic over these
tables, so they are precomputed once in float64 and kept immutable.

Timesteps are 1-based in every public function.  alpha_bar(0) is defined
as 1 (the clean image); asking for beta(0) is an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "NoiseSchedule",
    "PosteriorParams",
    "ScheduleError",
    "make_schedule",
    "schedule_from_betas",
    "respace_schedule",
    "schedule_to_json",
    "schedule_from_json",
    "q_sample",
    "predict_x0",
    "posterior_params",
]

#: beta clip for the cosine schedule, keeps alpha_t bounded away from 0.
_COSINE_BETA_MAX = 0.999
_COSINE_S = 0.008


class ScheduleError(ValueError):
    """Raised for out-of-range schedule parameters or timesteps."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable per-step noise tables for a T-step process.

    betas[t-1] is the variance added at step t; alpha_bars[t-1] is the
    signal retention after t steps.  The three provenance fields exist so
    a parametrically built schedule can be serialized and rebuilt.
    """

    kind: str
    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    beta_start: float | None = None
    beta_end: float | None = None
    base_T: int | None = None  # original T when this table is a respacing

    def _check_t(self, t: int, lo: int = 1) -> None:
        if not isinstance(t, (int, np.integer)):
            raise ScheduleError(f"timestep must be an int, got {type(t).__name__}")
        if t < lo or t > self.T:
            raise ScheduleError(f"timestep {t} outside [{lo}, {self.T}]")

    def beta(self, t: int) -> float:
        self._check_t(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self._check_t(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal retention; alpha_bar(0) == 1 by definition."""
        self._check_t(t, lo=0)
        if t == 0:
            return 1.0
        return float(self.alpha_bars[t - 1])


class PosteriorParams(NamedTuple):
    """Gaussian posterior q(x_{t-1} | x_t, x0_hat): mean image and scalar variance."""

    mean: np.ndarray
    variance: float


def _finish(kind: str, betas: np.ndarray, **meta) -> NoiseSchedule:
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or betas.size < 1:
        raise ScheduleError("betas must be a non-empty 1-D array")
    if np.any(betas <= 0.0) or np.any(betas >= 1.0):
        raise ScheduleError("betas must lie strictly inside (0, 1)")
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    betas.setflags(write=False)
    alphas.setflags(write=False)
    alpha_bars.setflags(write=False)
    return NoiseSchedule(
        kind=kind,
        T=int(betas.size),
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        **meta,
    )


def make_schedule(
    kind: str,
    T: int,
    beta_start: float | None = None,
    beta_end: float | None = None,
) -> NoiseSchedule:
    """Build a full-length schedule.

    kind "linear": betas linearly spaced from beta_start to beta_end.
    kind "cosine": alpha_bar_t = f(t)/f(0) with
    f(t) = cos^2(((t/T + s) / (1 + s)) * pi/2), s = 0.008, and betas
    recovered as 1 - alpha_bar_t / alpha_bar_{t-1}, clipped to <= 0.999.
    beta_start/beta_end are ignored for the cosine kind.
    """
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    if kind == "linear":
        bs = 1e-4 if beta_start is None else float(beta_start)
        be = 0.02 if beta_end is None else float(beta_end)
        if not (0.0 < bs <= be < 1.0):
            raise ScheduleError(f"need 0 < beta_start <= beta_end < 1, got {bs}, {be}")
        betas = np.linspace(bs, be, T, dtype=np.float64)
        return _finish("linear", betas, beta_start=bs, beta_end=be)
    if kind == "cosine":
        s = _COSINE_S
        ts = np.arange(0, T + 1, dtype=np.float64)
        f = np.cos(((ts / T + s) / (1.0 + s)) * (math.pi / 2.0)) ** 2
        abar = f / f[0]
        betas = 1.0 - abar[1:] / abar[:-1]
        betas = np.minimum(betas, _COSINE_BETA_MAX)
        return _finish("cosine", betas)
    raise ScheduleError(f"unknown schedule kind {kind!r}")


def schedule_from_betas(betas, kind: str = "explicit") -> NoiseSchedule:
    """Build a schedule from an explicit beta table (not JSON-serializable)."""
    return _finish(kind, np.asarray(betas, dtype=np.float64))


def respace_schedule(schedule: NoiseSchedule, steps: int) -> NoiseSchedule:
    """Shorten a schedule to `steps` steps.

    Keeps the evenly spaced subsequence t_j = round(j * T / steps) of the
    original timesteps (the last one is always T) and recomputes betas from
    consecutive alpha_bar ratios, so alpha_bar is preserved exactly at the
    kept timesteps.
    """
    if not (1 <= steps <= schedule.T):
        raise ScheduleError(f"steps must be in [1, {schedule.T}], got {steps}")
    if steps == schedule.T:
        return schedule
    picks = np.round(np.arange(1, steps + 1) * (schedule.T / steps)).astype(int)
    if np.any(np.diff(picks) < 1):
        raise ScheduleError(f"respacing to {steps} steps collapses timesteps")
    kept = schedule.alpha_bars[picks - 1]
    prev = np.concatenate(([1.0], kept[:-1]))
    betas = 1.0 - kept / prev
    out = _finish(
        schedule.kind,
        betas,
        beta_start=schedule.beta_start,
        beta_end=schedule.beta_end,
        base_T=schedule.base_T or schedule.T,
    )
    return out


def schedule_to_json(schedule: NoiseSchedule) -> dict:
    """Parametric wire form: {kind, T, beta_start, beta_end, respaced_steps}."""
    if schedule.kind not in ("linear", "cosine"):
        raise ScheduleError(f"schedule kind {schedule.kind!r} has no parametric form")
    respaced = schedule.T if schedule.base_T else None
    return {
        "kind": schedule.kind,
        "T": schedule.base_T or schedule.T,
        "beta_start": schedule.beta_start,
        "beta_end": schedule.beta_end,
        "respaced_steps": respaced,
    }


def schedule_from_json(doc: dict) -> NoiseSchedule:
    sched = make_schedule(
        doc["kind"], int(doc["T"]), doc.get("beta_start"), doc.get("beta_end")
    )
    if doc.get("respaced_steps"):
        sched = respace_schedule(sched, int(doc["respaced_steps"]))
    return sched


def _as_image(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected an (H, W, C) array, got shape {x.shape}")
    return x


def q_sample(x0, t: int, noise, schedule: NoiseSchedule) -> np.ndarray:
    """Forward noising: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise."""
    x0 = _as_image(x0)
    noise = _as_image(noise)
    if noise.shape != x0.shape:
        raise ValueError(f"noise shape {noise.shape} != image shape {x0.shape}")
    ab = schedule.alpha_bar(t)
    if t < 1:
        raise ScheduleError("q_sample needs t >= 1")
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * noise


def predict_x0(x_t, eps_hat, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """Invert q_sample for a predicted noise: exact when eps_hat is the true noise."""
    x_t = _as_image(x_t)
    eps_hat = _as_image(eps_hat)
    ab = schedule.alpha_bar(t)
    if t < 1:
        raise ScheduleError("predict_x0 needs t >= 1")
    if ab <= 0.0:
        raise ScheduleError(f"alpha_bar({t}) is not positive")
    return (x_t - math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(ab)


def posterior_params(x_t, eps_hat, t: int, schedule: NoiseSchedule) -> PosteriorParams:
    """Reverse-step moments with the fixed (lower-bound) variance.

    mean = (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t)
    variance = beta_t * (1 - abar_{t-1}) / (1 - abar_t) for t > 1, else 0.
    """
    x_t = _as_image(x_t)
    eps_hat = _as_image(eps_hat)
    if eps_hat.shape != x_t.shape:
        raise ValueError(f"eps shape {eps_hat.shape} != image shape {x_t.shape}")
    schedule._check_t(t)
    beta = schedule.beta(t)
    ab_t = schedule.alpha_bar(t)
    mean = (x_t - (beta / math.sqrt(1.0 - ab_t)) * eps_hat) / math.sqrt(
        schedule.alpha(t)
    )
    if t > 1:
        variance = beta * (1.0 - schedule.alpha_bar(t - 1)) / (1.0 - ab_t)
    else:
        variance = 0.0
    return PosteriorParams(mean=mean, variance=float(variance))
