"""Reverse-process samplers: blended, locally guided, DDIM-blended, naive.

All four share one request shape and one RNG contract.  From the request
seed, four named substreams are derived (SeedSequence spawn order: init,
fg, bg, aug) and consumed in a documented order:

- init: one standard-normal image for x_k before the loop;
- fg:   one standard-normal image per step (the foreground draw);
- bg:   one standard-normal image per step (the background draw;
        untouched by samplers without a background branch);
- aug:  corner-jitter draws inside guidance_gradient.

Substreams rather than one serial stream make paired runs exact: turning
guidance off, or switching samplers that share a branch, leaves the other
branches' draws bit-identical for the same seed.  Trace capture never
consumes randomness.

k == 0 is an explicit no-op for every sampler (the source is returned
unchanged); for k >= 1 the request noises the source to level k and walks
t = k..1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .guidance import LexiconEmbedder, clip_distance, guidance_gradient
from .schedule import NoiseSchedule

__all__ = [
    "SAMPLER_NAMES",
    "SampleRequest",
    "SamplingError",
    "TraceRecord",
    "trace_to_jsonl",
    "rng_streams",
    "sample_blended",
    "sample_local_guided",
    "sample_ddim_blended",
    "sample_naive_blend",
    "run_sampler",
]

SAMPLER_NAMES = ("blended", "local_guided", "ddim_blended", "naive_blend")


class SamplingError(RuntimeError):
    """Non-finite latent or gradient during sampling."""

    def __init__(self, message: str, step: int, grad_norm: float | None = None):
        detail = f"{message} (step t={step}"
        if grad_norm is not None:
            detail += f", |grad|={grad_norm:.3e}"
        detail += ")"
        super().__init__(detail)
        self.step = step
        self.grad_norm = grad_norm


@dataclass(frozen=True)
class SampleRequest:
    """One sampling run over a source image.

    prompt == "" disables text guidance entirely (pure inpainting);
    guidance_scale scales the per-step mean shift.  bg_index_shift and
    augment_bg_loss are compatibility switches documented where used.
    """

    source: np.ndarray
    mask: np.ndarray | None
    prompt: str = ""
    k: int = 75
    sampler: str = "blended"
    lam: float = 1000.0
    n_aug: int = 16
    seed: int = 0
    guidance_scale: float = 1.0
    bg_index_shift: bool = False
    augment_bg_loss: bool = False

    def validate(self, schedule: NoiseSchedule) -> None:
        if self.mask is None:
            raise ValueError("request needs a mask")
        src = np.asarray(self.source, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=np.float64)
        if src.ndim != 3 or src.shape[2] not in (1, 3):
            raise ValueError(f"source must be (H, W, C), C in {{1,3}}; got {src.shape}")
        if mask.shape != src.shape[:2]:
            raise ValueError(f"mask shape {mask.shape} != image plane {src.shape[:2]}")
        if np.any(mask < 0.0) or np.any(mask > 1.0):
            raise ValueError("mask values must lie in [0, 1]")
        if not np.all(np.isfinite(src)):
            raise ValueError("source contains non-finite values")
        if not (0 <= self.k <= schedule.T):
            raise ValueError(f"k must be in [0, {schedule.T}], got {self.k}")
        if self.sampler not in SAMPLER_NAMES:
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.n_aug < 1:
            raise ValueError(f"n_aug must be >= 1, got {self.n_aug}")
        if self.lam < 0.0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")


@dataclass(frozen=True)
class TraceRecord:
    """Optional per-step snapshot (never part of the RNG transcript)."""

    t: int
    x_t: np.ndarray
    x0_hat: np.ndarray
    loss: float | None
    grad_norm: float | None

    def to_json(self) -> dict:
        return {
            "t": self.t,
            "x_t": self.x_t.tolist(),
            "x0_hat": self.x0_hat.tolist(),
            "loss": self.loss,
            "grad_norm": self.grad_norm,
        }


def trace_to_jsonl(trace: list[TraceRecord]) -> str:
    return "\n".join(json.dumps(rec.to_json()) for rec in trace) + ("\n" if trace else "")


@dataclass(frozen=True)
class RngStreams:
    init: np.random.Generator
    fg: np.random.Generator
    bg: np.random.Generator
    aug: np.random.Generator


def rng_streams(seed: int) -> RngStreams:
    """Named substreams (init, fg, bg, aug) derived from one seed."""
    children = np.random.SeedSequence(seed).spawn(4)
    return RngStreams(*(np.random.default_rng(ss) for ss in children))


@dataclass(frozen=True)
class _Tables:
    """Schedule scalars indexed by t-1, precomputed once per run."""

    sqrt_ab: np.ndarray
    sqrt_1m_ab: np.ndarray
    inv_sqrt_alpha: np.ndarray
    eps_coef: np.ndarray       # beta_t / sqrt(1 - abar_t)
    post_var: np.ndarray
    post_sigma: np.ndarray
    sqrt_ab_prev: np.ndarray   # sqrt(abar_{t-1}), abar_0 == 1
    sqrt_1m_ab_prev: np.ndarray


def _tables(schedule: NoiseSchedule) -> _Tables:
    ab = schedule.alpha_bars
    ab_prev = np.concatenate(([1.0], ab[:-1]))
    betas = schedule.betas
    post_var = betas * (1.0 - ab_prev) / (1.0 - ab)
    post_var[0] = 0.0
    return _Tables(
        sqrt_ab=np.sqrt(ab),
        sqrt_1m_ab=np.sqrt(1.0 - ab),
        inv_sqrt_alpha=1.0 / np.sqrt(schedule.alphas),
        eps_coef=betas / np.sqrt(1.0 - ab),
        post_var=post_var,
        post_sigma=np.sqrt(post_var),
        sqrt_ab_prev=np.sqrt(ab_prev),
        sqrt_1m_ab_prev=np.sqrt(1.0 - ab_prev),
    )


@dataclass
class _Run:
    """Shared per-run state for the sampler loops."""

    req: SampleRequest
    schedule: NoiseSchedule
    denoiser: object
    model: LexiconEmbedder | None
    trace_sink: Callable[[TraceRecord], None] | None
    x: np.ndarray = field(init=False)
    mask3: np.ndarray = field(init=False)
    rngs: RngStreams = field(init=False)
    tab: _Tables = field(init=False)
    guided: bool = field(init=False)
    mask_is_ones: bool = field(init=False)

    def __post_init__(self):
        self.req.validate(self.schedule)
        self.x = np.asarray(self.req.source, dtype=np.float64)
        mask = np.asarray(self.req.mask, dtype=np.float64)
        self.mask3 = mask[:, :, None]
        self.mask_is_ones = bool(np.all(mask == 1.0))
        self.rngs = rng_streams(self.req.seed)
        self.tab = _tables(self.schedule)
        self.guided = bool(
            self.req.prompt and self.req.guidance_scale != 0.0 and self.model is not None
        )
        if self.req.prompt and self.model is not None:
            self.model.embed_text(self.req.prompt)  # fail fast on unknown prompts

    def init_latent(self) -> np.ndarray:
        """x_k ~ N(sqrt(abar_k) x, (1 - abar_k) I), drawn from the init stream."""
        k = self.req.k
        noise = self.rngs.init.standard_normal(self.x.shape)
        return self.tab.sqrt_ab[k - 1] * self.x + self.tab.sqrt_1m_ab[k - 1] * noise

    def text_gradient(self, x0_hat: np.ndarray, lam: float) -> np.ndarray:
        return guidance_gradient(
            self.model,
            x0_hat,
            self.x,
            np.asarray(self.req.mask, dtype=np.float64),
            self.req.prompt,
            self.req.n_aug,
            lam,
            self.rngs.aug,
            augment_bg=self.req.augment_bg_loss,
        )

    def check_finite(self, arr: np.ndarray, t: int, grad_norm: float | None):
        if not np.all(np.isfinite(arr)):
            raise SamplingError("latent became non-finite", t, grad_norm)

    def record(self, t, x_t, x0_hat, grad):
        if self.trace_sink is None:
            return
        loss = None
        if self.guided:
            loss = clip_distance(
                self.model, x0_hat, np.asarray(self.req.mask, np.float64), self.req.prompt
            )
        gn = float(np.sqrt(np.vdot(grad, grad).real)) if grad is not None else None
        self.trace_sink(TraceRecord(t, x_t.copy(), x0_hat.copy(), loss, gn))


def _bg_draw(run: _Run, t: int) -> np.ndarray:
    """Noised source for the background branch at the step's literal index.

    The default matches the written update (abar_t); bg_index_shift uses
    abar_{t-1}, the index of the latent being produced.
    """
    tb = t - 1 if run.req.bg_index_shift else t
    noise = run.rngs.bg.standard_normal(run.x.shape)
    if tb == 0:
        sa, sn = 1.0, 0.0
    else:
        sa, sn = run.tab.sqrt_ab[tb - 1], run.tab.sqrt_1m_ab[tb - 1]
    return sa * run.x + sn * noise


def sample_blended(
    req: SampleRequest,
    denoiser,
    model: LexiconEmbedder | None,
    schedule: NoiseSchedule,
    trace_sink: Callable[[TraceRecord], None] | None = None,
) -> np.ndarray:
    """Blended reverse walk: guided foreground, renoised source background.

    Per step t = k..1: predict eps, form the posterior mean/variance, shift
    the mean by variance * guidance_scale * descent_direction, draw the
    foreground; draw the background as the source noised to the step's
    index; blend through the mask.  The final output re-pastes the source
    outside the mask bit-exactly.
    """
    run = _Run(req, schedule, denoiser, model, trace_sink)
    if req.k == 0:
        return run.x.copy()
    tab = run.tab
    x_t = run.init_latent()
    x_fg = x_t
    for t in range(req.k, 0, -1):
        i = t - 1
        eps = run.denoiser.predict_eps(x_t, t, schedule)
        mean = tab.inv_sqrt_alpha[i] * (x_t - tab.eps_coef[i] * eps)
        var = tab.post_var[i]
        eps_fg = run.rngs.fg.standard_normal(run.x.shape)
        x_bg = _bg_draw(run, t)
        grad = None
        x0_hat = None
        if run.guided or trace_sink is not None:
            x0_hat = (x_t - tab.sqrt_1m_ab[i] * eps) / tab.sqrt_ab[i]
        if run.guided:
            grad = run.text_gradient(x0_hat, 0.0)
            mean = mean + (var * req.guidance_scale) * grad
        x_fg = mean + tab.post_sigma[i] * eps_fg
        x_t = x_fg if run.mask_is_ones else x_fg * run.mask3 + x_bg * (1.0 - run.mask3)
        gn = float(np.sqrt(np.vdot(grad, grad).real)) if grad is not None else None
        run.check_finite(x_t, t, gn)
        if trace_sink is not None:
            run.record(t, x_t, x0_hat, grad)
    return x_fg if run.mask_is_ones else x_fg * run.mask3 + run.x * (1.0 - run.mask3)


def sample_local_guided(
    req: SampleRequest,
    denoiser,
    model: LexiconEmbedder | None,
    schedule: NoiseSchedule,
    trace_sink: Callable[[TraceRecord], None] | None = None,
) -> np.ndarray:
    """Single-chain guided walk with the combined loss, no blending.

    The per-step mean is shifted by the descent direction of
    clip_distance + lam * bg_distance; nothing is pasted at the end, so
    background preservation is only as strong as lam makes it.
    """
    run = _Run(req, schedule, denoiser, model, trace_sink)
    if req.k == 0:
        return run.x.copy()
    tab = run.tab
    x_t = run.init_latent()
    for t in range(req.k, 0, -1):
        i = t - 1
        eps = run.denoiser.predict_eps(x_t, t, schedule)
        mean = tab.inv_sqrt_alpha[i] * (x_t - tab.eps_coef[i] * eps)
        var = tab.post_var[i]
        eps_fg = run.rngs.fg.standard_normal(run.x.shape)
        grad = None
        x0_hat = None
        if run.guided or trace_sink is not None:
            x0_hat = (x_t - tab.sqrt_1m_ab[i] * eps) / tab.sqrt_ab[i]
        if run.guided:
            grad = run.text_gradient(x0_hat, req.lam)
            mean = mean + (var * req.guidance_scale) * grad
        x_t = mean + tab.post_sigma[i] * eps_fg
        gn = float(np.sqrt(np.vdot(grad, grad).real)) if grad is not None else None
        run.check_finite(x_t, t, gn)
        if trace_sink is not None:
            run.record(t, x_t, x0_hat, grad)
    return x_t


def sample_ddim_blended(
    req: SampleRequest,
    denoiser,
    model: LexiconEmbedder | None,
    schedule: NoiseSchedule,
    trace_sink: Callable[[TraceRecord], None] | None = None,
) -> np.ndarray:
    """Deterministic foreground updates; stochastic background; blending.

    eps_hat := eps - sqrt(1 - abar_t) * guidance_scale * descent_direction;
    x_fg := sqrt(abar_{t-1}) * x0_hat + sqrt(1 - abar_{t-1}) * eps_hat.
    Per-step draws: background first, then augmentation transforms (the fg
    stream is never consumed).
    """
    run = _Run(req, schedule, denoiser, model, trace_sink)
    if req.k == 0:
        return run.x.copy()
    tab = run.tab
    x_t = run.init_latent()
    x_fg = x_t
    for t in range(req.k, 0, -1):
        i = t - 1
        eps = run.denoiser.predict_eps(x_t, t, schedule)
        x_bg = _bg_draw(run, t)
        grad = None
        x0_hat = (x_t - tab.sqrt_1m_ab[i] * eps) / tab.sqrt_ab[i]
        eps_hat = eps
        if run.guided:
            grad = run.text_gradient(x0_hat, 0.0)
            eps_hat = eps - (tab.sqrt_1m_ab[i] * req.guidance_scale) * grad
        x0_dir = (x_t - tab.sqrt_1m_ab[i] * eps_hat) / tab.sqrt_ab[i]
        x_fg = tab.sqrt_ab_prev[i] * x0_dir + tab.sqrt_1m_ab_prev[i] * eps_hat
        x_t = x_fg if run.mask_is_ones else x_fg * run.mask3 + x_bg * (1.0 - run.mask3)
        gn = float(np.sqrt(np.vdot(grad, grad).real)) if grad is not None else None
        run.check_finite(x_t, t, gn)
        if trace_sink is not None:
            run.record(t, x_t, x0_hat, grad)
    return x_fg if run.mask_is_ones else x_fg * run.mask3 + run.x * (1.0 - run.mask3)


def sample_naive_blend(
    req: SampleRequest,
    denoiser,
    model: LexiconEmbedder | None,
    schedule: NoiseSchedule,
    trace_sink: Callable[[TraceRecord], None] | None = None,
) -> np.ndarray:
    """Guided walk with lam = 0, then one composite against the source."""
    inner = replace(req, lam=0.0, sampler="local_guided")
    out = sample_local_guided(inner, denoiser, model, schedule, trace_sink)
    if req.k == 0:
        return out
    mask3 = np.asarray(req.mask, dtype=np.float64)[:, :, None]
    src = np.asarray(req.source, dtype=np.float64)
    return out * mask3 + src * (1.0 - mask3)


_SAMPLERS = {
    "blended": sample_blended,
    "local_guided": sample_local_guided,
    "ddim_blended": sample_ddim_blended,
    "naive_blend": sample_naive_blend,
}


def run_sampler(
    req: SampleRequest,
    denoiser,
    model: LexiconEmbedder | None,
    schedule: NoiseSchedule,
    trace_sink: Callable[[TraceRecord], None] | None = None,
) -> np.ndarray:
    try:
        fn = _SAMPLERS[req.sampler]
    except KeyError:
        raise ValueError(f"unknown sampler {req.sampler!r}") from None
    return fn(req, denoiser, model, schedule, trace_sink)
