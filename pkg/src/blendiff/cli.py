"""Command-line interface.

Exit codes: 2 for invalid arguments, 3 for I/O failures, 4 for sampling
failures.  With ``--json`` errors go to stderr as one JSON object per line.
"""

from __future__ import annotations

import json
import math
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import editor
from .guidance import UnknownPromptError
from .imaging import (
    ImageFormatError,
    Raster8,
    decode_png,
    encode_png,
    from_diffusion_domain,
    mask_from_raster,
    split_alpha,
    to_diffusion_domain,
)
from .samplers import SamplingError
from .schedule import make_schedule, respace_schedule

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_SAMPLING = 4


_JSON_MODE = False


class CliError(click.ClickException):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code

    def show(self, file=None) -> None:
        out = file or sys.stderr
        if _json_mode():
            print(json.dumps({"error": self.message, "code": self.exit_code}), file=out)
        else:
            print(f"error: {self.message}", file=out)


def _json_mode() -> bool:
    return _JSON_MODE


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text()
    if path.endswith(".json"):
        return json.loads(text)
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    return tomllib.loads(text)


def _read_image(path: str) -> np.ndarray:
    raster = _read_raster(path)
    if raster.channels == 4:
        raster, _ = split_alpha(raster)
    return to_diffusion_domain(raster)


def _read_raster(path: str) -> Raster8:
    try:
        return decode_png(Path(path).read_bytes())
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}", EXIT_IO) from exc
    except ImageFormatError as exc:
        raise CliError(f"{path}: {exc}", EXIT_IO) from exc


def _read_mask(path: str, alpha_fallback: Raster8 | None = None) -> np.ndarray:
    raster = _read_raster(path)
    return mask_from_raster(raster)


def _mask_for(image_path: str, mask_path: str | None) -> tuple[np.ndarray, np.ndarray | None]:
    """Image plus mask; an RGBA image's alpha channel doubles as the mask."""
    raster = _read_raster(image_path)
    alpha_mask = None
    if raster.channels == 4:
        raster, alpha_mask = split_alpha(raster)
    image = to_diffusion_domain(raster)
    if mask_path is not None:
        return image, _read_mask(mask_path)
    return image, alpha_mask


def _build_engine(ctx_obj: dict) -> editor.EditEngine:
    try:
        return editor.default_engine(
            lexicon_path=ctx_obj.get("lexicon"),
            prior_path=ctx_obj.get("prior"),
            steps=ctx_obj.get("timesteps") or 100,
            workers=ctx_obj.get("workers") or 1,
        )
    except OSError as exc:
        raise CliError(f"cannot load engine data: {exc}", EXIT_IO) from exc
    except (ValueError, KeyError) as exc:
        raise CliError(f"bad engine data: {exc}", EXIT_USAGE) from exc


def _run_and_write(job: editor.EditJob, engine: editor.EditEngine, out_dir: str) -> None:
    try:
        job.validate(engine.schedule)
        if engine.model is not None:
            for prompt in (job.request.prompt, job.prompt_left, job.prompt_right):
                if prompt:
                    engine.model.embed_text(prompt)
    except UnknownPromptError as exc:
        raise CliError(exc.args[0], EXIT_USAGE) from exc
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    try:
        results = editor.run_job(job, engine, _progress_printer())
    except UnknownPromptError as exc:
        raise CliError(exc.args[0], EXIT_USAGE) from exc
    except editor.EditJobError as exc:
        raise CliError(str(exc), EXIT_SAMPLING) from exc
    except SamplingError as exc:
        raise CliError(str(exc), EXIT_SAMPLING) from exc
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create {out_dir}: {exc.strerror or exc}", EXIT_IO) from exc
    listing = []
    for res in results:
        if res.error is not None:
            listing.append({"rank": None, "seed": res.seed, "error": res.error})
            continue
        name = f"rank_{res.rank:03d}.png"
        (out / name).write_bytes(encode_png(from_diffusion_domain(res.image)))
        listing.append({"rank": res.rank, "seed": res.seed, "score": res.score, "file": name})
    report = {
        "application": job.application,
        "config": editor.job_to_wire(job, include_source=False),
        "results": listing,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if _json_mode():
        print(json.dumps(report, sort_keys=True))
    else:
        for row in listing:
            if row.get("error"):
                print(f"seed {row['seed']}: failed: {row['error']}")
            else:
                print(f"rank {row['rank']:3d}  seed {row['seed']:6d}  score {row['score']:+.6f}")
        print(f"wrote {len([r for r in listing if not r.get('error')])} images to {out}")


def _progress_printer():
    if _json_mode() or not sys.stderr.isatty():
        return None

    def show(done: int, total: int) -> None:
        print(f"\r{done}/{total} samples", end="", file=sys.stderr)
        if done == total:
            print(file=sys.stderr)

    return show


def _common_options(fn):
    for opt in reversed(
        [
            click.option("--prompt", default="", help="Lexicon prompt; empty disables guidance."),
            click.option("--sampler", default="blended", show_default=True,
                         type=click.Choice(["blended", "local_guided", "ddim_blended", "naive_blend"])),
            click.option("--k", type=int, default=None, help="Starting timestep."),
            click.option("--lam", "--lambda", "lam", type=float, default=1000.0,
                         show_default=True, help="Background preservation weight."),
            click.option("--n-aug", type=int, default=16, show_default=True,
                         help="Extending augmentations per gradient."),
            click.option("--samples", type=int, default=8, show_default=True,
                         help="Candidates to generate and rank."),
            click.option("--seed", type=int, default=0, show_default=True),
            click.option("--guidance-scale", type=float, default=1.0, show_default=True),
            click.option("--out", required=True, help="Output directory."),
        ]
    ):
        fn = opt(fn)
    return fn


def _make_job(
    application: str,
    image: np.ndarray,
    mask: np.ndarray | None,
    prompt: str,
    sampler: str,
    k: int,
    lam: float,
    n_aug: int,
    samples: int,
    seed: int,
    guidance_scale: float,
    **extra,
) -> editor.EditJob:
    from .samplers import SampleRequest

    request = SampleRequest(
        source=image,
        mask=mask,
        prompt=prompt,
        k=k,
        sampler=sampler,
        lam=lam,
        n_aug=n_aug,
        seed=seed,
        guidance_scale=guidance_scale,
    )
    return editor.EditJob(
        request=request, num_samples=samples, application=application, **extra
    )


@click.group()
@click.option("--config", "config_path", default=None, type=click.Path(), help="TOML or JSON defaults file.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output and errors.")
@click.option("--lexicon", default=None, type=click.Path(), help="Lexicon JSON override.")
@click.option("--prior", default=None, type=click.Path(), help="Mixture prior JSON override.")
@click.option("--timesteps", default=None, type=int, help="Respaced step count (default 100).")
@click.pass_context
def main(ctx, config_path, as_json, lexicon, prior, timesteps):
    """Text-driven local image edits with a verifiable diffusion sampler."""
    global _JSON_MODE
    _JSON_MODE = as_json
    if config_path is not None:
        try:
            ctx.default_map = _load_config(config_path)
        except OSError as exc:
            raise CliError(f"cannot read config {config_path}: {exc}", EXIT_IO) from exc
        except ValueError as exc:
            raise CliError(f"bad config {config_path}: {exc}", EXIT_USAGE) from exc
    ctx.obj = {
        "lexicon": lexicon,
        "prior": prior,
        "timesteps": timesteps,
    }


@main.command()
@click.option("--image", required=True, type=click.Path(), help="Source PNG (alpha = mask).")
@click.option("--mask", "mask_path", default=None, type=click.Path(), help="Mask PNG.")
@_common_options
@click.pass_obj
def edit(obj, image, mask_path, prompt, sampler, k, lam, n_aug, samples, seed, guidance_scale, out):
    """Edit the masked region of an image toward a prompt."""
    img, mask = _mask_for(image, mask_path)
    if mask is None:
        raise CliError("no mask: pass --mask or use an RGBA image", EXIT_USAGE)
    job = _make_job(
        "object_edit", img, mask, prompt, sampler, 75 if k is None else k,
        lam, n_aug, samples, seed, guidance_scale,
    )
    _run_and_write(job, _build_engine(obj), out)


@main.command()
@click.option("--image", required=True, type=click.Path())
@click.option("--mask", "mask_path", default=None, type=click.Path(),
              help="Foreground mask; the area to KEEP.")
@_common_options
@click.pass_obj
def background(obj, image, mask_path, prompt, sampler, k, lam, n_aug, samples, seed, guidance_scale, out):
    """Replace everything outside the mask (k defaults deeper, to 67)."""
    img, fg = _mask_for(image, mask_path)
    if fg is None:
        raise CliError("no mask: pass --mask or use an RGBA image", EXIT_USAGE)
    job = _make_job(
        "background_replace", img, 1.0 - fg, prompt, sampler,
        67 if k is None else k, lam, n_aug, samples, seed, guidance_scale,
    )
    _run_and_write(job, _build_engine(obj), out)


@main.command()
@click.option("--image", required=True, type=click.Path())
@click.option("--scribble", "scribble_path", required=True, type=click.Path(),
              help="Scribble layer PNG (same size as the image).")
@click.option("--scribble-mask", "scribble_mask_path", default=None, type=click.Path(),
              help="Where the scribble applies; defaults to the scribble's alpha.")
@click.option("--mask", "mask_path", default=None, type=click.Path(),
              help="Edit region override; defaults to the dilated scribble mask.")
@_common_options
@click.pass_obj
def scribble(obj, image, scribble_path, scribble_mask_path, mask_path, prompt, sampler,
             k, lam, n_aug, samples, seed, guidance_scale, out):
    """Blend a rough scribble into the image and re-render it."""
    img = _read_image(image)
    scr_raster = _read_raster(scribble_path)
    scr_mask = None
    if scr_raster.channels == 4:
        scr_raster, scr_mask = split_alpha(scr_raster)
    scr = to_diffusion_domain(scr_raster)
    if scribble_mask_path is not None:
        scr_mask = _read_mask(scribble_mask_path)
    if scr_mask is None:
        raise CliError("no scribble mask: pass --scribble-mask or an RGBA scribble", EXIT_USAGE)
    mask = _read_mask(mask_path) if mask_path else None
    job = _make_job(
        "scribble", img, mask, prompt, sampler, 60 if k is None else k,
        lam, n_aug, samples, seed, guidance_scale,
        scribble_image=scr, scribble_mask=scr_mask,
    )
    _run_and_write(job, _build_engine(obj), out)


@main.command()
@click.option("--image", required=True, type=click.Path())
@click.option("--left-prompt", default="", help="Prompt guiding leftward growth.")
@click.option("--right-prompt", default="", help="Prompt guiding rightward growth.")
@click.option("--segments-left", type=int, default=0, show_default=True)
@click.option("--segments-right", type=int, default=0, show_default=True)
@click.option("--k-min", type=int, default=40, show_default=True)
@click.option("--k-max", type=int, default=75, show_default=True)
@click.option("--denoise-k", type=int, default=30, show_default=True)
@click.option("--samples", type=int, default=4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--lam", "--lambda", "lam", type=float, default=1000.0, show_default=True)
@click.option("--n-aug", type=int, default=16, show_default=True)
@click.option("--guidance-scale", type=float, default=1.0, show_default=True)
@click.option("--out", required=True)
@click.pass_obj
def extrapolate(obj, image, left_prompt, right_prompt, segments_left, segments_right,
                k_min, k_max, denoise_k, samples, seed, lam, n_aug, guidance_scale, out):
    """Grow the image sideways one quarter-width segment at a time."""
    img = _read_image(image)
    from .samplers import SampleRequest

    request = SampleRequest(
        source=img, mask=None, prompt="", k=k_max, sampler="blended",
        lam=lam, n_aug=n_aug, seed=seed, guidance_scale=guidance_scale,
    )
    job = editor.EditJob(
        request=request,
        num_samples=samples,
        application="extrapolate",
        prompt_left=left_prompt,
        prompt_right=right_prompt,
        segments_left=segments_left,
        segments_right=segments_right,
        k_min=k_min,
        k_max=k_max,
        denoise_k=denoise_k,
    )
    _run_and_write(job, _build_engine(obj), out)


@main.group()
def bench():
    """Accuracy and speed checks for the analytic pieces."""


def _chain_moments_single(mu: float, sigma: float, k: int, schedule) -> tuple[float, float]:
    """Exact terminal (mean, variance) of the free chain for a one-component prior.

    With one Gaussian component the denoised x̂0 is affine in x_t, so the whole
    reverse chain stays Gaussian and its moments obey a scalar recursion:

        x̂0 = A·x_t + B·μ,  A = (√ᾱ/(1−ᾱ))/P,  B = (1/σ²)/P,  P = 1/σ² + ᾱ/(1−ᾱ)
        x_{t−1} = (C·A + D)·x_t + C·B·μ + √β̃·z

    where C, D are the usual posterior-mean coefficients.  The mean comes back
    to μ exactly; the variance falls short of σ² because β̃ is the lower-bound
    choice of step variance.
    """
    ab_k = schedule.alpha_bar(k)
    m = math.sqrt(ab_k) * mu
    v = 1.0 - ab_k
    for t in range(k, 0, -1):
        ab = schedule.alpha_bar(t)
        beta = schedule.beta(t)
        alpha = schedule.alpha(t)
        precision = 1.0 / sigma**2 + ab / (1.0 - ab)
        a_hat = (math.sqrt(ab) / (1.0 - ab)) / precision
        b_hat = (1.0 / sigma**2) / precision
        c = beta * math.sqrt(ab) / ((1.0 - ab) * math.sqrt(alpha))
        d = (1.0 - beta / (1.0 - ab)) / math.sqrt(alpha)
        gain = c * a_hat + d
        m = gain * m + c * b_hat * mu
        v = gain * gain * v
        if t > 1:
            v += beta * (1.0 - schedule.alpha_bar(t - 1)) / (1.0 - ab)
    return m, v


@bench.command("gmm")
@click.option("--components", required=True,
              help='Mixture as "weight:mean:sigma,..." e.g. "0.5:-0.3:0.2,0.5:0.4:0.25".')
@click.option("--steps", type=int, default=100, show_default=True)
@click.option("--runs", type=int, default=1000, show_default=True,
              help="Full reverse chains to sample.")
@click.option("--size", type=int, default=8, show_default=True, help="Square image side.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.pass_obj
def bench_gmm(obj, components, steps, runs, size, seed):
    """Moment-match sampled reverse chains against their mixture prior.

    Draws RUNS images by running the unguided chain from pure noise and
    compares the sample mean and per-pixel variance with the mixture's
    analytic moments.  Exits 4 when the sample mean drifts by more than
    5% of the prior's standard deviation.
    """
    import time as _time

    from .denoisers import GaussianMixturePrior, GmmDenoiser, MixtureComponent
    from .samplers import SampleRequest, run_sampler

    shape = (size, size, 1)
    try:
        parts = []
        for part in components.split(","):
            w, mu, sigma = (float(v) for v in part.split(":"))
            parts.append(
                MixtureComponent(weight=w, mean=np.full(shape, mu), sigma=sigma)
            )
        if not parts:
            raise ValueError("no components")
        prior = GaussianMixturePrior(tuple(parts))
    except ValueError as exc:
        raise CliError(f"bad --components: {exc}", EXIT_USAGE) from exc
    weights = np.array([c.weight for c in prior.components])
    means = np.array([float(c.mean.flat[0]) for c in prior.components])
    sigmas = np.array([c.sigma for c in prior.components])
    prior_mean = float(weights @ means)
    prior_var = float(weights @ (sigmas**2 + means**2) - prior_mean**2)
    prior_std = math.sqrt(prior_var)

    schedule = respace_schedule(make_schedule("linear", 1000, 1e-4, 0.02), steps)
    denoiser = GmmDenoiser(prior)
    source = np.full(shape, prior_mean)
    mask = np.ones((size, size))
    samples = np.empty((runs, size, size))
    start = _time.perf_counter()
    for i in range(runs):
        req = SampleRequest(
            source=source, mask=mask, prompt="", k=steps, sampler="naive_blend",
            lam=0.0, n_aug=1, seed=seed + i, guidance_scale=0.0,
        )
        samples[i] = run_sampler(req, denoiser, None, schedule)[..., 0]
    elapsed = _time.perf_counter() - start

    sample_mean = float(samples.mean())
    median_pixel_var = float(np.median(samples.var(axis=0, ddof=1)))
    mean_error_pct = 100.0 * abs(sample_mean - prior_mean) / prior_std
    expected_ratio = None
    if len(parts) == 1:
        _, v_exact = _chain_moments_single(means[0], sigmas[0], steps, schedule)
        expected_ratio = v_exact / prior_var
    report = {
        "components": [
            {"weight": float(w), "mean": float(m), "sigma": float(s)}
            for w, m, s in zip(weights, means, sigmas)
        ],
        "prior_mean": prior_mean,
        "prior_std": prior_std,
        "sample_mean": sample_mean,
        "mean_error_pct": mean_error_pct,
        "median_pixel_variance": median_pixel_var,
        "variance_ratio": median_pixel_var / prior_var,
        "expected_variance_ratio": expected_ratio,
        "runs": runs,
        "steps": steps,
        "size": size,
        "seconds": elapsed,
        "chains_per_second": runs / elapsed if elapsed > 0 else float("inf"),
        "pass": bool(mean_error_pct < 5.0),
    }
    if _json_mode():
        print(json.dumps(report, sort_keys=True))
    else:
        print(f"prior mean {prior_mean:+.4f}   sample mean {sample_mean:+.4f}   "
              f"error {mean_error_pct:.2f}% of prior std")
        line = (f"prior var  {prior_var:.4f}   median pixel var {median_pixel_var:.4f}   "
                f"ratio {report['variance_ratio']:.3f}")
        if expected_ratio is not None:
            line += f" (fixed-variance chain predicts {expected_ratio:.3f})"
        print(line)
        print(f"{runs} chains of {steps} steps in {elapsed:.2f}s "
              f"({report['chains_per_second']:.0f}/s)")
        print(f"moment check: {'pass' if report['pass'] else 'FAIL'}")
    if not report["pass"]:
        raise CliError(
            f"moment check failed: sample mean off by {mean_error_pct:.2f}% "
            "of the prior std (threshold 5%)",
            EXIT_SAMPLING,
        )


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=None, help="Default 8484 or $BLENDIFF_PORT.")
@click.option("--workspace", default=None, type=click.Path(),
              help="Job storage directory; default ./blendiff-workspace or $BLENDIFF_WORKSPACE.")
@click.option("--workers", type=int, default=2, show_default=True)
@click.option("--ui", "ui_dir", default=None, type=click.Path(), help="Static UI bundle directory.")
@click.pass_obj
def serve(obj, host, port, workspace, workers, ui_dir):
    """Run the HTTP job service."""
    import uvicorn

    from .service import create_app

    if port is None:
        port = int(os.environ.get("BLENDIFF_PORT", "8484"))
    if workspace is None:
        workspace = os.environ.get("BLENDIFF_WORKSPACE", "blendiff-workspace")
    engine = _build_engine({**obj, "workers": workers})
    app = create_app(engine, Path(workspace), workers=workers,
                     ui_dir=Path(ui_dir) if ui_dir else None)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
