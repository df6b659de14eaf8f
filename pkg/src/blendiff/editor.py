"""Edit applications over the samplers: ranked runs, scribbles, extrapolation,
and multi-step sessions.

An EditEngine bundles what every application needs (schedule, denoiser,
guidance model, worker count).  An EditJob is one user-level edit: a
sampling request plus batch size and application-specific parameters.
run_edit produces a ranked result list; scribble_edit and extrapolate are
built on top of it; sessions chain edits so each step starts from the
previous step's chosen output.
"""

from __future__ import annotations

import base64
import importlib.resources
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .denoisers import GmmDenoiser, load_prior
from .guidance import LexiconEmbedder, clip_distance, load_lexicon
from .imaging import (
    ImageFormatError,
    Raster8,
    blend,
    decode_png,
    dilate,
    encode_png,
    from_diffusion_domain,
    mask_from_raster,
    raster_from_mask,
    to_diffusion_domain,
)
from .samplers import SampleRequest, run_sampler
from .schedule import NoiseSchedule, make_schedule, respace_schedule

__all__ = [
    "APPLICATIONS",
    "EditEngine",
    "EditJob",
    "EditResult",
    "EditJobError",
    "default_engine",
    "run_edit",
    "run_job",
    "scribble_edit",
    "extrapolate",
    "Session",
    "SessionStep",
    "SessionError",
    "session_new",
    "session_append",
    "session_append_pending",
    "session_attach_results",
    "session_choose",
    "session_export",
    "session_import",
    "job_to_wire",
    "job_from_wire",
]

APPLICATIONS = ("object_edit", "background_replace", "scribble", "extrapolate")

#: per-segment seed stride for extrapolation, so segment batches never overlap
_SEGMENT_SEED_STRIDE = 10_000


class EditJobError(RuntimeError):
    """Raised when a job cannot produce any result."""


@dataclass(frozen=True)
class EditEngine:
    """Everything an application needs to run a job."""

    schedule: NoiseSchedule
    denoiser: object
    model: LexiconEmbedder | None
    workers: int = 1


def _data_path(name: str) -> Path:
    return Path(importlib.resources.files("blendiff") / "data" / name)


def default_engine(
    lexicon_path=None,
    prior_path=None,
    steps: int = 100,
    workers: int = 1,
    input_size: int = 64,
) -> EditEngine:
    """The stock engine: linear 1e-4..0.02 at T=1000 respaced to `steps`,
    the packaged mixture prior, and the packaged lexicon."""
    schedule = respace_schedule(make_schedule("linear", 1000, 1e-4, 0.02), steps)
    prior = load_prior(prior_path or _data_path("prior.json"))
    model = load_lexicon(lexicon_path or _data_path("lexicon.json"), input_size)
    return EditEngine(
        schedule=schedule, denoiser=GmmDenoiser(prior), model=model, workers=workers
    )


@dataclass(frozen=True)
class EditJob:
    """One user-level edit: a request template plus application parameters.

    request.seed is the batch base seed; sample i runs with seed + i.
    For scribble jobs request.mask may be None (the dilated scribble mask
    is used); everything else requires it.
    """

    request: SampleRequest
    num_samples: int = 64
    application: str = "object_edit"
    scribble_image: np.ndarray | None = None
    scribble_mask: np.ndarray | None = None
    dilate_radius: int = 3
    prompt_left: str = ""
    prompt_right: str = ""
    segments_left: int = 0
    segments_right: int = 0
    k_min: int = 40
    k_max: int = 75
    denoise_k: int = 30

    def validate(self, schedule: NoiseSchedule) -> None:
        if self.application not in APPLICATIONS:
            raise ValueError(f"unknown application {self.application!r}")
        if self.num_samples < 1:
            raise ValueError(f"num_samples must be >= 1, got {self.num_samples}")
        if self.application == "scribble":
            if self.scribble_image is None or self.scribble_mask is None:
                raise ValueError("scribble jobs need scribble_image and scribble_mask")
            if not np.any(np.asarray(self.scribble_mask) > 0):
                raise ValueError("scribble mask is empty")
            if self.dilate_radius < 0:
                raise ValueError("dilate_radius must be >= 0")
        elif self.application == "extrapolate":
            if self.segments_left < 0 or self.segments_right < 0:
                raise ValueError("segment counts must be >= 0")
            if self.segments_left == 0 and self.segments_right == 0:
                raise ValueError("extrapolation needs at least one segment")
            width = np.asarray(self.request.source).shape[1]
            if width % 4:
                raise ValueError(f"extrapolation needs width divisible by 4, got {width}")
            if not (1 <= self.k_min <= self.k_max <= schedule.T):
                raise ValueError(
                    f"need 1 <= k_min <= k_max <= {schedule.T}, got {self.k_min}, {self.k_max}"
                )
            if not (1 <= self.denoise_k <= schedule.T):
                raise ValueError(f"denoise_k must be in [1, {schedule.T}]")
        else:
            if self.request.mask is None:
                raise ValueError(f"{self.application} jobs need a mask")
            self.request.validate(schedule)


@dataclass(frozen=True)
class EditResult:
    """One sample of a job.  Failed samples carry error and no image/rank."""

    seed: int
    rank: int | None = None
    score: float | None = None
    image: np.ndarray | None = None
    error: str | None = None


def _score(engine: EditEngine, image, mask, prompt: str) -> float:
    """Ranking score: negated prompt distance on the full-resolution mask,
    no augmentations.  Unprompted jobs all score 0 and rank by seed."""
    if not prompt or engine.model is None:
        return 0.0
    return -clip_distance(engine.model, image, mask, prompt)


def run_edit(
    job: EditJob,
    engine: EditEngine,
    on_progress: Callable[[int, int], None] | None = None,
) -> list[EditResult]:
    """Run num_samples independent chains and rank the outcomes.

    Sample i uses seed request.seed + i.  Results are sorted by score
    descending (ties by seed ascending) with dense ranks from 1; failed
    samples are kept at the tail with error set.  Raises EditJobError only
    if every sample failed.
    """
    job.validate(engine.schedule)
    req = job.request
    total = job.num_samples
    mask = np.asarray(req.mask, dtype=np.float64)

    def one(i: int) -> EditResult:
        sub = replace(req, seed=req.seed + i)
        try:
            image = run_sampler(sub, engine.denoiser, engine.model, engine.schedule)
            return EditResult(
                seed=sub.seed,
                score=_score(engine, image, mask, req.prompt),
                image=image,
            )
        except Exception as exc:  # recorded per-result, never aborts the batch
            return EditResult(seed=sub.seed, error=f"{type(exc).__name__}: {exc}")

    results: list[EditResult] = []
    if engine.workers > 1 and total > 1:
        with ThreadPoolExecutor(max_workers=engine.workers) as pool:
            futures = [pool.submit(one, i) for i in range(total)]
            for done, fut in enumerate(futures, 1):
                results.append(fut.result())
                if on_progress:
                    on_progress(done, total)
    else:
        for i in range(total):
            results.append(one(i))
            if on_progress:
                on_progress(i + 1, total)

    good = sorted(
        (r for r in results if r.error is None), key=lambda r: (-r.score, r.seed)
    )
    bad = sorted((r for r in results if r.error is not None), key=lambda r: r.seed)
    if not good:
        summary = "; ".join(f"seed {r.seed}: {r.error}" for r in bad[:4])
        raise EditJobError(f"all {total} samples failed ({summary})")
    ranked = [replace(r, rank=i + 1) for i, r in enumerate(good)]
    return ranked + bad


def scribble_edit(
    job: EditJob,
    engine: EditEngine,
    on_progress: Callable[[int, int], None] | None = None,
) -> list[EditResult]:
    """Composite a scribble onto the source, then edit around it.

    The effective mask is the scribble mask dilated by dilate_radius unless
    the request carries an explicit mask.  The composited image becomes the
    sampler source; k = 0 therefore returns the composite exactly.
    """
    job.validate(engine.schedule)
    source = np.asarray(job.request.source, dtype=np.float64)
    scribble_mask = np.asarray(job.scribble_mask, dtype=np.float64)
    composite = blend(np.asarray(job.scribble_image, np.float64), source, scribble_mask)
    mask = job.request.mask
    if mask is None:
        mask = dilate(scribble_mask, job.dilate_radius)
    inner = replace(job.request, source=composite, mask=np.asarray(mask, np.float64))
    return run_edit(replace(job, request=inner, application="object_edit"), engine, on_progress)


def _segment_k(job: EditJob, index: int, count: int) -> int:
    """Step count for a side's index-th segment: linear k_min -> k_max."""
    if count <= 1:
        return job.k_min
    frac = index / (count - 1)
    return int(round(job.k_min + (job.k_max - job.k_min) * frac))


def extrapolate(
    job: EditJob,
    engine: EditEngine,
    on_progress: Callable[[int, int], None] | None = None,
) -> np.ndarray:
    """Extend the canvas sideways a quarter-width at a time.

    Per segment: slide a source-width window a quarter over the unknown
    side, fill the vacated strip by reflection, inpaint the strip with a
    top-1 ranked run, and append the new strip to the canvas.  After each
    group of four segments the freshest window is regenerated wholesale
    (all-ones mask, small k).  The original pixels are never touched, and
    the final width is W * (1 + segments_left/4 + segments_right/4).
    """
    job.validate(engine.schedule)
    canvas = np.asarray(job.request.source, dtype=np.float64)
    height, width = canvas.shape[:2]
    quarter = width // 4
    known = width - quarter
    total_units = job.segments_left + job.segments_right
    total_units += job.segments_left // 4 + job.segments_right // 4
    done_units = 0
    slot = 0  # global segment counter; keeps per-segment seed blocks disjoint

    def tick():
        nonlocal done_units
        done_units += 1
        if on_progress:
            on_progress(done_units, total_units)

    def top1(source, mask, prompt, k, num_samples) -> np.ndarray:
        nonlocal slot
        sub_req = replace(
            job.request,
            source=source,
            mask=mask,
            prompt=prompt,
            k=k,
            seed=job.request.seed + slot * _SEGMENT_SEED_STRIDE,
        )
        slot += 1
        sub = EditJob(request=sub_req, num_samples=num_samples, application="object_edit")
        return run_edit(sub, engine)[0].image

    for side, segments, prompt in (
        ("right", job.segments_right, job.prompt_right),
        ("left", job.segments_left, job.prompt_left),
    ):
        for seg in range(segments):
            k = _segment_k(job, seg, segments)
            if side == "right":
                base = canvas[:, -known:]
                window = np.pad(base, ((0, 0), (0, quarter), (0, 0)), mode="reflect")
                mask = np.zeros((height, width))
                mask[:, -quarter:] = 1.0
            else:
                base = canvas[:, :known]
                window = np.pad(base, ((0, 0), (quarter, 0), (0, 0)), mode="reflect")
                mask = np.zeros((height, width))
                mask[:, :quarter] = 1.0
            result = top1(window, mask, prompt, k, job.num_samples)
            if side == "right":
                canvas = np.concatenate([canvas, result[:, -quarter:]], axis=1)
            else:
                canvas = np.concatenate([result[:, :quarter], canvas], axis=1)
            tick()
            if (seg + 1) % 4 == 0:
                # one full window of new content exists: regenerate it freely
                ones = np.ones((height, width))
                if side == "right":
                    fresh = top1(canvas[:, -width:], ones, prompt, job.denoise_k, 1)
                    canvas = np.concatenate([canvas[:, :-width], fresh], axis=1)
                else:
                    fresh = top1(canvas[:, :width], ones, prompt, job.denoise_k, 1)
                    canvas = np.concatenate([fresh, canvas[:, width:]], axis=1)
                tick()
    return canvas


def run_job(
    job: EditJob,
    engine: EditEngine,
    on_progress: Callable[[int, int], None] | None = None,
) -> list[EditResult]:
    """Uniform application dispatch; extrapolation wraps its canvas as rank 1."""
    if job.application in ("object_edit", "background_replace"):
        return run_edit(job, engine, on_progress)
    if job.application == "scribble":
        return scribble_edit(job, engine, on_progress)
    if job.application == "extrapolate":
        canvas = extrapolate(job, engine, on_progress)
        return [EditResult(seed=job.request.seed, rank=1, score=0.0, image=canvas)]
    raise ValueError(f"unknown application {job.application!r}")


# ----- job wire format (shared by the HTTP service and session export) -----


def _png_b64(raster: Raster8) -> str:
    return base64.b64encode(encode_png(raster)).decode("ascii")


def _image_b64(image: np.ndarray) -> str:
    return _png_b64(from_diffusion_domain(image))


def _mask_b64(mask: np.ndarray) -> str:
    return _png_b64(raster_from_mask(mask))


def _b64_png(data: str) -> Raster8:
    try:
        raw = base64.b64decode(data, validate=True)
    except Exception as exc:
        raise ImageFormatError(f"invalid base64: {exc}") from exc
    return decode_png(raw)


def job_to_wire(job: EditJob, include_source: bool = True) -> dict:
    req = job.request
    doc = {
        "prompt": req.prompt,
        "sampler": req.sampler,
        "k": req.k,
        "lambda": req.lam,
        "n_aug": req.n_aug,
        "seed": req.seed,
        "guidance_scale": req.guidance_scale,
        "num_samples": job.num_samples,
        "application": job.application,
    }
    if include_source:
        doc["image"] = _image_b64(np.asarray(req.source, np.float64))
    if req.mask is not None:
        doc["mask"] = _mask_b64(np.asarray(req.mask, np.float64))
    if job.application == "scribble":
        doc["scribble_image"] = _image_b64(np.asarray(job.scribble_image, np.float64))
        doc["scribble_mask"] = _mask_b64(np.asarray(job.scribble_mask, np.float64))
        doc["dilate_radius"] = job.dilate_radius
    if job.application == "extrapolate":
        doc.update(
            prompt_left=job.prompt_left,
            prompt_right=job.prompt_right,
            segments_left=job.segments_left,
            segments_right=job.segments_right,
            k_min=job.k_min,
            k_max=job.k_max,
            denoise_k=job.denoise_k,
        )
    return doc


def job_from_wire(doc: dict, source: np.ndarray | None = None) -> EditJob:
    """Rebuild a job from its wire dict; source may be supplied externally
    (session steps draw it from the canvas instead of the wire)."""
    if source is None:
        if "image" not in doc:
            raise ValueError("job document has no image")
        raster = _b64_png(doc["image"])
        if raster.channels == 4:
            raster = Raster8.from_array(raster.data[:, :, :3].copy())
        source = to_diffusion_domain(raster)
    mask = None
    if doc.get("mask"):
        mask = mask_from_raster(_b64_png(doc["mask"]))
    req = SampleRequest(
        source=source,
        mask=mask,
        prompt=doc.get("prompt", "") or "",
        k=int(doc.get("k", 75)),
        sampler=doc.get("sampler", "blended"),
        lam=float(doc.get("lambda", 1000.0)),
        n_aug=int(doc.get("n_aug", 16)),
        seed=int(doc.get("seed", 0)),
        guidance_scale=float(doc.get("guidance_scale", 1.0)),
    )
    job = EditJob(
        request=req,
        num_samples=int(doc.get("num_samples", 64)),
        application=doc.get("application", "object_edit"),
        dilate_radius=int(doc.get("dilate_radius", 3)),
        prompt_left=doc.get("prompt_left", "") or "",
        prompt_right=doc.get("prompt_right", "") or "",
        segments_left=int(doc.get("segments_left", 0)),
        segments_right=int(doc.get("segments_right", 0)),
        k_min=int(doc.get("k_min", 40)),
        k_max=int(doc.get("k_max", 75)),
        denoise_k=int(doc.get("denoise_k", 30)),
    )
    if job.application == "scribble":
        if "scribble_image" not in doc or "scribble_mask" not in doc:
            raise ValueError("scribble job document needs scribble_image and scribble_mask")
        scr = _b64_png(doc["scribble_image"])
        if scr.channels == 4:
            scr = Raster8.from_array(scr.data[:, :, :3].copy())
        job = replace(
            job,
            scribble_image=to_diffusion_domain(scr),
            scribble_mask=mask_from_raster(_b64_png(doc["scribble_mask"])),
        )
    return job


# ----- sessions -----

SESSION_FORMAT = "bdses/1"


class SessionError(RuntimeError):
    pass


@dataclass(frozen=True)
class SessionStep:
    job: EditJob
    results: tuple[EditResult, ...] | None
    chosen_rank: int | None
    chosen: Raster8 | None


@dataclass(frozen=True)
class Session:
    """A chain of edits; each step starts from the previous chosen output."""

    session_id: str
    base: Raster8
    steps: tuple[SessionStep, ...] = ()

    @property
    def canvas(self) -> Raster8:
        for step in reversed(self.steps):
            if step.chosen is not None:
                return step.chosen
        return self.base


def session_new(session_id: str, base: Raster8) -> Session:
    return Session(session_id=session_id, base=base)


def _require_settled(session: Session) -> None:
    if session.steps and session.steps[-1].chosen is None:
        raise SessionError("previous step has no chosen result yet")


def session_append_pending(session: Session, job: EditJob) -> Session:
    """Record a step whose job will run elsewhere (results attached later)."""
    _require_settled(session)
    step = SessionStep(job=job, results=None, chosen_rank=None, chosen=None)
    return replace(session, steps=session.steps + (step,))


def session_attach_results(session: Session, results: list[EditResult]) -> Session:
    if not session.steps:
        raise SessionError("session has no steps")
    last = session.steps[-1]
    if last.results is not None:
        raise SessionError("step already has results")
    step = replace(last, results=tuple(results))
    return replace(session, steps=session.steps[:-1] + (step,))


def session_append(session: Session, job: EditJob, engine: EditEngine) -> Session:
    """Run a job against the current canvas and append it as a step.

    The job's source is always the canvas (bit-exact chain); whatever the
    job carried as source is ignored.
    """
    _require_settled(session)
    source = to_diffusion_domain(session.canvas)
    job = replace(job, request=replace(job.request, source=source))
    results = run_job(job, engine)
    session = session_append_pending(session, job)
    return session_attach_results(session, results)


def session_choose(session: Session, rank: int) -> Session:
    """Choose a ranked result of the last step; its image becomes the canvas."""
    if not session.steps:
        raise SessionError("session has no steps")
    last = session.steps[-1]
    if last.results is None:
        raise SessionError("cannot choose from a job that has not run")
    match = [r for r in last.results if r.rank == rank]
    if not match:
        ranks = sorted(r.rank for r in last.results if r.rank is not None)
        raise SessionError(f"no result with rank {rank}; have {ranks}")
    chosen = from_diffusion_domain(match[0].image)
    step = replace(last, chosen_rank=rank, chosen=chosen)
    return replace(session, steps=session.steps[:-1] + (step,))


def session_export(session: Session) -> dict:
    """Deterministic JSON document with base-64 canvases ("bdses/1")."""
    steps = []
    for step in session.steps:
        entry = {
            "job": job_to_wire(step.job, include_source=False),
            "chosen_rank": step.chosen_rank,
            "chosen_png": _png_b64(step.chosen) if step.chosen is not None else None,
        }
        steps.append(entry)
    return {
        "version": SESSION_FORMAT,
        "id": session.session_id,
        "base_png": _png_b64(session.base),
        "steps": steps,
    }


def session_import(doc: dict) -> Session:
    """Rebuild a session from its export; canvases round-trip bit-exactly."""
    if doc.get("version") != SESSION_FORMAT:
        raise SessionError(f"unsupported session format {doc.get('version')!r}")
    base = _b64_png(doc["base_png"])
    session = Session(session_id=doc["id"], base=base)
    canvas = base
    steps = []
    for entry in doc["steps"]:
        job = job_from_wire(entry["job"], source=to_diffusion_domain(canvas))
        chosen = _b64_png(entry["chosen_png"]) if entry.get("chosen_png") else None
        steps.append(
            SessionStep(
                job=job,
                results=None,
                chosen_rank=entry.get("chosen_rank"),
                chosen=chosen,
            )
        )
        if chosen is not None:
            canvas = chosen
    return replace(session, steps=tuple(steps))


def session_to_json(session: Session) -> str:
    return json.dumps(session_export(session), sort_keys=True, separators=(",", ":"))


def session_from_json(text: str) -> Session:
    return session_import(json.loads(text))
