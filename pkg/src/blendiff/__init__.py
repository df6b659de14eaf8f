"""blendiff: text-driven local image editing with an analytic diffusion core.

The package is organized bottom-up:

- ``schedule``: noise schedules, respacing, and the posterior step.
- ``imaging``: PNG/PGM codecs, warps, resizes, and their exact adjoints.
- ``denoisers``: the closed-form Gaussian-mixture denoiser and a tiny
  serialized-MLP alternative.
- ``guidance``: the statistics embedder, lexicon, background losses, and
  analytic gradients.
- ``samplers``: blended, locally guided, and DDIM samplers over a shared
  deterministic RNG contract.
- ``editor``: batch edits, ranking, scribbles, extrapolation, sessions.
- ``service`` / ``cli``: the HTTP job service and command line.
"""

from .denoisers import (
    GaussianMixturePrior,
    GmmDenoiser,
    LoadedNet,
    MixtureComponent,
    NetDenoiser,
    NetLayer,
    gmm_posterior_x0,
    gmm_predict_eps,
    load_net,
    load_prior,
    net_predict_eps,
    prior_from_dict,
    save_net,
)
from .editor import (
    EditEngine,
    EditJob,
    EditJobError,
    EditResult,
    Session,
    SessionError,
    default_engine,
    extrapolate,
    job_from_wire,
    job_to_wire,
    run_edit,
    run_job,
    scribble_edit,
    session_append,
    session_choose,
    session_export,
    session_from_json,
    session_import,
    session_new,
    session_to_json,
)
from .guidance import (
    LexiconEmbedder,
    UnknownPromptError,
    bg_distance,
    bg_distance_grad,
    clip_distance,
    clip_distance_grad,
    extending_augmentations,
    guidance_gradient,
    image_statistics,
    lexicon_from_dict,
    load_lexicon,
    perceptual_proxy,
)
from .imaging import (
    ImageFormatError,
    ProjectiveTransform,
    Raster8,
    blend,
    decode_png,
    decode_pgm,
    dilate,
    encode_png,
    encode_pgm,
    from_diffusion_domain,
    homography_from_corners,
    mask_from_raster,
    random_projective,
    raster_from_mask,
    resize,
    resize_adjoint,
    split_alpha,
    to_diffusion_domain,
    warp_adjoint,
    warp_mask,
    warp_projective,
)
from .samplers import (
    SAMPLER_NAMES,
    SampleRequest,
    SamplingError,
    TraceRecord,
    rng_streams,
    run_sampler,
    sample_blended,
    sample_ddim_blended,
    sample_local_guided,
    sample_naive_blend,
    trace_to_jsonl,
)
from .schedule import (
    NoiseSchedule,
    ScheduleError,
    make_schedule,
    posterior_params,
    predict_x0,
    q_sample,
    respace_schedule,
    schedule_from_betas,
    schedule_from_json,
    schedule_to_json,
)

__version__ = "0.1.0"

__all__ = [
    "EditEngine",
    "EditJob",
    "EditJobError",
    "EditResult",
    "GaussianMixturePrior",
    "GmmDenoiser",
    "ImageFormatError",
    "LexiconEmbedder",
    "LoadedNet",
    "MixtureComponent",
    "NetDenoiser",
    "NetLayer",
    "NoiseSchedule",
    "ProjectiveTransform",
    "Raster8",
    "SAMPLER_NAMES",
    "SampleRequest",
    "SamplingError",
    "ScheduleError",
    "Session",
    "SessionError",
    "TraceRecord",
    "UnknownPromptError",
    "__version__",
    "bg_distance",
    "bg_distance_grad",
    "blend",
    "clip_distance",
    "clip_distance_grad",
    "decode_pgm",
    "decode_png",
    "default_engine",
    "dilate",
    "encode_pgm",
    "encode_png",
    "extending_augmentations",
    "extrapolate",
    "from_diffusion_domain",
    "gmm_posterior_x0",
    "gmm_predict_eps",
    "guidance_gradient",
    "homography_from_corners",
    "image_statistics",
    "job_from_wire",
    "job_to_wire",
    "lexicon_from_dict",
    "load_lexicon",
    "load_net",
    "load_prior",
    "make_schedule",
    "mask_from_raster",
    "net_predict_eps",
    "perceptual_proxy",
    "posterior_params",
    "predict_x0",
    "prior_from_dict",
    "q_sample",
    "random_projective",
    "raster_from_mask",
    "resize",
    "resize_adjoint",
    "respace_schedule",
    "rng_streams",
    "run_edit",
    "run_job",
    "run_sampler",
    "sample_blended",
    "sample_ddim_blended",
    "sample_local_guided",
    "sample_naive_blend",
    "save_net",
    "schedule_from_betas",
    "schedule_from_json",
    "schedule_to_json",
    "scribble_edit",
    "session_append",
    "session_choose",
    "session_export",
    "session_from_json",
    "session_import",
    "session_new",
    "session_to_json",
    "split_alpha",
    "to_diffusion_domain",
    "trace_to_jsonl",
    "warp_adjoint",
    "warp_mask",
    "warp_projective",
]
