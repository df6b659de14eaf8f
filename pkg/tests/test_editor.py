import json

import numpy as np
import pytest

from blendiff import (
    EditEngine,
    EditJob,
    EditJobError,
    SampleRequest,
    SessionError,
    blend,
    dilate,
    from_diffusion_domain,
    job_from_wire,
    job_to_wire,
    run_edit,
    run_job,
    session_append,
    session_choose,
    session_export,
    session_from_json,
    session_import,
    session_new,
    session_to_json,
    to_diffusion_domain,
)

from conftest import box_mask


def basic_job(src, mask, prompt="bright_red", samples=3, seed=100, **kw):
    req = SampleRequest(source=src, mask=mask, prompt=prompt, k=kw.pop("k", 10),
                        n_aug=kw.pop("n_aug", 2), seed=seed)
    return EditJob(request=req, num_samples=samples, **kw)


def prior_source(engine, h, w, seed):
    comp = engine.denoiser.prior_for((h, w, 3)).components[0]
    rng = np.random.default_rng(seed)
    return comp.mean + 0.05 * rng.standard_normal((h, w, 3))


class CountingDenoiser:
    """Delegates to a real denoiser, raising once at a chosen call index."""

    def __init__(self, inner, fail_at=None):
        self.inner = inner
        self.calls = 0
        self.fail_at = fail_at

    def predict_eps(self, x_t, t, schedule):
        if self.fail_at is not None and self.calls == self.fail_at:
            self.calls += 1
            raise RuntimeError("injected denoiser fault")
        self.calls += 1
        return self.inner.predict_eps(x_t, t, schedule)


# ----- batch ranking -----


def test_results_are_ranked_by_score(engine):
    rng = np.random.default_rng(1)
    src = rng.uniform(-1, 1, (10, 10, 3))
    job = basic_job(src, box_mask(10, 10, 3, 8, 3, 8), samples=4)
    results = run_edit(job, engine)
    assert [r.rank for r in results] == [1, 2, 3, 4]
    scores = [r.score for r in results]
    assert scores == sorted(scores, reverse=True)
    assert all(r.error is None and r.image is not None for r in results)
    assert sorted(r.seed for r in results) == [100, 101, 102, 103]


def test_unprompted_results_rank_by_seed(engine):
    rng = np.random.default_rng(2)
    src = rng.uniform(-1, 1, (8, 8, 3))
    job = basic_job(src, box_mask(8, 8, 2, 6, 2, 6), prompt="", samples=3, seed=40)
    results = run_edit(job, engine)
    assert [r.score for r in results] == [0.0, 0.0, 0.0]
    assert [r.seed for r in results] == [40, 41, 42]
    assert [r.rank for r in results] == [1, 2, 3]


def test_single_sample_job(engine):
    rng = np.random.default_rng(3)
    src = rng.uniform(-1, 1, (8, 8, 3))
    results = run_edit(basic_job(src, box_mask(8, 8, 2, 6, 2, 6), samples=1), engine)
    assert len(results) == 1
    assert results[0].rank == 1


def test_failed_samples_are_recorded_not_fatal(engine):
    rng = np.random.default_rng(4)
    src = rng.uniform(-1, 1, (8, 8, 3))
    k = 5
    flaky = CountingDenoiser(engine.denoiser, fail_at=k)  # second sample's first call
    eng = EditEngine(schedule=engine.schedule, denoiser=flaky, model=engine.model)
    job = basic_job(src, box_mask(8, 8, 2, 6, 2, 6), prompt="", samples=3, seed=10, k=k)
    results = run_edit(job, eng)
    good = [r for r in results if r.error is None]
    bad = [r for r in results if r.error is not None]
    assert len(good) == 2 and len(bad) == 1
    assert bad[0].seed == 11
    assert "RuntimeError: injected denoiser fault" in bad[0].error
    assert bad[0].rank is None and bad[0].image is None
    assert [r.rank for r in good] == [1, 2]


def test_all_samples_failing_raises(engine):
    class AlwaysFails:
        def predict_eps(self, x_t, t, schedule):
            raise RuntimeError("down")

    rng = np.random.default_rng(5)
    src = rng.uniform(-1, 1, (8, 8, 3))
    eng = EditEngine(schedule=engine.schedule, denoiser=AlwaysFails(), model=engine.model)
    job = basic_job(src, box_mask(8, 8, 2, 6, 2, 6), prompt="", samples=3)
    with pytest.raises(EditJobError, match="all 3 samples failed"):
        run_edit(job, eng)


def test_parallel_workers_match_serial_results(engine):
    rng = np.random.default_rng(6)
    src = rng.uniform(-1, 1, (8, 8, 3))
    job = basic_job(src, box_mask(8, 8, 2, 6, 2, 6), samples=4)
    serial = run_edit(job, engine)
    par_engine = EditEngine(
        schedule=engine.schedule, denoiser=engine.denoiser, model=engine.model, workers=4
    )
    parallel = run_edit(job, par_engine)
    for a, b in zip(serial, parallel):
        assert a.seed == b.seed and a.rank == b.rank
        assert np.array_equal(a.image, b.image)


def test_progress_callback_counts_to_total(engine):
    rng = np.random.default_rng(7)
    src = rng.uniform(-1, 1, (8, 8, 3))
    seen = []
    run_edit(
        basic_job(src, box_mask(8, 8, 2, 6, 2, 6), prompt="", samples=3),
        engine,
        on_progress=lambda done, total: seen.append((done, total)),
    )
    assert seen == [(1, 3), (2, 3), (3, 3)]


# ----- validation -----


def test_job_validation(engine):
    src = np.zeros((8, 8, 3))
    mask = box_mask(8, 8, 2, 6, 2, 6)
    with pytest.raises(ValueError, match="unknown application"):
        basic_job(src, mask, application="repaint").validate(engine.schedule)
    with pytest.raises(ValueError, match="num_samples"):
        basic_job(src, mask, samples=0).validate(engine.schedule)
    with pytest.raises(ValueError, match="need a mask"):
        basic_job(src, None).validate(engine.schedule)
    with pytest.raises(ValueError, match="scribble"):
        basic_job(src, mask, application="scribble").validate(engine.schedule)
    with pytest.raises(ValueError, match="scribble mask is empty"):
        basic_job(
            src, mask, application="scribble",
            scribble_image=src, scribble_mask=np.zeros((8, 8)),
        ).validate(engine.schedule)
    with pytest.raises(ValueError, match="at least one segment"):
        basic_job(src, None, application="extrapolate").validate(engine.schedule)
    with pytest.raises(ValueError, match="divisible by 4"):
        basic_job(
            np.zeros((8, 10, 3)), None, application="extrapolate", segments_right=1
        ).validate(engine.schedule)
    with pytest.raises(ValueError, match="k_min"):
        basic_job(
            src, None, application="extrapolate", segments_right=1,
            k_min=80, k_max=75,
        ).validate(engine.schedule)


# ----- scribble -----


def test_scribble_k_zero_returns_composite_exactly(engine):
    rng = np.random.default_rng(8)
    src = rng.uniform(-1, 1, (12, 12, 3))
    smask = box_mask(12, 12, 4, 8, 4, 8)
    scribble = np.full((12, 12, 3), 0.7)
    job = EditJob(
        request=SampleRequest(source=src, mask=None, prompt="", k=0, seed=0),
        num_samples=1, application="scribble",
        scribble_image=scribble, scribble_mask=smask, dilate_radius=2,
    )
    out = run_job(job, engine)[0].image
    assert np.array_equal(out, blend(scribble, src, smask))


def test_scribble_respects_dilated_mask(engine):
    rng = np.random.default_rng(9)
    src = rng.uniform(-1, 1, (12, 12, 3))
    smask = box_mask(12, 12, 5, 7, 5, 7)
    scribble = np.full((12, 12, 3), -0.5)
    job = EditJob(
        request=SampleRequest(source=src, mask=None, prompt="", k=8, seed=1),
        num_samples=1, application="scribble",
        scribble_image=scribble, scribble_mask=smask, dilate_radius=2,
    )
    out = run_job(job, engine)[0].image
    outside = dilate(smask, 2) == 0.0
    assert np.array_equal(out[outside], src[outside])


def test_scribble_high_k_decorrelates_from_scribble_color(engine):
    # at high start steps the chain forgets the pasted color; at low ones it
    # stays anchored to it, so mean-color distance grows with k
    h = w = 16
    scrib_color = np.array([0.9, -0.8, -0.8])
    smask = box_mask(h, w, 5, 11, 5, 11)
    scribble = np.zeros((h, w, 3)) + scrib_color

    def median_distance(k):
        out = []
        for seed in range(10):
            src = prior_source(engine, h, w, 500 + seed)
            job = EditJob(
                request=SampleRequest(source=src, mask=None, prompt="", k=k, seed=seed * 100),
                num_samples=1, application="scribble",
                scribble_image=scribble, scribble_mask=smask, dilate_radius=2,
            )
            img = run_job(job, engine)[0].image
            mean_color = img[smask == 1.0].reshape(-1, 3).mean(axis=0)
            out.append(float(np.linalg.norm(mean_color - scrib_color)))
        return float(np.median(out))

    assert median_distance(80) > median_distance(20)


# ----- extrapolation -----


def test_extrapolate_width_arithmetic_and_untouched_original(engine):
    src = prior_source(engine, 8, 16, 11)
    job = EditJob(
        request=SampleRequest(source=src, mask=None, prompt="", k=50, seed=7),
        num_samples=1, application="extrapolate",
        segments_left=1, segments_right=2,
    )
    results = run_job(job, engine)
    assert len(results) == 1
    out = results[0]
    assert out.rank == 1 and out.score == 0.0
    quarter = 16 // 4
    assert out.image.shape == (8, 16 + 3 * quarter, 3)
    left_pad = 1 * quarter
    assert np.array_equal(out.image[:, left_pad : left_pad + 16], src)


def test_extrapolate_progress_includes_regen_units(engine):
    src = prior_source(engine, 8, 8, 12)
    seen = []
    job = EditJob(
        request=SampleRequest(source=src, mask=None, prompt="", k=40, seed=3),
        num_samples=1, application="extrapolate", segments_right=4,
    )
    run_job(job, engine, on_progress=lambda d, t: seen.append((d, t)))
    # 4 strip segments plus one full-window regeneration
    assert seen[-1] == (5, 5)


def test_extrapolate_is_deterministic(engine):
    src = prior_source(engine, 8, 8, 13)
    job = EditJob(
        request=SampleRequest(source=src, mask=None, prompt="", k=45, seed=21),
        num_samples=2, application="extrapolate", segments_right=2,
    )
    a = run_job(job, engine)[0].image
    b = run_job(job, engine)[0].image
    assert np.array_equal(a, b)


def test_run_job_rejects_unknown_application(engine):
    job = basic_job(np.zeros((8, 8, 3)), box_mask(8, 8, 2, 6, 2, 6))
    job = EditJob(request=job.request, num_samples=1, application="object_edit")
    bad = EditJob(request=job.request, num_samples=1)
    object.__setattr__(bad, "application", "mystery")
    with pytest.raises(ValueError, match="unknown application"):
        run_job(bad, engine)


# ----- wire format -----


def test_job_wire_round_trip(engine):
    rng = np.random.default_rng(14)
    src = rng.uniform(-1, 1, (9, 9, 3))
    job = basic_job(src, box_mask(9, 9, 2, 7, 2, 7), prompt="deep_blue", samples=5)
    doc = job_to_wire(job)
    json.dumps(doc)
    back = job_from_wire(doc)
    assert back.request.prompt == "deep_blue"
    assert back.request.k == job.request.k
    assert back.request.seed == job.request.seed
    assert back.num_samples == 5
    assert np.array_equal(back.request.mask, job.request.mask)
    # quantization settles after one pass: a second round trip is bit-exact
    assert job_to_wire(back) == doc


def test_job_wire_without_source(engine):
    rng = np.random.default_rng(15)
    src = rng.uniform(-1, 1, (8, 8, 3))
    job = basic_job(src, box_mask(8, 8, 2, 6, 2, 6))
    doc = job_to_wire(job, include_source=False)
    assert "image" not in doc
    with pytest.raises(ValueError, match="no image"):
        job_from_wire(doc)
    rebuilt = job_from_wire(doc, source=src)
    assert np.array_equal(rebuilt.request.source, src)


def test_scribble_wire_round_trip(engine):
    rng = np.random.default_rng(16)
    src = rng.uniform(-1, 1, (8, 8, 3))
    smask = box_mask(8, 8, 3, 6, 3, 6)
    job = EditJob(
        request=SampleRequest(source=src, mask=None, prompt="", k=4, seed=2),
        num_samples=1, application="scribble",
        scribble_image=np.full((8, 8, 3), 0.25), scribble_mask=smask, dilate_radius=1,
    )
    doc = job_to_wire(job)
    back = job_from_wire(doc)
    assert back.application == "scribble"
    assert back.dilate_radius == 1
    assert np.array_equal(back.scribble_mask, smask)
    assert job_to_wire(back) == doc


# ----- sessions -----


def make_base(engine, h=10, w=10, seed=20):
    return from_diffusion_domain(prior_source(engine, h, w, seed))


def step_job(prompt="bright_red", k=8, seed=50, samples=2, h=10, w=10, r=None):
    mask = r if r is not None else box_mask(h, w, 3, 7, 3, 7)
    return EditJob(
        request=SampleRequest(source=np.zeros((h, w, 3)), mask=mask, prompt=prompt,
                              k=k, n_aug=2, seed=seed),
        num_samples=samples,
    )


def test_session_chain_uses_chosen_canvas(engine):
    base = make_base(engine)
    ses = session_new("s1", base)
    assert ses.canvas is base
    ses = session_append(ses, step_job(seed=60), engine)
    with pytest.raises(SessionError, match="no chosen result"):
        session_append(ses, step_job(seed=61), engine)
    ses = session_choose(ses, 2)
    step = ses.steps[0]
    picked = [r for r in step.results if r.rank == 2][0]
    assert np.array_equal(ses.canvas.data, from_diffusion_domain(picked.image).data)
    # the next step must start from exactly that canvas
    ses2 = session_append(ses, step_job(prompt="", seed=62), engine)
    assert np.array_equal(
        np.asarray(ses2.steps[1].job.request.source),
        to_diffusion_domain(ses.canvas),
    )


def test_session_choose_errors(engine):
    base = make_base(engine)
    ses = session_new("s2", base)
    with pytest.raises(SessionError, match="no steps"):
        session_choose(ses, 1)
    ses = session_append(ses, step_job(seed=70), engine)
    with pytest.raises(SessionError, match="no result with rank 9"):
        session_choose(ses, 9)


def test_session_refinement_changes_only_the_new_mask(engine):
    base = make_base(engine, 12, 12, 31)
    ses = session_new("s3", base)
    ses = session_choose(session_append(ses, step_job(seed=80, h=12, w=12,
                                                      r=box_mask(12, 12, 2, 10, 2, 10)), engine), 1)
    before = ses.canvas.data.copy()
    sub_mask = box_mask(12, 12, 4, 8, 4, 8)
    ses = session_choose(
        session_append(ses, step_job(prompt="", seed=81, h=12, w=12, r=sub_mask), engine), 1
    )
    after = ses.canvas.data
    outside = sub_mask == 0.0
    assert np.array_equal(after[outside], before[outside])
    assert not np.array_equal(after[sub_mask == 1.0], before[sub_mask == 1.0])


def test_session_export_import_round_trip(engine):
    base = make_base(engine, 10, 10, 32)
    ses = session_new("round", base)
    ses = session_choose(session_append(ses, step_job(seed=90), engine), 1)
    ses = session_choose(session_append(ses, step_job(prompt="", seed=91), engine), 1)
    doc = session_export(ses)
    assert doc["version"] == "bdses/1"
    back = session_import(doc)
    assert back.session_id == "round"
    assert np.array_equal(back.canvas.data, ses.canvas.data)
    assert session_export(back) == doc
    text = session_to_json(ses)
    assert session_export(session_from_json(text)) == doc


def test_session_import_rejects_other_versions():
    with pytest.raises(SessionError, match="unsupported session format"):
        session_import({"version": "bdses/2", "id": "x", "base_png": "", "steps": []})


def test_session_export_of_unsettled_step(engine):
    base = make_base(engine, 10, 10, 33)
    ses = session_new("open", base)
    ses = session_append(ses, step_job(seed=95), engine)
    doc = session_export(ses)
    assert doc["steps"][0]["chosen_rank"] is None
    assert doc["steps"][0]["chosen_png"] is None
    back = session_import(doc)
    assert back.canvas.data.tobytes() == base.data.tobytes()
