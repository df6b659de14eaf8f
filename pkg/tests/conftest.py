import pathlib

import numpy as np
import pytest

from blendiff import default_engine, make_schedule, respace_schedule

GOLDEN = pathlib.Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def engine():
    """Stock engine: linear T=1000 respaced to 100 steps, packaged prior+lexicon."""
    return default_engine()


@pytest.fixture(scope="session")
def fast_engine():
    """Same data but respaced to 25 steps, for editor/service round-trips."""
    return default_engine(steps=25)


@pytest.fixture(scope="session")
def schedule100():
    return respace_schedule(make_schedule("linear", 1000, 1e-4, 0.02), 100)


@pytest.fixture()
def tiny_schedule():
    """T=4 with hand-checkable tables: betas 0.1, 0.2, 0.3, 0.4."""
    from blendiff import schedule_from_betas

    return schedule_from_betas([0.1, 0.2, 0.3, 0.4])


def rand_image(rng, h=8, w=8, c=3, lo=-1.0, hi=1.0):
    return rng.uniform(lo, hi, (h, w, c))


def box_mask(h, w, r0, r1, c0, c1):
    m = np.zeros((h, w))
    m[r0:r1, c0:c1] = 1.0
    return m
