import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lfsc.dictionary import default_dictionary
from lfsc.synth import render_scene

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def dictionary():
    return default_dictionary()


@functools.lru_cache(maxsize=None)
def _render(spec_json: str):
    from lfsc.synth import SynthSceneSpec
    return render_scene(SynthSceneSpec.from_json(spec_json))


def render_cached(spec):
    """Rendering is the slow part of many tests; scenes are immutable."""
    lf, gt = _render(spec.to_json())
    return lf.copy(), gt.copy()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
