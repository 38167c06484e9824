import numpy as np
import pytest

from handsfree.dsp import Waveform
from handsfree.rir import RoomSpec
from handsfree.scenes import synthesize_noise, synthesize_speech_like


@pytest.fixture
def rng():
    return np.random.default_rng(0xBEEF)


@pytest.fixture(scope="session")
def speech_3s():
    return synthesize_speech_like(3.0, seed=101)


@pytest.fixture(scope="session")
def speech_5s():
    return synthesize_speech_like(5.0, seed=202)


@pytest.fixture(scope="session")
def noise_5s():
    return synthesize_noise(5.0, seed=303)


@pytest.fixture(scope="session")
def small_room():
    # modest order keeps image enumeration cheap in tests
    return RoomSpec(
        dimensions=(5.0, 4.0, 2.8),
        rt60=0.3,
        max_reflection_order=40,
        source_pos=(1.2, 1.5, 1.2),
        mic_pos=(3.1, 2.2, 1.5),
        nearend_pos=(3.9, 3.1, 1.6),
    )


def white(rng, n, scale=0.1):
    return Waveform(rng.standard_normal(n) * scale)
