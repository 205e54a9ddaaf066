import numpy as np
import pytest

from prefcomp.audio import AudioClip, make_fixture_corpus


@pytest.fixture(scope="session")
def fixture_corpus(tmp_path_factory):
    """Small synthetic corpus + noise bed shared by the integration tests."""
    root = tmp_path_factory.mktemp("corpus")
    corpus_dir, noise_path = make_fixture_corpus(root, n_clips=8, duration_s=0.6, seed=11)
    return corpus_dir, noise_path


def tone(freq_hz, duration_s=1.0, sample_rate_hz=16000, amplitude=0.5, clip_id="tone"):
    t = np.arange(int(duration_s * sample_rate_hz)) / sample_rate_hz
    return AudioClip(amplitude * np.sin(2 * np.pi * freq_hz * t), sample_rate_hz, id=clip_id)


def tone_amplitude(x, sample_rate_hz, freq_hz):
    """Amplitude of one frequency component, measured by complex projection."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    t = np.arange(n) / sample_rate_hz
    c = np.exp(-2j * np.pi * freq_hz * t)
    return 2.0 * abs(np.dot(x, c)) / n


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
