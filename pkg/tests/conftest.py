import numpy as np
import pytest

from psupmix.audio_io import AudioBuffer
from psupmix.ps_codec import QuantGrids
from psupmix.spectral import StftConfig, make_band_map

STFT = StftConfig()


@pytest.fixture(scope="session")
def stft_cfg():
    return STFT


@pytest.fixture(scope="session")
def band_map():
    return make_band_map()


@pytest.fixture(scope="session")
def grids():
    return QuantGrids()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def frames_to_samples(n_frames: int, cfg: StftConfig = STFT) -> int:
    """Signal length that yields exactly ``n_frames`` analysis frames."""
    return (n_frames - 3) * cfg.hop


def noise_buffer(length: int, seed: int = 0, scale: float = 0.5) -> AudioBuffer:
    rng = np.random.default_rng(seed)
    return AudioBuffer(rng.uniform(-scale, scale, size=(1, length)))


def panned_noise_corpus(pans_db, n_frames=16, seed=42):
    """Distinct colored-noise excerpts, each constant-panned by ``pan`` dB.

    Both channels carry the same signal with a fixed gain ratio, so the true
    IID equals the pan exactly and the IC is 1 in every occupied band.
    """
    rng = np.random.default_rng(seed)
    length = frames_to_samples(n_frames)
    chunks = []
    for pan in pans_db:
        x = rng.standard_normal(length)
        fir = rng.standard_normal(33) * np.hanning(33)
        x = np.convolve(x, fir, mode="same")
        x /= np.abs(x).max() * 2.0
        ratio = 10.0 ** (pan / 40.0)
        chunks.append(AudioBuffer(np.vstack([ratio * x, x / ratio])))
    return chunks
