"""Audio file I/O, stereo-to-mono downmixing and training-patch extraction.

All pipeline entry points expect 44.1 kHz audio; there is deliberately no
resampler here, files at other rates are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.io.wavfile

from .errors import ChannelCountError, FormatError, LengthError, SampleRateError

PIPELINE_RATE = 44100


@dataclass
class AudioBuffer:
    """In-memory audio: ``samples`` is (channels, length), nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = PIPELINE_RATE

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if self.samples.ndim != 2 or self.samples.shape[0] not in (1, 2):
            raise ChannelCountError(
                f"expected 1 or 2 channels, got shape {self.samples.shape}"
            )
        if self.samples.shape[1] == 0:
            raise LengthError("empty audio buffer")

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.length / self.sample_rate


@dataclass
class PatchSpec:
    """Training-time chunk/patch extraction and augmentation parameters."""

    chunk_seconds: float = 10.0
    patch_seconds: float = 6.0
    gain_range_db: tuple[float, float] = (-6.0, 0.0)
    swap_prob: float = 0.5

    def __post_init__(self):
        if self.patch_seconds > self.chunk_seconds:
            raise LengthError(
                f"patch_seconds {self.patch_seconds} exceeds chunk_seconds "
                f"{self.chunk_seconds}"
            )
        if not 0.0 <= self.swap_prob <= 1.0:
            raise ValueError(f"swap_prob must be in [0, 1], got {self.swap_prob}")


def load_wav(path, expected_rate: int | None = PIPELINE_RATE) -> AudioBuffer:
    """Load a PCM16/PCM24/FLOAT32 RIFF WAV, normalized to [-1, 1].

    Rejects files whose sample rate differs from ``expected_rate``
    (pass ``None`` to accept any rate).
    """
    try:
        rate, data = scipy.io.wavfile.read(path)
    except ValueError as exc:
        raise FormatError(f"{path}: unsupported WAV format ({exc})") from exc
    if expected_rate is not None and rate != expected_rate:
        raise SampleRateError(
            f"{path}: sample rate {rate} Hz, pipeline requires {expected_rate} Hz"
        )
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        # scipy stores 24-bit PCM left-justified in int32, so this scale is
        # correct for both 24- and 32-bit integer data.
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported sample dtype {data.dtype}")
    if samples.ndim == 1:
        samples = samples[np.newaxis, :]
    else:
        samples = samples.T  # scipy returns (frames, channels)
    if samples.shape[0] > 2:
        raise ChannelCountError(
            f"{path}: {samples.shape[0]} channels, only mono/stereo supported"
        )
    return AudioBuffer(samples, rate)


def save_wav(path, audio: AudioBuffer, bit_depth: str = "float32") -> None:
    """Write a WAV file; ``bit_depth`` is 'float32' (default) or 'pcm16'.

    Float output avoids clipping decoded material that exceeds full scale.
    """
    data = audio.samples.T if audio.channels > 1 else audio.samples[0]
    if bit_depth == "float32":
        scipy.io.wavfile.write(path, audio.sample_rate, data.astype(np.float32))
    elif bit_depth == "pcm16":
        clipped = np.clip(data, -1.0, 1.0 - 2.0 ** -15)
        scipy.io.wavfile.write(
            path, audio.sample_rate, np.round(clipped * 32768.0).astype(np.int16)
        )
    else:
        raise FormatError(f"unsupported bit depth {bit_depth!r}")


def downmix(stereo: AudioBuffer) -> AudioBuffer:
    """Mono downmix (L + R) / 2."""
    if stereo.channels != 2:
        raise ChannelCountError(f"downmix needs 2 channels, got {stereo.channels}")
    mono = 0.5 * (stereo.samples[0] + stereo.samples[1])
    return AudioBuffer(mono[np.newaxis, :], stereo.sample_rate)


def make_patch(chunk: AudioBuffer, spec: PatchSpec, rng: np.random.Generator) -> AudioBuffer:
    """Extract a random patch with gain and channel-swap augmentation.

    A contiguous ``patch_seconds`` segment is cut at a random offset, a random
    gain drawn uniformly in ``gain_range_db`` is applied to all channels, and
    for stereo input the channels are swapped with probability ``swap_prob``.
    """
    patch_len = int(round(spec.patch_seconds * chunk.sample_rate))
    if chunk.length < patch_len:
        raise LengthError(
            f"chunk of {chunk.length} samples shorter than patch of {patch_len}"
        )
    start = int(rng.integers(0, chunk.length - patch_len + 1))
    gain_db = float(rng.uniform(*spec.gain_range_db))
    segment = chunk.samples[:, start : start + patch_len] * 10.0 ** (gain_db / 20.0)
    if chunk.channels == 2 and rng.random() < spec.swap_prob:
        segment = segment[::-1]
    return AudioBuffer(segment.copy(), chunk.sample_rate)
