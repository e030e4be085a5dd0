"""STFT/ISTFT and the banded cross-spectrogram primitive.

Analysis uses 4096-sample Hann frames with 75% overlap at 44.1 kHz. Frames
are hop-aligned; the signal is zero-padded by ``frame_size - hop`` at the
start (and as needed at the end) so that every input sample is covered by
the full set of four overlapping windows. With the periodic Hann window the
analysis windows then sum to exactly 2 and their squares to exactly 1.5 over
the whole signal, which makes the weighted overlap-add resynthesis exact at
every sample, including the first ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio_io import AudioBuffer
from .errors import ChannelCountError, ConfigError, LengthError, ShapeError


@dataclass
class StftConfig:
    frame_size: int = 4096
    hop: int = 1024

    def __post_init__(self):
        if self.frame_size != 4 * self.hop:
            raise ConfigError(
                f"hop must be frame_size/4 for 75% overlap, got "
                f"{self.hop} vs frame_size {self.frame_size}"
            )

    @property
    def bins(self) -> int:
        return self.frame_size // 2 + 1

    def window(self) -> np.ndarray:
        # Periodic Hann: constant overlap-add at hop = frame_size/4.
        n = np.arange(self.frame_size)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.frame_size)

    def n_frames(self, length: int) -> int:
        if length < 1:
            raise LengthError("empty signal")
        return (length - 1) // self.hop + 4


def stft(mono: AudioBuffer, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Complex spectrogram (bins x frames) of a mono buffer."""
    if mono.channels != 1:
        raise ChannelCountError(f"stft needs mono input, got {mono.channels} channels")
    x = mono.samples[0]
    if x.size < cfg.frame_size:
        raise LengthError(
            f"signal of {x.size} samples shorter than one frame ({cfg.frame_size})"
        )
    n_frames = cfg.n_frames(x.size)
    lead = cfg.frame_size - cfg.hop
    total = (n_frames - 1) * cfg.hop + cfg.frame_size
    padded = np.zeros(total)
    padded[lead : lead + x.size] = x
    idx = np.arange(cfg.frame_size)[:, None] + cfg.hop * np.arange(n_frames)[None, :]
    frames = padded[idx] * cfg.window()[:, None]
    return np.fft.rfft(frames, axis=0)


def istft(
    spec: np.ndarray, cfg: StftConfig = StftConfig(), length: int | None = None
) -> AudioBuffer:
    """Weighted overlap-add resynthesis; inverse of :func:`stft`.

    ``length`` crops the output to the original signal length; without it the
    maximum length consistent with the frame count is returned.
    """
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[0] != cfg.bins:
        raise ShapeError(f"expected ({cfg.bins}, frames) spectrogram, got {spec.shape}")
    n_frames = spec.shape[1]
    max_length = (n_frames - 3) * cfg.hop
    if length is None:
        length = max_length
    elif not 0 < length <= max_length:
        raise ShapeError(
            f"length {length} inconsistent with {n_frames} frames (max {max_length})"
        )
    window = cfg.window()
    frames = np.fft.irfft(spec, n=cfg.frame_size, axis=0) * window[:, None]
    total = (n_frames - 1) * cfg.hop + cfg.frame_size
    out = np.zeros(total)
    for j in range(n_frames):
        out[j * cfg.hop : j * cfg.hop + cfg.frame_size] += frames[:, j]
    # Sum of squared Hann windows across the four overlaps is exactly 3/2.
    lead = cfg.frame_size - cfg.hop
    return AudioBuffer(out[np.newaxis, lead : lead + length] / 1.5)


def erb_number(freq_hz):
    """ERB-number scale value for a frequency in Hz (Glasberg & Moore)."""
    return 21.4 * np.log10(4.37e-3 * np.asarray(freq_hz, dtype=np.float64) + 1.0)


@dataclass
class BandMap:
    """Partition of FFT bins into contiguous bands.

    ``edges`` has ``n_bands + 1`` entries; band b owns bins
    [edges[b], edges[b+1]). Every column of the 0/1 summation matrix sums
    to one: each bin belongs to exactly one band.
    """

    edges: np.ndarray
    bins: int = field(default=2049)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64)
        if self.edges[0] != 0 or self.edges[-1] != self.bins:
            raise ConfigError("band edges must span [0, bins]")
        if np.any(np.diff(self.edges) < 1):
            raise ConfigError("every band must contain at least one bin")

    @property
    def n_bands(self) -> int:
        return len(self.edges) - 1

    @property
    def matrix(self) -> np.ndarray:
        b = np.zeros((self.n_bands, self.bins))
        for i in range(self.n_bands):
            b[i, self.edges[i] : self.edges[i + 1]] = 1.0
        return b

    def band_of_bin(self) -> np.ndarray:
        """Band index of every bin (length ``bins``)."""
        return np.searchsorted(self.edges, np.arange(self.bins), side="right") - 1

    def bin_counts(self) -> np.ndarray:
        return np.diff(self.edges)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Sum a (bins, frames) matrix into (n_bands, frames)."""
        if x.shape[0] != self.bins:
            raise ShapeError(f"expected {self.bins} bins, got {x.shape[0]}")
        return np.add.reduceat(x, self.edges[:-1], axis=0)

    def expand(self, banded: np.ndarray) -> np.ndarray:
        """Broadcast per-band values (n_bands, frames) back to bins."""
        if banded.shape[0] != self.n_bands:
            raise ShapeError(f"expected {self.n_bands} bands, got {banded.shape[0]}")
        return banded[self.band_of_bin(), :]

    def save(self, path) -> None:
        with open(path, "w") as f:
            for i in range(self.n_bands):
                f.write(f"{i} {self.edges[i]} {self.edges[i + 1] - 1}\n")

    @classmethod
    def load(cls, path, bins: int = 2049) -> "BandMap":
        rows = []
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                idx, first, last = (int(v) for v in line.split())
                rows.append((idx, first, last))
        rows.sort()
        edges = [first for _, first, _ in rows] + [rows[-1][2] + 1]
        return cls(np.asarray(edges), bins=bins)


def make_band_map(
    bins: int = 2049, n_bands: int = 34, sample_rate: int = 44100
) -> BandMap:
    """Partition bins into bands uniform on the ERB-number scale.

    Bin centers are placed on the ERB-number axis between 0 Hz and Nyquist;
    the axis is cut into ``n_bands`` equal segments. Any band left empty by
    the cut is healed by pushing its upper edge up one bin (merge-up), so
    every band is non-empty.
    """
    if n_bands > bins:
        raise ConfigError(f"cannot split {bins} bins into {n_bands} bands")
    nyquist = sample_rate / 2.0
    frame_size = 2 * (bins - 1)
    bin_spacing = sample_rate / frame_size
    targets = np.arange(n_bands + 1) / n_bands * erb_number(nyquist)
    edge_freqs = (10.0 ** (targets / 21.4) - 1.0) / 4.37e-3
    edges = np.round(edge_freqs / bin_spacing).astype(np.int64)
    edges[0], edges[-1] = 0, bins
    for b in range(1, n_bands):
        edges[b] = max(edges[b], edges[b - 1] + 1)
        edges[b] = min(edges[b], bins - (n_bands - b))
    return BandMap(edges, bins=bins)


def cross_spectrogram(x: np.ndarray, y: np.ndarray, band_map: BandMap) -> np.ndarray:
    """Band-summed cross-spectrogram: sums of X * conj(Y) per band and frame."""
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape:
        raise ShapeError(f"mismatched spectrogram shapes {x.shape} vs {y.shape}")
    return band_map.apply(x * np.conj(y))
