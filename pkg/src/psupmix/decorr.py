"""Classical decorrelation upmix baseline.

Width-only upmixing: the mono input is mixed with its decorrelated copy so
that each band reaches a target coherence, with no level difference between
the channels. Bass stays coherent by default to keep low end mono-compatible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import AudioBuffer
from .errors import ConfigError, FormatError
from .ps_codec import DecorrConfig, PsParams, decode, decorrelate
from .spectral import BandMap, StftConfig, istft, make_band_map, stft


def default_ic_profile(band_map: BandMap, sample_rate: int = 44100) -> np.ndarray:
    """Coherence 1 below 200 Hz, then a linear descent to 0.4 at the top band."""
    frame_size = 2 * (band_map.bins - 1)
    centers = 0.5 * (band_map.edges[:-1] + band_map.edges[1:] - 1) * sample_rate / frame_size
    profile = np.ones(band_map.n_bands)
    wide = np.flatnonzero(centers >= 200.0)
    if wide.size:
        first = wide[0]
        span = band_map.n_bands - 1 - first
        for i, b in enumerate(range(first, band_map.n_bands)):
            profile[b] = 1.0 - 0.6 * (i / span if span > 0 else 1.0)
    return profile


@dataclass
class IcProfile:
    """Per-band, time-invariant target coherence."""

    target_ic: np.ndarray

    def __post_init__(self):
        self.target_ic = np.asarray(self.target_ic, dtype=np.float64)
        if np.any(np.abs(self.target_ic) > 1.0):
            raise ConfigError("target coherence values must lie in [-1, 1]")

    @classmethod
    def load(cls, path, n_bands: int = 34) -> "IcProfile":
        values = []
        with open(path) as f:
            for line in f:
                line = line.strip()
                if line and not line.startswith("#"):
                    values.append(float(line))
        if len(values) != n_bands:
            raise FormatError(f"{path}: expected {n_bands} values, found {len(values)}")
        return cls(np.asarray(values))

    def save(self, path) -> None:
        with open(path, "w") as f:
            for v in self.target_ic:
                f.write(f"{v}\n")


def decorr_upmix(
    mono: AudioBuffer,
    profile: IcProfile | None = None,
    stft_cfg: StftConfig = StftConfig(),
    band_map: BandMap | None = None,
    decorr_cfg: DecorrConfig = DecorrConfig(),
) -> AudioBuffer:
    """Upmix by decoding constant (0 dB, target-IC) parameters."""
    if band_map is None:
        band_map = make_band_map(stft_cfg.bins, sample_rate=mono.sample_rate)
    if profile is None:
        profile = IcProfile(default_ic_profile(band_map, mono.sample_rate))
    if profile.target_ic.size != band_map.n_bands:
        raise ConfigError(
            f"profile has {profile.target_ic.size} bands, band map {band_map.n_bands}"
        )
    mono_spec = stft(mono, stft_cfg)
    wet_spec = stft(decorrelate(mono, decorr_cfg), stft_cfg)
    n_frames = mono_spec.shape[1]
    params = PsParams(
        np.zeros((band_map.n_bands, n_frames)),
        np.tile(profile.target_ic[:, np.newaxis], (1, n_frames)),
    )
    left, right = decode(mono_spec, wet_spec, params, band_map)
    out_l = istft(left, stft_cfg, length=mono.length)
    out_r = istft(right, stft_cfg, length=mono.length)
    return AudioBuffer(
        np.vstack([out_l.samples, out_r.samples]), mono.sample_rate
    )
