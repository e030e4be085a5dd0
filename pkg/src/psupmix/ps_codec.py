"""Parametric-stereo codec: parameter extraction, quantization and decoding.

The encoder measures per-band interchannel intensity differences (IID, dB)
and coherence (IC) from left/right spectrograms. The decoder rebuilds a
stereo pair by mixing the mono signal with a decorrelated copy through
per-band rotation gains derived from IID/IC.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from .audio_io import AudioBuffer
from .errors import ChannelCountError, ConfigError, FormatError, ShapeError, TokenRangeError
from .spectral import BandMap, cross_spectrogram

POWER_FLOOR = 1e-12
IID_CLAMP_DB = 60.0

# 31 IID steps (dB), finer near 0; 8 IC steps from coherent to anti-phase.
DEFAULT_IID_LEVELS = np.array(
    [0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 13.0, 16.0, 19.0, 22.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0]
)
DEFAULT_IID_LEVELS = np.concatenate([-DEFAULT_IID_LEVELS[:0:-1], DEFAULT_IID_LEVELS])
DEFAULT_IC_LEVELS = np.array([1.0, 0.937, 0.84118, 0.60092, 0.36764, 0.0, -0.589, -1.0])


@dataclass
class QuantGrids:
    """Quantizer levels: ascending IID dB values, descending IC values."""

    iid_levels: np.ndarray = field(default_factory=lambda: DEFAULT_IID_LEVELS.copy())
    ic_levels: np.ndarray = field(default_factory=lambda: DEFAULT_IC_LEVELS.copy())

    def __post_init__(self):
        self.iid_levels = np.asarray(self.iid_levels, dtype=np.float64)
        self.ic_levels = np.asarray(self.ic_levels, dtype=np.float64)
        if np.any(np.diff(self.iid_levels) <= 0):
            raise ConfigError("IID levels must be strictly increasing")
        if np.any(self.iid_levels + self.iid_levels[::-1] != 0.0):
            raise ConfigError("IID levels must be symmetric about 0")
        if np.any(np.diff(self.ic_levels) >= 0):
            raise ConfigError("IC levels must be strictly decreasing")
        if self.ic_levels[0] != 1.0 or self.ic_levels[-1] != -1.0:
            raise ConfigError("IC levels must run from 1 to -1")

    @property
    def n_iid(self) -> int:
        return len(self.iid_levels)

    @property
    def n_ic(self) -> int:
        return len(self.ic_levels)

    @property
    def n_tokens(self) -> int:
        return self.n_iid * self.n_ic

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write("# IID levels (dB)\n")
            for v in self.iid_levels:
                f.write(f"{v}\n")
            f.write("# IC levels\n")
            for v in self.ic_levels:
                f.write(f"{v}\n")

    @classmethod
    def load(cls, path, n_iid: int = 31, n_ic: int = 8) -> "QuantGrids":
        values = []
        with open(path) as f:
            for line in f:
                line = line.strip()
                if line and not line.startswith("#"):
                    values.append(float(line))
        if len(values) != n_iid + n_ic:
            raise FormatError(
                f"{path}: expected {n_iid + n_ic} levels, found {len(values)}"
            )
        return cls(np.asarray(values[:n_iid]), np.asarray(values[n_iid:]))


@dataclass
class PsParams:
    """Unquantized PS parameters: ``iid`` in dB and ``ic``, each (bands, frames)."""

    iid: np.ndarray
    ic: np.ndarray

    def __post_init__(self):
        self.iid = np.asarray(self.iid, dtype=np.float64)
        self.ic = np.asarray(self.ic, dtype=np.float64)
        if self.iid.shape != self.ic.shape:
            raise ShapeError(
                f"iid shape {self.iid.shape} differs from ic shape {self.ic.shape}"
            )

    @property
    def n_bands(self) -> int:
        return self.iid.shape[0]

    @property
    def n_frames(self) -> int:
        return self.iid.shape[1]

    def joined(self) -> np.ndarray:
        """IID rows stacked above IC rows: (2 * bands, frames)."""
        return np.vstack([self.iid, self.ic])

    @classmethod
    def from_joined(cls, matrix: np.ndarray) -> "PsParams":
        matrix = np.asarray(matrix)
        if matrix.shape[0] % 2 != 0:
            raise ShapeError(f"joined matrix needs an even row count, got {matrix.shape}")
        half = matrix.shape[0] // 2
        return cls(matrix[:half], matrix[half:])


@dataclass
class PsTokens:
    """Fused quantized parameters, one integer per band and frame."""

    q: np.ndarray
    n_ic: int = 8

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.int64)

    @property
    def n_bands(self) -> int:
        return self.q.shape[0]

    @property
    def n_frames(self) -> int:
        return self.q.shape[1]

    def split(self) -> tuple[np.ndarray, np.ndarray]:
        """Recover (iid index, ic index) via division and modulo."""
        return self.q // self.n_ic, self.q % self.n_ic

    @classmethod
    def fuse(cls, q_iid: np.ndarray, q_ic: np.ndarray, n_ic: int = 8) -> "PsTokens":
        return cls(n_ic * np.asarray(q_iid) + np.asarray(q_ic), n_ic=n_ic)


def encode(left: np.ndarray, right: np.ndarray, band_map: BandMap) -> PsParams:
    """Extract IID/IC from left/right complex spectrograms.

    IID is the banded power ratio in dB, clamped to +-60 dB; IC is the
    normalized real cross-spectrum in [-1, 1]. Bands where both channels sit
    below the numerical power floor decode most gently as (0 dB, IC 1), so
    they are pinned to that value.
    """
    if left.shape != right.shape:
        raise ShapeError(f"mismatched spectrogram shapes {left.shape} vs {right.shape}")
    p_ll = np.real(cross_spectrogram(left, left, band_map))
    p_rr = np.real(cross_spectrogram(right, right, band_map))
    p_lr = np.real(cross_spectrogram(left, right, band_map))
    iid = 10.0 * np.log10((p_ll + POWER_FLOOR) / (p_rr + POWER_FLOOR))
    iid = np.clip(iid, -IID_CLAMP_DB, IID_CLAMP_DB)
    ic = p_lr / np.sqrt((p_ll + POWER_FLOOR) * (p_rr + POWER_FLOOR))
    ic = np.clip(ic, -1.0, 1.0)
    silent = (p_ll < POWER_FLOOR) & (p_rr < POWER_FLOOR)
    iid[silent] = 0.0
    ic[silent] = 1.0
    return PsParams(iid, ic)


def _nearest_level(values: np.ndarray, levels: np.ndarray) -> np.ndarray:
    # argmin returns the first minimum, so ties resolve to the lower index.
    return np.abs(values[..., np.newaxis] - levels).argmin(axis=-1)


def quantize(params: PsParams, grids: QuantGrids = QuantGrids()) -> PsTokens:
    """Map each parameter to its nearest grid level and fuse the indices."""
    q_iid = _nearest_level(params.iid, grids.iid_levels)
    q_ic = _nearest_level(params.ic, grids.ic_levels)
    return PsTokens.fuse(q_iid, q_ic, n_ic=grids.n_ic)


def dequantize(tokens: PsTokens, grids: QuantGrids = QuantGrids()) -> PsParams:
    """Replace each token by its grid levels."""
    if np.any(tokens.q < 0) or np.any(tokens.q >= grids.n_tokens):
        bad = tokens.q[(tokens.q < 0) | (tokens.q >= grids.n_tokens)][0]
        raise TokenRangeError(f"token {bad} outside [0, {grids.n_tokens - 1}]")
    q_iid, q_ic = tokens.split()
    return PsParams(grids.iid_levels[q_iid], grids.ic_levels[q_ic])


@dataclass
class DecorrConfig:
    """All-pass cascade and transient-preservation settings.

    ``sections`` are (delay in samples, feedback gain) pairs; pairwise
    coprime delays avoid audible comb patterns. Transients are detected per
    ``block_size`` block against the running median energy; detected blocks
    (plus ``transient_release`` more) bypass the cascade entirely and the
    bypass fades back out over one block.
    """

    sections: tuple = ((331, 0.55), (149, 0.55), (61, 0.55), (23, 0.55))
    transient_threshold: float = 2.5
    transient_release: int = 1
    block_size: int = 1024

    def __post_init__(self):
        for delay, gain in self.sections:
            if delay <= 0:
                raise ConfigError(f"all-pass delay must be positive, got {delay}")
            if abs(gain) >= 1.0:
                raise ConfigError(f"all-pass gain {gain} is unstable (|gain| >= 1)")


def _transient_gate(x: np.ndarray, cfg: DecorrConfig) -> np.ndarray:
    """Per-sample dry/wet gate: 1 during transient blocks, one-block fades out."""
    n_blocks = int(np.ceil(x.size / cfg.block_size))
    padded = np.zeros(n_blocks * cfg.block_size)
    padded[: x.size] = x
    energy = (padded.reshape(n_blocks, cfg.block_size) ** 2).sum(axis=1)
    detected = np.zeros(n_blocks, dtype=bool)
    for k in range(4, n_blocks):
        ref = np.median(energy[k - 4 : k])
        if energy[k] > cfg.transient_threshold * ref and ref > 0.0:
            detected[k] = True
    hold = detected.copy()
    for k in np.flatnonzero(detected):
        hold[k : k + 1 + cfg.transient_release] = True
    gate = np.zeros(padded.size)
    ramp = 1.0 - (np.arange(cfg.block_size) + 1.0) / cfg.block_size
    for k in np.flatnonzero(hold):
        lo = k * cfg.block_size
        gate[lo : lo + cfg.block_size] = 1.0
        if k + 1 < n_blocks and not hold[k + 1]:
            gate[lo + cfg.block_size : lo + 2 * cfg.block_size] = ramp
    return gate[: x.size]


def decorrelate(mono: AudioBuffer, cfg: DecorrConfig = DecorrConfig()) -> AudioBuffer:
    """All-pass cascade decorrelator with transient preservation.

    The cascade is magnitude-flat, so band powers match the input. During
    detected transient blocks the output is the input itself (the cascade's
    direct path has zero latency, so the dry copy is time-aligned), which
    keeps attacks from being smeared.
    """
    if mono.channels != 1:
        raise ChannelCountError(f"decorrelate needs mono input, got {mono.channels}")
    x = mono.samples[0]
    wet = x
    for delay, gain in cfg.sections:
        b = np.zeros(delay + 1)
        a = np.zeros(delay + 1)
        b[0], b[delay] = -gain, 1.0
        a[0], a[delay] = 1.0, -gain
        wet = scipy.signal.lfilter(b, a, wet)
    gate = _transient_gate(x, cfg)
    return AudioBuffer((gate * x + (1.0 - gate) * wet)[np.newaxis, :], mono.sample_rate)


def mixing_matrices(params: PsParams) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-band mixing gains (Ma, Mb, Mc, Md) for decoding.

    The rotation angle follows the coherence; the asymmetry term beta sends
    less decorrelated energy to the stronger channel.
    """
    c = 10.0 ** (params.iid / 20.0)
    c_sq = c * c
    c_left = np.sqrt(2.0 * c_sq / (1.0 + c_sq))
    c_right = np.sqrt(2.0 / (1.0 + c_sq))
    alpha = 0.5 * np.arccos(np.clip(params.ic, -1.0, 1.0))
    beta = alpha * (c_right - c_left) / (c_left + c_right)
    m_a = c_left * np.cos(beta + alpha)
    m_b = c_left * np.sin(beta + alpha)
    m_c = c_right * np.cos(beta - alpha)
    m_d = c_right * np.sin(beta - alpha)
    return m_a, m_b, m_c, m_d


def decode(
    mono_spec: np.ndarray,
    decorr_spec: np.ndarray,
    params: PsParams,
    band_map: BandMap,
) -> tuple[np.ndarray, np.ndarray]:
    """Rebuild left/right spectrograms from mono + decorrelated spectrograms."""
    if mono_spec.shape != decorr_spec.shape:
        raise ShapeError(
            f"mono {mono_spec.shape} and decorrelated {decorr_spec.shape} differ"
        )
    if params.n_frames != mono_spec.shape[1]:
        raise ShapeError(
            f"params cover {params.n_frames} frames, spectrogram has {mono_spec.shape[1]}"
        )
    m_a, m_b, m_c, m_d = (band_map.expand(m) for m in mixing_matrices(params))
    left = m_a * mono_spec + m_b * decorr_spec
    right = m_c * mono_spec + m_d * decorr_spec
    return left, right


_PSP_MAGIC = b"PSP1"
KIND_PARAMS = 0
KIND_TOKENS = 1


def save_ps_file(path, data: PsParams | PsTokens) -> None:
    """Write PS side information: float parameters or fused tokens."""
    with open(path, "wb") as f:
        if isinstance(data, PsParams):
            f.write(_PSP_MAGIC)
            f.write(struct.pack("<IIB", data.n_bands, data.n_frames, KIND_PARAMS))
            f.write(data.joined().astype("<f4").tobytes())
        elif isinstance(data, PsTokens):
            f.write(_PSP_MAGIC)
            f.write(struct.pack("<IIB", data.n_bands, data.n_frames, KIND_TOKENS))
            f.write(data.q.astype("<u2").tobytes())
        else:
            raise FormatError(f"cannot serialize {type(data).__name__}")


def load_ps_file(path) -> PsParams | PsTokens:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _PSP_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {_PSP_MAGIC!r}")
        n_bands, n_frames, kind = struct.unpack("<IIB", f.read(9))
        payload = f.read()
    if kind == KIND_PARAMS:
        matrix = np.frombuffer(payload, dtype="<f4").astype(np.float64)
        if matrix.size != 2 * n_bands * n_frames:
            raise FormatError(f"{path}: truncated parameter payload")
        return PsParams.from_joined(matrix.reshape(2 * n_bands, n_frames))
    if kind == KIND_TOKENS:
        q = np.frombuffer(payload, dtype="<u2").astype(np.int64)
        if q.size != n_bands * n_frames:
            raise FormatError(f"{path}: truncated token payload")
        return PsTokens(q.reshape(n_bands, n_frames))
    raise FormatError(f"{path}: unknown payload kind {kind}")
