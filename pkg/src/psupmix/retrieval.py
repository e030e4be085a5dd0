"""Retrieval-based parameter generation.

Key/value pairs are harvested from stereo material: the key summarizes the
banded mono magnitude over a short context window, the value is the PS
parameter column of the window's last frame. At inference the nearest stored
key (Euclidean) supplies each frame's parameters, followed by a sign-fix and
smoothing pass that removes rapid left/right wobbling.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .audio_io import AudioBuffer, downmix
from .errors import DataError, FormatError, ShapeError
from .ps_codec import PsParams, encode
from .spectral import BandMap, StftConfig, stft

_PNN_MAGIC = b"PNN1"


@dataclass
class NnConfig:
    """Context length (frames per key) and smoothing factor."""

    n_context: int = 20
    smoothing: float = 0.95

    def __post_init__(self):
        if self.n_context < 1:
            raise ValueError(f"n_context must be >= 1, got {self.n_context}")
        if not 0.0 <= self.smoothing < 1.0:
            raise ValueError(f"smoothing must be in [0, 1), got {self.smoothing}")


class NnIndex:
    """Immutable key/value store with exact Euclidean search.

    The accelerated path evaluates all distances through one BLAS product
    per query block; ties resolve to the lowest insertion index, matching
    the brute-force reference scan.
    """

    def __init__(self, keys: np.ndarray, values: np.ndarray):
        keys = np.asarray(keys, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if keys.ndim != 2 or values.ndim != 2 or keys.shape[0] != values.shape[0]:
            raise ShapeError(
                f"keys {keys.shape} and values {values.shape} must pair row-wise"
            )
        if keys.shape[0] == 0:
            raise DataError("empty index")
        self.keys = keys
        self.values = values
        self._key_sq = np.einsum("ij,ij->i", keys, keys)

    def __len__(self) -> int:
        return self.keys.shape[0]

    @property
    def key_dim(self) -> int:
        return self.keys.shape[1]

    @property
    def value_dim(self) -> int:
        return self.values.shape[1]

    def nearest(self, queries: np.ndarray) -> np.ndarray:
        """Indices of the closest stored keys for (m, key_dim) queries."""
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if queries.shape[1] != self.key_dim:
            raise ShapeError(f"query dim {queries.shape[1]} != key dim {self.key_dim}")
        # |q - k|^2 = |k|^2 - 2 q.k + |q|^2; the |q|^2 term is constant per row.
        scores = self._key_sq[np.newaxis, :] - 2.0 * queries @ self.keys.T
        return scores.argmin(axis=1)

    def query(self, key: np.ndarray) -> np.ndarray:
        """Value of the single nearest neighbor."""
        return self.values[int(self.nearest(key)[0])]

    def brute_force_nearest(self, query: np.ndarray) -> int:
        """Reference linear scan; kept independent of the BLAS path."""
        query = np.asarray(query, dtype=np.float64)
        best, best_d = 0, np.inf
        for i in range(len(self)):
            d = float(np.sum((self.keys[i] - query) ** 2))
            if d < best_d:
                best, best_d = i, d
        return best

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(_PNN_MAGIC)
            f.write(struct.pack("<QII", len(self), self.key_dim, self.value_dim))
            f.write(self.keys.astype("<f4").tobytes())
            f.write(self.values.astype("<f4").tobytes())

    @classmethod
    def load(cls, path) -> "NnIndex":
        with open(path, "rb") as f:
            magic = f.read(4)
            if magic != _PNN_MAGIC:
                raise FormatError(f"{path}: bad magic {magic!r}, expected {_PNN_MAGIC!r}")
            n_pairs, key_dim, value_dim = struct.unpack("<QII", f.read(16))
            keys = np.frombuffer(f.read(4 * n_pairs * key_dim), dtype="<f4")
            values = np.frombuffer(f.read(4 * n_pairs * value_dim), dtype="<f4")
        if keys.size != n_pairs * key_dim or values.size != n_pairs * value_dim:
            raise FormatError(f"{path}: truncated index payload")
        return cls(
            keys.astype(np.float64).reshape(n_pairs, key_dim),
            values.astype(np.float64).reshape(n_pairs, value_dim),
        )


def compute_key(window_mag: np.ndarray, band_map: BandMap, n_context: int = 20) -> np.ndarray:
    """Frame-averaged banded magnitude of an ``n_context``-frame window."""
    window_mag = np.asarray(window_mag)
    if window_mag.ndim != 2 or window_mag.shape[1] != n_context:
        raise ShapeError(
            f"expected (bins, {n_context}) magnitude window, got {window_mag.shape}"
        )
    return band_map.apply(window_mag).mean(axis=1)


def _context_keys(banded_mag: np.ndarray, n_context: int) -> np.ndarray:
    """Keys for every frame: mean of the trailing ``n_context`` banded columns.

    Windows reaching before the first frame repeat frame 0, preserving
    causality and output length.
    """
    n_bands, n_frames = banded_mag.shape
    padded = np.concatenate(
        [np.tile(banded_mag[:, :1], (1, n_context - 1)), banded_mag], axis=1
    )
    csum = np.concatenate([np.zeros((n_bands, 1)), np.cumsum(padded, axis=1)], axis=1)
    return ((csum[:, n_context:] - csum[:, :-n_context]) / n_context).T


def build_index(
    corpus,
    n_pairs: int,
    band_map: BandMap,
    stft_cfg: StftConfig = StftConfig(),
    cfg: NnConfig = NnConfig(),
    rng: np.random.Generator | None = None,
) -> NnIndex:
    """Sample key/value pairs with replacement over songs and positions.

    ``corpus`` is a sequence of stereo :class:`AudioBuffer` chunks, each long
    enough to yield at least ``n_context`` frames.
    """
    rng = rng or np.random.default_rng()
    corpus = list(corpus)
    if not corpus:
        raise DataError("empty corpus")
    banded, params = [], []
    for chunk in corpus:
        left = stft(AudioBuffer(chunk.samples[:1], chunk.sample_rate), stft_cfg)
        right = stft(AudioBuffer(chunk.samples[1:2], chunk.sample_rate), stft_cfg)
        mono_spec = stft(downmix(chunk), stft_cfg)
        if mono_spec.shape[1] < cfg.n_context:
            raise DataError(
                f"chunk with {mono_spec.shape[1]} frames is shorter than the "
                f"{cfg.n_context}-frame context"
            )
        banded.append(band_map.apply(np.abs(mono_spec)))
        params.append(encode(left, right, band_map).joined())
    keys = np.empty((n_pairs, band_map.n_bands))
    values = np.empty((n_pairs, 2 * band_map.n_bands))
    for i in range(n_pairs):
        song = int(rng.integers(0, len(corpus)))
        n_frames = banded[song].shape[1]
        last = int(rng.integers(cfg.n_context - 1, n_frames))
        keys[i] = banded[song][:, last - cfg.n_context + 1 : last + 1].mean(axis=1)
        values[i] = params[song][:, last]
    return NnIndex(keys, values)


def postprocess(params: PsParams, smoothing: float = 0.95) -> PsParams:
    """Sign-fix then exponentially smooth a retrieved parameter sequence.

    A whole IID column is negated when its mirror sits closer (Euclidean) to
    the previous, already-processed column; this removes frame-rate
    left/right wobbling. Smoothing then runs over all rows with
    ``y_j = s * y_{j-1} + (1 - s) * x_j`` and ``y_0 = x_0``.
    """
    iid = params.iid.copy()
    for j in range(1, iid.shape[1]):
        keep = np.linalg.norm(iid[:, j] - iid[:, j - 1])
        flip = np.linalg.norm(-iid[:, j] - iid[:, j - 1])
        if flip < keep:
            iid[:, j] = -iid[:, j]
    joined = np.vstack([iid, params.ic])
    smoothed = joined.copy()
    for j in range(1, joined.shape[1]):
        smoothed[:, j] = smoothing * smoothed[:, j - 1] + (1.0 - smoothing) * joined[:, j]
    return PsParams.from_joined(smoothed)


def nn_generate(
    mono_spec: np.ndarray,
    index: NnIndex,
    band_map: BandMap,
    cfg: NnConfig = NnConfig(),
) -> PsParams:
    """Retrieve and post-process parameters for every frame of a mono spectrogram."""
    banded = band_map.apply(np.abs(np.asarray(mono_spec)))
    keys = _context_keys(banded, cfg.n_context)
    raw = index.values[index.nearest(keys)].T
    return postprocess(PsParams.from_joined(raw), cfg.smoothing)
