"""Objective evaluation: best-of-K parameter error and Fréchet distance.

Both metrics operate on PS parameter matrices. The best-of-K error rewards
generators whose sample set comes close to the ground truth at least once;
the Fréchet distance compares the Gaussian statistics of parameter pools
frame-by-frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError
from .ps_codec import PsParams


@dataclass
class MetricConfig:
    k_samples: int = 128
    iid_weight: float = 0.15
    iid_clip_db: float = 20.0

    def __post_init__(self):
        if self.k_samples < 1:
            raise DataError("need at least one sample")


def delta(x, y, kind: str, cfg: MetricConfig = MetricConfig()):
    """Elementwise parameter error: weighted clipped-absolute for IID,
    plain absolute for IC."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if kind == "iid":
        clip = cfg.iid_clip_db
        return cfg.iid_weight * np.abs(np.clip(x, -clip, clip) - np.clip(y, -clip, clip))
    if kind == "ic":
        return np.abs(x - y)
    raise ValueError(f"unknown parameter kind {kind!r}")


def _sample_error(truth: PsParams, sample: PsParams, cfg: MetricConfig, raw_sum: bool):
    if sample.iid.shape != truth.iid.shape:
        raise ShapeError(
            f"sample shape {sample.iid.shape} differs from truth {truth.iid.shape}"
        )
    err = delta(truth.iid, sample.iid, "iid", cfg).sum()
    err += delta(truth.ic, sample.ic, "ic", cfg).sum()
    if raw_sum:
        return err
    return err / (2 * truth.iid.size)


def e_min(
    truth: PsParams,
    samples: list[PsParams],
    cfg: MetricConfig = MetricConfig(),
    raw_sum: bool = False,
) -> float:
    """Minimum error over a sample set.

    By default the per-sample error is the mean over all matrix elements so
    values are comparable across excerpt lengths; ``raw_sum`` restores the
    plain sum.
    """
    if not samples:
        raise DataError("empty sample list")
    return float(min(_sample_error(truth, s, cfg, raw_sum) for s in samples))


def _sym_sqrt(matrix: np.ndarray, floor: float = 1e-10) -> np.ndarray:
    values, vectors = np.linalg.eigh(matrix)
    return (vectors * np.sqrt(np.maximum(values, floor))) @ vectors.T


def frechet(pool_a: np.ndarray, pool_b: np.ndarray) -> float:
    """Fréchet distance between two (frames, dims) parameter pools.

    Gaussian form: squared mean distance plus the covariance trace term. The
    cross square root uses the symmetric similarity form
    sqrt(A^1/2 B A^1/2), which stays stable for near-singular covariances;
    tiny negative results are clamped to zero.
    """
    pool_a = np.asarray(pool_a, dtype=np.float64)
    pool_b = np.asarray(pool_b, dtype=np.float64)
    if pool_a.ndim != 2 or pool_b.ndim != 2 or pool_a.shape[1] != pool_b.shape[1]:
        raise ShapeError(f"incompatible pools {pool_a.shape} vs {pool_b.shape}")
    if pool_a.shape[0] < 2 or pool_b.shape[0] < 2:
        raise DataError("each pool needs at least 2 frames")
    mu_a, mu_b = pool_a.mean(axis=0), pool_b.mean(axis=0)
    cov_a = np.cov(pool_a, rowvar=False)
    cov_b = np.cov(pool_b, rowvar=False)
    root_a = _sym_sqrt(cov_a)
    cross = _sym_sqrt(root_a @ cov_b @ root_a)
    value = float(
        np.sum((mu_a - mu_b) ** 2)
        + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross)
    )
    return max(value, 0.0)


def params_pool(params_list: list[PsParams]) -> np.ndarray:
    """Concatenate parameter matrices into one (frames, dims) pool."""
    if not params_list:
        raise DataError("empty parameter list")
    return np.concatenate([p.joined().T for p in params_list], axis=0)
