"""Loss, masking regimes, optimizer, and the training loop.

Token models train with weighted categorical cross-entropy restricted to
masked positions; the weight grows with the spread of the (clipped) IID and
IC planes so that wide, hard material counts more. The regression variant
uses a plain mean-squared error over all elements.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..audio_io import AudioBuffer, PatchSpec, downmix, make_patch
from ..errors import DataError, MaskError, ModelError, ShapeError
from ..ps_codec import PsParams, QuantGrids, encode, quantize
from ..spectral import BandMap, StftConfig, stft
from .network import SeqModel


@dataclass
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 700
    batch_size: int = 128
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    warmup_frac: float = 0.05
    ce_lambda: float = 0.15
    iid_clip_db: float = 20.0
    cond_dropout: float = 0.10


def learning_rate(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup over the first ``warmup_frac`` of steps, cosine decay to 0."""
    warmup = max(1, int(round(cfg.warmup_frac * total_steps)))
    if step < warmup:
        return cfg.lr * step / warmup
    progress = (step - warmup) / max(1, total_steps - warmup)
    return cfg.lr * 0.5 * (1.0 + np.cos(np.pi * min(progress, 1.0)))


def ce_weight(params: PsParams, ce_lambda: float = 0.15, iid_clip_db: float = 20.0) -> float:
    """Loss weight 1 + lambda*std(clipped IID) + std(IC), population form."""
    iid = np.clip(params.iid, -iid_clip_db, iid_clip_db)
    return float(1.0 + ce_lambda * iid.std() + params.ic.std())


def make_training_masks(mode: str, n_bands: int, n_frames: int, rng) -> np.ndarray:
    """Boolean (bands, frames) mask of positions hidden from the input.

    ``ar``: the top m bands of the last frame, m uniform on {1..n_bands}.
    ``mtm``: a uniform random subset whose size follows the cosine schedule,
    including the fully-masked endpoint.
    """
    mask = np.zeros((n_bands, n_frames), dtype=bool)
    if mode == "ar":
        m = int(rng.integers(1, n_bands + 1))
        mask[n_bands - m :, n_frames - 1] = True
    elif mode == "mtm":
        u = 1.0 - rng.random()  # uniform on (0, 1]
        total = n_bands * n_frames
        count = int(np.ceil(np.cos(np.pi * (1.0 - u) / 2.0) * total))
        flat = rng.choice(total, size=count, replace=False)
        mask.ravel()[flat] = True
    else:
        raise MaskError(f"unknown masking mode {mode!r}")
    return mask


@dataclass
class Batch:
    """One training batch; token fields are None in regression mode."""

    feats: np.ndarray  # (B, F, feat_dim)
    params: np.ndarray  # (B, 2*bands, F) unquantized targets
    tokens: np.ndarray | None = None  # (B, bands, F) ground-truth tokens
    masks: np.ndarray | None = None  # (B, bands, F) True = masked
    mask_mode: str | None = None  # 'ar' | 'mtm' | None

    @property
    def size(self) -> int:
        return self.feats.shape[0]

    def weights(self, cfg: TrainConfig) -> np.ndarray:
        half = self.params.shape[1] // 2
        return np.array(
            [
                ce_weight(
                    PsParams(self.params[i, :half], self.params[i, half:]),
                    cfg.ce_lambda,
                    cfg.iid_clip_db,
                )
                for i in range(self.size)
            ]
        )


def token_loss(logits, targets, masks, weights):
    """Weighted CE over masked positions; returns (loss, dlogits).

    ``logits`` is (B, F, bands, classes); targets/masks are (B, bands, F).
    Each item's CE is averaged over its own masked positions, scaled by its
    weight, then averaged over the batch. Unmasked positions receive no
    gradient.
    """
    n_batch = logits.shape[0]
    if masks is None or not masks.any(axis=(1, 2)).all():
        raise MaskError("token loss requires at least one masked position per item")
    dlogits = np.zeros_like(logits)
    total = 0.0
    for i in range(n_batch):
        bands, frames = np.nonzero(masks[i])
        sel = logits[i, frames, bands, :]  # (n_masked, classes)
        shifted = sel - sel.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1))
        tgt = targets[i, bands, frames]
        ce = logz - shifted[np.arange(len(tgt)), tgt]
        scale = weights[i] / (len(tgt) * n_batch)
        total += scale * ce.sum()
        probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
        probs[np.arange(len(tgt)), tgt] -= 1.0
        dlogits[i, frames, bands, :] = scale * probs
    return total, dlogits


def regression_loss(out, params):
    """MSE over all elements; ``out`` is (B, F, 2*bands), targets (B, 2*bands, F)."""
    targets = np.transpose(params, (0, 2, 1))
    if out.shape != targets.shape:
        raise ShapeError(f"output {out.shape} vs targets {targets.shape}")
    diff = out - targets
    return float((diff ** 2).mean()), 2.0 * diff / diff.size


def loss_and_grad(model: SeqModel, batch: Batch, cfg: TrainConfig, drop=None):
    """Forward + loss + full backward; returns (loss, grads)."""
    if model.config.mode == "token":
        tokens_in = batch.tokens.copy()
        tokens_in[batch.masks] = model.config.mask_token
        out, cache = model.forward(
            batch.feats, tokens_in, causal=batch.mask_mode == "ar", drop=drop
        )
        loss, dout = token_loss(out, batch.tokens, batch.masks, batch.weights(cfg))
    else:
        out, cache = model.forward(batch.feats, drop=drop)
        loss, dout = regression_loss(out, batch.params)
    return loss, model.backward(dout, cache)


class AdamState:
    """First/second moment accumulators, updated in sorted-name order."""

    def __init__(self, model: SeqModel):
        self.m = {k: np.zeros_like(v) for k, v in model.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in model.params.items()}
        self.t = 0

    def update(self, model: SeqModel, grads, lr: float, cfg: TrainConfig):
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for name in sorted(model.params):
            g = grads[name]
            self.m[name] = cfg.beta1 * self.m[name] + (1.0 - cfg.beta1) * g
            self.v[name] = cfg.beta2 * self.v[name] + (1.0 - cfg.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            model.params[name] -= lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def train_step(
    model: SeqModel,
    batch: Batch,
    cfg: TrainConfig,
    state: AdamState,
    step: int,
    total_steps: int,
    rng: np.random.Generator,
) -> float:
    """One Adam update; deterministic under a fixed rng."""
    drop = None
    if model.config.mode == "token" and cfg.cond_dropout > 0:
        drop = rng.random(batch.size) < cfg.cond_dropout
    loss, grads = loss_and_grad(model, batch, cfg, drop=drop)
    if not np.isfinite(loss):
        raise ModelError(
            f"non-finite loss {loss} at step {step}; "
            f"lr={learning_rate(step, total_steps, cfg):.3e}"
        )
    state.update(model, grads, learning_rate(step, total_steps, cfg), cfg)
    return loss


def spectral_features(mono_spec, band_map: BandMap, full_bins: bool = False) -> np.ndarray:
    """Per-frame features (F, dim): log(1 + banded magnitude sums)."""
    mag = np.abs(np.asarray(mono_spec))
    if full_bins:
        return np.log1p(mag).T
    return np.log1p(band_map.apply(mag)).T


def _cold_start_view(feats, tokens, mask_token, rng):
    """Window as the AR sampler sees it at stream start: real frames 0..j at
    the window tail, repeated frame-0 features and mask tokens ahead.

    Half the draws pin j = 0 (the fully-cold first frame, where mode
    selection must come from features alone); the rest spread uniformly.
    """
    n_frames = feats.shape[0]
    j = 0 if rng.random() < 0.5 else int(rng.integers(0, n_frames - 1))
    pad = n_frames - 1 - j
    padded_feats = np.concatenate([np.tile(feats[:1], (pad, 1)), feats[: j + 1]])
    padded_tokens = np.concatenate(
        [
            np.full((tokens.shape[0], pad), mask_token, dtype=tokens.dtype),
            tokens[:, : j + 1],
        ],
        axis=1,
    )
    return padded_feats, padded_tokens


class PatchSampler:
    """Draws augmented training patches from a corpus of stereo excerpts.

    For the autoregressive regime a fraction of items (``cold_start_prob``)
    simulates the sampler's stream start: the window's leading columns are
    replaced by repeated first-frame features with fully-masked token
    context, exactly as the sampler pads its first windows. Without this the
    cold start is out of distribution and the first generated frames are
    arbitrary.
    """

    def __init__(
        self,
        excerpts: list[AudioBuffer],
        band_map: BandMap,
        patch_spec: PatchSpec | None = None,
        stft_cfg: StftConfig = StftConfig(),
        grids: QuantGrids | None = None,
        full_bins: bool = False,
        cold_start_prob: float = 0.25,
    ):
        if not excerpts:
            raise DataError("empty corpus")
        self.excerpts = excerpts
        self.band_map = band_map
        self.patch_spec = patch_spec or PatchSpec()
        self.stft_cfg = stft_cfg
        self.grids = grids or QuantGrids()
        self.full_bins = full_bins
        self.cold_start_prob = cold_start_prob

    def sample_item(self, rng):
        chunk = self.excerpts[int(rng.integers(0, len(self.excerpts)))]
        patch = make_patch(chunk, self.patch_spec, rng)
        left = stft(AudioBuffer(patch.samples[:1], patch.sample_rate), self.stft_cfg)
        right = stft(AudioBuffer(patch.samples[1:2], patch.sample_rate), self.stft_cfg)
        mono_spec = stft(downmix(patch), self.stft_cfg)
        params = encode(left, right, self.band_map)
        tokens = quantize(params, self.grids)
        feats = spectral_features(mono_spec, self.band_map, self.full_bins)
        return feats, params.joined(), tokens.q

    def sample_batch(
        self, batch_size: int, mask_mode: str | None, rng, mask_token: int = 248
    ) -> Batch:
        feats, params, tokens, masks = [], [], [], []
        for _ in range(batch_size):
            f, p, q = self.sample_item(rng)
            if mask_mode == "ar" and rng.random() < self.cold_start_prob:
                f, q = _cold_start_view(f, q, mask_token, rng)
            feats.append(f)
            params.append(p)
            tokens.append(q)
            if mask_mode is not None:
                masks.append(make_training_masks(mask_mode, q.shape[0], q.shape[1], rng))
        if mask_mode is None:
            return Batch(np.stack(feats), np.stack(params))
        return Batch(
            np.stack(feats),
            np.stack(params),
            np.stack(tokens),
            np.stack(masks),
            mask_mode,
        )


def fit(
    model: SeqModel,
    sampler: PatchSampler,
    cfg: TrainConfig,
    total_steps: int,
    rng: np.random.Generator,
    mask_mode: str | None = None,
    log_path=None,
    log_every: int = 10,
):
    """Run ``total_steps`` updates; returns the (step, lr, loss, w_mean) log."""
    if model.config.mode == "token" and mask_mode not in ("ar", "mtm"):
        raise MaskError(f"token mode needs mask_mode 'ar' or 'mtm', got {mask_mode!r}")
    if model.config.mode == "regression":
        mask_mode = None
    state = AdamState(model)
    log = []
    for step in range(total_steps):
        batch = sampler.sample_batch(
            cfg.batch_size, mask_mode, rng, model.config.mask_token
        )
        loss = train_step(model, batch, cfg, state, step, total_steps, rng)
        if step % log_every == 0 or step == total_steps - 1:
            log.append(
                (
                    step,
                    learning_rate(step, total_steps, cfg),
                    loss,
                    float(batch.weights(cfg).mean()),
                )
            )
    if log_path is not None:
        with open(log_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["step", "lr", "loss", "w_mean"])
            writer.writerows(log)
    return log
