"""Sampling procedures mapping mono features to PS parameters.

Covers the recursive band-by-band autoregressive sampler, the iterative
confidence-based masked-token sampler, the direct regression predictor and
the end-to-end upmix driver that turns any of them (plus the retrieval and
decorrelation approaches) into a stereo signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio_io import AudioBuffer
from .decorr import IcProfile, decorr_upmix
from .errors import ConfigError, ModelError, ShapeError
from .model.network import SeqModel
from .model.training import spectral_features
from .ps_codec import (
    DecorrConfig,
    PsParams,
    PsTokens,
    QuantGrids,
    decode,
    decorrelate,
    dequantize,
)
from .retrieval import NnConfig, NnIndex, nn_generate
from .spectral import BandMap, StftConfig, istft, make_band_map, stft

IID_OUTPUT_CLAMP_DB = 60.0


@dataclass
class ArSampleConfig:
    temperature: float = 0.9
    guidance: float = 0.25
    context_frames: int = 20
    greedy: bool = False

    def __post_init__(self):
        if not self.greedy and self.temperature <= 0:
            raise ConfigError("temperature must be positive (or use greedy mode)")


@dataclass
class MtmSampleConfig:
    noise_std: float = 4.5
    guidance: float = 0.75
    steps: int = 20
    patch_frames: int = 20

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("need at least one sampling step")


@dataclass
class SampleConfig:
    ar: ArSampleConfig = field(default_factory=ArSampleConfig)
    mtm: MtmSampleConfig = field(default_factory=MtmSampleConfig)
    seed: int = 0


def cfg_logits(u_cond: np.ndarray, u_uncond: np.ndarray, guidance: float) -> np.ndarray:
    """Classifier-free guidance: extrapolate conditional logits away from
    unconditional ones by ``guidance``."""
    u_cond = np.asarray(u_cond)
    u_uncond = np.asarray(u_uncond)
    if u_cond.shape != u_uncond.shape:
        raise ShapeError(f"logit shapes differ: {u_cond.shape} vs {u_uncond.shape}")
    return (1.0 + guidance) * u_cond - guidance * u_uncond


def _check_logits(logits):
    if not np.all(np.isfinite(logits)):
        raise ModelError("model produced non-finite logits")


def _guided_logits(model, feats, tokens, guidance, causal):
    cond, _ = model.forward(feats, tokens, causal=causal)
    if guidance == 0.0:
        return cond
    uncond, _ = model.forward(
        feats, tokens, causal=causal, drop=np.ones(feats.shape[0], dtype=bool)
    )
    return cfg_logits(cond, uncond, guidance)


def ar_sample(
    model: SeqModel,
    mono_features: np.ndarray,
    cfg: ArSampleConfig = ArSampleConfig(),
    rng: np.random.Generator | None = None,
) -> PsTokens:
    """Recursive sampling: low to high bands within a frame, then next frame.

    A sliding context window of ``context_frames`` ends at the frame being
    generated; every band draw runs a conditional and an unconditional pass
    through the causal model.
    """
    rng = rng or np.random.default_rng()
    mcfg = model.config
    if mcfg.mode != "token":
        raise ModelError("autoregressive sampling needs a token-mode model")
    feats = np.asarray(mono_features, dtype=np.float64)
    n_frames, n_bands = feats.shape[0], mcfg.n_bands
    window = cfg.context_frames
    # Training always supervises the last position of a full-length window,
    # so short starts are left-padded: features repeat frame 0, token
    # context stays masked until real frames displace the padding.
    pad_feats = np.concatenate([np.tile(feats[:1], (window - 1, 1)), feats])
    pad_tokens = np.full(
        (n_bands, n_frames + window - 1), mcfg.mask_token, dtype=np.int64
    )
    for j in range(n_frames):
        window_feats = pad_feats[np.newaxis, j : j + window]
        for band in range(n_bands):
            window_tokens = pad_tokens[np.newaxis, :, j : j + window]
            logits = _guided_logits(
                model, window_feats, window_tokens, cfg.guidance, causal=True
            )
            _check_logits(logits)
            scores = logits[0, window - 1, band]
            if cfg.greedy:
                choice = int(scores.argmax())
            else:
                probs = _softmax(scores / cfg.temperature)
                choice = int(rng.choice(mcfg.n_classes, p=probs))
            pad_tokens[band, j + window - 1] = choice
    return PsTokens(pad_tokens[:, window - 1 :])


def _softmax(x):
    z = np.exp(x - x.max())
    return z / z.sum()


def mtm_schedule_count(step: int, total: int, n_tokens: int) -> int:
    """Tokens still masked after ``step`` of ``total`` iterations (cosine law)."""
    if step >= total:
        return 0
    return int(np.ceil(np.cos(np.pi * step / (2.0 * total)) * n_tokens))


def mtm_sample(
    model: SeqModel,
    mono_features: np.ndarray,
    cfg: MtmSampleConfig = MtmSampleConfig(),
    rng: np.random.Generator | None = None,
) -> PsTokens:
    """Iterative confidence-based unmasking over 50%-overlapping patches.

    Positions already generated by earlier patches prefill the patch and are
    never masked. Each iteration samples all masked positions, scores them
    by the sampled token's guided logit plus Gaussian noise, fixes the top
    scorers, and re-masks the rest per the cosine schedule.
    """
    rng = rng or np.random.default_rng()
    mcfg = model.config
    if mcfg.mode != "token":
        raise ModelError("masked-token sampling needs a token-mode model")
    feats = np.asarray(mono_features, dtype=np.float64)
    n_frames, n_bands = feats.shape[0], mcfg.n_bands
    tokens = np.full((n_bands, n_frames), mcfg.mask_token, dtype=np.int64)
    generated = 0  # frames finished so far
    patch = min(cfg.patch_frames, n_frames)
    hop = max(1, patch // 2)
    while generated < n_frames:
        lo = min(max(0, generated - (patch - hop)), n_frames - patch)
        hi = lo + patch
        new_cols = np.arange(max(generated, lo), hi)
        _fill_patch(
            model, feats[lo:hi], tokens[:, lo:hi], new_cols - lo, cfg, rng
        )
        generated = hi
    return PsTokens(tokens)


def _fill_patch(model, patch_feats, patch_tokens, open_cols, cfg, rng):
    """Generate all open columns of one patch in-place."""
    mcfg = model.config
    n_bands = mcfg.n_bands
    open_mask = np.zeros(patch_tokens.shape, dtype=bool)
    open_mask[:, open_cols] = True
    masked = open_mask.copy()
    n_tokens = int(open_mask.sum())
    feats = patch_feats[np.newaxis]
    for step in range(1, cfg.steps + 1):
        if not masked.any():
            break
        work = patch_tokens.copy()
        work[masked] = mcfg.mask_token
        logits = _guided_logits(model, feats, work[np.newaxis], cfg.guidance, causal=False)
        _check_logits(logits)
        bands, frames = np.nonzero(masked)
        sel = logits[0, frames, bands, :]
        shifted = sel - sel.max(axis=1, keepdims=True)
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        cum = probs.cumsum(axis=1)
        draws = rng.random(len(bands))
        choices = (cum < draws[:, None]).sum(axis=1).clip(0, mcfg.n_classes - 1)
        confidence = sel[np.arange(len(bands)), choices]
        if cfg.noise_std > 0:
            confidence = confidence + rng.normal(0.0, cfg.noise_std, size=len(bands))
        keep_masked = mtm_schedule_count(step, cfg.steps, n_tokens)
        n_fix = len(bands) - keep_masked
        if n_fix <= 0:
            continue
        order = np.argsort(-confidence, kind="stable")[:n_fix]
        patch_tokens[bands[order], frames[order]] = choices[order]
        masked[bands[order], frames[order]] = False
    if masked.any():
        raise ModelError("masked positions left after the final schedule step")


def reg_predict(model: SeqModel, mono_features: np.ndarray) -> PsParams:
    """Direct parameter regression; deterministic."""
    if model.config.mode != "regression":
        raise ModelError("reg_predict needs a regression-mode model")
    feats = np.asarray(mono_features, dtype=np.float64)[np.newaxis]
    out, _ = model.forward(feats)
    joined = out[0].T  # (2*bands, frames)
    half = joined.shape[0] // 2
    iid = np.clip(joined[:half], -IID_OUTPUT_CLAMP_DB, IID_OUTPUT_CLAMP_DB)
    ic = np.clip(joined[half:], -1.0, 1.0)
    return PsParams(iid, ic)


GENERATORS = ("nn", "ar", "mtm", "reg", "decorr")


def generate_params(
    mono_spec: np.ndarray,
    generator: str,
    *,
    band_map: BandMap,
    model: SeqModel | None = None,
    index: NnIndex | None = None,
    nn_cfg: NnConfig = NnConfig(),
    sample_cfg: SampleConfig | None = None,
    grids: QuantGrids | None = None,
    rng: np.random.Generator | None = None,
) -> PsParams:
    """Run one generator over a mono spectrogram and return parameters."""
    if generator not in GENERATORS + ("passthrough",):
        raise ConfigError(f"unknown generator {generator!r}")
    sample_cfg = sample_cfg or SampleConfig()
    grids = grids or QuantGrids()
    if generator == "passthrough":
        n = mono_spec.shape[1]
        return PsParams(
            np.zeros((band_map.n_bands, n)), np.ones((band_map.n_bands, n))
        )
    if generator == "nn":
        if index is None:
            raise ConfigError("the retrieval generator needs an index")
        return nn_generate(mono_spec, index, band_map, nn_cfg)
    if model is None:
        raise ModelError(f"generator {generator!r} needs a trained model")
    feats = spectral_features(
        mono_spec, band_map, full_bins=model.config.feat_dim == mono_spec.shape[0]
    )
    if generator == "ar":
        tokens = ar_sample(model, feats, sample_cfg.ar, rng)
        return dequantize(tokens, grids)
    if generator == "mtm":
        tokens = mtm_sample(model, feats, sample_cfg.mtm, rng)
        return dequantize(tokens, grids)
    return reg_predict(model, feats)


def upmix(
    mono: AudioBuffer,
    generator: str,
    *,
    band_map: BandMap | None = None,
    stft_cfg: StftConfig = StftConfig(),
    decorr_cfg: DecorrConfig = DecorrConfig(),
    ic_profile: IcProfile | None = None,
    model: SeqModel | None = None,
    index: NnIndex | None = None,
    nn_cfg: NnConfig = NnConfig(),
    sample_cfg: SampleConfig | None = None,
    grids: QuantGrids | None = None,
    rng: np.random.Generator | None = None,
) -> AudioBuffer:
    """Full pipeline: mono in, plausible stereo out (same length)."""
    if band_map is None:
        band_map = make_band_map(stft_cfg.bins, sample_rate=mono.sample_rate)
    if generator == "decorr":
        return decorr_upmix(mono, ic_profile, stft_cfg, band_map, decorr_cfg)
    mono_spec = stft(mono, stft_cfg)
    params = generate_params(
        mono_spec,
        generator,
        band_map=band_map,
        model=model,
        index=index,
        nn_cfg=nn_cfg,
        sample_cfg=sample_cfg,
        grids=grids,
        rng=rng,
    )
    wet_spec = stft(decorrelate(mono, decorr_cfg), stft_cfg)
    left, right = decode(mono_spec, wet_spec, params, band_map)
    out_l = istft(left, stft_cfg, length=mono.length)
    out_r = istft(right, stft_cfg, length=mono.length)
    return AudioBuffer(np.vstack([out_l.samples, out_r.samples]), mono.sample_rate)
