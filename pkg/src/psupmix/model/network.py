"""Conditional transformer over PS token/parameter sequences.

Inputs per frame: a spectral feature vector projected by a two-layer MLP,
plus one learned embedding per band token (teacher-forcing context), plus a
fixed sinusoidal positional code. A stack of pre-norm encoder blocks feeds a
two-layer output head that emits either per-band class logits (token mode)
or the parameter vector directly (regression mode).

All parameters live in a flat ``name -> array`` dict and every forward
records the caches needed for the hand-derived backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import ConfigError, ShapeError, TokenRangeError
from . import layers


@dataclass
class ModelConfig:
    n_blocks: int = 7
    channels: int = 512
    heads: int = 16
    mlp_expansion: int = 3
    out_mlp_expansion: int = 2
    in_mlp_expansion: int = 2
    n_bands: int = 34
    n_classes: int = 248
    mode: str = "token"
    feat_dim: int = 34

    def __post_init__(self):
        if self.channels % self.heads != 0:
            raise ConfigError(
                f"channels {self.channels} not divisible by heads {self.heads}"
            )
        if self.mode not in ("token", "regression"):
            raise ConfigError(f"unknown mode {self.mode!r}")

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        base = cls(n_blocks=2, channels=64, heads=4)
        return replace(base, **overrides)

    @property
    def mask_token(self) -> int:
        return self.n_classes

    @property
    def vocab(self) -> int:
        return self.n_classes + 1

    @property
    def out_dim(self) -> int:
        if self.mode == "token":
            return self.n_bands * self.n_classes
        return 2 * self.n_bands


def sinusoidal_encoding(n_frames: int, channels: int) -> np.ndarray:
    pos = np.arange(n_frames)[:, None]
    i = np.arange(channels)[None, :]
    angle = pos / (10000.0 ** (2 * (i // 2) / channels))
    enc = np.empty((n_frames, channels))
    enc[:, 0::2] = np.sin(angle[:, 0::2])
    enc[:, 1::2] = np.cos(angle[:, 1::2])
    return enc


class SeqModel:
    """Parameter container plus forward/backward of the fixed architecture."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, np.ndarray] = {}
        self.forward_calls = 0
        self._init_params(np.random.default_rng(seed))

    def _uniform(self, rng, shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    def _init_params(self, rng):
        cfg = self.config
        c = cfg.channels
        p = self.params
        hidden_in = cfg.in_mlp_expansion * c
        p["phi.w1"] = self._uniform(rng, (cfg.feat_dim, hidden_in), cfg.feat_dim)
        p["phi.b1"] = self._uniform(rng, (hidden_in,), cfg.feat_dim)
        p["phi.w2"] = self._uniform(rng, (hidden_in, c), hidden_in)
        p["phi.b2"] = self._uniform(rng, (c,), hidden_in)
        if cfg.mode == "token":
            p["embed"] = self._uniform(rng, (cfg.n_bands, cfg.vocab, c), c)
            p["cond_token"] = self._uniform(rng, (c,), c)
        for i in range(cfg.n_blocks):
            hidden = cfg.mlp_expansion * c
            p[f"block{i}.ln1.g"] = np.ones(c)
            p[f"block{i}.ln1.b"] = np.zeros(c)
            for name in ("q", "k", "v", "o"):
                p[f"block{i}.attn.w{name}"] = self._uniform(rng, (c, c), c)
                if name != "k":  # keys are bias-free, see layers.attention_fwd
                    p[f"block{i}.attn.b{name}"] = self._uniform(rng, (c,), c)
            p[f"block{i}.ln2.g"] = np.ones(c)
            p[f"block{i}.ln2.b"] = np.zeros(c)
            p[f"block{i}.mlp.w1"] = self._uniform(rng, (c, hidden), c)
            p[f"block{i}.mlp.b1"] = self._uniform(rng, (hidden,), c)
            p[f"block{i}.mlp.w2"] = self._uniform(rng, (hidden, c), hidden)
            p[f"block{i}.mlp.b2"] = self._uniform(rng, (c,), hidden)
        p["ln_f.g"] = np.ones(c)
        p["ln_f.b"] = np.zeros(c)
        hidden_out = cfg.out_mlp_expansion * c
        p["head.w1"] = self._uniform(rng, (c, hidden_out), c)
        p["head.b1"] = self._uniform(rng, (hidden_out,), c)
        p["head.w2"] = self._uniform(rng, (hidden_out, cfg.out_dim), hidden_out)
        p["head.b2"] = self._uniform(rng, (cfg.out_dim,), hidden_out)

    def param_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    # -- forward -----------------------------------------------------------

    def embed(self, feats, tokens=None, drop=None):
        """Per-frame input activations H (B, F, C) plus backward cache."""
        cfg = self.config
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim == 2:
            feats = feats[np.newaxis]
        if feats.shape[-1] != cfg.feat_dim:
            raise ShapeError(f"feature dim {feats.shape[-1]} != {cfg.feat_dim}")
        n_batch, n_frames, _ = feats.shape
        p = self.params
        h1, c1 = layers.affine_fwd(feats, p["phi.w1"], p["phi.b1"])
        g1, cg = layers.gelu_fwd(h1)
        phi, c2 = layers.affine_fwd(g1, p["phi.w2"], p["phi.b2"])
        if drop is None:
            drop = np.zeros(n_batch, dtype=bool)
        else:
            drop = np.asarray(drop, dtype=bool)
        cond = phi.copy()
        if drop.any():
            cond[drop] = p["cond_token"]
        h = cond + sinusoidal_encoding(n_frames, cfg.channels)[np.newaxis]
        if tokens is not None:
            tokens = np.asarray(tokens)
            if tokens.ndim == 2:
                tokens = tokens[np.newaxis]
            if tokens.shape != (n_batch, cfg.n_bands, n_frames):
                raise ShapeError(
                    f"tokens shape {tokens.shape} != "
                    f"{(n_batch, cfg.n_bands, n_frames)}"
                )
            if tokens.min() < 0 or tokens.max() >= cfg.vocab:
                raise TokenRangeError(
                    f"token ids must lie in [0, {cfg.vocab - 1}], "
                    f"got range [{tokens.min()}, {tokens.max()}]"
                )
            bands = np.broadcast_to(
                np.arange(cfg.n_bands)[None, :, None], tokens.shape
            )
            h = h + p["embed"][bands, tokens].sum(axis=1)
        return h, (c1, cg, c2, drop, tokens)

    def embed_backward(self, dh, cache, grads):
        c1, cg, c2, drop, tokens = cache
        p = self.params
        cfg = self.config
        if tokens is not None:
            bands = np.broadcast_to(
                np.arange(cfg.n_bands)[None, :, None], tokens.shape
            )
            contrib = np.broadcast_to(
                dh[:, np.newaxis], tokens.shape + (cfg.channels,)
            ).reshape(-1, cfg.channels)
            np.add.at(grads["embed"], (bands.ravel(), tokens.ravel()), contrib)
        dphi = dh.copy()
        if drop.any():
            grads["cond_token"] += dh[drop].sum(axis=(0, 1))
            dphi[drop] = 0.0
        dg, dw2, db2 = layers.affine_bwd(dphi, c2)
        dh1 = layers.gelu_bwd(dg, cg)
        _, dw1, db1 = layers.affine_bwd(dh1, c1)
        grads["phi.w1"] += dw1
        grads["phi.b1"] += db1
        grads["phi.w2"] += dw2
        grads["phi.b2"] += db2

    def backbone(self, h, causal=False):
        """Blocks + final norm + output head; returns (output, cache)."""
        cfg = self.config
        self.forward_calls += 1
        mask = layers.causal_mask(h.shape[1]) if causal else None
        p = self.params
        block_caches = []
        for i in range(cfg.n_blocks):
            pre = f"block{i}"
            n1, cn1 = layers.layernorm_fwd(h, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"])
            att, ca = layers.attention_fwd(
                n1,
                p[f"{pre}.attn.wq"], p[f"{pre}.attn.bq"],
                p[f"{pre}.attn.wk"],
                p[f"{pre}.attn.wv"], p[f"{pre}.attn.bv"],
                p[f"{pre}.attn.wo"], p[f"{pre}.attn.bo"],
                cfg.heads, mask,
            )
            h = h + att
            n2, cn2 = layers.layernorm_fwd(h, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])
            mlp, cm = layers.mlp_fwd(
                n2, p[f"{pre}.mlp.w1"], p[f"{pre}.mlp.b1"],
                p[f"{pre}.mlp.w2"], p[f"{pre}.mlp.b2"],
            )
            h = h + mlp
            block_caches.append((cn1, ca, cn2, cm))
        nf, cnf = layers.layernorm_fwd(h, p["ln_f.g"], p["ln_f.b"])
        out, chead = layers.mlp_fwd(
            nf, p["head.w1"], p["head.b1"], p["head.w2"], p["head.b2"]
        )
        if cfg.mode == "token":
            b, f, _ = out.shape
            out = out.reshape(b, f, cfg.n_bands, cfg.n_classes)
        return out, (block_caches, cnf, chead)

    def backbone_backward(self, dout, cache, grads):
        cfg = self.config
        block_caches, cnf, chead = cache
        if cfg.mode == "token":
            b, f = dout.shape[:2]
            dout = dout.reshape(b, f, cfg.out_dim)
        dnf, (dw1, db1, dw2, db2) = layers.mlp_bwd(dout, chead)
        grads["head.w1"] += dw1
        grads["head.b1"] += db1
        grads["head.w2"] += dw2
        grads["head.b2"] += db2
        dh, dg, dbeta = layers.layernorm_bwd(dnf, cnf)
        grads["ln_f.g"] += dg
        grads["ln_f.b"] += dbeta
        for i in reversed(range(cfg.n_blocks)):
            pre = f"block{i}"
            cn1, ca, cn2, cm = block_caches[i]
            dn2, (dw1, db1, dw2, db2) = layers.mlp_bwd(dh, cm)
            grads[f"{pre}.mlp.w1"] += dw1
            grads[f"{pre}.mlp.b1"] += db1
            grads[f"{pre}.mlp.w2"] += dw2
            grads[f"{pre}.mlp.b2"] += db2
            dres, dg, dbeta = layers.layernorm_bwd(dn2, cn2)
            grads[f"{pre}.ln2.g"] += dg
            grads[f"{pre}.ln2.b"] += dbeta
            dh = dh + dres
            dn1, attn_grads = layers.attention_bwd(dh, ca)
            for name, grad in zip(
                ("wq", "bq", "wk", "wv", "bv", "wo", "bo"), attn_grads
            ):
                grads[f"{pre}.attn.{name}"] += grad
            dres, dg, dbeta = layers.layernorm_bwd(dn1, cn1)
            grads[f"{pre}.ln1.g"] += dg
            grads[f"{pre}.ln1.b"] += dbeta
            dh = dh + dres
        return dh

    def forward(self, feats, tokens=None, *, causal=False, drop=None):
        h, embed_cache = self.embed(feats, tokens, drop)
        out, backbone_cache = self.backbone(h, causal=causal)
        return out, (embed_cache, backbone_cache)

    def backward(self, dout, cache) -> dict[str, np.ndarray]:
        embed_cache, backbone_cache = cache
        grads = self.zero_grads()
        dh = self.backbone_backward(dout, backbone_cache, grads)
        self.embed_backward(dh, embed_cache, grads)
        return grads


def embed_input(model: SeqModel, feats, tokens=None, drop=None):
    """Input activation sequence H for given features and context tokens."""
    h, _ = model.embed(feats, tokens, drop)
    return h


def forward(model: SeqModel, h, causal: bool = False):
    """Backbone output (logits or regression values) for activations H."""
    out, _ = model.backbone(np.asarray(h, dtype=np.float64), causal=causal)
    return out
