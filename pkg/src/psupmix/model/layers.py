"""Primitive ops with paired forward/backward passes.

Every forward returns (output, cache); the matching backward consumes the
upstream gradient plus that cache. Shapes use (B, F, C) = batch, frames,
channels; attention works on (B, h, F, d) with C = h * d.
"""

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def affine_fwd(x, w, b):
    return x @ w + b, (x, w)


def affine_bwd(dout, cache):
    x, w = cache
    dx = dout @ w.T
    x2 = x.reshape(-1, x.shape[-1])
    d2 = dout.reshape(-1, dout.shape[-1])
    return dx, x2.T @ d2, d2.sum(axis=0)


def matmul_fwd(x, w):
    return x @ w, (x, w)


def matmul_bwd(dout, cache):
    x, w = cache
    x2 = x.reshape(-1, x.shape[-1])
    d2 = dout.reshape(-1, dout.shape[-1])
    return dout @ w.T, x2.T @ d2


def gelu_fwd(x):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return x * cdf, (x, cdf)


def gelu_bwd(dout, cache):
    x, cdf = cache
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return dout * (cdf + x * pdf)


def layernorm_fwd(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_sigma = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_sigma
    return gamma * xhat + beta, (xhat, inv_sigma, gamma)


def layernorm_bwd(dout, cache):
    xhat, inv_sigma, gamma = cache
    g = dout * gamma
    m1 = g.mean(axis=-1, keepdims=True)
    m2 = (g * xhat).mean(axis=-1, keepdims=True)
    dx = (g - m1 - xhat * m2) * inv_sigma
    axes = tuple(range(dout.ndim - 1))
    return dx, (dout * xhat).sum(axis=axes), dout.sum(axis=axes)


def softmax(x):
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _split_heads(x, heads):
    b, f, c = x.shape
    return x.reshape(b, f, heads, c // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, f, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, f, h * d)


def attention_fwd(x, wq, bq, wk, wv, bv, wo, bo, heads, mask=None):
    """Multi-head softmax attention; ``mask`` is additive over (F, F) scores.

    Keys carry no bias: softmax scores are invariant to a constant shift per
    row, so a key bias would be an untrainable no-op parameter.
    """
    q, q_cache = affine_fwd(x, wq, bq)
    k, k_cache = matmul_fwd(x, wk)
    v, v_cache = affine_fwd(x, wv, bv)
    qh, kh, vh = (_split_heads(t, heads) for t in (q, k, v))
    scale = 1.0 / np.sqrt(qh.shape[-1])
    scores = scale * (qh @ kh.transpose(0, 1, 3, 2))
    if mask is not None:
        scores = scores + mask
    probs = softmax(scores)
    ctx = probs @ vh
    merged = _merge_heads(ctx)
    out, o_cache = affine_fwd(merged, wo, bo)
    return out, (q_cache, k_cache, v_cache, o_cache, qh, kh, vh, probs, scale, heads)


def attention_bwd(dout, cache):
    q_cache, k_cache, v_cache, o_cache, qh, kh, vh, probs, scale, heads = cache
    dmerged, dwo, dbo = affine_bwd(dout, o_cache)
    dctx = _split_heads(dmerged, heads)
    dvh = probs.transpose(0, 1, 3, 2) @ dctx
    dprobs = dctx @ vh.transpose(0, 1, 3, 2)
    dscores = (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True)) * probs
    dqh = scale * (dscores @ kh)
    dkh = scale * (dscores.transpose(0, 1, 3, 2) @ qh)
    dq, dk, dv = (_merge_heads(t) for t in (dqh, dkh, dvh))
    dx_q, dwq, dbq = affine_bwd(dq, q_cache)
    dx_k, dwk = matmul_bwd(dk, k_cache)
    dx_v, dwv, dbv = affine_bwd(dv, v_cache)
    dx = dx_q + dx_k + dx_v
    return dx, (dwq, dbq, dwk, dwv, dbv, dwo, dbo)


def mlp_fwd(x, w1, b1, w2, b2):
    h, a_cache = affine_fwd(x, w1, b1)
    g, g_cache = gelu_fwd(h)
    out, o_cache = affine_fwd(g, w2, b2)
    return out, (a_cache, g_cache, o_cache)


def mlp_bwd(dout, cache):
    a_cache, g_cache, o_cache = cache
    dg, dw2, db2 = affine_bwd(dout, o_cache)
    dh = gelu_bwd(dg, g_cache)
    dx, dw1, db1 = affine_bwd(dh, a_cache)
    return dx, (dw1, db1, dw2, db2)


def causal_mask(n_frames):
    """Additive frame mask: position i may attend to frames j <= i only."""
    i = np.arange(n_frames)
    blocked = i[:, None] < i[None, :]
    return np.where(blocked, -1e30, 0.0)[None, None, :, :]
