"""Building blocks with hand-written backward passes.

Every ``*_forward`` returns ``(output, cache)`` and the matching
``*_backward`` takes the upstream gradient and that cache and returns input
gradients plus a dict of parameter gradients keyed like the parameters.
Arrays are ``(batch, time, features)`` unless noted.
"""

from __future__ import annotations

import numpy as np

LN_EPS = 1e-6


def dropout_mask(rng: np.random.Generator | None, shape, rate: float, dtype) -> np.ndarray | None:
    """Inverted-dropout multiplier, or None when dropout is inactive."""
    if rng is None or rate <= 0.0:
        return None
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / dtype.type(1.0 - rate)


def linear_forward(x, w, b):
    return x @ w + b, x


def linear_backward(dy, x, w):
    d_in = w.shape[0]
    x2 = x.reshape(-1, d_in)
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy @ w.T, x2.T @ dy2, dy2.sum(axis=0)


def layer_norm_forward(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv, gain)


def layer_norm_backward(dy, cache):
    xhat, inv, gain = cache
    d = xhat.shape[-1]
    dgain = (dy * xhat).reshape(-1, d).sum(axis=0)
    dbias = dy.reshape(-1, d).sum(axis=0)
    dxhat = dy * gain
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgain, dbias


def _split_heads(x, heads):
    b, t, d = x.shape
    return x.reshape(b, t, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dk)


def attention_forward(p: dict, prefix: str, xq, xkv, allowed, heads: int, rng=None, attn_drop: float = 0.0):
    """Multi-head scaled dot-product attention.

    ``allowed`` is a boolean array broadcastable to ``(batch, 1, tq, tk)``;
    disallowed positions receive exactly zero weight.
    """
    q, _ = linear_forward(xq, p[prefix + "wq"], p[prefix + "bq"])
    k, _ = linear_forward(xkv, p[prefix + "wk"], p[prefix + "bk"])
    v, _ = linear_forward(xkv, p[prefix + "wv"], p[prefix + "bv"])
    qh, kh, vh = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    dk = qh.shape[-1]
    scale = xq.dtype.type(1.0 / np.sqrt(dk))
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
    scores = np.where(allowed, scores, -np.inf)
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    probs = e / e.sum(axis=-1, keepdims=True)
    mask = dropout_mask(rng, probs.shape, attn_drop, probs.dtype)
    probs_d = probs if mask is None else probs * mask
    ctx = _merge_heads(probs_d @ vh)
    out, _ = linear_forward(ctx, p[prefix + "wo"], p[prefix + "bo"])
    cache = (prefix, xq, xkv, qh, kh, vh, probs, mask, probs_d, ctx, scale, heads)
    return out, cache


def attention_backward(dout, cache, p: dict, self_attention: bool):
    prefix, xq, xkv, qh, kh, vh, probs, mask, probs_d, ctx, scale, heads = cache
    g = {}
    dctx, g[prefix + "wo"], g[prefix + "bo"] = linear_backward(dout, ctx, p[prefix + "wo"])
    dctx = _split_heads(dctx, heads)
    dprobs_d = dctx @ vh.transpose(0, 1, 3, 2)
    dvh = probs_d.transpose(0, 1, 3, 2) @ dctx
    dprobs = dprobs_d if mask is None else dprobs_d * mask
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dscores *= scale
    dqh = dscores @ kh
    dkh = dscores.transpose(0, 1, 3, 2) @ qh
    dxq, g[prefix + "wq"], g[prefix + "bq"] = linear_backward(_merge_heads(dqh), xq, p[prefix + "wq"])
    dxk, g[prefix + "wk"], g[prefix + "bk"] = linear_backward(_merge_heads(dkh), xkv, p[prefix + "wk"])
    dxv, g[prefix + "wv"], g[prefix + "bv"] = linear_backward(_merge_heads(dvh), xkv, p[prefix + "wv"])
    dxkv = dxk + dxv
    if self_attention:
        return dxq + dxkv, None, g
    return dxq, dxkv, g


def ffn_forward(p: dict, prefix: str, x, rng=None, drop: float = 0.0):
    h, _ = linear_forward(x, p[prefix + "w1"], p[prefix + "b1"])
    r = np.maximum(h, 0)
    mask = dropout_mask(rng, r.shape, drop, r.dtype)
    rd = r if mask is None else r * mask
    out, _ = linear_forward(rd, p[prefix + "w2"], p[prefix + "b2"])
    return out, (prefix, x, h, mask, rd)


def ffn_backward(dout, cache, p: dict):
    prefix, x, h, mask, rd = cache
    g = {}
    drd, g[prefix + "w2"], g[prefix + "b2"] = linear_backward(dout, rd, p[prefix + "w2"])
    dr = drd if mask is None else drd * mask
    dh = dr * (h > 0)
    dx, g[prefix + "w1"], g[prefix + "b1"] = linear_backward(dh, x, p[prefix + "w1"])
    return dx, g


def sinusoidal_positions(max_len: int, dim: int, dtype=np.float64) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return pe.astype(dtype)
