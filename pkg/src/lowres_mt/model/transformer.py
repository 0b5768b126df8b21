"""Encoder-decoder Transformer with shared, tied embeddings.

Sublayers use pre-layer-norm residual blocks with a final layer norm on each
stack. Token embeddings are shared between source, target and the output
projection, matching the single shared subword vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..subword import PAD_ID
from .config import ConfigError, TransformerConfig
from .layers import (
    attention_backward,
    attention_forward,
    dropout_mask,
    ffn_backward,
    ffn_forward,
    layer_norm_backward,
    layer_norm_forward,
    sinusoidal_positions,
)

Params = dict[str, np.ndarray]


def _attn_names(prefix):
    return [prefix + n for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")]


def init_params(config: TransformerConfig, seed: int | None = None) -> Params:
    """Xavier-uniform weights, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    dt = np.dtype(config.dtype)
    d, ff, v = config.embed_dim, config.ff_dim, config.vocab_size

    def xavier(fan_in, fan_out):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(fan_in, fan_out)).astype(dt)

    p: Params = {"emb": (rng.normal(0.0, d**-0.5, size=(v, d))).astype(dt)}

    def attn(prefix):
        for w in ("wq", "wk", "wv", "wo"):
            p[prefix + w] = xavier(d, d)
            p[prefix + "b" + w[1]] = np.zeros(d, dt)

    def ln(prefix):
        p[prefix + "g"] = np.ones(d, dt)
        p[prefix + "b"] = np.zeros(d, dt)

    def ffn(prefix):
        p[prefix + "w1"] = xavier(d, ff)
        p[prefix + "b1"] = np.zeros(ff, dt)
        p[prefix + "w2"] = xavier(ff, d)
        p[prefix + "b2"] = np.zeros(d, dt)

    for i in range(config.layers):
        e = f"enc.{i}."
        ln(e + "ln1.")
        attn(e + "self.")
        ln(e + "ln2.")
        ffn(e + "ff.")
    ln("enc.ln.")
    for i in range(config.layers):
        dd = f"dec.{i}."
        ln(dd + "ln1.")
        attn(dd + "self.")
        ln(dd + "ln2.")
        attn(dd + "cross.")
        ln(dd + "ln3.")
        ffn(dd + "ff.")
    ln("dec.ln.")
    return p


_PE_CACHE: dict = {}


def _positions(n: int, d: int, dtype) -> np.ndarray:
    key = (d, np.dtype(dtype).str)
    pe = _PE_CACHE.get(key)
    if pe is None or pe.shape[0] < n:
        pe = sinusoidal_positions(max(n, 512), d, dtype)
        _PE_CACHE[key] = pe
    return pe[:n]


@dataclass
class ForwardCache:
    src_ids: np.ndarray
    tgt_ids: np.ndarray
    src_drop: np.ndarray | None
    tgt_drop: np.ndarray | None
    enc_layers: list
    enc_final: tuple
    enc_out: np.ndarray
    dec_layers: list
    dec_final: tuple
    dec_out: np.ndarray
    attn_probs: dict  # name -> (batch, heads, tq, tk) weights, for inspection
    config: TransformerConfig
    params: Params


def _embed(p, ids, config, rng):
    d = config.embed_dim
    dt = p["emb"].dtype
    x = p["emb"][ids] * dt.type(np.sqrt(d)) + _positions(ids.shape[1], d, dt)
    mask = dropout_mask(rng, x.shape, config.dropout, dt)
    return (x if mask is None else x * mask), mask


def _residual_dropout(x, rng, rate):
    mask = dropout_mask(rng, x.shape, rate, x.dtype)
    return (x if mask is None else x * mask), mask


def src_allowed(src_ids):
    return (src_ids != PAD_ID)[:, None, None, :]


def tgt_allowed(tgt_ids):
    t = tgt_ids.shape[1]
    causal = np.tril(np.ones((t, t), dtype=bool))
    return causal[None, None, :, :] & (tgt_ids != PAD_ID)[:, None, None, :]


def encode(p: Params, config: TransformerConfig, src_ids, rng=None, record=None):
    """Run the encoder stack; returns ``(memory, layer_caches, final_ln_cache, embed_dropout)``."""
    h = config.heads
    x, src_drop = _embed(p, src_ids, config, rng)
    allowed = src_allowed(src_ids)
    layers = []
    for i in range(config.layers):
        e = f"enc.{i}."
        n1, c_ln1 = layer_norm_forward(x, p[e + "ln1.g"], p[e + "ln1.b"])
        a, c_att = attention_forward(p, e + "self.", n1, n1, allowed, h, rng, config.attention_dropout)
        a, m1 = _residual_dropout(a, rng, config.dropout)
        x = x + a
        n2, c_ln2 = layer_norm_forward(x, p[e + "ln2.g"], p[e + "ln2.b"])
        f, c_ff = ffn_forward(p, e + "ff.", n2, rng, config.dropout)
        f, m2 = _residual_dropout(f, rng, config.dropout)
        x = x + f
        layers.append((c_ln1, c_att, m1, c_ln2, c_ff, m2))
        if record is not None:
            record[e + "self"] = c_att[6]
    out, c_fin = layer_norm_forward(x, p["enc.ln.g"], p["enc.ln.b"])
    return out, layers, c_fin, src_drop


def decode(p: Params, config: TransformerConfig, memory, src_ids, tgt_ids, rng=None, record=None):
    """Run the decoder stack and the tied output projection; returns ``(logits, caches...)``."""
    h = config.heads
    y, tgt_drop = _embed(p, tgt_ids, config, rng)
    self_allowed = tgt_allowed(tgt_ids)
    cross_allowed = src_allowed(src_ids)
    layers = []
    for i in range(config.layers):
        dd = f"dec.{i}."
        n1, c_ln1 = layer_norm_forward(y, p[dd + "ln1.g"], p[dd + "ln1.b"])
        a, c_self = attention_forward(p, dd + "self.", n1, n1, self_allowed, h, rng, config.attention_dropout)
        a, m1 = _residual_dropout(a, rng, config.dropout)
        y = y + a
        n2, c_ln2 = layer_norm_forward(y, p[dd + "ln2.g"], p[dd + "ln2.b"])
        c, c_cross = attention_forward(p, dd + "cross.", n2, memory, cross_allowed, h, rng, config.attention_dropout)
        c, m2 = _residual_dropout(c, rng, config.dropout)
        y = y + c
        n3, c_ln3 = layer_norm_forward(y, p[dd + "ln3.g"], p[dd + "ln3.b"])
        f, c_ff = ffn_forward(p, dd + "ff.", n3, rng, config.dropout)
        f, m3 = _residual_dropout(f, rng, config.dropout)
        y = y + f
        layers.append((c_ln1, c_self, m1, c_ln2, c_cross, m2, c_ln3, c_ff, m3))
        if record is not None:
            record[dd + "self"] = c_self[6]
            record[dd + "cross"] = c_cross[6]
    out, c_fin = layer_norm_forward(y, p["dec.ln.g"], p["dec.ln.b"])
    logits = out @ p["emb"].T
    return logits, layers, c_fin, tgt_drop, out


def forward(p: Params, config: TransformerConfig, src_ids, tgt_ids, train_mode: bool = False, rng=None):
    """Logits of shape ``(batch, tgt_len, vocab)`` plus the cache needed by :func:`backward`.

    Dropout is applied only when ``train_mode`` is true and an RNG is supplied.
    """
    src_ids = np.asarray(src_ids)
    tgt_ids = np.asarray(tgt_ids)
    if src_ids.ndim != 2 or tgt_ids.ndim != 2 or src_ids.shape[0] != tgt_ids.shape[0]:
        raise ConfigError(f"expected (batch, len) id arrays with equal batch, got {src_ids.shape} and {tgt_ids.shape}")
    if src_ids.shape[1] > config.max_len or tgt_ids.shape[1] > config.max_len:
        raise ConfigError(f"sequence longer than max_len={config.max_len}")
    v = config.vocab_size
    if p["emb"].shape != (v, config.embed_dim):
        raise ConfigError(f"embedding shape {p['emb'].shape} does not match config ({v}, {config.embed_dim})")
    for ids in (src_ids, tgt_ids):
        if ids.size and (ids.min() < 0 or ids.max() >= v):
            raise ConfigError("token id outside the vocabulary")
    if not train_mode:
        rng = None
    record: dict = {}
    memory, enc_layers, enc_fin, src_drop = encode(p, config, src_ids, rng, record)
    logits, dec_layers, dec_fin, tgt_drop, dec_out = decode(p, config, memory, src_ids, tgt_ids, rng, record)
    cache = ForwardCache(
        src_ids, tgt_ids, src_drop, tgt_drop, enc_layers, enc_fin, memory, dec_layers, dec_fin, dec_out, record, config, p
    )
    return logits, cache


def backward(cache: ForwardCache, dlogits: np.ndarray, return_input_grads: bool = False):
    """Gradients of every parameter given the upstream gradient on the logits.

    With ``return_input_grads`` also returns the gradients reaching the source
    and target embedding lookups, position by position.
    """
    p = cache.params
    config = cache.config
    g: Params = {k: np.zeros_like(v) for k, v in p.items()}

    def acc(d):
        for k, v in d.items():
            g[k] += v

    d = config.embed_dim
    dec_out = cache.dec_out
    g["emb"] += dlogits.reshape(-1, dlogits.shape[-1]).T @ dec_out.reshape(-1, d)
    dy = dlogits @ p["emb"]
    dy, g["dec.ln.g"], g["dec.ln.b"] = layer_norm_backward(dy, cache.dec_final)

    dmem = np.zeros_like(cache.enc_out)
    for i in reversed(range(config.layers)):
        dd = f"dec.{i}."
        c_ln1, c_self, m1, c_ln2, c_cross, m2, c_ln3, c_ff, m3 = cache.dec_layers[i]
        df = dy if m3 is None else dy * m3
        dn3, gf = ffn_backward(df, c_ff, p)
        acc(gf)
        dx, gg, gb = layer_norm_backward(dn3, c_ln3)
        g[dd + "ln3.g"] += gg
        g[dd + "ln3.b"] += gb
        dy = dy + dx
        dc = dy if m2 is None else dy * m2
        dn2, dm, ga = attention_backward(dc, c_cross, p, self_attention=False)
        acc(ga)
        dmem += dm
        dx, gg, gb = layer_norm_backward(dn2, c_ln2)
        g[dd + "ln2.g"] += gg
        g[dd + "ln2.b"] += gb
        dy = dy + dx
        da = dy if m1 is None else dy * m1
        dn1, _, ga = attention_backward(da, c_self, p, self_attention=True)
        acc(ga)
        dx, gg, gb = layer_norm_backward(dn1, c_ln1)
        g[dd + "ln1.g"] += gg
        g[dd + "ln1.b"] += gb
        dy = dy + dx

    dx_enc, g["enc.ln.g"], g["enc.ln.b"] = layer_norm_backward(dmem, cache.enc_final)
    for i in reversed(range(config.layers)):
        e = f"enc.{i}."
        c_ln1, c_att, m1, c_ln2, c_ff, m2 = cache.enc_layers[i]
        df = dx_enc if m2 is None else dx_enc * m2
        dn2, gf = ffn_backward(df, c_ff, p)
        acc(gf)
        dx, gg, gb = layer_norm_backward(dn2, c_ln2)
        g[e + "ln2.g"] += gg
        g[e + "ln2.b"] += gb
        dx_enc = dx_enc + dx
        da = dx_enc if m1 is None else dx_enc * m1
        dn1, _, ga = attention_backward(da, c_att, p, self_attention=True)
        acc(ga)
        dx, gg, gb = layer_norm_backward(dn1, c_ln1)
        g[e + "ln1.g"] += gg
        g[e + "ln1.b"] += gb
        dx_enc = dx_enc + dx

    scale = p["emb"].dtype.type(np.sqrt(d))
    d_src = dx_enc if cache.src_drop is None else dx_enc * cache.src_drop
    d_tgt = dy if cache.tgt_drop is None else dy * cache.tgt_drop
    d_src = d_src * scale
    d_tgt = d_tgt * scale
    np.add.at(g["emb"], cache.src_ids.reshape(-1), d_src.reshape(-1, d))
    np.add.at(g["emb"], cache.tgt_ids.reshape(-1), d_tgt.reshape(-1, d))
    if return_input_grads:
        return g, {"src": d_src, "tgt": d_tgt}
    return g


def label_smoothed_loss(logits, target_ids, epsilon: float, pad_id: int = PAD_ID, return_grad: bool = False):
    """Mean per-token cross-entropy against a label-smoothed target.

    The true token gets ``1 - epsilon`` and every other vocabulary entry
    ``epsilon / (V - 1)``. Positions whose target is ``pad_id`` are excluded.
    """
    if not 0 <= epsilon < 1:
        raise ValueError("epsilon must lie in [0, 1)")
    logits = np.asarray(logits)
    target_ids = np.asarray(target_ids)
    v = logits.shape[-1]
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    tok = target_ids != pad_id
    n = max(int(tok.sum()), 1)
    true_lp = np.take_along_axis(logp, target_ids[..., None], axis=-1)[..., 0]
    if epsilon == 0.0:
        per_tok = -true_lp
    else:
        off = epsilon / (v - 1)
        per_tok = -((1.0 - epsilon - off) * true_lp + off * logp.sum(axis=-1))
    loss = float((per_tok * tok).sum() / n)
    if not return_grad:
        return loss
    probs = np.exp(logp)
    q = np.full_like(probs, epsilon / (v - 1) if epsilon else 0.0)
    np.put_along_axis(q, target_ids[..., None], 1.0 - epsilon, axis=-1)
    grad = (probs - q) * (tok[..., None] / n)
    return loss, grad.astype(logits.dtype)


def token_nll(logits, target_ids, pad_id: int = PAD_ID):
    """Per-position negative log-likelihood and argmax predictions (no smoothing)."""
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    nll = -np.take_along_axis(logp, target_ids[..., None], axis=-1)[..., 0]
    return nll, logits.argmax(axis=-1)
