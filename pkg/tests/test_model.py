import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import max_relative_grad_error
from lowres_mt.model.config import ConfigError, EarlyStopPolicy, EarlyStopper, TransformerConfig
from lowres_mt.model.layers import sinusoidal_positions
from lowres_mt.model.transformer import backward, forward, init_params, label_smoothed_loss, token_nll
from lowres_mt.subword import BOS_ID, PAD_ID

TINY = TransformerConfig(
    layers=1,
    heads=2,
    embed_dim=8,
    ff_dim=16,
    vocab_size=11,
    max_len=16,
    dropout=0.0,
    attention_dropout=0.0,
    label_smoothing=0.1,
    dtype="float64",
)


def tiny_batch(seed, vocab=11):
    rng = np.random.default_rng(seed)
    src = rng.integers(4, vocab, (2, 5))
    src[1, 3:] = PAD_ID
    tgt_in = rng.integers(4, vocab, (2, 4))
    tgt_in[:, 0] = BOS_ID
    tgt_in[1, 3:] = PAD_ID
    tgt_out = rng.integers(4, vocab, (2, 4))
    tgt_out[1, 2:] = PAD_ID
    return src, tgt_in, tgt_out


# -- config ------------------------------------------------------------------


def test_defaults_follow_best_settings():
    c = TransformerConfig()
    assert (c.learning_rate_scale, c.batch_tokens, c.heads, c.layers) == (2.0, 2048, 2, 6)
    assert (c.ff_dim, c.embed_dim, c.label_smoothing, c.dropout) == (2048, 256, 0.1, 0.3)
    assert (c.attention_dropout, c.average_decay, c.warmup_steps) == (0.1, 0.0001, 8000)


@pytest.mark.parametrize(
    "changes",
    [
        {"embed_dim": 10, "heads": 4},
        {"label_smoothing": 1.0},
        {"dropout": -0.1},
        {"dtype": "float16"},
        {"vocab_size": 3},
    ],
)
def test_invalid_config(changes):
    with pytest.raises(ConfigError):
        TransformerConfig(**changes)


def test_config_dict_round_trip():
    c = TINY.replace(seed=5)
    assert TransformerConfig.from_dict(c.to_dict()) == c
    with pytest.raises(ConfigError):
        TransformerConfig.from_dict({"hidden": 3})


# -- forward -----------------------------------------------------------------


def test_logit_shape():
    cfg = TINY.replace(vocab_size=20)
    p = init_params(cfg, 0)
    rng = np.random.default_rng(0)
    logits, _ = forward(p, cfg, rng.integers(4, 20, (2, 5)), rng.integers(4, 20, (2, 7)))
    assert logits.shape == (2, 7, 20)


def test_attention_rows_and_masks():
    p = init_params(TINY, 0)
    src, tgt_in, _ = tiny_batch(0)
    _, cache = forward(p, TINY, src, tgt_in)
    for name, probs in cache.attn_probs.items():
        np.testing.assert_allclose(probs.sum(-1), 1.0, atol=1e-6, err_msg=name)
    causal = cache.attn_probs["dec.0.self"]
    t = causal.shape[-1]
    future = np.triu(np.ones((t, t), bool), k=1)
    assert np.all(causal[:, :, future] == 0.0)
    assert np.all(cache.attn_probs["dec.0.cross"][1, :, :, 3:] == 0.0)
    assert np.all(cache.attn_probs["enc.0.self"][1, :, :, 3:] == 0.0)
    assert np.all(causal[1, :, :, 3:] == 0.0)


def test_eval_forward_is_deterministic():
    cfg = TINY.replace(dropout=0.3, attention_dropout=0.1)
    p = init_params(cfg, 1)
    src, tgt_in, _ = tiny_batch(1)
    a, _ = forward(p, cfg, src, tgt_in, train_mode=False, rng=np.random.default_rng(0))
    b, _ = forward(p, cfg, src, tgt_in, train_mode=False, rng=np.random.default_rng(9))
    assert np.array_equal(a, b)
    c, _ = forward(p, cfg, src, tgt_in, train_mode=True, rng=np.random.default_rng(0))
    assert not np.array_equal(a, c)


def test_forward_rejects_bad_input():
    p = init_params(TINY, 0)
    with pytest.raises(ConfigError):
        forward(p, TINY, np.zeros((2, 3), int), np.zeros((3, 3), int))
    with pytest.raises(ConfigError):
        forward(p, TINY, np.zeros((1, 17), int), np.zeros((1, 3), int))
    with pytest.raises(ConfigError):
        forward(p, TINY, np.full((1, 3), 11), np.zeros((1, 3), int))


def test_positions_are_sinusoids():
    pe = sinusoidal_positions(10, 8)
    assert pe[0, 0::2].tolist() == [0.0] * 4
    assert pe[0, 1::2].tolist() == [1.0] * 4
    assert pe[3, 0] == pytest.approx(math.sin(3.0))


# -- loss --------------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_loss_without_smoothing_is_nll(seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(2, 5, 13))
    tgt = rng.integers(0, 13, (2, 5))
    tgt[0, 3:] = PAD_ID
    nll, _ = token_nll(logits, tgt)
    keep = tgt != PAD_ID
    assert abs(label_smoothed_loss(logits, tgt, 0.0) - nll[keep].mean()) < 1e-12


@pytest.mark.parametrize("eps", [0.0, 0.1, 0.3])
def test_uniform_logits_cost_log_v(eps):
    logits = np.zeros((3, 4, 17))
    tgt = np.full((3, 4), 5)
    assert label_smoothed_loss(logits, tgt, eps) == pytest.approx(math.log(17), abs=1e-12)


def test_loss_minimum_is_the_smoothed_target():
    v, eps, y = 7, 0.2, 4
    q = np.full(v, eps / (v - 1))
    q[y] = 1 - eps
    entropy = -(q * np.log(q)).sum()
    at_q = label_smoothed_loss(np.log(q)[None, None], np.array([[y]]), eps)
    assert at_q == pytest.approx(entropy, abs=1e-12)
    one_hot = np.full(v, -20.0)
    one_hot[y] = 0.0
    assert label_smoothed_loss(one_hot[None, None], np.array([[y]]), eps) > at_q
    _, grad = label_smoothed_loss(np.log(q)[None, None], np.array([[y]]), eps, return_grad=True)
    assert np.abs(grad).max() < 1e-12


# -- backward ----------------------------------------------------------------


def test_gradient_check_one_seed():
    p = init_params(TINY, 0)
    src, tgt_in, tgt_out = tiny_batch(0)
    logits, cache = forward(p, TINY, src, tgt_in)
    _, dlogits = label_smoothed_loss(logits, tgt_out, 0.1, return_grad=True)
    grads = backward(cache, dlogits)
    assert set(grads) == set(p)

    def loss():
        return label_smoothed_loss(forward(p, TINY, src, tgt_in)[0], tgt_out, 0.1)

    err, where = max_relative_grad_error(loss, p, grads)
    assert err < 1e-4, where


def test_zero_upstream_gives_zero_gradients():
    p = init_params(TINY, 2)
    src, tgt_in, _ = tiny_batch(2)
    logits, cache = forward(p, TINY, src, tgt_in)
    grads = backward(cache, np.zeros_like(logits))
    assert all(not g.any() for g in grads.values())


def test_pad_positions_receive_no_gradient():
    p = init_params(TINY, 3)
    src, tgt_in, tgt_out = tiny_batch(3)
    logits, cache = forward(p, TINY, src, tgt_in)
    _, dlogits = label_smoothed_loss(logits, tgt_out, 0.1, return_grad=True)
    grads, inputs = backward(cache, dlogits, return_input_grads=True)
    assert np.all(inputs["src"][1, 3:] == 0.0)
    assert np.all(inputs["tgt"][1, 3:] == 0.0)
    assert all(np.isfinite(g).all() for g in grads.values())


# -- early stopping ----------------------------------------------------------


def test_early_stop_accuracy_sequence():
    stopper = EarlyStopper(EarlyStopPolicy(patience=4))
    stops = [stopper.update(v) for v in [50, 51, 51, 51, 51, 51]]
    assert stops == [False] * 5 + [True]


def test_early_stop_ppl_needs_strictly_lower():
    stopper = EarlyStopper(EarlyStopPolicy(metric="val_ppl", patience=2))
    assert stopper.update(10.0) is False
    assert stopper.update(9.0) is False
    assert stopper.update(9.0) is False
    assert stopper.update(9.5) is True


def test_early_stop_policy_validation():
    with pytest.raises(ConfigError):
        EarlyStopPolicy(patience=0)
    with pytest.raises(ConfigError):
        EarlyStopPolicy(metric="bleu")
