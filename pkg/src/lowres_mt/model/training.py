"""Batching, optimisation, validation, decoding and checkpoints."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..metrics import perplexity
from ..subword import BOS_ID, EOS_ID, PAD_ID
from .config import EarlyStopPolicy, EarlyStopper, TransformerConfig
from .transformer import backward, decode, encode, forward, init_params, label_smoothed_loss, token_nll

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "lowres-mt-checkpoint"
CHECKPOINT_VERSION = 1

IdPair = tuple[Sequence[int], Sequence[int]]


class DivergenceError(RuntimeError):
    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"training diverged at step {step} (loss={loss})")


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    src: np.ndarray  # (B, S) source ids followed by </s>, padded
    tgt_in: np.ndarray  # (B, T) <s> + target
    tgt_out: np.ndarray  # (B, T) target + </s>

    @property
    def target_tokens(self) -> int:
        return int((self.tgt_out != PAD_ID).sum())


def filter_pairs(pairs: Sequence[IdPair], max_len: int) -> list[IdPair]:
    """Drop pairs that would not fit in ``max_len`` once </s> (or <s>) is added."""
    kept = [(list(s), list(t)) for s, t in pairs if 0 < len(s) < max_len and 0 < len(t) < max_len]
    if len(kept) < len(pairs):
        log.info("dropped %d pairs longer than max_len=%d", len(pairs) - len(kept), max_len)
    return kept


def collate(pairs: Sequence[IdPair]) -> Batch:
    b = len(pairs)
    s_len = max(len(s) for s, _ in pairs) + 1
    t_len = max(len(t) for _, t in pairs) + 1
    src = np.full((b, s_len), PAD_ID, dtype=np.int64)
    tin = np.full((b, t_len), PAD_ID, dtype=np.int64)
    tout = np.full((b, t_len), PAD_ID, dtype=np.int64)
    for i, (s, t) in enumerate(pairs):
        src[i, : len(s)] = s
        src[i, len(s)] = EOS_ID
        tin[i, 0] = BOS_ID
        tin[i, 1 : len(t) + 1] = t
        tout[i, : len(t)] = t
        tout[i, len(t)] = EOS_ID
    return Batch(src, tin, tout)


def make_batches(pairs: Sequence[IdPair], batch_tokens: int, seed: int, epoch: int) -> list[list[int]]:
    """Length-bucketed batches for one epoch.

    Pairs are shuffled, stably sorted by target then source length, and cut so
    that no batch holds more than ``batch_tokens`` padded target positions.
    Batch order is shuffled too. Everything derives from ``(seed, epoch)``.
    """
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(len(pairs))
    order = sorted(order.tolist(), key=lambda i: (len(pairs[i][1]), len(pairs[i][0])))
    batches: list[list[int]] = []
    cur: list[int] = []
    width = 0
    for i in order:
        w = max(width, len(pairs[i][1]) + 1)
        if cur and w * (len(cur) + 1) > batch_tokens:
            batches.append(cur)
            cur, w = [], len(pairs[i][1]) + 1
        cur.append(i)
        width = w
    if cur:
        batches.append(cur)
    perm = rng.permutation(len(batches))
    return [batches[k] for k in perm]


def eval_batches(pairs: Sequence[IdPair], batch_tokens: int) -> list[Batch]:
    order = sorted(range(len(pairs)), key=lambda i: (len(pairs[i][1]), len(pairs[i][0])))
    out, cur, width = [], [], 0
    for i in order:
        w = max(width, len(pairs[i][1]) + 1)
        if cur and w * (len(cur) + 1) > batch_tokens:
            out.append(collate([pairs[j] for j in cur]))
            cur, w = [], len(pairs[i][1]) + 1
        cur.append(i)
        width = w
    if cur:
        out.append(collate([pairs[j] for j in cur]))
    return out


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


def noam_lr(step: int, config: TransformerConfig) -> float:
    step = max(step, 1)
    return config.learning_rate_scale * config.embed_dim**-0.5 * min(step**-0.5, step * config.warmup_steps**-1.5)


@dataclass
class TrainState:
    config: TransformerConfig
    params: dict
    ema_params: dict | None
    adam_m: dict
    adam_v: dict
    step: int = 0
    history: list = field(default_factory=list)
    rng: np.random.Generator = None
    epoch: int = 0
    batch_pos: int = 0
    stopper_best: float | None = None
    stopper_bad: int = 0
    runtime_seconds: float = 0.0
    stopped_early: bool = False
    loss_sum: float = 0.0
    loss_count: int = 0

    @property
    def eval_params(self) -> dict:
        return self.ema_params if self.ema_params is not None else self.params

    @property
    def runtime_hours(self) -> float:
        return self.runtime_seconds / 3600.0


def init_state(config: TransformerConfig) -> TrainState:
    params = init_params(config)
    ema = {k: v.copy() for k, v in params.items()} if config.average_decay > 0 else None
    return TrainState(
        config=config,
        params=params,
        ema_params=ema,
        adam_m={k: np.zeros_like(v) for k, v in params.items()},
        adam_v={k: np.zeros_like(v) for k, v in params.items()},
        rng=np.random.default_rng([config.seed, 1]),
    )


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Rescale in place so the global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for g in grads.values():
            g *= g.dtype.type(scale)
    return norm


def train_step(state: TrainState, batch: Batch, config: TransformerConfig | None = None) -> TrainState:
    """One Adam update under the Noam schedule, then the weight-average update."""
    config = config or state.config
    if batch.tgt_out.size > config.batch_tokens and batch.tgt_out.shape[0] > 1:
        raise ValueError(f"batch holds {batch.tgt_out.size} target positions, over batch_tokens={config.batch_tokens}")
    step = state.step + 1
    logits, cache = forward(state.params, config, batch.src, batch.tgt_in, train_mode=True, rng=state.rng)
    loss, dlogits = label_smoothed_loss(logits, batch.tgt_out, config.label_smoothing, return_grad=True)
    if not math.isfinite(loss):
        raise DivergenceError(step, loss)
    grads = backward(cache, dlogits)
    clip_gradients(grads, config.max_grad_norm)

    lr = noam_lr(step, config)
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    for k, g in grads.items():
        m, v, p = state.adam_m[k], state.adam_v[k], state.params[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (lr / c1) * m / (np.sqrt(v / c2) + eps)
    if state.ema_params is not None:
        a = config.average_decay
        for k, p in state.params.items():
            e = state.ema_params[k]
            e *= 1.0 - a
            e += a * p
    state.step = step
    state.loss_sum += loss
    state.loss_count += 1
    return state


# ---------------------------------------------------------------------------
# validation and the training loop
# ---------------------------------------------------------------------------


@dataclass
class ValidationResult:
    accuracy: float  # percent of non-pad target tokens predicted exactly (teacher forced)
    mean_nll: float
    tokens: int

    @property
    def ppl(self) -> float:
        return perplexity(self.mean_nll)


def validate(params: dict, config: TransformerConfig, batches: Sequence[Batch]) -> ValidationResult:
    correct = 0
    total = 0
    nll_sum = 0.0
    for b in batches:
        logits, _ = forward(params, config, b.src, b.tgt_in, train_mode=False)
        nll, pred = token_nll(logits.astype(np.float64), b.tgt_out)
        tok = b.tgt_out != PAD_ID
        correct += int(((pred == b.tgt_out) & tok).sum())
        total += int(tok.sum())
        nll_sum += float((nll * tok).sum())
    if total == 0:
        raise ValueError("validation set has no target tokens")
    return ValidationResult(100.0 * correct / total, nll_sum / total, total)


def _history_line(entry: dict) -> str:
    return f"{entry['step']}\t{entry['train_loss']:.6f}\t{entry['val_accuracy']:.4f}\t{entry['val_ppl']:.6f}\n"


def train(
    train_pairs: Sequence[IdPair],
    config: TransformerConfig,
    early_stop: EarlyStopPolicy = EarlyStopPolicy(),
    dev_pairs: Sequence[IdPair] = (),
    max_steps: int = 200_000,
    state: TrainState | None = None,
    history_path: Path | str | None = None,
    on_validate: Callable[[TrainState, dict], None] | None = None,
) -> TrainState:
    """Train until ``max_steps`` or until early stopping triggers.

    Every ``early_stop.validation_interval`` steps the dev set is scored
    (teacher-forced accuracy and perplexity) and a history entry appended. Pass
    a ``state`` to resume; the batch order continues exactly where it left off.
    """
    train_pairs = filter_pairs(train_pairs, config.max_len)
    if not train_pairs:
        raise ValueError("no training pairs fit within max_len")
    dev = eval_batches(filter_pairs(dev_pairs, config.max_len), config.batch_tokens) if dev_pairs else []
    state = state or init_state(config)
    stopper = EarlyStopper(early_stop, state.stopper_best, state.stopper_bad)
    hist_fh = open(history_path, "a", encoding="utf-8") if history_path else None
    epoch_batches = None
    epoch_of_batches = -1
    try:
        while state.step < max_steps and not state.stopped_early:
            t0 = time.perf_counter()
            if epoch_of_batches != state.epoch:
                epoch_batches = make_batches(train_pairs, config.batch_tokens, config.seed, state.epoch)
                epoch_of_batches = state.epoch
            if state.batch_pos >= len(epoch_batches):
                state.epoch += 1
                state.batch_pos = 0
                continue
            idx = epoch_batches[state.batch_pos]
            state.batch_pos += 1
            train_step(state, collate([train_pairs[i] for i in idx]), config)
            if dev and state.step % early_stop.validation_interval == 0:
                res = validate(state.eval_params, config, dev)
                entry = {
                    "step": state.step,
                    "train_loss": state.loss_sum / max(state.loss_count, 1),
                    "val_accuracy": res.accuracy,
                    "val_ppl": res.ppl,
                }
                state.loss_sum, state.loss_count = 0.0, 0
                state.history.append(entry)
                if hist_fh:
                    hist_fh.write(_history_line(entry))
                    hist_fh.flush()
                log.info("step %d loss %.4f val_acc %.2f val_ppl %.3f", state.step, entry["train_loss"], res.accuracy, res.ppl)
                value = res.accuracy if early_stop.metric == "val_accuracy" else res.ppl
                stop = stopper.update(value)
                state.stopper_best, state.stopper_bad = stopper.best, stopper.bad_rounds
                if on_validate:
                    on_validate(state, entry)
                if stop:
                    state.stopped_early = True
            state.runtime_seconds += time.perf_counter() - t0
    finally:
        if hist_fh:
            hist_fh.close()
    return state


def read_history(path: Path | str) -> list[dict]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        step, loss, acc, ppl = line.split("\t")
        out.append({"step": int(step), "train_loss": float(loss), "val_accuracy": float(acc), "val_ppl": float(ppl)})
    return out


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------


def _src_array(seqs: Sequence[Sequence[int]], max_len: int) -> np.ndarray:
    width = max(min(len(s), max_len - 1) for s in seqs) + 1
    src = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        s = list(s)[: max_len - 1]
        src[i, : len(s)] = s
        src[i, len(s)] = EOS_ID
    return src


def greedy_decode(params: dict, config: TransformerConfig, src_seqs: Sequence[Sequence[int]]) -> list[list[int]]:
    src = _src_array(src_seqs, config.max_len)
    memory, *_ = encode(params, config, src)
    b = len(src_seqs)
    ys = np.full((b, 1), BOS_ID, dtype=np.int64)
    done = np.zeros(b, dtype=bool)
    while ys.shape[1] < config.max_len and not done.all():
        logits, *_ = decode(params, config, memory, src, ys)
        nxt = logits[:, -1].argmax(axis=-1)
        nxt[done] = PAD_ID
        ys = np.concatenate([ys, nxt[:, None]], axis=1)
        done |= nxt == EOS_ID
    out = []
    for row in ys[:, 1:]:
        seq = []
        for t in row:
            if t in (EOS_ID, PAD_ID):
                break
            seq.append(int(t))
        out.append(seq)
    return out


def beam_decode(params: dict, config: TransformerConfig, src_ids: Sequence[int], beam: int) -> list[int]:
    """Beam search over summed log-probabilities (no length penalty)."""
    src = _src_array([src_ids], config.max_len)
    memory, *_ = encode(params, config, src)
    beams: list[tuple[float, list[int]]] = [(0.0, [BOS_ID])]
    finished: list[tuple[float, list[int]]] = []
    while beams and len(beams[0][1]) < config.max_len:
        ys = np.array([seq for _, seq in beams], dtype=np.int64)
        k = len(beams)
        logits, *_ = decode(params, config, np.repeat(memory, k, axis=0), np.repeat(src, k, axis=0), ys)
        last = logits[:, -1].astype(np.float64)
        logp = last - last.max(axis=-1, keepdims=True)
        logp = logp - np.log(np.exp(logp).sum(axis=-1, keepdims=True))
        scores = np.array([s for s, _ in beams])[:, None] + logp
        flat = scores.reshape(-1)
        order = np.argsort(-flat, kind="stable")
        candidates = []
        for j in order[: beam + len(finished)]:
            bi, tok = divmod(int(j), logp.shape[1])
            candidates.append((float(flat[j]), beams[bi][1] + [tok]))
        pool = sorted(finished + candidates, key=lambda c: -c[0])[:beam]
        finished = [c for c in pool if c[1][-1] == EOS_ID]
        beams = [c for c in pool if c[1][-1] != EOS_ID]
        if not beams:
            break
    best = max(finished + beams, key=lambda c: c[0]) if finished or beams else (0.0, [BOS_ID])
    seq = best[1][1:]
    return [t for t in seq if t != EOS_ID]


def translate(
    state_or_params,
    config: TransformerConfig,
    src_seqs: Sequence[Sequence[int]],
    beam: int = 1,
    batch_size: int = 64,
) -> list[list[int]]:
    """Decode each source sequence. Uses the averaged weights when the state carries them."""
    if beam < 1:
        raise ValueError("beam must be >= 1")
    params = state_or_params.eval_params if isinstance(state_or_params, TrainState) else state_or_params
    src_seqs = [list(s) for s in src_seqs]
    if not src_seqs:
        return []
    if beam > 1:
        return [beam_decode(params, config, s, beam) for s in src_seqs]
    order = sorted(range(len(src_seqs)), key=lambda i: len(src_seqs[i]))
    out: list = [None] * len(src_seqs)
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        for i, hyp in zip(chunk, greedy_decode(params, config, [src_seqs[i] for i in chunk])):
            out[i] = hyp
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(state: TrainState, path: Path | str) -> None:
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": state.config.to_dict(),
        "step": state.step,
        "history": state.history,
        "rng": state.rng.bit_generator.state,
        "epoch": state.epoch,
        "batch_pos": state.batch_pos,
        "stopper_best": state.stopper_best,
        "stopper_bad": state.stopper_bad,
        "runtime_seconds": state.runtime_seconds,
        "stopped_early": state.stopped_early,
        "loss_sum": state.loss_sum,
        "loss_count": state.loss_count,
        "has_ema": state.ema_params is not None,
    }
    arrays = {"meta": np.array(json.dumps(meta))}
    for prefix, d in (("param", state.params), ("m", state.adam_m), ("v", state.adam_v), ("ema", state.ema_params or {})):
        for k, v in d.items():
            arrays[f"{prefix}/{k}"] = v
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: Path | str) -> TrainState:
    try:
        data = np.load(path, allow_pickle=False)
        meta = json.loads(str(data["meta"]))
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"{path}: not a checkpoint ({exc})") from None
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')}")
    groups: dict[str, dict] = {"param": {}, "m": {}, "v": {}, "ema": {}}
    for key in data.files:
        if key == "meta":
            continue
        prefix, name = key.split("/", 1)
        groups[prefix][name] = data[key]
    config = TransformerConfig.from_dict(meta["config"])
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng"]
    return TrainState(
        config=config,
        params=groups["param"],
        ema_params=groups["ema"] if meta["has_ema"] else None,
        adam_m=groups["m"],
        adam_v=groups["v"],
        step=meta["step"],
        history=meta["history"],
        rng=rng,
        epoch=meta["epoch"],
        batch_pos=meta["batch_pos"],
        stopper_best=meta["stopper_best"],
        stopper_bad=meta["stopper_bad"],
        runtime_seconds=meta["runtime_seconds"],
        stopped_early=meta["stopped_early"],
        loss_sum=meta["loss_sum"],
        loss_count=meta["loss_count"],
    )
