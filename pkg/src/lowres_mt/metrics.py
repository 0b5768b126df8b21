"""Corpus-level BLEU, TER, chrF and perplexity, written from scratch.

All scorers take parallel lists of hypothesis and reference strings. Lines are
passed through :func:`normalize_for_eval` first, so scoring is case-insensitive
unless ``case_sensitive=True``.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .corpus import normalize_for_eval


class MetricInputError(ValueError):
    pass


@dataclass(frozen=True)
class BleuConfig:
    max_n: int = 4
    case_sensitive: bool = False
    smooth: bool = False  # add-one smoothing for n >= 2, meant for sentence-level scores

    def __post_init__(self):
        if self.max_n < 1:
            raise ValueError("max_n must be >= 1")


def _check_pairs(hyps: Sequence[str], refs: Sequence[str]) -> None:
    if len(hyps) != len(refs):
        raise MetricInputError(f"{len(hyps)} hypotheses but {len(refs)} references")
    if not hyps:
        raise MetricInputError("cannot score an empty corpus")


def _tokens(line: str, case_sensitive: bool) -> list[str]:
    return normalize_for_eval(line, lowercase=not case_sensitive).split()


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


# ---------------------------------------------------------------------------
# BLEU
# ---------------------------------------------------------------------------


@dataclass
class BleuStats:
    matches: list[int]
    totals: list[int]
    hyp_len: int
    ref_len: int

    def __add__(self, other: "BleuStats") -> "BleuStats":
        return BleuStats(
            [a + b for a, b in zip(self.matches, other.matches)],
            [a + b for a, b in zip(self.totals, other.totals)],
            self.hyp_len + other.hyp_len,
            self.ref_len + other.ref_len,
        )


def bleu_stats(hyp: Sequence[str], ref: Sequence[str], max_n: int = 4) -> BleuStats:
    """Clipped n-gram match counts for one tokenized pair."""
    matches, totals = [], []
    for n in range(1, max_n + 1):
        h, r = _ngrams(hyp, n), _ngrams(ref, n)
        matches.append(sum(min(c, r[g]) for g, c in h.items()))
        totals.append(max(len(hyp) - n + 1, 0))
    return BleuStats(matches, totals, len(hyp), len(ref))


def bleu_from_stats(stats: BleuStats, smooth: bool = False) -> float:
    if stats.hyp_len == 0:
        return 0.0
    log_prec = 0.0
    orders = 0
    for n, (m, t) in enumerate(zip(stats.matches, stats.totals), start=1):
        if t == 0:
            continue  # hypotheses too short for this order: leave it out of the mean
        if smooth and n > 1:
            m, t = m + 1, t + 1
        if m == 0:
            return 0.0
        log_prec += math.log(m / t)
        orders += 1
    bp = min(1.0, math.exp(1.0 - stats.ref_len / stats.hyp_len))
    return 100.0 * bp * math.exp(log_prec / orders)


def corpus_bleu(hyps: Sequence[str], refs: Sequence[str], config: BleuConfig = BleuConfig()) -> float:
    """Corpus BLEU on a 0-100 scale, with n-gram counts pooled before division."""
    _check_pairs(hyps, refs)
    total = None
    for h, r in zip(hyps, refs):
        s = bleu_stats(_tokens(h, config.case_sensitive), _tokens(r, config.case_sensitive), config.max_n)
        total = s if total is None else total + s
    return bleu_from_stats(total, smooth=config.smooth)


def sentence_bleu(hyp: str, ref: str, config: BleuConfig = BleuConfig(smooth=True)) -> float:
    return corpus_bleu([hyp], [ref], config)


# ---------------------------------------------------------------------------
# TER
# ---------------------------------------------------------------------------

MAX_SHIFT_SIZE = 10


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Word-level Levenshtein distance with unit costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def _shift(words: list, start: int, length: int, dest: int) -> list:
    """Move ``words[start:start+length]`` so that it begins at index ``dest`` of the remainder."""
    block = words[start : start + length]
    rest = words[:start] + words[start + length :]
    return rest[:dest] + block + rest[dest:]


def _ref_blocks(ref: Sequence, max_len: int) -> set[tuple]:
    blocks = set()
    for i in range(len(ref)):
        for L in range(1, min(max_len, len(ref) - i) + 1):
            blocks.add(tuple(ref[i : i + L]))
    return blocks


def ter_edits(hyp: Sequence[str], ref: Sequence[str], max_shift: int = MAX_SHIFT_SIZE) -> tuple[int, int]:
    """Greedy shift search. Returns ``(num_shifts, num_edits)``.

    Each round tries every move of a hypothesis block that also occurs in the
    reference (up to ``max_shift`` words) to every other position, and applies
    the one giving the lowest edit distance. Rounds continue while a move
    strictly lowers the edit distance.
    """
    words = list(hyp)
    ref = list(ref)
    cur = edit_distance(words, ref)
    shifts = 0
    blocks = _ref_blocks(ref, max_shift)
    while cur > 0:
        best = None
        n = len(words)
        for start in range(n):
            for length in range(1, min(max_shift, n - start) + 1):
                if tuple(words[start : start + length]) not in blocks:
                    break
                for dest in range(n - length + 1):
                    if dest == start:
                        continue
                    cand = _shift(words, start, length, dest)
                    d = edit_distance(cand, ref)
                    if d < cur and (best is None or d < best[0]):
                        best = (d, cand)
        if best is None:
            break
        cur, words = best
        shifts += 1
    return shifts, cur


def sentence_ter(hyp: str, ref: str, case_sensitive: bool = False) -> float:
    return corpus_ter([hyp], [ref], case_sensitive)


def corpus_ter(hyps: Sequence[str], refs: Sequence[str], case_sensitive: bool = False) -> float:
    """Total edits (including shifts) divided by total reference words."""
    _check_pairs(hyps, refs)
    edits = 0
    ref_words = 0
    for h, r in zip(hyps, refs):
        ht, rt = _tokens(h, case_sensitive), _tokens(r, case_sensitive)
        s, e = ter_edits(ht, rt)
        edits += s + e
        ref_words += len(rt)
    if ref_words == 0:
        raise MetricInputError("references contain no words")
    return edits / ref_words


# ---------------------------------------------------------------------------
# chrF
# ---------------------------------------------------------------------------


def _char_ngrams(text: str, n: int) -> Counter:
    return Counter(text[i : i + n] for i in range(len(text) - n + 1))


def chrf_stats(hyp: str, ref: str, max_n: int = 6) -> list[tuple[int, int, int]]:
    """Per order ``(matches, hyp_total, ref_total)`` for one normalized pair."""
    out = []
    for n in range(1, max_n + 1):
        h, r = _char_ngrams(hyp, n), _char_ngrams(ref, n)
        m = sum(min(c, r[g]) for g, c in h.items())
        out.append((m, max(len(hyp) - n + 1, 0), max(len(ref) - n + 1, 0)))
    return out


def chrf_from_stats(stats: Sequence[tuple[int, int, int]], beta: float = 3.0) -> float:
    precisions, recalls = [], []
    for m, ht, rt in stats:
        if ht == 0 and rt == 0:
            continue  # order longer than both sides
        precisions.append(m / ht if ht else 0.0)
        recalls.append(m / rt if rt else 0.0)
    if not precisions:
        return 0.0
    p = sum(precisions) / len(precisions)
    r = sum(recalls) / len(recalls)
    if p == 0.0 and r == 0.0:
        return 0.0
    b2 = beta * beta
    return (1 + b2) * p * r / (b2 * p + r)


def corpus_chrf(
    hyps: Sequence[str],
    refs: Sequence[str],
    beta: float = 3.0,
    max_char_n: int = 6,
    case_sensitive: bool = False,
) -> float:
    """Character n-gram F-score on a 0-1 scale; single spaces count as characters."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    _check_pairs(hyps, refs)
    pooled = [[0, 0, 0] for _ in range(max_char_n)]
    for h, r in zip(hyps, refs):
        hn = normalize_for_eval(h, lowercase=not case_sensitive)
        rn = normalize_for_eval(r, lowercase=not case_sensitive)
        for acc, s in zip(pooled, chrf_stats(hn, rn, max_char_n)):
            for k in range(3):
                acc[k] += s[k]
    return chrf_from_stats([tuple(x) for x in pooled], beta)


# ---------------------------------------------------------------------------
# perplexity
# ---------------------------------------------------------------------------


def perplexity(mean_nll: float) -> float:
    """``exp`` of the mean per-token negative log-likelihood (natural log)."""
    return math.exp(mean_nll)


def score_all(hyps: Sequence[str], refs: Sequence[str]) -> dict[str, float]:
    return {
        "bleu": corpus_bleu(hyps, refs),
        "ter": corpus_ter(hyps, refs),
        "chrf3": corpus_chrf(hyps, refs, beta=3.0),
    }
