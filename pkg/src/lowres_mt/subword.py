"""Shared-vocabulary subword models: BPE and unigram LM.

Both model types pre-tokenize on whitespace and mark the start of each word
with ``MARKER``. For BPE the marker starts out as its own symbol and can be
merged like any character; for the unigram model it is simply the first
character of every word string.
"""

from __future__ import annotations

import heapq
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

MARKER = "▁"  # ▁
UNK, BOS, EOS, PAD = "<unk>", "<s>", "</s>", "<pad>"
SPECIALS = (UNK, BOS, EOS, PAD)
UNK_ID, BOS_ID, EOS_ID, PAD_ID = 0, 1, 2, 3
UNK_SURFACE = "⁇"  # ⁇, what decode prints for an unknown piece

FORMAT_VERSION = "v1"
CANONICAL_VOCAB_SIZES = (4000, 8000, 16000, 32000)


class VocabSizeError(ValueError):
    def __init__(self, requested: int, floor: int):
        self.requested = requested
        self.floor = floor
        super().__init__(f"vocab size {requested} is below the floor of {floor} (alphabet + {len(SPECIALS)} specials)")


class ModelFormatError(ValueError):
    pass


def count_words(stream: Iterable[str], marker: str | None = MARKER) -> Counter:
    """Word frequencies over a line stream. Words carry the boundary marker when one is set."""
    counts: Counter = Counter()
    prefix = marker or ""
    for line in stream:
        for w in line.split():
            counts[prefix + w] += 1
    return counts


def _alphabet(word_counts: Counter) -> set[str]:
    return {ch for w in word_counts for ch in w}


def _check_floor(vocab_size: int, alphabet: set[str]) -> None:
    floor = len(alphabet) + len(SPECIALS)
    if vocab_size < floor:
        raise VocabSizeError(vocab_size, floor)


def decode(pieces: Sequence[str], marker: str = MARKER) -> str:
    """Join pieces back into text. Markers turn into single spaces; specials other than unk vanish."""
    out = []
    for p in pieces:
        if p == UNK:
            out.append(UNK_SURFACE)
        elif p in SPECIALS:
            continue
        else:
            out.append(p)
    return "".join(out).replace(marker, " ").strip(" ") if marker else "".join(out)


class SubwordModel:
    """Shared behaviour: id mapping and the encode/decode round trip."""

    kind = ""
    marker: str | None
    vocab_size: int

    def pieces_list(self) -> list[str]:
        raise NotImplementedError

    @property
    def vocab(self) -> dict[str, int]:
        if getattr(self, "_vocab", None) is None:
            self._vocab = {p: i for i, p in enumerate(self.pieces_list())}
        return self._vocab

    def __len__(self) -> int:
        return len(self.vocab)

    def id_to_piece(self, i: int) -> str:
        return self.pieces_list()[i]

    def encode(self, text: str) -> list[str]:
        raise NotImplementedError

    def encode_ids(self, text: str) -> list[int]:
        v = self.vocab
        return [v.get(p, UNK_ID) for p in self.encode(text)]

    def decode(self, pieces: Sequence[str]) -> str:
        return decode(pieces, self.marker or "")

    def decode_ids(self, ids: Sequence[int]) -> str:
        table = self.pieces_list()
        return self.decode([table[i] for i in ids])


# ---------------------------------------------------------------------------
# BPE
# ---------------------------------------------------------------------------


@dataclass
class BpeModel(SubwordModel):
    merges: list[tuple[str, str]]
    alphabet: frozenset[str]
    vocab_size: int
    marker: str | None = MARKER
    _ranks: dict = field(default=None, init=False, repr=False, compare=False)
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)
    _vocab: dict = field(default=None, init=False, repr=False, compare=False)
    _pieces: list = field(default=None, init=False, repr=False, compare=False)

    kind = "bpe"

    def __post_init__(self):
        self._ranks = {pair: r for r, pair in enumerate(self.merges)}

    def pieces_list(self) -> list[str]:
        if getattr(self, "_pieces", None) is None:
            # different merge paths can spell the same string; keep the first
            self._pieces = list(dict.fromkeys(list(SPECIALS) + sorted(self.alphabet) + [a + b for a, b in self.merges]))
        return self._pieces

    def encode(self, text: str) -> list[str]:
        out: list[str] = []
        for w in text.split():
            out.extend(self._encode_word(w))
        return out

    def _encode_word(self, word: str) -> list[str]:
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        symbols = ([self.marker] if self.marker else []) + [c if c in self.alphabet else UNK for c in word]
        ranks = self._ranks
        while len(symbols) > 1:
            best_rank, best_pair = None, None
            for pair in zip(symbols, symbols[1:]):
                r = ranks.get(pair)
                if r is not None and (best_rank is None or r < best_rank):
                    best_rank, best_pair = r, pair
            if best_pair is None:
                break
            symbols = _merge_symbols(symbols, best_pair)
        if len(self._cache) < 100_000:
            self._cache[word] = symbols
        return symbols


def _merge_symbols(symbols: list[str], pair: tuple[str, str]) -> list[str]:
    a, b = pair
    out = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def _pair_counts(symbols: list[str]) -> Counter:
    """Adjacent pair occurrences in one word; overlapping runs like "aaa" count twice."""
    return Counter(zip(symbols, symbols[1:]))


def train_bpe(stream: Iterable[str], vocab_size: int, marker: str | None = MARKER, trace: list | None = None) -> BpeModel:
    """Greedy BPE. Each iteration merges the most frequent adjacent pair.

    Ties go to the lexicographically smallest ``(left, right)``. Training stops
    when the vocabulary is full or no pair occurs at least twice. If ``trace``
    is a list, one ``(pair, count, all_pair_counts)`` entry is appended per merge.
    """
    word_counts = Counter()
    for w, c in count_words(stream, None).items():
        word_counts[w] += c
    if not word_counts:
        raise ValueError("cannot train on an empty stream")
    alphabet = _alphabet(word_counts)
    if marker:
        alphabet.add(marker)
    _check_floor(vocab_size, alphabet)

    words = []
    freqs = []
    for w, c in sorted(word_counts.items()):
        words.append(([marker] if marker else []) + list(w))
        freqs.append(c)

    stats: Counter = Counter()
    where: dict[tuple[str, str], set[int]] = defaultdict(set)
    for i, syms in enumerate(words):
        for pair, k in _pair_counts(syms).items():
            stats[pair] += k * freqs[i]
            where[pair].add(i)

    heap = [(-c, p) for p, c in stats.items()]
    heapq.heapify(heap)

    merges: list[tuple[str, str]] = []
    budget = vocab_size - len(alphabet) - len(SPECIALS)
    while len(merges) < budget and heap:
        negc, pair = heapq.heappop(heap)
        if stats.get(pair, 0) != -negc:
            continue  # stale entry
        if -negc < 2:
            break
        if trace is not None:
            trace.append((pair, -negc, {p: c for p, c in stats.items() if c > 0}))
        merges.append(pair)
        touched = set()
        for i in list(where[pair]):
            syms = words[i]
            old = _pair_counts(syms)
            new_syms = _merge_symbols(syms, pair)
            new = _pair_counts(new_syms)
            words[i] = new_syms
            f = freqs[i]
            for p, k in old.items():
                stats[p] -= k * f
                if p not in new:
                    where[p].discard(i)
                touched.add(p)
            for p, k in new.items():
                stats[p] += k * f
                where[p].add(i)
                touched.add(p)
        for p in touched:
            c = stats.get(p, 0)
            if c <= 0:
                stats.pop(p, None)
                where.pop(p, None)
            else:
                heapq.heappush(heap, (-c, p))
    return BpeModel(merges, frozenset(alphabet), vocab_size, marker)


# ---------------------------------------------------------------------------
# Unigram LM
# ---------------------------------------------------------------------------


def _logsumexp(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    m = max(a, b)
    return m + math.log(math.exp(a - m) + math.exp(b - m))


@dataclass
class UnigramModel(SubwordModel):
    pieces: dict[str, float]  # piece -> natural-log probability
    vocab_size: int
    marker: str | None = MARKER
    _vocab: dict = field(default=None, init=False, repr=False, compare=False)
    _order: list = field(default=None, init=False, repr=False, compare=False)
    _max_len: int = field(default=0, init=False, repr=False, compare=False)
    _unk_score: float = field(default=0.0, init=False, repr=False, compare=False)
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    kind = "unigram"

    def __post_init__(self):
        self._max_len = max((len(p) for p in self.pieces), default=1)
        self._unk_score = min(self.pieces.values(), default=0.0) - 10.0

    @property
    def alphabet(self) -> frozenset[str]:
        return frozenset(p for p in self.pieces if len(p) == 1)

    def pieces_list(self) -> list[str]:
        if self._order is None:
            self._order = list(SPECIALS) + sorted(self.pieces, key=lambda p: (-self.pieces[p], p))
        return self._order

    def encode(self, text: str) -> list[str]:
        out: list[str] = []
        prefix = self.marker or ""
        for w in text.split():
            w = prefix + w
            hit = self._cache.get(w)
            if hit is None:
                hit = viterbi_segment(self, w)
                if len(self._cache) < 100_000:
                    self._cache[w] = hit
            out.extend(hit)
        return out


def viterbi_segment(model: UnigramModel, text: str) -> list[str]:
    """Highest-scoring segmentation of ``text`` taken as one unit (no whitespace handling).

    Ties are broken by fewer pieces, then by the lexicographically smaller
    piece sequence. Characters the model does not know become ``<unk>``.
    """
    return _viterbi(text, model.pieces, model._max_len, model._unk_score)


def _viterbi(text: str, pieces: dict[str, float], max_len: int, unk_score: float, exclude: str | None = None) -> list[str]:
    n = len(text)
    if n == 0:
        return []
    # best[j] = (score, num_pieces, sequence, piece scores) over text[:j]
    best: list = [None] * (n + 1)
    best[0] = (0.0, 0, [], ())
    for j in range(1, n + 1):
        cand = None
        for i in range(max(0, j - max_len), j):
            if best[i] is None:
                continue
            piece = text[i:j]
            lp = pieces.get(piece) if piece != exclude else None
            if lp is None:
                if j - i == 1 and piece not in pieces:
                    lp, piece = unk_score, UNK
                else:
                    continue
            s, k, seq, lps = best[i]
            option = (s + lp, k + 1, seq + [piece], lps + (lp,))
            if cand is None or _better(option, cand):
                cand = option
        best[j] = cand
    return best[n][2]


def _better(a: tuple, b: tuple) -> bool:
    sa, sb = a[0], b[0]
    if abs(sa - sb) <= 1e-9 * max(1.0, abs(sa)):
        # running sums depend on piece order; the exactly rounded sum does not,
        # so reorderings of the same pieces tie and the later keys decide
        sa, sb = math.fsum(a[3]), math.fsum(b[3])
    if sa != sb:
        return sa > sb
    if a[1] != b[1]:
        return a[1] < b[1]
    return a[2] < b[2]


def _forward_backward(word: str, logp: dict[str, float], max_len: int) -> tuple[float, dict[str, float]]:
    """Log marginal likelihood of ``word`` and expected piece counts given the current model."""
    n = len(word)
    alpha = [-math.inf] * (n + 1)
    alpha[0] = 0.0
    for j in range(1, n + 1):
        acc = -math.inf
        for i in range(max(0, j - max_len), j):
            lp = logp.get(word[i:j])
            if lp is not None and alpha[i] != -math.inf:
                acc = _logsumexp(acc, alpha[i] + lp)
        alpha[j] = acc
    beta = [-math.inf] * (n + 1)
    beta[n] = 0.0
    for i in range(n - 1, -1, -1):
        acc = -math.inf
        for j in range(i + 1, min(n, i + max_len) + 1):
            lp = logp.get(word[i:j])
            if lp is not None and beta[j] != -math.inf:
                acc = _logsumexp(acc, lp + beta[j])
        beta[i] = acc
    z = alpha[n]
    expected: dict[str, float] = defaultdict(float)
    for i in range(n):
        if alpha[i] == -math.inf:
            continue
        for j in range(i + 1, min(n, i + max_len) + 1):
            piece = word[i:j]
            lp = logp.get(piece)
            if lp is None or beta[j] == -math.inf:
                continue
            expected[piece] += math.exp(alpha[i] + lp + beta[j] - z)
    return z, expected


def corpus_log_likelihood(logp: dict[str, float], word_counts: Counter) -> float:
    max_len = max(len(p) for p in logp)
    total = 0.0
    for w, c in word_counts.items():
        z, _ = _forward_backward(w, logp, max_len)
        total += c * z
    return total


def em_step(logp: dict[str, float], word_counts: Counter) -> tuple[dict[str, float], float]:
    """One EM iteration. Returns the re-estimated log-probs and the log-likelihood *before* the update."""
    max_len = max(len(p) for p in logp)
    counts: dict[str, float] = defaultdict(float)
    loglik = 0.0
    for w, c in word_counts.items():
        z, exp_counts = _forward_backward(w, logp, max_len)
        loglik += c * z
        for p, e in exp_counts.items():
            counts[p] += c * e
    total = sum(counts.values())
    new = {}
    for p in logp:
        e = counts.get(p, 0.0)
        if e > 0:
            new[p] = math.log(e / total)
        elif len(p) == 1:
            new[p] = math.log(1e-12 / total) if total else -30.0
        # multi-char pieces with zero expected count are dropped
    return _normalize(new), loglik


def _normalize(logp: dict[str, float]) -> dict[str, float]:
    m = max(logp.values())
    z = m + math.log(sum(math.exp(v - m) for v in logp.values()))
    return {p: v - z for p, v in logp.items()}


def _seed_pieces(word_counts: Counter, alphabet: set[str], limit: int, max_piece_len: int = 8) -> dict[str, float]:
    sub: Counter = Counter()
    for w, c in word_counts.items():
        n = len(w)
        for i in range(n):
            for j in range(i + 2, min(n, i + max_piece_len) + 1):
                sub[w[i:j]] += c
    frequent = sorted(((c, s) for s, c in sub.items() if c >= 2), key=lambda t: (-t[0], t[1]))
    frequent = frequent[: max(0, limit - len(alphabet))]
    char_counts: Counter = Counter()
    for w, c in word_counts.items():
        for ch in w:
            char_counts[ch] += c
    freq = {ch: float(char_counts[ch]) for ch in alphabet}
    for c, s in frequent:
        freq[s] = float(c)
    total = sum(freq.values())
    return {p: math.log(f / total) for p, f in freq.items()}


def _viterbi_loss(logp: dict[str, float], word_counts: Counter) -> dict[str, float]:
    """Approximate likelihood drop from deleting each multi-character piece.

    A piece's Viterbi frequency times the gap between its own log-prob and the
    score of its best segmentation without it.
    """
    max_len = max(len(p) for p in logp)
    freq: Counter = Counter()
    for w, c in word_counts.items():
        for p in _viterbi(w, logp, max_len, -math.inf):
            freq[p] += c
    loss = {}
    for p, lp in logp.items():
        if len(p) == 1:
            continue
        alt = _viterbi(p, logp, max_len, -math.inf, exclude=p)
        loss[p] = freq[p] * (lp - sum(logp[q] for q in alt))
    return loss


def train_unigram(
    stream: Iterable[str],
    vocab_size: int,
    em_rounds: int = 2,
    prune_keep: float = 0.75,
    marker: str | None = MARKER,
    seed_factor: int = 8,
    trace: list | None = None,
) -> UnigramModel:
    """EM-trained unigram LM with iterative pruning down to ``vocab_size``.

    If ``trace`` is a list, ``(round, iteration, loglik_before, logp_after)``
    tuples are appended for every EM iteration.
    """
    if not 0 < prune_keep < 1:
        raise ValueError("prune_keep must lie in (0, 1)")
    word_counts = count_words(stream, marker)
    if not word_counts:
        raise ValueError("cannot train on an empty stream")
    alphabet = _alphabet(word_counts)
    _check_floor(vocab_size, alphabet)
    target = vocab_size - len(SPECIALS)

    logp = _seed_pieces(word_counts, alphabet, seed_factor * vocab_size)
    rnd = 0
    while True:
        for it in range(em_rounds):
            logp, ll = em_step(logp, word_counts)
            if trace is not None:
                trace.append((rnd, it, ll, dict(logp)))
        if len(logp) <= target:
            break
        loss = _viterbi_loss(logp, word_counts)
        keep_n = max(target, int(len(logp) * prune_keep))
        keep_multi = max(0, keep_n - len(alphabet))
        ranked = sorted(loss, key=lambda p: (-loss[p], p))[:keep_multi]
        logp = _normalize({p: logp[p] for p in list(alphabet) + ranked})
        rnd += 1
    return UnigramModel(_normalize(logp), vocab_size, marker)


# ---------------------------------------------------------------------------
# dispatch and serialization
# ---------------------------------------------------------------------------


def train_subword(kind: str, stream: Iterable[str], vocab_size: int, **kwargs) -> SubwordModel:
    if kind == "bpe":
        return train_bpe(stream, vocab_size, **kwargs)
    if kind == "unigram":
        return train_unigram(stream, vocab_size, **kwargs)
    raise ValueError(f"unknown subword model type {kind!r}")


def save_model(model: SubwordModel, path: Path | str) -> None:
    lines = [f"subword-model {FORMAT_VERSION} {model.kind} {model.vocab_size}"]
    lines.append(f"marker\t{model.marker or ''}")
    if isinstance(model, BpeModel):
        lines.append("alphabet\t" + "".join(sorted(model.alphabet)))
        lines.extend(f"{r}\t{a}\t{b}" for r, (a, b) in enumerate(model.merges))
    elif isinstance(model, UnigramModel):
        lines.extend(f"{p}\t{model.pieces[p]:.17g}" for p in model.pieces_list()[len(SPECIALS) :])
    else:
        raise TypeError(f"cannot save {type(model).__name__}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path: Path | str) -> SubwordModel:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ModelFormatError(f"{path}: empty file")
    head = lines[0].split(" ")
    if len(head) != 4 or head[0] != "subword-model":
        raise ModelFormatError(f"{path}:1: bad header {lines[0]!r}")
    _, version, kind, size = head
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}:1: unsupported version {version!r} (expected {FORMAT_VERSION})")
    if kind not in ("bpe", "unigram"):
        raise ModelFormatError(f"{path}:1: unknown model type {kind!r}")
    try:
        vocab_size = int(size)
    except ValueError:
        raise ModelFormatError(f"{path}:1: bad vocab size {size!r}") from None

    def field_line(lineno: int, name: str) -> str:
        if lineno > len(lines):
            raise ModelFormatError(f"{path}:{lineno}: missing {name} line")
        key, sep, value = lines[lineno - 1].partition("\t")
        if key != name or not sep:
            raise ModelFormatError(f"{path}:{lineno}: expected {name!r} line, got {lines[lineno - 1]!r}")
        return value

    marker = field_line(2, "marker") or None
    if kind == "bpe":
        alphabet = frozenset(field_line(3, "alphabet"))
        merges = []
        for lineno, line in enumerate(lines[3:], start=4):
            parts = line.split("\t")
            if len(parts) != 3 or not parts[0].isdigit() or int(parts[0]) != len(merges) or not parts[1] or not parts[2]:
                raise ModelFormatError(f"{path}:{lineno}: malformed merge line {line!r}")
            merges.append((parts[1], parts[2]))
        return BpeModel(merges, alphabet, vocab_size, marker)

    pieces = {}
    for lineno, line in enumerate(lines[2:], start=3):
        parts = line.split("\t")
        try:
            if len(parts) != 2 or not parts[0]:
                raise ValueError
            pieces[parts[0]] = float(parts[1])
        except ValueError:
            raise ModelFormatError(f"{path}:{lineno}: malformed piece line {line!r}") from None
    if not pieces:
        raise ModelFormatError(f"{path}: unigram model has no pieces")
    return UnigramModel(pieces, vocab_size, marker)
