"""Parallel corpus loading, splitting and normalization."""

from __future__ import annotations

import random
import re
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence


class CorpusError(ValueError):
    """Base class for problems with input data."""


class AlignmentError(CorpusError):
    def __init__(self, source_count: int, target_count: int, detail: str = ""):
        self.source_count = source_count
        self.target_count = target_count
        msg = f"source has {source_count} lines but target has {target_count}"
        if detail:
            msg = f"{msg}: {detail}"
        super().__init__(msg)


class EncodingError(CorpusError):
    def __init__(self, path: Path | str, line_number: int):
        self.path = str(path)
        self.line_number = line_number
        super().__init__(f"{path}: line {line_number} is not valid UTF-8")


class SplitSizeError(CorpusError):
    pass


@dataclass(frozen=True)
class SentencePair:
    source: str
    target: str
    index: int


@dataclass(frozen=True)
class ParallelCorpus:
    pairs: tuple[SentencePair, ...]
    name: str = ""
    dropped_blank: int = 0

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[SentencePair]:
        return iter(self.pairs)

    @property
    def sources(self) -> list[str]:
        return [p.source for p in self.pairs]

    @property
    def targets(self) -> list[str]:
        return [p.target for p in self.pairs]

    @classmethod
    def from_lines(cls, sources: Sequence[str], targets: Sequence[str], name: str = "") -> "ParallelCorpus":
        """Build a corpus from in-memory line lists, applying the same checks as file loading."""
        if len(sources) != len(targets):
            raise AlignmentError(len(sources), len(targets))
        pairs = []
        dropped = 0
        for lineno, (src, tgt) in enumerate(zip(sources, targets), start=1):
            src, tgt = src.strip(), tgt.strip()
            if not src and not tgt:
                dropped += 1
                continue
            if not src or not tgt:
                side = "source" if not src else "target"
                raise AlignmentError(
                    len(sources), len(targets), f"line {lineno} is blank on the {side} side only"
                )
            pairs.append(SentencePair(src, tgt, len(pairs)))
        return cls(tuple(pairs), name, dropped)


@dataclass(frozen=True)
class SplitSpec:
    test_lines: int
    dev_lines: int
    seed: int = 0


def read_lines(path: Path | str) -> list[str]:
    """Read a UTF-8 file as a list of lines with the line terminators removed.

    Both ``\\n`` and ``\\r\\n`` endings are accepted.
    """
    path = Path(path)
    lines = []
    with open(path, "rb") as fh:
        for lineno, raw in enumerate(fh, start=1):
            try:
                text = raw.decode("utf-8")
            except UnicodeDecodeError:
                raise EncodingError(path, lineno) from None
            lines.append(text.rstrip("\r\n"))
    return lines


def load_parallel_corpus(source_path: Path | str, target_path: Path | str, name: str = "") -> ParallelCorpus:
    sources = read_lines(source_path)
    targets = read_lines(target_path)
    return ParallelCorpus.from_lines(sources, targets, name=name)


def split_corpus(corpus: ParallelCorpus, spec: SplitSpec) -> dict[str, ParallelCorpus]:
    """Shuffle with a seeded RNG, then carve test from the front, dev next, train from the rest.

    Pairs inside each part keep their original corpus order.
    """
    n = len(corpus)
    if spec.test_lines < 0 or spec.dev_lines < 0:
        raise SplitSizeError("split sizes must be non-negative")
    held_out = spec.test_lines + spec.dev_lines
    if held_out and held_out >= n:
        raise SplitSizeError(f"test ({spec.test_lines}) + dev ({spec.dev_lines}) must be smaller than corpus size {n}")

    order = list(range(n))
    random.Random(spec.seed).shuffle(order)
    test_idx = sorted(order[: spec.test_lines])
    dev_idx = sorted(order[spec.test_lines : held_out])
    train_idx = sorted(order[held_out:])

    def take(indices: list[int], suffix: str) -> ParallelCorpus:
        pairs = tuple(corpus.pairs[i] for i in indices)
        return ParallelCorpus(pairs, f"{corpus.name}.{suffix}" if corpus.name else suffix)

    return {"train": take(train_idx, "train"), "dev": take(dev_idx, "dev"), "test": take(test_idx, "test")}


def shared_text_stream(corpus: ParallelCorpus) -> Iterator[str]:
    """All source lines followed by all target lines, for training one shared subword model."""
    for pair in corpus.pairs:
        yield pair.source
    for pair in corpus.pairs:
        yield pair.target


_WS = re.compile(r"\s+")


def normalize_whitespace(line: str) -> str:
    return _WS.sub(" ", line).strip()


def normalize_for_eval(line: str, lowercase: bool = True) -> str:
    """Lowercase (Unicode-aware) and collapse whitespace runs."""
    if lowercase:
        line = line.lower()
    return normalize_whitespace(unicodedata.normalize("NFC", line))
