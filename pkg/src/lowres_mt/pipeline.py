"""Glue between corpus, subword model, trainer and metrics."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

from .corpus import ParallelCorpus, read_lines
from .metrics import corpus_bleu, score_all
from .model.config import EarlyStopPolicy, TransformerConfig
from .model.training import TrainState, eval_batches, filter_pairs, train, translate, validate
from .subword import SubwordModel


def encode_corpus(model: SubwordModel, corpus: ParallelCorpus) -> list[tuple[list[int], list[int]]]:
    return [(model.encode_ids(p.source), model.encode_ids(p.target)) for p in corpus.pairs]


def fit_config(config: TransformerConfig, model: SubwordModel) -> TransformerConfig:
    """Size the embedding table to the subword vocabulary actually produced."""
    return config if config.vocab_size == len(model) else config.replace(vocab_size=len(model))


def translate_lines(
    state: TrainState, config: TransformerConfig, model: SubwordModel, lines: Sequence[str], beam: int = 1
) -> list[str]:
    ids = [model.encode_ids(line) for line in lines]
    out = translate(state, config, ids, beam=beam)
    return [model.decode_ids(seq) for seq in out]


def write_lines(path: Path | str, lines: Sequence[str]) -> None:
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def write_corpus(corpus: ParallelCorpus, prefix: Path | str) -> tuple[Path, Path]:
    src, tgt = Path(f"{prefix}.src"), Path(f"{prefix}.tgt")
    write_lines(src, corpus.sources)
    write_lines(tgt, corpus.targets)
    return src, tgt


class HpoObjective:
    """Trainer/evaluator pair for the staged search on a real corpus.

    Each trial trains from scratch for its step budget and is scored by dev
    BLEU after greedy decoding, plus teacher-forced dev accuracy and perplexity.
    """

    def __init__(self, model: SubwordModel, train_corpus: ParallelCorpus, dev_corpus: ParallelCorpus, max_len: int = 128):
        self.model = model
        self.max_len = max_len
        self.train_pairs = encode_corpus(model, train_corpus)
        self.dev_sources = dev_corpus.sources
        self.dev_targets = dev_corpus.targets
        self.dev_pairs = encode_corpus(model, dev_corpus)

    def trainer(self, config: TransformerConfig, budget_steps: int) -> TrainState:
        config = fit_config(config.replace(max_len=self.max_len), self.model)
        # validation inside the run is not needed: scoring happens at the budget
        return train(self.train_pairs, config, EarlyStopPolicy(validation_interval=budget_steps + 1), max_steps=budget_steps)

    def evaluator(self, state: TrainState) -> dict:
        config = state.config
        hyps = translate_lines(state, config, self.model, self.dev_sources)
        res = validate(state.eval_params, config, eval_batches(filter_pairs(self.dev_pairs, config.max_len), config.batch_tokens))
        return {"dev_bleu": corpus_bleu(hyps, self.dev_targets), "dev_accuracy": res.accuracy, "dev_ppl": res.ppl}


def score_files(hyp_path: Path | str, ref_path: Path | str) -> dict[str, float]:
    hyps, refs = read_lines(hyp_path), read_lines(ref_path)
    return score_all(hyps, refs)
