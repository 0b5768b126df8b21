"""Low-resource neural machine translation toolkit.

Modules: ``corpus`` (parallel data and splits), ``subword`` (BPE and unigram
segmentation), ``metrics`` (BLEU, TER, chrF), ``model`` (numpy Transformer),
``hpo`` (staged random search), ``report`` (result tables, curves, CO2) and
``cli`` (the ``lowres-mt`` command).
"""

from .corpus import ParallelCorpus, SplitSpec, load_parallel_corpus, split_corpus
from .hpo import SearchSpace, staged_search
from .metrics import corpus_bleu, corpus_chrf, corpus_ter, score_all
from .model import EarlyStopPolicy, TransformerConfig, train, translate
from .report import EnergyParams, ReportRow, compute_co2
from .subword import BpeModel, UnigramModel, load_model, save_model, train_bpe, train_unigram

__version__ = "0.1.0"

__all__ = [
    "BpeModel",
    "EarlyStopPolicy",
    "EnergyParams",
    "ParallelCorpus",
    "ReportRow",
    "SearchSpace",
    "SplitSpec",
    "TransformerConfig",
    "UnigramModel",
    "compute_co2",
    "corpus_bleu",
    "corpus_chrf",
    "corpus_ter",
    "load_model",
    "load_parallel_corpus",
    "save_model",
    "score_all",
    "split_corpus",
    "staged_search",
    "train",
    "train_bpe",
    "train_unigram",
    "translate",
]
