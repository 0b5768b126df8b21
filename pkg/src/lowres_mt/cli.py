"""Command-line entry point: ``lowres-mt <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import corpus as corpus_mod
from .corpus import CorpusError, SplitSpec, load_parallel_corpus, read_lines, shared_text_stream, split_corpus
from .hpo import DEFAULT_BUDGET, SearchAborted, SearchSpace, StageFailedError, staged_search
from .metrics import MetricInputError, score_all
from .model.config import ConfigError, TransformerConfig
from .model.training import CheckpointError, DivergenceError, load_checkpoint, read_history, save_checkpoint, train
from .pipeline import HpoObjective, encode_corpus, fit_config, translate_lines, write_corpus, write_lines
from .report import EnergyParams, ReportInputError, ReportRow, emit_curves, emit_table, parse_table
from .runconfig import load_run_config
from .subword import ModelFormatError, VocabSizeError, decode, load_model, save_model, train_subword

log = logging.getLogger("lowres_mt")

EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 1, 2, 3
DATA_ERRORS = (
    CorpusError,
    MetricInputError,
    VocabSizeError,
    ModelFormatError,
    ConfigError,
    CheckpointError,
    ReportInputError,
    FileNotFoundError,
    ValueError,
)


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    # None means "fall back to the config file", which the help text already says
    def _get_help_string(self, action):
        if action.default is None:
            return action.help
        return super()._get_help_string(action)


def _formatter(prog):
    return _Formatter(prog, max_help_position=36)


MODEL_FIELDS = [f for f in dataclasses.fields(TransformerConfig)]


def _add_model_flags(p: argparse.ArgumentParser, skip: tuple[str, ...] = ()) -> None:
    g = p.add_argument_group("model overrides (win over the config file)")
    defaults = TransformerConfig()
    for f in MODEL_FIELDS:
        if f.name in skip:
            continue
        default = getattr(defaults, f.name)
        g.add_argument(
            "--" + f.name.replace("_", "-"),
            dest="model_" + f.name,
            type=type(default),
            default=None,
            help=f"config default: {default}",
        )


def _model_overrides(args) -> dict:
    out = {}
    for f in MODEL_FIELDS:
        v = getattr(args, "model_" + f.name, None)
        if v is not None:
            out[f.name] = v
    return out


def _load_config(args, extra: dict | None = None):
    overrides = {"model": _model_overrides(args)}
    for section, values in (extra or {}).items():
        overrides.setdefault(section, {}).update({k: v for k, v in values.items() if v is not None})
    return load_run_config(getattr(args, "config", None), overrides)


def _need(value, flag: str):
    if value is None:
        raise UsageError(f"{flag} is required (on the command line or in the config file)")
    return value


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train_subword(args) -> int:
    cfg = _load_config(
        args,
        {"subword": {"type": args.type, "vocab_size": args.vocab}, "paths": {"subword_model": args.out}},
    )
    sources = args.inputs or [p for p in (cfg.paths.source, cfg.paths.target) if p]
    if not sources:
        raise UsageError("--in is required (or paths.source/paths.target in the config file)")
    out = Path(_need(cfg.paths.subword_model, "--out"))
    out.parent.mkdir(parents=True, exist_ok=True)
    if len(sources) == 2:
        corpus = load_parallel_corpus(sources[0], sources[1])
        stream = list(shared_text_stream(corpus))
    else:
        stream = [line for path in sources for line in read_lines(path)]
    kwargs = {}
    if cfg.subword.type == "unigram":
        kwargs = {"em_rounds": cfg.subword.em_rounds, "prune_keep": cfg.subword.prune_keep}
    model = train_subword(cfg.subword.type, stream, cfg.subword.vocab_size, **kwargs)
    save_model(model, out)
    print(f"wrote {cfg.subword.type} model with {len(model)} pieces to {out}")
    return 0


def _input_lines(path):
    return read_lines(path) if path and path != "-" else sys.stdin.read().splitlines()


def _output(path, lines):
    if path and path != "-":
        write_lines(path, lines)
    else:
        sys.stdout.write("".join(line + "\n" for line in lines))


def cmd_encode(args) -> int:
    model = load_model(args.model)
    lines = _input_lines(args.input)
    if args.ids:
        out = [" ".join(map(str, model.encode_ids(line))) for line in lines]
    else:
        out = [" ".join(model.encode(line)) for line in lines]
    _output(args.output, out)
    return 0


def cmd_decode(args) -> int:
    lines = _input_lines(args.input)
    if args.model:
        model = load_model(args.model)
        if args.ids:
            out = [model.decode_ids([int(t) for t in line.split()]) for line in lines]
        else:
            out = [model.decode(line.split()) for line in lines]
    else:
        if args.ids:
            raise UsageError("--ids needs --model")
        out = [decode(line.split()) for line in lines]
    _output(args.output, out)
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(
        args,
        {
            "paths": {
                "source": args.src,
                "target": args.tgt,
                "dev_source": args.dev_src,
                "dev_target": args.dev_tgt,
                "subword_model": args.subword,
                "checkpoint": args.out,
                "history": args.history,
                "workdir": args.workdir,
            },
            "train": {"max_steps": args.max_steps},
            "split": {"test_lines": args.test_lines, "dev_lines": args.dev_lines, "seed": args.split_seed},
            "early_stop": {
                "metric": args.early_stop_metric,
                "patience": args.patience,
                "validation_interval": args.valid_steps,
            },
        },
    )
    paths = cfg.paths
    model = load_model(_need(paths.subword_model, "--subword"))
    ckpt = Path(_need(paths.checkpoint, "--out"))
    workdir = Path(paths.workdir) if paths.workdir else ckpt.parent
    workdir.mkdir(parents=True, exist_ok=True)
    corpus = load_parallel_corpus(_need(paths.source, "--src"), _need(paths.target, "--tgt"), "train")
    if paths.dev_source or paths.dev_target:
        dev = load_parallel_corpus(_need(paths.dev_source, "--dev-src"), _need(paths.dev_target, "--dev-tgt"), "dev")
        train_corpus = corpus
    else:
        parts = split_corpus(corpus, cfg.split)
        train_corpus, dev = parts["train"], parts["dev"]
        for name, part in parts.items():
            write_corpus(part, workdir / name)
    config = fit_config(cfg.model, model)
    history = paths.history or str(ckpt.with_suffix(".history.tsv"))
    state = None
    if args.resume and ckpt.exists():
        state = load_checkpoint(ckpt)
        config = state.config
    else:
        Path(history).write_text("", encoding="utf-8")
    state = train(
        encode_corpus(model, train_corpus),
        config,
        cfg.early_stop,
        encode_corpus(model, dev) if len(dev) else (),
        max_steps=cfg.train.max_steps,
        state=state,
        history_path=history,
    )
    save_checkpoint(state, ckpt)
    reason = "early stop" if state.stopped_early else "step limit"
    print(f"trained {state.step} steps ({reason}) in {state.runtime_hours:.3f} h; checkpoint {ckpt}")
    return 0


def cmd_translate(args) -> int:
    cfg = _load_config(
        args, {"paths": {"checkpoint": args.checkpoint, "subword_model": args.subword}, "train": {"beam": args.beam}}
    )
    state = load_checkpoint(_need(cfg.paths.checkpoint, "--checkpoint"))
    model = load_model(_need(cfg.paths.subword_model, "--subword"))
    lines = _input_lines(args.input)
    _output(args.output, translate_lines(state, state.config, model, lines, beam=cfg.train.beam))
    return 0


def cmd_score(args) -> int:
    scores = score_all(read_lines(args.hyp), read_lines(args.ref))
    print(f"{scores['bleu']:.4f}\t{scores['ter']:.4f}\t{scores['chrf3']:.4f}")
    return 0


def cmd_hpo(args) -> int:
    cfg = _load_config(
        args,
        {
            "paths": {
                "source": args.src,
                "target": args.tgt,
                "dev_source": args.dev_src,
                "dev_target": args.dev_tgt,
                "subword_model": args.subword,
            },
            "split": {"test_lines": args.test_lines, "dev_lines": args.dev_lines, "seed": args.split_seed},
        },
    )
    space = SearchSpace.standard() if args.space == "standard" else SearchSpace.from_json(args.space)
    paths = cfg.paths
    model = load_model(_need(paths.subword_model, "--subword"))
    corpus = load_parallel_corpus(_need(paths.source, "--src"), _need(paths.target, "--tgt"))
    if paths.dev_source or paths.dev_target:
        train_corpus = corpus
        dev = load_parallel_corpus(_need(paths.dev_source, "--dev-src"), _need(paths.dev_target, "--dev-tgt"))
    else:
        parts = split_corpus(corpus, cfg.split)
        train_corpus, dev = parts["train"], parts["dev"]
    objective = HpoObjective(model, train_corpus, dev, max_len=cfg.model.max_len)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "trials.tsv"
    if log_path.exists() and not args.resume:
        log_path.unlink()
    try:
        result = staged_search(
            space,
            objective.trainer,
            objective.evaluator,
            seed=args.seed,
            budget_steps=args.budget,
            base=cfg.model,
            max_candidates=args.max_candidates,
            jobs=args.jobs,
            log_path=log_path,
        )
    except SearchAborted as exc:
        log.error("%s (partial log kept in %s)", exc, log_path)
        if isinstance(exc.__cause__, StageFailedError):
            return EXIT_DIVERGED
        raise exc.__cause__ from None
    locked_path = out_dir / "locked.json"
    locked_path.write_text(json.dumps(result.best, indent=2) + "\n", encoding="utf-8")
    print(f"{len(result.trials)} trials; locked config written to {locked_path}")
    for k, v in result.best.items():
        print(f"{k}\t{v}")
    return 0


def cmd_report(args) -> int:
    cfg = _load_config(args, {"energy": {"device_power_kw": args.power_kw, "grid_intensity_g_per_kwh": args.intensity}})
    state = load_checkpoint(args.checkpoint)
    scores = score_all(read_lines(args.hyp), read_lines(args.ref))
    row = ReportRow.build(
        args.label, scores["bleu"], scores["ter"], scores["chrf3"], state.step, state.runtime_hours, cfg.energy
    )
    rows = [row]
    if args.append and args.out and Path(args.out).exists():
        rows = parse_table(Path(args.out).read_text(encoding="utf-8")) + rows
    table = emit_table(rows, args.format)
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    history = read_history(args.history) if args.history else state.history
    if args.curves:
        if not history:
            raise ReportInputError("no validation history to export")
        Path(args.curves).write_text(emit_curves(history), encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_split_flags(p):
    g = p.add_argument_group("held-out split (used when no dev files are given)")
    g.add_argument("--test-lines", type=int, default=None, help="test pairs to hold out (config default: 1300)")
    g.add_argument("--dev-lines", type=int, default=None, help="dev pairs to hold out (config default: 2600)")
    g.add_argument("--split-seed", type=int, default=None, help="shuffle seed for the split (config default: 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = Parser(prog="lowres-mt", description=__doc__, formatter_class=_formatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=Parser)
    sub.required = True

    p = sub.add_parser("train-subword", help="train a shared BPE or unigram model", formatter_class=_formatter)
    p.add_argument("--config", help="YAML run config")
    p.add_argument("--type", choices=["bpe", "unigram"], default=None, help="model type (config default: bpe)")
    p.add_argument("--vocab", type=int, default=None, help="vocabulary size (config default: 16000)")
    p.add_argument("--in", dest="inputs", nargs="+", metavar="FILE", help="source and target files, or any text files (config: paths.source, paths.target)")
    p.add_argument("--out", help="model file to write (config: paths.subword_model)")
    p.set_defaults(func=cmd_train_subword)

    p = sub.add_parser("encode", help="segment text into pieces", formatter_class=_formatter)
    p.add_argument("--model", required=True, help="subword model file")
    p.add_argument("--in", dest="input", default="-", help="input text (- for stdin)")
    p.add_argument("--out", dest="output", default="-", help="output (- for stdout)")
    p.add_argument("--ids", action="store_true", help="print vocabulary ids instead of pieces")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="join pieces back into text", formatter_class=_formatter)
    p.add_argument("--model", default=None, help="subword model file (needed for --ids)")
    p.add_argument("--in", dest="input", default="-", help="input pieces (- for stdin)")
    p.add_argument("--out", dest="output", default="-", help="output (- for stdout)")
    p.add_argument("--ids", action="store_true", help="input holds vocabulary ids")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("train", help="train a Transformer", formatter_class=_formatter)
    p.add_argument("--config", help="YAML run config")
    p.add_argument("--src", help="source training file")
    p.add_argument("--tgt", help="target training file")
    p.add_argument("--dev-src", help="source dev file (otherwise split from --src)")
    p.add_argument("--dev-tgt", help="target dev file")
    p.add_argument("--subword", help="subword model file")
    p.add_argument("--out", help="checkpoint to write")
    p.add_argument("--history", help="history TSV (default: <checkpoint>.history.tsv)")
    p.add_argument("--workdir", help="where split files go (default: checkpoint directory)")
    p.add_argument("--max-steps", type=int, default=None, help="step limit (config default: 200000)")
    p.add_argument("--valid-steps", type=int, default=None, help="validation interval (config default: 500)")
    p.add_argument("--patience", type=int, default=None, help="early-stop patience (config default: 4)")
    p.add_argument("--early-stop-metric", choices=["val_accuracy", "val_ppl"], default=None, help="config default: val_accuracy")
    p.add_argument("--resume", action="store_true", help="continue from --out if it exists")
    _add_split_flags(p)
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="translate with a trained checkpoint", formatter_class=_formatter)
    p.add_argument("--config", help="YAML run config")
    p.add_argument("--checkpoint", help="trained checkpoint (config: paths.checkpoint)")
    p.add_argument("--subword", help="subword model file (config: paths.subword_model)")
    p.add_argument("--in", dest="input", default="-", help="source text (- for stdin)")
    p.add_argument("--out", dest="output", default="-", help="output (- for stdout)")
    p.add_argument("--beam", type=int, default=None, help="beam size, 1 = greedy (config default: 1)")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("score", help="BLEU, TER and ChrF3 of a hypothesis file", formatter_class=_formatter)
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("hpo", help="staged random search over the hyperparameter space", formatter_class=_formatter)
    p.add_argument("--config", help="YAML run config")
    p.add_argument("--space", default="standard", help="'standard' or a JSON file of [name, [values]] pairs")
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET, help="training steps per trial")
    p.add_argument("--seed", type=int, default=0, help="search seed (also seeds every trial's model)")
    p.add_argument("--jobs", type=int, default=1, help="trials run concurrently within a stage")
    p.add_argument("--max-candidates", type=int, default=None, help="sample at most this many values per stage (default: all)")
    p.add_argument("--src", help="source training file (config: paths.source)")
    p.add_argument("--tgt", help="target training file (config: paths.target)")
    p.add_argument("--dev-src", help="source dev file used to score trials (otherwise split from --src)")
    p.add_argument("--dev-tgt", help="target dev file")
    p.add_argument("--subword", help="subword model file")
    p.add_argument("--out-dir", default="hpo", help="where trials.tsv and locked.json go")
    p.add_argument("--resume", action="store_true", help="reuse finished trials from an existing trials.tsv")
    _add_split_flags(p)
    _add_model_flags(p, skip=("seed",))
    p.set_defaults(func=cmd_hpo)

    p = sub.add_parser("report", help="emit a results row and training curves", formatter_class=_formatter)
    p.add_argument("--config", help="YAML run config (energy section)")
    p.add_argument("--checkpoint", required=True, help="supplies steps, runtime and history")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--label", required=True, help="architecture label for the row")
    p.add_argument("--format", choices=["tsv", "markdown"], default="tsv", help="table layout")
    p.add_argument("--out", help="table file to write")
    p.add_argument("--append", action="store_true", help="add the row to an existing --out table")
    p.add_argument("--history", help="history TSV (default: the checkpoint's own history)")
    p.add_argument("--curves", help="CSV file for step,val_accuracy,val_ppl")
    p.add_argument("--power-kw", type=float, default=None, help=f"device power (config default: {EnergyParams().device_power_kw})")
    p.add_argument("--intensity", type=float, default=None, help=f"grid gCO2/kWh (config default: {EnergyParams().grid_intensity_g_per_kwh})")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"lowres-mt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"lowres-mt: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except DATA_ERRORS as exc:
        print(f"lowres-mt: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
