import argparse
import json

import numpy as np
import pytest

from lowres_mt import cli
from lowres_mt.model.training import DivergenceError, load_checkpoint
from lowres_mt.report import COLUMNS, parse_table
from lowres_mt.synthetic import write_corpus

SUBCOMMANDS = ["train-subword", "encode", "decode", "train", "translate", "score", "hpo", "report"]
TINY_MODEL = ["--layers", "1", "--heads", "2", "--embed-dim", "16", "--ff-dim", "32", "--warmup-steps", "20",
              "--batch-tokens", "256", "--max-len", "40", "--dropout", "0.1", "--average-decay", "0.01"]


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("toy")
    src, tgt = write_corpus(d, n_pairs=240, seed=1)
    return d, src, tgt


@pytest.fixture(scope="module")
def bpe(corpus):
    d, src, tgt = corpus
    assert cli.main(["train-subword", "--type", "bpe", "--vocab", "120", "--in", str(src), str(tgt), "--out", str(d / "bpe.model")]) == 0
    return d / "bpe.model"


@pytest.fixture(scope="module")
def trained(corpus, bpe):
    d, src, tgt = corpus
    argv = ["train", "--src", src, "--tgt", tgt, "--subword", bpe, "--out", d / "model.npz", "--max-steps", "30",
            "--valid-steps", "10", "--test-lines", "20", "--dev-lines", "20", "--seed", "4", *TINY_MODEL]
    assert cli.main([str(a) for a in argv]) == 0
    return d / "model.npz"


# -- parser ------------------------------------------------------------------


def _subparsers(parser):
    action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return action.choices


def test_every_subcommand_has_help(capsys):
    assert sorted(_subparsers(cli.build_parser())) == sorted(SUBCOMMANDS)
    for name in SUBCOMMANDS:
        with pytest.raises(SystemExit) as exit_info:
            cli.main([name, "--help"])
        assert exit_info.value.code == 0
        text = capsys.readouterr().out
        sub = _subparsers(cli.build_parser())[name]
        for action in sub._actions:
            for flag in action.option_strings:
                assert flag in text, (name, flag)
            if action.option_strings and action.default not in (None, False, argparse.SUPPRESS):
                assert "(default:" in (sub.formatter_class(name)._get_help_string(action) or ""), (name, action.dest)


def test_model_flags_cover_every_config_field(capsys):
    with pytest.raises(SystemExit):
        cli.main(["train", "--help"])
    text = capsys.readouterr().out
    for field in cli.MODEL_FIELDS:
        assert "--" + field.name.replace("_", "-") in text
        assert "config default:" in text


@pytest.mark.parametrize("argv", [["bogus"], ["score", "--nope"], [], ["score"]])
def test_usage_errors_exit_1(argv, capsys):
    with pytest.raises(SystemExit) as exit_info:
        cli.main(argv)
    assert exit_info.value.code == 1


# -- score -------------------------------------------------------------------


def test_score_prints_one_line(tmp_path, capsys):
    (tmp_path / "h").write_text("a b c d e f\n")
    (tmp_path / "r").write_text("a b c d e f g\n")
    code, out, _ = run(["score", "--hyp", tmp_path / "h", "--ref", tmp_path / "r"], capsys)
    assert code == 0
    assert out.count("\t") == 2 and out.startswith("84.6482\t")
    assert all(len(x.split(".")[1]) == 4 for x in out.split())


def test_data_errors_exit_2(tmp_path, capsys):
    (tmp_path / "h").write_text("a\nb\n")
    (tmp_path / "r").write_text("a\n")
    assert run(["score", "--hyp", tmp_path / "h", "--ref", tmp_path / "r"], capsys)[0] == 2
    assert run(["score", "--hyp", tmp_path / "missing", "--ref", tmp_path / "r"], capsys)[0] == 2
    (tmp_path / "bad.model").write_text("nope\n")
    assert run(["encode", "--model", tmp_path / "bad.model", "--in", tmp_path / "h"], capsys)[0] == 2
    (tmp_path / "bad.yaml").write_text("model: {hidden: 3}\n")
    assert run(["train-subword", "--config", tmp_path / "bad.yaml", "--in", tmp_path / "h", "--out", tmp_path / "m"], capsys)[0] == 2


# -- subword round trip ------------------------------------------------------


@pytest.mark.parametrize("kind", ["bpe", "unigram"])
def test_subword_commands_round_trip(corpus, tmp_path, capsys, kind):
    d, src, tgt = corpus
    model = tmp_path / f"{kind}.model"
    code, out, _ = run(["train-subword", "--type", kind, "--vocab", "90", "--in", src, tgt, "--out", model], capsys)
    assert code == 0 and model.exists()
    assert model.read_text(encoding="utf-8").startswith(f"subword-model v1 {kind} 90")
    for ids in ([], ["--ids"]):
        run(["encode", "--model", model, "--in", src, "--out", tmp_path / "enc", *ids], capsys)
        run(["decode", "--model", model, "--in", tmp_path / "enc", "--out", tmp_path / "dec", *ids], capsys)
        assert (tmp_path / "dec").read_text(encoding="utf-8") == src.read_text(encoding="utf-8")


# -- training pipeline -------------------------------------------------------


def test_train_writes_split_history_and_checkpoint(corpus, trained):
    d = corpus[0]
    for part in ("train", "dev", "test"):
        assert (d / f"{part}.src").exists() and (d / f"{part}.tgt").exists()
    assert len((d / "test.src").read_text().splitlines()) == 20
    history = (d / "model.history.tsv").read_text().splitlines()
    assert [line.split("\t")[0] for line in history] == ["10", "20", "30"]
    state = load_checkpoint(trained)
    assert state.step == 30 and state.config.seed == 4


def test_train_is_deterministic_given_seed(corpus, bpe, trained, tmp_path):
    d, src, tgt = corpus
    argv = ["train", "--src", src, "--tgt", tgt, "--subword", bpe, "--out", tmp_path / "again.npz", "--max-steps", "30",
            "--valid-steps", "10", "--test-lines", "20", "--dev-lines", "20", "--seed", "4", "--workdir", tmp_path, *TINY_MODEL]
    assert cli.main([str(a) for a in argv]) == 0
    a, b = load_checkpoint(trained), load_checkpoint(tmp_path / "again.npz")
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_translate_and_report(corpus, bpe, trained, capsys):
    d = corpus[0]
    code, _, _ = run(["translate", "--checkpoint", trained, "--subword", bpe, "--in", d / "test.src", "--out", d / "test.hyp"], capsys)
    assert code == 0
    assert len((d / "test.hyp").read_text().splitlines()) == 20
    code, out, _ = run(["report", "--checkpoint", trained, "--hyp", d / "test.hyp", "--ref", d / "test.tgt",
                        "--label", "tiny", "--out", d / "table.tsv", "--curves", d / "curves.csv"], capsys)
    assert code == 0
    rows = parse_table((d / "table.tsv").read_text())
    assert len(rows) == 1 and rows[0].architecture == "tiny" and rows[0].steps == 30
    assert out.splitlines()[0].split("\t") == list(COLUMNS)
    assert (d / "curves.csv").read_text().splitlines()[-1].startswith("# ppl_min=")
    code, _, _ = run(["report", "--checkpoint", trained, "--hyp", d / "test.hyp", "--ref", d / "test.tgt",
                      "--label", "again", "--out", d / "table.tsv", "--append", "--intensity", "0"], capsys)
    rows = parse_table((d / "table.tsv").read_text())
    assert [r.architecture for r in rows] == ["tiny", "again"] and rows[1].kg_co2 == 0.0


def test_resume_continues_training(corpus, bpe, trained, tmp_path):
    d, src, tgt = corpus
    ck = tmp_path / "r.npz"
    ck.write_bytes(trained.read_bytes())
    argv = ["train", "--src", src, "--tgt", tgt, "--subword", bpe, "--out", ck, "--max-steps", "35", "--resume",
            "--valid-steps", "10", "--test-lines", "20", "--dev-lines", "20", "--workdir", tmp_path, *TINY_MODEL]
    assert cli.main([str(a) for a in argv]) == 0
    assert load_checkpoint(ck).step == 35


def test_divergence_exits_3(corpus, bpe, monkeypatch, tmp_path):
    d, src, tgt = corpus

    def boom(*a, **k):
        raise DivergenceError(7, float("nan"))

    monkeypatch.setattr(cli, "train", boom)
    argv = ["train", "--src", src, "--tgt", tgt, "--subword", bpe, "--out", tmp_path / "m.npz",
            "--test-lines", "20", "--dev-lines", "20", "--workdir", tmp_path, *TINY_MODEL]
    assert cli.main([str(a) for a in argv]) == 3


def test_hpo_command(corpus, bpe, tmp_path, capsys):
    d, src, tgt = corpus
    space = tmp_path / "space.json"
    space.write_text(json.dumps([["dropout", [0.1, 0.3]], ["label_smoothing", [0.1, 0.3]]]))
    logs = []
    for k in range(2):
        out_dir = tmp_path / f"hpo{k}"
        argv = ["hpo", "--space", space, "--budget", "4", "--seed", "42", "--src", src, "--tgt", tgt, "--subword", bpe,
                "--test-lines", "20", "--dev-lines", "20", "--out-dir", out_dir, *TINY_MODEL]
        code, out, _ = run(argv, capsys)
        assert code == 0
        locked = json.loads((out_dir / "locked.json").read_text())
        assert set(locked) == {"dropout", "label_smoothing"}
        lines = (out_dir / "trials.tsv").read_text().splitlines()
        assert len(lines) == 1 + 4
        logs.append([line.split("\t")[:7] for line in lines])  # runtime column differs run to run
    assert logs[0] == logs[1]


def test_hpo_all_trials_diverge_exits_3(corpus, bpe, tmp_path, monkeypatch, capsys):
    d, src, tgt = corpus

    def boom(self, config, budget):
        raise DivergenceError(1, float("nan"))

    monkeypatch.setattr(cli.HpoObjective, "trainer", boom)
    space = tmp_path / "space.json"
    space.write_text(json.dumps({"dropout": [0.1, 0.3]}))
    argv = ["hpo", "--space", space, "--budget", "4", "--src", src, "--tgt", tgt, "--subword", bpe,
            "--test-lines", "20", "--dev-lines", "20", "--out-dir", tmp_path / "h", *TINY_MODEL]
    assert run(argv, capsys)[0] == 3
