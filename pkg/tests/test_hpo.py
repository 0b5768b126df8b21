import math
import random
import threading
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowres_mt.hpo import (
    LOG_COLUMNS,
    STANDARD_BEST,
    SearchAborted,
    SearchSpace,
    StageFailedError,
    StagePlan,
    locked_from_log,
    read_trial_log,
    run_stage,
    sample_config,
    staged_search,
)
from lowres_mt.model.config import TransformerConfig
from lowres_mt.model.training import DivergenceError
from lowres_mt.synthetic import SeparableSurrogate

FULL = SearchSpace.standard()


def test_standard_space_order_and_best_inside():
    assert FULL.names == [
        "learning_rate_scale", "batch_tokens", "heads", "layers", "ff_dim",
        "embed_dim", "label_smoothing", "dropout", "attention_dropout", "average_decay",
    ]
    for name, value in STANDARD_BEST.items():
        assert value in FULL.domain(name)


def test_space_validation(tmp_path):
    with pytest.raises(ValueError):
        SearchSpace((("a", (1,)), ("a", (2,))))
    with pytest.raises(ValueError):
        SearchSpace((("a", ()),))
    path = tmp_path / "space.json"
    path.write_text('[["dropout", [0.1, 0.3]], ["heads", [2, 4]]]')
    assert SearchSpace.from_json(path).names == ["dropout", "heads"]


# -- sampling ----------------------------------------------------------------


def test_sample_all_locked():
    cfg = sample_config(FULL, STANDARD_BEST, random.Random(0))
    assert isinstance(cfg, TransformerConfig)
    assert {k: getattr(cfg, k) for k in STANDARD_BEST} == STANDARD_BEST


def test_sample_seeded():
    a = sample_config(FULL, {}, random.Random(4))
    b = sample_config(FULL, {}, random.Random(4))
    assert a == b


def test_sample_uniform_heads():
    rng = random.Random(0)
    counts = Counter(sample_config(FULL, {}, rng).heads for _ in range(10_000))
    for h in (2, 4, 8):
        assert abs(counts[h] / 10_000 - 1 / 3) < 0.02


def test_sample_rejects_unknown_lock():
    with pytest.raises(KeyError):
        sample_config(FULL, {"width": 3}, random.Random(0))


# -- stages ------------------------------------------------------------------

SPACE = SearchSpace((("dropout", (0.1, 0.3)), ("heads", (2, 4, 8))))


def scorer(fn):
    """Trainer/evaluator pair whose dev BLEU is ``fn(config)``."""
    return (lambda cfg, budget: (cfg, budget)), (lambda run: {"dev_bleu": fn(run[0])})


def test_stage_locks_argmax():
    trainer, evaluator = scorer(lambda c: 10 + 5 * c.dropout)
    plan = StagePlan("dropout", (0.1, 0.3), {}, {"dropout": 0.1, "heads": 2})
    value, trials = run_stage(plan, trainer, evaluator, budget_steps=100)
    assert value == 0.3
    assert [t.value for t in trials] == [0.1, 0.3]


def test_single_candidate_still_runs():
    calls = []
    trainer, evaluator = scorer(lambda c: calls.append(c) or 1.0)
    value, trials = run_stage(StagePlan("ff_dim", (2048,), {}, {"ff_dim": 2048}), trainer, evaluator)
    assert value == 2048 and len(trials) == 1 and len(calls) == 1


def test_tie_goes_to_default_then_smaller():
    trainer, evaluator = scorer(lambda c: 1.0)
    plan = StagePlan("heads", (2, 4, 8), {}, {"heads": 4, "dropout": 0.1})
    assert run_stage(plan, trainer, evaluator)[0] == 4
    plan = StagePlan("heads", (8, 4), {}, {"heads": 2, "dropout": 0.1})
    assert run_stage(plan, trainer, evaluator)[0] == 4


def test_diverged_trial_is_excluded():
    def trainer(cfg, budget):
        if cfg.heads == 8:
            raise DivergenceError(17, float("nan"))
        return cfg

    plan = StagePlan("heads", (2, 4, 8), {}, {"heads": 2, "dropout": 0.1})
    value, trials = run_stage(plan, trainer, lambda c: {"dev_bleu": c.heads})
    assert value == 4
    failed = [t for t in trials if t.failed]
    assert len(failed) == 1 and failed[0].score == -math.inf and failed[0].result.steps == 17


def test_stage_fails_when_every_trial_fails():
    def trainer(cfg, budget):
        raise DivergenceError(1, float("inf"))

    with pytest.raises(StageFailedError):
        run_stage(StagePlan("heads", (2, 4), {}, {"heads": 2}), trainer, lambda r: {})


def test_budget_is_enforced():
    class Overrun:
        step = 101

    with pytest.raises(RuntimeError):
        run_stage(StagePlan("heads", (2,), {}, {"heads": 2}), lambda c, b: Overrun(), lambda r: {"dev_bleu": 0}, 100)


# -- whole search ------------------------------------------------------------


def test_search_recovers_separable_argmax():
    sur = SeparableSurrogate(FULL, STANDARD_BEST)
    result = staged_search(FULL, sur.trainer, sur.evaluator, seed=11)
    assert result.best == STANDARD_BEST
    assert len(result.trials) == sum(len(d) for _, d in FULL.params)
    assert {k: getattr(result.config, k) for k in STANDARD_BEST} == STANDARD_BEST


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), data=st.data())
def test_lock_in_and_budget(seed, data):
    target = {n: data.draw(st.sampled_from(d)) for n, d in FULL.params}
    sur = SeparableSurrogate(FULL, target)
    seen_steps = []

    def trainer(cfg, budget):
        run = sur.trainer(cfg, budget)
        seen_steps.append(run.step)
        return run

    result = staged_search(FULL, trainer, sur.evaluator, seed=seed, budget_steps=123)
    assert result.best == target
    assert max(seen_steps) <= 123
    locked = {}
    for t in result.trials:
        for name, value in locked.items():
            assert getattr(t.config, name) == value
        if t is [x for x in result.trials if x.stage_name == t.stage_name][-1]:
            locked[t.param] = result.best[t.param]


def test_single_parameter_space_equals_run_stage():
    space = SearchSpace((("dropout", (0.1, 0.3)),))
    trainer, evaluator = scorer(lambda c: c["dropout"] if isinstance(c, dict) else c.dropout)
    result = staged_search(space, trainer, evaluator, seed=0)
    value, _ = run_stage(StagePlan("dropout", (0.1, 0.3), {}, {"dropout": 0.1}), trainer, evaluator)
    assert result.best == {"dropout": value}


def test_search_is_reproducible_and_parallel_safe():
    sur = SeparableSurrogate(FULL, STANDARD_BEST, noise=0.3, noise_seed=2)
    runs = [staged_search(FULL, sur.trainer, sur.evaluator, seed=5, jobs=j, max_candidates=2) for j in (1, 1, 4)]
    logs = [[(t.trial_id, t.param, t.value, t.score) for t in r.trials] for r in runs]
    assert logs[0] == logs[1] == logs[2]
    assert all(len([t for t in runs[0].trials if t.param == n]) <= 2 for n in FULL.names)


def test_jobs_run_trials_concurrently():
    barrier = threading.Barrier(3, timeout=10)

    def trainer(cfg, budget):
        barrier.wait()
        return cfg

    value, _ = run_stage(
        StagePlan("heads", (2, 4, 8), {}, {"heads": 2}), trainer, lambda c: {"dev_bleu": c.heads}, jobs=3
    )
    assert value == 8


def test_noisy_search_usually_recovers():
    hits = 0
    for seed in range(20):
        sur = SeparableSurrogate(FULL, STANDARD_BEST, noise=0.1, noise_seed=seed)
        hits += staged_search(FULL, sur.trainer, sur.evaluator, seed=seed).best == STANDARD_BEST
    assert hits >= 19


# -- trial log and resume ----------------------------------------------------


def test_trial_log_and_resume(tmp_path):
    log = tmp_path / "trials.tsv"
    sur = SeparableSurrogate(FULL, STANDARD_BEST)
    calls = []

    def flaky(cfg, budget):
        calls.append(cfg)
        if len(calls) == 12:
            raise KeyboardInterrupt  # simulated crash at the first trial of the layers stage
        return sur.trainer(cfg, budget)

    with pytest.raises(KeyboardInterrupt):
        staged_search(FULL, flaky, sur.evaluator, seed=3, log_path=log)
    lines = log.read_text().splitlines()
    assert lines[0].split("\t") == list(LOG_COLUMNS)
    assert len(lines) - 1 == 4 + 4 + 3  # the three finished stages
    partial = locked_from_log(log, FULL, seed=3)
    assert partial == {n: STANDARD_BEST[n] for n in FULL.names[:3]}

    calls.clear()
    result = staged_search(FULL, sur.trainer, sur.evaluator, seed=3, log_path=log)
    assert result.best == STANDARD_BEST
    assert len(read_trial_log(log)) == sum(len(d) for _, d in FULL.params)
    assert locked_from_log(log, FULL, seed=3) == STANDARD_BEST


def test_aborted_search_keeps_partial_log(tmp_path):
    log = tmp_path / "trials.tsv"

    def trainer(cfg, budget):
        if len(log.read_text().splitlines()) > 5:
            raise DivergenceError(3, float("nan"))
        return cfg

    with pytest.raises(SearchAborted) as err:
        staged_search(FULL, trainer, lambda c: {"dev_bleu": 1.0}, seed=0, log_path=log)
    assert isinstance(err.value.__cause__, StageFailedError)
    assert err.value.locked and len(err.value.trials) >= 5
    assert len(read_trial_log(log)) == len(err.value.trials)
