"""Staged random search with per-parameter lock-in.

Parameters are studied one at a time in search-space order. Each stage trains
one short-budget trial per candidate value while every other free parameter
keeps its current value, locks the value with the best dev BLEU, and moves on.
"""

from __future__ import annotations

import json
import logging
import math
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

from .model.config import TransformerConfig
from .model.training import DivergenceError

log = logging.getLogger(__name__)

# (name, domain) in staging order.
STANDARD_SPACE: tuple[tuple[str, tuple], ...] = (
    ("learning_rate_scale", (0.1, 0.01, 0.001, 2.0)),
    ("batch_tokens", (1024, 2048, 4096, 8192)),
    ("heads", (2, 4, 8)),
    ("layers", (5, 6)),
    ("ff_dim", (2048,)),
    ("embed_dim", (128, 256, 512)),
    ("label_smoothing", (0.1, 0.3)),
    ("dropout", (0.1, 0.3)),
    ("attention_dropout", (0.1,)),
    ("average_decay", (0.0, 0.0001)),
)

# Values reported best on the smaller corpus (the larger one preferred heads=8).
STANDARD_BEST = {
    "learning_rate_scale": 2.0,
    "batch_tokens": 2048,
    "heads": 2,
    "layers": 6,
    "ff_dim": 2048,
    "embed_dim": 256,
    "label_smoothing": 0.1,
    "dropout": 0.3,
    "attention_dropout": 0.1,
    "average_decay": 0.0001,
}

DEFAULT_BUDGET = 5000
LOG_COLUMNS = ("stage", "trial_id", "param", "value", "dev_bleu", "dev_ppl", "steps", "runtime_h")


class StageFailedError(RuntimeError):
    def __init__(self, stage: str, trials: list):
        self.stage = stage
        self.trials = trials
        super().__init__(f"every trial in stage {stage!r} failed")


class SearchAborted(RuntimeError):
    def __init__(self, cause: Exception, trials: list, locked: dict):
        self.trials = trials
        self.locked = locked
        super().__init__(f"search aborted: {cause}")


@dataclass(frozen=True)
class SearchSpace:
    params: tuple[tuple[str, tuple], ...]

    def __post_init__(self):
        names = [n for n, _ in self.params]
        if len(set(names)) != len(names):
            raise ValueError("search space parameter names must be unique")
        for n, dom in self.params:
            if not dom:
                raise ValueError(f"empty domain for {n!r}")

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.params]

    def domain(self, name: str) -> tuple:
        return dict(self.params)[name]

    @classmethod
    def standard(cls) -> "SearchSpace":
        return cls(STANDARD_SPACE)

    @classmethod
    def from_json(cls, path: Path | str) -> "SearchSpace":
        """Load ``[[name, [values...]], ...]`` or ``{"name": [values...]}`` (insertion order kept)."""
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        items = data.items() if isinstance(data, dict) else data
        return cls(tuple((str(n), tuple(v)) for n, v in items))


@dataclass
class TrialResult:
    dev_bleu: float
    dev_accuracy: float = float("nan")
    dev_ppl: float = float("nan")
    runtime_hours: float = 0.0
    steps: int = 0


@dataclass
class Trial:
    trial_id: int
    stage_name: str
    param: str
    value: Any
    config: Any
    budget_steps: int = DEFAULT_BUDGET
    result: TrialResult | None = None
    failed: bool = False
    error: str = ""

    @property
    def score(self) -> float:
        if self.failed or self.result is None:
            return -math.inf
        return self.result.dev_bleu


@dataclass
class StagePlan:
    param: str
    candidates: tuple
    locked: dict
    current: dict  # full assignment before this stage; current[param] is the default

    @property
    def default(self):
        return self.current[self.param]


@dataclass
class SearchResult:
    best: dict
    config: Any
    trials: list[Trial] = field(default_factory=list)


# Trainer: (config, budget_steps) -> trained artefact with a ``.step`` or ``steps`` attribute.
# Evaluator: trained artefact -> dict with at least "dev_bleu" (optionally dev_accuracy, dev_ppl).
Trainer = Callable[[Any, int], Any]
Evaluator = Callable[[Any], dict]


def sample_config(space: SearchSpace, locked: dict, rng: random.Random, base: TransformerConfig | None = None):
    """Locked parameters keep their values; every other one is drawn uniformly from its domain.

    Returns a :class:`TransformerConfig` built on ``base`` when every name is a
    config field, otherwise a plain dict.
    """
    unknown = set(locked) - set(space.names)
    if unknown:
        raise KeyError(f"locked parameters not in the space: {sorted(unknown)}")
    values = {}
    for name, dom in space.params:
        values[name] = locked[name] if name in locked else dom[rng.randrange(len(dom))]
    return _materialize(values, base)


def _materialize(values: dict, base: TransformerConfig | None):
    if base is None and not set(values) <= set(TransformerConfig.__dataclass_fields__):
        return dict(values)
    return (base or TransformerConfig()).replace(**values)


def _values_equal(a, b) -> bool:
    if isinstance(a, float) or isinstance(b, float):
        return float(a) == float(b)
    return a == b


def choose_value(plan: StagePlan, trials: Sequence[Trial]):
    """Argmax of dev BLEU; ties go to the stage default, then to the smaller value."""
    ok = [t for t in trials if not t.failed]
    if not ok:
        raise StageFailedError(plan.param, list(trials))
    top = max(t.score for t in ok)
    winners = [t.value for t in ok if t.score == top]
    for w in winners:
        if _values_equal(w, plan.default):
            return w
    return min(winners)


def _run_trial(trial: Trial, trainer: Trainer, evaluator: Evaluator) -> Trial:
    t0 = time.perf_counter()
    try:
        trained = trainer(trial.config, trial.budget_steps)
        metrics = evaluator(trained)
    except DivergenceError as exc:
        trial.failed = True
        trial.error = str(exc)
        trial.result = TrialResult(-math.inf, runtime_hours=(time.perf_counter() - t0) / 3600, steps=exc.step)
        log.warning("trial %d (%s=%r) failed: %s", trial.trial_id, trial.param, trial.value, exc)
        return trial
    steps = getattr(trained, "step", None)
    if steps is None:
        steps = metrics.get("steps", trial.budget_steps)
    if steps > trial.budget_steps:
        raise RuntimeError(f"trainer ran {steps} steps, over the budget of {trial.budget_steps}")
    trial.result = TrialResult(
        dev_bleu=float(metrics["dev_bleu"]),
        dev_accuracy=float(metrics.get("dev_accuracy", float("nan"))),
        dev_ppl=float(metrics.get("dev_ppl", float("nan"))),
        runtime_hours=(time.perf_counter() - t0) / 3600,
        steps=int(steps),
    )
    return trial


def run_stage(
    plan: StagePlan,
    trainer: Trainer,
    evaluator: Evaluator,
    budget_steps: int = DEFAULT_BUDGET,
    first_trial_id: int = 0,
    base: TransformerConfig | None = None,
    jobs: int = 1,
    done: dict | None = None,
    stage_name: str | None = None,
):
    """Train and score one trial per candidate, then lock the winner.

    ``done`` maps trial ids to already-finished trials (from a resumed log);
    those are not re-run. Returns ``(locked_value, trials)`` with trials in id order.
    """
    stage_name = stage_name or plan.param
    trials = []
    for k, value in enumerate(plan.candidates):
        values = dict(plan.current)
        values.update(plan.locked)
        values[plan.param] = value
        trials.append(
            Trial(first_trial_id + k, stage_name, plan.param, value, _materialize(values, base), budget_steps)
        )
    done = done or {}
    todo = [t for t in trials if t.trial_id not in done]
    for t in trials:
        if t.trial_id in done:
            prev = done[t.trial_id]
            t.result, t.failed = prev.result, prev.failed
    if jobs > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(lambda t: _run_trial(t, trainer, evaluator), todo))
    else:
        for t in todo:
            _run_trial(t, trainer, evaluator)
    trials.sort(key=lambda t: t.trial_id)
    return choose_value(plan, trials), trials


def staged_search(
    space: SearchSpace,
    trainer: Trainer,
    evaluator: Evaluator,
    seed: int = 0,
    budget_steps: int = DEFAULT_BUDGET,
    defaults: dict | None = None,
    base: TransformerConfig | None = None,
    max_candidates: int | None = None,
    jobs: int = 1,
    log_path: Path | str | None = None,
) -> SearchResult:
    """Lock each parameter in turn and return the fully locked assignment.

    Starting values for parameters not yet studied come from ``defaults`` or,
    if absent, one seeded random draw from the space. With ``max_candidates``
    each stage tests a seeded random subset of that size instead of the whole
    domain. When ``log_path`` exists, finished trials are read back from it and
    skipped, so an interrupted search resumes where it stopped.
    """
    rng = random.Random(seed)
    current = _start_values(space, rng, defaults)
    config_space = set(space.names) <= set(TransformerConfig.__dataclass_fields__)
    if config_space and "seed" not in space.names:
        base = (base or TransformerConfig()).replace(seed=seed)

    finished = read_trial_log(log_path) if log_path and Path(log_path).exists() else {}
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    if log_fh and not finished and Path(log_path).stat().st_size == 0:
        log_fh.write("\t".join(LOG_COLUMNS) + "\n")

    locked: dict = {}
    all_trials: list[Trial] = []
    next_id = 0
    try:
        for name, dom in space.params:
            cands = tuple(dom)
            if max_candidates is not None and len(cands) > max_candidates:
                cands = tuple(rng.sample(list(cands), max_candidates))
            plan = StagePlan(name, cands, dict(locked), dict(current))
            done = {tid: t for tid, t in finished.items() if t.stage_name == name}
            value, trials = run_stage(plan, trainer, evaluator, budget_steps, next_id, base, jobs, done, name)
            for t in trials:
                if log_fh and t.trial_id not in done:
                    log_fh.write(format_trial(t) + "\n")
                    log_fh.flush()
            all_trials.extend(trials)
            next_id += len(trials)
            locked[name] = value
            current[name] = value
            log.info("stage %s locked %r", name, value)
    except Exception as exc:
        raise SearchAborted(exc, all_trials, locked) from exc
    finally:
        if log_fh:
            log_fh.close()
    return SearchResult(dict(locked), _materialize(locked, base), all_trials)


def _start_values(space: SearchSpace, rng: random.Random, defaults: dict | None) -> dict:
    start = sample_config(space, {}, rng, None)
    start = dict(start) if isinstance(start, dict) else {n: getattr(start, n) for n in space.names}
    if defaults:
        start.update({k: v for k, v in defaults.items() if k in start})
    return start


def _fmt_value(v) -> str:
    return json.dumps(v)


def format_trial(t: Trial) -> str:
    r = t.result or TrialResult(float("nan"))
    bleu = "-inf" if t.failed else f"{r.dev_bleu:.4f}"
    return "\t".join(
        [
            t.stage_name,
            str(t.trial_id),
            t.param,
            _fmt_value(t.value),
            bleu,
            f"{r.dev_ppl:.4f}",
            str(r.steps),
            f"{r.runtime_hours:.6f}",
        ]
    )


def read_trial_log(path: Path | str) -> dict[int, Trial]:
    """Parse a trial log into ``{trial_id: Trial}`` (configs are not stored, only results)."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("stage\t"):
            continue
        parts = line.split("\t")
        if len(parts) != len(LOG_COLUMNS):
            raise ValueError(f"{path}:{lineno}: expected {len(LOG_COLUMNS)} columns, got {len(parts)}")
        stage, tid, param, value, bleu, ppl, steps, hours = parts
        failed = bleu == "-inf"
        t = Trial(int(tid), stage, param, json.loads(value), None)
        t.failed = failed
        t.result = TrialResult(float(bleu), dev_ppl=float(ppl), runtime_hours=float(hours), steps=int(steps))
        out[t.trial_id] = t
    return out


def locked_from_log(
    path: Path | str,
    space: SearchSpace,
    seed: int = 0,
    defaults: dict | None = None,
    max_candidates: int | None = None,
) -> dict:
    """Rebuild the lock decisions of completed stages from a trial log."""
    trials = read_trial_log(path)
    start = _start_values(space, random.Random(seed), defaults)
    locked = {}
    for name, dom in space.params:
        stage = sorted((t for t in trials.values() if t.stage_name == name), key=lambda t: t.trial_id)
        if len(stage) < (len(dom) if max_candidates is None else min(len(dom), max_candidates)):
            break
        current = dict(start)
        current.update(locked)
        plan = StagePlan(name, tuple(t.value for t in stage), dict(locked), current)
        locked[name] = choose_value(plan, stage)
    return locked
