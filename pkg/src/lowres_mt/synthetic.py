"""Deterministic toy parallel corpus for smoke runs and examples.

Source sentences are simple English clauses. Targets are a rule-based
pseudo-Irish rendering: verb first, adjective after the noun, and a
per-word lexicon. The mapping is learnable by a small model in a few
thousand steps, which is all the smoke pipeline needs.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path

SUBJECTS = {
    "the man": "an fear",
    "the woman": "an bhean",
    "the child": "an páiste",
    "the teacher": "an múinteoir",
    "the doctor": "an dochtúir",
    "the farmer": "an feirmeoir",
    "my friend": "mo chara",
    "the girl": "an cailín",
    "the boy": "an buachaill",
    "the council": "an chomhairle",
}
VERBS = {
    "sees": "feiceann",
    "reads": "léann",
    "buys": "ceannaíonn",
    "sells": "díolann",
    "writes": "scríobhann",
    "opens": "osclaíonn",
    "closes": "dúnann",
    "likes": "is maith le",
    "finds": "aimsíonn",
    "carries": "iompraíonn",
}
OBJECTS = {
    "book": "leabhar",
    "letter": "litir",
    "house": "teach",
    "door": "doras",
    "car": "carr",
    "report": "tuarascáil",
    "boat": "bád",
    "table": "bord",
    "window": "fuinneog",
    "road": "bóthar",
}
ADJECTIVES = {
    "big": "mór",
    "small": "beag",
    "old": "sean",
    "new": "nua",
    "red": "dearg",
    "green": "glas",
    "white": "bán",
    "": "",
}
TIMES = {
    "": "",
    "today": "inniu",
    "yesterday": "inné",
    "every day": "gach lá",
    "in the morning": "ar maidin",
}


def make_pair(rng: random.Random) -> tuple[str, str]:
    subj, verb, obj, adj, time = (rng.choice(sorted(d)) for d in (SUBJECTS, VERBS, OBJECTS, ADJECTIVES, TIMES))
    en = [subj, verb, "the", adj, obj, time]
    ga = [VERBS[verb], SUBJECTS[subj], "an", OBJECTS[obj], ADJECTIVES[adj], TIMES[time]]
    if rng.random() < 0.3:
        subj2, verb2, obj2 = (rng.choice(sorted(d)) for d in (SUBJECTS, VERBS, OBJECTS))
        en += ["and", subj2, verb2, "the", obj2]
        ga += ["agus", VERBS[verb2], SUBJECTS[subj2], "an", OBJECTS[obj2]]
    return " ".join(w for w in en if w) + " .", " ".join(w for w in ga if w) + " ."


def make_corpus(n_pairs: int, seed: int = 0) -> tuple[list[str], list[str]]:
    rng = random.Random(seed)
    pairs = [make_pair(rng) for _ in range(n_pairs)]
    return [s for s, _ in pairs], [t for _, t in pairs]


def write_corpus(out_dir: Path | str, n_pairs: int = 3000, seed: int = 0, prefix: str = "toy") -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    src, tgt = make_corpus(n_pairs, seed)
    src_path, tgt_path = out / f"{prefix}.en", out / f"{prefix}.ga"
    src_path.write_text("\n".join(src) + "\n", encoding="utf-8")
    tgt_path.write_text("\n".join(tgt) + "\n", encoding="utf-8")
    return src_path, tgt_path


# ---------------------------------------------------------------------------
# copy task
# ---------------------------------------------------------------------------


def copy_pairs(n_pairs: int, vocab_size: int = 30, max_len: int = 12, seed: int = 0) -> list[tuple[list[int], list[int]]]:
    """Id pairs (x, x) with x drawn uniformly from the non-special ids, length 1..max_len."""
    from .subword import SPECIALS

    rng = random.Random(seed)
    lo = len(SPECIALS)
    out = []
    for _ in range(n_pairs):
        seq = [rng.randrange(lo, vocab_size) for _ in range(rng.randint(1, max_len))]
        out.append((seq, list(seq)))
    return out


# ---------------------------------------------------------------------------
# hyperparameter-search surrogate
# ---------------------------------------------------------------------------


class SeparableSurrogate:
    """Stand-in for "train then score on dev" whose optimum is known.

    The score is ``peak - sum of per-parameter penalties``. A parameter at its
    target value costs nothing; any other value costs ``gap`` plus ``gap`` per
    domain position away from the target. Because the penalties add up, the
    best value of one parameter does not depend on the others.

    ``noise`` adds Gaussian noise with that standard deviation, drawn from a
    generator seeded by (``noise_seed``, the trial's values), so repeated runs
    are reproducible and thread-safe.
    """

    def __init__(self, space, target: dict, noise: float = 0.0, noise_seed: int = 0, peak: float = 30.0, gap: float = 0.5):
        self.space = space
        self.target = dict(target)
        self.noise = noise
        self.noise_seed = noise_seed
        self.peak = peak
        self.gap = gap

    def score(self, values: dict) -> float:
        total = self.peak
        for name, dom in self.space.params:
            dom = list(dom)
            v, best = values[name], self.target[name]
            if v != best:
                total -= self.gap * (1 + abs(dom.index(v) - dom.index(best)))
        if self.noise:
            key = f"{self.noise_seed}|" + "|".join(f"{n}={values[n]!r}" for n in self.space.names)
            total += random.Random(key).gauss(0.0, self.noise)
        return total

    def trainer(self, config, budget_steps: int):
        values = config if isinstance(config, dict) else {n: getattr(config, n) for n in self.space.names}
        return _SurrogateRun(values, budget_steps)

    def evaluator(self, run) -> dict:
        return {"dev_bleu": self.score(run.values)}


@dataclass(frozen=True)
class _SurrogateRun:
    values: dict
    step: int
