"""Energy accounting, result tables and training-curve export."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

COLUMNS = ("Architecture", "BLEU", "TER", "ChrF3", "Steps", "Runtime (hours)", "kgCO2")


class ReportInputError(ValueError):
    pass


@dataclass(frozen=True)
class EnergyParams:
    # 0.175 kW is the device draw implied by reference runtime/kgCO2 figures;
    # 324 g/kWh is the Irish grid figure. Use intensity 0 for carbon-neutral compute.
    device_power_kw: float = 0.175
    grid_intensity_g_per_kwh: float = 324.0

    def __post_init__(self):
        if self.device_power_kw < 0 or self.grid_intensity_g_per_kwh < 0:
            raise ReportInputError("energy parameters must be non-negative")


def compute_co2(runtime_hours: float, energy: EnergyParams = EnergyParams()) -> float:
    """Kilograms of CO2 for a run, at full precision (round only for display)."""
    if runtime_hours < 0 or math.isnan(runtime_hours):
        raise ReportInputError(f"runtime must be non-negative, got {runtime_hours}")
    return runtime_hours * energy.device_power_kw * energy.grid_intensity_g_per_kwh / 1000.0


@dataclass(frozen=True)
class ReportRow:
    architecture: str
    bleu: float
    ter: float
    chrf3: float
    steps: int
    runtime_hours: float
    kg_co2: float

    @classmethod
    def build(cls, architecture, bleu, ter, chrf3, steps, runtime_hours, energy: EnergyParams = EnergyParams()):
        return cls(architecture, bleu, ter, chrf3, int(steps), runtime_hours, compute_co2(runtime_hours, energy))

    def cells(self) -> list[str]:
        return [
            self.architecture,
            f"{self.bleu:.1f}",
            f"{self.ter:.2f}",
            f"{self.chrf3:.2f}",
            format_steps(self.steps),
            f"{self.runtime_hours:.2f}",
            f"{self.kg_co2:.2f}",
        ]

    def rounded(self) -> "ReportRow":
        """The row as it reads after a trip through a table."""
        return ReportRow(
            self.architecture,
            round(self.bleu, 1),
            round(self.ter, 2),
            round(self.chrf3, 2),
            self.steps,
            round(self.runtime_hours, 2),
            round(self.kg_co2, 2),
        )


def format_steps(steps: int) -> str:
    return f"{steps // 1000}k" if steps and steps % 1000 == 0 else str(steps)


def parse_steps(text: str) -> int:
    text = text.strip()
    return int(text[:-1]) * 1000 if text.endswith("k") else int(text)


def emit_table(rows: Sequence[ReportRow], fmt: str = "tsv") -> str:
    if not rows:
        raise ReportInputError("a table needs at least one row")
    body = [r.cells() for r in rows]
    if fmt == "tsv":
        return "\n".join("\t".join(line) for line in [list(COLUMNS)] + body) + "\n"
    if fmt == "markdown":
        widths = [max(len(c), *(len(line[i]) for line in body)) for i, c in enumerate(COLUMNS)]

        def md(cells):
            return "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"

        sep = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
        return "\n".join([md(COLUMNS), sep] + [md(line) for line in body]) + "\n"
    raise ValueError(f"unknown table format {fmt!r}")


def parse_table(text: str) -> list[ReportRow]:
    """Inverse of :func:`emit_table` for either format."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ReportInputError("empty table")
    if lines[0].startswith("|"):
        rows = [[c.strip() for c in ln.strip().strip("|").split("|")] for ln in lines if not ln.startswith("|-")]
    else:
        rows = [ln.split("\t") for ln in lines]
    header, data = rows[0], rows[1:]
    if tuple(header) != COLUMNS:
        raise ReportInputError(f"unexpected header {header}")
    out = []
    for cells in data:
        if len(cells) != len(COLUMNS):
            raise ReportInputError(f"row has {len(cells)} cells: {cells}")
        a, bleu, ter, chrf, steps, hours, co2 = cells
        out.append(ReportRow(a, float(bleu), float(ter), float(chrf), parse_steps(steps), float(hours), float(co2)))
    return out


def ppl_minimum(history: Sequence[dict]) -> tuple[float, int]:
    """Lowest validation perplexity and the first step at which it occurred."""
    if not history:
        raise ReportInputError("empty training history")
    best = min(history, key=lambda h: (h["val_ppl"], h["step"]))
    return best["val_ppl"], best["step"]


def emit_curves(history: Sequence[dict]) -> str:
    """CSV of ``step,val_accuracy,val_ppl`` followed by a ``# ppl_min=...`` summary line."""
    ppl, step = ppl_minimum(history)
    lines = ["step,val_accuracy,val_ppl"]
    lines += [f"{h['step']},{h['val_accuracy']:.4f},{h['val_ppl']:.6f}" for h in history]
    lines.append(f"# ppl_min={ppl:.2f} step={step}")
    return "\n".join(lines) + "\n"


def parse_curves(text: str) -> tuple[list[dict], dict]:
    history, summary = [], {}
    for line in text.splitlines():
        if line.startswith("#"):
            for item in line[1:].split():
                k, _, v = item.partition("=")
                summary[k] = float(v) if k == "ppl_min" else int(v)
        elif line and not line.startswith("step,"):
            step, acc, ppl = line.split(",")
            history.append({"step": int(step), "val_accuracy": float(acc), "val_ppl": float(ppl)})
    return history, summary
