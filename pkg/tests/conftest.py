import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ROOT = Path(__file__).resolve().parent.parent


@pytest.fixture
def write_pair(tmp_path):
    """Write source/target line lists to files and return their paths."""

    def _write(src_lines, tgt_lines, newline="\n"):
        src, tgt = tmp_path / "c.src", tmp_path / "c.tgt"
        src.write_bytes(newline.join(src_lines).encode("utf-8") + newline.encode())
        tgt.write_bytes(newline.join(tgt_lines).encode("utf-8") + newline.encode())
        return src, tgt

    return _write


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record the outcome of one acceptance criterion; it is echoed in the run summary."""

    def _record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}" + (f"  ({detail})" if detail else "")
        _CRITERIA[number] = line
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
