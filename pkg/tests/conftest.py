from __future__ import annotations

import pytest

from hsd.models import ScoringContext, ScriptedModel
from hsd.tokens import Vocabulary


@pytest.fixture(scope="session")
def vocab() -> Vocabulary:
    return Vocabulary.builtin()


def scripted(g, vocab_size=50, p_top=0.9, doc_id="d", regions=None, resync_min=3) -> ScriptedModel:
    """A scripted model whose page script is ``g``."""
    m = ScriptedModel(vocab_size, p_top=p_top, resync_min=resync_min)
    m.add_scripts(doc_id, tuple(g), regions if regions is not None else [tuple(g)])
    return m


PAGE = ScoringContext.page("d")


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> str:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
