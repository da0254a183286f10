import io
import sys

import pytest

from glosskit import set_threads
from glosskit.igt_data import parse_corpus

# one BLAS thread keeps every float reduction in a fixed order
set_threads(1)

EXAMPLE_ONE = (
    '{"transcription": [["Ti","j","ya\'","tq","a\'"],["juntiir"]], '
    '"glosses": [["INC","E3S","VT","PL","ENF"],["ADV"]], '
    '"translation": "They are given a lot.", "genre": "Story", "speaker": "s1", "doc": "d1"}\n'
)


@pytest.fixture
def example_one():
    return parse_corpus(io.StringIO(EXAMPLE_ONE))[0]


def make_sentence(words, glosses, genre="Story", doc="d", index=0):
    from glosskit.igt_data import IgtSentence

    return IgtSentence(tuple(tuple(w) for w in words), tuple(tuple(g) for g in glosses), None, genre, "spk",
                       doc, index)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.VERDICTS):
        terminalreporter.write_line(mod.VERDICTS[key])
