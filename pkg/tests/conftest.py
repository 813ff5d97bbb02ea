import numpy as np
import pytest

from kgreader.kgstore import KnowledgeGraph
from kgreader.textproc import Vocab, build_lexicon


@pytest.fixture
def ballet_kg():
    return KnowledgeGraph.from_triples([
        ("swan lake", "composer", "tchaikovsky"),
        ("the nutcracker", "composer", "tchaikovsky"),
        ("sleeping beauty", "composer", "tchaikovsky"),
        ("swan lake", "choreographer", "petipa"),
        ("tchaikovsky", "teacher", "rimsky"),
    ])


@pytest.fixture
def ballet_vocab():
    return Vocab.build(["who composed swan lake ? the nutcracker sleeping beauty tchaikovsky petipa rimsky",
                        "composer choreographer teacher wrote and ."])


@pytest.fixture
def ballet_lexicon(ballet_kg, ballet_vocab):
    pairs = [(e, e) for e in ballet_kg.entities]
    return build_lexicon(pairs, ballet_vocab, ballet_kg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
