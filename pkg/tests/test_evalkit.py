import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgreader.evalkit import (EvalExample, build_report, exact_match, fact_related, link_answers,
                              normalize_answer)
from kgreader.kgstore import KnowledgeGraph
from kgreader.localgraph import Edge, LocalGraph, NodeRef, build_graph
from oracles import random_fixture

FIXTURES = Path(__file__).parent / "fixtures"

# each expected value was derived by applying lowercase -> strip punctuation ->
# drop standalone a/an/the -> collapse whitespace by hand
NORMALIZE_GOLDEN = [
    ("The Swan Lake", "swan lake"),
    ("U.S.A.", "usa"),
    ("  An   Answer! ", "answer"),
    ("a", ""),
    ("A Tale of Two Cities", "tale of two cities"),
    ("the the the", ""),
    ("Theatre", "theatre"),
    ("Anthem", "anthem"),
    ("An apple a day", "apple day"),
    ("rock-and-roll", "rockandroll"),
    ("don't stop", "dont stop"),
    ("Hello, World.", "hello world"),
    ("(The) Beatles", "beatles"),
    ("Tchaikovsky", "tchaikovsky"),
    ("PYOTR  ILYICH\tTCHAIKOVSKY", "pyotr ilyich tchaikovsky"),
    ("", ""),
    ("   ", ""),
    ("!!!", ""),
    ("1,000", "1000"),
    ("3.14", "314"),
    ("$100", "$100"),
    ("50%", "50"),
    ("C++", "c++"),
    ("e-mail", "email"),
    ("«Quoted»", "quoted"),
    ("“Smart quotes”", "smart quotes"),
    ("Café", "café"),
    ("ÉCOLE", "école"),
    ("the end.", "end"),
    ("A.B.C.", "abc"),
    ("an-other", "another"),
    ("Mr. Smith", "mr smith"),
    ("Swan Lake (ballet)", "swan lake ballet"),
    ("The\nNutcracker", "nutcracker"),
    ("A  the  An", ""),
    ("they", "they"),
    ("a.m.", "am"),
    ("¿Qué?", "qué"),
    ("St. Petersburg, Russia", "st petersburg russia"),
    ("THE END", "end"),
]

EM_GOLDEN = [
    ("swan lake", ["The Swan Lake"], 1),
    ("swan", ["swan lake"], 0),
    ("lev ivanov", ["Marius Petipa", "Lev Ivanov"], 1),
    ("The U.S.", ["us"], 1),
    ("petipa", ["Marius Petipa"], 0),
    ("", ["the"], 1),
    ("Tchaikovsky!", ["tchaikovsky", "P. I. Tchaikovsky"], 1),
    ("p i tchaikovsky", ["P. I. Tchaikovsky"], 1),
    ("swanlake", ["Swan Lake"], 0),
    ("an apple", ["apple", "the pear"], 1),
]


def test_golden_table_has_fifty_cases():
    assert len(NORMALIZE_GOLDEN) + len(EM_GOLDEN) == 50


@pytest.mark.parametrize("raw,expected", NORMALIZE_GOLDEN)
def test_normalize_golden(raw, expected):
    assert normalize_answer(raw) == expected


@pytest.mark.parametrize("pred,golds,expected", EM_GOLDEN)
def test_exact_match_golden(pred, golds, expected):
    assert exact_match(pred, golds) == expected


def test_exact_match_needs_gold():
    with pytest.raises(ValueError):
        exact_match("x", [])
    with pytest.raises(ValueError):
        EvalExample("q", [])


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=30))
def test_normalize_idempotent(s):
    assert normalize_answer(normalize_answer(s)) == normalize_answer(s)


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=20), st.text(max_size=20))
def test_exact_match_symmetric(a, b):
    assert exact_match(a, [b]) == exact_match(b, [a])


def _edge_graph(u_ent, v_ents):
    return LocalGraph([NodeRef(u_ent, "question", (0,))],
                      [NodeRef(v, "passage", (i + 1,)) for i, v in enumerate(v_ents)],
                      [Edge(0, i, (0,)) for i in range(len(v_ents))])


def test_fact_related_examples(ballet_kg, ballet_vocab, ballet_lexicon):
    swan, tch = ballet_kg.entity_id("swan lake"), ballet_kg.entity_id("tchaikovsky")
    ans = link_answers(["Tchaikovsky"], ballet_lexicon, ballet_vocab)
    assert ans == [tch]
    assert fact_related(EvalExample("q", ["Tchaikovsky"], graphs=[_edge_graph(swan, [tch])], answer_entities=ans))
    assert not fact_related(EvalExample("q", ["Tchaikovsky"], graphs=[LocalGraph()] * 3, answer_entities=ans))
    # unlinkable answers are conservatively not fact-related
    assert link_answers(["Stravinsky"], ballet_lexicon, ballet_vocab) == []
    # an answer entity on the question side does not count
    assert not fact_related(EvalExample("q", ["x"], graphs=[_edge_graph(tch, [swan])], answer_entities=[tch]))


def _edge_scan(graphs, answers):
    hits = 0
    for g in graphs:
        for e in g.edges:
            hits += g.V[e.v].entity in answers
    return hits > 0


def test_fact_related_matches_edge_scan_on_twenty_examples():
    rng = np.random.default_rng(3)
    flags, oracle = [], []
    for _ in range(20):
        graphs, answers = [], [int(rng.integers(8))]
        for _ in range(3):
            kg, doc = random_fixture(rng)
            graphs.append(build_graph(doc, kg))
        flags.append(fact_related(EvalExample("q", ["a"], graphs=graphs, answer_entities=answers)))
        oracle.append(_edge_scan(graphs, set(answers)))
    assert flags == oracle
    assert 0 < sum(flags) < 20


def test_fact_related_monotone_in_kg():
    rng = np.random.default_rng(4)
    for _ in range(100):
        kg, doc = random_fixture(rng)
        extra = [(kg.entities[rng.integers(kg.n_entities)], "r0", kg.entities[rng.integers(kg.n_entities)])
                 for _ in range(3)]
        bigger = KnowledgeGraph.from_triples(
            [(kg.entities[h], kg.relations[r], kg.entities[t]) for h, r, t in kg.triples] + extra)
        # entity ids are assigned in first-seen order, so the original ids carry over
        assert bigger.entities[:kg.n_entities] == kg.entities
        ans = [int(rng.integers(kg.n_entities))]
        before = fact_related(EvalExample("q", ["a"], graphs=[build_graph(doc, kg)], answer_entities=ans))
        after = fact_related(EvalExample("q", ["a"], graphs=[build_graph(doc, bigger)], answer_entities=ans))
        assert after or not before


def tally_fixture():
    """10 examples: 0-3 fact-related; full is right on 0-2 and 4-7, baseline on 0 and 4-8."""
    examples = []
    for i in range(10):
        graphs = [_edge_graph(100, [i])] if i < 4 else [LocalGraph(), _edge_graph(100, [50])]
        examples.append(EvalExample(f"q{i}", [f"ans{i}"], graphs=graphs, answer_entities=[i]))
    full = [f"ans{i}" if i in (0, 1, 2, 4, 5, 6, 7) else "wrong" for i in range(10)]
    base = [f"ans{i}" if i in (0, 4, 5, 6, 7, 8) else "wrong" for i in range(10)]
    return examples, {"full": full, "baseline": base}


def test_report_hand_tally():
    examples, preds = tally_fixture()
    rep = build_report(examples, preds)
    assert (rep.n_examples, rep.subset_size, rep.primary) == (10, 4, "full")
    assert rep.overall_em == 0.7 and rep.subset_em == 0.75 and rep.subset_fraction == 0.4
    assert rep.variants["baseline"] == {"em": 0.6, "subset_em": 0.25}
    assert rep.deltas["full"]["em"] == pytest.approx(0.1, abs=1e-15)
    assert rep.deltas["full"]["subset_em"] == 0.5
    # graph stats: 4 single-graph questions of 2 nodes, 6 questions with one non-empty graph of 2 nodes
    assert rep.graph_stats["graphs_per_question"] == [1.0, 0.0]
    assert rep.graph_stats["nodes_per_graph"] == [2.0, 0.0]


def test_report_golden_outputs():
    examples, preds = tally_fixture()
    rep = build_report(examples, preds, extra_subsets={"first_half": [i < 5 for i in range(10)]})
    assert rep.to_table() == (FIXTURES / "report_table.txt").read_text(encoding="utf-8")
    assert json.loads(rep.to_json()) == json.loads((FIXTURES / "report.json").read_text(encoding="utf-8"))


def test_report_edge_cases():
    ex = EvalExample("q", ["Tchaikovsky"], graphs=[_edge_graph(0, [1])], answer_entities=[1])
    rep = build_report([ex], {"full": ["tchaikovsky"]})
    assert rep.overall_em == rep.subset_em == rep.subset_fraction == 1.0
    empty = build_report([], {})
    assert empty.n_examples == 0 and empty.overall_em == 0.0 and empty.variants == {}
    with pytest.raises(ValueError):
        build_report([ex], {"full": []})
    with pytest.raises(ValueError):
        build_report([ex], {"full": ["a"]}, extra_subsets={"s": [True, False]})


def test_removing_a_non_subset_example_keeps_subset_em():
    examples, preds = tally_fixture()
    rep = build_report(examples, preds)
    keep = [i for i in range(10) if i != 6]
    smaller = build_report([examples[i] for i in keep], {k: [v[i] for i in keep] for k, v in preds.items()})
    assert smaller.subset_em == rep.subset_em and smaller.overall_em != rep.overall_em
