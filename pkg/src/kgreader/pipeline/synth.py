"""Seeded synthetic KG-grounded QA data.

Fact examples ask for the tail of a KG triple. The gold passage lists the head
with several candidate entities: the answer, entities with no KG link to the
head, and (for relation-discriminative examples) other tails that the KG links
to the head through *different* relations. Text alone cannot tell the
candidates apart; the graph edge separates the answer from unlinked
candidates and only the relation label on the edge separates it from linked
ones. Non-fact examples state the answer in the passage and have no KG edge
between head and answer.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..kgstore import KnowledgeGraph, save_triples
from ..tensor import make_rng
from ..textproc import write_jsonl, write_lexicon_pairs

log = logging.getLogger(__name__)

RELATION_WORDS = ("composer", "director", "author", "founder", "producer", "designer",
                  "editor", "owner", "mentor", "sponsor", "architect", "painter")

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kr", "st", "tr")
_VOWELS = ("a", "e", "i", "o", "u")
_CODAS = ("", "n", "r", "s", "l", "k")

QUESTION_TEMPLATES = ("who is the {rel} of {head} ?", "what is the {rel} of {head} ?",
                      "name the {rel} of {head} .")
GOLD_TEMPLATES = ("{head} is associated with {cands} .", "records link {head} with {cands} .",
                  "{head} was connected to {cands} .")
STATED_TEMPLATES = ("the {rel} of {head} is {tail} .", "{head} has {tail} as its {rel} .")
FILLER_TEMPLATES = ("{a} is associated with {b} and {c} .", "records link {a} with {b} and {c} .",
                    "{a} was connected to {b} and {c} .")


class SynthError(ValueError):
    pass


@dataclass
class SynthSpec:
    n_entities: int = 1000
    n_relations: int = 2
    n_triples: int = 1500
    distractors_per_example: int = 1  # at most this many same-head tails under other relations
    unlinked_per_example: int = 1  # candidates with no KG link to the head
    discriminative_fraction: float = 1.0  # share of fact examples that get same-head distractors
    n_train: int = 2000
    n_dev: int = 200
    n_test: int = 300
    passages_per_example: int = 5
    nonfact_fraction: float = 0.4
    gold_rank_probs: tuple[float, ...] = (0.4, 0.15, 0.15, 0.15, 0.15)
    question_templates: tuple[str, ...] = QUESTION_TEMPLATES
    gold_templates: tuple[str, ...] = GOLD_TEMPLATES
    stated_templates: tuple[str, ...] = STATED_TEMPLATES
    seed: int = 0

    def validate(self) -> None:
        for name in ("n_entities", "n_relations", "n_triples", "passages_per_example"):
            if getattr(self, name) <= 0:
                raise SynthError(f"{name} must be positive")
        if self.n_relations > len(RELATION_WORDS):
            raise SynthError(f"at most {len(RELATION_WORDS)} relations available")
        if self.n_entities < 2:
            raise SynthError("need at least two entities")
        # one tail per (head, relation) and one relation per entity pair
        capacity = min(self.n_entities * self.n_relations, self.n_entities * (self.n_entities - 1) // 2)
        if self.n_triples > capacity:
            raise SynthError(f"{self.n_triples} triples exceed the {capacity} available (head, relation) slots")
        for name in ("nonfact_fraction", "discriminative_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SynthError(f"{name} must lie in [0, 1]")
        if self.distractors_per_example < 0 or self.unlinked_per_example < 0:
            raise SynthError("distractor counts must be non-negative")
        slots = ("{rel}", "{head}", "{tail}", "{cands}")
        for group, allowed in ((self.question_templates, ("{rel}", "{head}")),
                               (self.gold_templates, ("{head}", "{cands}")),
                               (self.stated_templates, ("{rel}", "{head}", "{tail}"))):
            for tpl in group:
                used = [s for s in slots if s in tpl]
                if any(s not in allowed for s in used):
                    raise SynthError(f"template {tpl!r} references undefined slots")


@dataclass
class SynthDataset:
    kg: KnowledgeGraph
    lexicon: list[tuple[str, str]]
    splits: dict[str, list[dict]] = field(default_factory=dict)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_triples(self.kg, out / "kg.tsv")
        write_lexicon_pairs(self.lexicon, out / "lexicon.tsv")
        for name, rows in self.splits.items():
            write_jsonl(rows, out / f"{name}.jsonl")


def entity_names(n: int, rng: np.random.Generator, reserved=()) -> list[str]:
    taken = set(reserved)
    names = []
    while len(names) < n:
        parts = []
        for _ in range(int(rng.integers(2, 4))):
            parts.append(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))])
        word = "".join(parts) + _CODAS[rng.integers(len(_CODAS))]
        if word not in taken:
            taken.add(word)
            names.append(word)
    return names


def _template_words(spec: SynthSpec) -> set[str]:
    words = set()
    for tpl in itertools.chain(spec.question_templates, spec.gold_templates, spec.stated_templates,
                               FILLER_TEMPLATES):
        words.update(w for w in tpl.split() if not w.startswith("{"))
    return words | set(RELATION_WORDS) | {"and", ","}


def _pick(rng, seq):
    return seq[int(rng.integers(len(seq)))]


def _join_candidates(names: list[str]) -> str:
    if len(names) == 1:
        return names[0]
    return " , ".join(names[:-1]) + " and " + names[-1]


def synth_dataset(spec: SynthSpec) -> SynthDataset:
    spec.validate()
    rng = make_rng(spec.seed)
    names = entity_names(spec.n_entities, rng, reserved=_template_words(spec))
    rels = list(RELATION_WORDS[: spec.n_relations])

    # KG: unique tail per (head, relation), at most one relation per unordered pair
    out_edges: dict[int, dict[int, int]] = {h: {} for h in range(spec.n_entities)}
    linked: set[tuple[int, int]] = set()
    triples: list[tuple[int, int, int]] = []
    attempts = 0
    while len(triples) < spec.n_triples:
        attempts += 1
        if attempts > 200 * spec.n_triples:
            raise SynthError("could not place the requested number of triples")
        h = int(rng.integers(spec.n_entities))
        r = int(rng.integers(spec.n_relations))
        t = int(rng.integers(spec.n_entities))
        if t == h or r in out_edges[h] or (min(h, t), max(h, t)) in linked:
            continue
        out_edges[h][r] = t
        linked.add((min(h, t), max(h, t)))
        triples.append((h, r, t))
    kg = KnowledgeGraph.from_triples((names[h], rels[r], names[t]) for h, r, t in triples)

    # Split question triples by head entity: every triple of a head lands in one
    # split, so no evaluation question shares its head with a training question
    # and candidate tails cannot be memorised from training answers.
    n_fact = {s: int(round(n * (1.0 - spec.nonfact_fraction)))
              for s, n in (("train", spec.n_train), ("dev", spec.n_dev), ("test", spec.n_test))}
    by_head: dict[int, list[int]] = {}
    for i, (h, _, _) in enumerate(triples):
        by_head.setdefault(h, []).append(i)
    heads = sorted(by_head)
    heads = [heads[j] for j in rng.permutation(len(heads))]
    pools: dict[str, list[int]] = {"test": [], "dev": [], "train": []}
    cursor = 0
    for split in ("test", "dev"):
        while len(pools[split]) < n_fact[split] and cursor < len(heads):
            pools[split].extend(by_head[heads[cursor]])
            cursor += 1
    for h in heads[cursor:]:
        pools["train"].extend(by_head[h])
    for split in ("train", "dev", "test"):
        if n_fact[split] and not pools[split]:
            raise SynthError(f"not enough triples to give the {split} split its own heads")

    neighbours: dict[int, set[int]] = {h: set() for h in range(spec.n_entities)}
    for h, _, t in triples:
        neighbours[h].add(t)
        neighbours[t].add(h)
    used_nonfact: set[tuple[int, int]] = set()
    splits = {}
    for split, total in (("train", spec.n_train), ("dev", spec.n_dev), ("test", spec.n_test)):
        rows = []
        pool = pools[split]
        for i in range(total):
            if i < n_fact[split] and pool:
                tri = triples[pool[i % len(pool)]]
                row = _fact_example(spec, rng, names, rels, out_edges, neighbours, tri)
            else:
                row = _nonfact_example(spec, rng, names, rels, out_edges, linked, used_nonfact)
            row["id"] = f"{split}-{i}"
            rows.append(row)
        perm = rng.permutation(len(rows))
        splits[split] = [rows[j] for j in perm]
    lexicon = [(n, n) for n in names]
    return SynthDataset(kg, lexicon, splits)


def _sample_entities(rng, n_names: int, count: int, avoid: set[int]) -> list[int]:
    if n_names - len(avoid) < count:
        raise SynthError("too few entities to fill the passages")
    pick: list[int] = []
    while len(pick) < count:
        e = int(rng.integers(n_names))
        if e not in avoid and e not in pick:
            pick.append(e)
    return pick


def _place_gold(spec, rng, gold: str, avoid: set[int], names) -> tuple[list[str], int]:
    k = spec.passages_per_example
    probs = np.asarray(spec.gold_rank_probs[:k], dtype=np.float64)
    if probs.size < k:
        probs = np.concatenate([probs, np.full(k - probs.size, probs[-1] if probs.size else 1.0)])
    rank = int(rng.choice(k, p=probs / probs.sum()))
    passages = []
    for j in range(k):
        if j == rank:
            passages.append(gold)
            continue
        a, b, c = (names[e] for e in _sample_entities(rng, len(names), 3, avoid))
        passages.append(_pick(rng, FILLER_TEMPLATES).format(a=a, b=b, c=c))
    return passages, rank


def _fact_example(spec, rng, names, rels, out_edges, neighbours, tri) -> dict:
    h, r, t = tri
    others = [(r2, t2) for r2, t2 in out_edges[h].items() if r2 != r]
    n_d = 0
    if others and rng.random() < spec.discriminative_fraction:
        n_d = min(spec.distractors_per_example, len(others))
    chosen = [others[j] for j in rng.permutation(len(others))[:n_d]]
    linked = {h} | neighbours[h]
    unlinked = _sample_entities(rng, len(names), spec.unlinked_per_example, linked)
    cands = [t] + [t2 for _, t2 in chosen] + unlinked
    cands = [cands[j] for j in rng.permutation(len(cands))]
    gold = _pick(rng, spec.gold_templates).format(head=names[h], cands=_join_candidates([names[c] for c in cands]))
    question = _pick(rng, spec.question_templates).format(rel=rels[r], head=names[h])
    # filler passages avoid every KG neighbour of the head so that only the
    # gold passage carries question-linked entities
    passages, rank = _place_gold(spec, rng, gold, linked | set(cands), names)
    return {"question": question, "answers": [names[t]], "passages": passages, "fact": True,
            "relation": rels[r], "head": names[h], "gold_rank": rank, "n_distractors": n_d}


def _nonfact_example(spec, rng, names, rels, out_edges, linked, used) -> dict:
    n = len(names)
    for _ in range(10_000):
        h = int(rng.integers(n))
        r = int(rng.integers(len(rels)))
        t = int(rng.integers(n))
        if t == h or r in out_edges[h] or (min(h, t), max(h, t)) in linked or (h, r, t) in used:
            continue
        used.add((h, r, t))
        break
    else:
        raise SynthError("could not place a non-fact example")
    gold = _pick(rng, spec.stated_templates).format(rel=rels[r], head=names[h], tail=names[t])
    question = _pick(rng, spec.question_templates).format(rel=rels[r], head=names[h])
    passages, rank = _place_gold(spec, rng, gold, {h, t}, names)
    return {"question": question, "answers": [names[t]], "passages": passages, "fact": False,
            "relation": rels[r], "head": names[h], "gold_rank": rank, "n_distractors": 0}
