"""Indexed store of (head, relation, tail) triples.

Entities and relations get dense ids in first-appearance order. Adjacency is
keyed on the unordered entity pair ``(min id, max id)`` so one lookup answers
both query orders; each entry records which way the underlying triple points.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from pathlib import Path
from typing import Iterable, NamedTuple

log = logging.getLogger(__name__)

FORWARD = "forward"
REVERSE = "reverse"


class TripleParseError(ValueError):
    def __init__(self, path, lineno: int, reason: str):
        super().__init__(f"{path}:{lineno}: {reason}")
        self.lineno = lineno


class UnknownIdError(LookupError):
    pass


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class KnowledgeGraph:
    """Immutable-after-construction triple store.

    Use :meth:`from_triples` or :func:`load_triples`; the mutating ``_add``
    helpers are only called during construction.
    """

    def __init__(self) -> None:
        self.entities: list[str] = []
        self.relations: list[str] = []
        self.triples: list[Triple] = []
        self.entity_index: dict[str, int] = {}
        self.relation_index: dict[str, int] = {}
        self.adjacency: dict[tuple[int, int], list[tuple[int, str]]] = {}
        self._triple_set: set[Triple] = set()
        self._neighbors: dict[int, set[int]] = defaultdict(set)

    @classmethod
    def from_triples(cls, triples: Iterable[tuple[str, str, str]], dedupe: bool = True) -> "KnowledgeGraph":
        kg = cls()
        for h, r, t in triples:
            kg._add(h, r, t, dedupe)
        return kg

    def _intern(self, table: list[str], index: dict[str, int], label: str) -> int:
        i = index.get(label)
        if i is None:
            i = len(table)
            table.append(label)
            index[label] = i
        return i

    def _add(self, h: str, r: str, t: str, dedupe: bool) -> None:
        triple = Triple(self._intern(self.entities, self.entity_index, h),
                        self._intern(self.relations, self.relation_index, r),
                        self._intern(self.entities, self.entity_index, t))
        seen = triple in self._triple_set
        if seen and dedupe:
            return
        self.triples.append(triple)
        if seen:
            return
        self._triple_set.add(triple)
        a, rel, b = triple
        key = (a, b) if a <= b else (b, a)
        direction = FORWARD if a <= b else REVERSE
        self.adjacency.setdefault(key, []).append((rel, direction))
        self._neighbors[a].add(b)
        self._neighbors[b].add(a)

    # ------------------------------------------------------------ lookups

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def entity_id(self, label: str) -> int:
        try:
            return self.entity_index[label]
        except KeyError:
            raise UnknownIdError(f"unknown entity {label!r}") from None

    def relation_id(self, label: str) -> int:
        try:
            return self.relation_index[label]
        except KeyError:
            raise UnknownIdError(f"unknown relation {label!r}") from None

    def has_triple(self, h: int, r: int, t: int) -> bool:
        return Triple(h, r, t) in self._triple_set

    def _check_entity(self, e: int) -> None:
        if not (isinstance(e, int) and 0 <= e < len(self.entities)):
            raise UnknownIdError(f"unknown entity id {e!r}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (self.entities == other.entities and self.relations == other.relations
                and self.triples == other.triples)

    def __repr__(self) -> str:
        return (f"KnowledgeGraph(entities={len(self.entities)}, relations={len(self.relations)}, "
                f"triples={len(self.triples)})")


def load_triples(path, dedupe: bool = True) -> KnowledgeGraph:
    """Read a UTF-8 TSV of ``head<TAB>relation<TAB>tail`` lines; ``#`` lines and blank lines are skipped."""
    path = Path(path)
    rows = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise TripleParseError(path, lineno, f"expected 3 tab-separated fields, got {len(fields)}")
            fields = [f.strip() for f in fields]
            if not all(fields):
                raise TripleParseError(path, lineno, "empty field")
            rows.append(tuple(fields))
    kg = KnowledgeGraph.from_triples(rows, dedupe=dedupe)
    log.debug("loaded %s from %s", kg, path)
    return kg


def save_triples(kg: KnowledgeGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in kg.triples:
            fh.write(f"{kg.entities[h]}\t{kg.relations[r]}\t{kg.entities[t]}\n")


def relations_between(kg: KnowledgeGraph, a: int, b: int) -> list[tuple[int, str]]:
    """All (relation, direction) pairs witnessing a triple (a, r, b) [forward] or (b, r, a) [reverse]."""
    kg._check_entity(a)
    kg._check_entity(b)
    if a <= b:
        return list(kg.adjacency.get((a, b), ()))
    flip = {FORWARD: REVERSE, REVERSE: FORWARD}
    return [(r, flip[d]) for r, d in kg.adjacency.get((b, a), ())]


def neighbors_between(kg: KnowledgeGraph, U: Iterable[int], V: Iterable[int]) -> list[tuple[int, int, list[tuple[int, str]]]]:
    """Every (u, v, relations) with u in U, v in V and at least one connecting triple.

    Pairs inside U x U or V x V are never examined. Output is sorted by (u, v).
    """
    U, V = set(U), set(V)
    for e in U | V:
        kg._check_entity(e)
    out = []
    for u in sorted(U):
        for v in sorted(kg._neighbors.get(u, set()) & V):
            out.append((u, v, relations_between(kg, u, v)))
    return out
