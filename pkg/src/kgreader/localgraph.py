"""Per-document bipartite graphs between question entities and passage entities."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .kgstore import KnowledgeGraph, neighbors_between
from .textproc import PASSAGE, QUESTION, AnnotatedDocument

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NodeRef:
    entity: int
    side: str
    span_indices: tuple[int, ...]


@dataclass(frozen=True)
class Edge:
    u: int  # index into LocalGraph.U
    v: int  # index into LocalGraph.V
    relations: tuple[int, ...]


@dataclass
class LocalGraph:
    U: list[NodeRef] = field(default_factory=list)
    V: list[NodeRef] = field(default_factory=list)
    edges: list[Edge] = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return len(self.U) + len(self.V)

    def is_empty(self) -> bool:
        return not self.edges

    @property
    def nodes(self) -> list[NodeRef]:
        """U nodes first, then V nodes; the row order of node-attribute matrices."""
        return self.U + self.V


def _group_by_entity(doc: AnnotatedDocument, side: str, n_entities: int) -> tuple[dict[int, list[int]], int]:
    groups: dict[int, list[int]] = {}
    unknown = 0
    for j, span in enumerate(doc.spans):
        if span.side != side:
            continue
        if not 0 <= span.entity < n_entities:
            unknown += 1
            continue
        groups.setdefault(span.entity, []).append(j)
    return groups, unknown


def build_graph(doc: AnnotatedDocument, kg: KnowledgeGraph) -> LocalGraph:
    """Connect question-side and passage-side entities that share at least one KG triple.

    Degree-zero nodes are dropped. An entity seen on both sides gives two nodes.
    """
    q_groups, qu = _group_by_entity(doc, QUESTION, kg.n_entities)
    p_groups, pu = _group_by_entity(doc, PASSAGE, kg.n_entities)
    if qu or pu:
        log.warning("build_graph: skipped %d spans with entities unknown to the KG", qu + pu)
    pairs = neighbors_between(kg, q_groups, p_groups)
    if not pairs:
        return LocalGraph()
    keep_u = {u for u, _, _ in pairs}
    keep_v = {v for _, v, _ in pairs}
    # dicts preserve first-span order
    U = [NodeRef(e, QUESTION, tuple(s)) for e, s in q_groups.items() if e in keep_u]
    V = [NodeRef(e, PASSAGE, tuple(s)) for e, s in p_groups.items() if e in keep_v]
    u_pos = {n.entity: i for i, n in enumerate(U)}
    v_pos = {n.entity: i for i, n in enumerate(V)}
    # (a, r, b) and (b, r, a) both witness relation r once
    edges = [Edge(u_pos[u], v_pos[v], tuple(dict.fromkeys(r for r, _ in rels))) for u, v, rels in pairs]
    edges.sort(key=lambda e: (e.u, e.v))
    return LocalGraph(U, V, edges)


# ------------------------------------------------------------------ statistics


@dataclass
class StatsReport:
    graphs_per_question: tuple[float, float] = (0.0, 0.0)
    question_nodes: tuple[float, float] = (0.0, 0.0)
    passage_nodes: tuple[float, float] = (0.0, 0.0)
    nodes_per_graph: tuple[float, float] = (0.0, 0.0)
    n_questions: int = 0
    n_graphs: int = 0

    def as_dict(self) -> dict:
        return {
            "graphs_per_question": list(self.graphs_per_question),
            "question_nodes": list(self.question_nodes),
            "passage_nodes": list(self.passage_nodes),
            "nodes_per_graph": list(self.nodes_per_graph),
            "n_questions": self.n_questions,
            "n_graphs": self.n_graphs,
        }


def _mean_std(xs: Sequence[float]) -> tuple[float, float]:
    if not len(xs):
        return 0.0, 0.0
    a = np.asarray(xs, dtype=np.float64)
    return float(a.mean()), float(a.std())


def graph_stats(groups: Iterable[Sequence[LocalGraph]]) -> StatsReport:
    """Mean and population std of graph sizes; ``groups`` holds one graph list per question.

    Only non-empty graphs are counted.
    """
    groups = [list(g) for g in groups]
    if not groups:
        return StatsReport()
    per_q, nu, nv, nn = [], [], [], []
    for graphs in groups:
        kept = [g for g in graphs if not g.is_empty()]
        per_q.append(len(kept))
        for g in kept:
            nu.append(len(g.U))
            nv.append(len(g.V))
            nn.append(g.n_nodes)
    return StatsReport(_mean_std(per_q), _mean_std(nu), _mean_std(nv), _mean_std(nn),
                       n_questions=len(groups), n_graphs=len(nn))


# ------------------------------------------------------------------ serialisation


def graph_to_json(graph: LocalGraph, kg: KnowledgeGraph, **meta) -> dict:
    def node(n: NodeRef) -> dict:
        return {"entity": kg.entities[n.entity], "spans": list(n.span_indices)}

    obj = dict(meta)
    obj["u_nodes"] = [node(n) for n in graph.U]
    obj["v_nodes"] = [node(n) for n in graph.V]
    obj["edges"] = [{"u": e.u, "v": e.v, "relations": [kg.relations[r] for r in e.relations]}
                    for e in graph.edges]
    return obj


def graph_from_json(obj: dict, kg: KnowledgeGraph) -> LocalGraph:
    U = [NodeRef(kg.entity_id(n["entity"]), QUESTION, tuple(n["spans"])) for n in obj["u_nodes"]]
    V = [NodeRef(kg.entity_id(n["entity"]), PASSAGE, tuple(n["spans"])) for n in obj["v_nodes"]]
    edges = [Edge(e["u"], e["v"], tuple(kg.relation_id(r) for r in e["relations"])) for e in obj["edges"]]
    return LocalGraph(U, V, edges)


def dumps_graph(graph: LocalGraph, kg: KnowledgeGraph, **meta) -> str:
    return json.dumps(graph_to_json(graph, kg, **meta), sort_keys=True)
