"""Turn raw (question, passages, answers) rows into padded model batches."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..kgstore import KnowledgeGraph
from ..localgraph import LocalGraph, build_graph
from ..textproc import (BOS, EOS, PAD, AnnotatedDocument, Lexicon, Vocab, annotate, link_mentions,
                        tokenize, truncate)
from .gnn import GraphBatch


@dataclass
class PreparedExample:
    docs: list[AnnotatedDocument]
    graphs: list[LocalGraph]
    answer_ids: list[int]
    row: dict = field(default_factory=dict)


class Preprocessor:
    """Tokenise, link, annotate, truncate and build the local graph of every document."""

    def __init__(self, vocab: Vocab, lexicon: Lexicon, kg: KnowledgeGraph, max_doc_len: int, max_answer_len: int):
        self.vocab = vocab
        self.lexicon = lexicon
        self.kg = kg
        self.max_doc_len = max_doc_len
        self.max_answer_len = max_answer_len

    def document(self, question: str, passage: str) -> tuple[AnnotatedDocument, LocalGraph]:
        q = tokenize(question, self.vocab)
        p = tokenize(passage, self.vocab)
        doc = annotate(q, p, link_mentions(q, self.lexicon), link_mentions(p, self.lexicon), self.vocab)
        doc = truncate(doc, self.max_doc_len)
        return doc, build_graph(doc, self.kg)

    def example(self, row: dict, k: int) -> PreparedExample:
        docs, graphs = [], []
        for passage in row["passages"][:k]:
            doc, graph = self.document(row["question"], passage)
            docs.append(doc)
            graphs.append(graph)
        answers = row.get("answers") or [""]
        ans = tokenize(answers[0], self.vocab)[: self.max_answer_len]
        return PreparedExample(docs, graphs, ans, row)

    def relation_tokens(self) -> list[list[int]]:
        return [tokenize(label.replace("_", " "), self.vocab) or [PAD] for label in self.kg.relations]


@dataclass
class Batch:
    ids: np.ndarray        # (B * k, S)
    mask: np.ndarray       # (B * k, S) true on real tokens
    k: int
    n_examples: int
    graphs: GraphBatch | None
    dec_in: np.ndarray     # (B, A)
    dec_out: np.ndarray    # (B, A)
    dec_mask: np.ndarray   # (B, A)
    docs: list = field(default_factory=list)
    doc_graphs: list = field(default_factory=list)


def collate(examples: Sequence[PreparedExample], k: int, with_graph: bool = True) -> Batch:
    B = len(examples)
    S = max([len(d.tokens) for ex in examples for d in ex.docs[:k]] or [1])
    ids = np.full((B * k, S), PAD, dtype=np.int64)
    mask = np.zeros((B * k, S), dtype=bool)
    items, docs, doc_graphs = [], [], []
    for b, ex in enumerate(examples):
        if not ex.docs:
            raise ValueError("example has no passages")
        for j, (doc, graph) in enumerate(zip(ex.docs[:k], ex.graphs[:k])):
            slot = b * k + j
            ids[slot, : len(doc.tokens)] = doc.tokens
            mask[slot, : len(doc.tokens)] = True
            items.append((slot, doc, graph))
            docs.append(doc)
            doc_graphs.append(graph)
    A = max(len(ex.answer_ids) for ex in examples) + 1
    dec_in = np.full((B, A), PAD, dtype=np.int64)
    dec_out = np.full((B, A), PAD, dtype=np.int64)
    dec_mask = np.zeros((B, A), dtype=bool)
    for b, ex in enumerate(examples):
        n = len(ex.answer_ids)
        dec_in[b, 0] = BOS
        dec_in[b, 1 : n + 1] = ex.answer_ids
        dec_out[b, :n] = ex.answer_ids
        dec_out[b, n] = EOS
        dec_mask[b, : n + 1] = True
    gb = GraphBatch.from_docs(items, S) if with_graph else None
    return Batch(ids, mask, k, B, gb, dec_in, dec_out, dec_mask, docs, doc_graphs)
