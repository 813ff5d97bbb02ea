"""Independent reference implementations shared by the unit and acceptance tests."""
import numpy as np

from kgreader.kgstore import KnowledgeGraph
from kgreader.localgraph import Edge, LocalGraph, NodeRef
from kgreader.textproc import annotate


def brute_graph(doc, kg: KnowledgeGraph) -> LocalGraph:
    """Scan every (question entity, passage entity) pair against every triple, then drop isolated nodes."""
    q_ents, p_ents = {}, {}
    for j, s in enumerate(doc.spans):
        side = q_ents if s.side == "question" else p_ents
        side.setdefault(s.entity, []).append(j)
    edges = {}
    for u in q_ents:
        for v in p_ents:
            rels = []
            for h, r, t in kg.triples:
                if ((h, t) == (u, v) or (h, t) == (v, u)) and r not in rels:
                    rels.append(r)
            if rels:
                edges[(u, v)] = rels
    alive_u = [e for e in q_ents if any(u == e for u, _ in edges)]
    alive_v = [e for e in p_ents if any(v == e for _, v in edges)]
    alive_u.sort(key=lambda e: doc.spans[q_ents[e][0]].start)
    alive_v.sort(key=lambda e: doc.spans[p_ents[e][0]].start)
    U = [NodeRef(e, "question", tuple(q_ents[e])) for e in alive_u]
    V = [NodeRef(e, "passage", tuple(p_ents[e])) for e in alive_v]
    E = sorted((Edge(alive_u.index(u), alive_v.index(v), tuple(sorted(r))) for (u, v), r in edges.items()),
               key=lambda e: (e.u, e.v))
    return LocalGraph(U, V, E)


def canonical(graph: LocalGraph):
    return (graph.U, graph.V, [(e.u, e.v, tuple(sorted(e.relations))) for e in graph.edges])


def random_fixture(rng: np.random.Generator, n_entities=8, n_relations=3, n_triples=12, vocab_offset=6):
    """A random KG plus an annotated document whose mentions point at KG entities."""
    names = [f"e{i}" for i in range(n_entities)]
    triples = [(names[rng.integers(n_entities)], f"r{rng.integers(n_relations)}", names[rng.integers(n_entities)])
               for _ in range(n_triples)]
    kg = KnowledgeGraph.from_triples(triples)
    def side(length):
        toks = list(rng.integers(vocab_offset, vocab_offset + 20, size=length))
        ments, pos = [], 0
        while pos < length:
            if rng.random() < 0.4:
                w = int(rng.integers(1, 3))
                if pos + w <= length:
                    ments.append((int(rng.integers(kg.n_entities)), pos, pos + w))
                    pos += w
                    continue
            pos += 1
        return [int(t) for t in toks], ments
    q, qm = side(int(rng.integers(0, 8)))
    p, pm = side(int(rng.integers(0, 12)))
    return kg, annotate(q, p, qm, pm)


def numeric_grad(f, x: np.ndarray, eps=1e-6) -> np.ndarray:
    """Central finite differences of scalar ``f()`` with respect to array ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def rel_error(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))))


def toy_graph(n_u: int, n_v: int, edges, width: int = 1):
    """(doc, graph) where node i is one ``width``-token mention; ``edges`` holds (u, v, relations)."""
    tokens, spans = [], []
    from kgreader.textproc import MentionSpan, AnnotatedDocument, PASSAGE, QUESTION, Q_ENT, P_ENT
    for i in range(n_u + n_v):
        side, marker = (QUESTION, Q_ENT) if i < n_u else (PASSAGE, P_ENT)
        spans.append(MentionSpan(i, side, len(tokens) + 1, len(tokens) + 1 + width, len(tokens)))
        tokens += [marker] + [10 + i] * width
    doc = AnnotatedDocument(tokens, spans, t=n_u * (width + 1), o=n_v * (width + 1))
    U = [NodeRef(i, "question", (i,)) for i in range(n_u)]
    V = [NodeRef(n_u + j, "passage", (n_u + j,)) for j in range(n_v)]
    return doc, LocalGraph(U, V, [Edge(u, v, tuple(r)) for u, v, r in edges])


def random_toy_graph(rng: np.random.Generator, n_relations=3, max_side=4):
    n_u, n_v = int(rng.integers(1, max_side + 1)), int(rng.integers(1, max_side + 1))
    edges = []
    for u in range(n_u):
        for v in range(n_v):
            if rng.random() < 0.5:
                k = int(rng.integers(1, n_relations + 1))
                edges.append((u, v, sorted(rng.choice(n_relations, size=k, replace=False).tolist())))
    if not edges:
        edges = [(0, 0, [0])]
    return toy_graph(n_u, n_v, edges)


def loop_gnn_layer(H, graph: LocalGraph, rel_table, self_rel, W_t, b_t, W_e, activation="relu",
                   norm="softmax", ablation="full"):
    """Per-node, per-head loops over explicit neighbour lists; no shared code with the library."""
    H = np.asarray(H, dtype=np.float64)
    n, d = H.shape
    n_u = len(graph.U)
    nbrs = [[(i, None)] for i in range(n)]  # (source, relation id); None = self-loop
    for e in graph.edges:
        u, v = e.u, n_u + e.v
        for r in e.relations:
            nbrs[v].append((u, r))
            nbrs[u].append((v, r))
    out = np.zeros((n, d))
    for m in range(W_t.shape[0]):
        z = H @ W_t[m] + b_t[m]
        a = np.maximum(z, 0.0) if activation == "relu" else 1.0 / (1.0 + np.exp(-z))
        for v in range(n):
            scores = []
            for u, r in nbrs[v]:
                rv = self_rel if r is None else rel_table[r]
                feats = [a[v], a[u]] if ablation == "no_rel" else [a[v], rv, a[u]]
                scores.append(float(np.concatenate(feats) @ W_e[m][:, 0]))
            scores = np.array(scores)
            if ablation == "no_att":
                alpha = np.full(len(scores), 1.0 / len(scores))
            elif norm == "softmax":
                alpha = np.exp(scores - scores.max())
                alpha /= alpha.sum()
            else:
                alpha = scores / scores.sum()
            for (u, _), w in zip(nbrs[v], alpha):
                out[v] += w * a[u]
    return out


def tiny_examples(rng: np.random.Generator, n_examples=2, k=2, vocab_size=24, n_relations=3, graphs=True,
                  answer_len=2):
    """Prepared examples over toy documents; each document gets a random non-empty graph when ``graphs``."""
    from kgreader.reader import PreparedExample
    examples = []
    for _ in range(n_examples):
        docs, gs = [], []
        for _ in range(k):
            if graphs:
                doc, g = random_toy_graph(rng, n_relations=n_relations, max_side=2)
            else:
                from kgreader.localgraph import LocalGraph
                doc, g = toy_graph(1, 1, [])[0], LocalGraph()
            # toy_graph fills content tokens with 10 + i; spread them over the vocabulary
            doc.tokens = [t if t < 6 else int(rng.integers(6, vocab_size)) for t in doc.tokens]
            docs.append(doc)
            gs.append(g)
        ans = [int(x) for x in rng.integers(6, vocab_size, size=answer_len)]
        examples.append(PreparedExample(docs, gs, ans, {"answers": ["x"]}))
    return examples


def norm_rel_error(a, b, floor=1e-4) -> float:
    """||a - b|| / max(floor, ||a|| + ||b||): per-tensor relative error.

    Robust to entries that are zero by symmetry. The floor keeps tensors whose
    true gradient is zero (attention key biases) from comparing
    finite-difference noise, about 1e-9 at eps 1e-6, against itself: below it
    the check becomes an absolute one.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(floor, np.linalg.norm(a) + np.linalg.norm(b)))


def gradcheck_setup(seed=0, scale=0.1):
    """64-bit reader (d=8, two encoder layers split after the first, N=2, M=2) on one 3-node graph.

    Parameters are jittered by N(0, scale) so that no gradient sits at the
    finite-difference noise floor, as it would at the small default init.
    """
    from kgreader.reader import PreparedExample, Reader, ReaderConfig, collate
    cfg = ReaderConfig(vocab_size=24, d=8, heads=2, enc_layers=2, L=1, dec_layers=1, N=2, M=2, k=1,
                       max_doc_len=16, max_answer_len=3, precision=64)
    rng = np.random.default_rng(seed)
    model = Reader(cfg, seed=seed, rel_tokens=[[7], [8, 9], [10]])
    for p in model.params.values():
        p.data = p.data + rng.normal(0, scale, size=p.data.shape)
    doc, graph = toy_graph(1, 2, [(0, 0, [0]), (0, 1, [1, 2])])
    doc.tokens = [t if t < 6 else int(rng.integers(6, 24)) for t in doc.tokens]
    batch = collate([PreparedExample([doc], [graph], [11, 12], {})], 1)

    def loss():
        model.bump()  # parameters are perturbed in place; the relation buffer must follow
        return model.loss(batch)

    return model, loss
