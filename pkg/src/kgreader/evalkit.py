"""Exact-match scoring, the fact-related subset and report rendering."""
from __future__ import annotations

import json
import unicodedata
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

from .localgraph import LocalGraph, StatsReport, graph_stats
from .textproc import Lexicon, Vocab, tokenize

_ARTICLES = {"a", "an", "the"}


def _strip_punct(s: str) -> str:
    return "".join(ch for ch in s if not unicodedata.category(ch).startswith("P"))


def normalize_answer(s: str) -> str:
    """Lowercase, drop punctuation, drop standalone articles, collapse whitespace."""
    s = _strip_punct(s.lower())
    return " ".join(w for w in s.split() if w not in _ARTICLES)


def exact_match(prediction: str, gold_answers: Sequence[str]) -> int:
    if not gold_answers:
        raise ValueError("exact_match needs at least one gold answer")
    pred = normalize_answer(prediction)
    return int(any(pred == normalize_answer(g) for g in gold_answers))


@dataclass
class EvalExample:
    question: str
    gold_answers: list[str]
    prediction: str = ""
    graphs: list[LocalGraph] = field(default_factory=list)
    answer_entities: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.gold_answers:
            raise ValueError("EvalExample needs at least one gold answer")


def link_answers(gold_answers: Iterable[str], lexicon: Lexicon, vocab: Vocab) -> list[int]:
    """Entities whose surface form equals a whole normalised gold answer."""
    out = []
    for g in gold_answers:
        key = tuple(tokenize(normalize_answer(g), vocab))
        ent = lexicon.get(key)
        if ent is not None and ent not in out:
            out.append(ent)
    return out


def fact_related(example: EvalExample) -> bool:
    """True iff some graph has an edge whose passage-side endpoint is an answer entity."""
    answers = set(example.answer_entities)
    if not answers:
        return False
    for g in example.graphs:
        for e in g.edges:
            if g.V[e.v].entity in answers:
                return True
    return False


# ------------------------------------------------------------------ reports


@dataclass
class EvalReport:
    n_examples: int = 0
    overall_em: float = 0.0
    subset_em: float = 0.0
    subset_fraction: float = 0.0
    subset_size: int = 0
    primary: str = ""
    variants: dict[str, dict[str, float]] = field(default_factory=dict)
    deltas: dict[str, dict[str, float]] = field(default_factory=dict)
    graph_stats: dict = field(default_factory=lambda: StatsReport().as_dict())

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        return render_table(self)


def _em(flags: Sequence[int], mask: Sequence[bool] | None = None) -> float:
    if mask is None:
        return sum(flags) / len(flags) if flags else 0.0
    picked = [f for f, m in zip(flags, mask) if m]
    return sum(picked) / len(picked) if picked else 0.0


def build_report(examples: Sequence[EvalExample], predictions: Mapping[str, Sequence[str]],
                 primary: str | None = None, baseline: str | None = "baseline",
                 extra_subsets: Mapping[str, Sequence[bool]] | None = None) -> EvalReport:
    """Per-variant EM overall and on the fact-related subset, plus deltas against ``baseline``.

    ``predictions`` maps variant name to one prediction per example. Headline
    fields describe ``primary`` (default: "full" when present, else the first variant).
    """
    n = len(examples)
    for name, preds in predictions.items():
        if len(preds) != n:
            raise ValueError(f"variant {name!r}: {len(preds)} predictions for {n} examples")
    extra = dict(extra_subsets or {})
    for name, mask in extra.items():
        if len(mask) != n:
            raise ValueError(f"subset {name!r}: {len(mask)} flags for {n} examples")
    if n == 0:
        return EvalReport()
    subset = [fact_related(ex) for ex in examples]
    variants: dict[str, dict[str, float]] = {}
    for name, preds in predictions.items():
        flags = [exact_match(p, ex.gold_answers) for p, ex in zip(preds, examples)]
        row = {"em": _em(flags), "subset_em": _em(flags, subset)}
        for sub_name, mask in extra.items():
            row[f"{sub_name}_em"] = _em(flags, mask)
        variants[name] = row
    if primary is None:
        primary = "full" if "full" in variants else next(iter(variants), "")
    deltas = {}
    if baseline in variants:
        base = variants[baseline]
        for name, row in variants.items():
            if name != baseline:
                deltas[name] = {key: row[key] - base[key] for key in row}
    head = variants.get(primary, {"em": 0.0, "subset_em": 0.0})
    stats = graph_stats([ex.graphs for ex in examples]).as_dict()
    return EvalReport(n, head["em"], head["subset_em"], sum(subset) / n, sum(subset), primary,
                      variants, deltas, stats)


def render_table(report: EvalReport) -> str:
    keys = []
    for row in report.variants.values():
        for k in row:
            if k not in keys:
                keys.append(k)
    header = ["variant"] + keys + [f"d_{k}" for k in keys if report.deltas]
    lines = []
    for name, row in report.variants.items():
        cells = [name] + [f"{100 * row[k]:.2f}" for k in keys]
        if report.deltas:
            d = report.deltas.get(name)
            cells += [f"{100 * d[k]:+.2f}" if d else "-" for k in keys]
        lines.append(cells)
    widths = [max(len(r[i]) for r in [header] + lines) for i in range(len(header))]
    fmt = lambda cells: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))
    out = [f"examples: {report.n_examples}  fact-related: {report.subset_size} "
           f"({100 * report.subset_fraction:.1f}%)  primary: {report.primary or '-'}"]
    out.append(fmt(header))
    out.append("  ".join("-" * w for w in widths))
    out.extend(fmt(r) for r in lines)
    gs = report.graph_stats
    out.append("graphs/question {:.2f} +- {:.2f}  q-nodes {:.2f} +- {:.2f}  p-nodes {:.2f} +- {:.2f}  "
               "nodes/graph {:.2f} +- {:.2f}".format(*gs["graphs_per_question"], *gs["question_nodes"],
                                                     *gs["passage_nodes"], *gs["nodes_per_graph"]))
    return "\n".join(out) + "\n"
