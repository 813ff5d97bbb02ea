"""Workspaces, retrieval, ablation runs and the passage-count sweep."""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import tensor as T
from ..evalkit import EvalExample, EvalReport, build_report, exact_match, link_answers
from ..kgstore import KnowledgeGraph, load_triples
from ..reader import ABLATIONS, Preprocessor, PreparedExample, Reader, ReaderConfig, score_passage, top_k
from ..reader.config import coerce, read_kv
from ..textproc import BOS, Lexicon, Vocab, build_lexicon, read_jsonl, read_lexicon_pairs, tokenize
from .synth import SynthSpec, synth_dataset
from .training import TrainConfig, predict, train

log = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")


# ------------------------------------------------------------------ workspace


@dataclass
class Workspace:
    """A dataset directory loaded into memory: KG, vocabulary, lexicon and split rows."""

    kg: KnowledgeGraph
    vocab: Vocab
    lexicon: Lexicon
    splits: dict[str, list[dict]]

    @classmethod
    def load(cls, data_dir) -> "Workspace":
        data_dir = Path(data_dir)
        kg = load_triples(data_dir / "kg.tsv")
        splits = {s: read_jsonl(data_dir / f"{s}.jsonl") for s in SPLITS if (data_dir / f"{s}.jsonl").exists()}
        vocab_path = data_dir / "vocab.txt"
        vocab = Vocab.load(vocab_path) if vocab_path.exists() else build_vocab(splits, kg)
        lexicon = build_lexicon(read_lexicon_pairs(data_dir / "lexicon.tsv"), vocab, kg)
        return cls(kg, vocab, lexicon, splits)

    def preprocessor(self, cfg: ReaderConfig) -> Preprocessor:
        return Preprocessor(self.vocab, self.lexicon, self.kg, cfg.max_doc_len, cfg.max_answer_len)

    def prepare(self, split: str, cfg: ReaderConfig, k: int | None = None) -> list[PreparedExample]:
        pre = self.preprocessor(cfg)
        return [pre.example(row, k or cfg.k) for row in self.splits.get(split, [])]


def build_vocab(splits: dict[str, list[dict]], kg: KnowledgeGraph) -> Vocab:
    """Vocabulary over every question, passage, answer and relation label, in first-seen order."""
    texts = []
    for name in SPLITS:
        for row in splits.get(name, []):
            texts.append(row["question"])
            texts.extend(row["passages"])
            texts.extend(row["answers"])
    texts.extend(label.replace("_", " ") for label in kg.relations)
    return Vocab.build(texts)


def write_workspace(dataset, out_dir) -> Workspace:
    """Write a synthetic dataset plus its vocabulary and return it loaded."""
    out_dir = Path(out_dir)
    dataset.write(out_dir)
    build_vocab(dataset.splits, dataset.kg).save(out_dir / "vocab.txt")
    return Workspace.load(out_dir)


# ------------------------------------------------------------------ retrieval


def embed_texts(model: Reader, texts: Sequence[str], vocab: Vocab) -> np.ndarray:
    """First-position output of the graph-free encoder, with BOS prepended to each text."""
    if not texts:
        return np.zeros((0, model.config.d))
    seqs = [[BOS] + tokenize(t, vocab)[: model.config.max_doc_len - 1] for t in texts]
    width = max(len(s) for s in seqs)
    ids = np.zeros((len(seqs), width), dtype=np.int64)
    mask = np.zeros(ids.shape, dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = True
    with T.no_grad():
        return model.encode_plain(ids, mask).data[:, 0].astype(np.float64)


def retrieve_topk(question_emb, corpus_embs, k: int) -> list[int]:
    """Corpus indices of the k best passages by dot-product score; ties keep corpus order."""
    corpus_embs = np.asarray(corpus_embs)
    n = len(corpus_embs)
    if n == 0:
        raise ValueError("retrieve_topk: empty corpus")
    if k > n:
        log.warning("k=%d exceeds corpus size %d; returning the whole corpus", k, n)
        k = n
    scores = [score_passage(question_emb, p) for p in corpus_embs]
    return top_k(scores, k)


def retrieve_passages(model: Reader, question: str, corpus: Sequence[str], vocab: Vocab, k: int) -> list[str]:
    embs = embed_texts(model, [question, *corpus], vocab)
    return [corpus[i] for i in retrieve_topk(embs[0], embs[1:], k)]


# ------------------------------------------------------------------ experiments


@dataclass
class ExperimentConfig:
    """Everything an ablation or sweep needs; read from a flat ``key = value`` file.

    Keys name fields of :class:`ReaderConfig`, :class:`TrainConfig` or
    :class:`SynthSpec` (the latter under a ``synth_`` prefix), plus the keys below.
    """

    reader: ReaderConfig = field(default_factory=ReaderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)
    variants: tuple[str, ...] = ("full", "baseline", "no_rel")
    seeds: tuple[int, ...] = (0, 1, 2)
    k_values: tuple[int, ...] = (1, 2, 3, 4, 5)
    data_dir: str = ""

    def __post_init__(self):
        bad = [v for v in self.variants if v not in ABLATIONS]
        if bad:
            raise ValueError(f"unknown variants {bad}; choose from {ABLATIONS}")
        if not self.variants or not self.seeds:
            raise ValueError("need at least one variant and one seed")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        reader_keys = {f.name: f.type for f in fields(ReaderConfig)}
        train_keys = {f.name: f.type for f in fields(TrainConfig)}
        synth_keys = {f.name: f.type for f in fields(SynthSpec) if not f.name.endswith("templates")}
        r, t, s, top = {}, {}, {}, {}
        for key, value in raw.items():
            if key.startswith("synth_") and key[6:] in synth_keys:
                name = key[6:]
                if name == "gold_rank_probs":
                    s[name] = tuple(float(x) for x in _split_list(value))
                else:
                    s[name] = coerce(value, synth_keys[name])
            elif key in ("variants",):
                top[key] = tuple(_split_list(value))
            elif key in ("seeds", "k_values"):
                top[key] = tuple(int(x) for x in _split_list(value))
            elif key == "data_dir":
                top[key] = str(value)
            else:
                matched = False
                if key in reader_keys:
                    r[key] = coerce(value, reader_keys[key])
                    matched = True
                if key in train_keys:
                    t[key] = coerce(value, train_keys[key])
                    matched = True
                if not matched:
                    raise ValueError(f"unknown config key {key!r}")
        return cls(reader=ReaderConfig.from_dict(r), train=TrainConfig(**t), synth=SynthSpec(**s), **top)

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        raw = read_kv(path) if path else {}
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(raw)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seeds=(seed,), train=dataclasses.replace(self.train, seed=seed))


def _split_list(value) -> list[str]:
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    return [x for x in str(value).replace(",", " ").split() if x]


def eval_examples(examples: Sequence[PreparedExample], ws: Workspace) -> list[EvalExample]:
    return [EvalExample(ex.row["question"], list(ex.row["answers"]), graphs=list(ex.graphs),
                        answer_entities=link_answers(ex.row["answers"], ws.lexicon, ws.vocab))
            for ex in examples]


def metadata_subsets(rows: Sequence[dict]) -> dict[str, list[bool]]:
    """Subsets defined by generator metadata, when present."""
    if not rows or "n_distractors" not in rows[0]:
        return {}
    return {"relation_discriminative": [bool(r.get("fact")) and r.get("n_distractors", 0) > 0 for r in rows]}


@dataclass
class ExperimentResult:
    reports: dict[int, EvalReport] = field(default_factory=dict)
    mean: dict[str, dict[str, float]] = field(default_factory=dict)
    mean_deltas: dict[str, dict[str, float]] = field(default_factory=dict)
    models: dict[tuple[int, str], Reader] = field(default_factory=dict)

    def to_json(self) -> str:
        obj = {"seeds": {str(s): json.loads(r.to_json()) for s, r in self.reports.items()},
               "mean": self.mean, "mean_deltas": self.mean_deltas}
        return json.dumps(obj, indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        keys = []
        for row in self.mean.values():
            keys += [k for k in row if k not in keys]
        header = ["variant"] + keys
        lines = [[name] + [f"{100 * row[k]:.2f}" for k in keys] for name, row in self.mean.items()]
        widths = [max(len(r[i]) for r in [header] + lines) for i in range(len(header))]
        fmt = lambda cells: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))
        out = [f"mean over seeds {sorted(self.reports)}", fmt(header), "  ".join("-" * w for w in widths)]
        out += [fmt(r) for r in lines]
        return "\n".join(out) + "\n"


def _mean_rows(reports: Sequence[EvalReport], attr: str) -> dict[str, dict[str, float]]:
    out: dict[str, dict[str, float]] = {}
    names = [n for n in getattr(reports[0], attr)]
    for name in names:
        keys = getattr(reports[0], attr)[name].keys()
        out[name] = {k: float(np.mean([getattr(r, attr)[name][k] for r in reports])) for k in keys}
    return out


def run_experiment(cfg: ExperimentConfig, ws: Workspace, out_dir=None, keep_models: bool = False) -> ExperimentResult:
    """Train and evaluate every variant for every seed under one budget.

    All variants of a seed share parameter initialisation streams and consume
    the same sequence of training batches.
    """
    out = Path(out_dir) if out_dir is not None else None
    result = ExperimentResult()
    base_cfg = cfg.reader.replace(vocab_size=len(ws.vocab), precision=cfg.train.precision)
    train_set = ws.prepare("train", base_cfg)
    dev_set = ws.prepare("dev", base_cfg)
    test_set = ws.prepare("test", base_cfg)
    rel_tokens = ws.preprocessor(base_cfg).relation_tokens()
    examples = eval_examples(test_set, ws)
    subsets = metadata_subsets([ex.row for ex in test_set])
    for seed in cfg.seeds:
        tcfg = dataclasses.replace(cfg.train, seed=seed)
        predictions = {}
        for variant in cfg.variants:
            rcfg = base_cfg.replace(ablation=variant)
            model = Reader(rcfg, seed=seed, rel_tokens=rel_tokens)
            run_dir = out / f"seed{seed}" / variant if out is not None else None
            log.info("seed %d variant %s: training %d steps", seed, variant, tcfg.steps)
            train(model, train_set, tcfg, ws.vocab, dev_set, out_dir=run_dir)
            predictions[variant] = predict(model, test_set, ws.vocab)
            if run_dir is not None:
                (run_dir / "predictions.txt").write_text("".join(p + "\n" for p in predictions[variant]),
                                                         encoding="utf-8")
            if keep_models:
                result.models[(seed, variant)] = model
        primary = "full" if "full" in predictions else cfg.variants[0]
        report = build_report(examples, predictions, primary=primary, extra_subsets=subsets)
        result.reports[seed] = report
        if out is not None:
            (out / f"seed{seed}" / "report.json").write_text(report.to_json(), encoding="utf-8")
            (out / f"seed{seed}" / "report.txt").write_text(report.to_table(), encoding="utf-8")
    reports = list(result.reports.values())
    result.mean = _mean_rows(reports, "variants")
    if reports[0].deltas:
        result.mean_deltas = _mean_rows(reports, "deltas")
    if out is not None:
        (out / "summary.json").write_text(result.to_json(), encoding="utf-8")
        (out / "summary.txt").write_text(result.to_table(), encoding="utf-8")
    return result


# ------------------------------------------------------------------ passage-count sweep


@dataclass
class SweepResult:
    k_values: list[int]
    em: list[float]

    def to_table(self) -> str:
        head = "k   " + "  ".join(f"{k:>6d}" for k in self.k_values)
        row = "EM  " + "  ".join(f"{100 * e:6.2f}" for e in self.em)
        return head + "\n" + row + "\n"

    def to_tsv(self) -> str:
        return "".join(f"{k}\t{e:.6f}\n" for k, e in zip(self.k_values, self.em))


def sweep_passages(model: Reader, examples: Sequence[PreparedExample], k_values: Sequence[int], vocab: Vocab,
                   out_dir=None) -> SweepResult:
    """EM of a trained model when reading only the first k passages, per distinct k.

    ``examples`` must have been prepared with at least ``max(k_values)`` passages.
    """
    ks = sorted(set(int(k) for k in k_values))
    if not ks or ks[0] < 1:
        raise ValueError("k values must be positive")
    ems = []
    for k in ks:
        preds = predict(model, examples, vocab, k=k)
        ems.append(sum(exact_match(p, ex.row["answers"]) for p, ex in zip(preds, examples)) / max(len(examples), 1))
        log.info("k=%d EM %.4f", k, ems[-1])
    res = SweepResult(ks, ems)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.txt").write_text(res.to_table(), encoding="utf-8")
        (out / "sweep.tsv").write_text(res.to_tsv(), encoding="utf-8")
    return res


def synth_workspace(spec: SynthSpec, out_dir) -> Workspace:
    return write_workspace(synth_dataset(spec), out_dir)
