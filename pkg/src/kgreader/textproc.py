"""Tokenisation, gazetteer entity linking and special-token annotation."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

log = logging.getLogger(__name__)

PAD, UNK, BOS, EOS, Q_ENT, P_ENT = range(6)
RESERVED = ("<pad>", "<unk>", "<s>", "</s>", "<q_ent>", "<p_ent>")

QUESTION = "question"
PASSAGE = "passage"


class MentionOverlapError(ValueError):
    pass


class Vocab:
    """Bijective token <-> id map with six reserved ids at 0..5."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {s: i for i, s in enumerate(self.itos)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        i = self.stoi.get(token)
        if i is None:
            i = len(self.itos)
            self.itos.append(token)
            self.stoi[token] = i
        return i

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.itos[len(RESERVED):]) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        return cls(tok for tok in lines if tok)

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocab":
        v = cls()
        for text in texts:
            for tok in split_words(text):
                v.add(tok)
        return v


def split_words(text: str) -> list[str]:
    return text.lower().split()


def tokenize(text: str, vocab: Vocab) -> list[int]:
    return [vocab.id(w) for w in split_words(text)]


# ------------------------------------------------------------------ linking

Lexicon = dict[tuple[int, ...], int]


def link_mentions(tokens: Sequence[int], lexicon: Lexicon) -> list[tuple[int, int, int]]:
    """Greedy longest-match, left to right, non-overlapping.

    Returns ``(entity, start, end)`` triples with ``end`` exclusive, in ascending start order.
    """
    if not lexicon:
        return []
    max_len = max(len(k) for k in lexicon)
    out = []
    i, n = 0, len(tokens)
    while i < n:
        for width in range(min(max_len, n - i), 0, -1):
            ent = lexicon.get(tuple(tokens[i:i + width]))
            if ent is not None:
                out.append((ent, i, i + width))
                i += width
                break
        else:
            i += 1
    return out


def build_lexicon(pairs: Iterable[tuple[str, str]], vocab: Vocab, kg) -> Lexicon:
    """Map tokenised surface forms to KG entity ids.

    Surface forms with out-of-vocabulary words, and labels missing from the KG, are skipped.
    Later duplicates of a surface form are ignored (the lexicon is assumed unambiguous).
    """
    lex: Lexicon = {}
    skipped = 0
    for surface, label in pairs:
        key = tuple(tokenize(surface, vocab))
        ent = kg.entity_index.get(label)
        if not key or UNK in key or ent is None:
            skipped += 1
            continue
        lex.setdefault(key, ent)
    if skipped:
        log.debug("lexicon: skipped %d unusable entries", skipped)
    return lex


def read_lexicon_pairs(path) -> list[tuple[str, str]]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise ValueError(f"{path}:{lineno}: expected surface<TAB>entity")
            pairs.append((parts[0].strip(), parts[1].strip()))
    return pairs


def write_lexicon_pairs(pairs: Iterable[tuple[str, str]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for surface, label in pairs:
            fh.write(f"{surface}\t{label}\n")


# ------------------------------------------------------------------ annotation


@dataclass(frozen=True)
class MentionSpan:
    entity: int
    side: str
    start: int
    end: int
    special_index: int


@dataclass
class AnnotatedDocument:
    tokens: list[int]
    spans: list[MentionSpan]
    t: int  # question part length, special tokens included
    o: int  # passage part length, special tokens included
    I_s: list[int] = field(default_factory=list)
    I_e: list[int] = field(default_factory=list)
    I_t: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.I_s and self.spans:
            self.I_s = [s.start for s in self.spans]
            self.I_e = [s.end for s in self.spans]
            self.I_t = [s.special_index for s in self.spans]

    def __len__(self) -> int:
        return len(self.tokens)


def _check_mentions(mentions, n: int, side: str) -> list[tuple[int, int, int]]:
    ms = sorted(mentions, key=lambda m: (m[1], m[2]))
    prev_end = 0
    for ent, s, e in ms:
        if not (0 <= s < e <= n):
            raise ValueError(f"{side} mention ({s}, {e}) outside 0..{n}")
        if s < prev_end:
            raise MentionOverlapError(f"overlapping {side} mentions at token {s}")
        prev_end = e
    return ms


def _insert(tokens, mentions, marker, base, side):
    out, spans = [], []
    cursor = 0
    for ent, s, e in mentions:
        out.extend(tokens[cursor:s])
        special = base + len(out)
        out.append(marker)
        out.extend(tokens[s:e])
        spans.append(MentionSpan(ent, side, special + 1, base + len(out), special))
        cursor = e
    out.extend(tokens[cursor:])
    return out, spans


def annotate(question_tokens: Sequence[int], passage_tokens: Sequence[int],
             q_mentions, p_mentions, vocab: Vocab | None = None) -> AnnotatedDocument:
    """Concatenate question and passage, inserting Q_ENT / P_ENT before every mention."""
    qm = _check_mentions(q_mentions, len(question_tokens), QUESTION)
    pm = _check_mentions(p_mentions, len(passage_tokens), PASSAGE)
    q_out, q_spans = _insert(list(question_tokens), qm, Q_ENT, 0, QUESTION)
    p_out, p_spans = _insert(list(passage_tokens), pm, P_ENT, len(q_out), PASSAGE)
    return AnnotatedDocument(q_out + p_out, q_spans + p_spans, t=len(q_out), o=len(p_out))


def truncate(doc: AnnotatedDocument, max_len: int) -> AnnotatedDocument:
    """Cut the token sequence to ``max_len``; spans ending past the cut are dropped."""
    if len(doc.tokens) <= max_len:
        return doc
    spans = [s for s in doc.spans if s.end <= max_len]
    t = min(doc.t, max_len)
    return AnnotatedDocument(doc.tokens[:max_len], spans, t=t, o=max_len - t)


# ------------------------------------------------------------------ dataset files


def read_jsonl(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            row = json.loads(line)
            for key in ("question", "answers", "passages"):
                if key not in row:
                    raise ValueError(f"{path}:{lineno}: missing field {key!r}")
            rows.append(row)
    return rows


def write_jsonl(rows: Iterable[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
