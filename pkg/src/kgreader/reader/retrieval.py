"""Dual-encoder dot-product passage scoring."""
from __future__ import annotations

import numpy as np

from .. import tensor as T


def score_passage(question_emb, passage_emb) -> float:
    q = np.asarray(question_emb, dtype=np.float64).reshape(-1)
    p = np.asarray(passage_emb, dtype=np.float64).reshape(-1)
    if q.shape != p.shape:
        raise T.ShapeError(f"score_passage: incompatible shapes {q.shape} and {p.shape}")
    return float(q @ p)


def top_k(scores, k: int) -> list[int]:
    """Indices of the k highest scores; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(scores.size), -scores))
    return [int(i) for i in order[:k]]
