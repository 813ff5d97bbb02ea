"""Teacher-forced cross-entropy training with AdamW and linear warmup."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import tensor as T
from ..evalkit import exact_match
from ..reader import PreparedExample, Reader, collate
from ..textproc import Vocab

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    steps: int = 3000
    batch_size: int = 16
    learning_rate: float = 1e-3
    warmup_steps: int = 100
    eval_every: int = 500
    seed: int = 0
    precision: int = 32
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    eval_batch_size: int = 64

    def __post_init__(self):
        if not self.steps >= self.warmup_steps >= 0:
            raise ValueError("need steps >= warmup_steps >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("batch_size and eval_every must be >= 1")


class AdamW:
    """Adam with decoupled weight decay (not applied to biases, gains or 1-d tensors)."""

    def __init__(self, named_params, lr: float, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(named_params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            if self.wd and p.data.ndim >= 2:
                p.data -= (lr * self.wd) * p.data
            p.data -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup over ``warmup_steps`` then constant."""
    if cfg.warmup_steps and step < cfg.warmup_steps:
        return cfg.learning_rate * (step + 1) / cfg.warmup_steps
    return cfg.learning_rate


def clip_grads(params, max_norm: float) -> float:
    sq = sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params if p.grad is not None)
    norm = math.sqrt(sq)
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


def batch_order(n_examples: int, steps: int, batch_size: int, seed: int) -> list[np.ndarray]:
    """Example indices for every step: reshuffled epochs from a seeded stream, independent of the model."""
    rng = T.make_rng(seed ^ 0x5EED)
    out, pool = [], np.zeros(0, dtype=np.int64)
    for _ in range(steps):
        while pool.size < batch_size:
            pool = np.concatenate([pool, rng.permutation(n_examples)])
        out.append(pool[:batch_size])
        pool = pool[batch_size:]
    return out


def batch_hash(ids: np.ndarray) -> str:
    return hashlib.sha1(np.asarray(ids, dtype=np.int64).tobytes()).hexdigest()[:12]


def predict(model: Reader, examples: Sequence[PreparedExample], vocab: Vocab, k: int | None = None,
            batch_size: int = 64) -> list[str]:
    k = k or model.config.k
    preds = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        batch = collate(chunk, k, with_graph=model.config.uses_graph)
        for ids in model.generate(batch):
            preds.append(" ".join(vocab.decode(ids)))
    return preds


def evaluate_em(model: Reader, examples: Sequence[PreparedExample], vocab: Vocab, k: int | None = None,
                batch_size: int = 64) -> float:
    if not examples:
        return 0.0
    preds = predict(model, examples, vocab, k, batch_size)
    return sum(exact_match(p, ex.row["answers"]) for p, ex in zip(preds, examples)) / len(examples)


@dataclass
class TrainResult:
    model: Reader
    log: list[dict] = field(default_factory=list)
    best_dev_em: float = 0.0
    best_step: int = 0
    losses: list[float] = field(default_factory=list)


def _fmt(x: float) -> float:
    return float(f"{x:.6g}")


def train(model: Reader, train_set: Sequence[PreparedExample], cfg: TrainConfig, vocab: Vocab,
          dev_set: Sequence[PreparedExample] = (), out_dir=None, log_name: str = "metrics.jsonl") -> TrainResult:
    """Train in place and restore the best-dev parameters at the end.

    Writes ``metrics.jsonl`` (one record per evaluation) and the best checkpoint
    under ``out_dir`` when given.
    """
    k = model.config.k
    order = batch_order(len(train_set), cfg.steps, cfg.batch_size, cfg.seed)
    opt = AdamW(model.named_parameters(), cfg.learning_rate, weight_decay=cfg.weight_decay)
    params = model.parameters()
    result = TrainResult(model)
    best_state = model.state_dict()
    best_em = -1.0
    if dev_set:
        best_em = evaluate_em(model, dev_set, vocab, k, cfg.eval_batch_size)
    window: list[float] = []
    out_path = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_path / log_name, "w", encoding="utf-8")
    try:
        for step, ids in enumerate(order):
            batch = collate([train_set[i] for i in ids], k, with_graph=model.config.uses_graph)
            model.zero_grad()
            with model.dropout(np.random.default_rng([cfg.seed, step])):
                loss = model.loss(batch)
            value = float(loss.data)
            if not math.isfinite(value):
                norms = {n: float(np.sqrt((p.grad ** 2).sum())) for n, p in model.named_parameters()
                         if p.grad is not None}
                raise TrainingDiverged(f"non-finite loss at step {step}; batch ids {ids.tolist()}; grad norms {norms}")
            loss.backward()
            gnorm = clip_grads(params, cfg.grad_clip)
            if not math.isfinite(gnorm):
                raise TrainingDiverged(f"non-finite gradient norm at step {step}; batch ids {ids.tolist()}")
            opt.step(lr_at(step, cfg))
            model.bump()
            result.losses.append(value)
            window.append(value)
            done = step + 1
            if done % cfg.eval_every == 0 or done == cfg.steps:
                rec = {"step": done, "loss": _fmt(float(np.mean(window))), "lr": _fmt(lr_at(step, cfg)),
                       "batch_hash": batch_hash(ids)}
                window = []
                if dev_set:
                    em = evaluate_em(model, dev_set, vocab, k, cfg.eval_batch_size)
                    rec["dev_em"] = _fmt(em)
                    if em > best_em:
                        best_em, best_state, result.best_step = em, model.state_dict(), done
                else:
                    best_state, result.best_step = model.state_dict(), done
                result.log.append(rec)
                log.info("step %d loss %.4f%s", done, rec["loss"],
                         f" dev_em {rec['dev_em']:.3f}" if "dev_em" in rec else "")
                if log_fh:
                    log_fh.write(json.dumps(rec, sort_keys=True) + "\n")
                    log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()
    model.load_state_dict(best_state)
    result.best_dev_em = max(best_em, 0.0)
    if out_path is not None:
        model.save(out_path / "checkpoint")
    return result
