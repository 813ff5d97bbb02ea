"""Split-encoder / decoder reader with graph fusion between the encoder halves.

Transformer blocks are pre-LayerNorm. The encoder's final LayerNorm sits after
its last layer, so the bottom half hands raw residual states to the graph
branch. Output logits reuse the token embedding table.
"""
from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import tensor as T
from ..textproc import BOS, EOS, PAD
from . import gnn
from .config import ReaderConfig, read_kv, write_kv

NEG_INF = -1e9


class ContractError(ValueError):
    pass


@dataclass
class EncoderStates:
    H_b: T.Tensor
    H_u: T.Tensor
    H: T.Tensor
    H_G: T.Tensor | None = None


# ------------------------------------------------------------------ parameter layout


def _attn_params(prefix, d, rng, dtype):
    out = {}
    for name in ("wq", "wk", "wv", "wo"):
        out[f"{prefix}.{name}"] = T.normal_init(rng, (d, d), std=d ** -0.5, dtype=dtype)
        out[f"{prefix}.b{name[1]}"] = T.zeros((d,), dtype=dtype, requires_grad=True)
    return out


def _ln_params(prefix, d, dtype):
    return {f"{prefix}.g": T.ones((d,), dtype=dtype, requires_grad=True),
            f"{prefix}.b": T.zeros((d,), dtype=dtype, requires_grad=True)}


def _ffn_params(prefix, d, hidden, rng, dtype):
    return {f"{prefix}.w1": T.normal_init(rng, (d, hidden), std=d ** -0.5, dtype=dtype),
            f"{prefix}.b1": T.zeros((hidden,), dtype=dtype, requires_grad=True),
            f"{prefix}.w2": T.normal_init(rng, (hidden, d), std=hidden ** -0.5, dtype=dtype),
            f"{prefix}.b2": T.zeros((d,), dtype=dtype, requires_grad=True)}


def init_params(cfg: ReaderConfig, seed: int) -> dict[str, T.Tensor]:
    """Seeded N(0, 1/fan_in) weights, zero biases, unit LayerNorm gains.

    Embedding tables (tokens, positions, the self-relation vector) use
    N(0, 1/d), so the tied output logits begin at unit scale and relation
    vectors match the scale of token embeddings they are compared with. A
    flat N(0, 0.02) at desk widths leaves attention uniform and the query/key
    gradients tiny, which stalls training for thousands of steps.

    Transformer and graph parameters come from separate child streams, so every
    ablation of one seed shares identical transformer weights.
    """
    if cfg.vocab_size <= 6:
        raise ContractError("vocab_size must be set before initialising parameters")
    tf_ss, g_ss = np.random.SeedSequence(int(seed)).spawn(2)
    rng = np.random.Generator(np.random.PCG64(tf_ss))
    grng = np.random.Generator(np.random.PCG64(g_ss))
    d, dt = cfg.d, cfg.dtype
    hidden = cfg.ffn_mult * d
    p: dict[str, T.Tensor] = {
        "tok_emb": T.normal_init(rng, (cfg.vocab_size, d), std=d ** -0.5, dtype=dt),
        "enc_pos": T.normal_init(rng, (cfg.max_doc_len, d), std=d ** -0.5, dtype=dt),
        "dec_pos": T.normal_init(rng, (cfg.max_answer_len + 1, d), std=d ** -0.5, dtype=dt),
    }
    for i in range(cfg.enc_layers):
        p.update(_ln_params(f"enc.{i}.ln1", d, dt))
        p.update(_attn_params(f"enc.{i}.attn", d, rng, dt))
        p.update(_ln_params(f"enc.{i}.ln2", d, dt))
        p.update(_ffn_params(f"enc.{i}.ffn", d, hidden, rng, dt))
    p.update(_ln_params("enc.final_ln", d, dt))
    for i in range(cfg.dec_layers):
        p.update(_ln_params(f"dec.{i}.ln1", d, dt))
        p.update(_attn_params(f"dec.{i}.self", d, rng, dt))
        p.update(_ln_params(f"dec.{i}.ln2", d, dt))
        p.update(_attn_params(f"dec.{i}.cross", d, rng, dt))
        p.update(_ln_params(f"dec.{i}.ln3", d, dt))
        p.update(_ffn_params(f"dec.{i}.ffn", d, hidden, rng, dt))
    p.update(_ln_params("dec.final_ln", d, dt))
    if cfg.uses_graph:
        M = cfg.M
        for n in range(cfg.N):
            p[f"gnn.{n}.W_t"] = T.normal_init(grng, (M, d, d), std=d ** -0.5, dtype=dt)
            p[f"gnn.{n}.b_t"] = T.zeros((M, d), dtype=dt, requires_grad=True)
        width = 2 * d if cfg.ablation == "no_rel" else 3 * d
        for n in range(cfg.N):
            p[f"gnn.{n}.W_e"] = T.normal_init(grng, (M, width, 1), std=width ** -0.5, dtype=dt)
        p["gnn.self_rel"] = T.normal_init(grng, (d,), std=d ** -0.5, dtype=dt)
    for name, t in p.items():
        t.name = name
    return p


# ------------------------------------------------------------------ transformer pieces


def _ln(p, prefix, x):
    return T.layer_norm(x, p[prefix + ".g"], p[prefix + ".b"])


def _split_heads(x, heads):
    B, S, d = x.shape
    return T.transpose(T.reshape(x, (B, S, heads, d // heads)), (0, 2, 1, 3))


def attention(p, prefix, xq, xkv, bias, heads):
    """Multi-head scaled dot-product attention; ``bias`` is an additive numpy mask broadcastable to (B, H, Sq, Sk)."""
    B, Sq, d = xq.shape
    q = _split_heads(xq @ p[prefix + ".wq"] + p[prefix + ".bq"], heads)
    k = _split_heads(xkv @ p[prefix + ".wk"] + p[prefix + ".bk"], heads)
    v = _split_heads(xkv @ p[prefix + ".wv"] + p[prefix + ".bv"], heads)
    scores = (q @ T.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(d // heads))
    if bias is not None:
        scores = scores + bias
    ctx = T.softmax(scores, axis=-1) @ v
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (B, Sq, d))
    return ctx @ p[prefix + ".wo"] + p[prefix + ".bo"]


def ffn(p, prefix, x):
    h = T.relu(x @ p[prefix + ".w1"] + p[prefix + ".b1"])
    return h @ p[prefix + ".w2"] + p[prefix + ".b2"]


def _keep(x):
    return x


def encoder_layer(p, i, x, bias, heads, drop=_keep):
    h = _ln(p, f"enc.{i}.ln1", x)
    x = x + drop(attention(p, f"enc.{i}.attn", h, h, bias, heads))
    return x + drop(ffn(p, f"enc.{i}.ffn", _ln(p, f"enc.{i}.ln2", x)))


def key_bias(mask: np.ndarray, dtype) -> np.ndarray:
    """(B, S) validity mask -> (B, 1, 1, S) additive bias."""
    return np.where(mask, 0.0, NEG_INF).astype(dtype)[:, None, None, :]


# ------------------------------------------------------------------ the model


class Reader:
    """Parameters, configuration and the relation-embedding buffer.

    ``rel_tokens`` lists the token ids of every relation label, indexed by relation id.
    """

    def __init__(self, config: ReaderConfig, seed: int = 0, rel_tokens: list[list[int]] | None = None,
                 params: dict[str, T.Tensor] | None = None):
        self.config = config
        self.seed = seed
        self.params = params if params is not None else init_params(config, seed)
        self.rel_tokens = [list(r) for r in (rel_tokens or [])]
        self.version = 0
        self._rel_cache: tuple[int, bool, T.Tensor] | None = None
        self._drop_rng: np.random.Generator | None = None

    # parameter management
    def named_parameters(self):
        return list(self.params.items())

    def parameters(self):
        return list(self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def bump(self) -> None:
        """Mark parameters as changed; invalidates the relation buffer."""
        self.version += 1

    @contextlib.contextmanager
    def dropout(self, rng: np.random.Generator | None):
        """Apply ``config.dropout`` inside the block, drawing masks from ``rng``; off everywhere else."""
        prev, self._drop_rng = self._drop_rng, rng
        try:
            yield self
        finally:
            self._drop_rng = prev

    def _drop(self, x: T.Tensor) -> T.Tensor:
        rate = self.config.dropout
        if self._drop_rng is None or rate == 0.0:
            return x
        keep = self._drop_rng.random(x.shape) >= rate
        return x * (keep / (1.0 - rate)).astype(self.config.dtype)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise ContractError(f"checkpoint/parameter mismatch: {sorted(missing)[:5]}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ContractError(f"{k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=self.config.dtype)
        self.bump()

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        T.save_checkpoint(directory / "model.ckpt", self.params.items())
        write_kv({**_config_pairs(self.config), "seed": self.seed}, directory / "model.cfg")
        with open(directory / "relations.txt", "w", encoding="utf-8") as fh:
            for toks in self.rel_tokens:
                fh.write(" ".join(map(str, toks)) + "\n")

    @classmethod
    def load(cls, directory) -> "Reader":
        directory = Path(directory)
        raw = read_kv(directory / "model.cfg")
        cfg = ReaderConfig.from_dict(raw)
        rel = [[int(x) for x in line.split()]
               for line in (directory / "relations.txt").read_text(encoding="utf-8").splitlines()]
        model = cls(cfg, seed=int(raw.get("seed", 0)), rel_tokens=rel)
        model.load_state_dict(T.load_checkpoint(directory / "model.ckpt"))
        return model

    # ---------------------------------------------------------- encoder halves

    def embed(self, ids: np.ndarray) -> T.Tensor:
        S = ids.shape[1]
        if S > self.config.max_doc_len:
            raise ContractError(f"document length {S} exceeds max_doc_len={self.config.max_doc_len}")
        return T.embed(self.params["tok_emb"], ids) + T.take(self.params["enc_pos"], np.arange(S), axis=0)

    def encode_bot(self, ids: np.ndarray, mask: np.ndarray) -> T.Tensor:
        x = self._drop(self.embed(ids))
        bias = key_bias(mask, self.config.dtype)
        for i in range(self.config.L):
            x = encoder_layer(self.params, i, x, bias, self.config.heads, self._drop)
        return x

    def encode_top(self, H_u: T.Tensor, mask: np.ndarray) -> T.Tensor:
        bias = key_bias(mask, self.config.dtype)
        x = H_u
        for i in range(self.config.L, self.config.enc_layers):
            x = encoder_layer(self.params, i, x, bias, self.config.heads, self._drop)
        return _ln(self.params, "enc.final_ln", x)

    def encode_plain(self, ids: np.ndarray, mask: np.ndarray) -> T.Tensor:
        """Graph-free encoder: every layer, then the final LayerNorm."""
        return self.encode_top(self.encode_bot(ids, mask), mask)

    # ---------------------------------------------------------- relations

    def relation_embeddings(self) -> T.Tensor:
        """(n_relations, d) table of mean encoder outputs over each label's tokens.

        Cached per parameter version; recomputed when a graph-recording forward
        needs it but the cached copy was built under ``no_grad``.
        """
        want_grad = T.grad_enabled()
        cache = self._rel_cache
        if cache is not None and cache[0] == self.version and (cache[1] or not want_grad):
            return cache[2]
        d = self.config.d
        if not self.rel_tokens:
            table = T.zeros((0, d), dtype=self.config.dtype)
        else:
            width = max(len(r) for r in self.rel_tokens)
            ids = np.full((len(self.rel_tokens), width), PAD, dtype=np.int64)
            mask = np.zeros(ids.shape, dtype=bool)
            for i, toks in enumerate(self.rel_tokens):
                ids[i, :len(toks)] = toks
                mask[i, :len(toks)] = True
            with self.dropout(None):
                out = self.encode_plain(ids, mask)
            w = (mask / mask.sum(axis=1, keepdims=True)).astype(self.config.dtype)[:, :, None]
            table = T.sum_(out * w, axis=1)
        self._rel_cache = (self.version, want_grad, table)
        return table

    def relation_embedding(self, r: int) -> T.Tensor:
        if not 0 <= r < len(self.rel_tokens):
            raise LookupError(f"unknown relation id {r}")
        return T.take(self.relation_embeddings(), [r], axis=0)

    def relation_table(self) -> T.Tensor:
        """Relation embeddings with the learned self-relation appended as the last row."""
        rel = self.relation_embeddings()
        return T.concat([rel, T.reshape(self.params["gnn.self_rel"], (1, self.config.d))], axis=0)

    # ---------------------------------------------------------- graph branch

    def gnn_layers(self):
        cfg = self.config
        return [(self.params[f"gnn.{n}.W_t"], self.params[f"gnn.{n}.b_t"], self.params[f"gnn.{n}.W_e"])
                for n in range(cfg.N)]

    def run_gnn(self, gb: gnn.GraphBatch, X: T.Tensor) -> T.Tensor:
        cfg = self.config
        needs_rel = cfg.ablation not in ("no_rel", "no_att")
        rel_table = self.relation_table() if needs_rel and gb.n_nodes else None
        return gnn.run_gnn(gb, X, rel_table, self.gnn_layers(), cfg)

    def encode_documents(self, ids: np.ndarray, mask: np.ndarray, gb: gnn.GraphBatch | None) -> EncoderStates:
        H_b = self.encode_bot(ids, mask)
        H_u, H_G = H_b, None
        if self.config.uses_graph and gb is not None and gb.n_nodes:
            X = gnn.extract_node_attrs(H_b, gb)
            H_G = self.run_gnn(gb, X)
            H_u = gnn.fuse(H_b, H_G, gb)
        return EncoderStates(H_b, H_u, self.encode_top(H_u, mask), H_G)

    # ---------------------------------------------------------- decoder

    def decode(self, memory: T.Tensor, mem_mask: np.ndarray, prefix: np.ndarray) -> T.Tensor:
        """Logits (B, A, V) for every prefix position, cross-attending to ``memory`` (B, S, d)."""
        cfg, p = self.config, self.params
        if memory.shape[1] == 0 or not mem_mask.any(axis=1).all():
            raise ContractError("decode: empty document set")
        B, A = prefix.shape
        if A > cfg.max_answer_len + 1:
            raise ContractError(f"decode: prefix length {A} exceeds max_answer_len + 1")
        x = self._drop(T.embed(p["tok_emb"], prefix) + T.take(p["dec_pos"], np.arange(A), axis=0))
        causal = np.triu(np.full((A, A), NEG_INF), k=1).astype(cfg.dtype)[None, None]
        cross_bias = key_bias(mem_mask, cfg.dtype)
        for i in range(cfg.dec_layers):
            h = _ln(p, f"dec.{i}.ln1", x)
            x = x + self._drop(attention(p, f"dec.{i}.self", h, h, causal, cfg.heads))
            h = _ln(p, f"dec.{i}.ln2", x)
            x = x + self._drop(attention(p, f"dec.{i}.cross", h, memory, cross_bias, cfg.heads))
            x = x + self._drop(ffn(p, f"dec.{i}.ffn", _ln(p, f"dec.{i}.ln3", x)))
        h = _ln(p, "dec.final_ln", x)
        return h @ T.transpose(p["tok_emb"], (1, 0))

    def next_token_distribution(self, memory: T.Tensor, mem_mask: np.ndarray, prefix: np.ndarray) -> np.ndarray:
        with T.no_grad():
            logits = self.decode(memory, mem_mask, prefix)
            return T.softmax(T.Tensor(logits.data[:, -1]), axis=-1).data

    # ---------------------------------------------------------- full passes

    def memory(self, batch) -> tuple[T.Tensor, np.ndarray]:
        states = self.encode_documents(batch.ids, batch.mask, batch.graphs)
        B, k = batch.n_examples, batch.k
        S, d = batch.ids.shape[1], self.config.d
        mem = T.reshape(states.H, (B, k * S, d))
        return mem, batch.mask.reshape(B, k * S)

    def loss(self, batch) -> T.Tensor:
        mem, mem_mask = self.memory(batch)
        logits = self.decode(mem, mem_mask, batch.dec_in)
        return T.cross_entropy(logits, batch.dec_out, batch.dec_mask)

    def generate(self, batch) -> list[list[int]]:
        """Greedy decoding from BOS until EOS or ``max_answer_len`` tokens."""
        with T.no_grad():
            mem, mem_mask = self.memory(batch)
            B = batch.n_examples
            prefix = np.full((B, 1), BOS, dtype=np.int64)
            done = np.zeros(B, dtype=bool)
            outs: list[list[int]] = [[] for _ in range(B)]
            for _ in range(self.config.max_answer_len):
                logits = self.decode(mem, mem_mask, prefix).data[:, -1]
                nxt = logits.argmax(axis=-1)
                for b in range(B):
                    if not done[b]:
                        if nxt[b] == EOS:
                            done[b] = True
                        else:
                            outs[b].append(int(nxt[b]))
                if done.all():
                    break
                prefix = np.concatenate([prefix, nxt[:, None]], axis=1)
            return outs


def _config_pairs(cfg: ReaderConfig) -> dict:
    from dataclasses import fields
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}
