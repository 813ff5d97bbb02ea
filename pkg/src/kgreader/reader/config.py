"""Reader hyperparameters and the plain-text key/value config format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

ABLATIONS = ("full", "no_rel", "no_att", "baseline")


@dataclass
class ReaderConfig:
    vocab_size: int = 0
    d: int = 32
    enc_layers: int = 4
    L: int = 1  # Enc_bot = layers [0, L), Enc_top = [L, enc_layers)
    dec_layers: int = 2
    heads: int = 4
    N: int = 2  # GNN layers
    M: int = 2  # GNN heads
    k: int = 5
    max_doc_len: int = 48
    max_answer_len: int = 4
    ffn_mult: int = 4
    activation: str = "relu"
    attn_norm: str = "softmax"
    aggregate: str = "neighbor"
    ablation: str = "full"
    precision: int = 32
    dropout: float = 0.0  # on embeddings and sublayer outputs, training only

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0 < self.L < self.enc_layers:
            raise ValueError(f"need 0 < L < enc_layers, got L={self.L}, enc_layers={self.enc_layers}")
        if self.d % self.heads:
            raise ValueError(f"d={self.d} not divisible by heads={self.heads}")
        for name in ("N", "M", "k", "dec_layers", "max_doc_len", "max_answer_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        checks = {
            "activation": ("relu", "sigmoid"),
            "attn_norm": ("softmax", "ratio"),
            "aggregate": ("neighbor", "self"),
            "ablation": ABLATIONS,
            "precision": (32, 64),
        }
        for name, allowed in checks.items():
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")

    @property
    def uses_graph(self) -> bool:
        return self.ablation != "baseline"

    @property
    def dtype(self):
        import numpy as np
        return np.float64 if self.precision == 64 else np.float32

    def replace(self, **changes) -> "ReaderConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_dict(cls, raw: dict) -> "ReaderConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key in known:
                kwargs[key] = coerce(value, known[key].type)
        return cls(**kwargs)


def coerce(value, type_name):
    if not isinstance(value, str):
        return value
    if type_name in ("int", int):
        return int(value)
    if type_name in ("float", float):
        return float(value)
    if type_name in ("bool", bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    return value


def read_kv(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_kv(pairs: dict, path) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in pairs.items()), encoding="utf-8")
