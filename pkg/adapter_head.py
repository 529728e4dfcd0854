#!/usr/bin/env python3
"""
Structural adapter and sequence head.

The adapter lets language-model embeddings of the masked CDR attend to the
structural context from the graph encoder (CDR rows plus the nearest
antigen rows). Queries come from the language model, keys and values from
the encoder. The head maps refined rows to 25 logits, of which only the
first 20 (amino acids) are decoded or scored.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from errors import LabelOutOfRange, ShapeMismatch
from numeric_core import (
    Param,
    RngStream,
    Tensor,
    dropout,
    gather,
    glorot,
    layer_norm,
    linear,
    log_softmax,
    silu,
    softmax,
)
from structure_io import AMINO_ACIDS, NUM_AA, VOCAB_SIZE

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdapterConfig:
    d_a: int = 640
    n_heads: int = 8
    ffn_ratio: int = 2
    dropout: float = 0.2

    def __post_init__(self):
        if self.d_a <= 0 or self.n_heads <= 0 or self.d_a % self.n_heads:
            raise ValueError(f"d_a ({self.d_a}) must be a positive multiple of n_heads ({self.n_heads})")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.d_a // self.n_heads


class StructuralAdapter:
    def __init__(self, cfg: AdapterConfig, d_esm: int, d_gnn: int, rng: RngStream, dtype=np.float64):
        self.cfg = cfg
        self.d_esm = d_esm
        self.d_gnn = d_gnn
        self.dtype = np.dtype(dtype)
        gen = rng.child("adapter").generator()
        d_a, d_ff = cfg.d_a, cfg.d_a * cfg.ffn_ratio
        shapes = {
            "W_down": (d_esm, d_a),
            "W_gnn": (d_gnn, d_a),
            "Wq": (d_a, d_a),
            "Wk": (d_a, d_a),
            "Wv": (d_a, d_a),
            "Wo": (d_a, d_a),
            "W1": (d_a, d_ff),
            "W2": (d_ff, d_a),
            "W_up": (d_a, d_esm),
        }
        self.params = {f"adapter.{k}": Param(f"adapter.{k}", glorot(gen, *s, self.dtype)) for k, s in shapes.items()}
        for name, value in (("b1", np.zeros(d_ff)), ("b2", np.zeros(d_a)),
                            ("ln1_g", np.ones(d_a)), ("ln1_b", np.zeros(d_a)),
                            ("ln2_g", np.ones(d_a)), ("ln2_b", np.zeros(d_a))):
            self.params[f"adapter.{name}"] = Param(f"adapter.{name}", value.astype(self.dtype))

    def p(self, name: str) -> Param:
        return self.params[f"adapter.{name}"]

    def parameters(self) -> dict[str, Param]:
        return dict(self.params)

    def attention(self, q: Tensor, k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
        """Multi-head cross-attention; returns (L x d_a output before Wo, H x L x M weights)."""
        heads, dh = self.cfg.n_heads, self.cfg.head_dim
        n_q, n_k = q.shape[0], k.shape[0]
        qh = q.reshape(n_q, heads, dh).transpose(1, 0, 2)
        kh = k.reshape(n_k, heads, dh).transpose(1, 0, 2)
        vh = v.reshape(n_k, heads, dh).transpose(1, 0, 2)
        weights = softmax(qh @ kh.transpose(0, 2, 1) * (1.0 / np.sqrt(dh)), axis=-1)
        out = (weights @ vh).transpose(1, 0, 2).reshape(n_q, heads * dh)
        return out, weights

    def forward(self, h_esm: Tensor, h_ctx: Tensor, rng: Optional[RngStream] = None,
                training: bool = False) -> tuple[Tensor, Tensor]:
        if h_esm.ndim != 2 or h_esm.shape[1] != self.d_esm:
            raise ShapeMismatch("adapter_forward", f"H_esm {h_esm.shape}, expected (L, {self.d_esm})")
        if h_ctx.ndim != 2 or h_ctx.shape[1] != self.d_gnn or h_ctx.shape[0] == 0:
            raise ShapeMismatch("adapter_forward", f"H_ctx {h_ctx.shape}, expected (M>0, {self.d_gnn})")
        rate = self.cfg.dropout
        q = h_esm @ self.p("W_down")
        kv = h_ctx @ self.p("W_gnn")
        attended, weights = self.attention(q @ self.p("Wq"), kv @ self.p("Wk"), kv @ self.p("Wv"))
        attended = dropout(attended @ self.p("Wo"), rate, rng, training)
        z = layer_norm(q + attended, self.p("ln1_g"), self.p("ln1_b"))
        ffn = linear(silu(linear(z, self.p("W1"), self.p("b1"))), self.p("W2"), self.p("b2"))
        z = layer_norm(z + dropout(ffn, rate, rng, training), self.p("ln2_g"), self.p("ln2_b"))
        return z @ self.p("W_up"), weights

    __call__ = forward


class SequenceHead:
    """LayerNorm -> Linear(d_esm, d_a) -> SiLU -> dropout -> Linear(d_a, 25)."""

    def __init__(self, d_esm: int, d_hidden: int, rate: float, rng: RngStream, dtype=np.float64):
        self.rate = rate
        self.dtype = np.dtype(dtype)
        gen = rng.child("head").generator()
        self.params = {
            "head.ln_g": Param("head.ln_g", np.ones(d_esm, self.dtype)),
            "head.ln_b": Param("head.ln_b", np.zeros(d_esm, self.dtype)),
            "head.W1": Param("head.W1", glorot(gen, d_esm, d_hidden, self.dtype)),
            "head.b1": Param("head.b1", np.zeros(d_hidden, self.dtype)),
            "head.W2": Param("head.W2", glorot(gen, d_hidden, VOCAB_SIZE, self.dtype)),
            "head.b2": Param("head.b2", np.zeros(VOCAB_SIZE, self.dtype)),
        }

    def parameters(self) -> dict[str, Param]:
        return dict(self.params)

    def forward(self, h_refined: Tensor, rng: Optional[RngStream] = None, training: bool = False) -> Tensor:
        p = self.params
        x = layer_norm(h_refined, p["head.ln_g"], p["head.ln_b"])
        x = dropout(silu(linear(x, p["head.W1"], p["head.b1"])), self.rate, rng, training)
        return linear(x, p["head.W2"], p["head.b2"])

    __call__ = forward


def greedy_decode(logits) -> str:
    """Per-position argmax over the 20 amino-acid columns; ties go to the lowest index."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    picks = np.argmax(data[:, :NUM_AA], axis=1)
    return "".join(AMINO_ACIDS[i] for i in picks)


def aa_log_probs(logits: Tensor) -> Tensor:
    """Log-softmax restricted to the amino-acid columns; special tokens never enter the denominator."""
    return log_softmax(logits[:, :NUM_AA], axis=-1)


def loss_seq(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy over designed positions."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= NUM_AA):
        raise LabelOutOfRange(f"labels must be amino-acid codes in [0, {NUM_AA}), got {labels.tolist()}")
    if logits.shape[0] != len(labels):
        raise ShapeMismatch("loss_seq", f"{logits.shape[0]} logit rows for {len(labels)} labels")
    picked = gather(aa_log_probs(logits), (np.arange(len(labels)), labels))
    return -picked.mean()
