#!/usr/bin/env python3
"""
Protein language model backends producing the evolutionary embeddings of
the masked CDR.

Two backends share one interface:
- ToyPlmBackend: a seeded, frozen token table followed by local-window
  self-attention blocks whose weights can be unfrozen top-down
- CacheBackend: reads embeddings computed elsewhere from `.evoc` files

Both take the full masked heavy-chain sequence and return only the CDR rows.
"""

from __future__ import annotations

import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol

import numpy as np

from errors import CacheMiss, ConfigError, OutOfRange, ShapeMismatch, UnknownToken
from numeric_core import (
    Param,
    RngStream,
    Tensor,
    glorot,
    layer_norm,
    linear,
    silu,
    softmax,
)
from structure_io import AA_INDEX, MASK_CHAR, MASK_TOKEN, UNK_CHAR, UNK_TOKEN

logger = logging.getLogger(__name__)

CACHE_MAGIC = b"EVOC"
CACHE_VERSION = 1
CACHE_HEADER = struct.Struct("<III")
CACHE_SUFFIX = ".evoc"
MASKED_SCORE = -1e9


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "toy"  # or "cache"
    d_esm: int = 128
    n_layers: int = 4
    context_radius: int = 8
    unfreeze_top: int = 4
    cache_dir: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("toy", "cache"):
            raise ValueError(f"backend kind must be 'toy' or 'cache', got {self.kind!r}")
        if self.d_esm <= 0 or self.n_layers < 0 or self.context_radius < 0:
            raise ValueError("backend sizes must be non-negative")
        if not 0 <= self.unfreeze_top <= self.n_layers:
            raise ValueError(f"unfreeze_top must be in [0, {self.n_layers}]")


def tokenize(seq: str) -> np.ndarray:
    """Map a masked sequence to token ids: 20 amino acids, '?' mask, 'X' unknown."""
    tokens = np.empty(len(seq), dtype=np.int64)
    for pos, ch in enumerate(seq):
        if ch == MASK_CHAR:
            tokens[pos] = MASK_TOKEN
        elif ch == UNK_CHAR:
            tokens[pos] = UNK_TOKEN
        elif ch in AA_INDEX:
            tokens[pos] = AA_INDEX[ch]
        else:
            raise UnknownToken(ch, pos)
    return tokens


class PlmBackend(Protocol):
    d_esm: int

    def embed_masked(self, seq: str, cdr_range: tuple[int, int], key: Optional[str] = None) -> Tensor: ...

    def parameters(self) -> dict[str, Param]: ...

    def unfreeze_top(self, k: int) -> None: ...

    def freeze_all(self) -> None: ...


def positional_encoding(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    rate = 1.0 / np.power(10000.0, (2 * (np.arange(dim) // 2)) / dim)
    angles = pos * rate[None, :]
    return np.where(np.arange(dim) % 2 == 0, np.sin(angles), np.cos(angles))


class _AttentionBlock:
    """Pre-norm single-head self-attention restricted to |i - j| <= radius, then a SiLU FFN."""

    def __init__(self, prefix: str, d: int, radius: int, gen: np.random.Generator, dtype):
        self.radius = radius
        self.scale = 1.0 / np.sqrt(d)
        self.params = {
            "Wq": glorot(gen, d, d, dtype),
            "Wk": glorot(gen, d, d, dtype),
            "Wv": glorot(gen, d, d, dtype),
            "Wo": glorot(gen, d, d, dtype),
            "ln1_g": np.ones(d, dtype),
            "ln1_b": np.zeros(d, dtype),
            "ln2_g": np.ones(d, dtype),
            "ln2_b": np.zeros(d, dtype),
            "W1": glorot(gen, d, 2 * d, dtype),
            "b1": np.zeros(2 * d, dtype),
            "W2": glorot(gen, 2 * d, d, dtype),
            "b2": np.zeros(d, dtype),
        }
        self.params = {k: Param(f"{prefix}.{k}", v, frozen=True) for k, v in self.params.items()}

    def set_frozen(self, frozen: bool) -> None:
        for p in self.params.values():
            p.frozen = frozen

    @property
    def frozen(self) -> bool:
        return all(p.frozen for p in self.params.values())

    def __call__(self, x: Tensor) -> Tensor:
        p = self.params
        n = x.shape[0]
        offsets = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :])
        bias = Tensor(np.where(offsets <= self.radius, 0.0, MASKED_SCORE).astype(x.dtype))
        z = layer_norm(x, p["ln1_g"], p["ln1_b"])
        scores = (z @ p["Wq"]) @ (z @ p["Wk"]).T * self.scale + bias
        x = x + (softmax(scores, axis=-1) @ (z @ p["Wv"])) @ p["Wo"]
        z = layer_norm(x, p["ln2_g"], p["ln2_b"])
        return x + linear(silu(linear(z, p["W1"], p["b1"])), p["W2"], p["b2"])


class ToyPlmBackend:
    """
    Deterministic stand-in for a pretrained protein language model.

    The token table is always frozen. Blocks start frozen and are unfrozen
    from the top by unfreeze_top(k). Each output row depends only on tokens
    within n_layers * context_radius positions.
    """

    def __init__(self, seed: int = 0, d_esm: int = 128, n_layers: int = 4, context_radius: int = 8,
                 dtype=np.float64):
        self.d_esm = d_esm
        self.n_layers = n_layers
        self.context_radius = context_radius
        self.dtype = np.dtype(dtype)
        rng = RngStream(seed).child("plm_backend")
        gen = rng.generator()
        table = gen.normal(0.0, 1.0, size=(25, d_esm)).astype(self.dtype)
        self.token_table = Param("backend.token_table", table, frozen=True)
        self.blocks = [
            _AttentionBlock(f"backend.layer{k + 1}", d_esm, context_radius, rng.child(f"layer{k + 1}").generator(),
                            self.dtype)
            for k in range(n_layers)
        ]

    @property
    def receptive_field(self) -> int:
        return self.n_layers * self.context_radius

    def parameters(self) -> dict[str, Param]:
        params = {self.token_table.name: self.token_table}
        for block in self.blocks:
            params.update({p.name: p for p in block.params.values()})
        return params

    def frozen_layers(self) -> list[bool]:
        return [b.frozen for b in self.blocks]

    def unfreeze_top(self, k: int) -> None:
        if not 0 <= k <= self.n_layers:
            raise OutOfRange(f"unfreeze_top({k}) on a backend with {self.n_layers} layers")
        for idx, block in enumerate(self.blocks):
            block.set_frozen(idx < self.n_layers - k)
        logger.info(f"Backend: top {k} of {self.n_layers} layers trainable")

    def freeze_all(self) -> None:
        self.unfreeze_top(0)

    def unfreeze_all(self) -> None:
        self.unfreeze_top(self.n_layers)

    def encode(self, tokens: np.ndarray) -> Tensor:
        x = self.token_table[np.asarray(tokens, dtype=np.int64)]
        if self.blocks:
            x = x + Tensor(positional_encoding(len(tokens), self.d_esm).astype(self.dtype))
        for block in self.blocks:
            x = block(x)
        return x

    def embed_masked(self, seq: str, cdr_range: tuple[int, int], key: Optional[str] = None) -> Tensor:
        tokens = tokenize(seq)
        start, end = cdr_range
        if not np.all(tokens[start:end] == MASK_TOKEN):
            logger.warning(f"{key or 'sequence'}: CDR rows {start}-{end} are not all mask tokens")
        return self.encode(tokens)[np.arange(start, end)]


# --- Embedding cache ---------------------------------------------------------

def cache_path(cache_dir: Path | str, complex_id: str, cdr: str) -> Path:
    return Path(cache_dir) / f"{complex_id}.{cdr}{CACHE_SUFFIX}"


def write_cache_entry(path: Path | str, matrix: np.ndarray) -> Path:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise ShapeMismatch("write_cache_entry", f"expected a 2-D matrix, got shape {matrix.shape}")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(CACHE_HEADER.pack(CACHE_VERSION, matrix.shape[0], matrix.shape[1]))
        f.write(matrix.tobytes(order="C"))
    tmp.replace(path)
    return path


def read_cache_entry(path: Path | str) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise CacheMiss(f"no cached embedding at {path}")
    raw = path.read_bytes()
    if raw[:4] != CACHE_MAGIC:
        raise ShapeMismatch("read_cache_entry", f"{path} does not start with {CACHE_MAGIC!r}")
    version, rows, cols = CACHE_HEADER.unpack_from(raw, 4)
    if version != CACHE_VERSION:
        raise ShapeMismatch("read_cache_entry", f"{path}: unsupported cache version {version}")
    body = raw[4 + CACHE_HEADER.size:]
    if len(body) != rows * cols * 4:
        raise ShapeMismatch("read_cache_entry", f"{path}: header says {rows}x{cols}, body has {len(body)} bytes")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).copy()


class CacheBackend:
    """Embeddings precomputed by an external model, one file per (complex, CDR)."""

    def __init__(self, cache_dir: Path | str, d_esm: int, cdr: str = "H3", dtype=np.float64,
                 capacity: int = 256):
        self.cache_dir = Path(cache_dir)
        self.d_esm = d_esm
        self.cdr = cdr
        self.dtype = np.dtype(dtype)
        self.n_layers = 0
        self.capacity = capacity
        # key -> read-only matrix, least recently used first
        self._memory: OrderedDict[str, np.ndarray] = OrderedDict()
        self.hits = 0
        self.misses = 0

    def _load(self, key: str) -> np.ndarray:
        if key in self._memory:
            self._memory.move_to_end(key)
            self.hits += 1
            return self._memory[key]
        self.misses += 1
        matrix = read_cache_entry(cache_path(self.cache_dir, key, self.cdr)).astype(self.dtype)
        matrix.setflags(write=False)
        self._memory[key] = matrix
        if len(self._memory) > self.capacity:
            evicted, _ = self._memory.popitem(last=False)
            logger.debug(f"Evicted {evicted} from the embedding memory cache")
        return matrix

    def parameters(self) -> dict[str, Param]:
        return {}

    def unfreeze_top(self, k: int) -> None:
        if k != 0:
            raise OutOfRange(f"cache backend has no trainable layers (asked for {k})")

    def freeze_all(self) -> None:
        pass

    def unfreeze_all(self) -> None:
        pass

    def embed_masked(self, seq: str, cdr_range: tuple[int, int], key: Optional[str] = None) -> Tensor:
        tokenize(seq)
        if key is None:
            raise CacheMiss("cache backend needs the complex id to locate an entry")
        matrix = self._load(key)
        start, end = cdr_range
        if matrix.shape != (end - start, self.d_esm):
            raise ShapeMismatch(
                "embed_masked", f"{key}.{self.cdr}: cached {matrix.shape}, expected {(end - start, self.d_esm)}"
            )
        return Tensor(matrix)


def make_backend(cfg: BackendConfig, seed: int, cdr: str = "H3", dtype=np.float64):
    if cfg.kind == "cache":
        if not cfg.cache_dir:
            raise ConfigError("cache_dir is required for the cache backend", field="backend.cache_dir")
        return CacheBackend(cfg.cache_dir, cfg.d_esm, cdr=cdr, dtype=dtype)
    return ToyPlmBackend(seed, cfg.d_esm, cfg.n_layers, cfg.context_radius, dtype=dtype)
