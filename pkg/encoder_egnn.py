#!/usr/bin/env python3
"""
Relation-aware E(3)-equivariant graph encoder.

Each layer computes per-edge messages from the two endpoint embeddings, the
4x4 Gram matrix of backbone displacements and the edge features, sums them
per edge type with type-specific projections, and updates embeddings with a
skip connection. Coordinates move along displacement vectors scaled by a
per-type scalar MLP of the message, so they rotate and translate with the
input while embeddings stay invariant.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from errors import NonFiniteActivation, ShapeMismatch
from graph_builder import EDGE_FEATURE_DIM, N_EDGE_TYPES, HeteroGraph, NodeKind
from numeric_core import Param, RngStream, Tensor, concat, glorot, linear, segment_sum, silu
from structure_io import VOCAB_SIZE

logger = logging.getLogger(__name__)

GRAM_FORMS = {"channel": 16, "outer3": 9}


@dataclass(frozen=True)
class EncoderConfig:
    n_layers: int = 5
    d_gnn: int = 256
    aa_embed_dim: int = 32
    n_edge_types: int = N_EDGE_TYPES
    gram_form: str = "channel"
    displacement_scale: float = 0.1

    def __post_init__(self):
        if self.n_layers < 0 or self.d_gnn <= 0 or self.aa_embed_dim <= 0:
            raise ValueError("encoder dimensions must be positive")
        if self.n_edge_types != N_EDGE_TYPES:
            raise ValueError(f"encoder expects {N_EDGE_TYPES} edge types, got {self.n_edge_types}")
        if self.gram_form not in GRAM_FORMS:
            raise ValueError(f"gram_form must be one of {sorted(GRAM_FORMS)}")


@dataclass
class EncoderOutput:
    h: Tensor  # (N, d_gnn)
    coords_hat: Tensor  # (N, 4, 3)


def gram_block(delta: Tensor, form: str = "channel") -> Tensor:
    """
    Rotation-invariant summary of (E, 4, 3) displacements.

    "channel": the 4x4 Gram matrix dX dX^T flattened to 16 values.
    "outer3": the 3x3 outer product of the Calpha displacement, which is not
    invariant and is only kept for comparison runs.
    """
    if form == "outer3":
        ca = delta[:, 1:2, :]
        return (ca.transpose(0, 2, 1) @ ca).reshape(delta.shape[0], 9)
    return (delta @ delta.transpose(0, 2, 1)).reshape(delta.shape[0], 16)


class EgnnEncoder:
    def __init__(self, cfg: EncoderConfig, rng: RngStream, edge_dim: int = EDGE_FEATURE_DIM, dtype=np.float64):
        self.cfg = cfg
        self.edge_dim = edge_dim
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Param] = {}
        d, a = cfg.d_gnn, cfg.aa_embed_dim
        gen = rng.child("encoder").generator()

        self._add("aa_embed", gen.normal(0.0, 1.0 / np.sqrt(a), size=(VOCAB_SIZE, a)))
        self._add("epitope_embed", gen.normal(0.0, 1.0 / np.sqrt(a), size=(a,)))
        self._add("W_in", glorot(gen, a, d, self.dtype))
        self._add("b_in", np.zeros(d))
        self._add("global_embed", gen.normal(0.0, 1.0 / np.sqrt(d), size=(3, d)))

        msg_in = 2 * d + GRAM_FORMS[cfg.gram_form] + edge_dim
        for layer in range(1, cfg.n_layers + 1):
            p = f"layer{layer}"
            self._add(f"{p}.W_msg1", glorot(gen, msg_in, d, self.dtype))
            self._add(f"{p}.b_msg1", np.zeros(d))
            self._add(f"{p}.W_msg2", glorot(gen, d, d, self.dtype))
            self._add(f"{p}.b_msg2", np.zeros(d))
            for t in range(N_EDGE_TYPES):
                self._add(f"{p}.W_type{t}", glorot(gen, d, d, self.dtype))
                self._add(f"{p}.W_coord{t}", glorot(gen, d, d, self.dtype))
                self._add(f"{p}.b_coord{t}", np.zeros(d))
                self._add(f"{p}.w_coord_out{t}", np.zeros((d, 1)))
                self._add(f"{p}.b_coord_out{t}", np.zeros(1))
            self._add(f"{p}.W_node1", glorot(gen, 2 * d, d, self.dtype))
            self._add(f"{p}.b_node1", np.zeros(d))
            self._add(f"{p}.W_node2", glorot(gen, d, d, self.dtype))
            self._add(f"{p}.b_node2", np.zeros(d))

    def _add(self, name: str, value: np.ndarray) -> None:
        full = f"encoder.{name}"
        self.params[full] = Param(full, np.asarray(value, dtype=self.dtype))

    def p(self, name: str) -> Param:
        return self.params[f"encoder.{name}"]

    def parameters(self) -> dict[str, Param]:
        return dict(self.params)

    # --- pieces ---------------------------------------------------------------

    def init_node_embeddings(self, graph: HeteroGraph, cdr_mask: np.ndarray, epitope_mask: np.ndarray) -> Tensor:
        """aa embedding (zeroed on CDR rows, + epitope_embed on epitope rows) projected to d_gnn; tokens get their own rows."""
        n = graph.n_nodes
        is_global = graph.node_kind == NodeKind.GLOB
        keep = (~np.asarray(cdr_mask, bool) & ~is_global).astype(self.dtype)[:, None]
        epi = (np.asarray(epitope_mask, bool) & ~is_global).astype(self.dtype)[:, None]
        raw = self.p("aa_embed")[graph.aa] * Tensor(keep) + Tensor(epi) * self.p("epitope_embed")
        residue_rows = linear(raw, self.p("W_in"), self.p("b_in"))

        token_pick = np.zeros((n, 3), dtype=self.dtype)
        token_pick[is_global, graph.chain_pos[is_global]] = 1.0
        non_global = (~is_global).astype(self.dtype)[:, None]
        return residue_rows * Tensor(non_global) + Tensor(token_pick) @ self.p("global_embed")

    def message(self, layer: int, h_src: Tensor, h_dst: Tensor, delta: Tensor, edge_feats: Tensor) -> Tensor:
        p = f"layer{layer}"
        gram = gram_block(delta * self.cfg.displacement_scale, self.cfg.gram_form)
        x = concat([h_src, h_dst, gram, edge_feats], axis=-1)
        x = silu(linear(x, self.p(f"{p}.W_msg1"), self.p(f"{p}.b_msg1")))
        return silu(linear(x, self.p(f"{p}.W_msg2"), self.p(f"{p}.b_msg2")))

    def node_update(self, layer: int, h: Tensor, aggregated: Tensor) -> Tensor:
        p = f"layer{layer}"
        x = concat([h, aggregated], axis=-1)
        x = silu(linear(x, self.p(f"{p}.W_node1"), self.p(f"{p}.b_node1")))
        return h + linear(x, self.p(f"{p}.W_node2"), self.p(f"{p}.b_node2"))

    def coord_scalar(self, layer: int, edge_type: int, m: Tensor) -> Tensor:
        p = f"layer{layer}"
        x = silu(linear(m, self.p(f"{p}.W_coord{edge_type}"), self.p(f"{p}.b_coord{edge_type}")))
        return linear(x, self.p(f"{p}.w_coord_out{edge_type}"), self.p(f"{p}.b_coord_out{edge_type}"))

    def layer(self, layer: int, graph: HeteroGraph, h: Tensor, coords: Tensor) -> tuple[Tensor, Tensor]:
        n = graph.n_nodes
        d = self.cfg.d_gnn
        aggregated: Optional[Tensor] = None
        shift: Optional[Tensor] = None
        for t, edges in enumerate(graph.edges):
            if len(edges) == 0:
                continue
            delta = coords[edges.src] - coords[edges.dst]  # x_i - x_j, (E, 4, 3)
            feats = Tensor(edges.features.astype(self.dtype))
            m = self.message(layer, h[edges.src], h[edges.dst], delta, feats)
            typed = segment_sum(m, edges.src, n) @ self.p(f"layer{layer}.W_type{t}")
            aggregated = typed if aggregated is None else aggregated + typed

            scalar = self.coord_scalar(layer, t, m).reshape(len(edges), 1, 1)
            counts = np.bincount(edges.src, minlength=n).astype(self.dtype)
            inv = Tensor((1.0 / np.maximum(counts, 1.0)).reshape(n, 1, 1))
            step = segment_sum(delta * scalar, edges.src, n) * inv
            shift = step if shift is None else shift + step
        if aggregated is None:
            aggregated = Tensor(np.zeros((n, d), dtype=self.dtype))
        h_new = self.node_update(layer, h, aggregated)
        coords_new = coords + shift if shift is not None else coords
        return h_new, coords_new

    def forward(self, graph: HeteroGraph, cdr_mask: np.ndarray, epitope_mask: np.ndarray) -> EncoderOutput:
        if graph.edges and graph.edges[0].features.shape[1] != self.edge_dim:
            raise ShapeMismatch("encoder_forward", f"edge features {graph.edges[0].features.shape[1]} != {self.edge_dim}")
        h = self.init_node_embeddings(graph, cdr_mask, epitope_mask)
        coords = Tensor(graph.coords.astype(self.dtype))
        for layer in range(1, self.cfg.n_layers + 1):
            h, coords = self.layer(layer, graph, h, coords)
            if not (np.all(np.isfinite(h.data)) and np.all(np.isfinite(coords.data))):
                raise NonFiniteActivation(layer)
        return EncoderOutput(h, coords)

    __call__ = forward
