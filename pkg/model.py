#!/usr/bin/env python3
"""
The composed CDR design network: graph encoder, language-model backend,
structural adapter and sequence head, plus per-complex sample preparation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from adapter_head import AdapterConfig, SequenceHead, StructuralAdapter, greedy_decode
from encoder_egnn import EgnnEncoder, EncoderConfig
from errors import ShapeMismatch
from graph_builder import GraphConfig, HeteroGraph, build_graph, context_nodes
from numeric_core import Param, RngStream, Tensor
from structure_io import NUM_AA, Complex, mask_cdr, split_contact_positions

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Sample:
    """Everything a forward pass needs for one (complex, CDR) pair."""

    complex: Complex
    cdr: str
    graph: HeteroGraph
    cdr_range: tuple[int, int]
    cdr_nodes: np.ndarray
    cdr_mask: np.ndarray
    epitope_mask: np.ndarray
    antigen_nodes: np.ndarray
    context: np.ndarray
    masked_seq: str
    labels: np.ndarray
    true_cdr_ca: np.ndarray
    epitope_ca: np.ndarray
    contact_positions: tuple[int, ...]

    @property
    def id(self) -> str:
        return self.complex.id

    @property
    def native_seq(self) -> str:
        return self.complex.cdr_sequence(self.cdr)


def prepare_sample(c: Complex, cdr: str, cfg: Optional[GraphConfig] = None) -> Sample:
    cfg = cfg or GraphConfig()
    masked_seq, labels = mask_cdr(c, cdr)
    graph = build_graph(c, cfg, cdr=cdr)
    cdr_nodes = graph.cdr_nodes(c, cdr)
    cdr_mask = np.zeros(graph.n_nodes, dtype=bool)
    cdr_mask[cdr_nodes] = True
    epitope_nodes = graph.epitope_nodes(c.epitope)
    epitope_mask = np.zeros(graph.n_nodes, dtype=bool)
    epitope_mask[epitope_nodes] = True
    contacts, _ = split_contact_positions(c, cfg.contact_cutoff, cdr)
    epitope_ca = c.antigen_ca()[sorted(c.epitope)] if c.epitope else np.zeros((0, 3))
    return Sample(
        complex=c,
        cdr=cdr,
        graph=graph,
        cdr_range=c.cdr_ranges[cdr],
        cdr_nodes=cdr_nodes,
        cdr_mask=cdr_mask,
        epitope_mask=epitope_mask,
        antigen_nodes=graph.antigen_nodes(),
        context=context_nodes(graph, cdr_nodes, cfg.k_ag),
        masked_seq=masked_seq,
        labels=labels,
        true_cdr_ca=c.cdr_ca(cdr),
        epitope_ca=epitope_ca,
        contact_positions=contacts,
    )


@dataclass
class Encoded:
    """Dropout-free part of a forward pass, shared by both R-Drop passes."""

    h: Tensor  # (N, d_gnn)
    coords_hat: Tensor  # (N, 4, 3)
    cdr_ca_hat: Tensor  # (L, 3)
    h_ctx: Tensor  # (L + K, d_gnn)
    h_esm: Tensor  # (L, d_esm)
    h_cdr_mean: Tensor
    h_ag_mean: Optional[Tensor]


@dataclass
class ForwardResult:
    encoded: Encoded
    logits: Tensor  # (L, 25)
    attention: Tensor  # (H, L, L + K)

    @property
    def cdr_ca_hat(self) -> Tensor:
        return self.encoded.cdr_ca_hat


@dataclass(frozen=True)
class Prediction:
    id: str
    cdr: str
    predicted_seq: str
    logits: np.ndarray  # (L, 20)
    cdr_ca: np.ndarray  # (L, 3)


class EvoStructModel:
    def __init__(
        self,
        backend,
        graph_cfg: GraphConfig,
        encoder_cfg: EncoderConfig,
        adapter_cfg: AdapterConfig,
        seed: int = 0,
        dtype=np.float64,
    ):
        self.backend = backend
        self.graph_cfg = graph_cfg
        self.dtype = np.dtype(dtype)
        rng = RngStream(seed)
        self.encoder = EgnnEncoder(encoder_cfg, rng, edge_dim=graph_cfg.edge_dim, dtype=self.dtype)
        self.adapter = StructuralAdapter(adapter_cfg, backend.d_esm, encoder_cfg.d_gnn, rng, dtype=self.dtype)
        self.head = SequenceHead(backend.d_esm, adapter_cfg.d_a, adapter_cfg.dropout, rng, dtype=self.dtype)

    def parameters(self) -> dict[str, Param]:
        params: dict[str, Param] = {}
        for part in (self.encoder, self.backend, self.adapter, self.head):
            params.update(part.parameters())
        return params

    def backend_parameters(self) -> dict[str, Param]:
        return self.backend.parameters()

    def frozen_count(self) -> int:
        return sum(int(p.data.size) for p in self.parameters().values() if p.frozen)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state(self, arrays: Mapping[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(arrays))
        if missing:
            raise ShapeMismatch("load_state", f"checkpoint lacks {missing[:5]}")
        for name, p in params.items():
            value = np.asarray(arrays[name])
            if value.shape != p.shape:
                raise ShapeMismatch("load_state", f"{name}: {value.shape} vs {p.shape}")
            p.data[...] = value.astype(p.dtype)

    def encode(self, sample: Sample, zero_antigen_context: bool = False) -> Encoded:
        enc = self.encoder(sample.graph, sample.cdr_mask, sample.epitope_mask)
        h_ctx = enc.h[sample.context]
        if zero_antigen_context:
            keep = np.zeros((len(sample.context), 1), dtype=self.dtype)
            keep[: len(sample.cdr_nodes)] = 1.0
            h_ctx = h_ctx * Tensor(keep)
        h_esm = self.backend.embed_masked(sample.masked_seq, sample.cdr_range, key=sample.id)
        h_ag = enc.h[sample.antigen_nodes].mean(axis=0) if len(sample.antigen_nodes) else None
        return Encoded(
            h=enc.h,
            coords_hat=enc.coords_hat,
            cdr_ca_hat=enc.coords_hat[sample.cdr_nodes, 1],
            h_ctx=h_ctx,
            h_esm=h_esm,
            h_cdr_mean=enc.h[sample.cdr_nodes].mean(axis=0),
            h_ag_mean=h_ag,
        )

    def decode(self, encoded: Encoded, rng: Optional[RngStream] = None, training: bool = False) -> ForwardResult:
        refined, attention = self.adapter(encoded.h_esm, encoded.h_ctx, rng=rng, training=training)
        logits = self.head(refined, rng=rng, training=training)
        return ForwardResult(encoded, logits, attention)

    def forward(
        self,
        sample: Sample,
        rng: Optional[RngStream] = None,
        training: bool = False,
        zero_antigen_context: bool = False,
    ) -> ForwardResult:
        return self.decode(self.encode(sample, zero_antigen_context), rng=rng, training=training)

    __call__ = forward

    def predict(self, sample: Sample) -> Prediction:
        out = self.forward(sample, training=False)
        return Prediction(
            id=sample.id,
            cdr=sample.cdr,
            predicted_seq=greedy_decode(out.logits),
            logits=np.array(out.logits.data[:, :NUM_AA], dtype=np.float64),
            cdr_ca=np.array(out.cdr_ca_hat.data, dtype=np.float64),
        )
