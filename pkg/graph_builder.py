#!/usr/bin/env python3
"""
Heterogeneous residue graph for an antibody-antigen complex.

Nodes are heavy-chain, light-chain and antigen residues followed by three
global tokens (BOH, BOL, BOA). Edges come in 8 typed sets:

    0 intra_radial        same chain, Calpha distance < radial threshold
    1 intra_sequential    same chain, residue numbers differ by 1 or 2
    2 intra_knn           same chain, K nearest
    3 inter_radial_ab_ag  antibody -> antigen within the radial threshold
    4 inter_radial_ag_ab  antigen -> antibody within the radial threshold
    5 inter_knn           K_inter nearest residues on the opposite side
    6 global_to_chain     token -> every residue of its chain
    7 chain_to_global     residue -> its chain's token

An edge (src=i, dst=j) means j is in the neighbourhood of i: messages flow
j -> i and are aggregated at src. Every edge carries an 85-wide feature
vector that is invariant to rigid motions of the complex.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist
from scipy.spatial.transform import Rotation

from errors import DegenerateFrame
from structure_io import BOS_TOKEN, Complex

logger = logging.getLogger(__name__)

EDGE_TYPES = (
    "intra_radial",
    "intra_sequential",
    "intra_knn",
    "inter_radial_ab_ag",
    "inter_radial_ag_ab",
    "inter_knn",
    "global_to_chain",
    "chain_to_global",
)
N_EDGE_TYPES = len(EDGE_TYPES)
GLOBAL_TOKENS = ("BOH", "BOL", "BOA")
N_ATOM_PAIRS = 4
EDGE_FEATURE_DIM = N_EDGE_TYPES + 3 + N_ATOM_PAIRS * 16 + 4 + 6
COLLINEAR_TOL = 1e-8


class NodeKind(IntEnum):
    HC = 0
    LC = 1
    AG = 2
    GLOB = 3


@dataclass(frozen=True)
class GraphConfig:
    radial: float = 8.0
    k_intra: int = 9
    k_inter: int = 9
    rbf_count: int = 16
    rbf_max: float = 20.0
    k_ag: int = 128
    contact_cutoff: float = 6.6
    cdr_init: str = "interpolate"  # or "native"

    def __post_init__(self):
        if self.radial <= 0 or self.k_intra < 0 or self.k_inter < 0 or self.k_ag < 0:
            raise ValueError("graph thresholds must be positive")
        if self.rbf_count < 2 or self.rbf_max <= 0:
            raise ValueError("RBF bank needs at least two centers on a positive range")
        if self.cdr_init not in ("interpolate", "native"):
            raise ValueError(f"cdr_init must be 'interpolate' or 'native', got {self.cdr_init!r}")

    @property
    def rbf_centers(self) -> np.ndarray:
        return np.linspace(0.0, self.rbf_max, self.rbf_count)

    @property
    def rbf_width(self) -> float:
        return self.rbf_max / (self.rbf_count - 1)

    @property
    def edge_dim(self) -> int:
        return N_EDGE_TYPES + 3 + N_ATOM_PAIRS * self.rbf_count + 4 + 6


# --- Local frames and geometric features -------------------------------------

@dataclass(frozen=True)
class LocalFrame:
    origin: np.ndarray  # Calpha
    basis: np.ndarray  # rows e1, e2, e3


def _frames(backbones: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized Gram-Schmidt frames for (n, 4, 3) backbones -> (origins, bases)."""
    n_atom, ca, c_atom = backbones[:, 0], backbones[:, 1], backbones[:, 2]
    v1 = c_atom - ca
    v2 = n_atom - ca
    if len(backbones) and np.any(np.linalg.norm(np.cross(v1, v2), axis=-1) < COLLINEAR_TOL):
        bad = np.flatnonzero(np.linalg.norm(np.cross(v1, v2), axis=-1) < COLLINEAR_TOL)
        raise DegenerateFrame(f"N, CA, C collinear for residue rows {bad.tolist()}")
    e1 = v1 / np.linalg.norm(v1, axis=-1, keepdims=True)
    u = v2 - np.sum(v2 * e1, axis=-1, keepdims=True) * e1
    e2 = u / np.linalg.norm(u, axis=-1, keepdims=True)
    e3 = np.cross(e1, e2)
    return ca.copy(), np.stack([e1, e2, e3], axis=1)


def build_local_frame(backbone) -> LocalFrame:
    """Frame of one residue: e1 along C-CA, e2 the orthogonal part of N-CA, e3 = e1 x e2."""
    bb = np.asarray(getattr(backbone, "backbone", backbone), dtype=np.float64)
    origins, bases = _frames(bb[None])
    return LocalFrame(origins[0], bases[0])


def _canonical_quaternions(rotations: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    xyzw = Rotation.from_matrix(rotations).as_quat()
    q = np.concatenate([xyzw[:, 3:], xyzw[:, :3]], axis=1)  # (w, x, y, z)
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    flip = q[:, 0] < -tol
    near_zero = np.abs(q[:, 0]) <= tol
    if np.any(near_zero):
        vec = q[near_zero, 1:]
        first = np.argmax(np.abs(vec) > tol, axis=1)
        sign = np.sign(vec[np.arange(len(vec)), first])
        q[near_zero, 0] = 0.0
        q[near_zero] *= np.where(sign < 0, -1.0, 1.0)[:, None]
    q[flip] *= -1.0
    return q


def relative_quaternion(f_i: LocalFrame, f_j: LocalFrame) -> np.ndarray:
    """Unit quaternion (w, x, y, z), w >= 0, of the rotation taking frame i to frame j."""
    rotation = f_i.basis @ f_j.basis.T
    return _canonical_quaternions(rotation[None])[0]


def rbf_features(d, centers: Sequence[float], width: float) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    return np.exp(-((d[..., None] - centers) ** 2) / (2.0 * width * width))


def _self_feature_block(count: int, cfg: GraphConfig) -> np.ndarray:
    rbf0 = np.tile(rbf_features(0.0, cfg.rbf_centers, cfg.rbf_width), N_ATOM_PAIRS)
    block = np.zeros((count, cfg.edge_dim - N_EDGE_TYPES))
    block[:, 3:3 + rbf0.size] = rbf0
    block[:, 3 + rbf0.size] = 1.0  # quaternion w
    return block


def edge_features(
    edge_type: int,
    src: np.ndarray,
    dst: np.ndarray,
    coords: np.ndarray,
    bases: np.ndarray,
    cfg: GraphConfig,
    geometric: bool = True,
) -> np.ndarray:
    """
    Features for a batch of edges of one type:
    [one-hot(8) | CA_j in frame_i (3) | RBF of N-N, CA-CA, C-C, O-O (4 x 16) |
     relative quaternion (4) | unit(dx) in frame_i (3) and frame_j (3)].

    With geometric=False (edges touching a global token) the geometric part is
    the self-edge value: zero offset, RBF at d = 0, identity quaternion.
    """
    count = len(src)
    one_hot = np.zeros((count, N_EDGE_TYPES))
    one_hot[:, edge_type] = 1.0
    if count == 0:
        return np.zeros((0, cfg.edge_dim))
    if not geometric:
        return np.concatenate([one_hot, _self_feature_block(count, cfg)], axis=1)

    x_i, x_j = coords[src], coords[dst]
    b_i, b_j = bases[src], bases[dst]
    delta = x_j[:, 1] - x_i[:, 1]
    rel_pos = np.einsum("eab,eb->ea", b_i, delta)
    dist_pairs = np.linalg.norm(x_j - x_i, axis=-1)  # (E, 4) homotypic atom pairs
    rbf = rbf_features(dist_pairs, cfg.rbf_centers, cfg.rbf_width).reshape(count, -1)
    quat = _canonical_quaternions(b_i @ np.swapaxes(b_j, 1, 2))
    length = np.linalg.norm(delta, axis=-1, keepdims=True)
    unit = np.where(length > 0, delta / np.where(length > 0, length, 1.0), 0.0)
    dir_i = np.einsum("eab,eb->ea", b_i, unit)
    dir_j = np.einsum("eab,eb->ea", b_j, unit)
    return np.concatenate([one_hot, rel_pos, rbf, quat, dir_i, dir_j], axis=1)


def build_edge_feature(edge_type: int, x_i: np.ndarray, x_j: np.ndarray, cfg: Optional[GraphConfig] = None,
                       global_edge: bool = False) -> np.ndarray:
    """Feature vector of a single edge between two (4, 3) backbone blocks."""
    cfg = cfg or GraphConfig()
    coords = np.stack([np.asarray(x_i, float), np.asarray(x_j, float)])
    bases = np.tile(np.eye(3), (2, 1, 1)) if global_edge else _frames(coords)[1]
    return edge_features(edge_type, np.array([0]), np.array([1]), coords, bases, cfg, geometric=not global_edge)[0]


# --- Graph -------------------------------------------------------------------

@dataclass(frozen=True)
class EdgeSet:
    src: np.ndarray
    dst: np.ndarray
    features: np.ndarray

    def __len__(self) -> int:
        return len(self.src)


@dataclass(frozen=True, eq=False)
class HeteroGraph:
    complex_id: str
    node_kind: np.ndarray
    aa: np.ndarray
    chain_pos: np.ndarray  # index within the chain; token index 0-2 for BOH, BOL, BOA
    coords: np.ndarray  # (N, 4, 3)
    edges: tuple[EdgeSet, ...]
    offsets: dict = field(default_factory=dict)  # first node of "H", "L", "A", "G"
    seq_index: Optional[np.ndarray] = None  # residue number from the structure file; 0 for global tokens

    @property
    def n_nodes(self) -> int:
        return len(self.node_kind)

    def node_index(self, part: str, position) -> np.ndarray:
        return self.offsets[part] + np.asarray(position, dtype=np.int64)

    def cdr_nodes(self, c: Complex, cdr: str) -> np.ndarray:
        return self.node_index("H" if cdr.startswith("H") else "L", c.cdr_indices(cdr))

    def antigen_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.node_kind == NodeKind.AG)

    def global_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.node_kind == NodeKind.GLOB)

    def epitope_nodes(self, epitope) -> np.ndarray:
        return self.node_index("A", sorted(epitope))

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """All edges ordered by (type, src, dst): (src, dst, type, features)."""
        src = np.concatenate([e.src for e in self.edges]).astype(np.int64)
        dst = np.concatenate([e.dst for e in self.edges]).astype(np.int64)
        etype = np.concatenate([np.full(len(e), t, dtype=np.int64) for t, e in enumerate(self.edges)])
        feats = np.concatenate([e.features for e in self.edges], axis=0)
        return src, dst, etype, feats

    def relabel(self, perm: np.ndarray) -> "HeteroGraph":
        """Graph with old node perm[k] moved to position k; edges reindexed, not re-sorted."""
        perm = np.asarray(perm)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(len(perm))
        edges = tuple(EdgeSet(inverse[e.src], inverse[e.dst], e.features) for e in self.edges)
        return HeteroGraph(self.complex_id, self.node_kind[perm], self.aa[perm], self.chain_pos[perm],
                           self.coords[perm], edges, dict(self.offsets),
                           None if self.seq_index is None else self.seq_index[perm])

    def to_json(self, include_features: bool = False) -> dict:
        nodes = [
            {"index": i, "kind": NodeKind(int(k)).name, "aa": int(a), "chain_pos": int(p)}
            for i, (k, a, p) in enumerate(zip(self.node_kind, self.aa, self.chain_pos))
        ]
        edges = {}
        for name, e in zip(EDGE_TYPES, self.edges):
            entry = {"src": e.src.tolist(), "dst": e.dst.tolist()}
            if include_features:
                entry["features"] = e.features.tolist()
            edges[name] = entry
        return {"id": self.complex_id, "nodes": nodes, "edges": edges}

    def dump_json(self, path: Path | str, include_features: bool = False) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(include_features), f)


def _sorted_pairs(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    order = np.lexsort((dst, src))
    return src[order], dst[order]


def _radial_pairs(idx_a: np.ndarray, idx_b: np.ndarray, ca: np.ndarray, threshold: float, same: bool):
    if len(idx_a) == 0 or len(idx_b) == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    dist = cdist(ca[idx_a], ca[idx_b])
    hit = dist < threshold
    if same:
        np.fill_diagonal(hit, False)
    rows, cols = np.nonzero(hit)
    return idx_a[rows], idx_b[cols]


def _knn_pairs(idx_a: np.ndarray, idx_b: np.ndarray, ca: np.ndarray, k: int, same: bool):
    """For every node in idx_a, its min(k, available) nearest nodes in idx_b (ties by index)."""
    if len(idx_a) == 0 or len(idx_b) == 0 or k == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    dist = cdist(ca[idx_a], ca[idx_b])
    if same:
        np.fill_diagonal(dist, np.inf)
    available = len(idx_b) - (1 if same else 0)
    take = min(k, available)
    order = np.argsort(dist, axis=1, kind="stable")[:, :take]
    src = np.repeat(idx_a, take)
    dst = idx_b[order.reshape(-1)]
    return src, dst


def _sequential_pairs(idx: np.ndarray, seq_index: np.ndarray, chain_ids: np.ndarray):
    """Ordered pairs of one group whose residue numbers differ by 1 or 2 within the same chain."""
    src, dst = [np.zeros(0, np.int64)], [np.zeros(0, np.int64)]
    for chain in dict.fromkeys(chain_ids[idx].tolist()):
        nodes = idx[chain_ids[idx] == chain]
        nodes = nodes[np.argsort(seq_index[nodes], kind="stable")]
        numbers = seq_index[nodes]
        for shift in (-2, -1, 1, 2):
            lo = np.searchsorted(numbers, numbers + shift, side="left")
            hi = np.searchsorted(numbers, numbers + shift, side="right")
            counts = hi - lo
            if not counts.any():
                continue
            # insertion codes can repeat a number, so one residue may match several
            starts = np.repeat(lo - np.cumsum(counts) + counts, counts)
            src.append(np.repeat(nodes, counts))
            dst.append(nodes[np.arange(counts.sum()) + starts])
    return np.concatenate(src), np.concatenate(dst)


def init_cdr_coords(chain_coords: np.ndarray, start: int, end: int, spacing: float = 3.8) -> np.ndarray:
    """
    Replace CDR backbones [start, end) by translated copies of an anchor residue.

    With both flanking residues present, copies of the left anchor slide along
    the anchor-to-anchor Calpha line; with one anchor, copies step 3.8 A along
    the chain direction away from it. Without anchors the input is returned.
    """
    coords = np.array(chain_coords, dtype=np.float64)
    n = len(coords)
    left, right = start - 1, end
    has_left, has_right = left >= 0, right < n
    if start >= end or not (has_left or has_right):
        return coords
    if has_left and has_right:
        step = (coords[right, 1] - coords[left, 1]) / (end - left)
        for k in range(start, end):
            coords[k] = coords[left] + (k - left) * step
        return coords
    anchor, sign = (left, 1) if has_left else (right, -1)
    neighbour = anchor - sign
    if 0 <= neighbour < n:
        direction = coords[anchor, 1] - coords[neighbour, 1]
    else:
        direction = sign * (coords[anchor, 2] - coords[anchor, 1])
    direction = direction / np.linalg.norm(direction)
    for k in range(start, end):
        coords[k] = coords[anchor] + abs(k - anchor) * spacing * direction
    return coords


def build_graph(c: Complex, cfg: Optional[GraphConfig] = None, cdr: Optional[str] = None) -> HeteroGraph:
    """
    Build the typed residue graph of a complex.

    When cdr is given and cfg.cdr_init == "interpolate", that CDR's input
    coordinates are re-initialized with init_cdr_coords() before any edge is
    computed, so the graph carries no native CDR geometry.
    """
    cfg = cfg or GraphConfig()
    parts = (c.heavy, c.light, c.antigen)
    kinds = (NodeKind.HC, NodeKind.LC, NodeKind.AG)
    n_res = sum(len(p) for p in parts)
    n_nodes = n_res + len(GLOBAL_TOKENS)

    offsets = {"H": 0, "L": len(c.heavy), "A": len(c.heavy) + len(c.light), "G": n_res}
    node_kind = np.concatenate([np.full(len(p), int(k)) for p, k in zip(parts, kinds)] +
                               [np.full(len(GLOBAL_TOKENS), int(NodeKind.GLOB))]).astype(np.int64)
    aa = np.array([r.aa for p in parts for r in p] + [BOS_TOKEN] * len(GLOBAL_TOKENS), dtype=np.int64)
    chain_pos = np.array([i for p in parts for i in range(len(p))] + list(range(len(GLOBAL_TOKENS))), dtype=np.int64)
    chain_ids = np.array([r.chain_id for p in parts for r in p] + [""] * len(GLOBAL_TOKENS))
    seq_index = np.array([r.seq_index for p in parts for r in p] + [0] * len(GLOBAL_TOKENS), dtype=np.int64)

    coords = np.zeros((n_nodes, 4, 3))
    blocks = [np.stack([r.backbone for r in p]) if p else np.zeros((0, 4, 3)) for p in parts]
    if cdr is not None and cfg.cdr_init == "interpolate" and cdr in c.cdr_ranges:
        part = 0 if cdr.startswith("H") else 1
        start, end = c.cdr_ranges[cdr]
        blocks[part] = init_cdr_coords(blocks[part], start, end)
    if n_res:
        coords[:n_res] = np.concatenate(blocks)
    ca = coords[:, 1]
    overall = ca[:n_res].mean(axis=0) if n_res else np.zeros(3)
    for g, block in enumerate(blocks):
        centroid = block[:, 1].mean(axis=0) if len(block) else overall
        coords[n_res + g] = centroid

    members = [np.flatnonzero(node_kind == int(k)) for k in kinds]
    antibody = np.concatenate([members[0], members[1]])
    antigen = members[2]

    pairs: list[tuple[list, list]] = [([], []) for _ in range(N_EDGE_TYPES)]

    def add(t: int, src, dst):
        pairs[t][0].append(np.asarray(src, np.int64))
        pairs[t][1].append(np.asarray(dst, np.int64))

    for idx in members:
        add(0, *_radial_pairs(idx, idx, ca, cfg.radial, same=True))
        add(2, *_knn_pairs(idx, idx, ca, cfg.k_intra, same=True))
        add(1, *_sequential_pairs(idx, seq_index, chain_ids))

    add(3, *_radial_pairs(antibody, antigen, ca, cfg.radial, same=False))
    add(4, *_radial_pairs(antigen, antibody, ca, cfg.radial, same=False))
    add(5, *_knn_pairs(antibody, antigen, ca, cfg.k_inter, same=False))
    add(5, *_knn_pairs(antigen, antibody, ca, cfg.k_inter, same=False))
    for g, idx in enumerate(members):
        token = n_res + g
        add(6, np.full(len(idx), token), idx)
        add(7, idx, np.full(len(idx), token))

    bases = np.tile(np.eye(3), (n_nodes, 1, 1))
    if n_res:
        bases[:n_res] = _frames(coords[:n_res])[1]

    edges = []
    for t in range(N_EDGE_TYPES):
        src, dst = _sorted_pairs(np.concatenate(pairs[t][0]), np.concatenate(pairs[t][1]))
        feats = edge_features(t, src, dst, coords, bases, cfg, geometric=t < 6)
        edges.append(EdgeSet(src, dst, feats))

    logger.debug(f"{c.id}: graph with {n_nodes} nodes, edges per type {[len(e) for e in edges]}")
    return HeteroGraph(c.id, node_kind, aa, chain_pos, coords, tuple(edges), offsets, seq_index)


# --- Antigen context crop ----------------------------------------------------

def crop_order(cdr_ca: np.ndarray, antigen_ca: np.ndarray, k_ag: int) -> np.ndarray:
    """Antigen positions sorted by min-over-CDR Calpha distance (stable by index), first k_ag."""
    if len(antigen_ca) == 0 or k_ag <= 0:
        return np.zeros(0, dtype=np.int64)
    if len(cdr_ca) == 0:
        return np.arange(min(k_ag, len(antigen_ca)), dtype=np.int64)
    nearest = cdist(antigen_ca, cdr_ca).min(axis=1)
    return np.argsort(nearest, kind="stable")[:k_ag].astype(np.int64)


def context_nodes(graph: HeteroGraph, cdr_nodes: np.ndarray, k_ag: int) -> np.ndarray:
    antigen = graph.antigen_nodes()
    order = crop_order(graph.coords[cdr_nodes, 1], graph.coords[antigen, 1], k_ag)
    return np.concatenate([np.asarray(cdr_nodes, np.int64), antigen[order]])


def crop_antigen_context(h, graph: HeteroGraph, cdr_nodes: np.ndarray, k_ag: int):
    """H_ctx = CDR rows followed by the k_ag nearest antigen rows; returns (rows, node indices)."""
    nodes = context_nodes(graph, cdr_nodes, k_ag)
    return h[nodes], nodes
