#!/usr/bin/env python3
"""
Synthetic antibody-antigen complexes for desk-scale runs and tests.

Each complex has a heavy chain with H3, a short light chain with L3 and an
antigen chain docked against H3. Backbones come from self-avoiding Calpha
walks with idealized N, C and O placement. CDR letters follow a
position-dependent preference, and antigen-contacting positions mostly
take the partner of their nearest antigen residue, which plants a
learnable binding-pair signal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from numeric_core import RngStream
from structure_io import (
    NUM_AA,
    Complex,
    DatasetManifest,
    Residue,
    derive_epitope,
    entry_for,
    write_pdb,
)

logger = logging.getLogger(__name__)

CA_STEP = 3.8
MIN_SEPARATION = 4.2
DOCK_DISTANCE = 4.5
# Fixed partner for each antigen amino acid at contact positions.
PAIRING = np.array([7, 19, 11, 8, 12, 14, 3, 4, 2, 16, 1, 0, 15, 5, 6, 10, 9, 17, 18, 13])
POSITION_PREFERENCE = np.array([0, 15, 19, 5, 3, 18, 7, 16, 9, 11, 2, 13])


@dataclass(frozen=True)
class SynthConfig:
    heavy_len: int = 24
    h3: tuple[int, int] = (10, 18)
    light_len: int = 14
    l3: tuple[int, int] = (5, 10)
    antigen_len: int = 20
    contact_cutoff: float = 6.6
    pair_prob: float = 0.7
    position_prob: float = 0.6
    val_fraction: float = 0.0


def _walk(gen: np.random.Generator, n: int, start: np.ndarray, max_tries: int = 200) -> np.ndarray:
    """Self-avoiding Calpha trace with 3.8 A steps."""
    ca = [np.asarray(start, dtype=np.float64)]
    heading = np.array([1.0, 0.0, 0.0])
    for _ in range(1, n):
        for _ in range(max_tries):
            step = gen.normal(size=3) + 1.5 * heading
            step *= CA_STEP / np.linalg.norm(step)
            proposal = ca[-1] + step
            if len(ca) < 2 or np.min(np.linalg.norm(np.array(ca[:-1]) - proposal, axis=1)) >= MIN_SEPARATION:
                break
        ca.append(proposal)
        heading = step / CA_STEP
    return np.array(ca)


def _backbone(ca: np.ndarray) -> np.ndarray:
    """Idealized (n, 4, 3) N, CA, C, O from a Calpha trace."""
    n = len(ca)
    out = np.zeros((n, 4, 3))
    for k in range(n):
        prev_ca = ca[k - 1] if k > 0 else 2 * ca[k] - ca[k + 1]
        next_ca = ca[k + 1] if k < n - 1 else 2 * ca[k] - ca[k - 1]
        e1 = next_ca - prev_ca
        e1 /= np.linalg.norm(e1)
        bend = prev_ca + next_ca - 2 * ca[k]
        bend -= np.dot(bend, e1) * e1
        if np.linalg.norm(bend) < 1e-6:
            bend = np.cross(e1, [0.0, 0.0, 1.0])
            if np.linalg.norm(bend) < 1e-6:
                bend = np.cross(e1, [0.0, 1.0, 0.0])
        e2 = bend / np.linalg.norm(bend)
        e3 = np.cross(e1, e2)
        n_atom = ca[k] + 1.46 * (-0.824 * e1 + 0.566 * e2)
        c_atom = ca[k] + 1.52 * (0.824 * e1 + 0.566 * e2)
        o_atom = c_atom + 1.23 * (0.5 * e2 + 0.866 * e3)
        out[k] = (n_atom, ca[k], c_atom, o_atom)
    return np.round(out, 3)


def _dock(antigen_ca: np.ndarray, cdr_ca: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Translation along -direction that first brings the antigen within DOCK_DISTANCE of the CDR."""
    shift = np.zeros(3)
    for _ in range(2000):
        if cdist(antigen_ca + shift, cdr_ca).min() < DOCK_DISTANCE:
            break
        shift -= 0.1 * direction
    return shift


def _chain(aa: np.ndarray, backbone: np.ndarray, chain_id: str) -> tuple[Residue, ...]:
    return tuple(Residue(int(a), bb, chain_id, i + 1) for i, (a, bb) in enumerate(zip(aa, backbone)))


def generate_complex(rng: RngStream, complex_id: str, cfg: SynthConfig = SynthConfig()) -> Complex:
    gen = rng.child(complex_id).generator()
    heavy_bb = _backbone(_walk(gen, cfg.heavy_len, np.zeros(3)))
    light_bb = _backbone(_walk(gen, cfg.light_len, np.array([0.0, -12.0, 0.0])))
    h3_start, h3_end = cfg.h3
    h3_ca = heavy_bb[h3_start:h3_end, 1]
    outward = h3_ca.mean(axis=0) - heavy_bb[:, 1].mean(axis=0)
    outward = outward / np.linalg.norm(outward) if np.linalg.norm(outward) > 1e-6 else np.array([0.0, 0.0, 1.0])

    antigen_ca = _walk(gen, cfg.antigen_len, np.zeros(3))
    antigen_ca += h3_ca.mean(axis=0) + 30.0 * outward - antigen_ca.mean(axis=0)
    antigen_ca += _dock(antigen_ca, h3_ca, outward)
    antigen_bb = _backbone(antigen_ca)

    heavy_aa = gen.integers(0, NUM_AA, size=cfg.heavy_len)
    light_aa = gen.integers(0, NUM_AA, size=cfg.light_len)
    antigen_aa = gen.integers(0, NUM_AA, size=cfg.antigen_len)

    dist = cdist(heavy_bb[h3_start:h3_end, 1], antigen_bb[:, 1])
    for p in range(h3_end - h3_start):
        nearest = int(np.argmin(dist[p]))
        draw = gen.random()
        if dist[p, nearest] < cfg.contact_cutoff and draw < cfg.pair_prob:
            heavy_aa[h3_start + p] = PAIRING[antigen_aa[nearest]]
        elif draw < cfg.position_prob:
            heavy_aa[h3_start + p] = POSITION_PREFERENCE[p % len(POSITION_PREFERENCE)]
    for p in range(cfg.l3[0], cfg.l3[1]):
        if gen.random() < cfg.position_prob:
            light_aa[p] = POSITION_PREFERENCE[(p - cfg.l3[0]) % len(POSITION_PREFERENCE)]

    c = Complex(
        id=complex_id,
        heavy=_chain(heavy_aa, heavy_bb, "H"),
        light=_chain(light_aa, light_bb, "L"),
        antigen=_chain(antigen_aa, antigen_bb, "A"),
        cdr_ranges={"H3": cfg.h3, "L3": cfg.l3},
    )
    return c.with_epitope(derive_epitope(c, cfg.contact_cutoff, cdrs=["H3"]))


def generate_dataset(seed: int, n: int, out_dir: Path | str, cfg: SynthConfig = SynthConfig()) -> DatasetManifest:
    """Write n PDB files plus manifest.json into out_dir and return the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = RngStream(seed).child("synth")
    n_val = int(round(n * cfg.val_fraction))
    entries = []
    for idx in range(n):
        complex_id = f"synth{idx:03d}"
        c = generate_complex(rng, complex_id, cfg)
        write_pdb(c, out / f"{complex_id}.pdb")
        split = "val" if idx >= n - n_val else "train"
        entries.append(entry_for(c, f"{complex_id}.pdb", split))
        logger.debug(f"{complex_id}: {len(c.epitope)} planted epitope residues")
    manifest = DatasetManifest(entries, base_dir=out)
    manifest.save(out / "manifest.json")
    logger.info(f"Wrote {n} synthetic complexes to {out}")
    return manifest
