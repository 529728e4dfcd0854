#!/usr/bin/env python3
"""
Structure ingestion for antibody-antigen complexes.

Parses the ATOM-record subset of PDB files (fixed-width columns) into the
Complex data model, loads dataset manifests, derives epitope / contact sets
from Calpha distances and masks CDR positions for sequence design.

Residue order within a chain is (resSeq, iCode). Residues missing any of
N, CA, C, O are dropped and CDR / epitope indices are remapped.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from errors import EmptyCDR, MalformedRecord, ManifestError, MissingChain, StructureError

logger = logging.getLogger(__name__)

# --- Vocabulary --------------------------------------------------------------

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
NUM_AA = 20
MASK_TOKEN, PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN = 20, 21, 22, 23, 24
VOCAB_SIZE = 25
MASK_CHAR = "?"
UNK_CHAR = "X"
AA_INDEX = {aa: i for i, aa in enumerate(AMINO_ACIDS)}

THREE_TO_ONE = {
    "ALA": "A", "CYS": "C", "ASP": "D", "GLU": "E", "PHE": "F",
    "GLY": "G", "HIS": "H", "ILE": "I", "LYS": "K", "LEU": "L",
    "MET": "M", "ASN": "N", "PRO": "P", "GLN": "Q", "ARG": "R",
    "SER": "S", "THR": "T", "VAL": "V", "TRP": "W", "TYR": "Y",
}
ONE_TO_THREE = {one: three for three, one in THREE_TO_ONE.items()}

BACKBONE_ATOMS = ("N", "CA", "C", "O")
CDR_NAMES = ("H1", "H2", "H3", "L1", "L2", "L3")
DEFAULT_CONTACT_CUTOFF = 6.6


def aa_to_code(letter: str) -> int:
    return AA_INDEX.get(letter, UNK_TOKEN)


def code_to_aa(code: int) -> str:
    return AMINO_ACIDS[code] if 0 <= code < NUM_AA else UNK_CHAR


# --- Data model --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Residue:
    aa: int
    backbone: np.ndarray  # (4, 3) ordered N, CA, C, O
    chain_id: str
    seq_index: int
    icode: str = ""

    def __post_init__(self):
        bb = np.array(self.backbone, dtype=np.float64)
        if bb.shape != (4, 3):
            raise StructureError(f"residue backbone must be 4x3, got {bb.shape}")
        if not np.all(np.isfinite(bb)):
            raise StructureError(f"non-finite backbone coordinate in residue {self.chain_id}{self.seq_index}")
        if not (0 <= self.aa < NUM_AA or self.aa == UNK_TOKEN):
            raise StructureError(f"amino-acid code {self.aa} outside 0..19 and UNK")
        bb.setflags(write=False)
        object.__setattr__(self, "backbone", bb)

    @property
    def ca(self) -> np.ndarray:
        return self.backbone[1]

    @property
    def letter(self) -> str:
        return code_to_aa(self.aa)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Residue):
            return NotImplemented
        return (
            self.aa == other.aa
            and self.chain_id == other.chain_id
            and self.seq_index == other.seq_index
            and self.icode == other.icode
            and np.array_equal(self.backbone, other.backbone)
        )

    __hash__ = object.__hash__


@dataclass(frozen=True, eq=False)
class Complex:
    id: str
    heavy: tuple[Residue, ...]
    light: tuple[Residue, ...]
    antigen: tuple[Residue, ...]
    cdr_ranges: Mapping[str, tuple[int, int]]
    epitope: frozenset[int] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "heavy", tuple(self.heavy))
        object.__setattr__(self, "light", tuple(self.light))
        object.__setattr__(self, "antigen", tuple(self.antigen))
        object.__setattr__(self, "epitope", frozenset(int(j) for j in self.epitope))
        ranges = {name: (int(s), int(e)) for name, (s, e) in self.cdr_ranges.items()}
        object.__setattr__(self, "cdr_ranges", ranges)

        for name, (start, end) in ranges.items():
            if name not in CDR_NAMES:
                raise StructureError(f"{self.id}: unknown CDR name {name!r}")
            chain = self.chain_for_cdr(name)
            if not (0 <= start <= end <= len(chain)):
                raise StructureError(f"{self.id}: CDR {name} range [{start},{end}) outside chain of length {len(chain)}")
            if any(chain[i].aa == UNK_TOKEN for i in range(start, end)):
                raise StructureError(f"{self.id}: CDR {name} contains an unknown residue")
        for prefix in ("H", "L"):
            spans = sorted(r for n, r in ranges.items() if n.startswith(prefix) and r[0] < r[1])
            for (s1, e1), (s2, e2) in zip(spans, spans[1:]):
                if s2 < e1:
                    raise StructureError(f"{self.id}: overlapping CDR ranges on chain {prefix}")
        if any(not 0 <= j < len(self.antigen) for j in self.epitope):
            raise StructureError(f"{self.id}: epitope index outside antigen")

    def chain_for_cdr(self, cdr: str) -> tuple[Residue, ...]:
        return self.heavy if cdr.startswith("H") else self.light

    def cdr_indices(self, cdr: str) -> np.ndarray:
        if cdr not in self.cdr_ranges:
            raise EmptyCDR(cdr, f"not annotated in {self.id}")
        start, end = self.cdr_ranges[cdr]
        return np.arange(start, end)

    def sequence(self, residues: Sequence[Residue]) -> str:
        return "".join(r.letter for r in residues)

    def cdr_sequence(self, cdr: str) -> str:
        start, end = self.cdr_ranges[cdr]
        return self.sequence(self.chain_for_cdr(cdr)[start:end])

    def cdr_ca(self, cdr: str) -> np.ndarray:
        chain = self.chain_for_cdr(cdr)
        return _ca_array([chain[i] for i in self.cdr_indices(cdr)])

    def antigen_ca(self) -> np.ndarray:
        return _ca_array(self.antigen)

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "Complex":
        """Apply x -> R x + t to every backbone coordinate."""
        rotation = np.asarray(rotation, dtype=np.float64)
        translation = np.asarray(translation, dtype=np.float64)

        def move(residues):
            return tuple(
                Residue(r.aa, r.backbone @ rotation.T + translation, r.chain_id, r.seq_index, r.icode)
                for r in residues
            )

        return Complex(self.id, move(self.heavy), move(self.light), move(self.antigen),
                       dict(self.cdr_ranges), self.epitope)

    def with_epitope(self, epitope: Iterable[int]) -> "Complex":
        return Complex(self.id, self.heavy, self.light, self.antigen, dict(self.cdr_ranges), frozenset(epitope))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Complex):
            return NotImplemented
        return (
            self.id == other.id
            and self.heavy == other.heavy
            and self.light == other.light
            and self.antigen == other.antigen
            and dict(self.cdr_ranges) == dict(other.cdr_ranges)
            and self.epitope == other.epitope
        )

    __hash__ = object.__hash__


def _ca_array(residues: Sequence[Residue]) -> np.ndarray:
    if not residues:
        return np.zeros((0, 3))
    return np.stack([r.ca for r in residues])


# --- Manifest ----------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    id: str
    structure_path: str
    heavy_chain_id: str
    antigen_chain_ids: tuple[str, ...]
    cdr_ranges: Mapping[str, tuple[int, int]]
    light_chain_id: Optional[str] = None
    epitope_indices: Optional[tuple[int, ...]] = None
    split: str = "train"

    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "structure_path": self.structure_path,
            "heavy_chain_id": self.heavy_chain_id,
            "light_chain_id": self.light_chain_id,
            "antigen_chain_ids": list(self.antigen_chain_ids),
            "cdr_ranges": {k: list(v) for k, v in self.cdr_ranges.items()},
            "split": self.split,
        }
        if self.epitope_indices is not None:
            out["epitope_indices"] = list(self.epitope_indices)
        return out


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    base_dir: Path = field(default_factory=Path)

    def resolve(self, entry: ManifestEntry) -> Path:
        path = Path(entry.structure_path)
        return path if path.is_absolute() else self.base_dir / path

    def by_split(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def save(self, path: Path | str) -> None:
        with open(path, "w") as f:
            json.dump({"entries": [e.to_dict() for e in self.entries]}, f, indent=2)


def _entry_from_dict(raw: dict, where: str) -> ManifestEntry:
    known = {"id", "structure_path", "heavy_chain_id", "light_chain_id", "antigen_chain_ids",
             "cdr_ranges", "epitope_indices", "split"}
    unknown = set(raw) - known
    if unknown:
        raise ManifestError(f"{where}: unknown manifest keys {sorted(unknown)}")
    try:
        ranges = {str(k): (int(v[0]), int(v[1])) for k, v in raw["cdr_ranges"].items()}
        epitope = raw.get("epitope_indices")
        return ManifestEntry(
            id=str(raw["id"]),
            structure_path=str(raw["structure_path"]),
            heavy_chain_id=str(raw["heavy_chain_id"]),
            light_chain_id=raw.get("light_chain_id") or None,
            antigen_chain_ids=tuple(str(c) for c in raw["antigen_chain_ids"]),
            cdr_ranges=ranges,
            epitope_indices=tuple(int(j) for j in epitope) if epitope is not None else None,
            split=str(raw.get("split", "train")),
        )
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise ManifestError(f"{where}: invalid manifest entry ({e!r})") from None


def load_manifest(path: Path | str) -> DatasetManifest:
    """Load a JSON manifest: either {"entries": [...]} or a bare list of entries."""
    path = Path(path)
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: not valid JSON ({e})") from None
    items = raw.get("entries") if isinstance(raw, dict) else raw
    if not isinstance(items, list):
        raise ManifestError(f"{path}: expected a list of entries")
    entries = [_entry_from_dict(item, f"{path}[{i}]") for i, item in enumerate(items)]
    seen: set[str] = set()
    for e in entries:
        if e.id in seen:
            raise ManifestError(f"{path}: duplicate entry id {e.id!r}")
        seen.add(e.id)
    return DatasetManifest(entries, base_dir=path.parent)


# --- PDB parsing -------------------------------------------------------------

def _read_atom_records(path: Path) -> dict[str, dict[tuple[int, str], dict]]:
    """chain id -> (resSeq, iCode) -> {"resname", "atoms": {name: xyz}}"""
    chains: dict[str, dict[tuple[int, str], dict]] = {}
    with open(path) as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if line.startswith("ENDMDL"):
                break
            if not line.startswith("ATOM  "):
                continue
            if len(line) < 54:
                raise MalformedRecord(line_no, "ATOM record shorter than 54 columns", str(path))
            alt_loc = line[16]
            if alt_loc not in (" ", "A"):
                continue
            atom_name = line[12:16].strip()
            try:
                res_seq = int(line[22:26])
                xyz = (float(line[30:38]), float(line[38:46]), float(line[46:54]))
            except ValueError:
                raise MalformedRecord(line_no, "unparsable residue number or coordinate", str(path)) from None
            chain_id = line[21]
            key = (res_seq, line[26].strip())
            residue = chains.setdefault(chain_id, {}).setdefault(key, {"resname": line[17:20].strip(), "atoms": {}})
            if atom_name in BACKBONE_ATOMS and atom_name not in residue["atoms"]:
                residue["atoms"][atom_name] = xyz
    return chains


def _build_chain(records: dict[tuple[int, str], dict], chain_id: str) -> tuple[list[Optional[Residue]], int]:
    residues: list[Optional[Residue]] = []
    dropped = 0
    for (res_seq, icode) in sorted(records):
        rec = records[(res_seq, icode)]
        if any(atom not in rec["atoms"] for atom in BACKBONE_ATOMS):
            residues.append(None)
            dropped += 1
            continue
        backbone = np.array([rec["atoms"][a] for a in BACKBONE_ATOMS])
        aa = aa_to_code(THREE_TO_ONE.get(rec["resname"], UNK_CHAR))
        residues.append(Residue(aa, backbone, chain_id, res_seq, icode))
    return residues, dropped


def _remap(slots: Sequence[Optional[Residue]]) -> np.ndarray:
    """old index -> number of kept residues before it (new index for kept ones)."""
    kept = np.array([r is not None for r in slots], dtype=int)
    return np.concatenate([[0], np.cumsum(kept)])


def parse_structure(
    path: Path | str,
    entry: ManifestEntry,
    contact_cutoff: float = DEFAULT_CONTACT_CUTOFF,
    epitope_cdr: str = "H3",
) -> tuple[Complex, int]:
    """
    Parse one manifest entry's structure into a Complex.

    Returns (complex, dropped_residue_count). When the entry carries no
    epitope_indices the epitope is derived with derive_epitope().
    """
    path = Path(path)
    chains = _read_atom_records(path)

    def chain(chain_id: str) -> tuple[list[Optional[Residue]], int]:
        if chain_id not in chains:
            raise MissingChain(chain_id, str(path))
        return _build_chain(chains[chain_id], chain_id)

    heavy_slots, dropped = chain(entry.heavy_chain_id)
    light_slots: list[Optional[Residue]] = []
    if entry.light_chain_id:
        light_slots, n = chain(entry.light_chain_id)
        dropped += n
    antigen_slots: list[Optional[Residue]] = []
    for chain_id in entry.antigen_chain_ids:
        slots, n = chain(chain_id)
        antigen_slots.extend(slots)
        dropped += n

    ranges = {}
    for name, (start, end) in entry.cdr_ranges.items():
        slots = heavy_slots if name.startswith("H") else light_slots
        if not (0 <= start <= end <= len(slots)):
            raise StructureError(f"{entry.id}: CDR {name} range [{start},{end}) outside chain of length {len(slots)}")
        remap = _remap(slots)
        new = (int(remap[start]), int(remap[end]))
        if new[0] == new[1]:
            raise EmptyCDR(name, f"{entry.id} after dropping incomplete residues")
        ranges[name] = new

    epitope: frozenset[int] = frozenset()
    if entry.epitope_indices is not None:
        remap = _remap(antigen_slots)
        epitope = frozenset(
            int(remap[j]) for j in entry.epitope_indices
            if 0 <= j < len(antigen_slots) and antigen_slots[j] is not None
        )

    complex_ = Complex(
        id=entry.id,
        heavy=tuple(r for r in heavy_slots if r is not None),
        light=tuple(r for r in light_slots if r is not None),
        antigen=tuple(r for r in antigen_slots if r is not None),
        cdr_ranges=ranges,
        epitope=epitope,
    )
    if dropped:
        logger.warning(f"{entry.id}: dropped {dropped} residues with incomplete backbones")
    if entry.epitope_indices is None and complex_.antigen:
        cdrs = [epitope_cdr] if epitope_cdr in ranges else None
        complex_ = complex_.with_epitope(derive_epitope(complex_, contact_cutoff, cdrs))
    return complex_, dropped


def load_complexes(
    manifest: DatasetManifest,
    contact_cutoff: float = DEFAULT_CONTACT_CUTOFF,
    epitope_cdr: str = "H3",
) -> list[Complex]:
    complexes = []
    for entry in manifest.entries:
        complex_, _ = parse_structure(manifest.resolve(entry), entry, contact_cutoff, epitope_cdr)
        complexes.append(complex_)
    return complexes


# --- PDB writing -------------------------------------------------------------

def _atom_line(serial: int, atom: str, residue: Residue, xyz: np.ndarray) -> str:
    resname = ONE_TO_THREE.get(residue.letter, "UNK")
    return (
        f"ATOM  {serial:5d}  {atom:<3s} {resname:>3s} {residue.chain_id:1s}"
        f"{residue.seq_index:4d}{residue.icode or ' ':1s}   "
        f"{xyz[0]:8.3f}{xyz[1]:8.3f}{xyz[2]:8.3f}{1.0:6.2f}{0.0:6.2f}          {atom[0]:>2s}"
    )


def write_pdb(complex_: Complex, path: Path | str) -> Path:
    """Serialize a Complex's backbone atoms as ATOM records."""
    path = Path(path)
    lines = []
    serial = 1
    for residues in (complex_.heavy, complex_.light, complex_.antigen):
        for residue in residues:
            for atom, xyz in zip(BACKBONE_ATOMS, residue.backbone):
                lines.append(_atom_line(serial, atom, residue, xyz))
                serial += 1
    lines.append("END")
    path.write_text("\n".join(lines) + "\n")
    return path


def entry_for(complex_: Complex, structure_path: str, split: str = "train") -> ManifestEntry:
    """Manifest entry that parses back into complex_ (given write_pdb output)."""
    if not complex_.heavy:
        raise StructureError(f"{complex_.id}: no heavy chain")
    antigen_ids = tuple(dict.fromkeys(r.chain_id for r in complex_.antigen))
    return ManifestEntry(
        id=complex_.id,
        structure_path=structure_path,
        heavy_chain_id=complex_.heavy[0].chain_id,
        light_chain_id=complex_.light[0].chain_id if complex_.light else None,
        antigen_chain_ids=antigen_ids,
        cdr_ranges=dict(complex_.cdr_ranges),
        epitope_indices=tuple(sorted(complex_.epitope)),
        split=split,
    )


# --- Contacts and masking ----------------------------------------------------

def _cdr_ca_union(c: Complex, cdrs: Optional[Iterable[str]]) -> np.ndarray:
    names = list(cdrs) if cdrs is not None else list(c.cdr_ranges)
    blocks = [c.cdr_ca(name) for name in names if name in c.cdr_ranges]
    return np.concatenate(blocks) if blocks else np.zeros((0, 3))


def derive_epitope(c: Complex, d_c: float = DEFAULT_CONTACT_CUTOFF, cdrs: Optional[Iterable[str]] = None) -> frozenset[int]:
    """
    Antigen residues whose Calpha lies strictly within d_c of any CDR Calpha.

    cdrs selects the CDRs forming V_CDR; None means every annotated CDR.
    """
    cdr_ca = _cdr_ca_union(c, cdrs)
    antigen_ca = c.antigen_ca()
    if len(cdr_ca) == 0 or len(antigen_ca) == 0:
        logger.warning(f"{c.id}: empty CDR or antigen, epitope is empty")
        return frozenset()
    close = cdist(antigen_ca, cdr_ca) < d_c
    epitope = frozenset(int(j) for j in np.flatnonzero(close.any(axis=1)))
    if not epitope:
        logger.warning(f"{c.id}: no antigen residue within {d_c} A of the CDR")
    return epitope


def mask_cdr(c: Complex, cdr: str) -> tuple[str, np.ndarray]:
    """Return (chain sequence with the CDR replaced by MASK_CHAR, CDR label codes)."""
    if cdr not in c.cdr_ranges:
        raise EmptyCDR(cdr, f"not annotated in {c.id}")
    start, end = c.cdr_ranges[cdr]
    if end <= start:
        raise EmptyCDR(cdr, c.id)
    chain = c.chain_for_cdr(cdr)
    sequence = c.sequence(chain)
    masked = sequence[:start] + MASK_CHAR * (end - start) + sequence[end:]
    labels = np.array([r.aa for r in chain[start:end]], dtype=np.int64)
    return masked, labels


def split_contact_positions(c: Complex, d_c: float = DEFAULT_CONTACT_CUTOFF, cdr: str = "H3") -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Partition the CDR's chain indices into (contacting, non-contacting) the antigen."""
    indices = c.cdr_indices(cdr)
    antigen_ca = c.antigen_ca()
    if len(antigen_ca) == 0 or len(indices) == 0:
        return (), tuple(int(i) for i in indices)
    contact = (cdist(c.cdr_ca(cdr), antigen_ca) < d_c).any(axis=1)
    return (
        tuple(int(i) for i, hit in zip(indices, contact) if hit),
        tuple(int(i) for i, hit in zip(indices, contact) if not hit),
    )
