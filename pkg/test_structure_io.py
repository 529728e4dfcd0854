#!/usr/bin/env python3
"""
Unit Tests for structure parsing, manifests and contact derivation
"""

import json
import os
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

import numpy as np

from errors import EmptyCDR, MalformedRecord, ManifestError, MissingChain, StructureError
from numeric_core import RngStream
from structure_io import (
    MASK_CHAR,
    Complex,
    DatasetManifest,
    Residue,
    derive_epitope,
    entry_for,
    load_complexes,
    load_manifest,
    mask_cdr,
    parse_structure,
    split_contact_positions,
    write_pdb,
)
from synthetic_data import generate_complex

OFFSETS = np.array([[-1.2, 0.5, 0.0], [0.0, 0.0, 0.0], [1.2, 0.6, 0.1], [1.8, 1.5, 0.3]])


def _res(aa, ca, chain, idx):
    return Residue(aa, np.asarray(ca, dtype=float) + OFFSETS, chain, idx)


def _line_complex(heavy_aa="ACDEFG", antigen_x=(0.0, 3.8, 20.0)):
    """Heavy chain along y at x=0; antigen residues at (x, 7.6, 0)."""
    heavy = [_res("ACDEFGHIKLMNPQRSTVWY".index(a), (0.0, 3.8 * i, 0.0), "H", i + 1)
             for i, a in enumerate(heavy_aa)]
    antigen = [_res(0, (x, 7.6, 0.0), "A", j + 1) for j, x in enumerate(antigen_x)]
    return Complex("toy", heavy, [], antigen, {"H3": (1, 4)})


class TestComplexModel(unittest.TestCase):

    def test_cdr_accessors(self):
        """Test CDR accessors"""
        c = _line_complex()
        self.assertEqual(c.cdr_sequence("H3"), "CDE")
        np.testing.assert_array_equal(c.cdr_indices("H3"), [1, 2, 3])
        self.assertEqual(c.cdr_ca("H3").shape, (3, 3))

    def test_invalid_ranges_rejected(self):
        """Test invalid CDR ranges"""
        c = _line_complex()
        with self.assertRaises(StructureError):
            Complex("bad", c.heavy, [], c.antigen, {"H3": (4, 9)})
        with self.assertRaises(StructureError):
            Complex("bad", c.heavy, [], c.antigen, {"H2": (0, 3), "H3": (2, 5)})
        with self.assertRaises(StructureError):
            Complex("bad", c.heavy, [], c.antigen, {"H3": (1, 4)}, epitope={7})

    def test_residue_validation(self):
        """Test residue validation"""
        with self.assertRaises(StructureError):
            Residue(0, np.zeros((3, 3)), "H", 1)
        with self.assertRaises(StructureError):
            Residue(0, np.full((4, 3), np.nan), "H", 1)

    def test_transformed_moves_every_atom(self):
        c = _line_complex()
        moved = c.transformed(np.eye(3), np.array([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(moved.antigen_ca() - c.antigen_ca(), np.tile([1.0, 2.0, 3.0], (3, 1)))


class TestContacts(unittest.TestCase):

    def test_epitope_uses_strict_cutoff(self):
        """Test epitope cutoff"""
        # CDR residue 2 sits at y=7.6; antigen 0 is 0 A away, antigen 1 exactly 3.8 A
        c = _line_complex()
        self.assertEqual(derive_epitope(c, 3.8, cdrs=["H3"]), frozenset({0}))
        self.assertEqual(derive_epitope(c, 3.81, cdrs=["H3"]), frozenset({0, 1}))

    def test_empty_epitope_when_far(self):
        """Test a distant antigen"""
        c = _line_complex(antigen_x=(50.0, 60.0))
        with self.assertLogs("structure_io", level="WARNING"):
            self.assertEqual(derive_epitope(c, 6.6), frozenset())

    def test_mask_cdr(self):
        """Test CDR masking"""
        masked, labels = mask_cdr(_line_complex(), "H3")
        self.assertEqual(masked, "A" + MASK_CHAR * 3 + "FG")
        np.testing.assert_array_equal(labels, [1, 2, 3])

    def test_mask_missing_cdr(self):
        """Test masking a missing CDR"""
        with self.assertRaises(EmptyCDR):
            mask_cdr(_line_complex(), "L3")

    def test_split_contact_positions(self):
        contact, noncontact = split_contact_positions(_line_complex(), 4.0, "H3")
        self.assertEqual(contact, (1, 2, 3))
        self.assertEqual(noncontact, ())
        contact, noncontact = split_contact_positions(_line_complex(antigen_x=(50.0,)), 4.0, "H3")
        self.assertEqual(contact, ())
        self.assertEqual(noncontact, (1, 2, 3))


class TestPdbRoundTrip(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.complex = generate_complex(RngStream(3), "rt0")

    def tearDown(self):
        self.tmp.cleanup()

    def test_write_then_parse(self):
        """Test PDB write and parse"""
        write_pdb(self.complex, self.dir / "rt0.pdb")
        parsed, dropped = parse_structure(self.dir / "rt0.pdb", entry_for(self.complex, "rt0.pdb"))
        self.assertEqual(dropped, 0)
        self.assertEqual(parsed, self.complex)

    def test_missing_chain(self):
        """Test a missing chain"""
        write_pdb(self.complex, self.dir / "rt0.pdb")
        entry = entry_for(self.complex, "rt0.pdb")
        entry = replace(entry, antigen_chain_ids=("Z",))
        with self.assertRaises(MissingChain):
            parse_structure(self.dir / "rt0.pdb", entry)

    def test_short_atom_record(self):
        """Test a short ATOM record"""
        path = self.dir / "short.pdb"
        path.write_text("ATOM      1  N   ALA H   1      1.000   2.000\n")
        with self.assertRaises(MalformedRecord) as ctx:
            parse_structure(path, entry_for(self.complex, "short.pdb"))
        self.assertEqual(ctx.exception.line_no, 1)

    def test_incomplete_residue_dropped_and_ranges_remapped(self):
        """Test dropping incomplete residues"""
        path = self.dir / "rt0.pdb"
        write_pdb(self.complex, path)
        # drop the O atom of the first heavy residue
        lines = [ln for ln in path.read_text().splitlines()
                 if not (ln.startswith("ATOM") and ln[21] == "H" and int(ln[22:26]) == 1 and ln[12:16].strip() == "O")]
        path.write_text("\n".join(lines) + "\n")
        with self.assertLogs("structure_io", level="WARNING"):
            parsed, dropped = parse_structure(path, entry_for(self.complex, "rt0.pdb"))
        self.assertEqual(dropped, 1)
        start, end = self.complex.cdr_ranges["H3"]
        self.assertEqual(parsed.cdr_ranges["H3"], (start - 1, end - 1))
        self.assertEqual(parsed.cdr_sequence("H3"), self.complex.cdr_sequence("H3"))


class TestManifest(unittest.TestCase):

    def _write(self, payload):
        fd, path = tempfile.mkstemp(suffix=".json")
        with os.fdopen(fd, "w") as f:
            json.dump(payload, f)
        self.addCleanup(os.unlink, path)
        return path

    def _entry(self, **over):
        entry = {"id": "a", "structure_path": "a.pdb", "heavy_chain_id": "H",
                 "antigen_chain_ids": ["A"], "cdr_ranges": {"H3": [10, 18]}}
        entry.update(over)
        return entry

    def test_bare_list_and_default_split(self):
        """Test manifest parsing"""
        manifest = load_manifest(self._write([self._entry()]))
        self.assertEqual(len(manifest.entries), 1)
        self.assertEqual(manifest.entries[0].split, "train")
        self.assertIsNone(manifest.entries[0].light_chain_id)

    def test_unknown_key(self):
        """Test unknown manifest keys"""
        with self.assertRaises(ManifestError):
            load_manifest(self._write({"entries": [self._entry(chain="X")]}))

    def test_duplicate_ids(self):
        """Test duplicate manifest ids"""
        with self.assertRaises(ManifestError):
            load_manifest(self._write([self._entry(), self._entry()]))

    def test_missing_field(self):
        entry = self._entry()
        del entry["heavy_chain_id"]
        with self.assertRaises(ManifestError):
            load_manifest(self._write([entry]))

    def test_invalid_json(self):
        fd, path = tempfile.mkstemp(suffix=".json")
        with os.fdopen(fd, "w") as f:
            f.write("{not json")
        self.addCleanup(os.unlink, path)
        with self.assertRaises(ManifestError):
            load_manifest(path)

    def test_load_complexes_follows_manifest_order(self):
        """Test complex loading order"""
        with tempfile.TemporaryDirectory() as tmp:
            entries = []
            for i in (2, 0, 1):
                c = generate_complex(RngStream(0), f"c{i}")
                write_pdb(c, Path(tmp) / f"c{i}.pdb")
                entries.append(entry_for(c, f"c{i}.pdb"))
            DatasetManifest(entries, Path(tmp)).save(Path(tmp) / "manifest.json")
            complexes = load_complexes(load_manifest(Path(tmp) / "manifest.json"))
        self.assertEqual([c.id for c in complexes], ["c2", "c0", "c1"])


if __name__ == "__main__":
    unittest.main(verbosity=2)
