#!/usr/bin/env python3
"""
Unit Tests for the synthetic complex generator
"""

import json
import tempfile
import unittest
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from numeric_core import RngStream
from structure_io import load_complexes, load_manifest
from synthetic_data import PAIRING, SynthConfig, generate_complex, generate_dataset


class TestGenerateComplex(unittest.TestCase):

    def test_deterministic_per_id(self):
        """Test per-complex determinism"""
        a = generate_complex(RngStream(4), "c0")
        b = generate_complex(RngStream(4), "c0")
        c = generate_complex(RngStream(4), "c1")
        self.assertEqual(a, b)
        self.assertNotEqual(a.sequence(a.heavy), c.sequence(c.heavy))

    def test_layout(self):
        """Test synthetic complex layout"""
        cfg = SynthConfig()
        c = generate_complex(RngStream(0), "c0", cfg)
        self.assertEqual(len(c.heavy), cfg.heavy_len)
        self.assertEqual(len(c.light), cfg.light_len)
        self.assertEqual(len(c.antigen), cfg.antigen_len)
        self.assertEqual(c.cdr_ranges, {"H3": cfg.h3, "L3": cfg.l3})
        self.assertEqual({r.chain_id for r in c.antigen}, {"A"})

    def test_calpha_steps(self):
        """Test Calpha spacing"""
        c = generate_complex(RngStream(0), "c0")
        ca = np.array([r.ca for r in c.heavy])
        np.testing.assert_allclose(np.linalg.norm(np.diff(ca, axis=0), axis=1), 3.8, atol=2e-2)

    def test_antigen_docked_against_h3(self):
        """Test antigen placement"""
        for i in range(4):
            c = generate_complex(RngStream(i), f"c{i}")
            self.assertTrue(c.epitope)
            self.assertLess(cdist(c.cdr_ca("H3"), c.antigen_ca()).min(), 6.6)

    def test_planted_pairs(self):
        """Test planted residue pairs"""
        self.assertEqual(sorted(PAIRING.tolist()), list(range(20)))
        cfg = SynthConfig(pair_prob=1.0)
        c = generate_complex(RngStream(3), "p0", cfg)
        dist = cdist(c.cdr_ca("H3"), c.antigen_ca())
        start = cfg.h3[0]
        checked = 0
        for p, row in enumerate(dist):
            nearest = int(np.argmin(row))
            if row[nearest] < cfg.contact_cutoff:
                self.assertEqual(c.heavy[start + p].aa, PAIRING[c.antigen[nearest].aa])
                checked += 1
        self.assertGreater(checked, 0)


class TestGenerateDataset(unittest.TestCase):

    def test_files_and_splits(self):
        """Test dataset files and splits"""
        with tempfile.TemporaryDirectory() as tmp:
            manifest = generate_dataset(1, 4, tmp, SynthConfig(val_fraction=0.25))
            files = sorted(p.name for p in Path(tmp).iterdir())
            raw = json.loads((Path(tmp) / "manifest.json").read_text())
            reloaded = load_manifest(Path(tmp) / "manifest.json")
            complexes = load_complexes(reloaded)
        self.assertEqual(files, ["manifest.json", "synth000.pdb", "synth001.pdb", "synth002.pdb", "synth003.pdb"])
        self.assertEqual([e["split"] for e in raw["entries"]], ["train", "train", "train", "val"])
        self.assertEqual([e.id for e in manifest.entries], [c.id for c in complexes])
        for entry, c in zip(manifest.entries, complexes):
            self.assertEqual(set(entry.epitope_indices), set(c.epitope))

    def test_same_seed_same_files(self):
        with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
            generate_dataset(5, 2, a)
            generate_dataset(5, 2, b)
            for name in ("synth000.pdb", "synth001.pdb", "manifest.json"):
                self.assertEqual((Path(a) / name).read_text(), (Path(b) / name).read_text())


if __name__ == "__main__":
    unittest.main(verbosity=2)
