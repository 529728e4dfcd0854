#!/usr/bin/env python3
"""
Unit Tests for evaluation metrics and the diagnostics report
"""

import json
import math
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

from diagnostics import (
    PredictionRecord,
    aa_frequency_shift,
    aar,
    binding_pair_correlation,
    caar,
    comparison_table,
    count_liabilities,
    dockq,
    effective_vocabulary,
    epitope_f1,
    evaluate_predictions,
    fnat,
    kabsch_rmsd,
    load_predictions,
    ngram_coverage,
    perplexity,
    positional_aar,
    rmsd,
    write_prediction,
    write_report,
)
from errors import NoContacts, PredictionFormatError
from numeric_core import RngStream
from structure_io import AMINO_ACIDS
from synthetic_data import generate_complex


def _complexes(n=3, seed=0):
    root = RngStream(seed)
    return {f"d{i}": generate_complex(root, f"d{i}") for i in range(n)}


def _native_records(complexes, with_coords=True):
    return [PredictionRecord(c.id, "H3", c.cdr_sequence("H3"), None,
                             c.cdr_ca("H3") if with_coords else None) for c in complexes.values()]


class TestSequenceMetrics(unittest.TestCase):

    def test_aar_and_caar(self):
        """Test recovery rates"""
        self.assertAlmostEqual(aar("ACDE", "ACDF"), 0.75)
        self.assertAlmostEqual(caar("ACDE", "ACDF", [2, 3]), 0.5)
        self.assertIsNone(caar("ACDE", "ACDF", []))
        with self.assertRaises(ValueError):
            aar("AC", "ACD")

    def test_perplexity_of_uniform_logits(self):
        """Test perplexity of uniform logits"""
        self.assertAlmostEqual(perplexity(np.zeros((4, 20)), [0, 1, 2, 3]), 20.0)

    def test_perplexity_ignores_special_columns(self):
        logits = np.zeros((2, 25))
        logits[:, 20:] = 40.0
        self.assertAlmostEqual(perplexity(logits, [5, 6]), 20.0)

    def test_effective_vocabulary(self):
        """Test effective vocabulary size"""
        self.assertAlmostEqual(effective_vocabulary([AMINO_ACIDS]), 20.0)
        self.assertAlmostEqual(effective_vocabulary(["GGGG", "GG"]), 1.0)
        self.assertTrue(math.isnan(effective_vocabulary([])))

    def test_liabilities(self):
        """Test liability motif counting"""
        self.assertEqual(count_liabilities("NGNG"), 2)
        self.assertEqual(count_liabilities("NSC"), 2)
        self.assertEqual(count_liabilities("CC"), 0)
        self.assertEqual(count_liabilities("MAM"), 2)
        self.assertEqual(count_liabilities("NSC", unpaired_cys=False), 1)

    def test_ngram_coverage(self):
        """Test n-gram coverage"""
        cov = ngram_coverage(["ACDA"], ["ACDE", "ACGG"], n=2)
        self.assertEqual(cov["unique_true"], 5)
        self.assertEqual(cov["top_covered"], 2)
        self.assertAlmostEqual(cov["top_overlap"], 2 / 5)

    def test_frequency_shift(self):
        shift = aa_frequency_shift(["AA"], ["AC"])
        self.assertAlmostEqual(shift[AMINO_ACIDS.index("A")], 1.0)
        self.assertAlmostEqual(shift[AMINO_ACIDS.index("C")], -1.0)
        self.assertTrue(np.isnan(shift[AMINO_ACIDS.index("W")]))

    def test_positional_aar_bins(self):
        """Test positional recovery bins"""
        bins = positional_aar([("A", "A")], bins=11)
        self.assertEqual(bins[5], 1.0)
        self.assertTrue(np.isnan(bins[0]))
        profile = positional_aar([("AAAAAAAAAAA", "AAAAACCCCCC")], bins=11)
        np.testing.assert_array_equal(profile, [1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0])


class TestStructureMetrics(unittest.TestCase):

    def setUp(self):
        self.c = generate_complex(RngStream(8), "s0")
        self.true = self.c.cdr_ca("H3")
        self.antigen = self.c.antigen_ca()

    def test_rmsd(self):
        self.assertEqual(rmsd(self.true, self.true), 0.0)
        self.assertAlmostEqual(rmsd(self.true + [1.0, 0.0, 0.0], self.true), 1.0)

    def test_kabsch_removes_rigid_motion(self):
        """Test superposed RMSD"""
        rot = Rotation.from_euler("xyz", [0.5, -0.3, 1.2]).as_matrix()
        moved = self.true @ rot.T + [3.0, 1.0, -2.0]
        self.assertAlmostEqual(kabsch_rmsd(moved, self.true), 0.0, places=6)
        self.assertGreater(rmsd(moved, self.true), 1.0)

    def test_native_pose_scores_perfectly(self):
        """Test interface scores of the native pose"""
        self.assertEqual(fnat(self.true, self.true, self.antigen, 6.6), 1.0)
        self.assertAlmostEqual(dockq(self.true, self.true, self.antigen, 6.6), 1.0, places=6)
        self.assertEqual(epitope_f1(self.true, self.antigen, self.c.epitope, 6.6), 1.0)

    def test_far_pose(self):
        """Test interface scores of a pose far from the antigen"""
        far = self.true + [100.0, 0.0, 0.0]
        self.assertEqual(fnat(far, self.true, self.antigen, 6.6), 0.0)
        self.assertEqual(epitope_f1(far, self.antigen, self.c.epitope, 6.6), 0.0)
        self.assertLess(dockq(far, self.true, self.antigen, 6.6), 0.1)

    def test_no_interface(self):
        self.assertTrue(math.isnan(fnat(self.true, self.true, self.antigen + 500.0, 6.6)))
        self.assertEqual(epitope_f1(self.true, self.antigen + 500.0, [], 6.6), 1.0)


class TestInterfaceStatistics(unittest.TestCase):

    def test_native_pairs_correlate_perfectly(self):
        """Test binding pair correlation on native sequences"""
        complexes = _complexes()
        items = [(c, "H3", c.cdr_sequence("H3")) for c in complexes.values()]
        pred_m, true_m, r = binding_pair_correlation(items, 6.6)
        self.assertAlmostEqual(pred_m.sum(), 1.0)
        np.testing.assert_array_equal(pred_m, true_m)
        self.assertAlmostEqual(r, 1.0)

    def test_no_contacts(self):
        c = next(iter(_complexes(1).values()))
        with self.assertRaises(NoContacts):
            binding_pair_correlation([(c, "H3", c.cdr_sequence("H3"))], 0.1)


class TestPredictionDumps(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        """Test prediction file round trip"""
        rec = PredictionRecord("x1", "H3", "ACD", np.zeros((3, 20)), np.ones((3, 3)))
        path = write_prediction(rec, self.dir)
        self.assertEqual(path.name, "x1.H3.json")
        loaded = load_predictions(self.dir)
        self.assertEqual(len(loaded), 1)
        self.assertEqual(loaded[0].predicted_seq, "ACD")
        np.testing.assert_array_equal(loaded[0].cdr_coords, np.ones((3, 3)))

    def test_format_errors(self):
        """Test malformed prediction files"""
        (self.dir / "a.json").write_text(json.dumps({"id": "a", "cdr": "H3", "predicted_seq": "AB"}))
        with self.assertRaises(PredictionFormatError):
            load_predictions(self.dir)
        (self.dir / "a.json").write_text(json.dumps({"id": "a", "cdr": "H3", "predicted_seq": "AC",
                                                     "per_position_logits": [[0.0] * 20]}))
        with self.assertRaises(PredictionFormatError):
            load_predictions(self.dir)
        (self.dir / "a.json").write_text("[1, 2]")
        with self.assertRaises(PredictionFormatError):
            load_predictions(self.dir)
        with self.assertRaises(PredictionFormatError):
            load_predictions(self.dir / "missing")


class TestReport(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.complexes = _complexes()

    def test_native_predictions(self):
        """Test a report built from native sequences"""
        report = evaluate_predictions(_native_records(self.complexes), self.complexes, 6.6, method="native")
        self.assertEqual(report.summary["AAR"]["mean"], 1.0)
        self.assertEqual(report.summary["AAR"]["n"], 3)
        self.assertEqual(report.summary["RMSD"]["mean"], 0.0)
        self.assertAlmostEqual(report.diversity_recovery, 1.0)
        self.assertAlmostEqual(report.pair_correlation, 1.0)
        self.assertEqual(report.summary["PPL"]["n"], 0)
        row = report.summary_row()
        self.assertEqual(row["AAR"], "1.000 ± 0.000")

    def test_rejects_unknown_or_misaligned(self):
        """Test predictions that do not match the dataset"""
        rec = PredictionRecord("nope", "H3", "A")
        with self.assertRaises(PredictionFormatError):
            evaluate_predictions([rec], self.complexes, 6.6)
        c = self.complexes["d0"]
        with self.assertRaises(PredictionFormatError):
            evaluate_predictions([PredictionRecord("d0", "H3", c.cdr_sequence("H3") + "A")], self.complexes, 6.6)

    def test_write_report_bundle(self):
        """Test report files"""
        report = evaluate_predictions(_native_records(self.complexes), self.complexes, 6.6)
        with tempfile.TemporaryDirectory() as tmp:
            out = write_report(report, tmp)
            names = {p.name for p in Path(out).iterdir()}
            for name in ("report.json", "summary.csv", "per_complex.csv", "aa_frequency.csv",
                         "position_freq_pred.csv", "pair_freq_native.csv", "positional_aar.csv",
                         "ngram_coverage.csv", "failure_modes.csv"):
                self.assertIn(name, names)
            per_complex = pd.read_csv(Path(out) / "per_complex.csv")
            data = json.loads((Path(out) / "report.json").read_text())
        self.assertEqual(list(per_complex["id"]), ["d0", "d1", "d2"])
        self.assertEqual(data["method"], "evostruct")

    def test_comparison_table(self):
        """Test the method comparison table"""
        native = evaluate_predictions(_native_records(self.complexes), self.complexes, 6.6, method="native")
        flat = [PredictionRecord(c.id, "H3", "G" * len(c.cdr_sequence("H3"))) for c in self.complexes.values()]
        poly_g = evaluate_predictions(flat, self.complexes, 6.6, method="poly_g")
        table = comparison_table([native, poly_g])
        self.assertEqual(list(table["method"]), ["native", "poly_g"])
        self.assertAlmostEqual(poly_g.v_eff, 1.0)
        self.assertGreater(table["V_eff"].iloc[0], table["V_eff"].iloc[1])


if __name__ == "__main__":
    unittest.main(verbosity=2)
