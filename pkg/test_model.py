#!/usr/bin/env python3
"""
Unit Tests for sample preparation and the composed model
"""

import unittest

import numpy as np
from scipy.spatial.transform import Rotation

from adapter_head import AdapterConfig
from encoder_egnn import EncoderConfig
from errors import ShapeMismatch
from graph_builder import GraphConfig
from model import EvoStructModel, prepare_sample
from numeric_core import RngStream
from plm_backend import ToyPlmBackend
from structure_io import MASK_CHAR, NUM_AA
from synthetic_data import SynthConfig, generate_complex
from training import LossWeights, PhaseConfig, ScheduleConfig, run_phase_schedule

SMALL = SynthConfig(heavy_len=14, h3=(5, 10), light_len=8, l3=(2, 5), antigen_len=10)


def tiny_model(seed=0, dropout=0.2):
    backend = ToyPlmBackend(seed, d_esm=8, n_layers=2, context_radius=4)
    return EvoStructModel(backend, GraphConfig(k_ag=6), EncoderConfig(n_layers=1, d_gnn=8, aa_embed_dim=4),
                          AdapterConfig(d_a=8, n_heads=2, dropout=dropout), seed=seed)


class TestPrepareSample(unittest.TestCase):

    def test_fields(self):
        """Test sample fields"""
        c = generate_complex(RngStream(1), "m0", SMALL)
        s = prepare_sample(c, "H3", GraphConfig(k_ag=6))
        start, end = c.cdr_ranges["H3"]
        self.assertEqual(s.cdr_range, (start, end))
        self.assertEqual(s.masked_seq[start:end], MASK_CHAR * (end - start))
        self.assertEqual(s.native_seq, c.cdr_sequence("H3"))
        self.assertEqual(int(s.cdr_mask.sum()), end - start)
        self.assertEqual(int(s.epitope_mask.sum()), len(c.epitope))
        self.assertEqual(len(s.context), (end - start) + 6)
        self.assertEqual(s.epitope_ca.shape, (len(c.epitope), 3))
        np.testing.assert_array_equal(s.true_cdr_ca, c.cdr_ca("H3"))

    def test_light_chain_cdr(self):
        """Test a light chain CDR sample"""
        c = generate_complex(RngStream(1), "m1", SMALL)
        s = prepare_sample(c, "L3", GraphConfig())
        self.assertTrue(np.all(s.cdr_nodes >= s.graph.offsets["L"]))
        self.assertEqual(s.native_seq, c.cdr_sequence("L3"))


class TestModel(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.sample = prepare_sample(generate_complex(RngStream(2), "m2", SMALL), "H3", GraphConfig(k_ag=6))

    def test_predict(self):
        """Test prediction shapes"""
        pred = tiny_model().predict(self.sample)
        n = len(self.sample.labels)
        self.assertEqual(len(pred.predicted_seq), n)
        self.assertEqual(pred.logits.shape, (n, 20))
        self.assertEqual(pred.cdr_ca.shape, (n, 3))

    def test_same_seed_same_model(self):
        a = tiny_model(seed=3).predict(self.sample)
        b = tiny_model(seed=3).predict(self.sample)
        np.testing.assert_array_equal(a.logits, b.logits)

    def test_state_round_trip(self):
        """Test state export and import"""
        src, dst = tiny_model(seed=1), tiny_model(seed=2)
        dst.load_state(src.state_arrays())
        np.testing.assert_array_equal(src.predict(self.sample).logits, dst.predict(self.sample).logits)

    def test_load_state_rejects_bad_arrays(self):
        """Test state import validation"""
        model = tiny_model()
        arrays = model.state_arrays()
        arrays.pop("head.W2")
        with self.assertRaises(ShapeMismatch):
            model.load_state(arrays)
        arrays = model.state_arrays()
        arrays["head.W2"] = np.zeros((2, 2))
        with self.assertRaises(ShapeMismatch):
            model.load_state(arrays)

    def test_frozen_count_tracks_backend(self):
        """Test frozen parameter count"""
        model = tiny_model()
        all_frozen = model.frozen_count()
        model.backend.unfreeze_all()
        self.assertEqual(model.frozen_count(), model.backend.token_table.data.size)
        self.assertLess(model.frozen_count(), all_frozen)

    def test_zero_antigen_context_ablation(self):
        """Test zeroing the antigen context rows"""
        model = tiny_model()
        full = model.forward(self.sample)
        ablated = model.forward(self.sample, zero_antigen_context=True)
        n_cdr = len(self.sample.cdr_nodes)
        np.testing.assert_array_equal(ablated.encoded.h_ctx.data[n_cdr:], 0.0)
        self.assertFalse(np.allclose(full.logits.data, ablated.logits.data))

    def test_zero_antigen_context_after_training(self):
        """A briefly trained model still reads the antigen rows of its context"""
        model = tiny_model()
        root = RngStream(6)
        train = [prepare_sample(generate_complex(root, f"z{i}", SMALL), "H3", GraphConfig(k_ag=6)) for i in range(3)]
        schedule = ScheduleConfig(phases=(PhaseConfig(5, 1e-2, "none"),), patience=10, batch_size=1)
        run_phase_schedule(model, train, train, LossWeights(), schedule, seed=0, unfreeze_top=1)
        n_cdr = len(self.sample.cdr_nodes)
        full = model.forward(self.sample)
        ablated = model.forward(self.sample, zero_antigen_context=True)
        np.testing.assert_array_equal(ablated.encoded.h_ctx.data[n_cdr:], 0.0)
        np.testing.assert_array_equal(ablated.encoded.h_ctx.data[:n_cdr], full.encoded.h_ctx.data[:n_cdr])
        delta = np.abs(full.logits.data[:, :NUM_AA] - ablated.logits.data[:, :NUM_AA])
        self.assertGreater(delta.max(), 1e-6)

    def test_rigid_motion(self):
        """20 complexes under 20 random rigid motions each"""
        model = tiny_model()
        gen = np.random.default_rng(0)
        for name, p in model.parameters().items():
            if "coord_out" in name:
                p.data[...] = gen.normal(0.0, 0.1, size=p.shape)
        rotations = Rotation.random(20, random_state=7).as_matrix()
        shifts = np.random.default_rng(7).uniform(-25.0, 25.0, size=(20, 3))
        cfg = GraphConfig(k_ag=6)
        root = RngStream(21)
        for i in range(20):
            c = generate_complex(root, f"e{i}", SMALL)
            ref = model.forward(prepare_sample(c, "H3", cfg))
            for rot, shift in zip(rotations, shifts):
                moved = model.forward(prepare_sample(c.transformed(rot, shift), "H3", cfg))
                np.testing.assert_allclose(moved.logits.data[:, :NUM_AA], ref.logits.data[:, :NUM_AA],
                                           rtol=0, atol=1e-10, err_msg=c.id)
                np.testing.assert_allclose(moved.encoded.h.data, ref.encoded.h.data, rtol=0, atol=1e-10,
                                           err_msg=c.id)
                np.testing.assert_allclose(moved.encoded.coords_hat.data, ref.encoded.coords_hat.data @ rot.T + shift,
                                           rtol=0, atol=1e-9, err_msg=c.id)

    def test_dropout_passes_share_encoding(self):
        """Test that both dropout passes share one encoding"""
        model = tiny_model()
        encoded = model.encode(self.sample)
        a = model.decode(encoded, rng=RngStream(0).child("pass1"), training=True)
        b = model.decode(encoded, rng=RngStream(0).child("pass2"), training=True)
        self.assertIs(a.cdr_ca_hat, b.cdr_ca_hat)
        self.assertFalse(np.allclose(a.logits.data, b.logits.data))


if __name__ == "__main__":
    unittest.main(verbosity=2)
