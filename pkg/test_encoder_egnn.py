#!/usr/bin/env python3
"""
Unit Tests for the typed equivariant graph encoder
"""

import unittest
from dataclasses import replace

import numpy as np
from scipy.spatial.transform import Rotation

from encoder_egnn import EgnnEncoder, EncoderConfig, gram_block
from errors import NonFiniteActivation
from graph_builder import build_graph
from numeric_core import RngStream, Tensor, check_gradients
from synthetic_data import SynthConfig, generate_complex

SMALL = SynthConfig(heavy_len=14, h3=(5, 10), light_len=8, l3=(2, 5), antigen_len=10)


def _encoder(n_layers=2, d_gnn=12, seed=0, gram_form="channel"):
    enc = EgnnEncoder(EncoderConfig(n_layers=n_layers, d_gnn=d_gnn, aa_embed_dim=6, gram_form=gram_form),
                      RngStream(seed))
    gen = np.random.default_rng(seed)
    for name, p in enc.parameters().items():
        if "coord_out" in name:
            p.data[...] = gen.normal(0.0, 0.1, size=p.shape)
    return enc


def _masks(graph, c):
    cdr = np.zeros(graph.n_nodes, bool)
    cdr[graph.cdr_nodes(c, "H3")] = True
    epi = np.zeros(graph.n_nodes, bool)
    epi[graph.epitope_nodes(c.epitope)] = True
    return cdr, epi


class TestGramBlock(unittest.TestCase):

    def test_channel_form_is_rotation_invariant(self):
        """Test rotation invariance of the channel Gram block"""
        delta = np.random.default_rng(0).normal(size=(5, 4, 3))
        rot = Rotation.from_euler("xyz", [0.4, 1.0, -0.7]).as_matrix()
        a = gram_block(Tensor(delta)).data
        b = gram_block(Tensor(delta @ rot.T)).data
        self.assertEqual(a.shape, (5, 16))
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_outer3_shape(self):
        out = gram_block(Tensor(np.ones((2, 4, 3))), form="outer3")
        self.assertEqual(out.shape, (2, 9))


class TestEncoder(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.complex = generate_complex(RngStream(21), "e0", SMALL)
        cls.graph = build_graph(cls.complex, cdr="H3")
        cls.cdr_mask, cls.epi_mask = _masks(cls.graph, cls.complex)

    def test_output_shapes(self):
        """Test encoder output shapes"""
        out = _encoder()(self.graph, self.cdr_mask, self.epi_mask)
        self.assertEqual(out.h.shape, (self.graph.n_nodes, 12))
        self.assertEqual(out.coords_hat.shape, (self.graph.n_nodes, 4, 3))

    def test_zero_initialized_coordinate_heads_keep_coords(self):
        """Test that fresh coordinate heads leave coordinates unchanged"""
        enc = EgnnEncoder(EncoderConfig(n_layers=2, d_gnn=8, aa_embed_dim=4), RngStream(0))
        out = enc(self.graph, self.cdr_mask, self.epi_mask)
        np.testing.assert_array_equal(out.coords_hat.data, self.graph.coords)

    def test_rigid_motion(self):
        """h is invariant and coordinates are equivariant under rotation + translation"""
        enc = _encoder()
        a = enc(self.graph, self.cdr_mask, self.epi_mask)
        shifts = np.random.default_rng(3).uniform(-40.0, 40.0, size=(20, 3))
        for rot, shift in zip(Rotation.random(20, random_state=3).as_matrix(), shifts):
            g2 = build_graph(self.complex.transformed(rot, shift), cdr="H3")
            b = enc(g2, self.cdr_mask, self.epi_mask)
            np.testing.assert_allclose(a.h.data, b.h.data, rtol=0, atol=1e-10)
            np.testing.assert_allclose(a.coords_hat.data @ rot.T + shift, b.coords_hat.data, rtol=0, atol=1e-9)

    def test_permutation_equivariance(self):
        """Test node relabeling"""
        enc = _encoder()
        perm = np.random.default_rng(1).permutation(self.graph.n_nodes)
        relabeled = self.graph.relabel(perm)
        a = enc(self.graph, self.cdr_mask, self.epi_mask)
        b = enc(relabeled, self.cdr_mask[perm], self.epi_mask[perm])
        np.testing.assert_allclose(a.h.data[perm], b.h.data, atol=1e-9)
        np.testing.assert_allclose(a.coords_hat.data[perm], b.coords_hat.data, atol=1e-9)

    def test_cdr_identities_hidden(self):
        """Test that CDR residue identities never reach the encoder"""
        enc = _encoder()
        a = enc(self.graph, self.cdr_mask, self.epi_mask)
        scrambled = self.graph.aa.copy()
        scrambled[self.cdr_mask] = (scrambled[self.cdr_mask] + 7) % 20
        b = enc(replace(self.graph, aa=scrambled), self.cdr_mask, self.epi_mask)
        np.testing.assert_array_equal(a.h.data, b.h.data)

    def test_epitope_flag_changes_embedding(self):
        """Test the epitope node flag"""
        enc = _encoder()
        a = enc(self.graph, self.cdr_mask, self.epi_mask)
        b = enc(self.graph, self.cdr_mask, np.zeros_like(self.epi_mask))
        self.assertFalse(np.allclose(a.h.data, b.h.data))

    def test_non_finite_activation(self):
        enc = _encoder()
        enc.p("layer1.W_node2").data[0, 0] = np.inf
        with self.assertRaises(NonFiniteActivation) as ctx:
            enc(self.graph, self.cdr_mask, self.epi_mask)
        self.assertEqual(ctx.exception.layer, 1)

    def test_gradients(self):
        """Test encoder gradients against finite differences"""
        enc = _encoder(n_layers=1, d_gnn=6)
        picked = {k: enc.parameters()[k] for k in (
            "encoder.W_in", "encoder.layer1.W_msg1", "encoder.layer1.W_type3",
            "encoder.layer1.W_coord5", "encoder.layer1.w_coord_out0", "encoder.global_embed")}

        def loss():
            out = enc(self.graph, self.cdr_mask, self.epi_mask)
            return (out.h * out.h).mean() + (out.coords_hat * out.coords_hat).mean() * 0.01

        errors = check_gradients(loss, picked, h=1e-6, max_entries=6)
        for name, err in errors.items():
            self.assertLess(err, 1e-4, name)


if __name__ == "__main__":
    unittest.main(verbosity=2)
