#!/usr/bin/env python3
"""
Unit Tests for run configuration loading
"""

import json
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

from errors import ConfigError
from run_config import RunConfig, config_from_dict, load_config

HERE = Path(__file__).resolve().parent


class TestRunConfig(unittest.TestCase):

    def test_defaults(self):
        """Test default config"""
        cfg = load_config(None)
        self.assertEqual(cfg, RunConfig())
        self.assertEqual((cfg.seed, cfg.cdr, cfg.precision), (0, "H3", "f64"))
        self.assertEqual(cfg.graph.k_ag, 128)
        self.assertEqual(cfg.encoder.d_gnn, 256)

    def test_partial_sections_keep_defaults(self):
        """Test partial config sections"""
        cfg = config_from_dict({"encoder": {"n_layers": 2}, "schedule": {"phases": [{"max_epochs": 3, "lr": 0.01}]}})
        self.assertEqual(cfg.encoder.n_layers, 2)
        self.assertEqual(cfg.encoder.d_gnn, 256)
        self.assertEqual(len(cfg.schedule.phases), 1)
        self.assertEqual(cfg.schedule.phases[0].unfreeze, "none")

    def test_unknown_key_names_dotted_path(self):
        """Test unknown keys"""
        with self.assertRaises(ConfigError) as ctx:
            config_from_dict({"encoder": {"n_layer": 2}})
        self.assertEqual(ctx.exception.field, "encoder.n_layer")
        with self.assertRaises(ConfigError) as ctx:
            config_from_dict({"schedule": {"phases": [{"max_epochs": 1, "lr": 0.1}, {"max_epochs": 1, "learning": 0.1}]}})
        self.assertEqual(ctx.exception.field, "schedule.phases[1].learning")

    def test_invalid_values(self):
        """Test invalid values"""
        with self.assertRaises(ConfigError):
            config_from_dict({"cdr": "H4"})
        with self.assertRaises(ConfigError) as ctx:
            config_from_dict({"adapter": {"d_a": 30, "n_heads": 4}})
        self.assertEqual(ctx.exception.field, "adapter")
        with self.assertRaises(ConfigError):
            config_from_dict({"schedule": {"phases": {"max_epochs": 1}}})

    def test_hash(self):
        """Test config hashing"""
        cfg = RunConfig()
        self.assertEqual(cfg.hash(), RunConfig().hash())
        self.assertEqual(cfg.hash(), replace(cfg, threads=8).hash())
        self.assertNotEqual(cfg.hash(), replace(cfg, seed=1).hash())

    def test_overrides(self):
        """Test command line overrides"""
        cfg = RunConfig().with_overrides(seed=3, precision=None, backend_kind="cache")
        self.assertEqual(cfg.seed, 3)
        self.assertEqual(cfg.precision, "f64")
        self.assertEqual(cfg.backend.kind, "cache")

    def test_save_and_reload_keeps_hash(self):
        cfg = config_from_dict({"seed": 4, "schedule": {"phases": [{"max_epochs": 2, "lr": 0.01, "unfreeze": "all"}]}})
        with tempfile.TemporaryDirectory() as tmp:
            reloaded = load_config(cfg.save(Path(tmp) / "cfg.json"))
        self.assertEqual(reloaded, cfg)
        self.assertEqual(reloaded.hash(), cfg.hash())

    def test_file_errors(self):
        """Test unreadable config files"""
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ConfigError):
                load_config(Path(tmp) / "missing.json")
            bad = Path(tmp) / "bad.json"
            bad.write_text("{not json")
            with self.assertRaises(ConfigError):
                load_config(bad)
            bad.write_text(json.dumps([1, 2]))
            with self.assertRaises(ConfigError):
                load_config(bad)

    def test_shipped_config(self):
        """Test the example config"""
        cfg = load_config(HERE / "evostruct_config.json")
        self.assertEqual(cfg.backend.kind, "toy")
        self.assertEqual([p.unfreeze for p in cfg.schedule.phases], ["none", "top", "all"])
        self.assertEqual(cfg.adapter.d_a % cfg.adapter.n_heads, 0)


if __name__ == "__main__":
    unittest.main(verbosity=2)
