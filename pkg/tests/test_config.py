import os
import tempfile
import unittest
from unittest import mock

import yaml

from demosynth.config import (DEFAULT_SEED, ExperimentConfig, ModelConfig,
                              NoiseSpec, WorldConfig, load_config,
                              max_source_length, visual_vocab_size)
from demosynth.errors import ConfigError


class TestDefaults(unittest.TestCase):

    def test_defaults_validate(self):
        config = ExperimentConfig().validate()
        self.assertEqual(config.k, 25)
        self.assertEqual(config.t_max, 20)
        self.assertEqual((config.n_train, config.n_test), (5000, 500))

    def test_resolved_sizes(self):
        model = ExperimentConfig().resolved().model
        self.assertEqual(model.src_vocab, 4 + 2 ** 12)
        self.assertEqual(model.tgt_vocab, 35)
        self.assertEqual(model.max_src_len, 526)
        self.assertEqual(model.max_tgt_len, 64)

    def test_helpers(self):
        self.assertEqual(visual_vocab_size(3, 2), 36)
        self.assertEqual(max_source_length(2, 3), 9)


class TestValidation(unittest.TestCase):

    def test_world(self):
        for bad in (WorldConfig(q=0), WorldConfig(m=1), WorldConfig(q=7),
                    WorldConfig(low_health_threshold=6),
                    WorldConfig(monster_count=-1)):
            with self.assertRaises(ConfigError):
                bad.validate()

    def test_model_heads(self):
        with self.assertRaises(ConfigError):
            ModelConfig(d_model=10, n_heads=4).validate()
        with self.assertRaises(ConfigError):
            ModelConfig(positional='rotary').validate()

    def test_noise(self):
        with self.assertRaises(ConfigError):
            NoiseSpec(epsilon=1.5).validate()

    def test_entities_fit(self):
        config = ExperimentConfig.from_dict(
            {'world': {'grid_width': 2, 'grid_height': 2,
                       'monster_count': 3, 'item_count': 1}})
        with self.assertRaises(ConfigError):
            config.validate()


class TestDictionaries(unittest.TestCase):

    def test_round_trip(self):
        config = ExperimentConfig.from_dict({'k': 4, 'world': {'q': 3}})
        self.assertEqual(config.k, 4)
        self.assertEqual(config.world.q, 3)
        self.assertEqual(config.world.m, 6)
        self.assertEqual(ExperimentConfig.from_dict(config.to_dict()), config)

    def test_unknown_keys(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({'colour': 'red'})
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({'world': {'colour': 'red'}})
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict({'world': 3})

    def test_hashes(self):
        first = ExperimentConfig()
        self.assertEqual(first.config_hash(), ExperimentConfig().config_hash())
        other = ExperimentConfig.from_dict({'train': {'lr': 0.5}})
        self.assertNotEqual(first.config_hash(), other.config_hash())
        self.assertEqual(first.data_hash(), other.data_hash())
        self.assertNotEqual(first.data_hash(),
                            ExperimentConfig(k=3).data_hash())


class TestLoadConfig(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, 'experiment.yaml')

    def tearDown(self):
        self.tmp.cleanup()

    def test_precedence(self):
        with open(self.path, 'w', encoding='utf-8') as handle:
            yaml.safe_dump({'k': 5, 'seed': 3, 'model': {'d_model': 32}},
                           handle)
        config = load_config(self.path, {'seed': 9})
        self.assertEqual(config.k, 5)
        self.assertEqual(config.seed, 9)
        self.assertEqual(config.model.d_model, 32)
        self.assertEqual(config.model.max_src_len, max_source_length(5, 20))

    def test_environment_seed(self):
        with mock.patch.dict(os.environ, {'DEMOSYNTH_SEED': '123'}):
            config = load_config()
        self.assertEqual((config.seed, config.train.seed, config.noise.seed),
                         (123, 123, 123))
        with mock.patch.dict(os.environ, {'DEMOSYNTH_SEED': 'abc'}):
            with self.assertRaises(ConfigError):
                load_config()
        with mock.patch.dict(os.environ, {}, clear=True):
            config = load_config()
        self.assertEqual((config.seed, config.train.seed, config.noise.seed),
                         (DEFAULT_SEED, DEFAULT_SEED, 0))

    def test_file_seeds_win_over_environment(self):
        with open(self.path, 'w', encoding='utf-8') as handle:
            yaml.safe_dump({'train': {'seed': 4}}, handle)
        with mock.patch.dict(os.environ, {'DEMOSYNTH_SEED': '99'}):
            config = load_config(self.path)
        self.assertEqual((config.seed, config.train.seed, config.noise.seed),
                         (99, 4, 99))

    def test_unreadable(self):
        with self.assertRaises(ConfigError):
            load_config(os.path.join(self.tmp.name, 'missing.yaml'))
        with open(self.path, 'w', encoding='utf-8') as handle:
            handle.write('k: [unclosed\n')
        with self.assertRaises(ConfigError):
            load_config(self.path)
