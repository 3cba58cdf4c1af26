import gzip
import json
import os
import shutil
import tempfile
import unittest

import pytest

from demosynth.config import hash_object
from demosynth.dataset import (MANIFEST_NAME, SPLITS, DatasetEntry,
                               build_dataset, describe, encode_line,
                               load_dataset, split_filename)
from demosynth.errors import (BudgetError, ConfigMismatch, CorruptDataset,
                              DataError, DatasetIOError, VersionMismatch)
from demosynth.interpreter import coverage_of, replays_consistently

from .common import tiny_config


class DatasetTestCase(unittest.TestCase):
    "Builds one tiny dataset shared by the tests of a class"

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.config = tiny_config()
        cls.path = os.path.join(cls.tmp.name, 'data')
        cls.dataset = build_dataset(cls.config, cls.path)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def copy(self, name):
        "Returns a scratch copy of the shared dataset directory"
        target = os.path.join(self.tmp.name, name)
        shutil.copytree(self.path, target)
        return target


class TestBuildDataset(DatasetTestCase):

    def test_counts(self):
        manifest = self.dataset.manifest
        self.assertEqual(manifest.counts, {'train': 6, 'val': 2, 'test': 2})
        self.assertEqual(len(self.dataset), 10)
        self.assertGreaterEqual(manifest.rejections['candidates'], 10)

    def test_every_set_is_covered(self):
        language = self.dataset.language()
        world = self.config.world
        for entry in self.dataset:
            self.assertEqual(len(entry.demos), self.config.k)
            for demo in entry.demos:
                self.assertTrue(1 <= len(demo) <= self.config.t_max)
                self.assertTrue(replays_consistently(demo, world))
            coverage = coverage_of(entry.program(language), entry.demos,
                                   self.config.step_budget,
                                   horizon=self.config.t_max, config=world)
            self.assertTrue(coverage.complete)

    def test_programs_are_unique(self):
        tokens = [entry.program_tokens for entry in self.dataset]
        self.assertEqual(len(tokens), len(set(tokens)))
        train = {entry.program_tokens for entry in self.dataset.split('train')}
        for entry in self.dataset.split('test'):
            self.assertNotIn(entry.program_tokens, train)

    def test_splits_are_in_index_order(self):
        for name in SPLITS:
            indices = [entry.index for entry in self.dataset.split(name)]
            self.assertEqual(indices, sorted(indices))

    def test_unknown_split(self):
        with self.assertRaises(DataError):
            self.dataset.split('holdout')

    def test_files_are_reproducible(self):
        again = os.path.join(self.tmp.name, 'again')
        build_dataset(self.config, again)
        for name in [split_filename(s) for s in SPLITS] + [MANIFEST_NAME]:
            with open(os.path.join(self.path, name), 'rb') as first, \
                    open(os.path.join(again, name), 'rb') as second:
                self.assertEqual(first.read(), second.read())

    def test_seed_changes_content(self):
        other = build_dataset(tiny_config(seed=12),
                              os.path.join(self.tmp.name, 'other'))
        self.assertNotEqual(other.manifest.content_hash,
                            self.dataset.manifest.content_hash)

    def test_budget(self):
        config = tiny_config(max_sample_factor=1, attempt_budget=1,
                             n_train=40, n_val=0, n_test=40)
        with self.assertRaises(BudgetError):
            build_dataset(config, os.path.join(self.tmp.name, 'starved'))

    def test_line_format(self):
        entry = self.dataset.split('train')[0]
        record = json.loads(encode_line(entry))
        self.assertEqual(sorted(record), ['demos', 'index', 'program',
                                          'tokens'])
        self.assertEqual(DatasetEntry.from_record(record), entry)
        bits, action = record['demos'][0]['steps'][0]
        self.assertEqual(len(bits), self.config.world.q)
        self.assertTrue(set(bits) <= {'0', '1'})
        self.assertIsInstance(action, int)

    def test_describe(self):
        stats = describe(self.dataset)
        self.assertEqual(list(stats.index), ['train', 'val', 'test'])
        self.assertEqual(stats.loc['train', 'entries'], 6)
        self.assertTrue((stats['demo_length'] <= self.config.t_max).all())


class TestLoadDataset(DatasetTestCase):

    def test_round_trip(self):
        loaded = load_dataset(self.path)
        self.assertEqual(loaded, self.dataset)
        self.assertEqual(loaded.manifest, self.dataset.manifest)

    def test_expected_config(self):
        load_dataset(self.path, expected=self.config)
        with self.assertRaises(ConfigMismatch):
            load_dataset(self.path, expected=tiny_config(k=4))

    def test_flipped_byte(self):
        path = self.copy('flipped')
        file_path = os.path.join(path, split_filename('train'))
        with open(file_path, 'rb') as handle:
            raw = bytearray(handle.read())
        raw[len(raw) // 2] ^= 0xFF
        with open(file_path, 'wb') as handle:
            handle.write(bytes(raw))
        with self.assertRaises(CorruptDataset):
            load_dataset(path)

    def test_edited_entry(self):
        path = self.copy('edited')
        file_path = os.path.join(path, split_filename('test'))
        with gzip.open(file_path, 'rt', encoding='utf-8') as handle:
            lines = handle.read().splitlines()
        record = json.loads(lines[0])
        record['program'] = 'DEF run { NOOP NOOP NOOP NOOP NOOP }'
        lines[0] = json.dumps(record, sort_keys=True, separators=(',', ':'))
        with gzip.open(file_path, 'wt', encoding='utf-8') as handle:
            handle.write('\n'.join(lines) + '\n')
        with self.assertRaises(CorruptDataset):
            load_dataset(path)

    def _rewrite_manifest(self, path, change):
        manifest_path = os.path.join(path, MANIFEST_NAME)
        with open(manifest_path, encoding='utf-8') as handle:
            values = json.load(handle)
        change(values)
        with open(manifest_path, 'w', encoding='utf-8') as handle:
            json.dump(values, handle)

    def test_demo_count_mismatch(self):
        path = self.copy('k_mismatch')

        def change(values):
            values['config']['k'] = self.config.k + 1
            values['config_hash'] = hash_object(values['config'])
        self._rewrite_manifest(path, change)
        with self.assertRaises(CorruptDataset):
            load_dataset(path)

    def test_tampered_snapshot(self):
        path = self.copy('tampered')

        def change(values):
            values['config']['t_max'] = 99
        self._rewrite_manifest(path, change)
        with self.assertRaises(CorruptDataset):
            load_dataset(path)

    def test_version(self):
        path = self.copy('version')

        def change(values):
            values['format_version'] = 99
        self._rewrite_manifest(path, change)
        with self.assertRaises(VersionMismatch):
            load_dataset(path)

    def test_tokenizer_convention(self):
        path = self.copy('tokenizer')

        def change(values):
            values['config']['tokenizer'] = 'big-endian'
            values['config_hash'] = hash_object(values['config'])
        self._rewrite_manifest(path, change)
        with self.assertRaises(VersionMismatch):
            load_dataset(path)

    def test_missing(self):
        with self.assertRaises(DatasetIOError):
            load_dataset(os.path.join(self.tmp.name, 'nowhere'))
        path = self.copy('missing_split')
        os.remove(os.path.join(path, split_filename('val')))
        with self.assertRaises(DatasetIOError):
            load_dataset(path)


@pytest.mark.slow
class TestParallelGeneration(DatasetTestCase):

    def test_jobs_do_not_change_output(self):
        parallel = build_dataset(self.config,
                                 os.path.join(self.tmp.name, 'parallel'),
                                 jobs=2)
        self.assertEqual(parallel, self.dataset)
