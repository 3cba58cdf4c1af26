import json
import math
import os
import tempfile
import unittest

import numpy as np
import pytest
import torch

from demosynth.dataset import build_dataset
from demosynth.errors import (ConfigMismatch, CorruptDataset,
                              DivergenceError, ShapeError, VersionMismatch)
from demosynth.model import build_model
from demosynth.synthesis import synthesize
from demosynth.training import (BEST_CHECKPOINT, LAST_CHECKPOINT, TRAIN_LOG,
                                BatchSource, TrainState, grad, load_checkpoint,
                                loss, make_batch, restore_state,
                                save_checkpoint, schedule, token_accuracy,
                                train, train_step)
from demosynth.vislang import VisualLanguage

from .common import tiny_config

SOURCES = [[1, 40, 50, 2, 60, 3], [1, 77, 3]]
PROGRAMS = [[1, 3, 4, 17, 5, 2], [1, 3, 4, 21, 19, 5, 2]]


def _model(seed=0, double=False):
    model = build_model(tiny_config().model, seed=seed).eval()
    return model.double() if double else model


def _state_equal(first, second):
    one = first.state_dict()
    two = second.state_dict()
    return one.keys() == two.keys() and all(
        torch.equal(one[name], two[name]) for name in one)


class TestBatch(unittest.TestCase):

    def test_make_batch(self):
        batch = make_batch(SOURCES, PROGRAMS, 0)
        self.assertEqual(len(batch), 2)
        self.assertEqual(tuple(batch.src.shape), (2, 6))
        self.assertEqual(batch.src_mask[1].tolist(),
                         [True, True, True, False, False, False])
        self.assertEqual(batch.tgt_input[0].tolist(), [1, 3, 4, 17, 5, 0])
        self.assertEqual(batch.tgt_output[0].tolist(), [3, 4, 17, 5, 2, 0])
        self.assertEqual(batch.target_tokens, 11)

    def test_mismatched_lists(self):
        with self.assertRaises(ShapeError):
            make_batch(SOURCES, PROGRAMS[:1], 0)
        with self.assertRaises(ShapeError):
            make_batch([], [], 0)


class TestLoss(unittest.TestCase):

    def test_uniform_prediction(self):
        model = _model()
        with torch.no_grad():
            model.generator.weight.zero_()
        value = loss(model, make_batch(SOURCES, PROGRAMS, 0))
        self.assertAlmostEqual(float(value),
                               math.log(model.config.tgt_vocab), places=9)

    def test_matches_log_softmax(self):
        model = _model(seed=1)
        batch = make_batch(SOURCES[:1], PROGRAMS[:1], 0)
        with torch.no_grad():
            logits = model(batch.src, batch.src_mask, batch.tgt_input,
                           batch.tgt_mask)
            log_probs = logits.double().log_softmax(-1)[0]
            expected = -sum(float(log_probs[t, token])
                            for t, token in enumerate(PROGRAMS[0][1:]))
            expected /= len(PROGRAMS[0]) - 1
            value = float(loss(model, batch))
        self.assertAlmostEqual(value, expected, places=9)

    def test_token_weighted_mean(self):
        model = _model(seed=2)
        with torch.no_grad():
            both = float(loss(model, make_batch(SOURCES, PROGRAMS, 0)))
            first = float(loss(model, make_batch(SOURCES[:1], PROGRAMS[:1],
                                                 0)))
            second = float(loss(model, make_batch(SOURCES[1:], PROGRAMS[1:],
                                                  0)))
        counts = [len(tokens) - 1 for tokens in PROGRAMS]
        expected = (first * counts[0] + second * counts[1]) / sum(counts)
        self.assertTrue(math.isclose(both, expected, rel_tol=1e-5))

    def test_token_accuracy_bounds(self):
        accuracy = token_accuracy(_model(seed=3),
                                  make_batch(SOURCES, PROGRAMS, 0))
        self.assertTrue(0.0 <= accuracy <= 1.0)


class TestGradient(unittest.TestCase):

    #: (parameter name, index) pairs checked against finite differences
    CHECKED_ENTRIES = [
        ('generator.weight', (3, 5)),
        ('decoder_norm.gain', (4,)),
        ('decoder.0.ff.inner.weight', (0, 0)),
        ('decoder.0.cross_attn.value.weight', (2, 7)),
        ('encoder.0.self_attn.query.weight', (1, 2)),
        ('src_embed.weight', (40, 0)),
        ('tgt_pos.weight', (2, 3)),
    ]

    def test_finite_differences(self):
        model = _model(seed=4, double=True)
        batch = make_batch(SOURCES, PROGRAMS, 0)
        analytic = grad(model, batch)
        params = dict(model.named_parameters())
        eps = 1e-6
        for name, index in self.CHECKED_ENTRIES:
            param = params[name]
            with torch.no_grad():
                original = float(param[index])
                param[index] = original + eps
                upper = float(loss(model, batch))
                param[index] = original - eps
                lower = float(loss(model, batch))
                param[index] = original
            numeric = (upper - lower) / (2 * eps)
            value = float(analytic[name][index])
            tolerance = 1e-3 * max(abs(value), abs(numeric)) + 1e-7
            self.assertLessEqual(abs(value - numeric), tolerance, name)

    def test_zero_output_projection(self):
        model = _model(seed=5)
        with torch.no_grad():
            model.generator.weight.zero_()
        grads = grad(model, make_batch(SOURCES, PROGRAMS, 0))
        self.assertGreater(int(torch.count_nonzero(grads['generator.weight'])),
                           0)
        for name, value in grads.items():
            if name != 'generator.weight':
                self.assertEqual(int(torch.count_nonzero(value)), 0, name)

    def test_gradients_leave_no_state(self):
        model = _model(seed=6)
        grad(model, make_batch(SOURCES, PROGRAMS, 0))
        self.assertTrue(all(p.grad is None for p in model.parameters()))


class TestSchedule(unittest.TestCase):

    def test_warmup_then_decay(self):
        multiplier = schedule(4)
        self.assertAlmostEqual(multiplier(0), 0.25)
        self.assertAlmostEqual(multiplier(3), 1.0)
        self.assertAlmostEqual(multiplier(15), 0.5)

    def test_state_learning_rate(self):
        state = TrainState.create(tiny_config())
        self.assertAlmostEqual(state.lr, 0.01 * 0.5)


class TestTrainStep(unittest.TestCase):

    def test_zero_learning_rate(self):
        state = TrainState.create(tiny_config(train={'lr': 0.0}))
        before = {name: value.clone()
                  for name, value in state.model.state_dict().items()}
        train_step(state, make_batch(SOURCES, PROGRAMS, 0))
        self.assertEqual(state.step, 1)
        for name, value in state.model.state_dict().items():
            self.assertTrue(torch.equal(before[name], value), name)

    def test_update_changes_weights(self):
        state = TrainState.create(tiny_config())
        before = state.model.generator.weight.detach().clone()
        train_step(state, make_batch(SOURCES, PROGRAMS, 0))
        self.assertFalse(torch.equal(before, state.model.generator.weight))

    def test_divergence(self):
        state = TrainState.create(tiny_config())
        with torch.no_grad():
            state.model.generator.weight[0, 0] = float('nan')
        with self.assertRaises(DivergenceError):
            train_step(state, make_batch(SOURCES, PROGRAMS, 0))
        self.assertEqual(state.step, 0)


class TestCheckpoint(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, 'model.ckpt')
        self.state = TrainState.create(tiny_config(), data_hash='abc')
        train_step(self.state, make_batch(SOURCES, PROGRAMS, 0))
        self.state.best_val = 1.5
        save_checkpoint(self.path, self.state)

    def tearDown(self):
        self.tmp.cleanup()

    def test_restore_rewinds_schedule(self):
        expected_lr = self.state.lr
        for _ in range(2):
            train_step(self.state, make_batch(SOURCES, PROGRAMS, 0))
        self.assertNotEqual(self.state.lr, expected_lr)
        restore_state(self.state, load_checkpoint(self.path))
        self.assertEqual(self.state.step, 1)
        self.assertEqual(self.state.scheduler.last_epoch, 1)
        self.assertEqual(self.state.lr, expected_lr)
        self.assertEqual(self.state.scheduler.get_last_lr(), [expected_lr])
        fresh = TrainState.create(tiny_config())
        train_step(fresh, make_batch(SOURCES, PROGRAMS, 0))
        self.assertTrue(_state_equal(self.state.model, fresh.model))

    def test_round_trip(self):
        restored = load_checkpoint(self.path, expected=tiny_config())
        self.assertEqual(restored.step, 1)
        self.assertEqual(restored.best_val, 1.5)
        self.assertEqual(restored.data_hash, 'abc')
        self.assertEqual(restored.config, self.state.config)
        self.assertTrue(_state_equal(restored.model, self.state.model))
        for old, new in zip(self.state.model.parameters(),
                            restored.model.parameters()):
            for key in ('exp_avg', 'exp_avg_sq'):
                self.assertTrue(torch.equal(
                    self.state.optimizer.state[old][key],
                    restored.optimizer.state[new][key]))

    def test_bad_magic(self):
        with open(self.path, 'r+b') as handle:
            handle.write(b'NOTACKPT')
        with self.assertRaises(VersionMismatch):
            load_checkpoint(self.path)

    def test_cut_payload(self):
        with open(self.path, 'rb') as handle:
            raw = handle.read()
        with open(self.path, 'wb') as handle:
            handle.write(raw[:-16])
        with self.assertRaises(CorruptDataset):
            load_checkpoint(self.path)

    def test_other_model_shape(self):
        with self.assertRaises(ConfigMismatch):
            load_checkpoint(self.path,
                            expected=tiny_config(model={'d_model': 32}))

    def test_other_dataset(self):
        with self.assertRaises(ConfigMismatch):
            load_checkpoint(self.path, expected=tiny_config(k=4))


class TestTrain(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.config = tiny_config()
        cls.dataset = build_dataset(cls.config,
                                    os.path.join(cls.tmp.name, 'data'))

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def _fresh(self, config):
        return TrainState.create(config,
                                 data_hash=self.dataset.manifest.content_hash)

    def test_writes_checkpoints_and_log(self):
        out_dir = os.path.join(self.tmp.name, 'run')
        os.makedirs(out_dir)
        state, records = train(self._fresh(self.config), self.dataset,
                               out_dir)
        self.assertEqual(state.step, 4)
        self.assertEqual([record['step'] for record in records], [2, 4])
        for name in (BEST_CHECKPOINT, LAST_CHECKPOINT, TRAIN_LOG):
            self.assertTrue(os.path.exists(os.path.join(out_dir, name)))
        with open(os.path.join(out_dir, TRAIN_LOG), encoding='utf-8') as fh:
            logged = [json.loads(line) for line in fh]
        self.assertEqual(logged, records)
        last = load_checkpoint(os.path.join(out_dir, LAST_CHECKPOINT))
        self.assertEqual(last.step, 4)
        self.assertTrue(_state_equal(last.model, state.model))

    def test_resume_is_exact(self):
        straight, _ = train(self._fresh(self.config), self.dataset)

        out_dir = os.path.join(self.tmp.name, 'resumed')
        os.makedirs(out_dir)
        first = tiny_config(train={'steps': 2})
        train(self._fresh(first), self.dataset, out_dir)
        restored = load_checkpoint(os.path.join(out_dir, LAST_CHECKPOINT))
        self.assertEqual(restored.step, 2)
        resumed = TrainState(self.config, restored.model, step=restored.step,
                             best_val=restored.best_val,
                             data_hash=restored.data_hash)
        resumed.optimizer.load_state_dict(restored.optimizer.state_dict())
        resumed, records = train(resumed, self.dataset, out_dir)
        self.assertEqual(resumed.step, 4)
        self.assertEqual([record['step'] for record in records], [2, 4])
        self.assertTrue(_state_equal(resumed.model, straight.model))

    def test_batches_are_keyed_by_step(self):
        visual = VisualLanguage(self.config.world.q, self.config.world.m)
        source = BatchSource(self.dataset.split('train'), visual, 0)
        first = source.sample(5, 3, 4)
        again = source.sample(5, 3, 4)
        self.assertTrue(torch.equal(first.src, again.src))
        self.assertEqual(len(first), 4)

    def test_incompatible_dataset(self):
        with self.assertRaises(ConfigMismatch):
            train(self._fresh(tiny_config(k=4)), self.dataset)


@pytest.mark.slow
class TestGradientGroups(unittest.TestCase):

    def test_sampled_coordinates_per_group(self):
        model = _model(seed=8, double=True)
        batch = make_batch(SOURCES, PROGRAMS, 0)
        analytic = grad(model, batch)
        params = dict(model.named_parameters())
        rng = np.random.default_rng(8)
        eps = 1e-6
        for group, names in model.parameter_groups().items():
            for _ in range(200):
                name = names[int(rng.integers(len(names)))]
                param = params[name]
                index = tuple(int(rng.integers(size)) for size in param.shape)
                with torch.no_grad():
                    original = float(param[index])
                    param[index] = original + eps
                    upper = float(loss(model, batch))
                    param[index] = original - eps
                    lower = float(loss(model, batch))
                    param[index] = original
                numeric = (upper - lower) / (2 * eps)
                value = float(analytic[name][index])
                tolerance = 1e-3 * max(abs(value), abs(numeric)) + 1e-7
                self.assertLessEqual(abs(value - numeric), tolerance,
                                     f"{group} {name}{index}")


@pytest.mark.slow
class TestOverfit(unittest.TestCase):

    def test_memorizes_a_small_dataset(self):
        config = tiny_config(
            n_train=200, n_val=0, n_test=1,
            model={'d_model': 64, 'n_heads': 4, 'n_enc_blocks': 2,
                   'n_dec_blocks': 2, 'd_ff': 128},
            train={'steps': 2000, 'batch_size': 32, 'lr': 0.003,
                   'warmup': 100, 'eval_interval': 500})
        with tempfile.TemporaryDirectory() as tmp:
            dataset = build_dataset(config, os.path.join(tmp, 'data'))
            state, records = train(TrainState.create(config), dataset)
        self.assertGreaterEqual(records[-1]['val_accuracy'], 0.95)
        language = dataset.language()
        entries = dataset.split('train')
        hits = sum(synthesize(state.model, entry.demos, language)
                   == entry.program_tokens for entry in entries)
        self.assertGreaterEqual(hits / len(entries), 0.9)
