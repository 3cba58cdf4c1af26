import itertools
import re
import unittest

from demosynth.config import NoiseSpec, max_source_length
from demosynth.errors import MalformedToken, TokenRangeError
from demosynth.interpreter import Demonstration, DemoSet
from demosynth.vislang import (END, PAD, SEP, START, VisualLanguage,
                               inject_noise)


def _demo(length, q=6, action=0, bits=None):
    percepts = tuple(bits) if bits else (False,) * q
    return Demonstration(steps=tuple((percepts, action)
                                     for _ in range(length)))


def _demo_set(demos):
    return DemoSet(list(demos), None, None)


def _flip_fraction(before, after):
    flips = total = 0
    for old, new in zip(before.demos, after.demos):
        for (p_old, _), (p_new, _) in zip(old.steps, new.steps):
            flips += sum(a != b for a, b in zip(p_old, p_new))
            total += len(p_old)
    return flips / total


def _bit_pattern_set(n_demos, n_steps):
    "Returns a demo set whose percept bits alternate deterministically"
    demos = []
    for d in range(n_demos):
        steps = tuple((tuple(bool((d + s + b) % 2) for b in range(6)), s % 6)
                      for s in range(n_steps))
        demos.append(Demonstration(steps=steps))
    return _demo_set(demos)


class TestTokenize(unittest.TestCase):

    def test_hand_evaluated(self):
        visual = VisualLanguage(q=3, m=2)
        self.assertEqual(visual.tokenize((0, 0, 0), 0), 12)
        self.assertEqual(visual.tokenize((1, 0, 1), 1), 25)

    def test_detokenize(self):
        visual = VisualLanguage(q=3, m=2)
        self.assertEqual(visual.detokenize(25), ((True, False, True), 1))
        with self.assertRaises(MalformedToken):
            visual.detokenize(4)
        with self.assertRaises(MalformedToken):
            # both action bits set
            visual.detokenize(4 + 8 + 16)
        with self.assertRaises(TokenRangeError):
            visual.detokenize(3)

    def test_range_errors(self):
        visual = VisualLanguage(q=3, m=2)
        with self.assertRaises(TokenRangeError):
            visual.tokenize((0, 0), 0)
        with self.assertRaises(TokenRangeError):
            visual.tokenize((0, 0, 0), 2)

    def test_exhaustive_round_trip(self):
        visual = VisualLanguage(q=6, m=6)
        seen = set()
        for bits in itertools.product((False, True), repeat=6):
            for action in range(6):
                token = visual.tokenize(bits, action)
                self.assertTrue(4 <= token < visual.vocab_size)
                self.assertEqual(visual.detokenize(token), (bits, action))
                seen.add(token)
        self.assertEqual(len(seen), 6 * 2 ** 6)

    def test_vocab_size(self):
        self.assertEqual(VisualLanguage(6, 6).vocab_size, 4 + 2 ** 12)
        self.assertEqual(VisualLanguage(3, 2).convention()['vocab_size'],
                         36)


class TestAssemble(unittest.TestCase):

    def setUp(self):
        self.visual = VisualLanguage()

    def test_one_step(self):
        sequence = self.visual.assemble([_demo(1)])
        self.assertEqual(len(sequence), 3)
        self.assertEqual(sequence.tokens[0], START)
        self.assertEqual(sequence.tokens[-1], END)

    def test_two_demos(self):
        sequence = self.visual.assemble([_demo(2), _demo(3)])
        self.assertEqual(len(sequence), 8)
        self.assertEqual(sequence.tokens.count(SEP), 1)
        self.assertEqual(sequence.demo_boundaries, ((1, 3), (4, 7)))

    def test_longest_sequence(self):
        sequence = self.visual.assemble([_demo(20) for _ in range(25)])
        self.assertEqual(len(sequence), 526)
        self.assertEqual(len(sequence), max_source_length(25, 20))

    def test_regular_form(self):
        demos = [_demo(n, action=n % 6) for n in (1, 4, 2, 7)]
        tokens = self.visual.assemble(demos).tokens
        text = ''.join('s' if t == START else '|' if t == SEP
                       else 'e' if t == END else 'p' if t != PAD else '_'
                       for t in tokens)
        self.assertRegex(text, re.compile(r'^s(p+\|){3}p+e$'))


class TestNoise(unittest.TestCase):

    def test_zero_noise_is_identity(self):
        demos = _bit_pattern_set(3, 5)
        self.assertEqual(inject_noise(demos, NoiseSpec(0.0, 1)).demos,
                         demos.demos)

    def test_full_noise_inverts(self):
        demos = _bit_pattern_set(3, 5)
        noisy = inject_noise(demos, NoiseSpec(1.0, 1))
        for old, new in zip(demos.demos, noisy.demos):
            for (p_old, a_old), (p_new, a_new) in zip(old.steps, new.steps):
                self.assertEqual(p_new, tuple(not bit for bit in p_old))
                self.assertEqual(a_new, a_old)

    def test_flip_rate(self):
        demos = _bit_pattern_set(100, 167)
        noisy = inject_noise(demos, NoiseSpec(0.1, 5))
        self.assertTrue(0.097 <= _flip_fraction(demos, noisy) <= 0.103)

    def test_reproducible(self):
        demos = _bit_pattern_set(4, 10)
        spec = NoiseSpec(0.3, 8)
        self.assertEqual(inject_noise(demos, spec).demos,
                         inject_noise(demos, spec).demos)
        other = inject_noise(demos, NoiseSpec(0.3, 9))
        self.assertNotEqual(inject_noise(demos, spec).demos, other.demos)

    def test_independent_of_other_demos(self):
        demos = _bit_pattern_set(4, 10)
        spec = NoiseSpec(0.3, 8)
        alone = inject_noise(_demo_set(demos.demos[:1]), spec)
        together = inject_noise(demos, spec)
        self.assertEqual(alone.demos[0], together.demos[0])

    def test_composition(self):
        demos = _bit_pattern_set(100, 167)
        twice = inject_noise(inject_noise(demos, NoiseSpec(0.1, 1)),
                             NoiseSpec(0.1, 2))
        expected = 2 * 0.1 * 0.9
        sigma = (expected * (1 - expected) / (100 * 167 * 6)) ** 0.5
        self.assertLess(abs(_flip_fraction(demos, twice) - expected),
                        3 * sigma)

    def test_action_noise(self):
        demos = _bit_pattern_set(3, 12)
        noisy = inject_noise(demos, NoiseSpec(0.0, 4, action_epsilon=1.0),
                             m=6)
        for old, new in zip(demos.demos, noisy.demos):
            for (p_old, a_old), (p_new, a_new) in zip(old.steps, new.steps):
                self.assertEqual(p_new, p_old)
                self.assertNotEqual(a_new, a_old)
                self.assertTrue(0 <= a_new < 6)

    def test_action_noise_needs_m(self):
        demos = _bit_pattern_set(2, 4)
        noisy = inject_noise(demos, NoiseSpec(0.0, 4, action_epsilon=1.0))
        self.assertEqual(noisy.demos, demos.demos)
