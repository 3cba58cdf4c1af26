import unittest

import pytest

from demosynth.aliases import (AliasMatcher, AliasRuleSet, alias_closure,
                               alias_match, bidirectional_search,
                               closure_graph)
from demosynth.config import AliasSettings, WorldConfig
from demosynth.dsl import Language
from demosynth.errors import ClosureOverflow
from demosynth.evaluation import behavioral_eq
from demosynth.sampler import sample_program

LANGUAGE = Language()

#: Rewrite edges checked per sampled program, spread over every depth
EDGES_PER_PROGRAM = 60

#: Programs whose closures are checked for trace preservation
SOUNDNESS_PROGRAMS = [
    "DEF run { REPEAT 2 { MOVE TURN_L } IF (P0) { MOVE } ELSE { TURN_R } }",
    "DEF run { WHILE (NOT(P3)) { IF (AND(P0, P1)) { ATTACK } MOVE } }",
    "DEF run { REPEAT 4 { NOOP } TURN_L TURN_L }",
    "DEF run { IF (OR(P1, P4)) { PICKUP } ELSE { REPEAT 2 { MOVE } } }",
]


def _program(text):
    return LANGUAGE.parse(text)


def _tokens(text):
    return LANGUAGE.to_tokens(_program(text))


def _rules(**settings):
    return AliasRuleSet(LANGUAGE, AliasSettings(**settings))


class TestClosure(unittest.TestCase):

    def test_repeat_unroll(self):
        closure = alias_closure(_program("DEF run { REPEAT 2 { MOVE } }"),
                                _rules())
        self.assertIn(_tokens("DEF run { MOVE MOVE }"), closure)
        self.assertIn(_tokens("DEF run { MOVE REPEAT 1 { MOVE } }"), closure)

    def test_roll(self):
        closure = alias_closure(_program("DEF run { TURN_L TURN_L TURN_L }"),
                                _rules())
        self.assertIn(_tokens("DEF run { REPEAT 3 { TURN_L } }"), closure)
        self.assertIn(_tokens("DEF run { REPEAT 2 { TURN_L } TURN_L }"),
                      closure)

    def test_negation_swap(self):
        closure = alias_closure(
            _program("DEF run { IF (P0) { MOVE } ELSE { NOOP } }"), _rules())
        self.assertIn(
            _tokens("DEF run { IF (NOT(P0)) { NOOP } ELSE { MOVE } }"),
            closure)

    def test_swap_strips_negation(self):
        program = _program("DEF run { IF (NOT(P2)) { MOVE } ELSE { NOOP } }")
        rewritten = {LANGUAGE.to_tokens(candidate)
                     for _, candidate in _rules().rewrites(program)}
        self.assertIn(_tokens("DEF run { IF (P2) { NOOP } ELSE { MOVE } }"),
                      rewritten)
        self.assertNotIn(
            _tokens("DEF run { IF (NOT(NOT(P2))) { NOOP } ELSE { MOVE } }"),
            rewritten)

    def test_negation_swap_on_compound_condition(self):
        text = "DEF run { IF (AND(NOT(P0), P1)) { MOVE } ELSE { TURN_L } }"
        swapped = ("DEF run { IF (NOT(AND(NOT(P0), P1))) { TURN_L } "
                   "ELSE { MOVE } }")
        closure = alias_closure(_program(text), _rules())
        self.assertIn(_tokens(swapped), closure)
        self.assertIn(
            _tokens("DEF run { IF (NOT(NOT(AND(NOT(P0), P1)))) { MOVE } "
                    "ELSE { TURN_L } }"), closure)
        self.assertTrue(alias_match(_tokens(swapped), _program(text),
                                    _rules()))

    def test_straight_line_singleton(self):
        graph = closure_graph(_program("DEF run { MOVE TURN_L ATTACK }"),
                              _rules())
        self.assertEqual(graph.size, 1)
        self.assertEqual(graph.edge_count, 0)

    def test_double_negation(self):
        closure = alias_closure(_program("DEF run { IF (NOT(NOT(P0))) "
                                         "{ MOVE } }"), _rules())
        self.assertIn(_tokens("DEF run { IF (P0) { MOVE } }"), closure)
        closure = alias_closure(_program("DEF run { IF (P0) { MOVE } }"),
                                _rules())
        self.assertIn(_tokens("DEF run { IF (NOT(NOT(P0))) { MOVE } }"),
                      closure)

    def test_commutative(self):
        text = "DEF run { IF (AND(P0, P1)) { MOVE } }"
        swapped = _tokens("DEF run { IF (AND(P1, P0)) { MOVE } }")
        self.assertNotIn(swapped, alias_closure(_program(text), _rules()))
        self.assertIn(swapped, alias_closure(_program(text),
                                             _rules(commutative=True)))

    def test_rules_can_be_disabled(self):
        text = "DEF run { IF (P0) { MOVE } ELSE { NOOP } }"
        swapped = _tokens("DEF run { IF (NOT(P0)) { NOOP } ELSE { MOVE } }")
        closure = alias_closure(_program(text), _rules(negation_swap=False))
        self.assertNotIn(swapped, closure)
        rules = _rules(repeat_unroll=False, repeat_flatten=False)
        self.assertEqual(
            len(alias_closure(_program("DEF run { REPEAT 2 { MOVE } }"),
                              rules)), 1)
        self.assertEqual(rules.enabled, ('negation_swap', 'double_negation'))

    def test_depth_bound(self):
        program = _program("DEF run { REPEAT 2 { MOVE } }")
        self.assertEqual(len(alias_closure(program, _rules(max_depth=0))), 1)
        graph = closure_graph(program, _rules(max_depth=1))
        self.assertEqual(graph.depth, 1)

    def test_overflow(self):
        program = _program("DEF run { REPEAT 4 { MOVE TURN_L } }")
        with self.assertRaises(ClosureOverflow):
            closure_graph(program, _rules(max_size=2))

    def test_bounds_respected(self):
        rules = _rules()
        graph = closure_graph(_program(SOUNDNESS_PROGRAMS[0]), rules)
        for member in graph.members.values():
            self.assertTrue(rules.admissible(member))


class TestMatch(unittest.TestCase):

    def test_identity_and_alias(self):
        truth = _program("DEF run { REPEAT 2 { MOVE } }")
        rules = _rules()
        self.assertTrue(alias_match(_tokens("DEF run { REPEAT 2 { MOVE } }"),
                                    truth, rules))
        self.assertTrue(alias_match(_tokens("DEF run { MOVE MOVE }"), truth,
                                    rules))
        self.assertFalse(alias_match(_tokens("DEF run { MOVE }"), truth,
                                     rules))

    def test_unparsable_prediction(self):
        truth = _program("DEF run { MOVE }")
        self.assertFalse(alias_match((1, 6, 2), truth, _rules()))
        self.assertFalse(alias_match((), truth, _rules()))

    def test_trailing_padding(self):
        truth = _program("DEF run { MOVE }")
        self.assertTrue(alias_match(_tokens("DEF run { MOVE }") + (0, 0),
                                    truth, _rules()))

    def test_behavioral_but_not_alias(self):
        branchy = _program("DEF run { IF (P0) { MOVE } ELSE { MOVE } }")
        plain = _program("DEF run { MOVE }")
        self.assertTrue(behavioral_eq(branchy, plain, WorldConfig(),
                                      n_trials=20))
        self.assertFalse(alias_match(LANGUAGE.to_tokens(branchy), plain,
                                     _rules()))
        self.assertFalse(alias_match(LANGUAGE.to_tokens(plain), branchy,
                                     _rules()))

    def test_overflow_falls_back_to_search(self):
        truth = _program("DEF run { REPEAT 2 { MOVE } }")
        matcher = AliasMatcher(_rules(max_size=2))
        self.assertTrue(matcher.match(_tokens("DEF run { MOVE MOVE }"),
                                      truth))
        self.assertEqual(matcher.overflows, 1)
        self.assertFalse(matcher.match(_tokens("DEF run { TURN_L }"), truth))
        self.assertEqual(matcher.overflows, 1)

    def test_bidirectional_search(self):
        rules = _rules()
        source = _program("DEF run { REPEAT 2 { MOVE } TURN_L }")
        target = _program("DEF run { MOVE MOVE TURN_L }")
        self.assertTrue(bidirectional_search(source, target, rules))
        self.assertTrue(bidirectional_search(target, source, rules))
        self.assertFalse(bidirectional_search(
            source, _program("DEF run { TURN_L }"), rules))


class TestSoundness(unittest.TestCase):

    def _check(self, text, settings, trials):
        rules = _rules(**settings)
        root = _program(text)
        graph = closure_graph(root, rules)
        for member in graph.members.values():
            self.assertTrue(
                behavioral_eq(root, member, WorldConfig(), n_trials=trials),
                LANGUAGE.pretty_print(member))

    def test_closure_members_behave_alike(self):
        for text in SOUNDNESS_PROGRAMS:
            self._check(text, {'max_depth': 1, 'commutative': True}, 5)

    @pytest.mark.slow
    def test_full_closures_behave_alike(self):
        for text in SOUNDNESS_PROGRAMS:
            self._check(text, {'max_depth': 2, 'commutative': True}, 20)

    @pytest.mark.slow
    def test_sampled_rewrite_edges(self):
        rules = AliasRuleSet(LANGUAGE)
        for seed in range(150):
            program = sample_program(seed)
            try:
                graph = closure_graph(program, rules)
            except ClosureOverflow as err:
                self.fail(f"seed {seed}: {err}")
            edges = graph.edges
            stride = max(1, len(edges) // EDGES_PER_PROGRAM)
            for before, rule, after in edges[::stride] + edges[-1:]:
                self.assertTrue(
                    behavioral_eq(before, after, WorldConfig(), n_trials=50),
                    f"{rule}: {LANGUAGE.pretty_print(before)}")
