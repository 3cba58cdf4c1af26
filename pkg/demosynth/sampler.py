"""Grammar-directed program sampling.

At every statement slot a production is drawn from the configured weights
(action, repeat, while, if, if/else); bodies have geometrically distributed
lengths; conditions are drawn from (percept, not, and, or). Control flow is
only offered while the nesting bound allows a body below it, and composite
conditions only while the condition depth bound allows operands.
"""
import logging

from .config import DSLLimits, SamplingWeights
from .dsl import (ActionStmt, And, If, IfElse, Language, Not, Or, Percept,
                  Program, Repeat, While)
from .errors import LimitError
from .seeding import PROGRAM_STREAM, keyed_generator

#: Samples drawn before falling back to a one-action program
MAX_RETRIES = 100

log = logging.getLogger(__name__)


class ProgramSampler():
    """Draws random programs for a language

    kwargs:

        - weights: a :class:`demosynth.config.SamplingWeights`
    """

    def __init__(self, language=None, weights=None):
        self.log = logging.getLogger("{}.{}".format(
            self.__class__.__module__, self.__class__.__name__
        ))
        self.language = language or Language()
        self.weights = weights or SamplingWeights()
        self.limits = self.language.limits
        w = self.weights
        self._statement_kinds = ('action', 'repeat', 'while', 'if', 'ifelse')
        self._statement_weights = (w.action, w.repeat, w.while_loop,
                                   w.if_then, w.if_else)
        self._cond_kinds = ('percept', 'not', 'and', 'or')
        self._cond_weights = (w.percept, w.negation, w.conjunction,
                              w.disjunction)

    def sample(self, rng_seed):
        """Returns a program satisfying every language bound. Programs that
        break the statement or token bound are redrawn from the same stream;
        after :data:`MAX_RETRIES` failures a single action is returned."""
        rng = keyed_generator(PROGRAM_STREAM, rng_seed)
        for attempt in range(MAX_RETRIES):
            program = Program(self._body(rng, 1))
            try:
                self.language.check_limits(program)
            except LimitError:
                continue
            if len(self.language.to_tokens(program)) > self.limits.max_tokens:
                continue
            return program
        self.log.warning("seed %d: no program within limits after %d draws",
                         rng_seed, MAX_RETRIES)
        return Program((ActionStmt(int(rng.integers(self.language.m))),))

    def _choose(self, rng, kinds, weights):
        total = float(sum(weights))
        draw = rng.random() * total
        for kind, weight in zip(kinds, weights):
            if draw < weight:
                return kind
            draw -= weight
        return kinds[0]

    def _body(self, rng, depth):
        length = int(rng.geometric(1.0 / self.weights.body_mean))
        return tuple(self._statement(rng, depth) for _ in range(length))

    def _statement(self, rng, depth):
        if depth >= self.limits.max_nest:
            kind = 'action'
        else:
            kind = self._choose(rng, self._statement_kinds,
                                self._statement_weights)
        if kind == 'action':
            return ActionStmt(int(rng.integers(self.language.m)))
        if kind == 'repeat':
            count = int(rng.integers(self.limits.min_sample_repeat,
                                     self.limits.max_repeat + 1))
            return Repeat(count, self._body(rng, depth + 1))
        cond = self._condition(rng, 1)
        body = self._body(rng, depth + 1)
        if kind == 'while':
            return While(cond, body)
        if kind == 'if':
            return If(cond, body)
        return IfElse(cond, body, self._body(rng, depth + 1))

    def _condition(self, rng, depth):
        if depth >= self.limits.max_cond_depth:
            kind = 'percept'
        else:
            kind = self._choose(rng, self._cond_kinds, self._cond_weights)
        if kind == 'percept':
            return Percept(int(rng.integers(self.language.q)))
        if kind == 'not':
            return Not(self._condition(rng, depth + 1))
        left = self._condition(rng, depth + 1)
        right = self._condition(rng, depth + 1)
        return And(left, right) if kind == 'and' else Or(left, right)


def sample_program(rng_seed, limits=None, weights=None, q=6, m=6):
    "Returns one sampled program for the given seed and limits"
    language = Language(q, m, limits or DSLLimits())
    return ProgramSampler(language, weights).sample(rng_seed)
