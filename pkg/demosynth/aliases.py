"""Behavior-preserving program rewrites and bounded alias closures.

Rules (each can be switched off in :class:`demosynth.config.AliasSettings`):

negation_swap
    ``IF (c) {A} ELSE {B}`` <-> ``IF (NOT(c)) {B} ELSE {A}``; an existing
    outer NOT is stripped instead of doubled.
repeat_unroll
    ``REPEAT n {B}`` -> ``B`` n times, ``REPEAT n {B}`` -> ``B REPEAT n-1 {B}``,
    and n consecutive copies of a statement run -> ``REPEAT n {run}``.
repeat_flatten
    ``REPEAT 1 {B}`` -> ``B``, ``REPEAT a {REPEAT b {B}}`` <->
    ``REPEAT a*b {B}`` while a*b stays within the repeat bound.
double_negation
    ``NOT(NOT(c))`` -> ``c`` anywhere in a condition, and the reverse at the
    top of a condition that is not already doubly negated.
commutative
    ``AND(a, b)`` -> ``AND(b, a)``, same for OR. Off by default.

Conditions read the perception vector only, so every rule above leaves the
emitted trace unchanged.
"""
import logging
import threading

from .base import DemoSynthObject
from .config import AliasSettings
from .dsl import (CONDITIONAL, And, If, IfElse, Not, Or, Program, Repeat,
                  While)
from .errors import ClosureOverflow, DecodeError, LimitError

log = logging.getLogger(__name__)


class AliasRuleSet():
    """The enabled rewrite rules of a language, with closure caps

    kwargs:

        - settings: a :class:`demosynth.config.AliasSettings`
    """

    def __init__(self, language, settings=None):
        self.log = logging.getLogger("{}.{}".format(
            self.__class__.__module__, self.__class__.__name__
        ))
        self.language = language
        self.settings = (settings or AliasSettings()).validate()
        limits = language.limits
        self.max_repeat = limits.max_repeat
        #: statement bound inside closures, raised to allow unrolling
        self.max_stmts = limits.max_stmts * limits.max_repeat

    @property
    def enabled(self):
        "Returns the names of the enabled rules"
        s = self.settings
        names = ('negation_swap', 'repeat_unroll', 'repeat_flatten',
                 'double_negation', 'commutative')
        return tuple(name for name in names if getattr(s, name))

    def admissible(self, program):
        "Returns True if a rewritten program respects the closure bounds"
        try:
            self.language.check_limits(program, max_stmts=self.max_stmts)
        except LimitError:
            return False
        return True

    def rewrites(self, program):
        "Yields (rule name, program) for every single admissible rewrite"
        seen = set()
        for rule, body in self._body(program.body):
            candidate = Program(body)
            if candidate == program or candidate in seen:
                continue
            seen.add(candidate)
            if self.admissible(candidate):
                yield rule, candidate

    def _body(self, body):
        "Yields (rule, body) for rewrites anywhere inside a statement list"
        s = self.settings
        if s.repeat_unroll:
            for rolled in self._rolls(body):
                yield 'repeat_unroll', rolled
        for index, stmt in enumerate(body):
            head, tail = body[:index], body[index + 1:]
            for rule, replacement in self._statement(stmt):
                yield rule, head + replacement + tail
            for rule, new_stmt in self._inside(stmt):
                yield rule, head + (new_stmt,) + tail

    def _statement(self, stmt):
        "Yields (rule, statements) replacing a single statement"
        s = self.settings
        if isinstance(stmt, IfElse) and s.negation_swap:
            if isinstance(stmt.cond, Not):
                cond = stmt.cond.operand
            else:
                cond = Not(stmt.cond)
            yield 'negation_swap', (IfElse(cond, stmt.orelse, stmt.body),)
        if not isinstance(stmt, Repeat):
            return
        if s.repeat_unroll:
            yield 'repeat_unroll', stmt.body * stmt.count
            if stmt.count > 1:
                yield 'repeat_unroll', stmt.body + (
                    Repeat(stmt.count - 1, stmt.body),)
        if s.repeat_flatten:
            if stmt.count == 1:
                yield 'repeat_flatten', stmt.body
            inner = stmt.body[0] if len(stmt.body) == 1 else None
            if isinstance(inner, Repeat) and (
                    stmt.count * inner.count <= self.max_repeat):
                yield 'repeat_flatten', (
                    Repeat(stmt.count * inner.count, inner.body),)
            for outer in range(2, stmt.count):
                if stmt.count % outer == 0 and stmt.count // outer > 1:
                    yield 'repeat_flatten', (Repeat(
                        outer, (Repeat(stmt.count // outer, stmt.body),)),)

    def _inside(self, stmt):
        "Yields (rule, statement) for rewrites of a condition or child body"
        if isinstance(stmt, CONDITIONAL):
            for rule, cond in self._condition(stmt.cond, top=True):
                yield rule, _with_cond(stmt, cond)
        if isinstance(stmt, (Repeat, While, If, IfElse)):
            for rule, body in self._body(stmt.body):
                yield rule, _with_body(stmt, body)
        if isinstance(stmt, IfElse):
            for rule, orelse in self._body(stmt.orelse):
                yield rule, IfElse(stmt.cond, stmt.body, orelse)

    def _condition(self, cond, top=False):
        "Yields (rule, condition) for rewrites anywhere inside a condition"
        s = self.settings
        if s.double_negation:
            if _double_negated(cond):
                yield 'double_negation', cond.operand.operand
            if top and not _double_negated(cond):
                yield 'double_negation', Not(Not(cond))
        if s.commutative and isinstance(cond, (And, Or)):
            yield 'commutative', type(cond)(cond.right, cond.left)
        if isinstance(cond, Not):
            for rule, operand in self._condition(cond.operand):
                yield rule, Not(operand)
        elif isinstance(cond, (And, Or)):
            for rule, left in self._condition(cond.left):
                yield rule, type(cond)(left, cond.right)
            for rule, right in self._condition(cond.right):
                yield rule, type(cond)(cond.left, right)

    def _rolls(self, body):
        "Yields bodies where consecutive copies of a run became a REPEAT"
        for start in range(len(body)):
            for width in range(1, (len(body) - start) // 2 + 1):
                segment = body[start:start + width]
                copies = 1
                while (body[start + copies * width:
                            start + (copies + 1) * width] == segment
                       and copies < self.max_repeat):
                    copies += 1
                for count in range(2, copies + 1):
                    yield (body[:start] + (Repeat(count, segment),)
                           + body[start + count * width:])


def _double_negated(cond):
    return isinstance(cond, Not) and isinstance(cond.operand, Not)


def _with_cond(stmt, cond):
    if isinstance(stmt, IfElse):
        return IfElse(cond, stmt.body, stmt.orelse)
    return type(stmt)(cond, stmt.body)


def _with_body(stmt, body):
    if isinstance(stmt, Repeat):
        return Repeat(stmt.count, body)
    if isinstance(stmt, IfElse):
        return IfElse(stmt.cond, body, stmt.orelse)
    return type(stmt)(stmt.cond, body)


class AliasClosure(DemoSynthObject):
    """Programs reachable from a root by breadth-first rewriting. ``edges``
    records every (program, rule, program) application that was explored."""

    META_ATTRIBUTES = ['size', 'depth', 'edge_count']

    def __init__(self, root, language, **kwargs):
        super(AliasClosure, self).__init__(**kwargs)
        self.root = root
        self.language = language
        self.members = {language.to_tokens(root): root}
        self.edges = []
        self.depth = 0

    @property
    def size(self):
        return len(self.members)

    @property
    def edge_count(self):
        return len(self.edges)

    def tokens(self):
        "Returns the member token sequences"
        return frozenset(self.members)

    def __contains__(self, tokens):
        return tuple(tokens) in self.members


def closure_graph(program, rules):
    """Returns the :class:`AliasClosure` of a program. Raises
    ClosureOverflow when it grows past the size cap."""
    language = rules.language
    closure = AliasClosure(program, language)
    frontier = [program]
    for depth in range(rules.settings.max_depth):
        following = []
        for current in frontier:
            for rule, rewritten in rules.rewrites(current):
                closure.edges.append((current, rule, rewritten))
                tokens = language.to_tokens(rewritten)
                if tokens in closure.members:
                    continue
                closure.members[tokens] = rewritten
                following.append(rewritten)
                if closure.size > rules.settings.max_size:
                    raise ClosureOverflow(
                        f"alias closure passed {rules.settings.max_size} "
                        f"programs at depth {depth + 1}")
        if not following:
            break
        closure.depth = depth + 1
        frontier = following
    return closure


def alias_closure(program, rules):
    "Returns the set of token sequences in the alias closure of a program"
    return closure_graph(program, rules).tokens()


def bidirectional_search(source, target, rules):
    """Returns True if rewrites from both programs meet. The smaller non-empty
    frontier is expanded next, for at most twice the closure depth in total,
    and each side keeps at most max_size programs."""
    language = rules.language
    cap = rules.settings.max_size
    sides = []
    for program in (source, target):
        tokens = language.to_tokens(program)
        sides.append({'seen': {tokens}, 'frontier': [program]})
    if sides[0]['seen'] & sides[1]['seen']:
        return True
    for _ in range(rules.settings.max_depth * 2):
        active = [item for item in sides if item['frontier']]
        if not active:
            break
        side = min(active, key=lambda item: len(item['frontier']))
        other = sides[1] if side is sides[0] else sides[0]
        following = []
        for current in side['frontier']:
            for _, rewritten in rules.rewrites(current):
                tokens = language.to_tokens(rewritten)
                if tokens in other['seen']:
                    return True
                if tokens in side['seen'] or len(side['seen']) >= cap:
                    continue
                side['seen'].add(tokens)
                following.append(rewritten)
        side['frontier'] = following
    return False


class AliasMatcher():
    """Scores predictions against ground truth programs, caching closures
    per ground truth. Closures that overflow fall back to
    :func:`bidirectional_search` and are counted in :attr:`overflows`."""

    def __init__(self, rules):
        self.log = logging.getLogger("{}.{}".format(
            self.__class__.__module__, self.__class__.__name__
        ))
        self.rules = rules
        self.language = rules.language
        self.overflows = 0
        self._closures = {}
        self._lock = threading.Lock()

    def decode(self, tokens):
        "Returns the program of predicted tokens, or None if they do not parse"
        try:
            return self.language.from_tokens(
                tokens, max_stmts=self.rules.max_stmts)
        except DecodeError:
            return None

    def closure(self, truth):
        "Returns the cached token closure of a ground truth, None on overflow"
        key = self.language.to_tokens(truth)
        with self._lock:
            if key in self._closures:
                return self._closures[key]
        try:
            members = alias_closure(truth, self.rules)
        except ClosureOverflow as err:
            self.log.warning("%s; using bidirectional search", err)
            members = None
        with self._lock:
            if key not in self._closures:
                self._closures[key] = members
                if members is None:
                    self.overflows += 1
            return self._closures[key]

    def match(self, pred_tokens, truth):
        """Returns True if the predicted tokens parse and their canonical form
        is an alias of the ground truth program"""
        predicted = self.decode(pred_tokens)
        if predicted is None:
            return False
        canonical = self.language.to_tokens(predicted)
        if canonical == self.language.to_tokens(truth):
            return True
        members = self.closure(truth)
        if members is None:
            return bidirectional_search(truth, predicted, self.rules)
        return canonical in members


def alias_match(pred_tokens, truth, rules):
    "Returns True if pred_tokens parse to an alias of the truth program"
    return AliasMatcher(rules).match(pred_tokens, truth)

