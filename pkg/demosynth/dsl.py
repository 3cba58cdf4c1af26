"""The program language.

Programs have a single entry point ``run`` whose body is a list of
statements. The concrete grammar is::

    prog  := "DEF" "run" "{" stmts "}"
    stmts := stmt+
    stmt  := ACTION
           | "REPEAT" INT "{" stmts "}"
           | "WHILE" "(" cond ")" "{" stmts "}"
           | "IF" "(" cond ")" "{" stmts "}" [ "ELSE" "{" stmts "}" ]
    cond  := PERCEPT
           | "NOT" "(" cond ")"
           | "AND" "(" cond "," cond ")"
           | "OR" "(" cond "," cond ")"

Actions are named after the world's action primitives (MOVE, TURN_L, ...),
percepts are written P0 .. P{q-1}. Programs are immutable trees of frozen
dataclasses, so structural equality is plain ``==``.
"""
import re
from dataclasses import dataclass

from .config import DSLLimits
from .errors import DecodeError, DSLSyntaxError, LimitError
from .world import ACTION_NAMES

PAD, BOS, EOS = '<pad>', '<bos>', '<eos>'

#: Special program tokens; their ids are fixed at 0, 1 and 2
SPECIAL_TOKENS = (PAD, BOS, EOS)

#: Keywords and punctuation, in vocabulary order
KEYWORDS = ('DEF', 'run', '{', '}', '(', ')', ',', 'REPEAT', 'WHILE', 'IF',
            'ELSE', 'NOT', 'AND', 'OR')

_LEXEME = re.compile(
    r'(?P<space>\s+)|(?P<punct>[{}(),])|(?P<word>[A-Za-z_][A-Za-z0-9_]*)'
    r'|(?P<int>[0-9]+)')

_END = '<end of input>'
_INT = '<int>'


@dataclass(frozen=True)
class Percept:
    "Reads perception bit ``index``"
    index: int


@dataclass(frozen=True)
class Not:
    operand: object


@dataclass(frozen=True)
class And:
    left: object
    right: object


@dataclass(frozen=True)
class Or:
    left: object
    right: object


@dataclass(frozen=True)
class ActionStmt:
    "Emits one action primitive"
    action: int


@dataclass(frozen=True)
class Repeat:
    count: int
    body: tuple


@dataclass(frozen=True)
class While:
    cond: object
    body: tuple


@dataclass(frozen=True)
class If:
    cond: object
    body: tuple


@dataclass(frozen=True)
class IfElse:
    cond: object
    body: tuple
    orelse: tuple


@dataclass(frozen=True)
class Program:
    "The body of ``run``"
    body: tuple


#: Statement kinds that own a condition
CONDITIONAL = (While, If, IfElse)


def child_bodies(stmt):
    "Returns the statement lists directly nested in stmt"
    if isinstance(stmt, IfElse):
        return (stmt.body, stmt.orelse)
    if isinstance(stmt, (Repeat, While, If)):
        return (stmt.body,)
    return ()


def iter_statements(body):
    "Yields every statement of a statement list in pre-order"
    for stmt in body:
        yield stmt
        for child in child_bodies(stmt):
            yield from iter_statements(child)


def statement_count(body):
    "Returns the number of statements, nested ones included"
    return sum(1 for _ in iter_statements(body))


def nesting_depth(body):
    """Returns the depth of the deepest statement: top-level statements are
    at depth 1, the body of a depth-d block is at depth d+1"""
    depth = 0
    for stmt in body:
        inner = max((nesting_depth(child) for child in child_bodies(stmt)),
                    default=0)
        depth = max(depth, 1 + inner)
    return depth


def cond_depth(cond):
    "Returns the nesting depth of a condition"
    if isinstance(cond, Percept):
        return 1
    if isinstance(cond, Not):
        return 1 + cond_depth(cond.operand)
    return 1 + max(cond_depth(cond.left), cond_depth(cond.right))


class Vocabulary():
    """The closed program token alphabet. Ids are assigned in a fixed order
    (specials, keywords, actions, percepts, integer literals), so they are
    stable for a given (q, m, max_repeat)."""

    def __init__(self, action_names, percept_names, max_repeat):
        self.tokens = (
            SPECIAL_TOKENS + KEYWORDS + tuple(action_names)
            + tuple(percept_names)
            + tuple(str(n) for n in range(1, max_repeat + 1)))
        self._ids = {token: index for index, token in enumerate(self.tokens)}
        self._kinds = {}
        for token in SPECIAL_TOKENS:
            self._kinds[token] = 'special'
        for token in KEYWORDS:
            self._kinds[token] = 'keyword'
        for token in action_names:
            self._kinds[token] = 'action'
        for token in percept_names:
            self._kinds[token] = 'percept'
        for n in range(1, max_repeat + 1):
            self._kinds[str(n)] = 'integer'

    @property
    def pad_id(self):
        return self._ids[PAD]

    @property
    def bos_id(self):
        return self._ids[BOS]

    @property
    def eos_id(self):
        return self._ids[EOS]

    def id_of(self, token):
        "Returns the id of a token"
        return self._ids[token]

    def token_of(self, token_id):
        "Returns the token for an id, raising DecodeError if it is unknown"
        if not 0 <= token_id < len(self.tokens):
            raise DecodeError(f"token id {token_id} is not in the vocabulary")
        return self.tokens[token_id]

    def table(self):
        "Returns the id table as a list of dictionaries"
        return [{'id': index, 'token': token, 'kind': self._kinds[token]}
                for index, token in enumerate(self.tokens)]

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._ids


class Language():
    """A dialect of the program language for q percepts and m actions.
    Provides parsing, pretty-printing and the token codec.

    kwargs:

        - limits: a :class:`demosynth.config.DSLLimits`
    """

    def __init__(self, q=6, m=6, limits=None):
        self.q = q
        self.m = m
        self.limits = limits or DSLLimits()
        self.action_names = ACTION_NAMES[:m]
        self.percept_names = tuple(f'P{index}' for index in range(q))
        self.vocabulary = Vocabulary(
            self.action_names, self.percept_names, self.limits.max_repeat)
        self._actions = {name: i for i, name in enumerate(self.action_names)}
        self._percepts = {name: i
                          for i, name in enumerate(self.percept_names)}

    def parse(self, source, max_stmts=None):
        """Parses program text. Raises DSLSyntaxError with the character
        offset of the failure, or LimitError when a bound is exceeded"""
        return _Parser(self, _lex(source), max_stmts).program()

    def pretty_print(self, program):
        "Returns the canonical text of a program"
        return f"DEF run {{ {self._body_text(program.body)} }}"

    def lexemes(self, program):
        "Returns the program as a list of lexeme strings"
        output = ['DEF', 'run', '{']
        self._body_lexemes(program.body, output)
        output.append('}')
        return output

    def to_tokens(self, program):
        "Returns the token ids of a program, wrapped in <bos> ... <eos>"
        vocab = self.vocabulary
        ids = [vocab.bos_id]
        ids.extend(vocab.id_of(lexeme) for lexeme in self.lexemes(program))
        ids.append(vocab.eos_id)
        return tuple(ids)

    def from_tokens(self, tokens, max_stmts=None):
        """Decodes token ids back into a program. Anything ungrammatical,
        including a missing <bos>/<eos>, raises DecodeError"""
        vocab = self.vocabulary
        tokens = [int(token) for token in tokens]
        if not tokens or tokens[0] != vocab.bos_id:
            raise DecodeError("token sequence does not start with <bos>")
        try:
            end = tokens.index(vocab.eos_id)
        except ValueError:
            raise DecodeError("token sequence has no <eos>")
        if any(token != vocab.pad_id for token in tokens[end + 1:]):
            raise DecodeError("tokens other than <pad> follow <eos>")
        lexemes = []
        for position in range(1, end):
            token = vocab.token_of(tokens[position])
            if token in SPECIAL_TOKENS:
                raise DecodeError(
                    f"unexpected {token} at token position {position}")
            lexemes.append((token, position))
        lexemes.append((_END, end))
        try:
            return _Parser(self, lexemes, max_stmts).program()
        except (DSLSyntaxError, LimitError) as err:
            raise DecodeError(str(err)) from err

    def check_limits(self, program, max_stmts=None):
        """Raises LimitError if a program breaks the nesting, size or repeat
        bounds. ``max_stmts`` overrides the statement bound. Condition depth
        is only bounded when sampling."""
        limits = self.limits
        if max_stmts is None:
            max_stmts = limits.max_stmts
        if nesting_depth(program.body) > limits.max_nest:
            raise LimitError(f"nesting deeper than {limits.max_nest}")
        count = statement_count(program.body)
        if count > max_stmts:
            raise LimitError(f"{count} statements exceed {max_stmts}")
        for stmt in iter_statements(program.body):
            if isinstance(stmt, Repeat) and not (
                    1 <= stmt.count <= limits.max_repeat):
                raise LimitError(f"repeat count {stmt.count} out of range")
        return program

    def _body_text(self, body):
        "Returns the text of a statement list"
        return ' '.join(self._stmt_text(stmt) for stmt in body)

    def _stmt_text(self, stmt):
        "Returns the text of one statement"
        if isinstance(stmt, ActionStmt):
            return self.action_names[stmt.action]
        if isinstance(stmt, Repeat):
            return f"REPEAT {stmt.count} {{ {self._body_text(stmt.body)} }}"
        if isinstance(stmt, While):
            return (f"WHILE ({self._cond_text(stmt.cond)}) "
                    f"{{ {self._body_text(stmt.body)} }}")
        text = (f"IF ({self._cond_text(stmt.cond)}) "
                f"{{ {self._body_text(stmt.body)} }}")
        if isinstance(stmt, IfElse):
            text += f" ELSE {{ {self._body_text(stmt.orelse)} }}"
        return text

    def _cond_text(self, cond):
        "Returns the text of a condition"
        if isinstance(cond, Percept):
            return self.percept_names[cond.index]
        if isinstance(cond, Not):
            return f"NOT({self._cond_text(cond.operand)})"
        name = 'AND' if isinstance(cond, And) else 'OR'
        return (f"{name}({self._cond_text(cond.left)}, "
                f"{self._cond_text(cond.right)})")

    def _body_lexemes(self, body, output):
        for stmt in body:
            if isinstance(stmt, ActionStmt):
                output.append(self.action_names[stmt.action])
                continue
            if isinstance(stmt, Repeat):
                output.extend(('REPEAT', str(stmt.count)))
            else:
                output.extend(
                    ('WHILE' if isinstance(stmt, While) else 'IF', '('))
                self._cond_lexemes(stmt.cond, output)
                output.append(')')
            output.append('{')
            self._body_lexemes(stmt.body, output)
            output.append('}')
            if isinstance(stmt, IfElse):
                output.extend(('ELSE', '{'))
                self._body_lexemes(stmt.orelse, output)
                output.append('}')

    def _cond_lexemes(self, cond, output):
        if isinstance(cond, Percept):
            output.append(self.percept_names[cond.index])
        elif isinstance(cond, Not):
            output.extend(('NOT', '('))
            self._cond_lexemes(cond.operand, output)
            output.append(')')
        else:
            output.extend(('AND' if isinstance(cond, And) else 'OR', '('))
            self._cond_lexemes(cond.left, output)
            output.append(',')
            self._cond_lexemes(cond.right, output)
            output.append(')')


def _lex(source):
    "Splits program text into (lexeme, character offset) pairs"
    lexemes = []
    position = 0
    while position < len(source):
        match = _LEXEME.match(source, position)
        if match is None:
            raise DSLSyntaxError(
                f"unexpected character {source[position]!r}", position)
        if match.lastgroup != 'space':
            lexemes.append((match.group(), position))
        position = match.end()
    lexemes.append((_END, len(source)))
    return lexemes


class _Parser():
    "Recursive-descent parser over (lexeme, position) pairs"

    def __init__(self, language, lexemes, max_stmts=None):
        self.language = language
        self.limits = language.limits
        self.max_stmts = max_stmts or self.limits.max_stmts
        self.lexemes = lexemes
        self.index = 0
        self.count = 0

    @property
    def statement_starts(self):
        "Returns the lexemes that may begin a statement"
        return set(self.language.action_names) | {'REPEAT', 'WHILE', 'IF'}

    @property
    def condition_starts(self):
        "Returns the lexemes that may begin a condition"
        return set(self.language.percept_names) | {'NOT', 'AND', 'OR'}

    def peek(self):
        return self.lexemes[self.index][0]

    def position(self):
        return self.lexemes[self.index][1]

    def advance(self):
        lexeme = self.lexemes[self.index][0]
        self.index += 1
        return lexeme

    def expect(self, *allowed):
        "Consumes the next lexeme, which must be one of allowed"
        if self.peek() not in allowed:
            self.fail(allowed)
        return self.advance()

    def fail(self, expected):
        found = self.peek()
        found = 'end of input' if found == _END else repr(found)
        raise DSLSyntaxError(f"unexpected {found}", self.position(), expected)

    def program(self):
        self.expect('DEF')
        self.expect('run')
        body = self.block(1)
        self.expect(_END)
        return Program(body)

    def block(self, depth):
        "Parses '{' stmts '}' whose statements sit at the given depth"
        self.expect('{')
        if depth > self.limits.max_nest:
            raise LimitError(
                f"nesting deeper than {self.limits.max_nest} at position "
                f"{self.position()}")
        body = [self.statement(depth)]
        while self.peek() != '}':
            body.append(self.statement(depth))
        self.advance()
        return tuple(body)

    def statement(self, depth):
        lexeme = self.peek()
        if lexeme not in self.statement_starts:
            self.fail(self.statement_starts)
        self.count += 1
        if self.count > self.max_stmts:
            raise LimitError(
                f"more than {self.max_stmts} statements at position "
                f"{self.position()}")
        self.advance()
        if lexeme == 'REPEAT':
            return Repeat(self.repeat_count(), self.block(depth + 1))
        if lexeme in ('WHILE', 'IF'):
            self.expect('(')
            cond = self.condition()
            self.expect(')')
            body = self.block(depth + 1)
            if lexeme == 'WHILE':
                return While(cond, body)
            if self.peek() == 'ELSE':
                self.advance()
                return IfElse(cond, body, self.block(depth + 1))
            return If(cond, body)
        return ActionStmt(self.language.action_names.index(lexeme))

    def repeat_count(self):
        lexeme = self.peek()
        if not lexeme.isdigit():
            self.fail({_INT})
        count = int(lexeme)
        if not 1 <= count <= self.limits.max_repeat:
            raise LimitError(
                f"repeat count {count} outside [1, {self.limits.max_repeat}]"
                f" at position {self.position()}")
        self.advance()
        return count

    def condition(self):
        lexeme = self.peek()
        if lexeme not in self.condition_starts:
            self.fail(self.condition_starts)
        self.advance()
        if lexeme in self.language.percept_names:
            return Percept(self.language.percept_names.index(lexeme))
        self.expect('(')
        left = self.condition()
        if lexeme == 'NOT':
            self.expect(')')
            return Not(left)
        self.expect(',')
        right = self.condition()
        self.expect(')')
        return And(left, right) if lexeme == 'AND' else Or(left, right)


#: The default dialect (q=6, m=6, default limits)
DEFAULT_LANGUAGE = Language()


def parse(source, language=None):
    "Parses program text with the given (or default) language"
    return (language or DEFAULT_LANGUAGE).parse(source)


def pretty_print(program, language=None):
    "Returns the canonical text of a program"
    return (language or DEFAULT_LANGUAGE).pretty_print(program)


def to_tokens(program, language=None):
    "Returns the token ids of a program"
    return (language or DEFAULT_LANGUAGE).to_tokens(program)


def from_tokens(tokens, language=None):
    "Decodes token ids into a program"
    return (language or DEFAULT_LANGUAGE).from_tokens(tokens)
