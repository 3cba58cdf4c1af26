"""The visual language.

A step of a demonstration, a perception vector p of q bits and an action
index a < m, becomes one visual token. The bits of ``pa = p + onehot_m(a)``
are read little-endian (bit n is ``pa[n]``), giving
``psi = sum(pa[n] * 2**n)``, and the token id is ``psi + 4``. Ids 0 to 3 are
the special tokens <pad>, <start>, <sep> and <end>. A demonstration set is
fed to the model as::

    <start> psi(1,1) ... psi(1,l1) <sep> ... <sep> psi(k,1) ... psi(k,lk) <end>

This layout is the compatibility contract for stored datasets and
checkpoints; :data:`demosynth.config.TOKENIZER_CONVENTION` names it.
"""
import dataclasses
from dataclasses import dataclass

from .config import TOKENIZER_CONVENTION, VISUAL_SPECIALS, visual_vocab_size
from .errors import MalformedToken, TokenRangeError
from .seeding import (ACTION_NOISE_STREAM, NOISE_STREAM, keyed_generator)

PAD, START, SEP, END = range(VISUAL_SPECIALS)

#: Names of the special tokens, by id
SPECIAL_NAMES = ('<pad>', '<start>', '<sep>', '<end>')

#: Offset added to psi to obtain a token id
PAYLOAD_OFFSET = VISUAL_SPECIALS


@dataclass(frozen=True)
class VisualSequence:
    """Model input for one demonstration set. ``demo_boundaries`` holds a
    (start, stop) index range into ``tokens`` for each demonstration."""
    tokens: tuple
    demo_boundaries: tuple

    def __len__(self):
        return len(self.tokens)


class VisualLanguage():
    "Tokenizer for q perception bits and m actions"

    def __init__(self, q=6, m=6):
        self.q = q
        self.m = m

    @property
    def vocab_size(self):
        "Returns 4 + 2**(q+m)"
        return visual_vocab_size(self.q, self.m)

    def convention(self):
        "Returns a description of the token layout"
        return {
            'convention': TOKENIZER_CONVENTION,
            'q': self.q,
            'm': self.m,
            'vocab_size': self.vocab_size,
            'specials': {name: index
                         for index, name in enumerate(SPECIAL_NAMES)},
            'payload_offset': PAYLOAD_OFFSET,
            'bit_order': 'little-endian over percepts then action one-hot',
        }

    def tokenize(self, percepts, action):
        "Returns the visual token id of one (percepts, action) pair"
        if len(percepts) != self.q:
            raise TokenRangeError(
                f"expected {self.q} perception bits, got {len(percepts)}")
        if not 0 <= action < self.m:
            raise TokenRangeError(f"action {action} outside [0, {self.m})")
        psi = 0
        for n, bit in enumerate(percepts):
            if bit:
                psi += 2 ** n
        psi += 2 ** (self.q + action)
        return PAYLOAD_OFFSET + psi

    def detokenize(self, token):
        "Returns the (percepts, action) pair encoded by a payload token"
        psi = token - PAYLOAD_OFFSET
        if not 0 <= psi < 2 ** (self.q + self.m):
            raise TokenRangeError(f"{token} is not a payload token")
        percepts = tuple(bool(psi >> n & 1) for n in range(self.q))
        actions = [a for a in range(self.m) if psi >> (self.q + a) & 1]
        if len(actions) != 1:
            raise MalformedToken(
                f"token {token} has {len(actions)} action bits set")
        return percepts, actions[0]

    def assemble(self, demos):
        "Returns the visual sequence of a list of demonstrations"
        tokens = [START]
        boundaries = []
        for index, demo in enumerate(demos):
            if index:
                tokens.append(SEP)
            start = len(tokens)
            tokens.extend(self.tokenize(percepts, action)
                          for percepts, action in demo.steps)
            boundaries.append((start, len(tokens)))
        tokens.append(END)
        return VisualSequence(tuple(tokens), tuple(boundaries))


def inject_noise(demo_set, spec, m=None):
    """Returns a copy of a demonstration set with every perception bit flipped
    independently with probability ``spec.epsilon``. Draws are keyed by
    (seed, demo index, step index) and taken in bit order, so the result does
    not depend on iteration order. With ``spec.action_epsilon`` set (and m
    given), actions are also replaced by a different action with that
    probability."""
    if spec.epsilon == 0 and spec.action_epsilon == 0:
        return demo_set
    demos = []
    for demo_index, demo in enumerate(demo_set.demos):
        steps = []
        for step_index, (percepts, action) in enumerate(demo.steps):
            if spec.epsilon:
                draws = keyed_generator(
                    NOISE_STREAM, spec.seed, demo_index, step_index
                ).random(len(percepts))
                percepts = tuple(bool(bit) != bool(draw < spec.epsilon)
                                 for bit, draw in zip(percepts, draws))
            if spec.action_epsilon and m:
                action = _noisy_action(spec, demo_index, step_index, action, m)
            steps.append((percepts, action))
        demos.append(dataclasses.replace(demo, steps=tuple(steps)))
    return demo_set.with_demos(demos)


def _noisy_action(spec, demo_index, step_index, action, m):
    "Replaces an action by a uniformly drawn different one"
    rng = keyed_generator(
        ACTION_NOISE_STREAM, spec.seed, demo_index, step_index)
    if rng.random() >= spec.action_epsilon:
        return action
    other = int(rng.integers(m - 1))
    return other if other < action else other + 1
