"""Exceptions raised by demosynth.

Everything derives from :class:`DemoSynthError`. Problems with input data,
datasets or checkpoints derive from :class:`DataError`, problems inside the
network from :class:`ModelError`; the command line maps both to exit code 2
and :class:`UsageError` to exit code 1.
"""


class DemoSynthError(RuntimeError):
    "Base class for all demosynth errors"


class UsageError(DemoSynthError):
    "Bad command line usage"


class DataError(DemoSynthError):
    "Base class for errors about programs, demonstrations and datasets"


class ModelError(DemoSynthError):
    "Base class for errors raised by the network and its training loop"


class ConfigError(DataError):
    "A configuration violates one of its invariants"


class DSLSyntaxError(DataError):
    """Raised by the parser. Carries the lexeme position of the failure and
    the set of lexemes that would have been accepted there."""

    def __init__(self, message, position=None, expected=()):
        self.position = position
        self.expected = frozenset(expected)
        if position is not None:
            message = f"{message} at position {position}"
        if self.expected:
            message += f" (expected one of: {', '.join(sorted(self.expected))})"
        super(DSLSyntaxError, self).__init__(message)


class LimitError(DataError):
    "A program exceeds the nesting, size or repeat bounds of the language"


class DecodeError(DataError):
    "A program token sequence is not grammatical"


class InvalidAction(DataError):
    "An action index outside [0, m) was given to the world"


class Unsatisfiable(DataError):
    """No demonstration set covering every control-flow construct could be
    found within the episode budget"""


class TokenRangeError(DataError):
    "A perception vector or action index does not fit the visual language"


class MalformedToken(DataError):
    "A visual token whose action bits are not one-hot"


class DatasetIOError(DataError):
    "A dataset could not be read or written"


class BudgetError(DataError):
    "Too many sampled programs were rejected to reach the requested counts"


class CorruptDataset(DataError):
    "A stored dataset failed its hash or per-entry checks"


class VersionMismatch(DataError):
    "A stored artifact has an unsupported format version"


class ConfigMismatch(DataError):
    "Two artifacts were produced under incompatible configurations"


class ShapeError(ModelError):
    "Input arrays do not match the shapes fixed by the model config"


class DivergenceError(ModelError):
    "Training produced a non-finite loss"


class ClosureOverflow(DemoSynthError):
    "An alias closure grew past its size cap"
