"""Counter-based random streams.

Every random draw in demosynth comes from a generator keyed by a tuple of
integers (a seed plus counters such as an episode, demo or step index), so
results never depend on the order in which work is scheduled.
"""
import numpy as np

#: Stream identifiers keep independent uses of one seed apart.
PROGRAM_STREAM = 1
EPISODE_STREAM = 2
SPLIT_STREAM = 3
NOISE_STREAM = 4
ACTION_NOISE_STREAM = 5
BATCH_STREAM = 6
BEHAVIOR_STREAM = 7
PLACEMENT_STREAM = 8

_MASK64 = (1 << 64) - 1


def _entropy(keys):
    "Converts a key tuple into non-negative SeedSequence entropy"
    return [int(key) & _MASK64 for key in keys]


def keyed_generator(*keys):
    """Returns a :class:`numpy.random.Generator` on a Philox counter-based
    bit generator whose key is derived from the given integers"""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(_entropy(keys))))


def derive_seed(*keys):
    "Returns an unsigned 64-bit seed derived from the given integers"
    state = np.random.SeedSequence(_entropy(keys)).generate_state(
        1, dtype=np.uint64)
    return int(state[0])
