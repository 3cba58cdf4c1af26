"""demosynth: synthesize programs in a small control-flow language from
demonstrations of an agent in a grid world."""

__version__ = '0.1'
