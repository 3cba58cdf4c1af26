"""Runs programs in the world to produce demonstrations.

A demonstration is the list of (perception vector, action) pairs emitted
while a program runs from some initial state. Demonstration sets must jointly
exercise every control-flow construct of their program; the interpreter
records which constructs each run exercised in a :class:`CoverageReport`.
"""
import dataclasses
import enum
import logging
from collections import namedtuple
from dataclasses import dataclass, field

from . import world
from .base import DemoSynthObject, DemoSynthObjectList
from .dsl import (ActionStmt, And, If, IfElse, Not, Or, Percept, Repeat,
                  While, child_bodies)
from .errors import DataError, Unsatisfiable
from .seeding import EPISODE_STREAM, derive_seed

#: Default number of actions a single run may emit
DEFAULT_STEP_BUDGET = 50

#: Default stored demonstration length
DEFAULT_T_MAX = 20

#: Default number of episodes tried per demonstration set
DEFAULT_ATTEMPT_BUDGET = 200

#: Condition evaluations allowed per emitted action. Loops whose bodies
#: never act would otherwise spin forever.
TESTS_PER_STEP = 20

log = logging.getLogger(__name__)


class Termination(enum.Enum):
    "How a run ended"
    COMPLETED = 'completed'
    STEP_BUDGET_EXCEEDED = 'step_budget_exceeded'
    #: the run was longer than the storage limit and was cut
    TRUNCATED = 'truncated'


@dataclass(frozen=True)
class Demonstration:
    """One trace. ``steps`` holds (percepts, action) pairs where percepts is
    a tuple of q bools. ``initial`` is kept for replays but is not part of
    equality."""
    steps: tuple
    terminated: Termination = Termination.COMPLETED
    episode_seed: int = None
    initial: object = field(default=None, compare=False, repr=False)

    def __len__(self):
        return len(self.steps)

    @property
    def actions(self):
        "Returns the action indices of the trace"
        return tuple(action for _, action in self.steps)

    @property
    def percepts(self):
        "Returns the perception vectors of the trace"
        return tuple(percepts for percepts, _ in self.steps)

    def truncated(self, t_max):
        "Returns the demonstration cut to its first t_max steps"
        if len(self.steps) <= t_max:
            return self
        return dataclasses.replace(
            self, steps=self.steps[:t_max], terminated=Termination.TRUNCATED)


_Node = namedtuple('_Node', ['id', 'stmt', 'bodies'])


def _annotate(body, counter):
    "Numbers the statements of a body in pre-order"
    nodes = []
    for stmt in body:
        node_id = counter[0]
        counter[0] += 1
        bodies = tuple(_annotate(child, counter)
                       for child in child_bodies(stmt))
        nodes.append(_Node(node_id, stmt, bodies))
    return tuple(nodes)


class CoverageReport(DemoSynthObject):
    """Which statements ran, which branches of each If/IfElse were taken and
    whether each While was both entered and exited. Statements are numbered
    in pre-order."""

    META_ATTRIBUTES = ['complete', 'statements', 'branches', 'loops']

    def __init__(self, program, **kwargs):
        super(CoverageReport, self).__init__(**kwargs)
        self.program = program
        self.nodes = _annotate(program.body, [0])
        self.executed = {}
        self.branches = {}
        self.loops = {}
        self._register(self.nodes)

    def _register(self, nodes):
        for node in nodes:
            self.executed[node.id] = False
            if isinstance(node.stmt, (If, IfElse)):
                self.branches[node.id] = [False, False]
            elif isinstance(node.stmt, While):
                self.loops[node.id] = [False, False]
            for body in node.bodies:
                self._register(body)

    @property
    def statements(self):
        "Returns the number of statements executed at least once"
        return sum(self.executed.values())

    @property
    def complete(self):
        "Returns True when every flag is set"
        return all(self._flags())

    def _flags(self):
        flags = list(self.executed.values())
        for pair in self.branches.values():
            flags.extend(pair)
        for pair in self.loops.values():
            flags.extend(pair)
        return flags

    def missing(self):
        "Returns descriptions of the flags that are still unset"
        output = []
        for node_id, done in self.executed.items():
            if not done:
                output.append(f"statement {node_id} never ran")
        for node_id, (taken, skipped) in self.branches.items():
            if not taken:
                output.append(f"if {node_id} never took its true branch")
            if not skipped:
                output.append(f"if {node_id} never took its false branch")
        for node_id, (entered, exited) in self.loops.items():
            if not entered:
                output.append(f"while {node_id} was never entered")
            if not exited:
                output.append(f"while {node_id} never exited")
        return output

    def merge(self, other):
        """Ors the flags of another report for the same program into this one.
        Returns True if any new flag was set."""
        before = self._flags()
        for node_id, done in other.executed.items():
            self.executed[node_id] = self.executed[node_id] or done
        for table, theirs in ((self.branches, other.branches),
                              (self.loops, other.loops)):
            for node_id, pair in theirs.items():
                table[node_id] = [a or b for a, b in zip(table[node_id], pair)]
        return self._flags() != before

    def summary(self):
        "Returns a dictionary version of the report"
        output = super(CoverageReport, self).summary()
        output['missing'] = self.missing()
        return output


class _BudgetExceeded(Exception):
    "Internal signal that a run hit its action or test budget"


class _Run():
    "Mutable bookkeeping of one interpreter run"

    def __init__(self, state, coverage, step_budget, horizon):
        self.state = state
        self.coverage = coverage
        self.step_budget = step_budget
        self.test_budget = step_budget * TESTS_PER_STEP
        self.horizon = horizon
        self.steps = []
        self.tests = 0
        self._percepts = None

    @property
    def visible(self):
        "True while coverage events still fall inside the stored prefix"
        return self.horizon is None or len(self.steps) < self.horizon

    @property
    def percepts(self):
        if self._percepts is None:
            self._percepts = world.perceptions(self.state)
        return self._percepts

    def emit(self, action):
        if len(self.steps) >= self.step_budget:
            raise _BudgetExceeded()
        self.steps.append((self.percepts, action))
        self.state = world.step(self.state, action)
        self._percepts = None

    def test(self, cond):
        self.tests += 1
        if self.tests > self.test_budget:
            raise _BudgetExceeded()
        return evaluate_condition(cond, self.percepts)

    def executed(self, node):
        if self.visible:
            self.coverage.executed[node.id] = True

    def branch(self, node, value):
        if self.visible:
            self.coverage.branches[node.id][0 if value else 1] = True

    def loop(self, node, entered):
        if self.visible:
            self.coverage.loops[node.id][0 if entered else 1] = True


def evaluate_condition(cond, percepts):
    "Evaluates a condition against a perception vector"
    if isinstance(cond, Percept):
        return bool(percepts[cond.index])
    if isinstance(cond, Not):
        return not evaluate_condition(cond.operand, percepts)
    if isinstance(cond, And):
        return (evaluate_condition(cond.left, percepts)
                and evaluate_condition(cond.right, percepts))
    if isinstance(cond, Or):
        return (evaluate_condition(cond.left, percepts)
                or evaluate_condition(cond.right, percepts))
    raise TypeError(f"not a condition: {cond!r}")


def _execute_body(nodes, run):
    for node in nodes:
        _execute(node, run)


def _execute(node, run):
    stmt = node.stmt
    run.executed(node)
    if isinstance(stmt, ActionStmt):
        run.emit(stmt.action)
    elif isinstance(stmt, Repeat):
        for _ in range(stmt.count):
            _execute_body(node.bodies[0], run)
    elif isinstance(stmt, While):
        while True:
            if not run.test(stmt.cond):
                run.loop(node, entered=False)
                break
            run.loop(node, entered=True)
            _execute_body(node.bodies[0], run)
    else:
        value = run.test(stmt.cond)
        run.branch(node, value)
        if value:
            _execute_body(node.bodies[0], run)
        elif isinstance(stmt, IfElse):
            _execute_body(node.bodies[1], run)


def trace_program(program, initial, step_budget=DEFAULT_STEP_BUDGET,
                  horizon=None, episode_seed=None):
    """Runs a program with instrumentation and returns the demonstration and
    the coverage it achieved. Only events that happen before ``horizon``
    actions have been emitted are counted as covered."""
    coverage = CoverageReport(program)
    run = _Run(initial, coverage, step_budget, horizon)
    terminated = Termination.COMPLETED
    try:
        _execute_body(coverage.nodes, run)
    except _BudgetExceeded:
        terminated = Termination.STEP_BUDGET_EXCEEDED
    demo = Demonstration(
        steps=tuple(run.steps), terminated=terminated,
        episode_seed=episode_seed, initial=initial)
    return demo, coverage


def run_program(program, initial, step_budget=DEFAULT_STEP_BUDGET):
    "Runs a program from an initial state and returns its demonstration"
    demo, _ = trace_program(program, initial, step_budget)
    return demo


def initial_state(demo, config=None):
    "Returns the initial state of a demonstration, rebuilding it if needed"
    if demo.initial is not None:
        return demo.initial
    if config is None or demo.episode_seed is None:
        raise DataError("demonstration carries no initial state or seed")
    return world.init(config, demo.episode_seed)


def coverage_of(program, demos, step_budget=DEFAULT_STEP_BUDGET,
                horizon=None, config=None):
    """Re-runs the program from the initial state of every demonstration and
    returns the combined coverage"""
    coverage = CoverageReport(program)
    for demo in demos:
        _, report = trace_program(
            program, initial_state(demo, config), step_budget, horizon)
        coverage.merge(report)
    return coverage


def replays_consistently(demo, config=None):
    """Returns True if stepping the stored actions from the initial state
    reproduces the stored perception vectors"""
    state = initial_state(demo, config)
    for percepts, action in demo.steps:
        if world.perceptions(state) != tuple(percepts):
            return False
        state = world.step(state, action)
    return True


class DemoSet(DemoSynthObjectList):
    """k demonstrations of one program together with their coverage

    kwargs:

        - attempts: number of episodes drawn to build the set
    """

    META_ATTRIBUTES = ['k', 'attempts', 'complete']

    def __init__(self, demos, program, coverage, **kwargs):
        super(DemoSet, self).__init__(demos, **kwargs)
        self.program = program
        self.coverage = coverage

    @property
    def demos(self):
        return self.items

    @property
    def k(self):
        return len(self.items)

    @property
    def attempts(self):
        return self.kwargs.get('attempts')

    @property
    def complete(self):
        "Returns coverage completeness, or None when coverage was not traced"
        if self.coverage is None:
            return None
        return self.coverage.complete

    def with_demos(self, demos):
        "Returns a copy of this set holding different demonstrations"
        return DemoSet(demos, self.program, self.coverage, **self.kwargs)

    def __eq__(self, other):
        if not isinstance(other, DemoSet):
            return NotImplemented
        return self.program == other.program and self.items == other.items


def generate_demo_set(program, config, k, attempt_budget=DEFAULT_ATTEMPT_BUDGET,
                      step_budget=DEFAULT_STEP_BUDGET, t_max=DEFAULT_T_MAX,
                      seed=0):
    """Draws episodes until the accumulated coverage is complete and k
    demonstrations are available. Episodes that add coverage are always kept;
    the rest of the set is topped up with other episodes, preferring traces
    not seen before. The kept demonstrations stay in episode order.

    Raises Unsatisfiable when the attempt budget runs out first, or when more
    than k episodes are needed for full coverage.
    """
    coverage = CoverageReport(program)
    essential, fresh, repeated = [], [], []
    seen = set()
    attempts = 0
    for attempt in range(attempt_budget):
        attempts = attempt + 1
        episode_seed = derive_seed(EPISODE_STREAM, seed, attempt)
        demo, report = trace_program(
            program, world.init(config, episode_seed), step_budget,
            horizon=t_max, episode_seed=episode_seed)
        if not demo.steps:
            # an episode that emits nothing cannot be stored
            continue
        demo = demo.truncated(t_max)
        if coverage.merge(report):
            essential.append((attempt, demo))
        elif demo.steps in seen:
            repeated.append((attempt, demo))
        else:
            fresh.append((attempt, demo))
        seen.add(demo.steps)
        if coverage.complete and len(essential) + len(fresh) >= k:
            break
    if not coverage.complete:
        raise Unsatisfiable(
            f"coverage incomplete after {attempts} episodes: "
            f"{'; '.join(coverage.missing())}")
    if len(essential) > k:
        raise Unsatisfiable(
            f"full coverage needs {len(essential)} demonstrations, k={k}")
    chosen = essential + (fresh + repeated)[:k - len(essential)]
    if len(chosen) < k:
        raise Unsatisfiable(f"only {len(chosen)} episodes for k={k}")
    chosen.sort(key=lambda pair: pair[0])
    log.debug("demo set for seed %d built from %d episodes", seed, attempts)
    return DemoSet([demo for _, demo in chosen], program, coverage,
                   attempts=attempts)
