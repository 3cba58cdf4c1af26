"""Scoring synthesized programs: exact and aliased accuracy, sampled
behavioral equivalence, evaluation runs and noise ablations.

Rates are kept as exact fractions and only rounded when rendered, so a
report re-run on the same inputs is identical.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import pandas as pd

from . import world
from .aliases import AliasMatcher, AliasRuleSet
from .base import DemoSynthObject
from .config import NoiseSpec
from .dsl import SPECIAL_TOKENS
from .interpreter import DEFAULT_STEP_BUDGET, run_program
from .seeding import BEHAVIOR_STREAM, derive_seed
from .synthesis import DEFAULT_BEAM_WIDTH, GREEDY, synthesize
from .vislang import VisualLanguage, inject_noise

#: Initial states compared by :func:`behavioral_eq` by default
DEFAULT_TRIALS = 50

#: Decimal places used when rendering rates
RATE_PRECISION = 4

#: Program token ids of <pad>, <bos> and <eos>
PAD_ID, BOS_ID, EOS_ID = range(len(SPECIAL_TOKENS))

log = logging.getLogger(__name__)


def strip_specials(tokens):
    """Returns the ids between the leading <bos> and the first <eos>, or None
    if the sequence is not framed that way with only <pad> after <eos>.
    Specials inside the body are kept."""
    tokens = [int(token) for token in tokens]
    if not tokens or tokens[0] != BOS_ID or EOS_ID not in tokens:
        return None
    end = tokens.index(EOS_ID)
    if any(token != PAD_ID for token in tokens[end + 1:]):
        return None
    return tuple(tokens[1:end])


def exact_match(pred, truth):
    """Returns True if two program token sequences are equal up to trailing
    <pad>. A badly framed prediction never matches."""
    body = strip_specials(pred)
    return body is not None and body == strip_specials(truth)


def behavioral_eq(a, b, config, n_trials=DEFAULT_TRIALS,
                  step_budget=DEFAULT_STEP_BUDGET, seed=0):
    """Returns True if both programs emit identical traces from n_trials
    seeded initial states. A sampled check, never a proof."""
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    if a == b:
        return True
    for trial in range(n_trials):
        initial = world.init(config, derive_seed(BEHAVIOR_STREAM, seed, trial))
        first = run_program(a, initial, step_budget)
        second = run_program(b, initial, step_budget)
        if (first.steps, first.terminated) != (second.steps,
                                              second.terminated):
            return False
    return True


def render_rate(rate, digits=RATE_PRECISION):
    "Returns a fraction rounded half-even to a fixed number of decimals"
    return f"{float(round(rate, digits)):.{digits}f}"


@dataclass(frozen=True)
class EntryResult:
    "The verdicts for one evaluated entry at one noise setting"
    index: int
    epsilon: float
    noise_seed: int
    truth: str
    predicted: str
    exact: bool
    alias: bool
    parse_failure: bool
    behavioral: object = None


class EvalReport(DemoSynthObject):
    """Counts and accuracies over evaluated entries, with a breakdown per
    noise level

    kwargs:

        - mode: the decoding mode used
        - overflows: number of alias closures that hit the size cap
        - config_hash: hash of the resolved config the evaluation ran with
        - data_hash: content hash of the evaluated dataset
    """

    META_ATTRIBUTES = ['n', 'exact_count', 'alias_count', 'acc_exact',
                       'acc_alias', 'parse_failure_count']

    def __init__(self, results, **kwargs):
        super(EvalReport, self).__init__(**kwargs)
        self.results = tuple(results)

    @property
    def n(self):
        return len(self.results)

    @property
    def exact_count(self):
        return sum(result.exact for result in self.results)

    @property
    def alias_count(self):
        return sum(result.alias for result in self.results)

    @property
    def parse_failure_count(self):
        return sum(result.parse_failure for result in self.results)

    @property
    def behavioral_count(self):
        "Returns the number of behaviorally equal predictions, if checked"
        checked = [r.behavioral for r in self.results
                   if r.behavioral is not None]
        return sum(checked) if checked else None

    @property
    def acc_exact(self):
        "Returns exact accuracy as a Fraction"
        return Fraction(self.exact_count, self.n) if self.n else Fraction(0)

    @property
    def acc_alias(self):
        "Returns aliased accuracy as a Fraction"
        return Fraction(self.alias_count, self.n) if self.n else Fraction(0)

    def breakdown(self):
        "Returns one report per noise level, in evaluation order"
        levels = []
        for result in self.results:
            if result.epsilon not in levels:
                levels.append(result.epsilon)
        return [(epsilon, EvalReport(
            [r for r in self.results if r.epsilon == epsilon], **self.kwargs))
            for epsilon in levels]

    def meta_summary(self):
        output = super(EvalReport, self).meta_summary()
        output['acc_exact'] = render_rate(self.acc_exact)
        output['acc_alias'] = render_rate(self.acc_alias)
        return output

    def summary(self):
        output = super(EvalReport, self).summary()
        output['mode'] = self.kwargs.get('mode', GREEDY)
        output['overflows'] = self.kwargs.get('overflows', 0)
        output['config_hash'] = self.kwargs.get('config_hash')
        output['data_hash'] = self.kwargs.get('data_hash')
        output['behavioral_count'] = self.behavioral_count
        output['breakdown'] = [
            {'epsilon': epsilon, **report.meta_summary()}
            for epsilon, report in self.breakdown()]
        return output

    def __eq__(self, other):
        if not isinstance(other, EvalReport):
            return NotImplemented
        return self.results == other.results


class Evaluator():
    """Runs a model over dataset entries and scores its predictions

    kwargs:

        - mode: ``greedy`` or ``beam``
        - width: beam width
        - behavioral: also run :func:`behavioral_eq` on parsed predictions
        - n_trials: initial states used by the behavioral check
        - step_budget: action budget of the behavioral check
        - config_hash, data_hash: provenance copied into the report
        - jobs: worker threads scoring entries, results keep entry order
    """

    def __init__(self, model, language, world_config, rules=None, **kwargs):
        self.log = logging.getLogger("{}.{}".format(
            self.__class__.__module__, self.__class__.__name__
        ))
        self.model = model
        self.language = language
        self.world_config = world_config
        self.rules = rules or AliasRuleSet(language)
        self.matcher = AliasMatcher(self.rules)
        self.visual = VisualLanguage(language.q, language.m)
        self.kwargs = kwargs

    def score(self, entry, noise):
        "Returns the EntryResult of one entry under one noise setting"
        language = self.language
        entry_noise = NoiseSpec(
            epsilon=noise.epsilon, seed=derive_seed(noise.seed, entry.index),
            action_epsilon=noise.action_epsilon)
        demos = inject_noise(entry.demo_set(language), entry_noise,
                             m=language.m)
        pred = synthesize(self.model, demos, language,
                          mode=self.kwargs.get('mode', GREEDY),
                          width=self.kwargs.get('width', DEFAULT_BEAM_WIDTH),
                          visual=self.visual)
        truth = entry.program(language)
        predicted = self.matcher.decode(pred)
        exact = predicted is not None and exact_match(pred,
                                                      entry.program_tokens)
        alias = exact or self.matcher.match(pred, truth)
        behavioral = None
        if self.kwargs.get('behavioral') and predicted is not None:
            behavioral = behavioral_eq(
                predicted, truth, self.world_config,
                n_trials=self.kwargs.get('n_trials', DEFAULT_TRIALS),
                step_budget=self.kwargs.get('step_budget',
                                            DEFAULT_STEP_BUDGET))
        return EntryResult(
            index=entry.index, epsilon=noise.epsilon,
            noise_seed=noise.seed, truth=entry.program_text,
            predicted=self._text(pred, predicted),
            exact=exact, alias=alias, parse_failure=predicted is None,
            behavioral=behavioral)

    def _text(self, tokens, program):
        "Returns the printed prediction, or its raw tokens if it did not parse"
        if program is not None:
            return self.language.pretty_print(program)
        vocab = self.language.vocabulary
        return ' '.join(vocab.token_of(t) for t in tokens
                        if 0 <= t < len(vocab))

    def _score_all(self, entries, noise):
        "Returns the EntryResult of every entry, in entry order"
        jobs = self.kwargs.get('jobs', 1)
        if jobs <= 1:
            return (self.score(entry, noise) for entry in entries)
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            return list(executor.map(
                lambda entry: self.score(entry, noise), entries))

    def evaluate(self, entries, noises):
        "Returns the EvalReport over every entry and noise setting"
        if isinstance(noises, NoiseSpec):
            noises = [noises]
        results = []
        for noise in noises:
            noise.validate()
            scored = self._score_all(entries, noise)
            for number, result in enumerate(scored):
                results.append(result)
                if (number + 1) % 100 == 0:
                    self.log.debug("epsilon %s: %d entries scored",
                                   noise.epsilon, number + 1)
        report = EvalReport(results, mode=self.kwargs.get('mode', GREEDY),
                            overflows=self.matcher.overflows,
                            config_hash=self.kwargs.get('config_hash'),
                            data_hash=self.kwargs.get('data_hash'))
        self.log.info("evaluated %d entries: exact %s alias %s", report.n,
                      render_rate(report.acc_exact),
                      render_rate(report.acc_alias))
        return report


def evaluate(model, entries, language, world_config, noise=None, rules=None,
             **kwargs):
    """Synthesizes a program for every entry under each noise setting and
    returns the :class:`EvalReport`"""
    evaluator = Evaluator(model, language, world_config, rules, **kwargs)
    return evaluator.evaluate(entries, noise or NoiseSpec())


#: Columns of the table returned by :func:`ablate`
ABLATION_COLUMNS = ['epsilon', 'perception_accuracy', 'seeds',
                    'exact_mean', 'exact_min', 'exact_max',
                    'alias_mean', 'alias_min', 'alias_max']


def ablate(model, entries, language, world_config, epsilons, seeds,
           rules=None, action_epsilon=0.0, **kwargs):
    """Evaluates at every (epsilon, seed) pair and returns (table, reports).
    The table holds one row per epsilon with the mean, min and max of both
    accuracies over seeds."""
    if not seeds:
        raise ValueError("ablate needs at least one seed")
    evaluator = Evaluator(model, language, world_config, rules, **kwargs)
    rows = []
    reports = []
    for epsilon in epsilons:
        for seed in seeds:
            report = evaluator.evaluate(entries, NoiseSpec(
                epsilon=epsilon, seed=seed, action_epsilon=action_epsilon))
            reports.append((epsilon, seed, report))
            rows.append({'epsilon': epsilon, 'seed': seed,
                         'exact': float(report.acc_exact),
                         'alias': float(report.acc_alias)})
    frame = pd.DataFrame(rows)
    table = frame.groupby('epsilon', sort=False).agg(
        seeds=('seed', 'size'),
        exact_mean=('exact', 'mean'),
        exact_min=('exact', 'min'),
        exact_max=('exact', 'max'),
        alias_mean=('alias', 'mean'),
        alias_min=('alias', 'min'),
        alias_max=('alias', 'max'),
    ).reset_index()
    table['perception_accuracy'] = 1.0 - table['epsilon']
    return table[ABLATION_COLUMNS], reports
