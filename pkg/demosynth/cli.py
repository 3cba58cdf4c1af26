"""Synthesize programs from demonstrations: build datasets, train the program
generator, evaluate it and run noise ablations.

Usage:
    demosynth gen [options] --out=<dir> [--train=<n>] [--val=<n>] [--test=<n>]
                  [--k=<k>] [--jobs=<n>]
    demosynth train [options] --data=<dir> --out=<dir> [--steps=<n>] [--resume]
    demosynth eval [options] --ckpt=<file> --data=<dir> [--split=<name>]
                   [--noise=<list>] [--beam=<width>] [--behavioral]
                   [--report=<file>] [--details=<file>] [--jobs=<n>]
    demosynth ablate [options] --ckpt=<file> --data=<dir> [--split=<name>]
                     [--epsilons=<list>] [--seeds=<list>] [--beam=<width>]
                     [--report=<file>] [--csv=<file>] [--jobs=<n>]
    demosynth vocab [options] [--out=<file>]
    demosynth alias-check [options] <program_a> <program_b> [--trials=<n>]
    demosynth run-program [options] --file=<file> [--steps=<n>] [--trace-csv]
    demosynth stats [options] --data=<dir>
    demosynth version
    demosynth (-h | --help)

Options:
    -h --help             Show this screen.
    -c --config=<file>    YAML experiment configuration.
    --seed=<n>            Seed of the command: dataset seed for gen, training
                          seed for train, noise seed for eval, episode seed
                          for run-program. Defaults to the config value.
                          $DEMOSYNTH_SEED replaces the built-in seeds (7,
                          and 0 for noise).
    --out=<path>          Output directory (gen, train) or file (vocab).
    --data=<dir>          Dataset directory.
    --ckpt=<file>         Checkpoint file.
    --split=<name>        Dataset split to evaluate [default: test].
    --noise=<list>        Comma separated perception noise rates.
    --epsilons=<list>     Comma separated noise rates [default: 0,0.1,0.2].
    --seeds=<list>        Comma separated noise seeds [default: 1,2,3].
    --beam=<width>        Decode with a beam of this width instead of greedily.
    --report=<file>       Write the JSON report here.
    --details=<file>      Write per-entry verdicts as CSV here.
    --csv=<file>          Write the ablation table as CSV here.
    --steps=<n>           Training steps (train) or action budget (run-program).
    --trace-csv           Print the run-program trace as CSV.
    --trials=<n>          Initial states for the behavioral check [default: 50].
    --jobs=<n>            Worker processes for gen, worker threads for eval
                          and ablate [default: 1].
    --log=<file>          Also write log records to this file.
    -v --verbose          Log debug messages.

Exit status is 0 on success, 1 on usage errors and 2 on data or model errors.
"""
import logging
import os
import sys

from docopt import DocoptExit, docopt

from . import __version__, world
from .aliases import AliasMatcher, AliasRuleSet
from .config import NoiseSpec, load_config, merge_config
from .dataset import build_dataset, describe, load_dataset
from .dsl import Language
from .errors import DataError, ModelError, UsageError
from .evaluation import ablate, behavioral_eq, evaluate
from .fileio import PathLock, atomic_write
from .interpreter import run_program
from .reports import (format_ablation_table, format_report,
                      write_ablation_csv, write_ablation_json,
                      write_details_csv, write_report_json, write_trace,
                      write_vocab_json)
from .synthesis import BEAM, GREEDY
from .training import LAST_CHECKPOINT, TrainState, load_checkpoint, train
from .vislang import VisualLanguage

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'

log = logging.getLogger(__name__)


def configure_logging(verbose=False, log_file=None):
    "Sets up the root logger for a command line run"
    level = logging.DEBUG if verbose else logging.INFO
    handlers = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding='utf-8'))
    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers,
                        force=True)


def _int(args, flag, default=None):
    value = args.get(flag)
    if value is None:
        return default
    try:
        return int(value)
    except ValueError:
        raise UsageError(f"{flag} must be an integer, got {value!r}")


def _floats(args, flag):
    try:
        return [float(item) for item in args[flag].split(',') if item]
    except ValueError:
        raise UsageError(f"{flag} must be a comma separated list of numbers")


def _ints(args, flag):
    try:
        return [int(item) for item in args[flag].split(',') if item]
    except ValueError:
        raise UsageError(f"{flag} must be a comma separated list of integers")


def _config(args, overrides=None):
    "Returns the resolved config: flags over file over defaults"
    overrides = dict(overrides or {})
    config = load_config(args.get('--config'), overrides)
    log.info("resolved config %s: %s", config.config_hash(), config.to_dict())
    return config


def _with_snapshot(config, manifest):
    "Returns config with the dataset-defining settings of a manifest"
    snapshot = manifest.snapshot
    values = {key: snapshot[key] for key in
              ('world', 'limits', 'sampling', 'k', 't_max', 'step_budget',
               'attempt_budget')}
    config = merge_config(config, values).validate().resolved()
    log.info("config with dataset settings %s", config.config_hash())
    return config


def _decoding(args):
    "Returns the decoding and worker keyword arguments of eval and ablate"
    jobs = _int(args, '--jobs', 1)
    if jobs < 1:
        raise UsageError("--jobs must be at least 1")
    width = _int(args, '--beam')
    if width is None:
        return {'mode': GREEDY, 'jobs': jobs}
    if width < 1:
        raise UsageError("--beam must be at least 1")
    return {'mode': BEAM, 'width': width, 'jobs': jobs}


def cmd_gen(args):
    "Build and write a dataset"
    overrides = {}
    seed = _int(args, '--seed')
    if seed is not None:
        overrides['seed'] = seed
    for flag, key in (('--train', 'n_train'), ('--val', 'n_val'),
                      ('--test', 'n_test'), ('--k', 'k')):
        value = _int(args, flag)
        if value is not None:
            overrides[key] = value
    if 'n_train' in overrides and 'n_val' not in overrides:
        overrides['n_val'] = overrides['n_train'] // 10
    overrides['data_dir'] = args['--out']
    config = _config(args, overrides)
    with PathLock(args['--out']):
        dataset = build_dataset(config, args['--out'],
                                jobs=_int(args, '--jobs', 1))
    print(f"{args['--out']}: {dataset.manifest.counts} "
          f"hash {dataset.manifest.content_hash}")
    return 0


def cmd_train(args):
    "Train the program generator on a dataset"
    dataset = load_dataset(args['--data'])
    overrides = {'data_dir': args['--data'], 'ckpt_dir': args['--out']}
    train_overrides = {}
    seed = _int(args, '--seed')
    if seed is not None:
        train_overrides['seed'] = seed
    steps = _int(args, '--steps')
    if steps is not None:
        train_overrides['steps'] = steps
    if train_overrides:
        overrides['train'] = train_overrides
    config = _with_snapshot(_config(args, overrides), dataset.manifest)
    last = os.path.join(args['--out'], LAST_CHECKPOINT)
    with PathLock(args['--out']):
        if args['--resume'] and os.path.exists(last):
            state = load_checkpoint(last, expected=config)
            state = _retarget(state, config)
            log.info("resuming from step %d", state.step)
        else:
            state = TrainState.create(config, dataset.manifest.content_hash)
        state, records = train(state, dataset, out_dir=args['--out'])
    if records:
        print(f"step {state.step}: val_loss {records[-1]['val_loss']} "
              f"val_accuracy {records[-1]['val_accuracy']}")
    return 0


def _retarget(state, config):
    "Carries a resumed state over to a config that may train for longer"
    if state.config.train.steps == config.train.steps:
        return state
    resumed = TrainState(config, state.model, step=state.step,
                         best_val=state.best_val, **state.kwargs)
    resumed.optimizer.load_state_dict(state.optimizer.state_dict())
    return resumed


def _evaluation_inputs(args):
    state = load_checkpoint(args['--ckpt'])
    overrides = {}
    if args.get('--config'):
        file_config = load_config(args['--config'])
        overrides['alias'] = file_config.to_dict()['alias']
    config = merge_config(state.config, overrides)
    log.info("checkpoint config %s: %s", config.config_hash(),
             config.to_dict())
    dataset = load_dataset(args['--data'], expected=config)
    entries = dataset.split(args['--split'])
    language = dataset.language()
    rules = AliasRuleSet(language, config.alias)
    provenance = {'config_hash': config.config_hash(),
                  'data_hash': dataset.manifest.content_hash}
    return state, config, entries, language, rules, provenance


def cmd_eval(args):
    "Score a checkpoint on a dataset split"
    state, config, entries, language, rules, provenance = (
        _evaluation_inputs(args))
    seed = _int(args, '--seed', config.noise.seed)
    epsilons = (_floats(args, '--noise') if args['--noise']
                else [config.noise.epsilon])
    noises = [NoiseSpec(epsilon, seed, config.noise.action_epsilon)
              for epsilon in epsilons]
    report = evaluate(state.model, entries, language, config.world,
                      noise=noises, rules=rules,
                      behavioral=args['--behavioral'],
                      step_budget=config.step_budget, **provenance,
                      **_decoding(args))
    if args['--report']:
        with atomic_write(args['--report']) as handle:
            write_report_json(handle, report)
    if args['--details']:
        with atomic_write(args['--details']) as handle:
            write_details_csv(handle, report)
    sys.stdout.write(format_report(report))
    return 0


def cmd_ablate(args):
    "Evaluate over a grid of noise rates and seeds"
    state, config, entries, language, rules, provenance = (
        _evaluation_inputs(args))
    seeds = _ints(args, '--seeds')
    if not seeds:
        raise UsageError("--seeds needs at least one seed")
    table, reports = ablate(
        state.model, entries, language, config.world,
        _floats(args, '--epsilons'), seeds, rules=rules,
        action_epsilon=config.noise.action_epsilon,
        step_budget=config.step_budget, **provenance, **_decoding(args))
    if args['--report']:
        with atomic_write(args['--report']) as handle:
            write_ablation_json(handle, table, reports, **provenance)
    if args['--csv']:
        with atomic_write(args['--csv']) as handle:
            write_ablation_csv(handle, table)
    sys.stdout.write(format_ablation_table(table))
    return 0


def cmd_vocab(args):
    "Print the program and visual vocabularies"
    config = _config(args)
    language = Language(config.world.q, config.world.m, config.limits)
    visual = VisualLanguage(config.world.q, config.world.m)
    if args['--out']:
        with atomic_write(args['--out']) as handle:
            write_vocab_json(handle, language, visual)
    else:
        write_vocab_json(sys.stdout, language, visual)
    return 0


def _read_program(language, path):
    try:
        with open(path, encoding='utf-8') as handle:
            text = handle.read()
    except OSError as err:
        raise UsageError(f"cannot read {path}: {err}")
    return language.parse(text)


def cmd_alias_check(args):
    "Compare two program files"
    config = _config(args)
    language = Language(config.world.q, config.world.m, config.limits)
    first = _read_program(language, args['<program_a>'])
    second = _read_program(language, args['<program_b>'])
    matcher = AliasMatcher(AliasRuleSet(language, config.alias))
    first_tokens = language.to_tokens(first)
    exact = first_tokens == language.to_tokens(second)
    alias = matcher.match(first_tokens, second)
    behavioral = behavioral_eq(first, second, config.world,
                               n_trials=_int(args, '--trials'),
                               step_budget=config.step_budget,
                               seed=config.seed)
    print(f"exact: {exact}")
    print(f"alias: {alias}")
    print(f"behavioral: {behavioral}")
    return 0


def cmd_run_program(args):
    "Run a program file from a seeded initial state and print the trace"
    config = _config(args)
    language = Language(config.world.q, config.world.m, config.limits)
    program = _read_program(language, args['--file'])
    seed = _int(args, '--seed', config.seed)
    initial = world.init(config.world, seed)
    demo = run_program(program, initial,
                       _int(args, '--steps', config.step_budget))
    write_trace(sys.stdout, demo, language, in_csv=args['--trace-csv'])
    return 0


def cmd_stats(args):
    "Print per-split statistics of a dataset"
    dataset = load_dataset(args['--data'])
    print(describe(dataset).to_string())
    rejections = dataset.manifest.rejections
    if rejections:
        print(', '.join(f"{key}: {value}"
                        for key, value in sorted(rejections.items())))
    return 0


COMMANDS = {
    'gen': cmd_gen,
    'train': cmd_train,
    'eval': cmd_eval,
    'ablate': cmd_ablate,
    'vocab': cmd_vocab,
    'alias-check': cmd_alias_check,
    'run-program': cmd_run_program,
    'stats': cmd_stats,
}


def run(argv):
    "Runs one command line and returns its exit status"
    try:
        args = docopt(__doc__, argv=argv)
    except DocoptExit as err:
        sys.stderr.write(f"{err}\n")
        return 1
    except SystemExit as err:
        return 0 if err.code in (None, 0) else 1
    if args['version']:
        print(f"demosynth {__version__}")
        return 0
    configure_logging(args['--verbose'], args['--log'])
    command = next(name for name in COMMANDS if args[name])
    try:
        return COMMANDS[command](args)
    except UsageError as err:
        sys.stderr.write(f"usage error: {err}\n")
        return 1
    except (DataError, ModelError) as err:
        log.error("%s failed: %s", command, err)
        return 2


def main():
    "Entry point of the demosynth script"
    sys.exit(run(sys.argv[1:]))

