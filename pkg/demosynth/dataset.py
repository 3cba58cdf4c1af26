"""Builds, stores and loads (demonstration set -> program) datasets.

A dataset directory holds one gzip-compressed JSON-lines file per split
(``train.jsonl.gz``, ``val.jsonl.gz``, ``test.jsonl.gz``) and a sidecar
``manifest.json``. Each line is one entry::

    {"demos": [{"seed": 123, "steps": [["100001", 0], ...],
                "terminated": "completed"}, ...],
     "index": 42, "program": "DEF run { MOVE }", "tokens": [1, 3, ...]}

Percept bits are written as 0/1 strings in perception order. Generation is a
pure function of (seed, config): gzip headers carry no timestamp and entries
are written in sample-index order, so two machines produce identical files.
"""
import gzip
import hashlib
import io
import json
import logging
import os
import zlib
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import pandas as pd

from . import dsl
from .base import DemoSynthObject, DemoSynthObjectList
from .config import (DSLLimits, ExperimentConfig, WorldConfig, hash_object,
                     TOKENIZER_CONVENTION)
from .errors import (BudgetError, ConfigMismatch, CorruptDataset,
                     DatasetIOError, DataError, Unsatisfiable,
                     VersionMismatch)
from .fileio import atomic_write
from .interpreter import (Demonstration, DemoSet, Termination, coverage_of,
                          generate_demo_set, replays_consistently)
from .sampler import ProgramSampler
from .seeding import EPISODE_STREAM, PROGRAM_STREAM, SPLIT_STREAM
from .seeding import derive_seed, keyed_generator

#: On-disk format version written to, and required in, every manifest
FORMAT_VERSION = 1

#: Split names, in file and hashing order
SPLITS = ('train', 'val', 'test')

MANIFEST_NAME = 'manifest.json'

#: Candidate programs handed to workers per round
CHUNK_SIZE = 64

#: Every entry whose index is a multiple of this is fully replayed on load
REPLAY_SAMPLE_EVERY = 100

log = logging.getLogger(__name__)


def split_filename(split):
    "Returns the file name of a split"
    return f"{split}.jsonl.gz"


@dataclass(frozen=True)
class DatasetEntry:
    "One program with its demonstrations"
    index: int
    program_text: str
    program_tokens: tuple
    demos: tuple

    def program(self, language):
        "Returns the parsed program"
        return language.parse(self.program_text)

    def demo_set(self, language):
        "Returns the demonstrations as a DemoSet (coverage not recomputed)"
        return DemoSet(list(self.demos), self.program(language), None)

    def to_record(self):
        "Returns the JSON-ready dictionary stored on disk"
        return {
            'index': self.index,
            'program': self.program_text,
            'tokens': list(self.program_tokens),
            'demos': [{
                'seed': demo.episode_seed,
                'steps': [[''.join('1' if bit else '0' for bit in percepts),
                           action] for percepts, action in demo.steps],
                'terminated': demo.terminated.value,
            } for demo in self.demos],
        }

    @classmethod
    def from_record(cls, record):
        "Builds an entry from its stored dictionary"
        demos = []
        for demo in record['demos']:
            steps = tuple(
                (tuple(char == '1' for char in bits), int(action))
                for bits, action in demo['steps'])
            demos.append(Demonstration(
                steps=steps, terminated=Termination(demo['terminated']),
                episode_seed=demo['seed']))
        return cls(index=int(record['index']),
                   program_text=record['program'],
                   program_tokens=tuple(record['tokens']),
                   demos=tuple(demos))


def encode_line(entry):
    "Returns the canonical JSON line of an entry"
    return json.dumps(entry.to_record(), sort_keys=True,
                      separators=(',', ':'))


class DatasetManifest(DemoSynthObject):
    """Describes a stored dataset: the config snapshot it was built with,
    entry counts per split, a hash over all entries and the format version
    """

    META_ATTRIBUTES = ['format_version', 'config_hash', 'content_hash',
                       'counts']

    def __init__(self, snapshot, counts, content_hash,
                 format_version=FORMAT_VERSION, rejections=None, **kwargs):
        super(DatasetManifest, self).__init__(**kwargs)
        self.snapshot = snapshot
        self.counts = dict(counts)
        self.content_hash = content_hash
        self.format_version = format_version
        self.rejections = dict(rejections or {})

    @property
    def config_hash(self):
        "Returns the hash of the config snapshot"
        return hash_object(self.snapshot)

    @property
    def k(self):
        return self.snapshot['k']

    @property
    def t_max(self):
        return self.snapshot['t_max']

    @property
    def world_config(self):
        return WorldConfig(**self.snapshot['world'])

    @property
    def limits(self):
        return DSLLimits(**self.snapshot['limits'])

    def language(self):
        "Returns the program language the dataset was built for"
        world = self.world_config
        return dsl.Language(world.q, world.m, self.limits)

    def to_dict(self):
        return {
            'format_version': self.format_version,
            'config': self.snapshot,
            'config_hash': self.config_hash,
            'counts': self.counts,
            'content_hash': self.content_hash,
            'rejections': self.rejections,
        }

    @classmethod
    def from_dict(cls, values):
        return cls(values['config'], values['counts'],
                   values['content_hash'],
                   format_version=values['format_version'],
                   rejections=values.get('rejections'))

    def __eq__(self, other):
        if not isinstance(other, DatasetManifest):
            return NotImplemented
        return self.to_dict() == other.to_dict()


class Dataset(DemoSynthObjectList):
    """A loaded dataset: entries of every split plus the manifest. Iterating
    yields the splits' entries in split order."""

    def __init__(self, splits, manifest, **kwargs):
        self.splits = {name: list(splits.get(name, ())) for name in SPLITS}
        items = [entry for name in SPLITS for entry in self.splits[name]]
        super(Dataset, self).__init__(items, **kwargs)
        self.manifest = manifest

    def split(self, name):
        "Returns the entries of one split"
        if name not in self.splits:
            raise DataError(f"unknown split '{name}'")
        return self.splits[name]

    def language(self):
        return self.manifest.language()

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.splits == other.splits and self.manifest == other.manifest


def _demo_job(args):
    "Worker: builds the demonstrations of one candidate, or None"
    program, config, seed = args
    try:
        demo_set = generate_demo_set(
            program, config.world, config.k, config.attempt_budget,
            config.step_budget, config.t_max, seed=seed)
    except Unsatisfiable:
        return None
    return tuple(demo.__class__(demo.steps, demo.terminated,
                                demo.episode_seed)
                 for demo in demo_set.demos)


def _map(executor, function, jobs):
    if executor is None:
        return [function(job) for job in jobs]
    return list(executor.map(function, jobs))


def generate_entries(config, jobs=1):
    """Samples programs and demonstration sets until every split is full.
    Returns ({split: [DatasetEntry]}, rejection counts). The result does not
    depend on ``jobs``: candidates are processed in fixed chunks and accepted
    strictly in candidate order."""
    language = dsl.Language(config.world.q, config.world.m, config.limits)
    sampler = ProgramSampler(language, config.sampling)
    wanted = {'train': config.n_train, 'val': config.n_val,
              'test': config.n_test}
    total = sum(wanted.values())
    max_candidates = total * config.max_sample_factor
    accepted = []
    seen = set()
    rejections = Counter()
    candidate = 0
    executor = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    try:
        while len(accepted) < total:
            if candidate >= max_candidates:
                raise BudgetError(
                    f"only {len(accepted)} of {total} programs accepted after "
                    f"{candidate} candidates ({dict(rejections)})")
            chunk = []
            while len(chunk) < CHUNK_SIZE and candidate < max_candidates:
                program = sampler.sample(
                    derive_seed(PROGRAM_STREAM, config.seed, candidate))
                tokens = language.to_tokens(program)
                if tokens in seen:
                    rejections['duplicate'] += 1
                else:
                    seen.add(tokens)
                    chunk.append((candidate, program, tokens))
                candidate += 1
            results = _map(executor, _demo_job, [
                (program, config,
                 derive_seed(EPISODE_STREAM, config.seed, index))
                for index, program, _ in chunk])
            for (index, program, tokens), demos in zip(chunk, results):
                if len(accepted) == total:
                    break
                if demos is None:
                    rejections['unsatisfiable'] += 1
                    continue
                accepted.append(DatasetEntry(
                    index=index, program_text=language.pretty_print(program),
                    program_tokens=tokens, demos=demos))
            log.info("accepted %d/%d programs after %d candidates",
                     len(accepted), total, candidate)
    finally:
        if executor is not None:
            executor.shutdown()
    order = keyed_generator(SPLIT_STREAM, config.seed).permutation(total)
    splits = {}
    offset = 0
    for name in ('test', 'val', 'train'):
        picked = sorted(int(i) for i in order[offset:offset + wanted[name]])
        splits[name] = [accepted[i] for i in picked]
        offset += wanted[name]
    rejections['candidates'] = candidate
    return splits, dict(rejections)


def _content_hash(lines_by_split):
    "Returns the SHA-256 over every split's lines, in split order"
    digest = hashlib.sha256()
    for name in SPLITS:
        digest.update(f"#{name}\n".encode('utf-8'))
        for line in lines_by_split.get(name, ()):
            digest.update(line.encode('utf-8'))
            digest.update(b'\n')
    return digest.hexdigest()


def _gzip_bytes(lines):
    "Compresses lines with a fixed gzip header"
    buffer = io.BytesIO()
    with gzip.GzipFile(filename='', mode='wb', fileobj=buffer,
                       mtime=0) as handle:
        for line in lines:
            handle.write(line.encode('utf-8'))
            handle.write(b'\n')
    return buffer.getvalue()


def write_dataset(path, splits, snapshot, rejections=None):
    """Writes split files and then the manifest. Returns the manifest."""
    lines = {name: [encode_line(entry) for entry in splits.get(name, ())]
             for name in SPLITS}
    manifest = DatasetManifest(
        snapshot, {name: len(lines[name]) for name in SPLITS},
        _content_hash(lines), rejections=rejections)
    try:
        os.makedirs(path, exist_ok=True)
        for name in SPLITS:
            with atomic_write(os.path.join(path, split_filename(name)),
                              binary=True) as handle:
                handle.write(_gzip_bytes(lines[name]))
        with atomic_write(os.path.join(path, MANIFEST_NAME)) as handle:
            json.dump(manifest.to_dict(), handle, indent=4, sort_keys=True)
            handle.write('\n')
    except OSError as err:
        raise DatasetIOError(f"cannot write dataset to {path}: {err}") from err
    return manifest


def build_dataset(config, path, jobs=1):
    """Generates a dataset for the given experiment config and writes it to
    path. Returns the loaded-form :class:`Dataset`."""
    if not isinstance(config, ExperimentConfig):
        raise TypeError("build_dataset needs an ExperimentConfig")
    config.validate()
    splits, rejections = generate_entries(config, jobs=jobs)
    manifest = write_dataset(path, splits, config.data_snapshot(), rejections)
    log.info("wrote dataset %s: %s", path, manifest.counts)
    return Dataset(splits, manifest)


def _read_manifest(path):
    manifest_path = os.path.join(path, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise DatasetIOError(f"no dataset manifest at {manifest_path}")
    try:
        with open(manifest_path, encoding='utf-8') as handle:
            values = json.load(handle)
    except (OSError, ValueError) as err:
        raise CorruptDataset(f"unreadable manifest: {err}") from err
    if values.get('format_version') != FORMAT_VERSION:
        raise VersionMismatch(
            f"dataset format {values.get('format_version')} is not "
            f"{FORMAT_VERSION}")
    try:
        manifest = DatasetManifest.from_dict(values)
    except (KeyError, TypeError) as err:
        raise CorruptDataset(f"incomplete manifest: {err}") from err
    if values.get('config_hash') != manifest.config_hash:
        raise CorruptDataset("manifest config hash does not match its config")
    if manifest.snapshot.get('tokenizer') != TOKENIZER_CONVENTION:
        raise VersionMismatch(
            f"tokenizer {manifest.snapshot.get('tokenizer')} is not "
            f"{TOKENIZER_CONVENTION}")
    return manifest


def _read_lines(path, name):
    file_path = os.path.join(path, split_filename(name))
    try:
        with gzip.open(file_path, 'rt', encoding='utf-8') as handle:
            return [line.rstrip('\n') for line in handle]
    except FileNotFoundError as err:
        raise DatasetIOError(f"missing split file {file_path}") from err
    except (OSError, EOFError, zlib.error, UnicodeDecodeError) as err:
        raise CorruptDataset(f"cannot decompress {file_path}: {err}") from err


def _check_entry(entry, manifest, language, replay):
    "Raises CorruptDataset if an entry breaks a stored-data invariant"
    try:
        program = language.parse(entry.program_text)
    except DataError as err:
        raise CorruptDataset(f"program does not parse: {err}") from err
    if language.to_tokens(program) != entry.program_tokens:
        raise CorruptDataset("program tokens do not match the program text")
    if len(entry.demos) != manifest.k:
        raise CorruptDataset(
            f"{len(entry.demos)} demonstrations, manifest says {manifest.k}")
    for demo in entry.demos:
        if not 1 <= len(demo) <= manifest.t_max:
            raise CorruptDataset(f"demonstration of length {len(demo)}")
    if replay:
        world = manifest.world_config
        for demo in entry.demos:
            if not replays_consistently(demo, world):
                raise CorruptDataset(
                    f"demonstration seed {demo.episode_seed} does not replay")
        coverage = coverage_of(
            program, entry.demos, manifest.snapshot['step_budget'],
            horizon=manifest.t_max, config=world)
        if not coverage.complete:
            raise CorruptDataset("demonstrations do not cover the program")


def load_dataset(path, expected=None):
    """Reads and validates a dataset. Checks the format version, the content
    hash, every entry's program round trip and demo count, and replays a
    sample of entries. If an expected ExperimentConfig is given its data
    snapshot must match the manifest."""
    manifest = _read_manifest(path)
    if expected is not None and expected.data_hash() != manifest.config_hash:
        raise ConfigMismatch(
            f"dataset {path} was built with a different configuration")
    language = manifest.language()
    lines = {name: _read_lines(path, name) for name in SPLITS}
    if _content_hash(lines) != manifest.content_hash:
        raise CorruptDataset(f"content hash mismatch in {path}")
    splits = {}
    for name in SPLITS:
        if len(lines[name]) != manifest.counts.get(name):
            raise CorruptDataset(f"split {name} entry count mismatch")
        entries = []
        for number, line in enumerate(lines[name]):
            try:
                entry = DatasetEntry.from_record(json.loads(line))
                _check_entry(entry, manifest, language,
                             entry.index % REPLAY_SAMPLE_EVERY == 0)
            except (KeyError, TypeError, ValueError, DataError) as err:
                raise CorruptDataset(
                    f"{name} entry {number}: {err}") from err
            entries.append(entry)
        splits[name] = entries
    log.debug("loaded dataset %s: %s", path, manifest.counts)
    return Dataset(splits, manifest)


def describe(dataset):
    """Returns a DataFrame of per-split statistics: program size, control
    flow constructs, demonstration length and truncation rate"""
    language = dataset.language()
    rows = []
    for name in SPLITS:
        for entry in dataset.split(name):
            program = entry.program(language)
            kinds = Counter(type(stmt).__name__
                            for stmt in dsl.iter_statements(program.body))
            lengths = [len(demo) for demo in entry.demos]
            rows.append({
                'split': name,
                'program_tokens': len(entry.program_tokens),
                'statements': dsl.statement_count(program.body),
                'depth': dsl.nesting_depth(program.body),
                'repeat': kinds['Repeat'],
                'while': kinds['While'],
                'if': kinds['If'],
                'ifelse': kinds['IfElse'],
                'demo_length': sum(lengths) / len(lengths),
                'truncated': sum(
                    demo.terminated is Termination.TRUNCATED
                    for demo in entry.demos) / len(entry.demos),
            })
    columns = ['split', 'program_tokens', 'statements', 'depth', 'repeat',
               'while', 'if', 'ifelse', 'demo_length', 'truncated']
    frame = pd.DataFrame(rows, columns=columns)
    if frame.empty:
        return frame
    stats = frame.groupby('split', sort=False).mean(numeric_only=True)
    stats.insert(0, 'entries', frame.groupby('split', sort=False).size())
    return stats
