"""Configuration objects for experiments.

All configuration is held in frozen dataclasses. An :class:`ExperimentConfig`
bundles every other section and can be read from a YAML file; values given on
the command line take precedence over the file, which takes precedence over
the defaults defined here.
"""
import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field

import yaml

from .errors import ConfigError

#: Default experiment seed, overridden by the DEMOSYNTH_SEED variable
DEFAULT_SEED = 7

#: Environment variable that overrides :attr:`DEFAULT_SEED`
SEED_ENV_VAR = 'DEMOSYNTH_SEED'

#: Version tag of the visual token convention (offsets and bit order)
TOKENIZER_CONVENTION = 'vislang-le-offset4-v1'

#: Positional encoding schemes understood by the model
POSITIONAL_SCHEMES = ('learned',)

#: Number of special visual tokens (<pad>, <start>, <sep>, <end>)
VISUAL_SPECIALS = 4

#: Upper bounds fixed by the world rules
MAX_PERCEPTIONS = 6
MAX_ACTIONS = 6

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WorldConfig:
    "Size and contents of the grid arena"
    grid_width: int = 7
    grid_height: int = 7
    #: number of perception primitives (a prefix of the fixed order)
    q: int = 6
    #: number of action primitives (a prefix of the fixed order)
    m: int = 6
    monster_count: int = 2
    item_count: int = 2
    health_max: int = 5
    low_health_threshold: int = 3
    seed: int = 0

    def validate(self):
        "Raises ConfigError unless the world config is consistent"
        if self.grid_width < 1 or self.grid_height < 1:
            raise ConfigError("grid dimensions must be positive")
        if not 1 <= self.q <= MAX_PERCEPTIONS:
            raise ConfigError(f"q must be in [1, {MAX_PERCEPTIONS}]")
        if not 2 <= self.m <= MAX_ACTIONS:
            raise ConfigError(f"m must be in [2, {MAX_ACTIONS}]")
        if self.monster_count < 0 or self.item_count < 0:
            raise ConfigError("entity counts must be non-negative")
        if self.health_max < 1:
            raise ConfigError("health_max must be at least 1")
        if not self.low_health_threshold < self.health_max:
            raise ConfigError("low_health_threshold must be below health_max")
        return self

    @property
    def cell_count(self):
        "Returns the number of cells in the arena"
        return self.grid_width * self.grid_height


@dataclass(frozen=True)
class DSLLimits:
    "Bounds on program shape"
    max_nest: int = 4
    max_stmts: int = 24
    max_repeat: int = 6
    #: smallest repeat count produced by the sampler (the parser accepts 1)
    min_sample_repeat: int = 2
    #: deepest condition the sampler draws (the parser accepts any depth)
    max_cond_depth: int = 3
    #: sampled programs longer than this many tokens are resampled
    max_tokens: int = 64

    def validate(self):
        "Raises ConfigError unless the limits are consistent"
        if self.max_nest < 1 or self.max_stmts < 1:
            raise ConfigError("max_nest and max_stmts must be positive")
        if self.max_repeat < 1:
            raise ConfigError("max_repeat must be positive")
        if not 1 <= self.min_sample_repeat <= self.max_repeat:
            raise ConfigError("min_sample_repeat must be in [1, max_repeat]")
        if self.max_cond_depth < 1:
            raise ConfigError("max_cond_depth must be positive")
        return self


@dataclass(frozen=True)
class SamplingWeights:
    "Per-production weights used by the program sampler"
    action: float = 0.5
    repeat: float = 0.15
    while_loop: float = 0.1
    if_then: float = 0.15
    if_else: float = 0.1
    #: mean of the geometric distribution of body lengths
    body_mean: float = 2.5
    percept: float = 0.6
    negation: float = 0.2
    conjunction: float = 0.1
    disjunction: float = 0.1

    def validate(self):
        "Raises ConfigError for negative weights or an empty distribution"
        values = dataclasses.asdict(self)
        if any(value < 0 for value in values.values()):
            raise ConfigError("sampling weights must be non-negative")
        if self.action <= 0:
            raise ConfigError("the action weight must be positive")
        if self.percept <= 0:
            raise ConfigError("the percept weight must be positive")
        if self.body_mean < 1:
            raise ConfigError("body_mean must be at least 1")
        return self


@dataclass(frozen=True)
class ModelConfig:
    "Shape of the encoder-decoder network"
    d_model: int = 64
    n_heads: int = 4
    n_enc_blocks: int = 2
    n_dec_blocks: int = 2
    d_ff: int = 256
    dropout: float = 0.1
    max_src_len: int = 526
    max_tgt_len: int = 64
    src_vocab: int = VISUAL_SPECIALS + 2 ** 12
    tgt_vocab: int = 35
    positional: str = 'learned'

    def validate(self):
        "Raises ConfigError unless the model config is consistent"
        if self.d_model % self.n_heads:
            raise ConfigError("d_model must be divisible by n_heads")
        if self.positional not in POSITIONAL_SCHEMES:
            raise ConfigError(f"unknown positional scheme {self.positional}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        return self


@dataclass(frozen=True)
class TrainConfig:
    "Optimizer, schedule and bookkeeping for training"
    steps: int = 20000
    batch_size: int = 32
    lr: float = 1e-3
    warmup: int = 400
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.98
    grad_clip: float = 1.0
    eval_interval: int = 250
    seed: int = DEFAULT_SEED
    threads: int = 1

    def validate(self):
        "Raises ConfigError for non-positive sizes or negative rates"
        if self.steps < 0 or self.batch_size < 1 or self.eval_interval < 1:
            raise ConfigError("steps, batch_size and eval_interval are bad")
        if self.lr < 0 or self.warmup < 1:
            raise ConfigError("lr must be non-negative and warmup positive")
        return self


@dataclass(frozen=True)
class NoiseSpec:
    "Perception noise applied to demonstrations before tokenization"
    epsilon: float = 0.0
    seed: int = 0
    #: probability of replacing an action with a different one (off)
    action_epsilon: float = 0.0

    def validate(self):
        "Raises ConfigError for probabilities outside [0, 1]"
        for value in (self.epsilon, self.action_epsilon):
            if not 0.0 <= value <= 1.0:
                raise ConfigError("noise rates must be in [0, 1]")
        return self


@dataclass(frozen=True)
class AliasSettings:
    "Rewrite rules and caps used for aliased accuracy"
    negation_swap: bool = True
    repeat_unroll: bool = True
    repeat_flatten: bool = True
    double_negation: bool = True
    commutative: bool = False
    max_depth: int = 3
    max_size: int = 10000

    def validate(self):
        "Raises ConfigError for non-positive caps"
        if self.max_depth < 0 or self.max_size < 1:
            raise ConfigError("alias closure caps must be positive")
        return self


def visual_vocab_size(q, m):
    "Returns the size of the visual vocabulary for q percepts and m actions"
    return VISUAL_SPECIALS + 2 ** (q + m)


def max_source_length(k, t_max):
    "Returns L_MAX, the longest assembled visual sequence"
    return k * t_max + k + 1


@dataclass(frozen=True)
class ExperimentConfig:
    "Everything needed to reproduce an experiment"
    world: WorldConfig = field(default_factory=WorldConfig)
    limits: DSLLimits = field(default_factory=DSLLimits)
    sampling: SamplingWeights = field(default_factory=SamplingWeights)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    alias: AliasSettings = field(default_factory=AliasSettings)
    k: int = 25
    t_max: int = 20
    step_budget: int = 50
    attempt_budget: int = 200
    n_train: int = 5000
    n_val: int = 500
    n_test: int = 500
    seed: int = DEFAULT_SEED
    #: give up when this many candidates per requested entry were rejected
    max_sample_factor: int = 20
    data_dir: str = 'data'
    ckpt_dir: str = 'ckpt'

    #: sections held as nested dataclasses
    SECTIONS = {
        'world': WorldConfig, 'limits': DSLLimits,
        'sampling': SamplingWeights, 'model': ModelConfig,
        'train': TrainConfig, 'noise': NoiseSpec, 'alias': AliasSettings,
    }

    def validate(self):
        "Validates every section and the cross-section invariants"
        for name in self.SECTIONS:
            getattr(self, name).validate()
        if self.k < 1 or self.t_max < 1:
            raise ConfigError("k and t_max must be at least 1")
        if self.step_budget < 1 or self.attempt_budget < 1:
            raise ConfigError("step_budget and attempt_budget must be >= 1")
        if min(self.n_train, self.n_test) < 1 or self.n_val < 0:
            raise ConfigError("split sizes must be positive")
        needed = 1 + self.world.monster_count + self.world.item_count
        if needed > self.world.cell_count:
            raise ConfigError("entities do not fit the grid")
        return self

    def resolved(self):
        """Returns a copy whose model vocabularies and lengths are derived
        from the world, language and demonstration settings"""
        from .dsl import Language
        language = Language(self.world.q, self.world.m, self.limits)
        model = dataclasses.replace(
            self.model,
            src_vocab=visual_vocab_size(self.world.q, self.world.m),
            tgt_vocab=len(language.vocabulary),
            max_src_len=max_source_length(self.k, self.t_max),
            max_tgt_len=max(self.model.max_tgt_len, self.limits.max_tokens))
        return dataclasses.replace(self, model=model)

    def to_dict(self):
        "Returns a plain dictionary version of the config"
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values):
        """Builds a config from a (possibly partial) nested dictionary,
        starting from the defaults. Unknown keys raise ConfigError."""
        return merge_config(cls(), values)

    def data_snapshot(self):
        "Returns the part of the config that determines a dataset"
        return {
            'world': dataclasses.asdict(self.world),
            'limits': dataclasses.asdict(self.limits),
            'sampling': dataclasses.asdict(self.sampling),
            'k': self.k,
            't_max': self.t_max,
            'step_budget': self.step_budget,
            'attempt_budget': self.attempt_budget,
            'tokenizer': TOKENIZER_CONVENTION,
        }

    def data_hash(self):
        "Returns the hash of :meth:`data_snapshot`"
        return hash_object(self.data_snapshot())

    def config_hash(self):
        "Returns the hash of the full resolved config"
        return hash_object(self.to_dict())


def hash_object(obj):
    "Returns the SHA-256 of the canonical JSON form of obj"
    text = json.dumps(obj, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def merge_config(config, values):
    """Returns config with the nested dictionary values applied on top.
    Section keys take dictionaries, top-level keys take scalars."""
    if not values:
        return config
    if not isinstance(values, dict):
        raise ConfigError("configuration must be a mapping")
    known = {f.name for f in dataclasses.fields(config)}
    changes = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"unknown configuration key '{key}'")
        if key in ExperimentConfig.SECTIONS:
            section = getattr(config, key)
            changes[key] = _replace_section(key, section, value)
        else:
            changes[key] = value
    return dataclasses.replace(config, **changes)


def _replace_section(name, section, values):
    "Applies a dictionary of overrides to one config section"
    if not isinstance(values, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    known = {f.name for f in dataclasses.fields(section)}
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown configuration key '{name}.{key}'")
    return dataclasses.replace(section, **values)


def default_seed():
    "Returns the default seed, honouring the DEMOSYNTH_SEED variable"
    value = os.environ.get(SEED_ENV_VAR)
    if value is None:
        return DEFAULT_SEED
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {value!r}")


def seeded_defaults():
    """Returns the default config. A DEMOSYNTH_SEED value replaces the
    experiment, training and noise seeds alike."""
    if SEED_ENV_VAR not in os.environ:
        return ExperimentConfig()
    seed = default_seed()
    return ExperimentConfig(seed=seed, train=TrainConfig(seed=seed),
                            noise=NoiseSpec(seed=seed))


def load_config(path=None, overrides=None):
    """Reads an experiment config from a YAML file (if given), applies the
    overrides dictionary on top and returns the validated, resolved config"""
    config = seeded_defaults()
    if path:
        try:
            with open(path, encoding='utf-8') as handle:
                values = yaml.safe_load(handle) or {}
        except (OSError, yaml.YAMLError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        config = merge_config(config, values)
    config = merge_config(config, overrides)
    config = config.validate().resolved()
    log.debug("resolved config %s", config.config_hash())
    return config
