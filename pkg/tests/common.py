"""Small configurations and builders shared by the test modules."""
import yaml

from demosynth.config import ExperimentConfig, WorldConfig, merge_config
from demosynth.dataset import DatasetEntry
from demosynth.dsl import Language
from demosynth.interpreter import generate_demo_set

#: A 5x5 arena with one monster and one item
SMALL_WORLD = {'grid_width': 5, 'grid_height': 5, 'monster_count': 1,
               'item_count': 1}

#: A 5x5 arena with nothing in it
EMPTY_WORLD = WorldConfig(grid_width=5, grid_height=5, monster_count=0,
                          item_count=0)

TINY_VALUES = {
    'world': SMALL_WORLD,
    'model': {'d_model': 16, 'n_heads': 2, 'n_enc_blocks': 1,
              'n_dec_blocks': 1, 'd_ff': 32, 'dropout': 0.0},
    'train': {'steps': 4, 'batch_size': 4, 'lr': 0.01, 'warmup': 2,
              'eval_interval': 2, 'seed': 5},
    'k': 3,
    't_max': 8,
    'attempt_budget': 60,
    'n_train': 6,
    'n_val': 2,
    'n_test': 2,
    'seed': 11,
}


def tiny_config(**overrides):
    "Returns a resolved experiment config small enough for unit tests"
    config = ExperimentConfig.from_dict(TINY_VALUES)
    return merge_config(config, overrides).validate().resolved()


def write_tiny_yaml(path, **overrides):
    "Writes the tiny config, with overrides, as a YAML file"
    values = dict(TINY_VALUES)
    values.update(overrides)
    with open(path, 'w', encoding='utf-8') as handle:
        yaml.safe_dump(values, handle)
    return path


def make_entry(index, text, world_config, k=3, t_max=20, language=None):
    "Returns a DatasetEntry for a program text with freshly drawn demos"
    language = language or Language(world_config.q, world_config.m)
    program = language.parse(text)
    demo_set = generate_demo_set(program, world_config, k, t_max=t_max,
                                 seed=index)
    demos = tuple(demo.__class__(demo.steps, demo.terminated,
                                 demo.episode_seed)
                  for demo in demo_set.demos)
    return DatasetEntry(index=index, program_text=language.pretty_print(program),
                        program_tokens=language.to_tokens(program),
                        demos=demos)
