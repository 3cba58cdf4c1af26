"""Training of the program generator on gold target prefixes, and checkpoints.

Each step draws a batch from the training split with a generator keyed by
(seed, step) and reseeds torch from the same key before the forward pass, so
a run resumed from a checkpoint continues exactly as an uninterrupted one.

Checkpoint layout (all integers little-endian)::

    8 bytes   magic  b"DSCKPT01"
    8 bytes   header length n
    n bytes   UTF-8 JSON header (sorted keys)
    ...       raw tensor payload

The header holds the format version, the resolved experiment config and its
hash, the tokenizer convention, the dataset hash, the step counter, the best
validation loss and a tensor index of {name, dtype, shape, offset, nbytes}
with offsets relative to the start of the payload. Model weights are named
``model/<parameter>``, optimizer moments ``optim/<parameter>/<key>``.
"""
import dataclasses
import json
import logging
import math
import os
import struct
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .base import DemoSynthObject
from .config import (ExperimentConfig, TOKENIZER_CONVENTION,
                     visual_vocab_size)
from .errors import (ConfigMismatch, CorruptDataset, DatasetIOError,
                     DivergenceError, ShapeError, VersionMismatch)
from .fileio import atomic_write, write_text
from .model import build_model
from .seeding import BATCH_STREAM, derive_seed, keyed_generator
from .vislang import PAD as SRC_PAD
from .vislang import VisualLanguage

CHECKPOINT_MAGIC = b'DSCKPT01'
CHECKPOINT_VERSION = 1

BEST_CHECKPOINT = 'best.ckpt'
LAST_CHECKPOINT = 'last.ckpt'
TRAIN_LOG = 'train_log.jsonl'

_DTYPES = {
    torch.float32: ('float32', '<f4'),
    torch.float64: ('float64', '<f8'),
    torch.int64: ('int64', '<i8'),
}
_DTYPE_NAMES = {name: (dtype, layout)
                for dtype, (name, layout) in _DTYPES.items()}

log = logging.getLogger(__name__)


@dataclass
class Batch:
    """Padded model input. tgt_output is tgt_input shifted left by one, so
    its last real token is <eos>; masks are True at non-pad positions."""
    src: torch.Tensor
    src_mask: torch.Tensor
    tgt_input: torch.Tensor
    tgt_output: torch.Tensor
    tgt_mask: torch.Tensor
    tgt_pad: int = 0

    def __len__(self):
        return self.src.size(0)

    @property
    def target_tokens(self):
        "Returns the number of non-pad target positions"
        return int(self.tgt_mask.sum())


def _pad(rows, value):
    width = max(len(row) for row in rows)
    return torch.tensor([list(row) + [value] * (width - len(row))
                         for row in rows], dtype=torch.long)


def make_batch(sources, programs, tgt_pad):
    """Builds a batch from visual token sequences and program token sequences
    (each wrapped in <bos> ... <eos>)"""
    if len(sources) != len(programs) or not sources:
        raise ShapeError("a batch needs as many programs as sources")
    src = _pad(sources, SRC_PAD)
    tgt_input = _pad([tokens[:-1] for tokens in programs], tgt_pad)
    tgt_output = _pad([tokens[1:] for tokens in programs], tgt_pad)
    src_mask = torch.zeros_like(src, dtype=torch.bool)
    tgt_mask = torch.zeros_like(tgt_output, dtype=torch.bool)
    for row, tokens in enumerate(sources):
        src_mask[row, :len(tokens)] = True
    for row, tokens in enumerate(programs):
        tgt_mask[row, :len(tokens) - 1] = True
    return Batch(src, src_mask, tgt_input, tgt_output, tgt_mask, tgt_pad)


class BatchSource():
    "Assembles visual sequences for a list of dataset entries once"

    def __init__(self, entries, visual, tgt_pad):
        self.entries = list(entries)
        self.tgt_pad = tgt_pad
        self.sources = [visual.assemble(entry.demos).tokens
                        for entry in self.entries]
        self.programs = [entry.program_tokens for entry in self.entries]

    def __len__(self):
        return len(self.entries)

    def batch(self, indices):
        return make_batch([self.sources[i] for i in indices],
                          [self.programs[i] for i in indices], self.tgt_pad)

    def sample(self, seed, step, batch_size):
        "Returns the batch for one training step"
        size = min(batch_size, len(self))
        indices = keyed_generator(BATCH_STREAM, seed, step).choice(
            len(self), size=size, replace=False)
        return self.batch(sorted(int(i) for i in indices))

    def batches(self, batch_size):
        "Yields consecutive batches covering every entry"
        for start in range(0, len(self), batch_size):
            yield self.batch(range(start, min(start + batch_size, len(self))))


def loss(model, batch):
    """Returns the mean cross-entropy over non-pad target positions, reduced
    in float64"""
    logits = model(batch.src, batch.src_mask, batch.tgt_input, batch.tgt_mask)
    return F.cross_entropy(
        logits.reshape(-1, logits.size(-1)).double(),
        batch.tgt_output.reshape(-1),
        ignore_index=batch.tgt_pad, reduction='mean')


def grad(model, batch):
    "Returns {parameter name: gradient of the loss} for every parameter"
    model.zero_grad(set_to_none=True)
    loss(model, batch).backward()
    output = {}
    for name, param in model.named_parameters():
        if param.grad is None:
            output[name] = torch.zeros_like(param)
        else:
            output[name] = param.grad.detach().clone()
    model.zero_grad(set_to_none=True)
    return output


def token_accuracy(model, batch):
    "Returns the share of target tokens predicted from gold prefixes"
    with torch.no_grad():
        logits = model(batch.src, batch.src_mask, batch.tgt_input,
                       batch.tgt_mask)
    hits = (logits.argmax(-1) == batch.tgt_output) & batch.tgt_mask
    return int(hits.sum()) / max(batch.target_tokens, 1)


def schedule(warmup):
    "Returns the learning-rate multiplier: linear warmup, then 1/sqrt decay"
    def multiplier(step):
        step = step + 1
        return min(step / warmup, math.sqrt(warmup / step))
    return multiplier


class TrainState(DemoSynthObject):
    """Model, optimizer, schedule and counters of a training run

    kwargs:

        - data_hash: hash of the dataset the run trains on
    """

    META_ATTRIBUTES = ['step', 'seed', 'best_val', 'lr']

    def __init__(self, config, model, step=0, best_val=None, **kwargs):
        super(TrainState, self).__init__(**kwargs)
        self.config = config
        self.model = model
        self.step = step
        self.best_val = best_val
        train = config.train
        self.optimizer = torch.optim.AdamW(
            model.parameters(), lr=train.lr, betas=(train.beta1, train.beta2),
            weight_decay=train.weight_decay)
        for group in self.optimizer.param_groups:
            group['initial_lr'] = train.lr
        self.scheduler = torch.optim.lr_scheduler.LambdaLR(
            self.optimizer, schedule(train.warmup), last_epoch=step - 1)

    @classmethod
    def create(cls, config, data_hash=None):
        "Returns a fresh state with weights drawn from the training seed"
        model = build_model(config.model, seed=config.train.seed)
        return cls(config, model, data_hash=data_hash)

    @property
    def seed(self):
        return self.config.train.seed

    @property
    def data_hash(self):
        return self.kwargs.get('data_hash')

    @property
    def lr(self):
        "Returns the learning rate of the next update"
        return self.optimizer.param_groups[0]['lr']


def train_step(state, batch):
    "Applies one update and returns the batch loss"
    model = state.model
    model.train()
    torch.manual_seed(derive_seed(BATCH_STREAM, state.seed, state.step)
                      & 0x7FFFFFFFFFFFFFFF)
    state.optimizer.zero_grad(set_to_none=True)
    value = loss(model, batch)
    if not torch.isfinite(value):
        raise DivergenceError(f"loss is {float(value)} at step {state.step}")
    value.backward()
    torch.nn.utils.clip_grad_norm_(model.parameters(),
                                   state.config.train.grad_clip)
    state.optimizer.step()
    state.scheduler.step()
    state.step += 1
    return float(value)


def evaluate_loss(model, source, batch_size):
    "Returns (mean loss, token accuracy) over every entry of a batch source"
    model.eval()
    total_loss = 0.0
    hits = 0
    tokens = 0
    with torch.no_grad():
        for batch in source.batches(batch_size):
            count = batch.target_tokens
            total_loss += float(loss(model, batch)) * count
            hits += token_accuracy(model, batch) * count
            tokens += count
    return total_loss / max(tokens, 1), hits / max(tokens, 1)


def check_compatible(config, manifest):
    "Raises ConfigMismatch unless the model vocabularies fit the dataset"
    world = manifest.world_config
    language = manifest.language()
    if config.model.src_vocab != visual_vocab_size(world.q, world.m):
        raise ConfigMismatch("model source vocabulary does not fit the data")
    if config.model.tgt_vocab != len(language.vocabulary):
        raise ConfigMismatch("model target vocabulary does not fit the data")
    if config.data_hash() != manifest.config_hash:
        raise ConfigMismatch("config and dataset were built differently")


def _read_log(path, upto):
    if not os.path.exists(path):
        return []
    with open(path, encoding='utf-8') as handle:
        records = [json.loads(line) for line in handle if line.strip()]
    return [record for record in records if record['step'] <= upto]


def restore_state(state, restored):
    """Rewinds state in place to a loaded checkpoint: weights, optimizer
    moments, LR schedule and counters"""
    state.model.load_state_dict(restored.model.state_dict())
    state.optimizer.load_state_dict(restored.optimizer.state_dict())
    state.scheduler.load_state_dict(restored.scheduler.state_dict())
    state.step = restored.step
    state.best_val = restored.best_val
    return state


def train(state, dataset, out_dir=None):
    """Trains until ``config.train.steps`` updates have been applied. Returns
    (state, metric records). With out_dir set, writes best.ckpt, last.ckpt and
    train_log.jsonl there. A non-finite loss restores the last checkpoint and
    raises DivergenceError."""
    config = state.config
    hyper = config.train
    check_compatible(config, dataset.manifest)
    torch.set_num_threads(hyper.threads)
    torch.use_deterministic_algorithms(True)
    language = dataset.language()
    visual = VisualLanguage(config.world.q, config.world.m)
    pad = language.vocabulary.pad_id
    train_source = BatchSource(dataset.split('train'), visual, pad)
    val_entries = dataset.split('val') or dataset.split('train')
    val_source = BatchSource(val_entries, visual, pad)
    log_path = os.path.join(out_dir, TRAIN_LOG) if out_dir else None
    records = _read_log(log_path, state.step) if log_path else []
    log.info("training from step %d to %d on %d entries", state.step,
             hyper.steps, len(train_source))
    while state.step < hyper.steps:
        batch = train_source.sample(hyper.seed, state.step, hyper.batch_size)
        try:
            value = train_step(state, batch)
        except DivergenceError:
            last = os.path.join(out_dir, LAST_CHECKPOINT) if out_dir else None
            if last and os.path.exists(last):
                restore_state(state, load_checkpoint(last))
                log.error("loss diverged; restored step %d", state.step)
            raise
        if state.step % hyper.eval_interval and state.step != hyper.steps:
            continue
        val_loss, val_accuracy = evaluate_loss(
            state.model, val_source, hyper.batch_size)
        record = {
            'step': state.step,
            'loss': round(value, 6),
            'token_accuracy': round(token_accuracy(state.model, batch), 6),
            'lr': state.lr,
            'val_loss': round(val_loss, 6),
            'val_accuracy': round(val_accuracy, 6),
        }
        records.append(record)
        log.info(json.dumps(record, sort_keys=True))
        improved = state.best_val is None or val_loss < state.best_val
        if improved:
            state.best_val = val_loss
        if out_dir:
            if improved:
                save_checkpoint(os.path.join(out_dir, BEST_CHECKPOINT), state)
            save_checkpoint(os.path.join(out_dir, LAST_CHECKPOINT), state)
            write_text(log_path, ''.join(
                json.dumps(item, sort_keys=True) + '\n' for item in records))
    return state, records


def _tensor_bytes(tensor):
    name, layout = _DTYPES[tensor.dtype]
    array = tensor.detach().cpu().contiguous().numpy().astype(layout)
    return name, array.tobytes()


def _named_tensors(state):
    tensors = [(f"model/{name}", value)
               for name, value in state.model.state_dict().items()]
    names = {id(param): name
             for name, param in state.model.named_parameters()}
    for param in state.model.parameters():
        moments = state.optimizer.state.get(param, {})
        for key in sorted(moments):
            value = moments[key]
            if not torch.is_tensor(value):
                value = torch.tensor(value, dtype=torch.float32)
            tensors.append((f"optim/{names[id(param)]}/{key}", value))
    return tensors


def save_checkpoint(path, state):
    "Writes the state to path in the checkpoint layout"
    index = []
    payload = []
    offset = 0
    for name, tensor in _named_tensors(state):
        dtype, data = _tensor_bytes(tensor)
        index.append({'name': name, 'dtype': dtype,
                      'shape': list(tensor.shape), 'offset': offset,
                      'nbytes': len(data)})
        payload.append(data)
        offset += len(data)
    header = {
        'format_version': CHECKPOINT_VERSION,
        'config': state.config.to_dict(),
        'config_hash': state.config.config_hash(),
        'tokenizer': TOKENIZER_CONVENTION,
        'data_hash': state.data_hash,
        'step': state.step,
        'best_val': state.best_val,
        'tensors': index,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode('utf-8')
    try:
        with atomic_write(path, binary=True) as handle:
            handle.write(CHECKPOINT_MAGIC)
            handle.write(struct.pack('<Q', len(header_bytes)))
            handle.write(header_bytes)
            for data in payload:
                handle.write(data)
    except OSError as err:
        raise DatasetIOError(f"cannot write checkpoint {path}: {err}") from err
    log.debug("saved checkpoint %s at step %d", path, state.step)


def read_checkpoint(path):
    "Returns (header, {name: tensor}) of a checkpoint file"
    try:
        with open(path, 'rb') as handle:
            raw = handle.read()
    except OSError as err:
        raise DatasetIOError(f"cannot read checkpoint {path}: {err}") from err
    if raw[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise VersionMismatch(f"{path} is not a demosynth checkpoint")
    start = len(CHECKPOINT_MAGIC) + 8
    try:
        (length,) = struct.unpack('<Q', raw[len(CHECKPOINT_MAGIC):start])
        header = json.loads(raw[start:start + length].decode('utf-8'))
    except (struct.error, ValueError) as err:
        raise CorruptDataset(f"unreadable checkpoint header: {err}") from err
    if header.get('format_version') != CHECKPOINT_VERSION:
        raise VersionMismatch(
            f"checkpoint format {header.get('format_version')} is not "
            f"{CHECKPOINT_VERSION}")
    if header.get('tokenizer') != TOKENIZER_CONVENTION:
        raise VersionMismatch(f"checkpoint tokenizer {header.get('tokenizer')}")
    payload = raw[start + length:]
    tensors = {}
    for item in header['tensors']:
        data = payload[item['offset']:item['offset'] + item['nbytes']]
        if len(data) != item['nbytes']:
            raise CorruptDataset(f"checkpoint tensor {item['name']} is cut")
        dtype, layout = _DTYPE_NAMES[item['dtype']]
        array = np.frombuffer(data, dtype=layout).reshape(item['shape'])
        tensors[item['name']] = torch.from_numpy(array.copy()).to(dtype)
    return header, tensors


def load_checkpoint(path, expected=None):
    """Restores a TrainState from a checkpoint. With an expected config the
    model shapes and dataset hash must agree."""
    header, tensors = read_checkpoint(path)
    config = ExperimentConfig.from_dict(header['config'])
    if header['config_hash'] != config.config_hash():
        raise CorruptDataset(f"checkpoint {path} config hash mismatch")
    if expected is not None:
        if dataclasses.asdict(expected.model) != header['config']['model']:
            raise ConfigMismatch(f"checkpoint {path} has another model shape")
        if expected.data_hash() != config.data_hash():
            raise ConfigMismatch(
                f"checkpoint {path} was trained on another dataset config")
    model = build_model(config.model, seed=config.train.seed)
    prefix = 'model/'
    model.load_state_dict({name[len(prefix):]: tensor
                           for name, tensor in tensors.items()
                           if name.startswith(prefix)})
    state = TrainState(config, model, step=header['step'],
                       best_val=header['best_val'],
                       data_hash=header['data_hash'])
    for name, param in model.named_parameters():
        moments = {}
        for key in ('exp_avg', 'exp_avg_sq', 'step'):
            stored = tensors.get(f"optim/{name}/{key}")
            if stored is not None:
                moments[key] = stored
        if moments:
            state.optimizer.state[param] = moments
    log.debug("loaded checkpoint %s at step %d", path, state.step)
    return state
