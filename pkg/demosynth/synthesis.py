"""Autoregressive decoding of program tokens from demonstrations."""
import logging

import torch

from .errors import ShapeError
from .vislang import VisualLanguage

GREEDY = 'greedy'
BEAM = 'beam'

#: Beam width used when none is given
DEFAULT_BEAM_WIDTH = 4

log = logging.getLogger(__name__)


def _source(tokens):
    src = torch.tensor([list(tokens)], dtype=torch.long)
    return src, torch.ones_like(src, dtype=torch.bool)


def _next_log_probs(model, memory, src_mask, prefix):
    "Returns log-probabilities of the token following prefix"
    tgt = torch.tensor([list(prefix)], dtype=torch.long)
    logits = model.decode_step(memory, src_mask, tgt)
    return torch.log_softmax(logits[0, -1].double(), dim=-1)


def greedy_decode(model, src_tokens, bos, eos, max_len=None):
    """Returns the program tokens chosen by repeatedly taking the most likely
    next token (the lowest id on ties), from <bos> up to <eos> or max_len
    generated tokens"""
    max_len = max_len or model.config.max_tgt_len
    model.eval()
    with torch.no_grad():
        src, src_mask = _source(src_tokens)
        memory = model.encode(src, src_mask)
        prefix = [bos]
        while len(prefix) <= max_len:
            token = int(torch.argmax(
                _next_log_probs(model, memory, src_mask, prefix)))
            prefix.append(token)
            if token == eos:
                break
    return tuple(prefix)


def greedy_decode_batch(model, sources, bos, eos, max_len=None):
    """Greedy decoding of several padded sources in one pass. Returns a list
    of token tuples"""
    max_len = max_len or model.config.max_tgt_len
    width = max(len(tokens) for tokens in sources)
    src = torch.zeros((len(sources), width), dtype=torch.long)
    src_mask = torch.zeros_like(src, dtype=torch.bool)
    for row, tokens in enumerate(sources):
        src[row, :len(tokens)] = torch.tensor(list(tokens))
        src_mask[row, :len(tokens)] = True
    model.eval()
    with torch.no_grad():
        memory = model.encode(src, src_mask)
        tgt = torch.full((len(sources), 1), bos, dtype=torch.long)
        done = torch.zeros(len(sources), dtype=torch.bool)
        while tgt.size(1) <= max_len and not bool(done.all()):
            logits = model.decode_step(memory, src_mask, tgt)
            step = torch.argmax(logits[:, -1].double(), dim=-1)
            step = torch.where(done, torch.full_like(step, eos), step)
            tgt = torch.cat([tgt, step.unsqueeze(1)], dim=1)
            done = done | (step == eos)
    output = []
    for row in tgt.tolist():
        if eos in row:
            row = row[:row.index(eos) + 1]
        output.append(tuple(row))
    return output


def beam_decode(model, src_tokens, bos, eos, width=DEFAULT_BEAM_WIDTH,
                max_len=None):
    """Keeps the ``width`` best partial programs by total log-probability.
    Returns the finished hypothesis with the best length-normalized score,
    or the best unfinished one when none finished. Ties go to lower token
    ids, so width 1 reproduces greedy decoding."""
    if width < 1:
        raise ShapeError("beam width must be at least 1")
    max_len = max_len or model.config.max_tgt_len
    model.eval()
    with torch.no_grad():
        src, src_mask = _source(src_tokens)
        memory = model.encode(src, src_mask)
        beam = [((bos,), 0.0)]
        finished = []
        while beam and len(beam[0][0]) <= max_len:
            candidates = []
            for tokens, score in beam:
                values = _next_log_probs(model, memory, src_mask,
                                         tokens).tolist()
                best = sorted(range(len(values)),
                              key=lambda t: (-values[t], t))[:width]
                candidates.extend((tokens + (t,), score + values[t])
                                  for t in best)
            candidates.sort(key=lambda item: (-item[1], item[0]))
            beam = []
            for tokens, score in candidates[:width]:
                if tokens[-1] == eos:
                    finished.append((tokens, score))
                else:
                    beam.append((tokens, score))
    if finished:
        pool = finished
    else:
        pool = beam
    tokens, _ = min(pool, key=lambda item: (
        -item[1] / (len(item[0]) - 1), item[0]))
    return tokens


def synthesize(model, demos, language, mode=GREEDY,
               width=DEFAULT_BEAM_WIDTH, visual=None):
    """Returns the program tokens the model produces for a demonstration set
    (a DemoSet or a list of demonstrations). Output is not checked for
    grammaticality."""
    visual = visual or VisualLanguage(language.q, language.m)
    demos = getattr(demos, 'demos', demos)
    sequence = visual.assemble(demos)
    vocab = language.vocabulary
    if mode == GREEDY:
        return greedy_decode(model, sequence.tokens, vocab.bos_id,
                             vocab.eos_id)
    if mode == BEAM:
        return beam_decode(model, sequence.tokens, vocab.bos_id, vocab.eos_id,
                           width=width)
    raise ValueError(f"unknown decoding mode '{mode}'")
