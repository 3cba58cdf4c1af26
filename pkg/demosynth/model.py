"""The program generator: an encoder-decoder transformer built from layers.

The encoder reads a visual token sequence, the decoder emits program tokens.
Blocks are pre-norm (``x + sublayer(norm(x))``), layer norms carry a gain and
no bias, positions use learned absolute embeddings and projections inside
attention and feed-forward layers have no bias. Masks are boolean tensors in
which True marks a position that may be attended to.
"""
import logging
import math

import torch
from torch import nn

from .config import ModelConfig
from .errors import ShapeError

#: Score given to masked attention positions before the softmax
MASK_VALUE = -1e9

log = logging.getLogger(__name__)


class LayerNorm(nn.Module):
    "Normalizes the last dimension and scales it by a learned gain"

    def __init__(self, size, eps=1e-6):
        super(LayerNorm, self).__init__()
        self.gain = nn.Parameter(torch.ones(size))
        self.eps = eps

    def forward(self, x):
        mean = x.mean(-1, keepdim=True)
        var = (x - mean).pow(2).mean(-1, keepdim=True)
        return self.gain * (x - mean) / torch.sqrt(var + self.eps)


def causal_mask(size, device=None):
    "Returns a [1, size, size] mask letting position t see positions <= t"
    return torch.tril(torch.ones(
        (1, size, size), dtype=torch.bool, device=device))


def attention(q, k, v, mask=None, dropout=None):
    "Scaled dot-product attention. Returns (output, attention weights)"
    d_k = q.size(-1)
    scores = torch.matmul(q, k.transpose(-2, -1)) / math.sqrt(d_k)
    if mask is not None:
        scores = scores.masked_fill(~mask, MASK_VALUE)
    weights = scores.softmax(dim=-1)
    if dropout is not None:
        weights = dropout(weights)
    return torch.matmul(weights, v), weights


class MultiHeadAttention(nn.Module):
    """Attention over n_heads subspaces. The weights of the last call are
    kept in :attr:`weights` for inspection."""

    def __init__(self, d_model, n_heads, dropout=0.0):
        super(MultiHeadAttention, self).__init__()
        self.d_k = d_model // n_heads
        self.n_heads = n_heads
        self.query = nn.Linear(d_model, d_model, bias=False)
        self.key = nn.Linear(d_model, d_model, bias=False)
        self.value = nn.Linear(d_model, d_model, bias=False)
        self.output = nn.Linear(d_model, d_model, bias=False)
        self.dropout = nn.Dropout(dropout)
        self.weights = None

    def _split(self, x):
        batch = x.size(0)
        return x.view(batch, -1, self.n_heads, self.d_k).transpose(1, 2)

    def forward(self, x, memory, mask=None):
        """x is [B, Lq, d_model], memory [B, Lk, d_model] and mask broadcasts
        to [B, Lq, Lk]"""
        q = self._split(self.query(x))
        k = self._split(self.key(memory))
        v = self._split(self.value(memory))
        if mask is not None:
            mask = mask.unsqueeze(1)
        out, self.weights = attention(q, k, v, mask, self.dropout)
        out = out.transpose(1, 2).contiguous().view(
            x.size(0), -1, self.n_heads * self.d_k)
        return self.output(out)


class FeedForward(nn.Module):
    "Two bias-free projections with a ReLU between them"

    def __init__(self, d_model, d_ff, dropout=0.0):
        super(FeedForward, self).__init__()
        self.inner = nn.Linear(d_model, d_ff, bias=False)
        self.outer = nn.Linear(d_ff, d_model, bias=False)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return self.outer(self.dropout(torch.relu(self.inner(x))))


class EncoderBlock(nn.Module):
    "Self-attention and feed-forward sublayers"

    def __init__(self, config):
        super(EncoderBlock, self).__init__()
        self.self_norm = LayerNorm(config.d_model)
        self.self_attn = MultiHeadAttention(
            config.d_model, config.n_heads, config.dropout)
        self.ff_norm = LayerNorm(config.d_model)
        self.ff = FeedForward(config.d_model, config.d_ff, config.dropout)
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, x, mask):
        normed = self.self_norm(x)
        x = x + self.dropout(self.self_attn(normed, normed, mask))
        return x + self.dropout(self.ff(self.ff_norm(x)))


class DecoderBlock(nn.Module):
    "Causal self-attention, attention over the encoder output, feed-forward"

    def __init__(self, config):
        super(DecoderBlock, self).__init__()
        self.self_norm = LayerNorm(config.d_model)
        self.self_attn = MultiHeadAttention(
            config.d_model, config.n_heads, config.dropout)
        self.cross_norm = LayerNorm(config.d_model)
        self.cross_attn = MultiHeadAttention(
            config.d_model, config.n_heads, config.dropout)
        self.ff_norm = LayerNorm(config.d_model)
        self.ff = FeedForward(config.d_model, config.d_ff, config.dropout)
        self.dropout = nn.Dropout(config.dropout)

    def forward(self, x, memory, src_mask, tgt_mask):
        normed = self.self_norm(x)
        x = x + self.dropout(self.self_attn(normed, normed, tgt_mask))
        x = x + self.dropout(
            self.cross_attn(self.cross_norm(x), memory, src_mask))
        return x + self.dropout(self.ff(self.ff_norm(x)))


class ProgramGenerator(nn.Module):
    """Translates a visual token sequence into program token logits

    Parameters are grouped (see :meth:`parameter_groups`) into embeddings,
    encoder blocks, decoder blocks, final norms and the output projection.
    """

    def __init__(self, config=None):
        super(ProgramGenerator, self).__init__()
        self.config = (config or ModelConfig()).validate()
        config = self.config
        self.src_embed = nn.Embedding(config.src_vocab, config.d_model)
        self.src_pos = nn.Embedding(config.max_src_len, config.d_model)
        self.tgt_embed = nn.Embedding(config.tgt_vocab, config.d_model)
        self.tgt_pos = nn.Embedding(config.max_tgt_len, config.d_model)
        self.encoder = nn.ModuleList(
            EncoderBlock(config) for _ in range(config.n_enc_blocks))
        self.encoder_norm = LayerNorm(config.d_model)
        self.decoder = nn.ModuleList(
            DecoderBlock(config) for _ in range(config.n_dec_blocks))
        self.decoder_norm = LayerNorm(config.d_model)
        self.generator = nn.Linear(config.d_model, config.tgt_vocab,
                                   bias=False)
        self.dropout = nn.Dropout(config.dropout)
        self.reset_parameters()

    def reset_parameters(self):
        "Draws fresh weights from the current torch generator state"
        for name, param in self.named_parameters():
            if name.endswith('gain'):
                nn.init.ones_(param)
            elif 'embed' in name or '_pos' in name:
                nn.init.normal_(param, std=0.02)
            else:
                nn.init.xavier_uniform_(param)

    def parameter_groups(self):
        "Returns {group name: [parameter names]}"
        groups = {}
        for name, _ in self.named_parameters():
            head = name.split('.')[0]
            if head in ('encoder', 'decoder'):
                head = '.'.join(name.split('.')[:2])
            groups.setdefault(head, []).append(name)
        return groups

    def _check(self, tokens, mask, vocab, max_len, what):
        if tokens.dim() != 2:
            raise ShapeError(f"{what} tokens must be [batch, length], "
                             f"got {tuple(tokens.shape)}")
        if mask is not None and mask.shape != tokens.shape:
            raise ShapeError(f"{what} mask shape {tuple(mask.shape)} does not "
                             f"match tokens {tuple(tokens.shape)}")
        if tokens.size(1) > max_len:
            raise ShapeError(f"{what} length {tokens.size(1)} exceeds "
                             f"{max_len}")
        if tokens.numel() and (tokens.min() < 0 or tokens.max() >= vocab):
            raise ShapeError(f"{what} token id outside [0, {vocab})")

    def encode(self, src, src_mask):
        """Returns the encoder memory [B, L_src, d_model]. src_mask is True
        at real tokens and False at <pad>."""
        self._check(src, src_mask, self.config.src_vocab,
                    self.config.max_src_len, 'source')
        positions = torch.arange(src.size(1), device=src.device)
        x = self.dropout(self.src_embed(src) + self.src_pos(positions))
        mask = src_mask.unsqueeze(1)
        for block in self.encoder:
            x = block(x, mask)
        return self.encoder_norm(x)

    def decode_step(self, memory, src_mask, tgt, tgt_mask=None):
        """Returns next-token logits [B, L_tgt, tgt_vocab] for every position
        of the target prefix tgt. Position t only sees prefix positions up to
        t and unmasked memory positions."""
        self._check(tgt, tgt_mask, self.config.tgt_vocab,
                    self.config.max_tgt_len, 'target')
        if memory.dim() != 3 or memory.size(0) != tgt.size(0):
            raise ShapeError("memory batch does not match the target batch")
        positions = torch.arange(tgt.size(1), device=tgt.device)
        x = self.dropout(self.tgt_embed(tgt) + self.tgt_pos(positions))
        self_mask = causal_mask(tgt.size(1), tgt.device)
        if tgt_mask is not None:
            self_mask = self_mask & tgt_mask.unsqueeze(1)
        cross_mask = src_mask.unsqueeze(1)
        for block in self.decoder:
            x = block(x, memory, cross_mask, self_mask)
        return self.generator(self.decoder_norm(x))

    def forward(self, src, src_mask, tgt, tgt_mask=None):
        "Returns logits for a batch, fed the gold target prefix"
        memory = self.encode(src, src_mask)
        return self.decode_step(memory, src_mask, tgt, tgt_mask)


def build_model(config, seed=0):
    "Returns a model whose initial weights are a function of seed"
    generator_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        model = ProgramGenerator(config)
    finally:
        torch.random.set_rng_state(generator_state)
    log.debug("built model with %d parameters",
              sum(p.numel() for p in model.parameters()))
    return model
