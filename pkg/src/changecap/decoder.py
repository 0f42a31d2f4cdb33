"""Transformer caption decoder: teacher-forced training forward plus
greedy and beam inference.

Residuals are post-norm: each sublayer output is added to its input and
then layer-normalized.  Cross-attention weights of the final layer are
kept for export.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import functional as F
from .autodiff import Tensor
from .config import ModelConfig
from .errors import ContractError
from .nn import Embedding, LayerNorm, Linear, Module, Parameter
from .vocab import END, PAD, START, UNK


def causal_mask(t: int, dtype) -> np.ndarray:
    """Additive mask: -1e9 above the diagonal (softmax weight exactly 0)."""
    mask = np.zeros((t, t), dtype=dtype)
    mask[np.triu_indices(t, k=1)] = -1e9
    return mask


class CrossAttention(Module):
    """Multi-head attention; queries from x, keys/values from memory."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.w_q = Linear(dim, dim, rng, bias=False, dtype=dtype)
        self.w_k = Linear(dim, dim, rng, bias=False, dtype=dtype)
        self.w_v = Linear(dim, dim, rng, bias=False, dtype=dtype)
        self.w_out = Linear(dim, dim, rng, bias=True, dtype=dtype)
        self.last_attention: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        b, n, c = x.shape
        return x.reshape((b, n, self.heads, self.head_dim)).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor, memory: Tensor, mask: np.ndarray | None = None) -> Tensor:
        b, t, c = x.shape
        q = self._split(self.w_q(x))
        k = self._split(self.w_k(memory))
        v = self._split(self.w_v(memory))
        logits = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.head_dim))
        if mask is not None:
            logits = logits + Tensor(mask.astype(x.dtype))
        att = ad.softmax(logits, axis=-1)
        self.last_attention = att.data
        ctx = (att @ v).transpose(0, 2, 1, 3).reshape((b, t, c))
        return self.w_out(ctx)


class DecoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        c = cfg.model_dim
        hidden = cfg.decoder_ffn_hidden or 4 * c
        self.self_attn = CrossAttention(c, cfg.heads, rng, dtype=dtype)
        self.cross_attn = CrossAttention(c, cfg.heads, rng, dtype=dtype)
        self.ln1 = LayerNorm(c, dtype=dtype)
        self.ln2 = LayerNorm(c, dtype=dtype)
        self.ln3 = LayerNorm(c, dtype=dtype)
        self.fc1 = Linear(c, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, c, rng, dtype=dtype)
        self.dropout = cfg.dropout

    def forward(self, x: Tensor, memory: Tensor, mask: np.ndarray,
                rng: np.random.Generator | None = None) -> Tensor:
        def drop(y):
            return F.dropout(y, self.dropout, rng, self.training)

        x = self.ln1(x + drop(self.self_attn(x, x, mask)))
        x = self.ln2(x + drop(self.cross_attn(x, memory)))
        x = self.ln3(x + drop(self.fc2(ad.relu(self.fc1(x)))))
        return x


class CaptionDecoder(Module):
    """Token + learned positional embeddings, D decoder layers, and the
    projection to vocabulary logits."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        if cfg.vocab_size <= UNK:
            raise ContractError("decoder requires vocab_size to be set on the config")
        self.cfg = cfg
        self.tok_emb = Embedding(cfg.vocab_size, cfg.model_dim, rng, dtype=dtype)
        self.pos_emb = Parameter(rng.normal(0.0, 0.02, size=(cfg.max_len, cfg.model_dim)), dtype=dtype)
        self.layers = [DecoderLayer(cfg, rng, dtype=dtype) for _ in range(cfg.decoder_layers)]
        self.out_proj = Linear(cfg.model_dim, cfg.vocab_size, rng, dtype=dtype)
        self.dropout = cfg.dropout

    @property
    def last_cross_attention(self) -> np.ndarray | None:
        """[B, heads, T, HW] softmax weights of the final layer."""
        return self.layers[-1].cross_attn.last_attention

    def forward(self, token_ids, memory: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        b, t = ids.shape
        if t > self.cfg.max_len:
            raise ContractError(f"sequence length {t} exceeds max_len {self.cfg.max_len}")
        x = self.tok_emb(ids) + self.pos_emb[:t]
        x = F.dropout(x, self.dropout, rng, self.training)
        mask = causal_mask(t, x.dtype)
        for layer in self.layers:
            x = layer(x, memory, mask, rng)
        return self.out_proj(x)


def cross_entropy_loss(logits: Tensor, targets, pad_id: int = PAD) -> Tensor:
    """Token-level cross entropy with teacher forcing; pad targets masked."""
    t = np.asarray(targets, dtype=np.int64)
    if logits.ndim == 3:
        logits = logits.reshape((-1, logits.shape[-1]))
        t = t.reshape(-1)
    return F.cross_entropy(logits, t, ignore_index=pad_id)


@dataclass
class DecodedCaption:
    token_ids: list[int]          # includes <start> and (when emitted) <end>
    text: str
    cross_attention: np.ndarray   # [steps, heads, HW]
    log_prob: float = 0.0


def greedy_decode(decoder: CaptionDecoder, memory: Tensor, vocab) -> DecodedCaption:
    """Argmax decoding from <start>; ties resolve to the lowest token id."""
    was_training = decoder.training
    decoder.eval()
    ids = [START]
    attn_steps = []
    log_prob = 0.0
    try:
        with ad.no_grad():
            for _ in range(decoder.cfg.max_len - 1):
                logits = decoder(np.array([ids]), memory)
                step_logits = logits.data[0, -1]
                nxt = int(np.argmax(step_logits))
                shifted = step_logits - step_logits.max()
                log_prob += float(shifted[nxt] - np.log(np.exp(shifted).sum()))
                attn_steps.append(decoder.last_cross_attention[0, :, -1, :].copy())
                ids.append(nxt)
                if nxt == END:
                    break
    finally:
        decoder.train(was_training)
    attention = np.stack(attn_steps) if attn_steps else np.zeros((0, decoder.layers[-1].cross_attn.heads, memory.shape[1]))
    return DecodedCaption(token_ids=ids, text=vocab.decode(ids), cross_attention=attention, log_prob=log_prob)


def beam_decode(decoder: CaptionDecoder, memory: Tensor, vocab, beam_width: int = 3) -> DecodedCaption:
    """Beam search with length-normalized log-probability scoring."""
    was_training = decoder.training
    decoder.eval()
    beams: list[tuple[list[int], float, bool]] = [([START], 0.0, False)]
    try:
        with ad.no_grad():
            for _ in range(decoder.cfg.max_len - 1):
                if all(done for _, _, done in beams):
                    break
                candidates = []
                for ids, score, done in beams:
                    if done:
                        candidates.append((ids, score, True))
                        continue
                    logits = decoder(np.array([ids]), memory).data[0, -1]
                    shifted = logits - logits.max()
                    logp = shifted - np.log(np.exp(shifted).sum())
                    top = np.argsort(-logp)[:beam_width]
                    for token in top:
                        token = int(token)
                        candidates.append((ids + [token], score + float(logp[token]), token == END))
                candidates.sort(key=lambda c: (-c[1] / max(len(c[0]) - 1, 1), c[0]))
                beams = candidates[:beam_width]
    finally:
        decoder.train(was_training)
    ids, score, _ = beams[0]
    return DecodedCaption(token_ids=ids, text=vocab.decode(ids),
                          cross_attention=np.zeros((0, 0, memory.shape[1])), log_prob=score)
