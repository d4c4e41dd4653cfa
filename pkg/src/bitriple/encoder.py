"""Token encoders and the role-specific projections.

A backend maps a batch of token lists to word-aligned vectors plus one
sentence-summary vector per sentence. ``project`` then builds the subject,
object and relation feature sequences and cross-injects the summary rows.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Sequence

import torch
from torch import nn

logger = logging.getLogger(__name__)

PAD, UNK, CLS = "[PAD]", "[UNK]", "[CLS]"


class EncoderStateError(RuntimeError):
    """The backend was used before its weights were loaded."""


@dataclass
class TokenEncoding:
    """``vectors`` is ``(..., l, d_h)``; ``summary`` is the classification-token row ``(..., d_h)``."""

    vectors: torch.Tensor
    summary: torch.Tensor
    mask: torch.Tensor | None = None

    @property
    def dim(self) -> int:
        return self.vectors.shape[-1]


@dataclass
class ProjectedFeatures:
    hs: torch.Tensor
    ho: torch.Tensor
    hr: torch.Tensor
    hs_cls: torch.Tensor
    ho_cls: torch.Tensor
    mask: torch.Tensor | None = None

    def select(self, i: int) -> "ProjectedFeatures":
        """Features of the i-th sentence of a batch, trimmed to its length."""
        n = int(self.mask[i].sum()) if self.mask is not None else self.hs.shape[1]
        return ProjectedFeatures(
            self.hs[i, :n], self.ho[i, :n], self.hr[i, :n], self.hs_cls[i], self.ho_cls[i]
        )


class EncoderBackend(nn.Module):
    """Base class: subclasses implement ``encode_batch``."""

    dim: int

    def encode_batch(self, batch: Sequence[Sequence[str]]) -> TokenEncoding:
        raise NotImplementedError

    def encode(self, tokens: Sequence[str]) -> TokenEncoding:
        if len(tokens) == 0:
            raise ValueError("cannot encode an empty token list")
        enc = self.encode_batch([tokens])
        return TokenEncoding(enc.vectors[0], enc.summary[0])

    def extra_state(self) -> dict:
        """JSON-able state needed to rebuild the backend from a checkpoint."""
        return {}


def _pad_ids(batch, vocab, unk, add_cls):
    longest = max(len(t) for t in batch)
    offset = 1 if add_cls else 0
    ids = torch.zeros(len(batch), longest + offset, dtype=torch.long)
    mask = torch.zeros(len(batch), longest, dtype=torch.bool)
    for i, tokens in enumerate(batch):
        if not tokens:
            raise ValueError("cannot encode an empty token list")
        if add_cls:
            ids[i, 0] = vocab[CLS]
        ids[i, offset : offset + len(tokens)] = torch.tensor([vocab.get(t, unk) for t in tokens])
        mask[i, : len(tokens)] = True
    return ids, mask


def build_vocab(token_lists) -> list[str]:
    seen = {}
    for tokens in token_lists:
        for t in tokens:
            seen.setdefault(t, None)
    return [PAD, UNK, CLS] + sorted(seen)


class LookupEncoder(EncoderBackend):
    """Fixed embedding table, no context mixing. Summary vector is row 0."""

    def __init__(self, vocab: Sequence[str], table: torch.Tensor):
        super().__init__()
        if table.shape[0] != len(vocab):
            raise ValueError("embedding table rows must match the vocabulary")
        self.vocab = {t: i for i, t in enumerate(vocab)}
        self.embedding = nn.Embedding.from_pretrained(table, freeze=True)
        self.dim = table.shape[1]

    def encode_batch(self, batch):
        ids, mask = _pad_ids(batch, self.vocab, self.vocab.get(UNK, 0), add_cls=False)
        vectors = self.embedding(ids)
        return TokenEncoding(vectors, vectors[:, 0], mask)


class TinyEncoder(EncoderBackend):
    """Small trainable encoder: embeddings, positions, a shallow transformer stack.

    A learned ``[CLS]`` token is prepended; its output row is the summary vector.
    """

    def __init__(self, vocab: Sequence[str], dim: int = 32, layers: int = 2, heads: int = 4, max_len: int = 128):
        super().__init__()
        if dim > 64:
            raise ValueError("tiny-trainable encoder is limited to d_h <= 64")
        self.vocab_list = list(vocab)
        self.vocab = {t: i for i, t in enumerate(self.vocab_list)}
        self.dim = dim
        self.layers = layers
        self.heads = heads
        self.max_len = max_len
        self.embedding = nn.Embedding(len(self.vocab_list), dim, padding_idx=0)
        self.position = nn.Embedding(max_len + 1, dim)
        layer = nn.TransformerEncoderLayer(
            dim, heads, dim_feedforward=2 * dim, dropout=0.0, batch_first=True, norm_first=True
        )
        self.mixer = nn.TransformerEncoder(layer, layers, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(dim)

    def encode_batch(self, batch):
        ids, mask = _pad_ids(batch, self.vocab, self.vocab[UNK], add_cls=True)
        if ids.shape[1] > self.max_len + 1:
            raise ValueError(f"sentence longer than max_len={self.max_len}")
        pos = torch.arange(ids.shape[1]).unsqueeze(0)
        x = self.embedding(ids) + self.position(pos)
        key_pad = torch.cat([torch.zeros(len(batch), 1, dtype=torch.bool), ~mask], dim=1)
        x = self.norm(self.mixer(x, src_key_padding_mask=key_pad))
        return TokenEncoding(x[:, 1:], x[:, 0], mask)

    def extra_state(self):
        return {"vocab": self.vocab_list, "dim": self.dim, "layers": self.layers,
                "heads": self.heads, "max_len": self.max_len}


class PretrainedEncoder(EncoderBackend):
    """Wraps a pretrained transformer; each word is represented by its first subword.

    Weights are located by a model identifier or a local path. ``load`` must be
    called before encoding; the cache directory defaults to ``$BITRIPLE_CACHE``.
    """

    def __init__(self, name_or_path: str, cache_dir: str | None = None):
        super().__init__()
        self.name_or_path = name_or_path
        self.cache_dir = cache_dir or os.environ.get("BITRIPLE_CACHE")
        self.model = None
        self.tokenizer = None
        self.dim = 0

    def load(self) -> "PretrainedEncoder":
        from transformers import AutoModel, AutoTokenizer

        self.tokenizer = AutoTokenizer.from_pretrained(self.name_or_path, cache_dir=self.cache_dir)
        self.model = AutoModel.from_pretrained(self.name_or_path, cache_dir=self.cache_dir)
        self.dim = self.model.config.hidden_size
        return self

    def encode_batch(self, batch):
        if self.model is None:
            raise EncoderStateError("pretrained encoder not loaded; call load() first")
        if any(len(t) == 0 for t in batch):
            raise ValueError("cannot encode an empty token list")
        inputs = self.tokenizer(
            [list(t) for t in batch], is_split_into_words=True, padding=True,
            truncation=True, return_tensors="pt",
        )
        out = self.model(**inputs).last_hidden_state
        longest = max(len(t) for t in batch)
        index = torch.zeros(len(batch), longest, dtype=torch.long)
        mask = torch.zeros(len(batch), longest, dtype=torch.bool)
        for b, tokens in enumerate(batch):
            first = {}
            for pos, w in enumerate(inputs.word_ids(b)):
                if w is not None and w not in first:
                    first[w] = pos
            if len(first) < len(tokens):
                raise ValueError(f"sentence {b} truncated by the tokenizer ({len(tokens)} words)")
            for w in range(len(tokens)):
                index[b, w] = first[w]
            mask[b, : len(tokens)] = True
        vectors = torch.gather(out, 1, index.unsqueeze(-1).expand(-1, -1, out.shape[-1]))
        return TokenEncoding(vectors, out[:, 0], mask)

    def extra_state(self):
        return {"name_or_path": self.name_or_path}


class ProjectionParams(nn.Module):
    """Three role maps ``W h + b`` for subjects, objects and relations."""

    def __init__(self, dim: int):
        super().__init__()
        self.subject = nn.Linear(dim, dim)
        self.object = nn.Linear(dim, dim)
        self.relation = nn.Linear(dim, dim)

    def forward(self, enc: TokenEncoding) -> ProjectedFeatures:
        return project(enc, self)


def project(enc: TokenEncoding, params: ProjectionParams) -> ProjectedFeatures:
    """Role-specific features with the summary rows cross-injected.

    Both injections use the pre-injection summary rows, so the two additions
    are simultaneous; ``hr`` is left untouched.
    """
    d = params.subject.in_features
    if enc.vectors.shape[-1] != d or enc.summary.shape[-1] != d:
        raise ValueError(f"encoding width {enc.vectors.shape[-1]} does not match projection width {d}")
    hs = params.subject(enc.vectors)
    ho = params.object(enc.vectors)
    hr = params.relation(enc.vectors)
    hs_cls = params.subject(enc.summary)
    ho_cls = params.object(enc.summary)
    hs = hs + ho_cls.unsqueeze(-2)
    ho = ho + hs_cls.unsqueeze(-2)
    return ProjectedFeatures(hs, ho, hr, hs_cls, ho_cls, enc.mask)


def build_backend(kind: str, dim: int = 32, vocab=None, pretrained: str | None = None, **kwargs) -> EncoderBackend:
    if kind == "tiny-trainable":
        if vocab is None:
            raise ValueError("tiny-trainable backend needs a vocabulary")
        return TinyEncoder(vocab, dim=dim, **kwargs)
    if kind == "pretrained-transformer":
        if not pretrained:
            raise ValueError("pretrained-transformer backend needs a model identifier or path")
        return PretrainedEncoder(pretrained).load()
    raise ValueError(f"unknown encoder backend {kind!r}")
