"""Subject/object tagging heads and span decoding.

Four heads share one shape: an unconditioned tagger reading one role's
features, and a conditioned tagger reading the other role's features
multiplied element-wise by a max-pooled entity vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np
import torch
from torch import nn

from .corpus import Span
from .encoder import ProjectedFeatures

BIO_LABELS = ("O", "B", "I")


@dataclass
class TagField:
    start_probs: torch.Tensor
    end_probs: torch.Tensor


@dataclass
class BioField:
    """Per-token distribution over ``BIO_LABELS``, shape ``(..., l, 3)``."""

    probs: torch.Tensor


class TaggerHead(nn.Module):
    """``W_start``/``W_end`` are the two rows of ``self.linear.weight``."""

    def __init__(self, dim: int):
        super().__init__()
        self.linear = nn.Linear(dim, 2)

    def forward(self, x: torch.Tensor) -> TagField:
        if x.shape[-1] != self.linear.in_features:
            raise ValueError(f"feature width {x.shape[-1]} != head width {self.linear.in_features}")
        p = torch.sigmoid(self.linear(x))
        return TagField(p[..., 0], p[..., 1])


class BioTaggerHead(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.linear = nn.Linear(dim, len(BIO_LABELS))

    def forward(self, x: torch.Tensor) -> BioField:
        if x.shape[-1] != self.linear.in_features:
            raise ValueError(f"feature width {x.shape[-1]} != head width {self.linear.in_features}")
        return BioField(torch.softmax(self.linear(x), dim=-1))


def make_head(dim: int, scheme: str = "zero_one") -> nn.Module:
    if scheme == "zero_one":
        return TaggerHead(dim)
    if scheme == "bio":
        return BioTaggerHead(dim)
    raise ValueError(f"unknown tagging scheme {scheme!r}")


def tag_subjects(feats: ProjectedFeatures, params: nn.Module):
    return params(feats.hs)


def tag_objects(feats: ProjectedFeatures, params: nn.Module):
    return params(feats.ho)


def entity_condition(rows: torch.Tensor, span: Span) -> torch.Tensor:
    """Element-wise max over the rows covered by ``span``."""
    if span.end >= rows.shape[-2]:
        raise ValueError(f"span ({span.start}, {span.end}) outside {rows.shape[-2]} rows")
    return rows[..., span.start : span.end + 1, :].max(dim=-2).values


def _check_condition(x: torch.Tensor, v: torch.Tensor):
    if v.shape[-1] != x.shape[-1]:
        raise ValueError(f"condition width {v.shape[-1]} != feature width {x.shape[-1]}")


def tag_objects_given_subject(feats: ProjectedFeatures, v_s: torch.Tensor, params: nn.Module):
    _check_condition(feats.ho, v_s)
    return params(feats.ho * v_s.unsqueeze(-2))


def tag_subjects_given_object(feats: ProjectedFeatures, v_o: torch.Tensor, params: nn.Module):
    _check_condition(feats.hs, v_o)
    return params(feats.hs * v_o.unsqueeze(-2))


def apply_threshold(field: TagField, tau: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Strict comparison: a token is tagged 1 iff its probability exceeds ``tau``."""
    start = np.asarray(field.start_probs.detach().cpu() if torch.is_tensor(field.start_probs) else field.start_probs)
    end = np.asarray(field.end_probs.detach().cpu() if torch.is_tensor(field.end_probs) else field.end_probs)
    return (start > tau).astype(np.int8), (end > tau).astype(np.int8)


@numba.njit(cache=True)
def pair_starts_ends(starts, ends):
    """For each row and each start tag, the index of its paired end tag, else -1.

    Scanning left to right, a start pairs with the nearest end at or after it
    that comes before the next start.
    """
    n, length = starts.shape
    out = np.full((n, length), -1, dtype=np.int64)
    for r in range(n):
        for i in range(length):
            if starts[r, i] == 0:
                continue
            k = i
            while k < length:
                if k > i and starts[r, k] != 0:
                    break
                if ends[r, k] != 0:
                    out[r, i] = k
                    break
                k += 1
    return out


def decode_spans(start_tags, end_tags, tokens: Sequence[str] | None = None) -> list[Span]:
    starts = np.asarray(start_tags, dtype=np.int8)
    ends = np.asarray(end_tags, dtype=np.int8)
    if starts.shape != ends.shape or starts.ndim != 1:
        raise ValueError("start and end tags must be 1-D vectors of equal length")
    paired = pair_starts_ends(starts[None, :], ends[None, :])[0]
    spans = []
    for i in np.flatnonzero(paired >= 0):
        j = int(paired[i])
        surface = " ".join(tokens[i : j + 1]) if tokens is not None else ""
        spans.append(Span(int(i), j, surface))
    return spans


def decode_spans_bio(labels, tokens: Sequence[str] | None = None) -> list[Span]:
    """Maximal ``B I*`` runs; an ``I`` not continuing a run is ignored.

    ``labels`` may be strings from ``BIO_LABELS`` or their integer indices.
    """
    spans = []
    start = None
    seq = [BIO_LABELS[x] if not isinstance(x, str) else x for x in labels]
    for i, lab in enumerate(seq + ["O"]):
        if lab not in BIO_LABELS:
            raise ValueError(f"invalid BIO label {lab!r}")
        if start is not None and lab != "I":
            surface = " ".join(tokens[start:i]) if tokens is not None else ""
            spans.append(Span(start, i - 1, surface))
            start = None
        if lab == "B":
            start = i
    return spans


def decode_field(field, tau: float = 0.5, tokens: Sequence[str] | None = None, limit: int | None = None) -> list[Span]:
    """Decode a single-sentence field under whichever scheme produced it."""
    if isinstance(field, BioField):
        spans = decode_spans_bio(field.probs.argmax(dim=-1).tolist(), tokens)
    else:
        spans = decode_spans(*apply_threshold(field, tau), tokens)
    return spans[:limit] if limit is not None else spans

