"""Relation scoring for candidate subject/object pairs."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .corpus import Span
from .encoder import ProjectedFeatures
from .taggers import entity_condition


@dataclass
class PairRepresentation:
    v_s: torch.Tensor
    v_o: torch.Tensor


def pair_representation(feats: ProjectedFeatures, s: Span, o: Span) -> PairRepresentation:
    """Max-pool the relation features (``hr``) over each entity span."""
    return PairRepresentation(entity_condition(feats.hr, s), entity_condition(feats.hr, o))


class BiaffineParams(nn.Module):
    """One ``(d_h+1) x (d_h+1)`` matrix per relation; the augmented coordinate carries the bias."""

    def __init__(self, dim: int, n_relations: int, init_std: float = 0.02):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(n_relations, dim + 1, dim + 1) * init_std)

    def forward(self, pr: PairRepresentation) -> torch.Tensor:
        return score_relations_biaffine(pr, self)


class LinearRelationParams(nn.Module):
    """Affine map of the concatenated pair ``[v_s; v_o]``."""

    def __init__(self, dim: int, n_relations: int):
        super().__init__()
        self.linear = nn.Linear(2 * dim, n_relations)

    def forward(self, pr: PairRepresentation) -> torch.Tensor:
        return score_relations_linear(pr, self)


def _augment(v: torch.Tensor) -> torch.Tensor:
    return torch.cat([v, torch.ones_like(v[..., :1])], dim=-1)


def biaffine_logits(v_s: torch.Tensor, v_o: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    if v_s.shape[-1] + 1 != weight.shape[-2] or v_o.shape[-1] + 1 != weight.shape[-1]:
        raise ValueError(
            f"pair widths ({v_s.shape[-1]}, {v_o.shape[-1]}) do not fit biaffine weight {tuple(weight.shape)}"
        )
    return torch.einsum("...i,rij,...j->...r", _augment(v_s), weight, _augment(v_o))


def score_relations_biaffine(pr: PairRepresentation, params: BiaffineParams) -> torch.Tensor:
    return torch.sigmoid(biaffine_logits(pr.v_s, pr.v_o, params.weight))


def score_relations_linear(pr: PairRepresentation, params: LinearRelationParams) -> torch.Tensor:
    x = torch.cat([pr.v_s, pr.v_o], dim=-1)
    if x.shape[-1] != params.linear.in_features:
        raise ValueError(f"pair width {x.shape[-1]} != linear head width {params.linear.in_features}")
    return torch.sigmoid(params.linear(x))


def make_relation_head(dim: int, n_relations: int, kind: str = "biaffine") -> nn.Module:
    if kind == "biaffine":
        return BiaffineParams(dim, n_relations)
    if kind == "linear":
        return LinearRelationParams(dim, n_relations)
    raise ValueError(f"unknown relation head {kind!r}")
