"""The full extractor: shared encoder + projections, four taggers, relation head."""

from __future__ import annotations

from typing import Sequence

import torch
from torch import nn

from .config import RunConfig
from .encoder import EncoderBackend, ProjectedFeatures, ProjectionParams, build_backend
from .relation import make_relation_head
from .taggers import make_head

# module name -> task id of the tasks that train it
HEADS = {
    "s2o_subject": "S1",
    "s2o_object": "O1",
    "o2s_object": "O2",
    "o2s_subject": "S2",
    "relation": "R",
}


class TripleExtractor(nn.Module):
    def __init__(self, backend: EncoderBackend, n_relations: int, scheme: str = "zero_one",
                 relation_head: str = "biaffine"):
        super().__init__()
        dim = backend.dim
        self.backend = backend
        self.projection = ProjectionParams(dim)
        self.scheme = scheme
        self.n_relations = n_relations
        self.s2o_subject = make_head(dim, scheme)
        self.s2o_object = make_head(dim, scheme)
        self.o2s_object = make_head(dim, scheme)
        self.o2s_subject = make_head(dim, scheme)
        self.relation = make_relation_head(dim, n_relations, relation_head)

    @property
    def dim(self) -> int:
        return self.backend.dim

    def features(self, batch: Sequence[Sequence[str]]) -> ProjectedFeatures:
        return self.projection(self.backend.encode_batch(batch))

    def module_groups(self) -> dict[str, list[nn.Parameter]]:
        """Trainable parameters grouped by module; backend and projections form ``encoder``."""
        groups = {"encoder": [p for p in self.backend.parameters() if p.requires_grad]
                  + list(self.projection.parameters())}
        for name in HEADS:
            groups[name] = list(getattr(self, name).parameters())
        return groups


def build_model(config: RunConfig, n_relations: int, vocab=None) -> TripleExtractor:
    backend = build_backend(
        config.encoder, dim=config.d_h, vocab=vocab, pretrained=config.pretrained,
        **({"layers": config.encoder_layers, "heads": config.encoder_heads, "max_len": config.max_len}
           if config.encoder == "tiny-trainable" else {}),
    )
    return TripleExtractor(backend, n_relations, config.scheme, config.relation_head)


def clone_state(model: nn.Module) -> dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}
