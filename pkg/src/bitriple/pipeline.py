"""Sequential inference: entity pairs from both directions, then relation scoring."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import torch

from .corpus import Sentence, Span, Triple
from .encoder import ProjectedFeatures
from .model import TripleExtractor
from .relation import PairRepresentation, pair_representation
from .taggers import (
    decode_field,
    entity_condition,
    tag_objects,
    tag_objects_given_subject,
    tag_subjects,
    tag_subjects_given_object,
)


class ExtractionMode(str, enum.Enum):
    BIDIRECTIONAL = "bidirectional"
    S2O_ONLY = "s2o_only"
    O2S_ONLY = "o2s_only"
    TWO_STEP = "two_step"


@dataclass(frozen=True)
class CandidatePair:
    subject: Span
    object: Span
    provenance: frozenset = field(default=frozenset())

    def __post_init__(self):
        if not self.provenance:
            raise ValueError("a candidate pair needs at least one provenance tag")

    @property
    def key(self) -> tuple[int, int, int, int]:
        return (self.subject.start, self.subject.end, self.object.start, self.object.end)


@dataclass
class Extraction:
    """Everything one sentence's inference produced, for reports and diagnostics."""

    triples: list[Triple]
    pairs: list[CandidatePair]
    provenance: dict[Triple, frozenset]
    subjects: list[Span]  # ground entities of s2o
    objects: list[Span]  # ground entities of o2s


def _features(sentence: Sentence, model: TripleExtractor) -> ProjectedFeatures:
    return model.features([sentence.tokens]).select(0)


@torch.no_grad()
def ground_entities(sentence: Sentence, model: TripleExtractor, direction: str, tau: float = 0.5,
                    feats: ProjectedFeatures | None = None, limit: int = 20) -> list[Span]:
    """Spans decoded by the unconditioned tagger of one direction."""
    feats = feats if feats is not None else _features(sentence, model)
    if direction == "s2o":
        field_ = tag_subjects(feats, model.s2o_subject)
    elif direction == "o2s":
        field_ = tag_objects(feats, model.o2s_object)
    else:
        raise ValueError(f"direction must be 's2o' or 'o2s', got {direction!r}")
    return decode_field(field_, tau, sentence.tokens, limit)


@torch.no_grad()
def extract_pairs_s2o(sentence: Sentence, model: TripleExtractor, tau: float = 0.5,
                      feats: ProjectedFeatures | None = None, limit: int = 20,
                      subjects: list[Span] | None = None) -> list[CandidatePair]:
    feats = feats if feats is not None else _features(sentence, model)
    if subjects is None:
        subjects = ground_entities(sentence, model, "s2o", tau, feats, limit)
    pairs = []
    for s in subjects:
        v_s = entity_condition(feats.hs, s)
        for o in decode_field(tag_objects_given_subject(feats, v_s, model.s2o_object), tau, sentence.tokens, limit):
            pairs.append(CandidatePair(s, o, frozenset({"s2o"})))
    return pairs


@torch.no_grad()
def extract_pairs_o2s(sentence: Sentence, model: TripleExtractor, tau: float = 0.5,
                      feats: ProjectedFeatures | None = None, limit: int = 20,
                      objects: list[Span] | None = None) -> list[CandidatePair]:
    feats = feats if feats is not None else _features(sentence, model)
    if objects is None:
        objects = ground_entities(sentence, model, "o2s", tau, feats, limit)
    pairs = []
    for o in objects:
        v_o = entity_condition(feats.ho, o)
        for s in decode_field(tag_subjects_given_object(feats, v_o, model.o2s_subject), tau, sentence.tokens, limit):
            pairs.append(CandidatePair(s, o, frozenset({"o2s"})))
    return pairs


def merge_pairs(a: list[CandidatePair], b: list[CandidatePair]) -> list[CandidatePair]:
    """Union keyed by the two spans; provenance tags are unioned."""
    merged: dict[tuple, CandidatePair] = {}
    for p in list(a) + list(b):
        prev = merged.get(p.key)
        merged[p.key] = p if prev is None else CandidatePair(prev.subject, prev.object, prev.provenance | p.provenance)
    return sorted(merged.values(), key=lambda p: (p.subject.start, p.object.start, p.subject.end, p.object.end))


def two_step_pairs(entities: list[Span]) -> list[CandidatePair]:
    """All ordered pairs of decoded entities, self-pairs included."""
    unique = sorted(set(entities))
    return [CandidatePair(s, o, frozenset({"two_step"})) for s in unique for o in unique]


@torch.no_grad()
def run_extraction(sentence: Sentence, model: TripleExtractor, mode: ExtractionMode | str = "bidirectional",
                   tau: float = 0.5, limit: int = 20) -> Extraction:
    mode = ExtractionMode(mode)
    was_training = model.training
    model.eval()
    try:
        feats = _features(sentence, model)
        subjects = objects = []
        if mode is not ExtractionMode.O2S_ONLY:
            subjects = ground_entities(sentence, model, "s2o", tau, feats, limit)
        if mode is not ExtractionMode.S2O_ONLY:
            objects = ground_entities(sentence, model, "o2s", tau, feats, limit)
        if mode is ExtractionMode.TWO_STEP:
            pairs = two_step_pairs(subjects + objects)
        else:
            a = extract_pairs_s2o(sentence, model, tau, feats, limit, subjects) if subjects else []
            b = extract_pairs_o2s(sentence, model, tau, feats, limit, objects) if objects else []
            pairs = merge_pairs(a, b)
        triples: list[Triple] = []
        provenance: dict[Triple, frozenset] = {}
        if pairs:
            reps = [pair_representation(feats, p.subject, p.object) for p in pairs]
            batch = PairRepresentation(torch.stack([r.v_s for r in reps]), torch.stack([r.v_o for r in reps]))
            probs = model.relation(batch)
            for p, row in zip(pairs, probs):
                for rel in torch.nonzero(row > tau).flatten().tolist():
                    t = Triple(p.subject, rel, p.object)
                    if t not in provenance:
                        triples.append(t)
                        provenance[t] = p.provenance
        return Extraction(triples, pairs, provenance, subjects, objects)
    finally:
        model.train(was_training)


def extract_triples(sentence: Sentence, model: TripleExtractor, mode: ExtractionMode | str = "bidirectional",
                    tau: float = 0.5, limit: int = 20) -> list[Triple]:
    return run_extraction(sentence, model, mode, tau, limit).triples
