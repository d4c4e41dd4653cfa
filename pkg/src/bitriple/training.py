"""Multi-task training with teacher forcing and share-aware learning rates.

Five tasks train jointly on every mini-batch:

====  ========================================  ============
task  module                                    input
====  ========================================  ============
S1    subject tagger (s2o)                      raw sentence
O1    subject-conditioned object tagger (s2o)   gold subject
O2    object tagger (o2s)                       raw sentence
S2    object-conditioned subject tagger (o2s)   gold object
R     relation head                             gold pair
====  ========================================  ============

Conditioned tasks also see random negative conditions with all-zero targets.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import torch

from .config import RunConfig
from .corpus import RelationSchema, Sentence, Span
from .evaluation import micro_prf, predict_corpus
from .encoder import PretrainedEncoder, TinyEncoder, build_vocab
from .model import HEADS, TripleExtractor, build_model, clone_state
from .pipeline import ground_entities
from .relation import pair_representation
from .taggers import (
    BioField,
    TagField,
    entity_condition,
    tag_objects,
    tag_objects_given_subject,
    tag_subjects,
    tag_subjects_given_object,
)

logger = logging.getLogger(__name__)

EPS = 1e-7
TASKS = ("S1", "O1", "O2", "S2", "R")
MODE_TASKS = {
    "bidirectional": TASKS,
    "s2o_only": ("S1", "O1", "R"),
    "o2s_only": ("O2", "S2", "R"),
    "two_step": ("S1", "O2", "R"),
}
FORMAT_VERSION = 1


class TrainingAborted(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


# losses


def ce(p, t):
    """Binary cross entropy of probability ``p`` against target ``t``; ``p`` is clamped to [EPS, 1-EPS]."""
    if torch.is_tensor(p):
        p = p.clamp(EPS, 1 - EPS)
        return -(t * torch.log(p) + (1 - t) * torch.log(1 - p))
    p = min(max(p, EPS), 1 - EPS)
    return -(t * math.log(p) + (1 - t) * math.log(1 - p))


def tagger_loss(field_: TagField | BioField, targets: torch.Tensor) -> torch.Tensor:
    """Mean cross entropy per token and tag kind.

    For a :class:`TagField`, ``targets`` is ``(2, l)`` (start row, end row) and
    the mean runs over all ``2l`` terms. For a :class:`BioField` it is a length
    ``l`` vector of label indices.
    """
    if isinstance(field_, BioField):
        if targets.shape != field_.probs.shape[:-1]:
            raise ValueError(f"BIO targets {tuple(targets.shape)} vs field {tuple(field_.probs.shape)}")
        picked = field_.probs.gather(-1, targets.long().unsqueeze(-1)).squeeze(-1)
        return -torch.log(picked.clamp(EPS, 1.0)).mean()
    probs = torch.stack([field_.start_probs, field_.end_probs])
    if targets.shape != probs.shape:
        raise ValueError(f"targets {tuple(targets.shape)} vs field {tuple(probs.shape)}")
    return ce(probs, targets).mean()


def relation_loss(p_r: torch.Tensor, t_r: torch.Tensor) -> torch.Tensor:
    if p_r.shape != t_r.shape:
        raise ValueError(f"relation probabilities {tuple(p_r.shape)} vs targets {tuple(t_r.shape)}")
    return ce(p_r, t_r).mean()


def total_loss(l_s1, l_o1, l_s2, l_o2, l_r):
    return l_s1 + l_o1 + l_s2 + l_o2 + l_r


# teacher-forced samples


@dataclass
class TaskBatch:
    task: str
    sentence_index: int
    targets: torch.Tensor
    condition: Span | tuple[Span, Span] | None = None
    positive: bool = True


def span_targets(length: int, spans: Sequence[Span], scheme: str = "zero_one") -> torch.Tensor:
    if scheme == "bio":
        t = torch.zeros(length, dtype=torch.long)
        for s in sorted(spans):
            t[s.start] = 1
            t[s.start + 1 : s.end + 1] = 2
        return t
    t = torch.zeros(2, length)
    for s in spans:
        t[0, s.start] = 1.0
        t[1, s.end] = 1.0
    return t


def _random_span(rng: random.Random, length: int, max_width: int) -> Span:
    start = rng.randrange(length)
    width = rng.randint(1, max(1, min(max_width, length - start)))
    return Span(start, start + width - 1)


def _sample_spans(rng, length, k, exclude, max_width, preferred=()):
    """Up to ``k`` distinct spans not in ``exclude``, taking ``preferred`` ones first."""
    out = []
    pool = [s for s in dict.fromkeys(preferred) if s not in exclude]
    rng.shuffle(pool)
    out.extend(pool[:k])
    tries = 0
    while len(out) < k and tries < 50 * (k + 1):
        tries += 1
        s = _random_span(rng, length, max_width)
        if s not in exclude and s not in out:
            out.append(s)
    return out


def build_task_batches(sentence: Sentence, negative_ratio: float, rng: random.Random, n_relations: int,
                       tasks: Sequence[str] = TASKS, scheme: str = "zero_one", sentence_index: int = 0,
                       predicted_subjects: Sequence[Span] = (), predicted_objects: Sequence[Span] = ()) -> list[TaskBatch]:
    """Training samples of one sentence for each active task.

    Conditioned tasks get one positive per gold condition plus
    ``ceil(negative_ratio * positives)`` negatives with all-zero targets.
    Relation negatives are split between mispaired gold entities and random
    span pairs. ``predicted_*`` spans, when given, are preferred as negative
    conditions over random ones.
    """
    n = len(sentence.tokens)
    subjects = list(dict.fromkeys(t.subject for t in sentence.triples))
    objects = list(dict.fromkeys(t.object for t in sentence.triples))
    width = max([s.end - s.start + 1 for s in subjects + objects] + [3])
    zero_field = span_targets(n, [], scheme)
    out: list[TaskBatch] = []
    if "S1" in tasks:
        out.append(TaskBatch("S1", sentence_index, span_targets(n, subjects, scheme)))
    if "O2" in tasks:
        out.append(TaskBatch("O2", sentence_index, span_targets(n, objects, scheme)))
    for task, conds, role_of, other, predicted in (
        ("O1", subjects, "subject", "object", predicted_subjects),
        ("S2", objects, "object", "subject", predicted_objects),
    ):
        if task not in tasks or not conds:
            continue
        for c in conds:
            linked = [getattr(t, other) for t in sentence.triples if getattr(t, role_of) == c]
            out.append(TaskBatch(task, sentence_index, span_targets(n, linked, scheme), c, True))
        k = math.ceil(negative_ratio * len(conds))
        for c in _sample_spans(rng, n, k, set(conds), width, predicted):
            out.append(TaskBatch(task, sentence_index, zero_field.clone(), c, False))
    if "R" in tasks and sentence.triples:
        gold: dict[tuple[Span, Span], torch.Tensor] = {}
        for t in sentence.triples:
            gold.setdefault((t.subject, t.object), torch.zeros(n_relations))[t.relation] = 1.0
        for pair, target in gold.items():
            out.append(TaskBatch("R", sentence_index, target, pair, True))
        k = math.ceil(negative_ratio * len(gold))
        entities = list(dict.fromkeys(subjects + objects))
        mispairs = [(a, b) for a in entities for b in entities if (a, b) not in gold]
        rng.shuffle(mispairs)
        negatives = mispairs[: math.ceil(k / 2)]
        tries = 0
        while len(negatives) < k and tries < 50 * (k + 1):
            tries += 1
            pair = (_random_span(rng, n, width), _random_span(rng, n, width))
            if pair not in gold and pair not in negatives:
                negatives.append(pair)
        for pair in negatives:
            out.append(TaskBatch("R", sentence_index, torch.zeros(n_relations), pair, False))
    return out


def compute_losses(model: TripleExtractor, sentences: Sequence[Sentence], batches: Sequence[TaskBatch],
                   tasks: Sequence[str] = TASKS) -> dict[str, torch.Tensor]:
    """Mean loss per active task over one mini-batch; tasks without samples contribute zero."""
    feats = model.features([s.tokens for s in sentences])
    per_sentence = [feats.select(i) for i in range(len(sentences))]
    dtype = feats.hs.dtype
    parts: dict[str, list[torch.Tensor]] = {t: [] for t in tasks}
    for b in batches:
        f = per_sentence[b.sentence_index]
        target = b.targets.to(dtype) if b.targets.is_floating_point() else b.targets
        if b.task == "S1":
            out = tag_subjects(f, model.s2o_subject)
        elif b.task == "O2":
            out = tag_objects(f, model.o2s_object)
        elif b.task == "O1":
            out = tag_objects_given_subject(f, entity_condition(f.hs, b.condition), model.s2o_object)
        elif b.task == "S2":
            out = tag_subjects_given_object(f, entity_condition(f.ho, b.condition), model.o2s_subject)
        elif b.task == "R":
            s, o = b.condition
            parts["R"].append(relation_loss(model.relation(pair_representation(f, s, o)), target))
            continue
        else:
            raise ValueError(f"unknown task {b.task!r}")
        parts[b.task].append(tagger_loss(out, target))
    zero = feats.hs.sum() * 0
    return {t: torch.stack(v).mean() if v else zero for t, v in parts.items()}


# share-aware learning rates


@dataclass
class ShareGraph:
    counts: dict[str, int]

    def __post_init__(self):
        bad = {m: k for m, k in self.counts.items() if k < 1}
        if bad:
            raise ValueError(f"share counts must be >= 1: {bad}")

    @classmethod
    def for_tasks(cls, tasks: Sequence[str] = TASKS) -> "ShareGraph":
        """Encoder and projections are shared by every active task; each head by its own."""
        return cls({"encoder": len(tasks), **{m: 1 for m in HEADS}})


@dataclass
class LrPolicy:
    base_lr: float = 1.5e-4
    delta: float = 0.0
    mapping: str = "identity"
    epochs: int = 100

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if not 0 <= self.delta <= 1:
            raise ValueError("delta must lie in [0, 1]")
        if self.mapping not in ("identity", "uniform", "truncated"):
            raise ValueError(f"unknown mapping {self.mapping!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def _exact(x: float) -> Fraction:
    # decimal reading of the configured value, so 1.5e-4 / 5 lands on 3e-5
    return Fraction(repr(float(x)))


def mapping_value(k: int, policy: LrPolicy, epoch: int) -> Fraction:
    if policy.mapping == "identity":
        return Fraction(k)
    if policy.epochs == 1:
        logger.info("single-epoch schedule: %s mapping degenerates to f(k)=1", policy.mapping)
        return Fraction(1)
    ramp = 1 + Fraction(2 * (epoch - 1) * k, policy.epochs - 1)
    return ramp if policy.mapping == "uniform" else min(Fraction(k), ramp)


def assign_learning_rates(graph: ShareGraph, policy: LrPolicy, epoch: int) -> dict[str, float]:
    """Learning rate per module: the base rate for unshared modules, ``(1+delta)/f(k)`` of it otherwise."""
    if not 1 <= epoch <= policy.epochs:
        raise ValueError(f"epoch {epoch} outside [1, {policy.epochs}]")
    xi = _exact(policy.base_lr)
    rates = {}
    for module, k in graph.counts.items():
        if k == 1:
            rates[module] = float(xi)
        else:
            rates[module] = float((1 + _exact(policy.delta)) / mapping_value(k, policy, epoch) * xi)
    return rates


# training loop


@dataclass
class TrainResult:
    model: TripleExtractor
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_f1: float = 0.0


def seed_everything(seed: int) -> random.Random:
    torch.manual_seed(seed)
    return random.Random(seed)


def _predicted_entities(model, sentences, tau, limit):
    model.eval()
    try:
        subs = [ground_entities(s, model, "s2o", tau, limit=limit) for s in sentences]
        objs = [ground_entities(s, model, "o2s", tau, limit=limit) for s in sentences]
    finally:
        model.train()
    return subs, objs


def _dev_f1(model, dev, config) -> float:
    preds = predict_corpus(model, dev, config.mode, config.threshold, config.max_entities)
    return micro_prf(preds, [list(s.triples) for s in dev], config.match).f1


def learning_rates_for(config: RunConfig, epoch: int) -> dict[str, float]:
    tasks = MODE_TASKS[config.mode]
    graph = ShareGraph.for_tasks(tasks)
    if config.one_lr:
        return {m: config.base_lr for m in graph.counts}
    policy = LrPolicy(config.base_lr, config.delta, config.mapping, max(config.epochs, 1))
    return assign_learning_rates(graph, policy, epoch)


def train(corpus: Sequence[Sentence], config: RunConfig, schema: RelationSchema,
          dev: Sequence[Sentence] | None = None, model: TripleExtractor | None = None,
          out_dir: str | Path | None = None) -> TrainResult:
    """Train on ``corpus``; the returned model holds the best dev-F1 weights.

    Without a dev set, the training corpus is used for model selection; equal
    dev F1 is broken by lower training loss. Early stopping triggers after
    ``config.patience`` epochs without improvement (0 disables it).
    """
    config.validate()
    rng = seed_everything(config.seed)
    if model is None:
        vocab = build_vocab(s.tokens for s in corpus) if config.encoder == "tiny-trainable" else None
        model = build_model(config, len(schema), vocab)
    tasks = MODE_TASKS[config.mode]
    result = TrainResult(model)
    if config.epochs == 0:
        return result
    dev = list(dev) if dev else list(corpus)
    groups = model.module_groups()
    rates = learning_rates_for(config, 1)
    optimizer = torch.optim.AdamW(
        [{"params": groups[m], "lr": rates[m], "name": m} for m in groups if groups[m]],
        lr=config.base_lr, weight_decay=config.weight_decay,
    )
    best_state = clone_state(model)
    best_loss = math.inf
    stale = 0
    order = list(range(len(corpus)))
    for epoch in range(1, config.epochs + 1):
        rates = learning_rates_for(config, epoch)
        for g in optimizer.param_groups:
            g["lr"] = rates[g["name"]]
        model.train()
        rng.shuffle(order)
        sums = {t: 0.0 for t in tasks}
        total = 0.0
        steps = 0
        for lo in range(0, len(order), config.batch_size):
            sentences = [corpus[i] for i in order[lo : lo + config.batch_size]]
            if config.negative_source == "model":
                subs, objs = _predicted_entities(model, sentences, config.threshold, config.max_entities)
            else:
                subs = objs = [()] * len(sentences)
            batches = []
            for j, s in enumerate(sentences):
                batches += build_task_batches(s, config.negative_ratio, rng, len(schema), tasks, config.scheme,
                                              j, subs[j], objs[j])
            losses = compute_losses(model, sentences, batches, tasks)
            loss = sum(losses[t] for t in tasks)
            if not torch.isfinite(loss):
                state = {"epoch": epoch, "step": steps, "losses": {t: v.item() for t, v in losses.items()},
                         "sentences": [s.id for s in sentences], "config": config.to_dict()}
                if out_dir is not None:
                    Path(out_dir).mkdir(parents=True, exist_ok=True)
                    (Path(out_dir) / "abort_state.json").write_text(json.dumps(state, indent=2))
                raise TrainingAborted(f"non-finite loss at epoch {epoch}, step {steps}: {state['losses']}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            for t in tasks:
                sums[t] += losses[t].item()
            total += loss.item()
            steps += 1
        f1 = _dev_f1(model, dev, config)
        entry = {"epoch": epoch, "loss": total / max(steps, 1),
                 "components": {t: v / max(steps, 1) for t, v in sums.items()},
                 "dev_f1": f1, "lr": rates}
        result.log.append(entry)
        logger.info("epoch %d loss %.5f dev F1 %.4f", epoch, entry["loss"], f1)
        # ties on dev F1 go to the lower training loss
        if f1 > result.best_f1 or result.best_epoch == 0 or (f1 == result.best_f1 and entry["loss"] < best_loss):
            result.best_f1, result.best_epoch, best_loss = f1, epoch, entry["loss"]
            best_state = clone_state(model)
            stale = 0
        else:
            stale += 1
            if config.patience and stale >= config.patience:
                logger.info("early stop after epoch %d (best %d)", epoch, result.best_epoch)
                break
    model.load_state_dict(best_state)
    model.eval()
    return result


# checkpoints


def save_checkpoint(path, model: TripleExtractor, schema: RelationSchema, config: RunConfig, extra: Mapping | None = None):
    backend = model.backend
    kind = "tiny-trainable" if isinstance(backend, TinyEncoder) else "pretrained-transformer"
    torch.save({
        "format_version": FORMAT_VERSION,
        "schema": list(schema.names),
        "config": config.to_dict(),
        "backend": {"kind": kind, **backend.extra_state()},
        "state_dict": model.state_dict(),
        "extra": dict(extra or {}),
    }, path)


def load_checkpoint(path) -> tuple[TripleExtractor, RelationSchema, RunConfig, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    version = blob.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: checkpoint format {version} is not supported (expected {FORMAT_VERSION})")
    config = RunConfig.from_dict(blob["config"])
    schema = RelationSchema(tuple(blob["schema"]))
    info = blob["backend"]
    if info["kind"] == "tiny-trainable":
        backend = TinyEncoder(info["vocab"], dim=info["dim"], layers=info["layers"],
                              heads=info["heads"], max_len=info["max_len"])
    else:
        backend = PretrainedEncoder(info["name_or_path"]).load()
    model = TripleExtractor(backend, len(schema), config.scheme, config.relation_head)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, schema, config, blob.get("extra", {})
