"""Micro P/R/F1 under partial and exact match, subset reports, diagnostics."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

from .corpus import BUCKETS, Sentence, Span, Triple, classify_overlap, triple_count_bucket
from .pipeline import ExtractionMode, ground_entities, run_extraction


class MatchMode(str, enum.Enum):
    PARTIAL = "partial"
    EXACT = "exact"


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    subsets: dict[str, "MetricsReport"] = field(default_factory=dict)
    diagnostics: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "MetricsReport":
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return cls(p, r, f, tp, fp, fn)

    def to_dict(self) -> dict:
        out = {"precision": self.precision, "recall": self.recall, "f1": self.f1,
               "tp": self.tp, "fp": self.fp, "fn": self.fn}
        if self.subsets:
            out["subsets"] = {k: v.to_dict() for k, v in self.subsets.items()}
        if self.diagnostics:
            out["diagnostics"] = dict(self.diagnostics)
        return out


def _key(t: Triple, mode: MatchMode) -> tuple:
    if mode is MatchMode.PARTIAL:
        return (t.relation, t.subject.head, t.object.head)
    return (t.relation, t.subject.start, t.subject.end, t.object.start, t.object.end)


def match(pred: Triple, gold: Triple, mode: MatchMode | str = MatchMode.EXACT) -> bool:
    """Partial match compares the relation and each entity's last token; exact compares full spans."""
    mode = MatchMode(mode)
    return _key(pred, mode) == _key(gold, mode)


def _counts(pred: Sequence[Triple], gold: Sequence[Triple], mode: MatchMode) -> tuple[int, int, int]:
    p = {_key(t, mode) for t in pred}
    g = {_key(t, mode) for t in gold}
    tp = len(p & g)
    return tp, len(p) - tp, len(g) - tp


def micro_prf(preds: Sequence[Sequence[Triple]], golds: Sequence[Sequence[Triple]],
              mode: MatchMode | str = MatchMode.EXACT) -> MetricsReport:
    """Counts pooled over sentences; duplicates collapse under the mode's notion of identity."""
    mode = MatchMode(mode)
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} prediction lists for {len(golds)} gold lists")
    tp = fp = fn = 0
    for p, g in zip(preds, golds):
        a, b, c = _counts(p, g, mode)
        tp, fp, fn = tp + a, fp + b, fn + c
    return MetricsReport.from_counts(tp, fp, fn)


def subset_names(sentence: Sentence) -> list[str]:
    c = classify_overlap(sentence)
    names = [n for n, flag in (("Normal", c.normal), ("EPO", c.epo), ("SEO", c.seo)) if flag]
    return names + [f"T={triple_count_bucket(sentence)}"]


SUBSET_ORDER = ("ALL", "Normal", "EPO", "SEO") + tuple(f"T={b}" for b in BUCKETS) + ("T=0",)


def subset_report(preds, golds, corpus: Sequence[Sentence], mode: MatchMode | str = MatchMode.EXACT) -> dict[str, MetricsReport]:
    """Metrics per overlap class and triple-count bucket, plus ``ALL``.

    Only subsets with at least one member sentence appear.
    """
    mode = MatchMode(mode)
    if not len(preds) == len(golds) == len(corpus):
        raise ValueError("predictions, gold triples and corpus must align")
    members: dict[str, list[int]] = {"ALL": list(range(len(corpus)))}
    for i, s in enumerate(corpus):
        for name in subset_names(s):
            members.setdefault(name, []).append(i)
    return {
        name: micro_prf([preds[i] for i in members[name]], [golds[i] for i in members[name]], mode)
        for name in SUBSET_ORDER if name in members
    }


def _entity_report(pred_sets: list[set[Span]], gold_sets: list[set[Span]]) -> MetricsReport:
    tp = fp = fn = 0
    for p, g in zip(pred_sets, gold_sets):
        hit = len(p & g)
        tp, fp, fn = tp + hit, fp + len(p) - hit, fn + len(g) - hit
    return MetricsReport.from_counts(tp, fp, fn)


def ground_entity_f1(model, corpus: Sequence[Sentence], direction: str = "s2o", tau: float = 0.5,
                     limit: int = 20) -> MetricsReport:
    """How well one direction's first tagger recovers its gold ground entities."""
    if direction not in ("s2o", "o2s"):
        raise ValueError(f"direction must be 's2o' or 'o2s', got {direction!r}")
    was_training = model.training
    model.eval()
    try:
        preds = [set(ground_entities(s, model, direction, tau, limit=limit)) for s in corpus]
    finally:
        model.train(was_training)
    role = "subject" if direction == "s2o" else "object"
    golds = [{getattr(t, role) for t in s.triples} for s in corpus]
    return _entity_report(preds, golds)


def attribute_failures(missed: Sequence[Triple], subjects: set[Span], objects: set[Span],
                       mode: ExtractionMode | str) -> int:
    """Number of missed triples whose ground entity was never decoded.

    Bidirectional: the subject is missing from the s2o subjects and the object
    from the o2s objects. Single directions use their own ground set. Two-step
    needs both entities in its pooled entity set.
    """
    mode = ExtractionMode(mode)
    n = 0
    for t in missed:
        if mode is ExtractionMode.BIDIRECTIONAL:
            n += t.subject not in subjects and t.object not in objects
        elif mode is ExtractionMode.S2O_ONLY:
            n += t.subject not in subjects
        elif mode is ExtractionMode.O2S_ONLY:
            n += t.object not in objects
        else:
            pool = subjects | objects
            n += t.subject not in pool or t.object not in pool
    return n


def _missed_and_failed(corpus, extractions, mode) -> tuple[int, int]:
    missed_total = failed = 0
    for s, ex in zip(corpus, extractions):
        predicted = {_key(t, MatchMode.EXACT) for t in ex.triples}
        missed = [t for t in s.triples if _key(t, MatchMode.EXACT) not in predicted]
        missed_total += len(missed)
        failed += attribute_failures(missed, set(ex.subjects), set(ex.objects), mode)
    return missed_total, failed


def failure_proportion(model, corpus: Sequence[Sentence], mode: ExtractionMode | str = "bidirectional",
                       tau: float = 0.5, limit: int = 20) -> float:
    """Share of missed gold triples (exact match) attributable to ground-entity failure."""
    missed_total, failed = _missed_and_failed(corpus, [run_extraction(s, model, mode, tau, limit) for s in corpus], mode)
    return failed / missed_total if missed_total else 0.0


def predict_corpus(model, corpus: Sequence[Sentence], mode="bidirectional", tau=0.5, limit=20) -> list[list[Triple]]:
    return [run_extraction(s, model, mode, tau, limit).triples for s in corpus]


def evaluate_model(model, corpus: Sequence[Sentence], mode="bidirectional", tau=0.5,
                   match_mode: MatchMode | str = MatchMode.EXACT, limit=20, diagnostics=True) -> MetricsReport:
    """Full report: headline metrics, subsets, and ground-entity diagnostics."""
    match_mode = MatchMode(match_mode)
    extractions = [run_extraction(s, model, mode, tau, limit) for s in corpus]
    preds = [e.triples for e in extractions]
    golds = [list(s.triples) for s in corpus]
    subsets = subset_report(preds, golds, corpus, match_mode)
    report = subsets.pop("ALL")
    report.subsets = subsets
    if diagnostics:
        missed_total, failed = _missed_and_failed(corpus, extractions, mode)
        report.diagnostics["failure_proportion"] = failed / missed_total if missed_total else 0.0
        report.diagnostics["missed_triples"] = missed_total
        for direction in ("s2o", "o2s"):
            report.diagnostics[f"ground_entity_f1_{direction}"] = ground_entity_f1(
                model, corpus, direction, tau, limit).f1
    return report


def format_report(report: MetricsReport, title: str = "") -> str:
    rows = [("ALL", report)] + list(report.subsets.items())
    lines = [title] if title else []
    lines.append(f"{'Subset':<10}{'Prec.':>8}{'Rec.':>8}{'F1':>8}{'TP':>7}{'FP':>7}{'FN':>7}")
    for name, r in rows:
        lines.append(f"{name:<10}{100 * r.precision:>8.1f}{100 * r.recall:>8.1f}{100 * r.f1:>8.1f}"
                     f"{r.tp:>7}{r.fp:>7}{r.fn:>7}")
    for k, v in report.diagnostics.items():
        lines.append(f"{k}: {v:.4f}" if isinstance(v, float) else f"{k}: {v}")
    return "\n".join(lines)
