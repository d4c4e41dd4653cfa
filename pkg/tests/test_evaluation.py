import random

import pytest
import torch
from hypothesis import given, settings, strategies as st

from bitriple.corpus import Sentence, Span, Triple
from bitriple.evaluation import (
    MatchMode,
    MetricsReport,
    attribute_failures,
    evaluate_model,
    format_report,
    match,
    micro_prf,
    subset_report,
)

from .conftest import lookup_model, random_sentence


def T(s, r, o):
    return Triple(Span(*s), r, Span(*o))


def prf_oracle(preds, golds, mode):
    """Plain loops: distinct predicted keys vs distinct gold keys per sentence."""
    tp = fp = fn = 0
    for pred, gold in zip(preds, golds):
        def key(t):
            if mode == "partial":
                return (t.relation, t.subject.end, t.object.end)
            return (t.relation, t.subject.start, t.subject.end, t.object.start, t.object.end)
        pk, gk = [], []
        for t in pred:
            if key(t) not in pk:
                pk.append(key(t))
        for t in gold:
            if key(t) not in gk:
                gk.append(key(t))
        hit = sum(1 for k in pk if k in gk)
        tp += hit
        fp += len(pk) - hit
        fn += len(gk) - hit
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return p, r, (2 * p * r / (p + r) if p + r else 0.0), tp, fp, fn


def test_half_right_example():
    gold = [[T((0, 0), 0, (2, 2)), T((0, 0), 1, (3, 3))]]
    pred = [[T((0, 0), 0, (2, 2)), T((1, 1), 0, (3, 3))]]
    r = micro_prf(pred, gold)
    assert (r.precision, r.recall, r.f1) == (0.5, 0.5, 0.5)


def test_partial_vs_exact():
    g = T((0, 1), 0, (3, 4))
    p = T((1, 1), 0, (4, 4))
    assert match(p, g, "partial") and not match(p, g, "exact")
    assert micro_prf([[p]], [[g]], MatchMode.PARTIAL).f1 == 1.0
    assert micro_prf([[p]], [[g]], MatchMode.EXACT).f1 == 0.0


def test_empty_and_mismatch():
    r = micro_prf([[], []], [[], []])
    assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        micro_prf([[]], [[], []])


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["partial", "exact"]))
def test_matches_oracle(seed, mode):
    rng = random.Random(seed)
    golds = [list(random_sentence(rng).triples) for _ in range(4)]
    preds = [list(random_sentence(rng).triples) + rng.sample(g, rng.randint(0, len(g))) for g in golds]
    r = micro_prf(preds, golds, mode)
    assert (r.precision, r.recall, r.f1, r.tp, r.fp, r.fn) == pytest.approx(prf_oracle(preds, golds, mode), abs=1e-12)
    assert r.f1 <= max(r.precision, r.recall) + 1e-12
    assert r.f1 >= min(r.precision, r.recall) - 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6))
def test_monotone(seed):
    rng = random.Random(seed)
    golds = [list(random_sentence(rng, n_triples=3).triples)]
    preds = [rng.sample(golds[0], rng.randint(0, len(golds[0])))]
    base = micro_prf(preds, golds)
    missing = [t for t in golds[0] if t not in preds[0]]
    if missing:
        assert micro_prf([preds[0] + missing[:1]], golds).recall >= base.recall
    wrong = Triple(Span(0, 0), 99, Span(0, 0))
    assert micro_prf([preds[0] + [wrong]], golds).precision <= base.precision


def test_subset_all_equals_micro(toy_corpus):
    sents, _ = toy_corpus
    rng = random.Random(0)
    golds = [list(s.triples) for s in sents]
    preds = [rng.sample(g, rng.randint(0, len(g))) for g in golds]
    subs = subset_report(preds, golds, sents)
    assert subs["ALL"] == micro_prf(preds, golds)
    assert {"Normal", "EPO", "SEO"} <= set(subs)
    assert subs["Normal"].tp + subs["EPO"].tp >= 0


def test_attribution():
    missed = [T((0, 0), 0, (2, 2)), T((0, 0), 1, (4, 4))]
    subjects, objects = {Span(0, 0)}, {Span(2, 2)}
    assert attribute_failures(missed, set(), set(), "bidirectional") == 2
    assert attribute_failures(missed, subjects, set(), "bidirectional") == 0
    assert attribute_failures(missed, set(), objects, "bidirectional") == 1
    assert attribute_failures(missed, set(), objects, "o2s_only") == 1
    assert attribute_failures(missed, subjects, set(), "s2o_only") == 0
    assert attribute_failures(missed, subjects, objects, "two_step") == 1


def test_zero_weight_model_finds_nothing(toy_corpus):
    sents, schema = toy_corpus
    vocab = tuple(sorted({t for s in sents for t in s.tokens}))
    model = lookup_model(n_relations=len(schema), vocab=vocab)
    with torch.no_grad():
        for p in model.parameters():
            if p.requires_grad:
                p.zero_()
    report = evaluate_model(model, sents)
    assert (report.precision, report.recall, report.f1, report.tp) == (0.0, 0.0, 0.0, 0)
    assert report.diagnostics["failure_proportion"] == 1.0
    assert report.diagnostics["ground_entity_f1_s2o"] == 0.0
    text = format_report(report, "zero")
    assert text.splitlines()[0] == "zero" and "failure_proportion: 1.0000" in text


def test_report_dict():
    r = MetricsReport.from_counts(3, 1, 2)
    assert r.to_dict() == {"precision": 0.75, "recall": 0.6, "f1": pytest.approx(2 * 0.75 * 0.6 / 1.35),
                           "tp": 3, "fp": 1, "fn": 2}
