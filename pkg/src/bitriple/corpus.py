"""Triple-annotated corpora: loading, validation, overlap analysis.

Records follow the public preprocessed NYT/WebNLG releases::

    {"text": "...", "triple_list": [[subject, relation, object], ...]}

either one JSON object per line or a single JSON array. Saved corpora add an
optional ``"spans"`` field (``[[s_start, s_end, o_start, o_end], ...]``) so
that entity positions survive a round trip.
"""

from __future__ import annotations

import json
import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

ANNOTATIONS = ("last_token", "whole_span")
BUCKETS = ("1", "2", "3", "4", "5+")
OVERLAP_CLASSES = ("Normal", "EPO", "SEO")


class CorpusLoadError(ValueError):
    """A record could not be parsed."""


class CorpusValidationError(ValueError):
    """A record parsed but violates a span/triple invariant."""


@dataclass(frozen=True, order=True)
class Span:
    """Inclusive token range. Equality ignores ``surface``."""

    start: int
    end: int
    surface: str = field(default="", compare=False)

    def __post_init__(self):
        if self.start < 0 or self.end < self.start:
            raise ValueError(f"invalid span ({self.start}, {self.end})")

    @property
    def head(self) -> int:
        return self.end

    def check(self, length: int) -> None:
        if self.end >= length:
            raise ValueError(f"span ({self.start}, {self.end}) exceeds length {length}")


@dataclass(frozen=True)
class Triple:
    subject: Span
    relation: int
    object: Span


@dataclass(frozen=True)
class RelationSchema:
    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        dupes = [n for n, c in Counter(self.names).items() if c > 1]
        if dupes:
            raise ValueError(f"duplicate relation names: {dupes}")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def fingerprint(self) -> str:
        import hashlib

        return hashlib.sha256("\n".join(self.names).encode("utf-8")).hexdigest()[:16]

    @classmethod
    def load(cls, path) -> "RelationSchema":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(line.strip() for line in lines if line.strip()))

    def save(self, path) -> None:
        Path(path).write_text("".join(n + "\n" for n in self.names), encoding="utf-8")


@dataclass(frozen=True)
class Sentence:
    id: str
    text: str
    tokens: tuple[str, ...]
    triples: tuple[Triple, ...] = ()
    # mentions whose text occurs more than once; the first occurrence was used
    ambiguous: int = 0

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "triples", tuple(self.triples))
        if not self.tokens:
            raise ValueError(f"sentence {self.id!r} has no tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def span(self, start: int, end: int) -> Span:
        return Span(start, end, " ".join(self.tokens[start : end + 1]))

    def validate(self, n_relations: int | None = None) -> None:
        for t in self.triples:
            for s in (t.subject, t.object):
                try:
                    s.check(len(self.tokens))
                except ValueError as exc:
                    raise CorpusValidationError(f"sentence {self.id!r}: {exc}") from None
                cover = " ".join(self.tokens[s.start : s.end + 1])
                if s.surface and s.surface != cover:
                    raise CorpusValidationError(
                        f"sentence {self.id!r}: span text {s.surface!r} != token cover {cover!r}"
                    )
            if n_relations is not None and not 0 <= t.relation < n_relations:
                raise CorpusValidationError(f"sentence {self.id!r}: relation id {t.relation} out of range")


@dataclass(frozen=True)
class OverlapClass:
    normal: bool
    epo: bool
    seo: bool


def _find(tokens: Sequence[str], needle: Sequence[str]) -> list[int]:
    n = len(needle)
    return [i for i in range(len(tokens) - n + 1) if tuple(tokens[i : i + n]) == tuple(needle)]


def _read_records(path: Path) -> list[tuple[str, object]]:
    raw = path.read_text(encoding="utf-8")
    stripped = raw.lstrip()
    if not stripped:
        return []
    if stripped.startswith("["):
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise CorpusLoadError(f"{path}: malformed JSON array ({exc})") from None
        return [(f"record {i}", rec) for i, rec in enumerate(data)]
    records = []
    for lineno, line in enumerate(raw.splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append((f"line {lineno}", json.loads(line)))
        except json.JSONDecodeError as exc:
            raise CorpusLoadError(f"{path}: line {lineno}: {exc}") from None
    return records


def load_corpus(
    path,
    schema: RelationSchema | None = None,
    annotation: str = "whole_span",
    max_len: int = 100,
) -> tuple[list[Sentence], RelationSchema]:
    """Load and validate a corpus file.

    With ``schema`` given, every relation in the file must already be in it;
    otherwise the schema is built from relations in order of first appearance.
    Sentences whose entities cannot be located in the tokens are dropped with a
    warning; sentences longer than ``max_len`` tokens are truncated.
    """
    if annotation not in ANNOTATIONS:
        raise ValueError(f"annotation must be one of {ANNOTATIONS}, got {annotation!r}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    names = list(schema.names) if schema is not None else []
    lookup = {n: i for i, n in enumerate(names)}
    sentences = []
    dropped = 0
    for where, rec in _read_records(path):
        if not isinstance(rec, dict) or not isinstance(rec.get("text"), str):
            raise CorpusLoadError(f"{path}: {where}: expected an object with a 'text' string")
        triples_raw = rec.get("triple_list", [])
        if not isinstance(triples_raw, list) or not all(
            isinstance(t, (list, tuple)) and len(t) == 3 and all(isinstance(x, str) for x in t)
            for t in triples_raw
        ):
            raise CorpusLoadError(f"{path}: {where}: 'triple_list' must be a list of [subject, relation, object]")
        sid = str(rec.get("id", f"{path.stem}-{len(sentences) + dropped}"))
        tokens = rec["text"].split()
        if not tokens:
            raise CorpusLoadError(f"{path}: {where}: empty text")
        for _, rel, _ in triples_raw:
            if rel not in lookup:
                if schema is not None:
                    raise CorpusValidationError(
                        f"{path}: {where}: relation {rel!r} missing from the provided schema"
                    )
                lookup[rel] = len(names)
                names.append(rel)
        spans_raw = rec.get("spans")
        if spans_raw is not None:
            sent = _sentence_from_spans(sid, rec["text"], tokens, triples_raw, spans_raw, lookup, where, path)
        else:
            sent = _sentence_from_text(sid, rec["text"], tokens, triples_raw, lookup, annotation)
            if sent is None:
                dropped += 1
                continue
        if len(sent.tokens) > max_len:
            sent = _truncate(sent, max_len)
        sentences.append(sent)
    if dropped:
        logger.warning("%s: dropped %d sentence(s) with unalignable entities", path, dropped)
    ambiguous = sum(s.ambiguous for s in sentences)
    if ambiguous:
        logger.info("%s: %d mention(s) resolved to their first occurrence", path, ambiguous)
    out_schema = schema if schema is not None else RelationSchema(tuple(names))
    for s in sentences:
        s.validate(len(out_schema))
    return sentences, out_schema


def _sentence_from_text(sid, text, tokens, triples_raw, lookup, annotation):
    triples = []
    ambiguous = 0
    for subj, rel, obj in triples_raw:
        spans = []
        for entity in (subj, obj):
            hits = _find(tokens, entity.split())
            if not hits:
                logger.warning("sentence %r: entity %r not found in tokens; dropping sentence", sid, entity)
                return None
            ambiguous += len(hits) > 1
            start = hits[0]
            end = start + len(entity.split()) - 1
            if annotation == "last_token":
                start = end
            spans.append(Span(start, end, " ".join(tokens[start : end + 1])))
        triples.append(Triple(spans[0], lookup[rel], spans[1]))
    return Sentence(sid, text, tokens, triples, ambiguous)


def _sentence_from_spans(sid, text, tokens, triples_raw, spans_raw, lookup, where, path):
    if not isinstance(spans_raw, list) or len(spans_raw) != len(triples_raw):
        raise CorpusLoadError(f"{path}: {where}: 'spans' must align with 'triple_list'")
    triples = []
    for (subj, rel, obj), pos in zip(triples_raw, spans_raw):
        try:
            ss, se, os_, oe = (int(x) for x in pos)
            s, o = Span(ss, se, subj), Span(os_, oe, obj)
        except (TypeError, ValueError) as exc:
            raise CorpusLoadError(f"{path}: {where}: bad span entry {pos!r} ({exc})") from None
        triples.append(Triple(s, lookup[rel], o))
    sent = Sentence(sid, text, tokens, triples)
    sent.validate()
    return sent


def _truncate(sent: Sentence, max_len: int) -> Sentence:
    kept = tuple(t for t in sent.triples if t.subject.end < max_len and t.object.end < max_len)
    logger.warning(
        "sentence %r: truncated from %d to %d tokens (%d triple(s) lost)",
        sent.id, len(sent.tokens), max_len, len(sent.triples) - len(kept),
    )
    tokens = sent.tokens[:max_len]
    return Sentence(sent.id, " ".join(tokens), tokens, kept, sent.ambiguous)


def save_corpus(sentences: Iterable[Sentence], schema: RelationSchema, path) -> None:
    """Write newline-delimited records that ``load_corpus`` reads back unchanged."""
    with open(path, "w", encoding="utf-8") as f:
        for s in sentences:
            rec = {
                "id": s.id,
                "text": " ".join(s.tokens),
                "triple_list": [
                    [s.span(t.subject.start, t.subject.end).surface, schema.names[t.relation],
                     s.span(t.object.start, t.object.end).surface]
                    for t in s.triples
                ],
                "spans": [[t.subject.start, t.subject.end, t.object.start, t.object.end] for t in s.triples],
            }
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")


def _entity_key(sent: Sentence, span: Span) -> str:
    return " ".join(sent.tokens[span.start : span.end + 1])


def classify_overlap(s: Sentence) -> OverlapClass:
    """Overlap pattern of a sentence; entities are compared by their text."""
    pairs = [
        frozenset((_entity_key(s, t.subject), _entity_key(s, t.object))) for t in s.triples
    ]
    epo = any(c >= 2 for c in Counter(pairs).values())
    pairs_of_entity: dict[str, set] = {}
    for p in pairs:
        for e in p:
            pairs_of_entity.setdefault(e, set()).add(p)
    seo = any(len(ps) >= 2 for ps in pairs_of_entity.values())
    return OverlapClass(normal=not (epo or seo), epo=epo, seo=seo)


def triple_count_bucket(s: Sentence) -> str:
    n = len(s.triples)
    if n == 0:
        return "0"
    return "5+" if n >= 5 else str(n)


def corpus_statistics(splits: Mapping[str, Sequence[Sentence]]) -> dict[str, dict[str, int]]:
    """Per-split Normal/EPO/SEO/ALL counts; a sentence may count as both EPO and SEO.

    Also reports the triple-count buckets under ``"T=<bucket>"`` keys.
    """
    table = {}
    for name, sentences in splits.items():
        row = {k: 0 for k in OVERLAP_CLASSES}
        row["ALL"] = len(sentences)
        for b in ("0",) + BUCKETS:
            row[f"T={b}"] = 0
        row["triples"] = 0
        for s in sentences:
            c = classify_overlap(s)
            row["Normal"] += c.normal
            row["EPO"] += c.epo
            row["SEO"] += c.seo
            row[f"T={triple_count_bucket(s)}"] += 1
            row["triples"] += len(s.triples)
        table[name] = row
    return table


def format_statistics(table: Mapping[str, Mapping[str, int]]) -> str:
    columns = list(table)
    rows = list(OVERLAP_CLASSES) + ["ALL"] + [f"T={b}" for b in ("0",) + BUCKETS] + ["triples"]
    width = max([8] + [len(c) for c in columns]) + 2
    lines = ["Category".ljust(10) + "".join(c.rjust(width) for c in columns)]
    for r in rows:
        lines.append(r.ljust(10) + "".join(str(table[c].get(r, 0)).rjust(width) for c in columns))
    return "\n".join(lines)


# synthetic data for overfit and integration runs

_NAMES = [
    "ada", "bo", "cy", "dee", "eli", "fay", "gus", "hal", "ivy", "jo", "kai", "lu",
    "max", "ned", "oz", "pia", "quin", "rex", "sal", "tom", "uma", "vic", "wes", "xia",
]
_SURNAMES = ["stone", "brook", "hill", "wood", "marsh", "field", "ford", "lake"]
_PLACES = ["paris", "lima", "oslo", "rome", "kyiv", "cairo", "delhi", "perth", "quito", "seoul"]
_TRIGGERS = [
    ("was", "born", "in"),
    ("lives", "in"),
    ("works", "for"),
    ("founded",),
    ("visited",),
    ("leads",),
    ("admires",),
    ("studied", "in"),
]
_FILLERS = ["yesterday", "reportedly", "indeed", "once", "often"]


def synthetic_corpus(
    n: int = 32, n_relations: int = 4, seed: int = 0, min_epo: int = 4, min_seo: int = 4
) -> tuple[list[Sentence], RelationSchema]:
    """Small corpus with multi-token entities and Normal, EPO and SEO sentences.

    Relations are signalled by trigger phrases; the first ``min_epo`` and next
    ``min_seo`` sentences are built to be EPO and SEO respectively.
    """
    if not 2 <= n_relations <= len(_TRIGGERS):
        raise ValueError(f"n_relations must be in [2, {len(_TRIGGERS)}]")
    rng = random.Random(seed)
    schema = RelationSchema(tuple("_".join(t) for t in _TRIGGERS[:n_relations]))

    def person():
        if rng.random() < 0.5:
            return [rng.choice(_NAMES), rng.choice(_SURNAMES)]
        return [rng.choice(_NAMES)]

    def entities(k):
        out, seen = [], set()
        while len(out) < k:
            e = person() if rng.random() < 0.6 else [rng.choice(_PLACES)]
            key = " ".join(e)
            # no entity may be a token-subsequence of another in the same sentence
            if any(key in other or other in key for other in seen):
                continue
            seen.add(key)
            out.append(e)
        return out

    kinds = ["epo"] * min_epo + ["seo"] * min_seo
    kinds += [rng.choice(["one", "two", "epo", "seo", "seo_obj", "three"]) for _ in range(n - len(kinds))]
    kinds = kinds[:n]
    sentences = []
    for idx, kind in enumerate(kinds):
        rels = rng.sample(range(n_relations), 3 if n_relations >= 3 else 2)
        tokens: list[str] = []
        marks = []

        def put(words):
            start = len(tokens)
            tokens.extend(words)
            return (start, len(tokens) - 1)

        if rng.random() < 0.4:
            tokens.append(rng.choice(_FILLERS))
        if kind == "one":
            a, b = entities(2)
            sa = put(a); put(list(_TRIGGERS[rels[0]])); sb = put(b)
            marks = [(sa, rels[0], sb)]
        elif kind == "two":
            a, b, c, d = entities(4)
            sa = put(a); put(list(_TRIGGERS[rels[0]])); sb = put(b)
            put(["and"])
            sc = put(c); put(list(_TRIGGERS[rels[1]])); sd = put(d)
            marks = [(sa, rels[0], sb), (sc, rels[1], sd)]
        elif kind == "epo":
            a, b = entities(2)
            sa = put(a); put(list(_TRIGGERS[rels[0]])); put(["and"]); put(list(_TRIGGERS[rels[1]])); sb = put(b)
            marks = [(sa, rels[0], sb), (sa, rels[1], sb)]
        elif kind == "seo":
            a, b, c = entities(3)
            sa = put(a); put(list(_TRIGGERS[rels[0]])); sb = put(b)
            put(["and"]); put(list(_TRIGGERS[rels[1]])); sc = put(c)
            marks = [(sa, rels[0], sb), (sa, rels[1], sc)]
        elif kind == "three":
            a, b, c, d = entities(4)
            r3 = rels[2] if len(rels) > 2 else rels[0]
            sa = put(a); put(list(_TRIGGERS[rels[0]])); sb = put(b)
            put(["and"]); put(list(_TRIGGERS[rels[1]])); sc = put(c)
            put(["and"]); put(list(_TRIGGERS[r3])); sd = put(d)
            marks = [(sa, rels[0], sb), (sa, rels[1], sc), (sa, r3, sd)]
        else:  # seo_obj: two subjects share one object
            a, b, c = entities(3)
            sa = put(a); put(["and"]); sb = put(b); put(list(_TRIGGERS[rels[0]])); sc = put(c)
            marks = [(sa, rels[0], sc), (sb, rels[0], sc)]
        tokens.append(".")
        sent = Sentence(f"syn-{idx}", " ".join(tokens), tokens, ())
        triples = tuple(Triple(sent.span(*s), r, sent.span(*o)) for s, r, o in marks)
        sentences.append(Sentence(sent.id, sent.text, tokens, triples))
    return sentences, schema
