import copy
import random
import time

import pytest
import torch

from bitriple.config import RunConfig
from bitriple.corpus import Sentence, Span, Triple, synthetic_corpus
from bitriple.encoder import LookupEncoder, ProjectionParams
from bitriple.model import TripleExtractor
from bitriple.training import train

# settings the overfit criterion is checked under
TOY = dict(d_h=32, base_lr=5e-3, batch_size=8, epochs=200, patience=20, seed=1, runs=1)


@pytest.fixture(scope="session")
def toy_corpus():
    return synthetic_corpus(32, 4, seed=0)


@pytest.fixture(scope="session")
def overfit(toy_corpus):
    sentences, schema = toy_corpus
    config = RunConfig(**TOY)
    start = time.perf_counter()
    result = train(sentences, config, schema)
    result.seconds = time.perf_counter() - start
    return result


@pytest.fixture
def overfit_model(overfit):
    """A private copy, safe to modify."""
    return copy.deepcopy(overfit.model)


def lookup_model(n_relations=3, dim=6, vocab=("a", "b", "c", "d", "e", "f", "g"), seed=0,
                 dtype=torch.float64, scheme="zero_one", relation_head="biaffine"):
    gen = torch.Generator().manual_seed(seed)
    table = torch.randn(len(vocab) + 3, dim, generator=gen, dtype=dtype)
    backend = LookupEncoder(["[PAD]", "[UNK]", "[CLS]", *vocab], table)
    torch.manual_seed(seed)
    model = TripleExtractor(backend, n_relations, scheme, relation_head).to(dtype)
    with torch.no_grad():
        for p in model.parameters():
            if p.requires_grad:
                p.copy_(torch.randn(p.shape, generator=gen, dtype=dtype) * 0.7)
    return model


def random_sentence(rng: random.Random, n_tokens=None, n_triples=None, n_relations=3, max_width=3,
                    n_entities=None):
    """Sentence with random spans; entities may repeat across triples."""
    n = n_tokens or rng.randint(3, 10)
    tokens = [rng.choice("abcdefg") for _ in range(n)]
    sent = Sentence("r", " ".join(tokens), tokens)
    pool = []
    for _ in range(n_entities or rng.randint(1, 4)):
        s = rng.randrange(n)
        e = min(n - 1, s + rng.randrange(max_width))
        pool.append(sent.span(s, e))
    triples = [Triple(rng.choice(pool), rng.randrange(n_relations), rng.choice(pool))
               for _ in range(rng.randint(0, 6) if n_triples is None else n_triples)]
    return Sentence("r", sent.text, tokens, triples)


_acceptance = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        _acceptance[report.nodeid.split("::")[-1]] = report.outcome
    elif "test_acceptance.py" in report.nodeid and report.when == "setup" and report.outcome != "passed":
        _acceptance[report.nodeid.split("::")[-1]] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance.items():
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else outcome.upper():<8}{name}")
