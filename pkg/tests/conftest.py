import warnings

import numpy as np
import pytest

from lscqa.graphstore import IngestConfig, ingest, split_edges
from lscqa.toydata import toy_graph

# the worked micro example used throughout: two sessions plus one brand triple
MINI_SESSIONS = [
    {"session_id": "s1", "items": ["a", "b"], "targets": ["c"]},
    {"session_id": "s2", "items": ["b", "c"], "targets": ["d"]},
]
MINI_TRIPLES = [("c", "brand", "X")]


@pytest.fixture
def mini_graph():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return ingest(MINI_SESSIONS, MINI_TRIPLES, IngestConfig())


@pytest.fixture(scope="session")
def toy():
    return toy_graph()


@pytest.fixture(scope="session")
def toy_split(toy):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return split_edges(toy, (0.8, 0.1, 0.1), seed=3)


def random_session_dataset(rng: np.random.Generator, n_items=8, n_sessions=4, n_rels=2):
    """Small random ingestion payload for round-trip style properties."""
    items = [f"i{k}" for k in range(n_items)]
    records = []
    for s in range(n_sessions):
        size = int(rng.integers(1, 4))
        members = [items[int(i)] for i in rng.choice(n_items, size=size, replace=False)]
        remaining = [i for i in items if i not in members]
        targets = [remaining[int(rng.integers(len(remaining)))]]
        records.append({"session_id": f"s{s}", "items": members, "targets": targets})
    triples = []
    for _ in range(int(rng.integers(1, 8))):
        head = items[int(rng.integers(n_items))]
        rel = f"r{int(rng.integers(n_rels))}"
        tail = f"a{int(rng.integers(4))}"
        triples.append((head, rel, tail))
    return records, triples
