"""Deterministic toy fixture: a small item catalog with enough structure for
an encoder to learn.

Items are grouped into categories laid out on a ring.  Every session browses
items from one category and ends at one of four designated ending slots;
its target is the ring successor of that ending item.  Each ending item
anchors several sessions with different fillers, so held-out targets stay
predictable from patterns seen in training.  Item order carries real
signal by construction: every session contains all four ending-slot items,
fillers are drawn from a pool disjoint from slots and targets, and sessions
have a fixed length, so the member multiset leaves the target four-way
ambiguous while the last position resolves it.  Attribute values are one
brand per category plus a color that cycles through the catalog.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .graphstore import Graph, IngestConfig, ingest

N_CATEGORIES = 5
ITEMS_PER_CATEGORY = 10
LAST_SLOTS = (2, 4, 6, 8)  # in-category indices that can end a session
N_COLORS = 4


def _item(cat: int, idx: int) -> str:
    return f"item_c{cat}_{idx:02d}"


def generate(seed: int = 7) -> tuple[list[dict], list[tuple[str, str, str]]]:
    """Session records and attribute triples for the toy catalog."""
    rng = np.random.default_rng(seed)
    # fillers never overlap ending slots or targets, so a member multiset
    # carries no hint about which ending slot is the true last item
    successors = {(s + 1) % ITEMS_PER_CATEGORY for s in LAST_SLOTS}
    filler_pool = [
        i for i in range(ITEMS_PER_CATEGORY) if i not in LAST_SLOTS and i not in successors
    ]
    records: list[dict] = []
    sid = 0
    for cat in range(N_CATEGORIES):
        for last in LAST_SLOTS:
            copies = 2 + int(rng.integers(2))  # 2-3 sessions share each last item
            target = (last + 1) % ITEMS_PER_CATEGORY
            decoys = [s for s in LAST_SLOTS if s != last]
            for _ in range(copies):
                filler = int(rng.choice(filler_pool))  # all sessions length 5
                prefix = [filler] + decoys
                rng.shuffle(prefix)
                members = [_item(cat, i) for i in prefix] + [_item(cat, last)]
                records.append(
                    {
                        "session_id": f"s{sid:03d}",
                        "items": members,
                        "targets": [_item(cat, target)],
                    }
                )
                sid += 1

    triples: list[tuple[str, str, str]] = []
    for cat in range(N_CATEGORIES):
        for idx in range(ITEMS_PER_CATEGORY):
            name = _item(cat, idx)
            triples.append((name, "brand", f"brand_{cat}"))
            triples.append((name, "color", f"color_{(cat * ITEMS_PER_CATEGORY + idx) % N_COLORS}"))
    return records, triples


def toy_graph(seed: int = 7) -> Graph:
    records, triples = generate(seed)
    return ingest(records, triples, IngestConfig())


def write(directory: Path, seed: int = 7) -> tuple[Path, Path]:
    records, triples = generate(seed)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    sessions_path = directory / "sessions.jsonl"
    triples_path = directory / "triples.tsv"
    with open(sessions_path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")
    with open(triples_path, "w") as fh:
        for head, rel, tail in triples:
            fh.write(f"{head}\t{rel}\t{tail}\n")
    return sessions_path, triples_path
