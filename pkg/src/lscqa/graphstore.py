"""Immutable session/item/attribute hypergraph: ingestion, edge splits, adjacency.

Vertices come in three kinds (items, attribute values, sessions) with dense
per-kind integer indices assigned by first appearance.  Binary relational
edges connect items to attribute values, plus a reserved "desires" relation
from each session vertex to its target item(s).  Session membership is an
ordered hyperedge and is never split across train/valid/test; only the
relational edges are.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, NamedTuple

import numpy as np

DESIRES = "desires"


class VertexKind(Enum):
    ITEM = "item"
    ATTRIBUTE = "attribute"
    SESSION = "session"


class VertexId(NamedTuple):
    kind: VertexKind
    index: int


class TripleEdge(NamedTuple):
    head: VertexId
    rel: int
    tail: VertexId


@dataclass(frozen=True)
class SessionEdge:
    """Ordered hyperedge: member items at 1-indexed positions plus target items."""

    session: VertexId
    members: tuple[VertexId, ...]
    targets: frozenset[VertexId]


class GraphError(ValueError):
    pass


class IngestError(GraphError):
    def __init__(self, message: str, position: int | None = None):
        if position is not None:
            message = f"{message} (record {position})"
        super().__init__(message)
        self.position = position


@dataclass(frozen=True)
class IngestConfig:
    max_session_len: int = 20
    # "create" registers unseen relation names on the fly; "reject" errors
    # unless the name was pre-declared in known_relations.
    relation_policy: str = "create"
    known_relations: tuple[str, ...] = ()


@dataclass(frozen=True)
class GraphStats:
    edges: int
    vertices: int
    sessions: int
    items: int
    attributes: int
    relations: int


class Graph:
    """Read-only hypergraph with exact forward/inverse adjacency indices."""

    def __init__(
        self,
        item_names: tuple[str, ...],
        attribute_names: tuple[str, ...],
        session_names: tuple[str, ...],
        relation_names: tuple[str, ...],
        triples: tuple[TripleEdge, ...],
        sessions: tuple[SessionEdge, ...],
    ):
        self.item_names = item_names
        self.attribute_names = attribute_names
        self.session_names = session_names
        self.relation_names = relation_names
        self.triples = triples
        self.sessions = sessions

        self._item_index = {name: i for i, name in enumerate(item_names)}
        self._attribute_index = {name: i for i, name in enumerate(attribute_names)}
        self._session_index = {name: i for i, name in enumerate(session_names)}
        self._relation_index = {name: i for i, name in enumerate(relation_names)}

        fwd: dict[VertexId, dict[int, set[VertexId]]] = {}
        inv: dict[VertexId, dict[int, set[VertexId]]] = {}
        for head, rel, tail in triples:
            fwd.setdefault(head, {}).setdefault(rel, set()).add(tail)
            inv.setdefault(tail, {}).setdefault(rel, set()).add(head)
        self._fwd = {v: {r: frozenset(s) for r, s in by_rel.items()} for v, by_rel in fwd.items()}
        self._inv = {v: {r: frozenset(s) for r, s in by_rel.items()} for v, by_rel in inv.items()}

        by_members: dict[tuple[int, ...], list[int]] = {}
        for edge in sessions:
            key = tuple(m.index for m in edge.members)
            by_members.setdefault(key, []).append(edge.session.index)
        self._sessions_by_members = {k: tuple(v) for k, v in by_members.items()}

    # -- vertex lookup -------------------------------------------------

    def item(self, name: str) -> VertexId:
        return VertexId(VertexKind.ITEM, self._item_index[name])

    def attribute(self, name: str) -> VertexId:
        return VertexId(VertexKind.ATTRIBUTE, self._attribute_index[name])

    def session(self, name: str) -> VertexId:
        return VertexId(VertexKind.SESSION, self._session_index[name])

    def relation(self, name: str) -> int:
        return self._relation_index[name]

    def vertex_name(self, v: VertexId) -> str:
        if v.kind is VertexKind.ITEM:
            return self.item_names[v.index]
        if v.kind is VertexKind.ATTRIBUTE:
            return self.attribute_names[v.index]
        return self.session_names[v.index]

    def has_vertex(self, v: VertexId) -> bool:
        counts = {
            VertexKind.ITEM: len(self.item_names),
            VertexKind.ATTRIBUTE: len(self.attribute_names),
            VertexKind.SESSION: len(self.session_names),
        }
        return 0 <= v.index < counts[v.kind]

    def vertices_of_kind(self, kind: VertexKind) -> list[VertexId]:
        counts = {
            VertexKind.ITEM: len(self.item_names),
            VertexKind.ATTRIBUTE: len(self.attribute_names),
            VertexKind.SESSION: len(self.session_names),
        }
        return [VertexId(kind, i) for i in range(counts[kind])]

    @property
    def desires_rel(self) -> int:
        return self._relation_index[DESIRES]

    # -- adjacency -----------------------------------------------------

    def neighbors(self, source: VertexId, rel: int) -> frozenset[VertexId]:
        """Exact forward adjacency set; empty when the vertex has no such edge."""
        if not self.has_vertex(source):
            raise GraphError(f"unknown vertex {source}")
        return self._fwd.get(source, {}).get(rel, frozenset())

    def inverse_neighbors(self, target: VertexId, rel: int) -> frozenset[VertexId]:
        if not self.has_vertex(target):
            raise GraphError(f"unknown vertex {target}")
        return self._inv.get(target, {}).get(rel, frozenset())

    def sessions_matching(self, member_indices: tuple[int, ...]) -> tuple[int, ...]:
        """Session indices whose ordered member list equals the given item indices."""
        return self._sessions_by_members.get(member_indices, ())

    def session_edge(self, index: int) -> SessionEdge:
        return self.sessions[index]

    def stats(self) -> GraphStats:
        return GraphStats(
            edges=len(self.triples),
            vertices=len(self.item_names) + len(self.attribute_names) + len(self.session_names),
            sessions=len(self.session_names),
            items=len(self.item_names),
            attributes=len(self.attribute_names),
            relations=len(self.relation_names),
        )


def ingest(
    session_records: Iterable[dict],
    attribute_triples: Iterable[tuple[str, str, str]],
    config: IngestConfig = IngestConfig(),
) -> Graph:
    """Build a Graph from session records and attribute triples.

    Vertex numbering is deterministic by first appearance: member items before
    target items within a record, records in stream order, then triple heads
    and attribute tails in stream order.  One "desires" edge is materialized
    per (session, target) pair.
    """
    item_names: list[str] = []
    item_index: dict[str, int] = {}
    attribute_names: list[str] = []
    attribute_index: dict[str, int] = {}
    session_names: list[str] = []
    session_index: dict[str, int] = {}
    relation_names: list[str] = [DESIRES]
    relation_index: dict[str, int] = {DESIRES: 0}
    for name in config.known_relations:
        if name not in relation_index:
            relation_index[name] = len(relation_names)
            relation_names.append(name)

    def intern_item(name: str, pos: int) -> int:
        if not isinstance(name, str) or not name:
            raise IngestError(f"item name must be a non-empty string, got {name!r}", pos)
        if name not in item_index:
            item_index[name] = len(item_names)
            item_names.append(name)
        return item_index[name]

    triples: list[TripleEdge] = []
    triple_seen: set[TripleEdge] = set()
    sessions: list[SessionEdge] = []

    for pos, record in enumerate(session_records):
        sid = record.get("session_id")
        if not isinstance(sid, str) or not sid:
            raise IngestError("session_id must be a non-empty string", pos)
        if sid in session_index:
            raise IngestError(f"duplicate session id {sid!r}", pos)
        members = record.get("items", [])
        if not members:
            raise IngestError("session has an empty member list", pos)
        targets = record.get("targets", [])
        if not targets:
            raise IngestError("session has no target items", pos)
        member_ids = [intern_item(name, pos) for name in members]
        if len(member_ids) > config.max_session_len:
            member_ids = member_ids[-config.max_session_len :]
        target_ids = {intern_item(name, pos) for name in targets}
        if target_ids & set(member_ids):
            raise IngestError("targets must not appear among session members", pos)

        session_index[sid] = len(session_names)
        session_names.append(sid)
        sv = VertexId(VertexKind.SESSION, session_index[sid])
        edge = SessionEdge(
            session=sv,
            members=tuple(VertexId(VertexKind.ITEM, i) for i in member_ids),
            targets=frozenset(VertexId(VertexKind.ITEM, i) for i in target_ids),
        )
        sessions.append(edge)
        for t in sorted(target_ids):
            triple = TripleEdge(sv, 0, VertexId(VertexKind.ITEM, t))
            if triple not in triple_seen:
                triple_seen.add(triple)
                triples.append(triple)

    for pos, (head, rel_name, tail) in enumerate(attribute_triples):
        hid = intern_item(head, pos)
        if not isinstance(tail, str) or not tail:
            raise IngestError(f"attribute name must be a non-empty string, got {tail!r}", pos)
        if rel_name == DESIRES:
            raise IngestError(f"relation name {DESIRES!r} is reserved for session targets", pos)
        if rel_name not in relation_index:
            if config.relation_policy == "reject":
                raise IngestError(f"unknown relation {rel_name!r}", pos)
            relation_index[rel_name] = len(relation_names)
            relation_names.append(rel_name)
        if tail not in attribute_index:
            attribute_index[tail] = len(attribute_names)
            attribute_names.append(tail)
        triple = TripleEdge(
            VertexId(VertexKind.ITEM, hid),
            relation_index[rel_name],
            VertexId(VertexKind.ATTRIBUTE, attribute_index[tail]),
        )
        if triple not in triple_seen:
            triple_seen.add(triple)
            triples.append(triple)

    return Graph(
        tuple(item_names),
        tuple(attribute_names),
        tuple(session_names),
        tuple(relation_names),
        tuple(triples),
        tuple(sessions),
    )


# -- splits -------------------------------------------------------------


@dataclass(frozen=True)
class SplitManifest:
    seed: int
    fractions: tuple[float, float, float]
    # (head name, relation name, tail name) -> "train" | "valid" | "test"
    assignment: tuple[tuple[str, str, str, str], ...]

    def to_json(self) -> str:
        return json.dumps(
            {
                "seed": self.seed,
                "fractions": list(self.fractions),
                "assignment": [list(row) for row in self.assignment],
            },
            indent=None,
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "SplitManifest":
        obj = json.loads(text)
        return SplitManifest(
            seed=obj["seed"],
            fractions=tuple(obj["fractions"]),
            assignment=tuple(tuple(row) for row in obj["assignment"]),
        )


@dataclass(frozen=True)
class SplitGraph:
    """Cumulative graphs: train edges, train+valid edges, all edges."""

    train: Graph
    valid: Graph
    test: Graph
    manifest: SplitManifest

    def graph_for(self, split: str) -> Graph:
        return {"train": self.train, "valid": self.valid, "test": self.test}[split]

    def new_edges(self, split: str) -> tuple[TripleEdge, ...]:
        """Edges first visible in the given split."""
        assigned = dict()
        for head, rel, tail, part in self.manifest.assignment:
            assigned.setdefault(part, []).append((head, rel, tail))
        g = self.test
        out = []
        for head, rel, tail in assigned.get(split, []):
            rel_id = g.relation(rel)
            hv = g.session(head) if rel == DESIRES else g.item(head)
            tv = g.item(tail) if rel == DESIRES else g.attribute(tail)
            out.append(TripleEdge(hv, rel_id, tv))
        return tuple(out)


def split_edges(
    graph: Graph,
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> SplitGraph:
    """Partition relational edges per relation by seeded shuffle.

    Session member lists are never split.  Relations with fewer than three
    edges go entirely to train (with a warning) since a 3-way split of them
    is meaningless.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise GraphError(f"fractions must sum to 1, got {fractions}")
    if not graph.triples:
        raise GraphError("cannot split an empty graph")

    rng = np.random.default_rng(seed)
    by_rel: dict[int, list[TripleEdge]] = {}
    for t in graph.triples:
        by_rel.setdefault(t.rel, []).append(t)

    assignment: dict[TripleEdge, str] = {}
    for rel in sorted(by_rel):
        edges = by_rel[rel]
        if len(edges) < 3:
            warnings.warn(
                f"relation {graph.relation_names[rel]!r} has {len(edges)} edge(s); all assigned to train"
            )
            for e in edges:
                assignment[e] = "train"
            continue
        order = rng.permutation(len(edges))
        n = len(edges)
        n_train = int(n * fractions[0] + 1e-9)
        n_valid = int(n * (fractions[0] + fractions[1]) + 1e-9)
        for pos, idx in enumerate(order):
            part = "train" if pos < n_train else ("valid" if pos < n_valid else "test")
            assignment[edges[idx]] = part

    def subgraph(parts: set[str]) -> Graph:
        kept = tuple(t for t in graph.triples if assignment[t] in parts)
        return Graph(
            graph.item_names,
            graph.attribute_names,
            graph.session_names,
            graph.relation_names,
            kept,
            graph.sessions,
        )

    manifest = SplitManifest(
        seed=seed,
        fractions=tuple(fractions),
        assignment=tuple(
            (
                graph.vertex_name(t.head),
                graph.relation_names[t.rel],
                graph.vertex_name(t.tail),
                assignment[t],
            )
            for t in graph.triples
        ),
    )
    return SplitGraph(
        train=subgraph({"train"}),
        valid=subgraph({"train", "valid"}),
        test=subgraph({"train", "valid", "test"}),
        manifest=manifest,
    )


def split_from_manifest(graph: Graph, manifest: SplitManifest) -> SplitGraph:
    """Rebuild the cumulative split graphs from a stored edge assignment."""
    assign: dict[TripleEdge, str] = {}
    for head, rel_name, tail, part in manifest.assignment:
        rel = graph.relation(rel_name)
        if rel_name == DESIRES:
            edge = TripleEdge(graph.session(head), rel, graph.item(tail))
        else:
            edge = TripleEdge(graph.item(head), rel, graph.attribute(tail))
        assign[edge] = part
    missing = [t for t in graph.triples if t not in assign]
    if missing or len(assign) != len(graph.triples):
        raise GraphError("split manifest does not cover exactly the graph's edges")

    def subgraph(parts: set[str]) -> Graph:
        kept = tuple(t for t in graph.triples if assign[t] in parts)
        return Graph(
            graph.item_names,
            graph.attribute_names,
            graph.session_names,
            graph.relation_names,
            kept,
            graph.sessions,
        )

    return SplitGraph(
        train=subgraph({"train"}),
        valid=subgraph({"train", "valid"}),
        test=subgraph({"train", "valid", "test"}),
        manifest=manifest,
    )


# -- external formats ----------------------------------------------------


def read_session_log(lines: Iterable[str]) -> Iterator[dict]:
    """Parse line-delimited JSON session records."""
    for line in lines:
        line = line.strip()
        if line:
            yield json.loads(line)


def read_attribute_triples(lines: Iterable[str]) -> Iterator[tuple[str, str, str]]:
    """Parse tab-separated item/relation/attribute triples."""
    for pos, line in enumerate(lines):
        line = line.rstrip("\n")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise IngestError(f"expected 3 tab-separated fields, got {len(parts)}", pos)
        yield (parts[0], parts[1], parts[2])


def write_session_log(graph: Graph) -> str:
    lines = []
    for edge in graph.sessions:
        lines.append(
            json.dumps(
                {
                    "session_id": graph.session_names[edge.session.index],
                    "items": [graph.item_names[m.index] for m in edge.members],
                    "targets": sorted(graph.item_names[t.index] for t in edge.targets),
                }
            )
        )
    return "\n".join(lines) + "\n"


def write_attribute_triples(graph: Graph) -> str:
    lines = []
    for head, rel, tail in graph.triples:
        if rel == graph.desires_rel:
            continue
        lines.append(
            f"{graph.item_names[head.index]}\t{graph.relation_names[rel]}\t{graph.attribute_names[tail.index]}"
        )
    return "\n".join(lines) + ("\n" if lines else "")
