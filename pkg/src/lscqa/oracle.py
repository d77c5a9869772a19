"""Ground-truth query answering by recursive set evaluation, plus a seeded
backward sampler that instantiates query templates from answer vertices.

Negation is never materialized as a complement set: a negated operand is
evaluated to the set it would exclude, and the surrounding intersection
subtracts it from the intersection of its positive operands.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .graphstore import Graph, SplitGraph, TripleEdge, VertexId, VertexKind
from .query import (
    AnswerKind,
    AttributeAnchor,
    AttributeSpec,
    Intersection,
    ItemAnchor,
    ItemSpec,
    Negation,
    Projection,
    QueryGraph,
    RelSpec,
    SessionAnchor,
    SessionSpec,
    UnionOp,
    validate,
    render,
    template,
)

DESIRES_REL = 0


class OracleError(ValueError):
    pass


class AnchorNotFound(OracleError):
    pass


def _vkey(v: VertexId):
    return (v.kind.value, v.index)


def answer(graph: Graph, q: QueryGraph) -> frozenset[VertexId]:
    """Evaluate a query to its exact answer set on one graph."""
    diags = validate(q, graph)
    if diags:
        raise OracleError("invalid query: " + "; ".join(diags))

    values: list[frozenset[VertexId]] = []
    for idx, node in enumerate(q.nodes):
        if isinstance(node, ItemAnchor):
            values.append(frozenset({VertexId(VertexKind.ITEM, node.vertex)}))
        elif isinstance(node, AttributeAnchor):
            values.append(frozenset({VertexId(VertexKind.ATTRIBUTE, node.vertex)}))
        elif isinstance(node, SessionAnchor):
            matches = graph.sessions_matching(node.members)
            if not matches:
                raise AnchorNotFound(f"no session has member list {node.members}")
            values.append(frozenset(VertexId(VertexKind.SESSION, s) for s in matches))
        elif isinstance(node, Projection):
            step = graph.inverse_neighbors if node.inverse else graph.neighbors
            out: set[VertexId] = set()
            for v in values[node.child]:
                out |= step(v, node.rel)
            values.append(frozenset(out))
        elif isinstance(node, Negation):
            # holds the set its parent intersection must subtract
            values.append(values[node.child])
        elif isinstance(node, Intersection):
            positives = [c for c in node.children if not isinstance(q.nodes[c], Negation)]
            negatives = [c for c in node.children if isinstance(q.nodes[c], Negation)]
            acc = set(values[positives[0]])
            for c in positives[1:]:
                acc &= values[c]
            for c in negatives:
                acc -= values[c]
            values.append(frozenset(acc))
        elif isinstance(node, UnionOp):
            acc = set()
            for c in node.children:
                acc |= values[c]
            values.append(frozenset(acc))
        else:
            raise OracleError(f"unhandled node type {type(node).__name__}")
    return values[q.sink]


@dataclass(frozen=True)
class AnswerSets:
    train: frozenset[VertexId]
    valid: frozenset[VertexId]
    test: frozenset[VertexId]

    def hard(self, split: str = "test") -> frozenset[VertexId]:
        if split == "test":
            return self.test - self.valid
        if split == "valid":
            return self.valid - self.train
        raise OracleError(f"no hard answers defined for split {split!r}")


def answer_on_splits(sg: SplitGraph, q: QueryGraph) -> AnswerSets:
    return AnswerSets(
        train=answer(sg.train, q),
        valid=answer(sg.valid, q),
        test=answer(sg.test, q),
    )


@dataclass(frozen=True)
class SampledQuery:
    query: QueryGraph
    type: str
    answers: AnswerSets
    seed: int
    index: int


# -- backward template instantiation ---------------------------------------


class _Picker:
    """Deterministic helpers over one cumulative graph."""

    def __init__(self, g: Graph, rng: np.random.Generator):
        self.g = g
        self.rng = rng
        self._attr_rels = [r for r in range(len(g.relation_names)) if r != DESIRES_REL]

    def choice(self, seq):
        if not seq:
            return None
        return seq[int(self.rng.integers(len(seq)))]

    def members_of(self, session: VertexId) -> SessionSpec:
        edge = self.g.session_edge(session.index)
        return SessionSpec(tuple(m.index for m in edge.members))

    def sessions_desiring(self, item: VertexId) -> list[VertexId]:
        return sorted(self.g.inverse_neighbors(item, DESIRES_REL), key=_vkey)

    def sessions_not_desiring(self, item: VertexId) -> list[VertexId]:
        desiring = self.g.inverse_neighbors(item, DESIRES_REL)
        return [s for s in self.g.vertices_of_kind(VertexKind.SESSION) if s not in desiring]

    def attr_pairs_of(self, item: VertexId) -> list[tuple[int, VertexId]]:
        out = []
        for r in self._attr_rels:
            for a in sorted(self.g.neighbors(item, r), key=_vkey):
                out.append((r, a))
        return out

    def attr_pairs_not_of(self, item: VertexId) -> list[tuple[int, VertexId]]:
        out = []
        for r in self._attr_rels:
            has = self.g.neighbors(item, r)
            used = {a for a in self.g.vertices_of_kind(VertexKind.ATTRIBUTE)
                    if self.g.inverse_neighbors(a, r)}
            for a in sorted(used - has, key=_vkey):
                out.append((r, a))
        return out

    def items_with_attr(self, attr: VertexId) -> list[tuple[VertexId, int]]:
        out = []
        for r in self._attr_rels:
            for w in sorted(self.g.inverse_neighbors(attr, r), key=_vkey):
                out.append((w, r))
        return out

    def items_without_attr(self, attr: VertexId) -> list[tuple[VertexId, int]]:
        out = []
        for r in self._attr_rels:
            has = self.g.inverse_neighbors(attr, r)
            for w in self.g.vertices_of_kind(VertexKind.ITEM):
                if w not in has and self.g.neighbors(w, r):
                    out.append((w, r))
        return out


def _instantiate(tag: str, pk: _Picker, edge: TripleEdge):
    """Build anchor specs for one template around a critical final-hop edge.

    Item-answer templates receive a desires edge (session -> target item);
    attribute-answer templates receive an attribute edge (item -> value).
    Returns None when the surrounding graph cannot support the shape.
    """
    g = pk.g
    if tag == "1p":
        return [pk.members_of(edge.head)]
    if tag == "2p":
        s = pk.choice(pk.sessions_desiring(edge.head))
        return None if s is None else [pk.members_of(s), RelSpec(edge.rel)]
    if tag == "2iA":
        pair = pk.choice(pk.attr_pairs_of(edge.tail))
        if pair is None:
            return None
        r, a = pair
        return [pk.members_of(edge.head), AttributeSpec(a.index, r)]
    if tag == "2iS":
        others = [s for s in pk.sessions_desiring(edge.tail) if s != edge.head]
        s2 = pk.choice(others)
        return None if s2 is None else [pk.members_of(edge.head), pk.members_of(s2)]
    if tag == "3i":
        others = [s for s in pk.sessions_desiring(edge.tail) if s != edge.head]
        s2 = pk.choice(others)
        pair = pk.choice(pk.attr_pairs_of(edge.tail))
        if s2 is None or pair is None:
            return None
        r, a = pair
        return [pk.members_of(edge.head), pk.members_of(s2), AttributeSpec(a.index, r)]
    if tag == "ip":
        sessions = pk.sessions_desiring(edge.head)
        if len(sessions) < 2:
            return None
        i1 = int(pk.rng.integers(len(sessions)))
        rest = [s for k, s in enumerate(sessions) if k != i1]
        s2 = pk.choice(rest)
        return [pk.members_of(sessions[i1]), pk.members_of(s2), RelSpec(edge.rel)]
    if tag == "pi":
        s = pk.choice(pk.sessions_desiring(edge.head))
        holder = pk.choice(pk.items_with_attr(edge.tail))
        if s is None or holder is None:
            return None
        w, r2 = holder
        return [pk.members_of(s), RelSpec(edge.rel), ItemSpec(w.index, r2)]
    if tag == "2u":
        s2 = pk.choice(g.vertices_of_kind(VertexKind.SESSION))
        return [pk.members_of(edge.head), pk.members_of(s2)]
    if tag == "up":
        s1 = pk.choice(pk.sessions_desiring(edge.head))
        s2 = pk.choice(g.vertices_of_kind(VertexKind.SESSION))
        return None if s1 is None else [pk.members_of(s1), pk.members_of(s2), RelSpec(edge.rel)]
    if tag == "2inA":
        pair = pk.choice(pk.attr_pairs_not_of(edge.tail))
        if pair is None:
            return None
        r, a = pair
        return [pk.members_of(edge.head), AttributeSpec(a.index, r)]
    if tag == "2inS":
        s2 = pk.choice(pk.sessions_not_desiring(edge.tail))
        return None if s2 is None else [pk.members_of(edge.head), pk.members_of(s2)]
    if tag == "3in":
        pair = pk.choice(pk.attr_pairs_of(edge.tail))
        s2 = pk.choice(pk.sessions_not_desiring(edge.tail))
        if pair is None or s2 is None:
            return None
        r, a = pair
        return [pk.members_of(edge.head), AttributeSpec(a.index, r), pk.members_of(s2)]
    if tag == "inp":
        s1 = pk.choice(pk.sessions_desiring(edge.head))
        s2 = pk.choice(pk.sessions_not_desiring(edge.head))
        if s1 is None or s2 is None:
            return None
        return [pk.members_of(s1), pk.members_of(s2), RelSpec(edge.rel)]
    if tag == "pin":
        s1 = pk.choice(pk.sessions_desiring(edge.head))
        non_holder = pk.choice(pk.items_without_attr(edge.tail))
        if s1 is None or non_holder is None:
            return None
        w, r2 = non_holder
        return [pk.members_of(s1), RelSpec(edge.rel), ItemSpec(w.index, r2)]
    if tag == "3iA":
        pairs = pk.attr_pairs_of(edge.tail)
        if len(pairs) < 2:
            return None
        i1 = int(pk.rng.integers(len(pairs)))
        rest = [p for k, p in enumerate(pairs) if k != i1]
        r1, a1 = pairs[i1]
        r2, a2 = pk.choice(rest)
        return [pk.members_of(edge.head), AttributeSpec(a1.index, r1), AttributeSpec(a2.index, r2)]
    if tag == "3ip":
        sessions = pk.sessions_desiring(edge.head)
        pair = pk.choice(pk.attr_pairs_of(edge.head))
        if len(sessions) < 2 or pair is None:
            return None
        i1 = int(pk.rng.integers(len(sessions)))
        rest = [s for k, s in enumerate(sessions) if k != i1]
        s2 = pk.choice(rest)
        r1, a1 = pair
        return [
            pk.members_of(sessions[i1]),
            pk.members_of(s2),
            AttributeSpec(a1.index, r1),
            RelSpec(edge.rel),
        ]
    if tag == "3inA":
        pair1 = pk.choice(pk.attr_pairs_of(edge.tail))
        pair2 = pk.choice(pk.attr_pairs_not_of(edge.tail))
        if pair1 is None or pair2 is None:
            return None
        r1, a1 = pair1
        r2, a2 = pair2
        return [
            pk.members_of(edge.head),
            AttributeSpec(a1.index, r1),
            AttributeSpec(a2.index, r2),
        ]
    if tag == "3inp":
        s1 = pk.choice(pk.sessions_desiring(edge.head))
        pair = pk.choice(pk.attr_pairs_of(edge.head))
        s2 = pk.choice(pk.sessions_not_desiring(edge.head))
        if s1 is None or pair is None or s2 is None:
            return None
        r1, a1 = pair
        return [pk.members_of(s1), AttributeSpec(a1.index, r1), pk.members_of(s2), RelSpec(edge.rel)]
    raise OracleError(f"unknown query type {tag!r}")


def _critical_pool(sg: SplitGraph, tag: str, split: str) -> list[TripleEdge]:
    from .query import ITEM_ANSWER_TYPES

    want_desires = tag in ITEM_ANSWER_TYPES
    if split == "train":
        edges = sg.train.triples
    else:
        edges = sg.new_edges(split)
    keep = [e for e in edges if (e.rel == DESIRES_REL) == want_desires]
    return keep


def sample(
    sg: SplitGraph,
    tag: str,
    n: int,
    seed: int,
    split: str = "train",
    retry_budget: int = 64,
) -> list[SampledQuery]:
    """Draw up to ``n`` distinct query instances of one type.

    Train-split queries are guaranteed non-empty train answers; valid/test
    queries are guaranteed a non-empty hard-answer increment.  A rejection
    budget of ``retry_budget`` attempts per requested instance bounds the
    work; a shorter list plus a warning is returned when it runs out.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, _tag_entropy(tag), _split_entropy(split)]))
    pool = _critical_pool(sg, tag, split)
    out: list[SampledQuery] = []
    seen: set[str] = set()
    if not pool:
        warnings.warn(f"no candidate edges for {tag} on split {split}; sampled 0 of {n}")
        return out

    pk = _Picker(sg.graph_for(split), rng)
    budget = n * retry_budget
    attempts = 0
    while len(out) < n and attempts < budget:
        attempts += 1
        edge = pool[int(rng.integers(len(pool)))]
        anchors = _instantiate(tag, pk, edge)
        if anchors is None:
            continue
        q = template(tag, anchors)
        key = render(q, sg.test)
        if key in seen:
            continue
        try:
            answers = answer_on_splits(sg, q)
        except AnchorNotFound:
            continue
        if split == "train":
            if not answers.train:
                continue
        elif not answers.hard(split):
            continue
        seen.add(key)
        out.append(SampledQuery(q, tag, answers, seed, len(out)))
    if len(out) < n:
        warnings.warn(f"retry budget exhausted for {tag} on split {split}: {len(out)} of {n}")
    return out


def _tag_entropy(tag: str) -> int:
    from .query import QUERY_TYPES

    return QUERY_TYPES.index(tag)


def _split_entropy(split: str) -> int:
    return {"train": 0, "valid": 1, "test": 2}[split]


def random_instance(graph: Graph, tag: str, rng: np.random.Generator) -> QueryGraph | None:
    """Unconstrained template instance with anchors drawn from the graph
    inventory.  Answer sets may be empty; intended for structural tests."""
    pk = _Picker(graph, rng)
    sessions = graph.vertices_of_kind(VertexKind.SESSION)
    items = graph.vertices_of_kind(VertexKind.ITEM)
    attrs = graph.vertices_of_kind(VertexKind.ATTRIBUTE)
    rels = [r for r in range(len(graph.relation_names)) if r != DESIRES_REL]
    if not sessions or not items or not attrs or not rels:
        return None

    from .query import TEMPLATE_SIGNATURES

    specs = []
    for cls in TEMPLATE_SIGNATURES[tag]:
        if cls is SessionSpec:
            specs.append(pk.members_of(pk.choice(sessions)))
        elif cls is AttributeSpec:
            specs.append(AttributeSpec(pk.choice(attrs).index, pk.choice(rels)))
        elif cls is ItemSpec:
            specs.append(ItemSpec(pk.choice(items).index, pk.choice(rels)))
        else:
            specs.append(RelSpec(pk.choice(rels)))
    return template(tag, specs)


# -- dataset files ----------------------------------------------------------


def write_query_file(samples: list[SampledQuery], graph: Graph, split: str, tag: str, seed: int) -> str:
    """One file per (split, type): JSON header line then one record per query."""
    header = json.dumps({"type": tag, "split": split, "seed": seed, "count": len(samples)})
    lines = [header]
    for s in samples:
        lines.append(
            json.dumps(
                {
                    "dsl": render(s.query, graph),
                    "train": sorted(graph.vertex_name(v) for v in s.answers.train),
                    "valid": sorted(graph.vertex_name(v) for v in s.answers.valid),
                    "test": sorted(graph.vertex_name(v) for v in s.answers.test),
                }
            )
        )
    return "\n".join(lines) + "\n"


def read_query_file(text: str, graph: Graph) -> tuple[dict, list[SampledQuery]]:
    from .query import parse

    lines = [ln for ln in text.splitlines() if ln.strip()]
    meta = json.loads(lines[0])

    def name_to_vertex(name: str, kind: AnswerKind) -> VertexId:
        return graph.item(name) if kind is AnswerKind.ITEM else graph.attribute(name)

    out = []
    for i, line in enumerate(lines[1:]):
        obj = json.loads(line)
        q = parse(obj["dsl"], graph)
        answers = AnswerSets(
            train=frozenset(name_to_vertex(n, q.answer_kind) for n in obj["train"]),
            valid=frozenset(name_to_vertex(n, q.answer_kind) for n in obj["valid"]),
            test=frozenset(name_to_vertex(n, q.answer_kind) for n in obj["test"]),
        )
        out.append(SampledQuery(q, meta["type"], answers, meta["seed"], i))
    return meta, out
