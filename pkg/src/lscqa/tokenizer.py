"""Query graphs as token sequences for a set-style transformer encoder.

A query's computational graph is expanded into nodes (anchor items,
attribute values, sessions, operators), each tied to a row of a random
orthonormal identifier basis.  Three token groups follow a prepended
whole-graph token: node tokens (feature + own identifier twice), session
structure tokens (position feature + item/session identifiers), and logical
structure tokens (relation or operator feature + endpoint identifiers).

Node numbering is canonical: items and attribute values sorted by vertex
index, then sessions and operators in query-node order.  Logical edges are
emitted sorted by (target, source), so reordering the operands of an
intersection or union leaves the emitted sequence bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .query import (
    AttributeAnchor,
    Intersection,
    ItemAnchor,
    Negation,
    Projection,
    QueryGraph,
    SessionAnchor,
    UnionOp,
)

# rows of the operator embedding table
OP_SESSION, OP_PROJECTION, OP_INTERSECTION, OP_NEGATION, OP_UNION = range(5)
_OP_NAMES = {OP_SESSION: "S", OP_PROJECTION: "P", OP_INTERSECTION: "I", OP_NEGATION: "N", OP_UNION: "U"}

TYPE_NODE = 0
TYPE_EDGE = 1


class TokenizerError(ValueError):
    pass


@dataclass(frozen=True)
class NodeInventory:
    """Computational-graph nodes of one query, in canonical order."""

    entries: tuple[tuple, ...]  # ("item", vertex) | ("attr", vertex) | ("session", qnode) | ("op", qnode, code)
    item_node: dict[int, int]
    attr_node: dict[int, int]
    qnode_node: dict[int, int]

    @property
    def count(self) -> int:
        return len(self.entries)

    def describe(self, node_id: int) -> str:
        entry = self.entries[node_id]
        if entry[0] == "item":
            return f"item[{entry[1]}]"
        if entry[0] == "attr":
            return f"attr[{entry[1]}]"
        if entry[0] == "session":
            return f"session(q{entry[1]})"
        return f"op:{_OP_NAMES[entry[2]]}(q{entry[1]})"


def computation_nodes(q: QueryGraph) -> NodeInventory:
    items: set[int] = set()
    attrs: set[int] = set()
    sessions: list[int] = []
    ops: list[tuple[int, int]] = []
    for idx, node in enumerate(q.nodes):
        if isinstance(node, SessionAnchor):
            sessions.append(idx)
            items.update(node.members)
        elif isinstance(node, ItemAnchor):
            items.add(node.vertex)
        elif isinstance(node, AttributeAnchor):
            attrs.add(node.vertex)
        elif isinstance(node, Projection):
            ops.append((idx, OP_PROJECTION))
        elif isinstance(node, Intersection):
            ops.append((idx, OP_INTERSECTION))
        elif isinstance(node, Negation):
            ops.append((idx, OP_NEGATION))
        elif isinstance(node, UnionOp):
            ops.append((idx, OP_UNION))

    entries: list[tuple] = []
    item_node: dict[int, int] = {}
    attr_node: dict[int, int] = {}
    qnode_node: dict[int, int] = {}
    for v in sorted(items):
        item_node[v] = len(entries)
        entries.append(("item", v))
    for v in sorted(attrs):
        attr_node[v] = len(entries)
        entries.append(("attr", v))
    for qidx in sessions:
        qnode_node[qidx] = len(entries)
        entries.append(("session", qidx))
    for qidx, code in ops:
        qnode_node[qidx] = len(entries)
        entries.append(("op", qidx, code))
    return NodeInventory(tuple(entries), item_node, attr_node, qnode_node)


@dataclass(frozen=True)
class NodeIdentifierBasis:
    """Rows are orthonormal identifier vectors, one per computational node."""

    P: np.ndarray  # n x d2
    seed: int


def assign_identifiers(q: QueryGraph, d2: int, seed: int) -> NodeIdentifierBasis:
    n = computation_nodes(q).count
    if n > d2:
        raise TokenizerError(
            f"query has {n} computational nodes but identifier width is {d2}; increase d2"
        )
    rng = np.random.default_rng(seed)
    gauss = rng.standard_normal((d2, n))
    qmat, _ = np.linalg.qr(gauss)
    return NodeIdentifierBasis(P=qmat.T.copy(), seed=seed)


@dataclass(frozen=True)
class Token:
    provenance: tuple  # ("graph",) | ("node", id) | ("session_edge", item, session, pos) | ("logic_edge", src, dst)
    feature_src: tuple  # ("graph",) | ("item", v) | ("attr", v) | ("op", code) | ("pos", r0) | ("rel", rel, inv) | ("zero",)
    src: int | None
    dst: int | None
    type_idx: int


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[Token, ...]
    n: int
    m: int
    w: int
    basis: NodeIdentifierBasis
    inventory: NodeInventory

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def graph_token_position(self) -> int:
        for i, t in enumerate(self.tokens):
            if t.provenance[0] == "graph":
                return i
        raise TokenizerError("sequence has no graph token")

    def shuffled(self, rng: np.random.Generator) -> "TokenSequence":
        order = rng.permutation(len(self.tokens))
        return TokenSequence(
            tuple(self.tokens[i] for i in order), self.n, self.m, self.w, self.basis, self.inventory
        )

    def dense(self, tables: "EmbeddingTables") -> np.ndarray:
        """Numeric token matrix, one row per token, width d1 + 2*d2 + d3."""
        d2 = self.basis.P.shape[1]
        width = tables.d1 + 2 * d2 + tables.d3
        out = np.zeros((len(self.tokens), width))
        for i, tok in enumerate(self.tokens):
            if tok.provenance[0] == "graph":
                out[i] = tables.graph_token
                continue
            out[i, : tables.d1] = tables.feature(tok.feature_src)
            out[i, tables.d1 : tables.d1 + d2] = self.basis.P[tok.src]
            out[i, tables.d1 + d2 : tables.d1 + 2 * d2] = self.basis.P[tok.dst]
            out[i, tables.d1 + 2 * d2 :] = tables.type[tok.type_idx]
        return out

    def token_bytes(self, tables: "EmbeddingTables") -> list[bytes]:
        return [row.tobytes() for row in self.dense(tables)]

    def dump(self) -> str:
        lines = []
        for tok in self.tokens:
            prov = ":".join(str(p) for p in tok.provenance)
            feat = ":".join(str(p) for p in tok.feature_src)
            lines.append(f"{prov}\t{feat}\tids=({tok.src},{tok.dst})")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class EmbeddingTables:
    """Numpy views of the learned embeddings the tokenizer reads."""

    item: np.ndarray  # n_items x d1
    attribute: np.ndarray  # n_attrs x d1
    operator: np.ndarray  # 5 x d1, rows [S],[P],[I],[N],[U]
    relation: np.ndarray  # (2 * n_relations) x d1, forward/inverse interleaved
    pos: np.ndarray  # L_max x d1, 1-indexed positions at row r-1
    type: np.ndarray  # 2 x d3, rows node/edge
    graph_token: np.ndarray  # full token width

    @property
    def d1(self) -> int:
        return self.item.shape[1]

    @property
    def d3(self) -> int:
        return self.type.shape[1]

    def feature(self, src: tuple) -> np.ndarray:
        kind = src[0]
        if kind == "item":
            return self.item[src[1]]
        if kind == "attr":
            return self.attribute[src[1]]
        if kind == "op":
            return self.operator[src[1]]
        if kind == "pos":
            return self.pos[src[1]]
        if kind == "rel":
            return self.relation[2 * src[1] + (1 if src[2] else 0)]
        if kind == "zero":
            return np.zeros(self.d1)
        raise TokenizerError(f"unknown feature source {src}")


def _edge_feature(q: QueryGraph, parent_idx: int) -> tuple:
    parent = q.nodes[parent_idx]
    if isinstance(parent, Projection):
        return ("rel", parent.rel, parent.inverse)
    if isinstance(parent, Intersection):
        return ("op", OP_INTERSECTION)
    if isinstance(parent, UnionOp):
        return ("op", OP_UNION)
    return ("op", OP_NEGATION)


def logical_edges(q: QueryGraph, inv: NodeInventory) -> list[tuple[int, int, tuple]]:
    """Directed operand->operator edges, sorted by (target, source)."""
    edges = []
    for idx, node in enumerate(q.nodes):
        if isinstance(node, (Projection, Negation)):
            children = [node.child]
        elif isinstance(node, (Intersection, UnionOp)):
            children = list(node.children)
        else:
            continue
        dst = inv.qnode_node[idx]
        feature = _edge_feature(q, idx)
        for child_idx in children:
            child = q.nodes[child_idx]
            if isinstance(child, ItemAnchor):
                src = inv.item_node[child.vertex]
            elif isinstance(child, AttributeAnchor):
                src = inv.attr_node[child.vertex]
            else:
                src = inv.qnode_node[child_idx]
            edges.append((src, dst, feature))
    edges.sort(key=lambda e: (e[1], e[0]))
    return edges


def session_incidences(q: QueryGraph, inv: NodeInventory) -> list[tuple[int, int, int]]:
    """(item node, session node, 1-indexed position) triples in session order."""
    out = []
    for idx, node in enumerate(q.nodes):
        if isinstance(node, SessionAnchor):
            sid = inv.qnode_node[idx]
            for pos, member in enumerate(node.members, start=1):
                out.append((inv.item_node[member], sid, pos))
    return out


def tokenize(
    q: QueryGraph,
    basis: NodeIdentifierBasis,
    tables: EmbeddingTables,
    drop_logic_tokens: bool = False,
    drop_session_positions: bool = False,
) -> TokenSequence:
    """Emit the full token sequence for one query.

    ``drop_logic_tokens`` omits the logical structure group entirely;
    ``drop_session_positions`` keeps membership tokens but zeroes their
    position feature.
    """
    inv = computation_nodes(q)
    if basis.P.shape[0] != inv.count:
        raise TokenizerError(
            f"identifier basis has {basis.P.shape[0]} rows but the query has {inv.count} nodes"
        )
    for entry in inv.entries:
        if entry[0] == "item" and entry[1] >= tables.item.shape[0]:
            raise TokenizerError(f"item {entry[1]} has no embedding row")
        if entry[0] == "attr" and entry[1] >= tables.attribute.shape[0]:
            raise TokenizerError(f"attribute {entry[1]} has no embedding row")

    tokens: list[Token] = [Token(("graph",), ("graph",), None, None, TYPE_NODE)]
    for node_id, entry in enumerate(inv.entries):
        if entry[0] == "item":
            feature = ("item", entry[1])
        elif entry[0] == "attr":
            feature = ("attr", entry[1])
        elif entry[0] == "session":
            feature = ("op", OP_SESSION)
        else:
            feature = ("op", entry[2])
        tokens.append(Token(("node", node_id), feature, node_id, node_id, TYPE_NODE))

    incidences = session_incidences(q, inv)
    for item_node, session_node, pos in incidences:
        if pos - 1 >= tables.pos.shape[0]:
            raise TokenizerError(f"position {pos} exceeds the positional table of {tables.pos.shape[0]} rows")
        feature = ("zero",) if drop_session_positions else ("pos", pos - 1)
        tokens.append(
            Token(("session_edge", item_node, session_node, pos), feature, item_node, session_node, TYPE_EDGE)
        )

    edges = [] if drop_logic_tokens else logical_edges(q, inv)
    for src, dst, feature in edges:
        if feature[0] == "rel" and 2 * feature[1] + 1 >= tables.relation.shape[0]:
            raise TokenizerError(f"relation {feature[1]} has no embedding row")
        tokens.append(Token(("logic_edge", src, dst), feature, src, dst, TYPE_EDGE))

    return TokenSequence(
        tokens=tuple(tokens),
        n=inv.count,
        m=len(incidences),
        w=len(edges),
        basis=basis,
        inventory=inv,
    )
