"""First-order logical session queries as single-sink computational DAGs.

A query is a topologically ordered list of nodes (anchors and operators)
whose last entry is the sink.  Operator children are indices into the node
list, so reordering the operands of an intersection or union touches only
one tuple and never renumbers nodes.  Eighteen canonical templates are
provided (fourteen used for training plus four held-out compositional
shapes) along with a prefix DSL, e.g. ``(p desires (s a b))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Union

from .graphstore import DESIRES, Graph, VertexId, VertexKind


class AnswerKind(Enum):
    ITEM = "item"
    ATTRIBUTE = "attribute"


# -- node variants -------------------------------------------------------


@dataclass(frozen=True)
class ItemAnchor:
    vertex: int  # item index


@dataclass(frozen=True)
class AttributeAnchor:
    vertex: int  # attribute index


@dataclass(frozen=True)
class SessionAnchor:
    members: tuple[int, ...]  # ordered item indices, 1-indexed positions


@dataclass(frozen=True)
class Projection:
    rel: int
    child: int
    inverse: bool = False


@dataclass(frozen=True)
class Intersection:
    children: tuple[int, ...]


@dataclass(frozen=True)
class UnionOp:
    children: tuple[int, ...]


@dataclass(frozen=True)
class Negation:
    child: int


QueryNode = Union[
    ItemAnchor, AttributeAnchor, SessionAnchor, Projection, Intersection, UnionOp, Negation
]


@dataclass(frozen=True)
class QueryGraph:
    nodes: tuple[QueryNode, ...]
    answer_kind: AnswerKind

    @property
    def sink(self) -> int:
        return len(self.nodes) - 1

    def children_of(self, idx: int) -> tuple[int, ...]:
        node = self.nodes[idx]
        if isinstance(node, Projection):
            return (node.child,)
        if isinstance(node, (Intersection, UnionOp)):
            return node.children
        if isinstance(node, Negation):
            return (node.child,)
        return ()


class QueryError(ValueError):
    pass


QUERY_TYPES = (
    "1p", "2p", "2iA", "2iS", "3i", "ip", "pi", "2u", "up",
    "2inA", "2inS", "3in", "inp", "pin",
    "3iA", "3ip", "3inA", "3inp",
)
TRAIN_QUERY_TYPES = QUERY_TYPES[:14]
OOD_QUERY_TYPES = QUERY_TYPES[14:]
NEGATION_QUERY_TYPES = ("2inA", "2inS", "3in", "inp", "pin", "3inA", "3inp")
EPFO_QUERY_TYPES = tuple(t for t in QUERY_TYPES if t not in NEGATION_QUERY_TYPES)

ITEM_ANSWER_TYPES = ("1p", "2iA", "2iS", "3i", "2u", "2inA", "2inS", "3in", "3iA", "3inA")
ATTRIBUTE_ANSWER_TYPES = ("2p", "ip", "pi", "up", "inp", "pin", "3ip", "3inp")


# -- anchor specs for templates ------------------------------------------


@dataclass(frozen=True)
class SessionSpec:
    members: tuple[int, ...]


@dataclass(frozen=True)
class AttributeSpec:
    """An attribute anchor reached backwards through its relation."""

    attribute: int
    rel: int


@dataclass(frozen=True)
class ItemSpec:
    """An item anchor projected forward to its attribute values."""

    item: int
    rel: int


@dataclass(frozen=True)
class RelSpec:
    """Relation of a projection that is not tied to an anchor."""

    rel: int


AnchorSpec = Union[SessionSpec, AttributeSpec, ItemSpec, RelSpec]

# expected spec classes per template tag, in order
TEMPLATE_SIGNATURES: dict[str, tuple[type, ...]] = {
    "1p": (SessionSpec,),
    "2p": (SessionSpec, RelSpec),
    "2iA": (SessionSpec, AttributeSpec),
    "2iS": (SessionSpec, SessionSpec),
    "3i": (SessionSpec, SessionSpec, AttributeSpec),
    "ip": (SessionSpec, SessionSpec, RelSpec),
    "pi": (SessionSpec, RelSpec, ItemSpec),
    "2u": (SessionSpec, SessionSpec),
    "up": (SessionSpec, SessionSpec, RelSpec),
    "2inA": (SessionSpec, AttributeSpec),
    "2inS": (SessionSpec, SessionSpec),
    "3in": (SessionSpec, AttributeSpec, SessionSpec),
    "inp": (SessionSpec, SessionSpec, RelSpec),
    "pin": (SessionSpec, RelSpec, ItemSpec),
    "3iA": (SessionSpec, AttributeSpec, AttributeSpec),
    "3ip": (SessionSpec, SessionSpec, AttributeSpec, RelSpec),
    "3inA": (SessionSpec, AttributeSpec, AttributeSpec),
    "3inp": (SessionSpec, AttributeSpec, SessionSpec, RelSpec),
}


class _Builder:
    def __init__(self, desires_rel: int):
        self.nodes: list[QueryNode] = []
        self.desires = desires_rel

    def add(self, node: QueryNode) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def desired_by(self, spec: SessionSpec) -> int:
        anchor = self.add(SessionAnchor(tuple(spec.members)))
        return self.add(Projection(self.desires, anchor))

    def with_attribute(self, spec: AttributeSpec) -> int:
        anchor = self.add(AttributeAnchor(spec.attribute))
        return self.add(Projection(spec.rel, anchor, inverse=True))

    def attributes_of_item(self, spec: ItemSpec) -> int:
        anchor = self.add(ItemAnchor(spec.item))
        return self.add(Projection(spec.rel, anchor))

    def negate(self, child: int) -> int:
        return self.add(Negation(child))


def template(tag: str, anchors: list[AnchorSpec]) -> QueryGraph:
    """Instantiate the canonical computational graph for a query type."""
    sig = TEMPLATE_SIGNATURES.get(tag)
    if sig is None:
        raise QueryError(f"unknown query type {tag!r}")
    got = tuple(type(a) for a in anchors)
    if got != sig:
        expected = ", ".join(c.__name__ for c in sig)
        actual = ", ".join(c.__name__ for c in got)
        raise QueryError(f"{tag} expects ({expected}), got ({actual})")

    b = _Builder(desires_rel=0)
    a = anchors
    if tag == "1p":
        b.desired_by(a[0])
    elif tag == "2p":
        b.add(Projection(a[1].rel, b.desired_by(a[0])))
    elif tag == "2iA":
        b.add(Intersection((b.desired_by(a[0]), b.with_attribute(a[1]))))
    elif tag == "2iS":
        b.add(Intersection((b.desired_by(a[0]), b.desired_by(a[1]))))
    elif tag == "3i":
        b.add(Intersection((b.desired_by(a[0]), b.desired_by(a[1]), b.with_attribute(a[2]))))
    elif tag == "ip":
        inter = b.add(Intersection((b.desired_by(a[0]), b.desired_by(a[1]))))
        b.add(Projection(a[2].rel, inter))
    elif tag == "pi":
        chain = b.add(Projection(a[1].rel, b.desired_by(a[0])))
        b.add(Intersection((chain, b.attributes_of_item(a[2]))))
    elif tag == "2u":
        b.add(UnionOp((b.desired_by(a[0]), b.desired_by(a[1]))))
    elif tag == "up":
        union = b.add(UnionOp((b.desired_by(a[0]), b.desired_by(a[1]))))
        b.add(Projection(a[2].rel, union))
    elif tag == "2inA":
        b.add(Intersection((b.desired_by(a[0]), b.negate(b.with_attribute(a[1])))))
    elif tag == "2inS":
        b.add(Intersection((b.desired_by(a[0]), b.negate(b.desired_by(a[1])))))
    elif tag == "3in":
        b.add(
            Intersection(
                (b.desired_by(a[0]), b.with_attribute(a[1]), b.negate(b.desired_by(a[2])))
            )
        )
    elif tag == "inp":
        inter = b.add(Intersection((b.desired_by(a[0]), b.negate(b.desired_by(a[1])))))
        b.add(Projection(a[2].rel, inter))
    elif tag == "pin":
        chain = b.add(Projection(a[1].rel, b.desired_by(a[0])))
        b.add(Intersection((chain, b.negate(b.attributes_of_item(a[2])))))
    elif tag == "3iA":
        b.add(
            Intersection(
                (b.desired_by(a[0]), b.with_attribute(a[1]), b.with_attribute(a[2]))
            )
        )
    elif tag == "3ip":
        inter = b.add(
            Intersection((b.desired_by(a[0]), b.desired_by(a[1]), b.with_attribute(a[2])))
        )
        b.add(Projection(a[3].rel, inter))
    elif tag == "3inA":
        b.add(
            Intersection(
                (b.desired_by(a[0]), b.with_attribute(a[1]), b.negate(b.with_attribute(a[2])))
            )
        )
    elif tag == "3inp":
        inter = b.add(
            Intersection(
                (b.desired_by(a[0]), b.with_attribute(a[1]), b.negate(b.desired_by(a[2])))
            )
        )
        b.add(Projection(a[3].rel, inter))

    kind = AnswerKind.ITEM if tag in ITEM_ANSWER_TYPES else AnswerKind.ATTRIBUTE
    return QueryGraph(tuple(b.nodes), kind)


# -- validation ------------------------------------------------------------


def node_kind(q: QueryGraph, idx: int, graph: Graph | None = None) -> VertexKind:
    """Vertex kind the node evaluates to.  Sessions project to items via the
    reserved relation; every other relation maps items forward to attributes."""
    node = q.nodes[idx]
    if isinstance(node, ItemAnchor):
        return VertexKind.ITEM
    if isinstance(node, AttributeAnchor):
        return VertexKind.ATTRIBUTE
    if isinstance(node, SessionAnchor):
        return VertexKind.SESSION
    if isinstance(node, Projection):
        if node.rel == 0:  # desires
            return VertexKind.SESSION if node.inverse else VertexKind.ITEM
        return VertexKind.ITEM if node.inverse else VertexKind.ATTRIBUTE
    if isinstance(node, Negation):
        return node_kind(q, node.child, graph)
    return node_kind(q, node.children[0], graph)


def validate(q: QueryGraph, graph: Graph | None = None) -> list[str]:
    """Return diagnostics (empty list means the query is well-formed).

    Checks: topological order, single sink, operator arities, negation only
    as a direct child of an intersection, no negated session anchors, and
    (when a graph is supplied) anchor existence and kind consistency.
    """
    diags: list[str] = []
    n = len(q.nodes)
    if n == 0:
        return ["query has no nodes"]

    referenced: set[int] = set()
    for idx, node in enumerate(q.nodes):
        path = f"node {idx} ({type(node).__name__})"
        for c in q.children_of(idx):
            if c >= idx:
                diags.append(f"{path}: child {c} does not precede its parent")
            referenced.add(c)
        if isinstance(node, SessionAnchor) and not node.members:
            diags.append(f"{path}: session anchor has no members")
        if isinstance(node, (Intersection, UnionOp)) and len(node.children) < 2:
            op = "intersection" if isinstance(node, Intersection) else "union"
            diags.append(f"{path}: {op} arity must be >= 2")
        if isinstance(node, Negation):
            child = q.nodes[node.child]
            if isinstance(child, Negation):
                diags.append(f"{path}: negation under negation")
            if isinstance(child, SessionAnchor):
                diags.append(f"{path}: negated session anchor is not supported")
        if isinstance(node, UnionOp):
            for c in node.children:
                if isinstance(q.nodes[c], Negation):
                    diags.append(f"{path}: negation under union")
        if isinstance(node, Intersection):
            if all(isinstance(q.nodes[c], Negation) for c in node.children):
                diags.append(f"{path}: intersection needs at least one positive operand")

    if diags:
        return diags

    sinks = [i for i in range(n) if i not in referenced]
    if sinks != [n - 1]:
        diags.append(f"expected a single sink at the last node, found sinks {sinks}")
    if isinstance(q.nodes[n - 1], Negation):
        diags.append("negation at root")
    for idx, node in enumerate(q.nodes):
        if isinstance(node, Negation) and idx != n - 1:
            parents = [
                p for p in range(n) if idx in q.children_of(p)
            ]
            if any(not isinstance(q.nodes[p], Intersection) for p in parents):
                diags.append(f"node {idx}: negation must be a direct child of an intersection")
    if diags:
        return diags

    # kind consistency
    for idx, node in enumerate(q.nodes):
        path = f"node {idx} ({type(node).__name__})"
        if isinstance(node, Projection):
            child_kind = node_kind(q, node.child)
            if node.rel == 0:
                need = VertexKind.ITEM if node.inverse else VertexKind.SESSION
            else:
                need = VertexKind.ATTRIBUTE if node.inverse else VertexKind.ITEM
            if child_kind is not need:
                diags.append(f"{path}: projection over {child_kind.value} set, needs {need.value}")
        if isinstance(node, (Intersection, UnionOp)):
            kinds = {node_kind(q, c) for c in node.children}
            if len(kinds) > 1:
                diags.append(f"{path}: children mix vertex kinds {sorted(k.value for k in kinds)}")
    if diags:
        return diags

    sink_kind = node_kind(q, n - 1)
    expected = VertexKind.ITEM if q.answer_kind is AnswerKind.ITEM else VertexKind.ATTRIBUTE
    if sink_kind is not expected:
        diags.append(f"sink evaluates to {sink_kind.value} but answer kind is {q.answer_kind.value}")

    if graph is not None:
        for idx, node in enumerate(q.nodes):
            if isinstance(node, ItemAnchor) and node.vertex >= len(graph.item_names):
                diags.append(f"node {idx}: unknown item {node.vertex}")
            if isinstance(node, AttributeAnchor) and node.vertex >= len(graph.attribute_names):
                diags.append(f"node {idx}: unknown attribute {node.vertex}")
            if isinstance(node, SessionAnchor):
                for m in node.members:
                    if m >= len(graph.item_names):
                        diags.append(f"node {idx}: unknown member item {m}")
            if isinstance(node, Projection) and node.rel >= len(graph.relation_names):
                diags.append(f"node {idx}: unknown relation {node.rel}")
    return diags


def operator_counts(q: QueryGraph) -> dict[str, int]:
    """Multiset of operator node types (anchors excluded)."""
    counts = {"projection": 0, "intersection": 0, "union": 0, "negation": 0}
    for node in q.nodes:
        if isinstance(node, Projection):
            counts["projection"] += 1
        elif isinstance(node, Intersection):
            counts["intersection"] += 1
        elif isinstance(node, UnionOp):
            counts["union"] += 1
        elif isinstance(node, Negation):
            counts["negation"] += 1
    return counts


# -- prefix DSL ------------------------------------------------------------
#
#   EXPR  := (s NAME+) | (a NAME) | (v NAME)
#          | (p REL EXPR) | (i EXPR EXPR+) | (u EXPR EXPR+) | (n EXPR)
#   REL   := NAME | ~NAME          (tilde marks inverse traversal)
#
# Names are whitespace/paren-delimited tokens resolved against the graph.


class ParseError(QueryError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} at line {line}, column {col}")
        self.line = line
        self.col = col


def _tokenize_dsl(text: str):
    tokens = []
    line, col = 1, 1
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
        elif ch in " \t\r":
            col += 1
            i += 1
        elif ch in "()":
            tokens.append((ch, line, col))
            col += 1
            i += 1
        else:
            j = i
            while j < len(text) and text[j] not in " \t\r\n()":
                j += 1
            tokens.append((text[i:j], line, col))
            col += j - i
            i = j
    return tokens


def parse(dsl_text: str, graph: Graph) -> QueryGraph:
    """Parse a prefix-DSL expression into a validated QueryGraph."""
    tokens = _tokenize_dsl(dsl_text)
    if not tokens:
        raise ParseError("empty query", 1, 1)
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else (None, tokens[-1][1], tokens[-1][2] + 1)

    def take(expected: str | None = None):
        nonlocal pos
        tok, line, col = peek()
        if tok is None:
            raise ParseError("unexpected end of input", line, col)
        if expected is not None and tok != expected:
            raise ParseError(f"expected {expected!r}, got {tok!r}", line, col)
        pos += 1
        return tok, line, col

    nodes: list[QueryNode] = []

    def add(node: QueryNode) -> int:
        nodes.append(node)
        return len(nodes) - 1

    def parse_expr() -> int:
        take("(")
        head, line, col = take()
        if head == "s":
            members = []
            while peek()[0] not in (")", None):
                name, nline, ncol = take()
                if name == "(":
                    raise ParseError("session members must be item names", nline, ncol)
                try:
                    members.append(graph.item(name).index)
                except KeyError:
                    raise ParseError(f"unknown item {name!r}", nline, ncol) from None
            take(")")
            if not members:
                raise ParseError("session anchor needs at least one member", line, col)
            return add(SessionAnchor(tuple(members)))
        if head == "v":
            name, nline, ncol = take()
            try:
                idx = add(ItemAnchor(graph.item(name).index))
            except KeyError:
                raise ParseError(f"unknown item {name!r}", nline, ncol) from None
            take(")")
            return idx
        if head == "a":
            name, nline, ncol = take()
            try:
                idx = add(AttributeAnchor(graph.attribute(name).index))
            except KeyError:
                raise ParseError(f"unknown attribute {name!r}", nline, ncol) from None
            take(")")
            return idx
        if head == "p":
            rel_name, nline, ncol = take()
            inverse = rel_name.startswith("~")
            if inverse:
                rel_name = rel_name[1:]
            try:
                rel = graph.relation(rel_name)
            except KeyError:
                raise ParseError(f"unknown relation {rel_name!r}", nline, ncol) from None
            child = parse_expr()
            take(")")
            return add(Projection(rel, child, inverse=inverse))
        if head in ("i", "u"):
            children = []
            while peek()[0] == "(":
                children.append(parse_expr())
            take(")")
            if len(children) < 2:
                op = "intersection" if head == "i" else "union"
                raise ParseError(f"{op} needs at least two operands", line, col)
            return add(Intersection(tuple(children)) if head == "i" else UnionOp(tuple(children)))
        if head == "n":
            child = parse_expr()
            take(")")
            return add(Negation(child))
        raise ParseError(f"unknown operator {head!r}", line, col)

    sink = parse_expr()
    if pos != len(tokens):
        tok, line, col = tokens[pos]
        raise ParseError(f"trailing input {tok!r}", line, col)

    order = _topological_order(nodes, sink)
    remap = {old: new for new, old in enumerate(order)}
    remapped: list[QueryNode] = []
    for old in order:
        node = nodes[old]
        if isinstance(node, Projection):
            node = Projection(node.rel, remap[node.child], node.inverse)
        elif isinstance(node, Intersection):
            node = Intersection(tuple(remap[c] for c in node.children))
        elif isinstance(node, UnionOp):
            node = UnionOp(tuple(remap[c] for c in node.children))
        elif isinstance(node, Negation):
            node = Negation(remap[node.child])
        remapped.append(node)

    q = QueryGraph(tuple(remapped), _infer_answer_kind(remapped))
    diags = validate(q, graph)
    if diags:
        raise QueryError("; ".join(diags))
    return q


def _topological_order(nodes: list[QueryNode], sink: int) -> list[int]:
    order: list[int] = []
    seen: set[int] = set()

    def visit(idx: int):
        if idx in seen:
            return
        seen.add(idx)
        node = nodes[idx]
        if isinstance(node, Projection):
            visit(node.child)
        elif isinstance(node, (Intersection, UnionOp)):
            for c in node.children:
                visit(c)
        elif isinstance(node, Negation):
            visit(node.child)
        order.append(idx)

    visit(sink)
    return order


def _infer_answer_kind(nodes: list[QueryNode]) -> AnswerKind:
    q = QueryGraph(tuple(nodes), AnswerKind.ITEM)
    kind = node_kind(q, len(nodes) - 1)
    if kind is VertexKind.ATTRIBUTE:
        return AnswerKind.ATTRIBUTE
    return AnswerKind.ITEM


def render(q: QueryGraph, graph: Graph) -> str:
    """Inverse of parse: emit the DSL text with children in stored order."""

    def rec(idx: int) -> str:
        node = q.nodes[idx]
        if isinstance(node, SessionAnchor):
            names = " ".join(graph.item_names[m] for m in node.members)
            return f"(s {names})"
        if isinstance(node, ItemAnchor):
            return f"(v {graph.item_names[node.vertex]})"
        if isinstance(node, AttributeAnchor):
            return f"(a {graph.attribute_names[node.vertex]})"
        if isinstance(node, Projection):
            rel = graph.relation_names[node.rel]
            if node.inverse:
                rel = "~" + rel
            return f"(p {rel} {rec(node.child)})"
        if isinstance(node, Intersection):
            return "(i " + " ".join(rec(c) for c in node.children) + ")"
        if isinstance(node, UnionOp):
            return "(u " + " ".join(rec(c) for c in node.children) + ")"
        return f"(n {rec(node.child)})"

    return rec(q.sink)


def permute_operands(q: QueryGraph, node_idx: int, order: tuple[int, ...]) -> QueryGraph:
    """Reorder the children tuple of one intersection/union node in place.

    The node list (and hence every node index) is unchanged, so a fixed
    identifier basis still addresses the same nodes.
    """
    node = q.nodes[node_idx]
    if not isinstance(node, (Intersection, UnionOp)):
        raise QueryError(f"node {node_idx} is not an intersection or union")
    if sorted(order) != list(range(len(node.children))):
        raise QueryError(f"order {order} is not a permutation of the children")
    permuted = tuple(node.children[i] for i in order)
    cls = Intersection if isinstance(node, Intersection) else UnionOp
    nodes = list(q.nodes)
    nodes[node_idx] = cls(permuted)
    return QueryGraph(tuple(nodes), q.answer_kind)
