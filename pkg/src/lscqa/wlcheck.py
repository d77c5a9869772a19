"""Executable expressiveness checks on proxy graphs.

A query's N-ary computational graph is rewritten as a binary-edge proxy
graph: session membership becomes position-labeled item->session edges,
and operator wiring becomes relation- or operator-labeled edges.  The
non-relational augmented form replaces every labeled edge with a degree-2
vertex carrying the label, leaving the edges themselves unlabeled.

Color refinement runs with two independent hash functions; if they ever
induce different partitions a collision is flagged.  Exact isomorphism is
decided by enumerating label-class-preserving bijections, feasible for the
small instances used here.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass

import numpy as np

from .query import QueryGraph, validate
from .tokenizer import _OP_NAMES, computation_nodes, logical_edges, session_incidences


class WLError(ValueError):
    pass


class WLCollisionError(WLError):
    pass


@dataclass(frozen=True)
class LabeledGraph:
    """Finite graph with hashable node labels and optional edge labels."""

    n: int
    node_labels: tuple
    edges: frozenset  # (u, v, label) triples; direction matters when directed
    directed: bool = True

    def __post_init__(self):
        for u, v, _ in self.edges:
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise WLError(f"edge endpoint out of range in graph of {self.n} vertices")


def build_proxy(q: QueryGraph) -> LabeledGraph:
    """Binary-edge rewriting of a query's computational graph."""
    diags = validate(q)
    if diags:
        raise WLError("invalid query: " + "; ".join(diags))
    inv = computation_nodes(q)
    labels = []
    for entry in inv.entries:
        if entry[0] == "item":
            labels.append(("item", entry[1]))
        elif entry[0] == "attr":
            labels.append(("attr", entry[1]))
        elif entry[0] == "session":
            labels.append(("session",))
        else:
            labels.append(("op", _OP_NAMES[entry[2]]))
    edges = set()
    for item_node, session_node, pos in session_incidences(q, inv):
        edges.add((item_node, session_node, ("pos", pos)))
    for src, dst, feature in logical_edges(q, inv):
        edges.add((src, dst, feature))
    return LabeledGraph(inv.count, tuple(labels), frozenset(edges), directed=True)


def augment(p: LabeledGraph) -> LabeledGraph:
    """Replace each labeled edge with a label-carrying midpoint vertex."""
    labels = list(p.node_labels)
    edges = set()
    for u, v, label in sorted(p.edges, key=lambda e: (e[0], e[1], repr(e[2]))):
        w = len(labels)
        labels.append(("edge", label))
        edges.add((u, w, None))
        edges.add((w, v, None))
    return LabeledGraph(len(labels), tuple(labels), frozenset(edges), directed=p.directed)


# -- color refinement ---------------------------------------------------------


def _stable_hash(obj, salt: bytes) -> int:
    digest = hashlib.blake2b(repr(obj).encode(), digest_size=8, person=salt).digest()
    return int.from_bytes(digest, "big")


@dataclass(frozen=True)
class ColorHistogram:
    counts: tuple  # sorted (color, multiplicity) pairs
    iterations: int  # round at which the partition stopped refining

    def same_colors(self, other: "ColorHistogram") -> bool:
        return self.counts == other.counts


def _adjacency(g: LabeledGraph):
    out_adj: list[list[tuple[int, object]]] = [[] for _ in range(g.n)]
    in_adj: list[list[tuple[int, object]]] = [[] for _ in range(g.n)]
    for u, v, label in g.edges:
        out_adj[u].append((v, label))
        in_adj[v].append((u, label))
        if not g.directed:
            out_adj[v].append((u, label))
            in_adj[u].append((v, label))
    return out_adj, in_adj


def _partition(colors: list[int]) -> frozenset:
    groups: dict[int, list[int]] = {}
    for node, c in enumerate(colors):
        groups.setdefault(c, []).append(node)
    return frozenset(tuple(v) for v in groups.values())


def wl1(g: LabeledGraph, iterations: int | None = None) -> ColorHistogram:
    """Classic 1-dimensional color refinement with edge labels.

    Runs a fixed number of rounds (|V| by default, enough to stabilize);
    two graphs are comparable when refined for the same number of rounds.
    The reported iteration count is the round at which the partition stopped
    refining.
    """
    iters = g.n if iterations is None else iterations
    out_adj, in_adj = _adjacency(g)

    def refine(colors: list[int], salt: bytes) -> list[int]:
        new = []
        for node in range(g.n):
            outs = sorted((colors[v], repr(lbl)) for v, lbl in out_adj[node])
            ins = sorted((colors[v], repr(lbl)) for v, lbl in in_adj[node]) if g.directed else ()
            new.append(_stable_hash((colors[node], tuple(outs), tuple(ins)), salt))
        return new

    colors = [_stable_hash(("init", lbl), b"wl-a") for lbl in g.node_labels]
    audit = [_stable_hash(("init", lbl), b"wl-b") for lbl in g.node_labels]
    stable_at = None
    prev = _partition(colors)
    for it in range(1, iters + 1):
        colors = refine(colors, b"wl-a")
        audit = refine(audit, b"wl-b")
        if _partition(colors) != _partition(audit):
            raise WLCollisionError("hash collision detected during color refinement")
        part = _partition(colors)
        if part == prev and stable_at is None:
            stable_at = it - 1
        prev = part

    counts: dict[int, int] = {}
    for c in colors:
        counts[c] = counts.get(c, 0) + 1
    return ColorHistogram(tuple(sorted(counts.items())), stable_at if stable_at is not None else iters)


def wl_distinguishes(g1: LabeledGraph, g2: LabeledGraph) -> bool:
    """True when refinement separates the two graphs (hence non-isomorphic)."""
    if g1.n != g2.n or sorted(map(repr, g1.node_labels)) != sorted(map(repr, g2.node_labels)):
        return True
    iters = max(g1.n, g2.n)
    return not wl1(g1, iters).same_colors(wl1(g2, iters))


# -- exact isomorphism --------------------------------------------------------

_ISO_CAP = 12


def isomorphic(g1: LabeledGraph, g2: LabeledGraph) -> bool:
    """Label-preserving exact isomorphism by class-wise permutation search."""
    if max(g1.n, g2.n) > _ISO_CAP:
        raise WLError(f"exact isomorphism capped at {_ISO_CAP} vertices")
    if g1.n != g2.n or len(g1.edges) != len(g2.edges) or g1.directed != g2.directed:
        return False
    iters = max(g1.n, 1)
    try:
        if not wl1(g1, iters).same_colors(wl1(g2, iters)):
            return False
    except WLCollisionError:
        pass  # fall through to exhaustive search

    classes1: dict[str, list[int]] = {}
    classes2: dict[str, list[int]] = {}
    for node in range(g1.n):
        classes1.setdefault(repr(g1.node_labels[node]), []).append(node)
        classes2.setdefault(repr(g2.node_labels[node]), []).append(node)
    if set(classes1) != set(classes2):
        return False
    if any(len(classes1[k]) != len(classes2[k]) for k in classes1):
        return False

    keys = sorted(classes1)
    target_edges = g2.edges

    def assignments(key_idx: int, mapping: dict[int, int]):
        if key_idx == len(keys):
            yield mapping
            return
        key = keys[key_idx]
        src = classes1[key]
        for perm in itertools.permutations(classes2[key]):
            mapping.update(zip(src, perm))
            yield from assignments(key_idx + 1, mapping)

    for mapping in assignments(0, {}):
        ok = True
        for u, v, label in g1.edges:
            mu, mv = mapping[u], mapping[v]
            if g1.directed:
                if (mu, mv, label) not in target_edges:
                    ok = False
                    break
            else:
                if (mu, mv, label) not in target_edges and (mv, mu, label) not in target_edges:
                    ok = False
                    break
        if ok:
            return True
    return False


# -- edge-to-vertex equivalence check -----------------------------------------


@dataclass
class EquivalenceResult:
    trials: int
    agreements: int
    counterexamples: list

    @property
    def passed(self) -> bool:
        return not self.counterexamples

    def summary(self) -> str:
        lines = [f"{self.trials} trials, {len(self.counterexamples)} counterexamples"]
        for g1, g2 in self.counterexamples:
            lines.append(f"  g1 edges: {sorted(g1.edges)}")
            lines.append(f"  g2 edges: {sorted(g2.edges)}")
        return "\n".join(lines)


def random_relational_graph(rng: np.random.Generator, max_nodes: int = 4, max_edges: int = 4) -> LabeledGraph:
    n = int(rng.integers(2, max_nodes + 1))
    labels = ("x",) * n if rng.random() < 0.5 else tuple(
        ("x", "y")[int(rng.integers(2))] for _ in range(n)
    )
    possible = [
        (u, v, f"r{r}") for u in range(n) for v in range(n) if u != v for r in range(3)
    ]
    k = int(rng.integers(1, min(max_edges, len(possible)) + 1))
    picks = rng.choice(len(possible), size=k, replace=False)
    return LabeledGraph(n, labels, frozenset(possible[i] for i in picks), directed=True)


def permuted_copy(g: LabeledGraph, rng: np.random.Generator) -> LabeledGraph:
    perm = rng.permutation(g.n)
    labels = [None] * g.n
    for node in range(g.n):
        labels[perm[node]] = g.node_labels[node]
    edges = frozenset((int(perm[u]), int(perm[v]), label) for u, v, label in g.edges)
    return LabeledGraph(g.n, tuple(labels), edges, directed=g.directed)


def lemma3_check(trials: int, size_bound: int = 8, seed: int = 0) -> EquivalenceResult:
    """Sample small multi-relational graph pairs and check that the original
    graphs are isomorphic exactly when their augmented forms are.

    ``size_bound`` caps the augmented graph size so the exact isomorphism
    search stays feasible.
    """
    if size_bound > _ISO_CAP:
        raise WLError(f"size bound {size_bound} exceeds the exact-isomorphism cap {_ISO_CAP}")
    rng = np.random.default_rng(seed)
    max_nodes = 4
    result = EquivalenceResult(trials=trials, agreements=0, counterexamples=[])
    for _ in range(trials):
        g1 = random_relational_graph(rng, max_nodes, max_edges=size_bound - 2)
        while g1.n + len(g1.edges) > size_bound:
            g1 = random_relational_graph(rng, max_nodes, max_edges=size_bound - 2)
        mode = int(rng.integers(3))
        if mode == 0:
            g2 = permuted_copy(g1, rng)
        elif mode == 1:
            g2 = random_relational_graph(rng, max_nodes, max_edges=size_bound - 2)
            while g2.n + len(g2.edges) > size_bound:
                g2 = random_relational_graph(rng, max_nodes, max_edges=size_bound - 2)
        else:
            edges = sorted(g1.edges)
            u, v, label = edges[int(rng.integers(len(edges)))]
            flipped = f"r{(int(label[1:]) + 1) % 3}"
            new_edges = (frozenset(edges) - {(u, v, label)}) | {(u, v, flipped)}
            g2 = permuted_copy(LabeledGraph(g1.n, g1.node_labels, frozenset(new_edges)), rng)

        plain = isomorphic(g1, g2)
        augmented = isomorphic(augment(g1), augment(g2))
        if plain == augmented:
            result.agreements += 1
        else:
            result.counterexamples.append((g1, g2))
    return result
