"""Logical session complex query answering workbench.

Build a session/item/attribute hypergraph, pose first-order logical queries
over it, answer them exactly with a set-semantics oracle, encode them with a
tokenized graph transformer trained from scratch, evaluate with filtered
mean reciprocal rank, and verify the encoder's structural properties with
color-refinement checks.
"""

from .graphstore import (
    DESIRES,
    Graph,
    GraphError,
    IngestConfig,
    IngestError,
    SessionEdge,
    SplitGraph,
    SplitManifest,
    TripleEdge,
    VertexId,
    VertexKind,
    ingest,
    split_edges,
    split_from_manifest,
)
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
    QueryError,
    RelSpec,
    SessionAnchor,
    SessionSpec,
    UnionOp,
    QUERY_TYPES,
    TRAIN_QUERY_TYPES,
    OOD_QUERY_TYPES,
    parse,
    render,
    template,
    validate,
)
from .oracle import AnswerSets, SampledQuery, answer, answer_on_splits, sample
from .tokenizer import (
    EmbeddingTables,
    NodeIdentifierBasis,
    Token,
    TokenSequence,
    assign_identifiers,
    tokenize,
)
from .model import ModelConfig, ModelParams, encode, init_params, loss, score
from .training import AdamW, TrainConfig, train
from .evaluation import EvalReport, evaluate, random_baseline
from .wlcheck import LabeledGraph, augment, build_proxy, isomorphic, lemma3_check, wl1

__version__ = "0.1.0"
