"""Set-style transformer encoder over query token sequences.

Tokens are projected to the model width and passed through pre-layernorm
encoder layers with multi-head attention and a GELU feed-forward block.  No
sequence-position information is ever added, so the computation is a
function of the token multiset up to floating-point summation order.  The
output at the whole-graph token, mapped through the answer projection, is
the query embedding; candidates are scored by inner product against the
item or attribute embedding table.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .graphstore import VertexId, VertexKind
from .query import AnswerKind
from .tokenizer import EmbeddingTables, TokenSequence

logger = logging.getLogger(__name__)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d1: int = 64  # feature / embedding width
    d2: int = 24  # identifier width
    d3: int = 16  # token type width
    d_model: int = 128
    layers: int = 2
    heads: int = 4
    ffn: int = 256
    max_positions: int = 20
    max_tokens: int = 256

    @property
    def token_width(self) -> int:
        return self.d1 + 2 * self.d2 + self.d3

    @property
    def d_head(self) -> int:
        if self.d_model % self.heads:
            raise ModelError(f"d_model {self.d_model} not divisible by {self.heads} heads")
        return self.d_model // self.heads

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ModelConfig":
        return ModelConfig(**json.loads(text))


@dataclass
class ModelParams:
    """Named parameter tensors.  The name registry is stable:

    item_emb, attr_emb, op_emb, rel_emb, pos_emb, type_emb, graph_token,
    input_w, input_b,
    layer{i}.ln1_g/ln1_b, layer{i}.wq/wk/wv/wo (heads packed along columns),
    layer{i}.attn_b, layer{i}.ln2_g/ln2_b,
    layer{i}.ffn_w1/ffn_b1/ffn_w2/ffn_b2,
    answer_w, answer_b
    """

    config: ModelConfig
    n_items: int
    n_attributes: int
    n_relations: int
    tensors: dict[str, T.Tensor] = field(default_factory=dict)

    def __post_init__(self):
        if self.config.d_model % self.config.heads:
            raise ModelError(
                f"d_model {self.config.d_model} not divisible by {self.config.heads} heads"
            )

    def __getitem__(self, name: str) -> T.Tensor:
        return self.tensors[name]

    def count(self) -> int:
        return sum(t.values.size for t in self.tensors.values())

    def tables(self) -> EmbeddingTables:
        return EmbeddingTables(
            item=self.tensors["item_emb"].values,
            attribute=self.tensors["attr_emb"].values,
            operator=self.tensors["op_emb"].values,
            relation=self.tensors["rel_emb"].values,
            pos=self.tensors["pos_emb"].values,
            type=self.tensors["type_emb"].values,
            graph_token=self.tensors["graph_token"].values[0],
        )

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.grad = None


def init_params(
    config: ModelConfig,
    n_items: int,
    n_attributes: int,
    n_relations: int,
    seed: int = 0,
) -> ModelParams:
    rng = np.random.default_rng(seed)
    params = ModelParams(config, n_items, n_attributes, n_relations)

    def param(name: str, shape: tuple[int, ...], std: float | None = None, value: float | None = None):
        if value is not None:
            data = np.full(shape, value)
        else:
            fan_in = shape[0] if len(shape) == 2 else shape[-1]
            data = rng.standard_normal(shape) * (std if std is not None else 1.0 / np.sqrt(fan_in))
        params.tensors[name] = T.Tensor(data, requires_grad=True)

    c = config
    param("item_emb", (n_items, c.d1), std=0.1)
    param("attr_emb", (n_attributes, c.d1), std=0.1)
    param("op_emb", (5, c.d1), std=0.1)
    param("rel_emb", (2 * n_relations, c.d1), std=0.1)
    param("pos_emb", (c.max_positions, c.d1), std=0.1)
    param("type_emb", (2, c.d3), std=0.1)
    param("graph_token", (1, c.token_width), std=0.1)
    param("input_w", (c.token_width, c.d_model))
    param("input_b", (c.d_model,), value=0.0)
    for i in range(c.layers):
        param(f"layer{i}.ln1_g", (c.d_model,), value=1.0)
        param(f"layer{i}.ln1_b", (c.d_model,), value=0.0)
        param(f"layer{i}.wq", (c.d_model, c.d_model))
        param(f"layer{i}.wk", (c.d_model, c.d_model))
        param(f"layer{i}.wv", (c.d_model, c.d_model))
        param(f"layer{i}.wo", (c.d_model, c.d_model))
        param(f"layer{i}.attn_b", (c.d_model,), value=0.0)
        param(f"layer{i}.ln2_g", (c.d_model,), value=1.0)
        param(f"layer{i}.ln2_b", (c.d_model,), value=0.0)
        param(f"layer{i}.ffn_w1", (c.d_model, c.ffn))
        param(f"layer{i}.ffn_b1", (c.ffn,), value=0.0)
        param(f"layer{i}.ffn_w2", (c.ffn, c.d_model))
        param(f"layer{i}.ffn_b2", (c.d_model,), value=0.0)
    param("answer_w", (c.d_model, c.d1))
    param("answer_b", (c.d1,), value=0.0)

    logger.info("model parameters: %d", params.count())
    return params


# -- token assembly ----------------------------------------------------------


class SharedTables:
    """Per-forward concatenation of the feature tables (plus a zero row) so
    each query needs a single gather.  Rebuilt whenever parameters change."""

    def __init__(self, params: ModelParams):
        c = params.config
        self.features = T.concat_rows(
            [
                params["item_emb"],
                params["attr_emb"],
                params["op_emb"],
                params["rel_emb"],
                params["pos_emb"],
                T.Tensor(np.zeros((1, c.d1))),
            ]
        )
        n_items = params.n_items
        n_attrs = params.n_attributes
        self.off_attr = n_items
        self.off_op = n_items + n_attrs
        self.off_rel = self.off_op + 5
        self.off_pos = self.off_rel + 2 * params.n_relations
        self.zero_row = self.off_pos + c.max_positions
        self.types = T.concat_rows([params["type_emb"], T.Tensor(np.zeros((1, c.d3)))])
        self.zero_type = 2

    def feature_row(self, src: tuple) -> int:
        kind = src[0]
        if kind == "item":
            return src[1]
        if kind == "attr":
            return self.off_attr + src[1]
        if kind == "op":
            return self.off_op + src[1]
        if kind == "rel":
            return self.off_rel + 2 * src[1] + (1 if src[2] else 0)
        if kind == "pos":
            return self.off_pos + src[1]
        if kind in ("zero", "graph"):
            return self.zero_row
        raise ModelError(f"unknown feature source {src}")


def _token_stack(seqs: list[TokenSequence], params: ModelParams, shared: SharedTables) -> tuple[T.Tensor, list[tuple[int, int]], list[int]]:
    """Stack every sequence's token matrix into one tall differentiable
    matrix.  Returns the matrix, per-sequence row ranges, and the absolute
    row of each sequence's whole-graph token."""
    c = params.config
    feature_rows: list[int] = []
    type_rows: list[int] = []
    id_blocks: list[np.ndarray] = []
    graph_rows: list[int] = []
    blocks: list[tuple[int, int]] = []
    offset = 0
    for seq in seqs:
        if len(seq.tokens) > c.max_tokens:
            raise ModelError(f"sequence of {len(seq.tokens)} tokens exceeds limit {c.max_tokens}")
        d2 = seq.basis.P.shape[1]
        if c.d1 + 2 * d2 + c.d3 != c.token_width:
            raise ModelError(
                f"identifier width {d2} does not match configured token width {c.token_width}"
            )
        n_tok = len(seq.tokens)
        ids = np.zeros((n_tok, 2 * d2))
        rows, srcs, dsts = [], [], []
        for pos, tok in enumerate(seq.tokens):
            feature_rows.append(shared.feature_row(tok.feature_src))
            if tok.provenance[0] == "graph":
                type_rows.append(shared.zero_type)
                graph_rows.append(offset + pos)
                continue
            type_rows.append(tok.type_idx)
            rows.append(pos)
            srcs.append(tok.src)
            dsts.append(tok.dst)
        ids[rows, :d2] = seq.basis.P[srcs]
        ids[rows, d2:] = seq.basis.P[dsts]
        id_blocks.append(ids)
        blocks.append((offset, offset + n_tok))
        offset += n_tok

    total = offset
    x = T.concat_cols(
        [
            T.gather_rows(shared.features, feature_rows),
            T.Tensor(np.concatenate(id_blocks, axis=0)),
            T.gather_rows(shared.types, type_rows),
        ]
    )
    graph_scatter = np.zeros((total, 1))
    graph_scatter[graph_rows, 0] = 1.0
    x = T.add(x, T.matmul(T.Tensor(graph_scatter), params["graph_token"]))
    return x, blocks, graph_rows


def _encoder_layer(h: T.Tensor, params: ModelParams, i: int, blocks: list[tuple[int, int]]) -> T.Tensor:
    c = params.config
    normed = T.layernorm_rows(h, params[f"layer{i}.ln1_g"], params[f"layer{i}.ln1_b"])
    attn = T.multihead_attention(
        normed,
        params[f"layer{i}.wq"],
        params[f"layer{i}.wk"],
        params[f"layer{i}.wv"],
        params[f"layer{i}.wo"],
        c.heads,
        blocks=blocks,
    )
    h = T.add(h, T.add(attn, params[f"layer{i}.attn_b"]))

    normed = T.layernorm_rows(h, params[f"layer{i}.ln2_g"], params[f"layer{i}.ln2_b"])
    up = T.gelu(T.add(T.matmul(normed, params[f"layer{i}.ffn_w1"]), params[f"layer{i}.ffn_b1"]))
    down = T.add(T.matmul(up, params[f"layer{i}.ffn_w2"]), params[f"layer{i}.ffn_b2"])
    return T.add(h, down)


def encode_batch(seqs: list[TokenSequence], params: ModelParams, shared: SharedTables | None = None) -> T.Tensor:
    """Query embeddings (len(seqs) x d1), one row per sequence.

    Sequences are stacked into one tall matrix; attention is confined to
    per-sequence blocks and every other stage is row-wise, so the result
    per sequence is independent of what else shares the batch.
    """
    if shared is None:
        shared = SharedTables(params)
    x, blocks, graph_rows = _token_stack(seqs, params, shared)
    h = T.add(T.matmul(x, params["input_w"]), params["input_b"])
    for i in range(params.config.layers):
        h = _encoder_layer(h, params, i, blocks)
    readout = T.gather_rows(h, graph_rows)
    return T.add(T.matmul(readout, params["answer_w"]), params["answer_b"])


def encode(seq: TokenSequence, params: ModelParams, shared: SharedTables | None = None) -> T.Tensor:
    """Query embedding (1 x d1) read out at the whole-graph token.

    Pass a prebuilt ``SharedTables`` when encoding many sequences against
    unchanged parameters.
    """
    return encode_batch([seq], params, shared)


def encode_vector(seq: TokenSequence, params: ModelParams) -> np.ndarray:
    return encode(seq, params).values[0].copy()


def _candidate_table(params: ModelParams, kind: AnswerKind) -> T.Tensor:
    return params["item_emb"] if kind is AnswerKind.ITEM else params["attr_emb"]


def score(e_q: T.Tensor, candidates: list[VertexId], params: ModelParams) -> T.Tensor:
    """Inner-product scores of the query embedding against candidate rows."""
    kinds = {v.kind for v in candidates}
    if len(kinds) != 1:
        raise ModelError(f"candidates mix vertex kinds: {sorted(k.value for k in kinds)}")
    if kinds == {VertexKind.SESSION}:
        raise ModelError("sessions cannot be scored as answers")
    kind = AnswerKind.ITEM if kinds == {VertexKind.ITEM} else AnswerKind.ATTRIBUTE
    table = _candidate_table(params, kind)
    rows = T.gather_rows(table, [v.index for v in candidates])
    return T.matmul(e_q, rows, transpose_b=True)


def full_scores(e_q: T.Tensor, kind: AnswerKind, params: ModelParams) -> T.Tensor:
    """Scores against the whole typed candidate universe, shape (1, N)."""
    return T.matmul(e_q, _candidate_table(params, kind), transpose_b=True)


def loss(batch: list[tuple[TokenSequence, VertexId]], params: ModelParams) -> T.Tensor:
    """Mean negative log probability of the answers under a softmax over the
    typed candidate universe of each query."""
    if not batch:
        raise ModelError("empty batch")
    embeddings = encode_batch([seq for seq, _ in batch], params)

    grouped: dict[AnswerKind, tuple[list[int], list[int]]] = {}
    for row, (_, answer_vertex) in enumerate(batch):
        kind = AnswerKind.ITEM if answer_vertex.kind is VertexKind.ITEM else AnswerKind.ATTRIBUTE
        rows, targets = grouped.setdefault(kind, ([], []))
        rows.append(row)
        targets.append(answer_vertex.index)

    total = None
    for kind, (rows, targets) in sorted(grouped.items(), key=lambda kv: kv[0].value):
        group = embeddings if len(rows) == len(batch) else T.gather_rows(embeddings, rows)
        logits = T.matmul(group, _candidate_table(params, kind), transpose_b=True)
        ce = T.cross_entropy_with_logits(logits, targets)
        weighted = T.scale(ce, len(targets) / len(batch))
        total = weighted if total is None else T.add(total, weighted)
    return total


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(path, params: ModelParams) -> None:
    arrays = {name: t.values for name, t in params.tensors.items()}
    meta = dict(
        config=json.loads(params.config.to_json()),
        n_items=params.n_items,
        n_attributes=params.n_attributes,
        n_relations=params.n_relations,
    )
    np.savez(path, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> ModelParams:
    with np.load(path) as data:
        meta = json.loads(str(data["__meta__"]))
        config = ModelConfig(**meta["config"])
        params = ModelParams(config, meta["n_items"], meta["n_attributes"], meta["n_relations"])
        for name in data.files:
            if name == "__meta__":
                continue
            params.tensors[name] = T.Tensor(data[name], requires_grad=True)
    return params
