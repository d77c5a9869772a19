"""Dense float64 tensors with reverse-mode differentiation.

Each primitive computes its forward value eagerly with numpy and, when any
input requires gradients, records a backward closure on the implicit tape
(the operand DAG).  ``backward`` replays the tape once in reverse
topological order.  All reductions use numpy's fixed index-ascending
order, so identical inputs give bit-identical outputs on one platform.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

_LN_EPS = 1e-12
_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

_ids = itertools.count()


class TensorError(ValueError):
    pass


class Tensor:
    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward_fn", "_id", "_backward_done")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self._id = next(_ids)
        self._backward_done = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


def _result(values: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = values
    needs = False
    for p in parents:
        if p.requires_grad:
            needs = True
            break
    out.requires_grad = needs
    out.grad = None
    out._parents = parents if needs else ()
    out._backward_fn = backward_fn if needs else None
    out._id = next(_ids)
    out._backward_done = False
    return out


def _accumulate(t: Tensor, piece: np.ndarray):
    # piece may alias an upstream gradient, so the first write copies
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(piece)
    else:
        t.grad += piece


@dataclass
class Tape:
    """Reverse-topological schedule over the operand DAG of one scalar."""

    nodes: list[Tensor]


def trace(root: Tensor) -> Tape:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node._id in seen:
            continue
        seen.add(node._id)
        stack.append((node, True))
        for p in node._parents:
            if p._id not in seen:
                stack.append((p, False))
    return Tape(order)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires-grad tensor reachable from loss."""
    if loss.values.size != 1:
        raise TensorError(f"backward needs a scalar, got shape {loss.values.shape}")
    if loss._backward_done:
        raise TensorError("backward already ran on this tensor; call reset_backward first")
    if not loss.requires_grad:
        raise TensorError("loss does not depend on any tensor that requires gradients")
    tape = trace(loss)
    loss.grad = np.ones_like(loss.values)
    for node in reversed(tape.nodes):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)
    loss._backward_done = True


def reset_backward(loss: Tensor) -> None:
    loss._backward_done = False
    for node in trace(loss).nodes:
        node.grad = None


# -- primitives ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    bv = b.values.T if transpose_b else b.values
    if a.values.ndim != 2 or bv.ndim != 2 or a.values.shape[1] != bv.shape[0]:
        raise TensorError(f"matmul shape mismatch: {a.values.shape} @ {bv.shape}")
    values = a.values @ bv

    def bw(g):
        if transpose_b:
            if a.requires_grad:
                _accumulate(a, g @ b.values)
            if b.requires_grad:
                _accumulate(b, g.T @ a.values)
        else:
            if a.requires_grad:
                _accumulate(a, g @ b.values.T)
            if b.requires_grad:
                _accumulate(b, a.values.T @ g)

    return _result(values, (a, b), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a row vector added to every matrix row."""
    row_broadcast = (
        a.values.ndim == 2 and b.values.ndim == 1 and a.values.shape[1] == b.values.shape[0]
    )
    if not row_broadcast and a.values.shape != b.values.shape:
        raise TensorError(f"add shape mismatch: {a.values.shape} + {b.values.shape}")
    values = a.values + b.values

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, g.sum(axis=0) if row_broadcast else g)

    return _result(values, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    values = a.values * c

    def bw(g):
        _accumulate(a, g * c)

    return _result(values, (a,), bw)


def concat_rows(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise TensorError("concat_rows of nothing")
    widths = {p.values.shape[1] for p in parts if p.values.ndim == 2}
    if any(p.values.ndim != 2 for p in parts) or len(widths) != 1:
        raise TensorError(f"concat_rows needs matrices of equal width, got {[p.values.shape for p in parts]}")
    values = np.concatenate([p.values for p in parts], axis=0)
    offsets = np.cumsum([0] + [p.values.shape[0] for p in parts])

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, g[lo:hi])

    return _result(values, tuple(parts), bw)


def concat_cols(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise TensorError("concat_cols of nothing")
    heights = {p.values.shape[0] for p in parts if p.values.ndim == 2}
    if any(p.values.ndim != 2 for p in parts) or len(heights) != 1:
        raise TensorError(f"concat_cols needs matrices of equal height, got {[p.values.shape for p in parts]}")
    values = np.concatenate([p.values for p in parts], axis=1)
    offsets = np.cumsum([0] + [p.values.shape[1] for p in parts])

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, g[:, lo:hi])

    return _result(values, tuple(parts), bw)


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    if a.values.ndim != 2 or not (0 <= lo < hi <= a.values.shape[1]):
        raise TensorError(f"slice_cols [{lo}:{hi}] invalid for shape {a.values.shape}")
    values = a.values[:, lo:hi].copy()

    def bw(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.values)
            a.grad[:, lo:hi] += g

    return _result(values, (a,), bw)


def gather_rows(table: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    if table.values.ndim != 2:
        raise TensorError(f"gather_rows needs a matrix, got shape {table.values.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.values.shape[0]):
        raise TensorError(f"gather_rows index out of range for table with {table.values.shape[0]} rows")
    values = table.values[idx]

    def bw(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.values)
            np.add.at(table.grad, idx, g)

    return _result(values, (table,), bw)


def softmax_rows(a: Tensor) -> Tensor:
    x = a.values if a.values.ndim == 2 else a.values.reshape(1, -1)
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    values = y if a.values.ndim == 2 else y.reshape(a.values.shape)

    def bw(g):
        g2 = g.reshape(y.shape)
        inner = (g2 * y).sum(axis=1, keepdims=True)
        _accumulate(a, (y * (g2 - inner)).reshape(a.values.shape))

    return _result(values, (a,), bw)


def layernorm_rows(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Per-row standardization followed by a learned affine map."""
    if x.values.ndim != 2:
        raise TensorError(f"layernorm_rows needs a matrix, got shape {x.values.shape}")
    d = x.values.shape[1]
    if gain.values.shape != (d,) or bias.values.shape != (d,):
        raise TensorError(f"layernorm affine shapes {gain.values.shape}/{bias.values.shape} do not match width {d}")
    mu = x.values.mean(axis=1, keepdims=True)
    var = x.values.var(axis=1, keepdims=True)
    sigma = np.sqrt(var + _LN_EPS)
    xhat = (x.values - mu) / sigma
    values = xhat * gain.values + bias.values

    def bw(g):
        _accumulate(bias, g.sum(axis=0))
        _accumulate(gain, (g * xhat).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gain.values
            term = dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
            _accumulate(x, term / sigma)

    return _result(values, (x, gain, bias), bw)


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-error linear unit, x * Phi(x)."""
    phi_cdf = 0.5 * (1.0 + erf(x.values * _INV_SQRT2))
    values = x.values * phi_cdf

    def bw(g):
        pdf = np.exp(-0.5 * x.values * x.values) * _INV_SQRT_2PI
        _accumulate(x, g * (phi_cdf + x.values * pdf))

    return _result(values, (x,), bw)


def mean(x: Tensor) -> Tensor:
    values = np.array(x.values.mean())

    def bw(g):
        _accumulate(x, np.full_like(x.values, float(g) / x.values.size))

    return _result(values, (x,), bw)


def cross_entropy_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean negative log softmax probability of the target column per row."""
    t = np.asarray(targets, dtype=np.intp)
    x = logits.values
    if x.ndim != 2 or t.ndim != 1 or t.shape[0] != x.shape[0]:
        raise TensorError(f"cross entropy shapes: logits {x.shape}, targets {t.shape}")
    if t.size == 0:
        raise TensorError("cross entropy over an empty batch")
    m = x.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=1))
    values = np.array((lse - x[np.arange(len(t)), t]).mean())

    def bw(g):
        if logits.requires_grad:
            soft = np.exp(x - m)
            soft /= soft.sum(axis=1, keepdims=True)
            soft[np.arange(len(t)), t] -= 1.0
            _accumulate(logits, soft * (float(g) / len(t)))

    return _result(values, (logits,), bw)


def multihead_attention(
    x: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    heads: int,
    blocks: list[tuple[int, int]] | None = None,
) -> Tensor:
    """Fused scaled-dot-product self-attention.

    The projection matrices pack all heads along columns.  ``blocks`` lists
    half-open row ranges that attend only within themselves (independent
    sequences stacked into one matrix); None means one block over all rows.
    One tape entry with a hand-derived backward keeps per-call overhead flat;
    the result is numerically identical to slicing heads and blocks apart and
    composing matmul/softmax primitives.
    """
    t_len, d_model = x.values.shape
    if d_model % heads:
        raise TensorError(f"width {d_model} not divisible by {heads} heads")
    for name, w in (("wq", wq), ("wk", wk), ("wv", wv), ("wo", wo)):
        if w.values.shape != (d_model, d_model):
            raise TensorError(f"{name} must be {d_model}x{d_model}, got {w.values.shape}")
    if blocks is None:
        blocks = [(0, t_len)]
    covered = sorted(blocks)
    if covered[0][0] != 0 or covered[-1][1] != t_len or any(
        covered[i][1] != covered[i + 1][0] for i in range(len(covered) - 1)
    ):
        raise TensorError(f"blocks {blocks} do not tile {t_len} rows")
    d_head = d_model // heads
    inv_sqrt = 1.0 / np.sqrt(d_head)

    def split(m: np.ndarray) -> np.ndarray:
        return m.reshape(m.shape[0], heads, d_head).transpose(1, 0, 2)

    q_all = x.values @ wq.values
    k_all = x.values @ wk.values
    v_all = x.values @ wv.values
    merged = np.empty((t_len, d_model))
    att_blocks = []
    for lo, hi in blocks:
        q, k, v = split(q_all[lo:hi]), split(k_all[lo:hi]), split(v_all[lo:hi])
        scores = np.matmul(q, k.transpose(0, 2, 1)) * inv_sqrt
        scores -= scores.max(axis=2, keepdims=True)
        att = np.exp(scores)
        att /= att.sum(axis=2, keepdims=True)
        att_blocks.append(att)
        merged[lo:hi] = np.matmul(att, v).transpose(1, 0, 2).reshape(hi - lo, d_model)
    values = merged @ wo.values

    def bw(g):
        _accumulate(wo, merged.T @ g)
        d_merged_all = g @ wo.values.T
        dq_all = np.empty_like(q_all)
        dk_all = np.empty_like(k_all)
        dv_all = np.empty_like(v_all)
        for (lo, hi), att in zip(blocks, att_blocks):
            n = hi - lo
            q, k, v = split(q_all[lo:hi]), split(k_all[lo:hi]), split(v_all[lo:hi])
            d_merged = split(d_merged_all[lo:hi])
            d_att = np.matmul(d_merged, v.transpose(0, 2, 1))
            d_v = np.matmul(att.transpose(0, 2, 1), d_merged)
            d_scores = att * (d_att - (d_att * att).sum(axis=2, keepdims=True))
            d_scores *= inv_sqrt
            d_q = np.matmul(d_scores, k)
            d_k = np.matmul(d_scores.transpose(0, 2, 1), q)
            dq_all[lo:hi] = d_q.transpose(1, 0, 2).reshape(n, d_model)
            dk_all[lo:hi] = d_k.transpose(1, 0, 2).reshape(n, d_model)
            dv_all[lo:hi] = d_v.transpose(1, 0, 2).reshape(n, d_model)
        _accumulate(wq, x.values.T @ dq_all)
        _accumulate(wk, x.values.T @ dk_all)
        _accumulate(wv, x.values.T @ dv_all)
        if x.requires_grad:
            _accumulate(x, dq_all @ wq.values.T + dk_all @ wk.values.T + dv_all @ wv.values.T)

    return _result(values, (x, wq, wk, wv, wo), bw)


# -- checkpoints -------------------------------------------------------------


def save_arrays(path, named: dict[str, Tensor]) -> None:
    np.savez(path, **{name: t.values for name, t in named.items()})


def load_arrays(path) -> dict[str, np.ndarray]:
    with np.load(path) as data:
        return {name: data[name].astype(np.float64) for name in data.files}
