"""Training loop: decoupled-weight-decay adaptive moments, linear warmup,
per-step identifier resampling, checkpointing, and a loss curve.

Identifier bases are redrawn every step from a seed derived from
(run seed, step, slot), which makes the run reproducible while acting as a
data augmentation over the random node identifiers.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, asdict

import numpy as np

from . import model as M
from . import tensor as T
from .graphstore import VertexId
from .oracle import SampledQuery
from .tokenizer import assign_identifiers, tokenize

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 3e-4
    warmup_steps: int = 100
    total_steps: int = 2000
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 500
    log_every: int = 50
    drop_logic_tokens: bool = False
    drop_session_positions: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.warmup_steps > self.total_steps:
            raise ValueError("warmup must not exceed total steps")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "TrainConfig":
        return TrainConfig(**json.loads(text))


class AdamW:
    """Adaptive moments with decoupled weight decay; the decay is scaled by
    the live learning rate so a zero rate leaves parameters untouched."""

    def __init__(self, params: dict[str, T.Tensor], config: TrainConfig):
        self.params = params
        self.config = config
        self.step_count = 0
        self.m = {name: np.zeros_like(t.values) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.values) for name, t in params.items()}

    def rate(self) -> float:
        c = self.config
        if c.warmup_steps > 0 and self.step_count < c.warmup_steps:
            return c.learning_rate * (self.step_count + 1) / c.warmup_steps
        return c.learning_rate

    def step(self) -> None:
        c = self.config
        lr = self.rate()
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - c.beta1**t
        bias2 = 1.0 - c.beta2**t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = c.beta1 * self.m[name] + (1 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1 - c.beta2) * g * g
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            p.values -= lr * (m_hat / (np.sqrt(v_hat) + c.epsilon) + c.weight_decay * p.values)


@dataclass
class TrainResult:
    loss_curve: list[tuple[int, float]]
    checkpoints: dict[int, dict[str, np.ndarray]]
    final_step: int
    diverged: bool = False


def identifier_seed(run_seed: int, step: int, slot: int) -> int:
    """Stable per-example identifier seed, independent of batch assembly order."""
    ss = np.random.SeedSequence([run_seed, step, slot])
    return int(ss.generate_state(1)[0])


def train_pairs(queries: list[SampledQuery]) -> dict[str, list[tuple[SampledQuery, VertexId]]]:
    """Positive pairs per (query, train answer), grouped by query type.

    Batches draw the type first, uniformly, so rare types (few distinct
    instances) are not drowned out by types with many."""
    pairs: dict[str, list[tuple[SampledQuery, VertexId]]] = {}
    for q in queries:
        for v in sorted(q.answers.train, key=lambda v: (v.kind.value, v.index)):
            pairs.setdefault(q.type, []).append((q, v))
    return pairs


def train(
    config: TrainConfig,
    queries: list[SampledQuery],
    params: M.ModelParams,
) -> TrainResult:
    """Optimize params in place over sampled training queries."""
    by_type = train_pairs(queries)
    if not by_type:
        raise TrainingError("no training pairs: every query needs a non-empty train answer set")
    type_names = sorted(by_type)

    rng = np.random.default_rng(config.seed)
    opt = AdamW(params.tensors, config)
    curve: list[tuple[int, float]] = []
    checkpoints: dict[int, dict[str, np.ndarray]] = {}
    last_good = {name: t.values.copy() for name, t in params.tensors.items()}

    for step in range(config.total_steps):
        type_picks = rng.integers(len(type_names), size=config.batch_size)
        tables = params.tables()
        batch = []
        for slot, type_pick in enumerate(type_picks):
            pool = by_type[type_names[int(type_pick)]]
            sample, answer_vertex = pool[int(rng.integers(len(pool)))]
            basis = assign_identifiers(
                sample.query, params.config.d2, identifier_seed(config.seed, step, slot)
            )
            seq = tokenize(
                sample.query,
                basis,
                tables,
                drop_logic_tokens=config.drop_logic_tokens,
                drop_session_positions=config.drop_session_positions,
            )
            batch.append((seq, answer_vertex))

        params.zero_grads()
        loss_t = M.loss(batch, params)
        loss_value = float(loss_t.values)
        if not np.isfinite(loss_value):
            logger.error("loss diverged at step %d; restoring last checkpoint", step)
            for name, values in last_good.items():
                params.tensors[name].values = values.copy()
            return TrainResult(curve, checkpoints, step, diverged=True)
        T.backward(loss_t)
        opt.step()

        if step % config.log_every == 0 or step == config.total_steps - 1:
            curve.append((step, loss_value))
            logger.info("step %d loss %.4f", step, loss_value)
        if config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            snapshot = {name: t.values.copy() for name, t in params.tensors.items()}
            checkpoints[step + 1] = snapshot
            last_good = snapshot

    return TrainResult(curve, checkpoints, config.total_steps)


def loss_curve_tsv(curve: list[tuple[int, float]]) -> str:
    return "\n".join(f"{step}\t{value:.6f}" for step, value in curve) + "\n"
