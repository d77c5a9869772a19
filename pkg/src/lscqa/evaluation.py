"""Filtered mean-reciprocal-rank evaluation with per-type reports.

Only hard answers are scored: answers present on the later graph but absent
from the earlier one.  Each hard answer is ranked against the full typed
candidate universe with every *other* known answer removed from the pool
(the filtered convention; an unfiltered mode is kept behind a flag).  Ties
are pessimistic: a competitor with an equal score counts as ranked ahead,
so a constant scorer can never beat the random-permutation floor.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import model as M
from .graphstore import SplitGraph, VertexId, VertexKind
from .oracle import SampledQuery
from .query import (
    AnswerKind,
    EPFO_QUERY_TYPES,
    NEGATION_QUERY_TYPES,
    QUERY_TYPES,
)
from .tokenizer import assign_identifiers, tokenize


@dataclass(frozen=True)
class TypeRow:
    mrr: float
    hard_answers: int
    queries: int


@dataclass
class EvalReport:
    rows: dict[str, TypeRow] = field(default_factory=dict)
    epfo_average: float | None = None
    negation_average: float | None = None
    fingerprint: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {
                "rows": {t: [r.mrr, r.hard_answers, r.queries] for t, r in self.rows.items()},
                "epfo_average": self.epfo_average,
                "negation_average": self.negation_average,
                "fingerprint": self.fingerprint,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "EvalReport":
        obj = json.loads(text)
        return EvalReport(
            rows={t: TypeRow(*vals) for t, vals in obj["rows"].items()},
            epfo_average=obj["epfo_average"],
            negation_average=obj["negation_average"],
            fingerprint=obj["fingerprint"],
        )

    def to_tsv(self) -> str:
        types = [t for t in QUERY_TYPES if t in self.rows]
        lines = ["type\tmrr\thard_answers\tqueries"]
        for t in types:
            r = self.rows[t]
            lines.append(f"{t}\t{r.mrr:.4f}\t{r.hard_answers}\t{r.queries}")
        if self.epfo_average is not None:
            lines.append(f"average_epfo\t{self.epfo_average:.4f}\t\t")
        if self.negation_average is not None:
            lines.append(f"average_negation\t{self.negation_average:.4f}\t\t")
        return "\n".join(lines) + "\n"


def _aggregate(rows: dict[str, TypeRow]) -> tuple[float | None, float | None]:
    epfo = [rows[t].mrr for t in rows if t in EPFO_QUERY_TYPES]
    neg = [rows[t].mrr for t in rows if t in NEGATION_QUERY_TYPES]
    return (
        float(np.mean(epfo)) if epfo else None,
        float(np.mean(neg)) if neg else None,
    )


def config_fingerprint(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def reciprocal_rank(scores: np.ndarray, target: int, known: frozenset[int], filtered: bool) -> float:
    """Pessimistic reciprocal rank of one hard answer.

    Competitors are every candidate except the target and (in filtered mode)
    except the other known answers; an equal score counts as ranked ahead.
    """
    mask = np.ones(len(scores), dtype=bool)
    if filtered:
        for k in known:
            mask[k] = False
    mask[target] = False
    rank = 1 + int(np.count_nonzero(scores[mask] >= scores[target]))
    return 1.0 / rank


def _query_mrr(
    scores: np.ndarray,
    sample: SampledQuery,
    split: str,
    filtered: bool,
) -> tuple[float, int] | None:
    hard = sample.answers.hard(split)
    if not hard:
        return None
    if split == "test":
        known = sample.answers.test | sample.answers.valid
    else:
        known = sample.answers.valid | sample.answers.train
    known_idx = frozenset(v.index for v in known)
    values = [
        reciprocal_rank(scores, v.index, known_idx, filtered)
        for v in sorted(hard, key=lambda v: (v.kind.value, v.index))
    ]
    return float(np.mean(values)), len(values)


def _run(
    queries: list[SampledQuery],
    scorer: Callable[[SampledQuery, int], np.ndarray],
    split: str,
    filtered: bool,
    fingerprint: str,
) -> EvalReport:
    per_type: dict[str, list[float]] = {}
    per_type_hard: dict[str, int] = {}
    for idx, sample in enumerate(queries):
        result = _query_mrr(scorer(sample, idx), sample, split, filtered)
        if result is None:
            warnings.warn(f"query {idx} of type {sample.type} has no hard answers; skipped")
            continue
        mrr, hard_count = result
        per_type.setdefault(sample.type, []).append(mrr)
        per_type_hard[sample.type] = per_type_hard.get(sample.type, 0) + hard_count

    rows = {
        t: TypeRow(mrr=float(np.mean(vals)), hard_answers=per_type_hard[t], queries=len(vals))
        for t, vals in per_type.items()
    }
    epfo, neg = _aggregate(rows)
    return EvalReport(rows=rows, epfo_average=epfo, negation_average=neg, fingerprint=fingerprint)


def evaluate(
    params: M.ModelParams,
    queries: list[SampledQuery],
    sg: SplitGraph,
    split: str = "test",
    identifier_seed: int = 1234,
    filtered: bool = True,
    drop_logic_tokens: bool = False,
    drop_session_positions: bool = False,
) -> EvalReport:
    """Model-scored filtered MRR; identifier bases are fixed by one seed."""
    tables = params.tables()
    shared = M.SharedTables(params)

    def scorer(sample: SampledQuery, idx: int) -> np.ndarray:
        seed = int(np.random.SeedSequence([identifier_seed, idx]).generate_state(1)[0])
        basis = assign_identifiers(sample.query, params.config.d2, seed)
        seq = tokenize(
            sample.query,
            basis,
            tables,
            drop_logic_tokens=drop_logic_tokens,
            drop_session_positions=drop_session_positions,
        )
        e_q = M.encode(seq, params, shared)
        return M.full_scores(e_q, sample.query.answer_kind, params).values[0]

    fingerprint = config_fingerprint(
        {
            "kind": "model",
            "split": split,
            "filtered": filtered,
            "identifier_seed": identifier_seed,
            "model": json.loads(params.config.to_json()),
            "drop_logic_tokens": drop_logic_tokens,
            "drop_session_positions": drop_session_positions,
        }
    )
    return _run(queries, scorer, split, filtered, fingerprint)


def random_baseline(
    queries: list[SampledQuery],
    sg: SplitGraph,
    seed: int = 0,
    split: str = "test",
    filtered: bool = True,
) -> EvalReport:
    """Uniform random scores under a fixed seed: the calibration floor."""
    rng = np.random.default_rng(seed)
    n_items = len(sg.test.item_names)
    n_attrs = len(sg.test.attribute_names)

    def scorer(sample: SampledQuery, idx: int) -> np.ndarray:
        n = n_items if sample.query.answer_kind is AnswerKind.ITEM else n_attrs
        return rng.uniform(size=n)

    fingerprint = config_fingerprint(
        {"kind": "random", "split": split, "filtered": filtered, "seed": seed}
    )
    return _run(queries, scorer, split, filtered, fingerprint)


def merge_reports_tsv(named_reports: list[tuple[str, EvalReport]]) -> str:
    """One row per report, one column per query type, mirroring the usual
    per-type result tables plus the two averages."""
    types = [t for t in QUERY_TYPES if any(t in rep.rows for _, rep in named_reports)]
    header = ["report"] + types + ["average_epfo", "average_negation"]
    lines = ["\t".join(header)]
    for name, rep in named_reports:
        cells = [name]
        for t in types:
            cells.append(f"{rep.rows[t].mrr:.4f}" if t in rep.rows else "-")
        cells.append(f"{rep.epfo_average:.4f}" if rep.epfo_average is not None else "-")
        cells.append(f"{rep.negation_average:.4f}" if rep.negation_average is not None else "-")
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"
