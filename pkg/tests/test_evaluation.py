"""Filtered reciprocal-rank arithmetic, tie pessimism, filtering monotonicity,
and the random-ranker calibration floor."""

import warnings

import numpy as np
import pytest

from lscqa import model as M
from lscqa import evaluation, oracle
from lscqa.evaluation import (
    EvalReport,
    TypeRow,
    evaluate,
    merge_reports_tsv,
    random_baseline,
    reciprocal_rank,
)
from lscqa.graphstore import IngestConfig, VertexId, VertexKind, ingest, split_edges


def ingest_config_long(n_items: int) -> IngestConfig:
    return IngestConfig(max_session_len=max(20, n_items))
from lscqa.oracle import AnswerSets, SampledQuery
from lscqa.query import AnswerKind, SessionSpec, template


def harmonic(n: int) -> float:
    return sum(1.0 / k for k in range(1, n + 1))


def item(i: int) -> VertexId:
    return VertexId(VertexKind.ITEM, i)


def make_sample(tag: str, n_members: tuple[int, ...], test_answers, valid_answers=(), train_answers=(), index=0):
    q = template(tag, [SessionSpec(n_members)])
    return SampledQuery(
        query=q,
        type=tag,
        answers=AnswerSets(
            train=frozenset(item(i) for i in train_answers),
            valid=frozenset(item(i) for i in valid_answers),
            test=frozenset(item(i) for i in test_answers),
        ),
        seed=0,
        index=index,
    )


class TestReciprocalRank:
    def test_rank_two_contributes_half(self):
        scores = np.array([0.9, 0.5, 0.1, 0.0])
        assert reciprocal_rank(scores, target=1, known=frozenset({1}), filtered=True) == 0.5

    def test_filtering_removes_known_answers(self):
        scores = np.array([0.9, 0.5, 0.8, 0.0])
        # competitor 2 is a known answer: filtered rank improves from 3 to 2
        unfiltered = reciprocal_rank(scores, 1, frozenset({1, 2}), filtered=False)
        filtered = reciprocal_rank(scores, 1, frozenset({1, 2}), filtered=True)
        assert unfiltered == pytest.approx(1 / 3)
        assert filtered == pytest.approx(1 / 2)

    def test_pessimistic_ties(self):
        scores = np.zeros(10)
        assert reciprocal_rank(scores, 0, frozenset({0}), filtered=True) == pytest.approx(1 / 10)

    def test_candidate_order_invariance(self):
        rng = np.random.default_rng(0)
        scores = rng.uniform(size=30)
        known = frozenset({4, 7})
        base = reciprocal_rank(scores, 4, known, True)
        perm = rng.permutation(30)
        inv = np.empty(30, dtype=int)
        inv[perm] = np.arange(30)
        assert reciprocal_rank(scores[perm], int(inv[4]), frozenset(int(inv[k]) for k in known), True) == base


class TestEq5Arithmetic:
    """Hand-computed metric values on a scripted fixture."""

    def _report_for(self, scores_by_index, samples, n_items=10):
        def scorer(sample, idx):
            return scores_by_index[idx]

        from lscqa.evaluation import _run

        return _run(samples, scorer, split="test", filtered=True, fingerprint="fixture")

    def test_two_hard_answers_average(self):
        # hard answer 0 ranks 1st; hard answer 5 has three stronger
        # competitors (indices 1-3) after filtering, so it ranks 4th
        scores = np.array([1.0, 0.9, 0.8, 0.7, 0.55, 0.6, 0.0, 0.0, 0.0, 0.0])
        sample = make_sample("1p", (0, 1), test_answers=(0, 5))
        report = self._report_for({0: scores}, [sample])
        assert report.rows["1p"].mrr == pytest.approx((1.0 + 0.25) / 2)

    def test_skips_queries_without_hard_answers(self):
        sample = make_sample("1p", (0, 1), test_answers=(3,), valid_answers=(3,))
        with pytest.warns(UserWarning, match="no hard answers"):
            report = self._report_for({0: np.zeros(10)}, [sample])
        assert report.rows == {}

    def test_averages_recomputable(self):
        rows = {
            "1p": TypeRow(0.5, 3, 2),
            "2u": TypeRow(0.25, 1, 1),
            "2inS": TypeRow(0.125, 2, 2),
        }
        from lscqa.evaluation import _aggregate

        epfo, neg = _aggregate(rows)
        assert abs(epfo - (0.5 + 0.25) / 2) < 1e-12
        assert abs(neg - 0.125) < 1e-12


class TestFilteringProperty:
    def test_extra_easy_answer_never_hurts(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = 12
            scores = rng.uniform(size=n)
            target = int(rng.integers(n))
            other = int(rng.integers(n))
            if other == target:
                continue
            base = reciprocal_rank(scores, target, frozenset({target}), True)
            widened = reciprocal_rank(scores, target, frozenset({target, other}), True)
            assert widened >= base


class TestRandomBaseline:
    def _fixture(self, n_items, n_queries):
        records = [
            {
                "session_id": "s0",
                "items": [f"i{k}" for k in range(n_items - 1)],
                "targets": [f"i{n_items - 1}"],
            }
        ]
        g = ingest(records, [(f"i0", "brand", "B")], ingest_config_long(n_items))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sg = split_edges(g, (0.8, 0.1, 0.1), seed=0)
        assert len(sg.test.item_names) == n_items
        samples = [
            make_sample("1p", (0,), test_answers=(i % n_items,), index=i) for i in range(n_queries)
        ]
        return sg, samples

    @pytest.mark.parametrize("n_items,expected,tol", [(10, harmonic(10) / 10, 0.005)])
    def test_matches_analytic_harmonic_mean(self, n_items, expected, tol):
        sg, samples = self._fixture(n_items, 10_000)
        report = random_baseline(samples, sg, seed=7)
        assert report.rows["1p"].mrr == pytest.approx(expected, abs=tol)

    def test_deterministic_under_seed(self, toy_split):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            queries = oracle.sample(toy_split, "1p", 5, seed=0, split="test")
        a = random_baseline(queries, toy_split, seed=3)
        b = random_baseline(queries, toy_split, seed=3)
        assert a.rows == b.rows


class TestEvaluateWithModel:
    def test_runs_and_reports(self, toy_split):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            queries = oracle.sample(toy_split, "1p", 5, seed=0, split="test")
        assert queries
        config = M.ModelConfig(d1=16, d2=24, d3=8, d_model=32, layers=1, heads=2, ffn=48)
        g = toy_split.test
        params = M.init_params(config, len(g.item_names), len(g.attribute_names), len(g.relation_names), seed=0)
        report = evaluate(params, queries, toy_split, identifier_seed=5)
        row = report.rows["1p"]
        assert 0.0 <= row.mrr <= 1.0
        assert row.queries == len(queries)
        assert report.epfo_average == pytest.approx(row.mrr)
        assert report.fingerprint

    def test_eval_identifier_seed_fixed(self, toy_split):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            queries = oracle.sample(toy_split, "2iS", 4, seed=0, split="test")
        config = M.ModelConfig(d1=16, d2=24, d3=8, d_model=32, layers=1, heads=2, ffn=48)
        g = toy_split.test
        params = M.init_params(config, len(g.item_names), len(g.attribute_names), len(g.relation_names), seed=0)
        a = evaluate(params, queries, toy_split, identifier_seed=5)
        b = evaluate(params, queries, toy_split, identifier_seed=5)
        assert a.rows == b.rows


class TestReports:
    def test_json_roundtrip(self):
        report = EvalReport(
            rows={"1p": TypeRow(0.5, 4, 2)}, epfo_average=0.5, negation_average=None, fingerprint="ff"
        )
        again = EvalReport.from_json(report.to_json())
        assert again.rows == report.rows
        assert again.negation_average is None

    def test_tsv_layout(self):
        report = EvalReport(
            rows={"1p": TypeRow(0.5, 4, 2), "2inS": TypeRow(0.25, 2, 2)},
            epfo_average=0.5,
            negation_average=0.25,
            fingerprint="ff",
        )
        lines = report.to_tsv().splitlines()
        assert lines[0] == "type\tmrr\thard_answers\tqueries"
        assert lines[1].startswith("1p\t0.5000")
        assert lines[-1].startswith("average_negation\t0.2500")

    def test_merge_reports(self):
        a = EvalReport(rows={"1p": TypeRow(0.5, 4, 2)}, epfo_average=0.5, negation_average=None)
        b = EvalReport(rows={"1p": TypeRow(0.1, 4, 2)}, epfo_average=0.1, negation_average=None)
        text = merge_reports_tsv([("model", a), ("random", b)])
        lines = text.splitlines()
        assert lines[0].split("\t")[:2] == ["report", "1p"]
        assert lines[1].split("\t")[1] == "0.5000"
        assert lines[2].split("\t")[1] == "0.1000"
