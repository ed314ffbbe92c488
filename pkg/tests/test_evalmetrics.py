"""Metric definitions vs the naive reference; leave-one-out protocol checks."""

import math

import numpy as np
import pytest

from conftest import random_bundle, unit_rows
from reference_metrics import ref_ap_at_k, ref_mrr, ref_ndcg
from sgretrieval.errors import InsufficientData
from sgretrieval.evalmetrics import (QueryEvaluation, average_precision_at_k,
                                     build_query_evaluations, evaluate_queries,
                                     evaluate_testset, format_metrics_table, mrr,
                                     ndcg_at_k, relevance_labels)
from sgretrieval.retrieval import RetrievalIndex, build_index, pair_similarity_matrix
from test_retrieval import small_model


class TestNdcg:
    def test_ideal_ranking_is_one(self):
        gains = [0.9, 0.5, 0.1]
        assert ndcg_at_k(gains, gains, 3) == pytest.approx(1.0)

    def test_equal_gains_any_permutation(self):
        gains = [0.4, 0.4, 0.4, 0.4]
        assert ndcg_at_k(gains, gains, 2) == pytest.approx(1.0)

    def test_worked_example(self):
        # (0.2 + 0.8/log2 3) / (0.8 + 0.2/log2 3)
        expected = (0.2 + 0.8 / math.log2(3)) / (0.8 + 0.2 / math.log2(3))
        assert expected == pytest.approx(0.7609, abs=1e-4)
        assert ndcg_at_k([0.2, 0.8], [0.8, 0.2], 2) == pytest.approx(expected, abs=1e-12)

    def test_zero_ideal_gains(self):
        assert ndcg_at_k([0.0, 0.0], [0.0, 0.0], 2) == 0.0


class TestMapMrr:
    def test_first_relevant_gives_full_mrr(self):
        assert mrr([True, False, False]) == 1.0

    def test_no_relevant(self):
        assert mrr([False, False]) == 0.0
        assert average_precision_at_k([False, False], 2) == 0.0

    def test_worked_ap_example(self):
        # hits at ranks 2 and 3: (1/2 + 2/3) / 2
        assert average_precision_at_k([0, 1, 1], 3) == pytest.approx((0.5 + 2 / 3) / 2)

    def test_map_at_1_is_precision_at_1(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            rel = rng.random(6) < 0.4
            expected = 1.0 if rel[0] else 0.0
            if rel.any():
                assert average_precision_at_k(rel, 1) == expected


class TestOracleEquivalence:
    def test_200_random_query_evaluations(self):
        rng = np.random.default_rng(99)
        for _ in range(200):
            n = int(rng.integers(2, 12))
            gains = rng.random(n).tolist()
            order = rng.permutation(n)
            ranked_gains = [gains[i] for i in order]
            relevance = (rng.random(n) < 0.5).tolist()
            ideal = sorted(gains, reverse=True)
            for k in (1, 3, 5):
                assert abs(ndcg_at_k(ranked_gains, ideal, k)
                           - ref_ndcg(ranked_gains, ideal, k)) < 1e-12
                assert abs(average_precision_at_k(relevance, k)
                           - ref_ap_at_k(relevance, k)) < 1e-12
            assert abs(mrr(relevance) - ref_mrr(relevance)) < 1e-12

    def test_metrics_in_unit_interval(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            n = int(rng.integers(1, 10))
            gains = rng.random(n).tolist()
            ideal = sorted(gains, reverse=True)
            rel = (rng.random(n) < 0.5).tolist()
            for k in (1, 2, 5):
                assert 0.0 <= ndcg_at_k(gains, ideal, k) <= 1.0 + 1e-12
                assert 0.0 <= average_precision_at_k(rel, k) <= 1.0
            assert 0.0 <= mrr(rel) <= 1.0


class TestProtocol:
    def _fixture(self, rng, n, clustered=True):
        protos = unit_rows(rng.standard_normal((2, 8)))
        bundles = []
        for k in range(n):
            b = random_bundle(rng, image_id=f"img{k:02d}", num_captions=2)
            if clustered:
                caps = protos[k % 2][None, :] + 0.05 * rng.standard_normal((2, 8))
                b.caption_embs = unit_rows(caps)
            bundles.append(b)
        return bundles

    def test_two_image_degenerate(self, rng):
        bundles = self._fixture(rng, 2)
        model = small_model(rng)
        index = build_index(model, bundles, [b.graph for b in bundles])
        report = evaluate_testset(index, bundles, ks=(1,))
        # single candidate: it is the ideal top-1 and (by top-5 rule) relevant
        assert report.ndcg[1] == pytest.approx(1.0)
        assert report.map_[1] == pytest.approx(1.0)
        assert report.mrr == pytest.approx(1.0)

    def test_insufficient_data(self, rng):
        bundles = self._fixture(rng, 1)
        model = small_model(rng)
        index = build_index(model, bundles, [b.graph for b in bundles])
        with pytest.raises(InsufficientData):
            evaluate_testset(index, bundles)

    def test_perfect_model_scores_one(self, rng):
        # embeddings equal to caption means: predicted ranking = ideal ranking
        bundles = self._fixture(rng, 8)
        emb = np.stack([b.caption_embs.mean(axis=0) for b in bundles]).astype(np.float32)
        index = RetrievalIndex(tuple(b.image_id for b in bundles), emb)
        report = evaluate_testset(index, bundles, ks=(1, 3, 5))
        for k in (1, 3, 5):
            assert report.ndcg[k] == pytest.approx(1.0, abs=1e-9)
        assert report.mrr == pytest.approx(1.0)

    def test_matches_brute_force_reference(self, rng):
        # random embeddings, random captions: engine output == naive pipeline
        bundles = self._fixture(rng, 9, clustered=False)
        emb = rng.standard_normal((9, 12)).astype(np.float32)
        index = RetrievalIndex(tuple(b.image_id for b in bundles), emb)
        report = evaluate_testset(index, bundles, ks=(1, 3, 5))

        gt = pair_similarity_matrix(bundles)
        ids = list(index.image_ids)
        ndcg_ref = {k: [] for k in (1, 3, 5)}
        map_ref = {k: [] for k in (1, 3, 5)}
        mrr_ref = []
        for q in range(9):
            cand = [c for c in range(9) if c != q]
            scores = emb.astype(np.float64) @ emb[q].astype(np.float64)
            ranked = sorted(cand, key=lambda c: (-scores[c], ids[c]))
            sims = {c: gt[q, c] for c in cand}
            by_sim = sorted(cand, key=lambda c: (-sims[c], ids[c]))
            cutoff = 0.8 * max(sims.values())
            relevant = set(by_sim[:5]) | {c for c in cand if sims[c] >= cutoff}
            gains = [max(sims[c], 0.0) for c in ranked]
            ideal = sorted(gains, reverse=True)
            rel = [c in relevant for c in ranked]
            for k in (1, 3, 5):
                ndcg_ref[k].append(ref_ndcg(gains, ideal, k))
                map_ref[k].append(ref_ap_at_k(rel, k))
            mrr_ref.append(ref_mrr(rel))
        for k in (1, 3, 5):
            assert abs(report.ndcg[k] - np.mean(ndcg_ref[k])) < 1e-12
            assert abs(report.map_[k] - np.mean(map_ref[k])) < 1e-12
        assert abs(report.mrr - np.mean(mrr_ref)) < 1e-12

    def test_invariant_under_id_relabeling(self, rng):
        bundles = self._fixture(rng, 6)
        emb = rng.standard_normal((6, 10)).astype(np.float32)
        # distinct similarities/scores so tie-breaks never involve the labels
        index1 = RetrievalIndex(tuple(b.image_id for b in bundles), emb)
        r1 = evaluate_testset(index1, bundles, ks=(1, 3))
        renamed = []
        for i, b in enumerate(bundles):
            c = random_bundle(np.random.default_rng(i), image_id=f"zz{9 - i}")
            c.caption_embs = b.caption_embs
            c.graph = b.graph
            c.global_vis = b.global_vis
            c.graph_emb = b.graph_emb
            c.phrase_embs = b.phrase_embs
            renamed.append(c)
        index2 = RetrievalIndex(tuple(b.image_id for b in renamed), emb)
        r2 = evaluate_testset(index2, renamed, ks=(1, 3))
        for k in (1, 3):
            assert r1.ndcg[k] == pytest.approx(r2.ndcg[k], abs=1e-12)
            assert r1.map_[k] == pytest.approx(r2.map_[k], abs=1e-12)
        assert r1.mrr == pytest.approx(r2.mrr, abs=1e-12)

    def test_jobs_parallel_matches_serial(self, rng):
        bundles = self._fixture(rng, 6)
        emb = rng.standard_normal((6, 10)).astype(np.float32)
        index = RetrievalIndex(tuple(b.image_id for b in bundles), emb)
        r1 = evaluate_testset(index, bundles, ks=(1, 3), jobs=1)
        r2 = evaluate_testset(index, bundles, ks=(1, 3), jobs=4)
        assert r1.rows() == r2.rows()

    def test_table_format(self, rng):
        bundles = self._fixture(rng, 4)
        model = small_model(rng)
        index = build_index(model, bundles, [b.graph for b in bundles])
        table = format_metrics_table(evaluate_testset(index, bundles))
        assert "NDCG@1" in table and "MRR" in table
        assert len(table.splitlines()) == 3
