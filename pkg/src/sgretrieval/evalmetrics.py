"""Ranked-retrieval quality metrics and the leave-one-out evaluation protocol.

NDCG uses graded gains (surrogate similarities clamped to be nonnegative)
with the 1/log2(rank+1) discount. MAP and MRR need binary labels; a
candidate counts as relevant when it sits in the query's top ``relevant_top``
by ground-truth similarity or reaches ``relevant_frac`` of the query's best
candidate similarity. Both constants are recorded in the report so the
protocol is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientData
from .graphcore import EmbeddingBundle
from .retrieval import RetrievalIndex, pair_similarity_matrix, query

RELEVANT_TOP_DEFAULT = 5
RELEVANT_FRAC_DEFAULT = 0.8


def ndcg_at_k(ranked_gains, ideal_gains, k: int) -> float:
    """DCG@k over the system ranking divided by DCG@k over the ideal one."""
    def dcg(gains):
        return sum(g / np.log2(i + 2) for i, g in enumerate(gains[:k]))

    ideal = dcg(ideal_gains)
    if ideal == 0.0:
        return 0.0
    return float(dcg(ranked_gains) / ideal)


def average_precision_at_k(ranked_relevance, k: int) -> float:
    """Precision-at-hit sum over the top k, normalized by min(total relevant, k)."""
    rel = np.asarray(ranked_relevance, dtype=bool)
    total = int(rel.sum())
    if total == 0:
        return 0.0
    hits = 0
    score = 0.0
    for i in range(min(k, rel.size)):
        if rel[i]:
            hits += 1
            score += hits / (i + 1)
    return score / min(total, k)


def mrr(ranked_relevance) -> float:
    """1 / rank of the first relevant item; 0 when nothing is relevant."""
    for i, r in enumerate(ranked_relevance):
        if r:
            return 1.0 / (i + 1)
    return 0.0


@dataclass
class QueryEvaluation:
    query_id: str
    ranked_ids: list[str]
    gains: list[float]            # ground-truth gain per ranked candidate
    relevance: list[bool]         # binary label per ranked candidate
    ideal_gains: list[float]      # gains sorted descending


@dataclass
class MetricsReport:
    ks: tuple[int, ...]
    ndcg: dict[int, float]
    map_: dict[int, float]
    mrr: float
    queries: int
    relevant_top: int = RELEVANT_TOP_DEFAULT
    relevant_frac: float = RELEVANT_FRAC_DEFAULT

    def rows(self) -> list[tuple[str, str, float]]:
        out = [("ndcg", str(k), self.ndcg[k]) for k in self.ks]
        out += [("map", str(k), self.map_[k]) for k in self.ks]
        out.append(("mrr", "-", self.mrr))
        return out


def relevance_labels(sims: np.ndarray, candidate_ids: list[str],
                     relevant_top: int, relevant_frac: float) -> dict[str, bool]:
    """Binary relevance per candidate id from graded ground-truth similarities."""
    order = sorted(range(len(candidate_ids)), key=lambda k: (-sims[k], candidate_ids[k]))
    top = set(order[:relevant_top])
    cutoff = relevant_frac * sims.max() if len(sims) else 0.0
    return {candidate_ids[k]: (k in top or sims[k] >= cutoff)
            for k in range(len(candidate_ids))}


def evaluate_queries(evals: list[QueryEvaluation], ks) -> MetricsReport:
    ks = tuple(ks)
    ndcg_acc = {k: [] for k in ks}
    map_acc = {k: [] for k in ks}
    mrr_acc = []
    for ev in evals:
        for k in ks:
            ndcg_acc[k].append(ndcg_at_k(ev.gains, ev.ideal_gains, k))
            map_acc[k].append(average_precision_at_k(ev.relevance, k))
        mrr_acc.append(mrr(ev.relevance))
    return MetricsReport(
        ks=ks,
        ndcg={k: float(np.mean(ndcg_acc[k])) for k in ks},
        map_={k: float(np.mean(map_acc[k])) for k in ks},
        mrr=float(np.mean(mrr_acc)),
        queries=len(evals),
    )


def build_query_evaluations(index: RetrievalIndex, bundles: list[EmbeddingBundle],
                            relevant_top: int = RELEVANT_TOP_DEFAULT,
                            relevant_frac: float = RELEVANT_FRAC_DEFAULT,
                            jobs: int = 1) -> list[QueryEvaluation]:
    """Leave-one-out: each image queries the index, the rest are candidates."""
    if len(bundles) < 2:
        raise InsufficientData("leave-one-out evaluation needs at least 2 images")
    by_id = {b.image_id: i for i, b in enumerate(bundles)}
    missing = [img for img in index.image_ids if img not in by_id]
    if missing or len(index) != len(bundles):
        raise InsufficientData(f"index/bundle mismatch: {missing or 'count differs'}")
    gt = pair_similarity_matrix(bundles)

    def one(qpos: int) -> QueryEvaluation:
        qid = index.image_ids[qpos]
        ranked = query(index, index.embeddings[qpos], top_k=len(index) - 1, exclude=qid)
        cand_ids = [img for img in index.image_ids if img != qid]
        sims = np.array([gt[by_id[qid], by_id[c]] for c in cand_ids])
        labels = relevance_labels(sims, cand_ids, relevant_top, relevant_frac)
        gain_by_id = {c: max(float(s), 0.0) for c, s in zip(cand_ids, sims)}
        gains = [gain_by_id[img] for _, img, _ in ranked]
        relevance = [labels[img] for _, img, _ in ranked]
        return QueryEvaluation(
            query_id=qid,
            ranked_ids=[img for _, img, _ in ranked],
            gains=gains,
            relevance=relevance,
            ideal_gains=sorted(gain_by_id.values(), reverse=True),
        )

    positions = range(len(index))
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, positions))
    return [one(q) for q in positions]


def evaluate_testset(index: RetrievalIndex, bundles: list[EmbeddingBundle],
                     ks=(1, 3, 5), relevant_top: int = RELEVANT_TOP_DEFAULT,
                     relevant_frac: float = RELEVANT_FRAC_DEFAULT,
                     jobs: int = 1) -> MetricsReport:
    evals = build_query_evaluations(index, bundles, relevant_top, relevant_frac, jobs=jobs)
    report = evaluate_queries(evals, ks)
    report.relevant_top = relevant_top
    report.relevant_frac = relevant_frac
    return report


def format_metrics_table(report: MetricsReport) -> str:
    """Fixed-width table: NDCG@k / MAP@k columns and MRR."""
    ks = report.ks
    headers = [f"NDCG@{k}" for k in ks] + [f"MAP@{k}" for k in ks] + ["MRR"]
    values = [report.ndcg[k] for k in ks] + [report.map_[k] for k in ks] + [report.mrr]
    head = " | ".join(f"{h:>8s}" for h in headers)
    vals = " | ".join(f"{v:8.4f}" for v in values)
    rule = "-+-".join("-" * 8 for _ in headers)
    return "\n".join([head, rule, vals])
