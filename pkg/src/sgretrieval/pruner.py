"""Rule-based scene-graph pruning driven by importance scores.

An item survives when its score clears the absolute threshold, when it lands
in the high class of a two-class Jenks natural-breaks split of its score
population, or (objects only) when it is an endpoint of a surviving triplet.
The result is the induced subgraph over kept objects containing exactly the
kept triplets' edges, re-indexed contiguously.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ScoreCoverageIncomplete, TooFewValues
from .graphcore import ObjectNode, RelationEdge, SceneGraph

JENKS_MIN_ITEMS = 3  # a 2-class split of fewer values is statistically meaningless


def jenks_two_class(values) -> int:
    """Index k splitting the ascending-sorted values into [0:k) low / [k:) high.

    Minimizes the total within-class sum of squared deviations over all
    contiguous two-class splits; ties go to the smaller high class.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        raise TooFewValues(f"two-class split needs at least 2 values, got {values.size}")
    s = np.sort(values)
    n = s.size
    # prefix sums give each candidate split's SSD in O(1)
    c1 = np.concatenate([[0.0], np.cumsum(s)])
    c2 = np.concatenate([[0.0], np.cumsum(s * s)])

    def ssd(lo: int, hi: int) -> float:
        cnt = hi - lo
        total = c1[hi] - c1[lo]
        return (c2[hi] - c2[lo]) - total * total / cnt

    costs = np.array([ssd(0, k) + ssd(k, n) for k in range(1, n)])
    # ties (within rounding) go to the largest k, i.e. the smaller high class
    lowest = costs.min()
    tol = 1e-9 * max(1.0, abs(lowest))
    return int(np.max(np.nonzero(costs <= lowest + tol)[0])) + 1


def jenks_high_threshold(values) -> float:
    """Smallest value of the Jenks high class; scores >= this are 'high'."""
    s = np.sort(np.asarray(values, dtype=np.float64))
    return float(s[jenks_two_class(s)])


class RetentionReason(enum.Enum):
    ABSOLUTE = "absolute"
    RELATIVE = "relative"
    INDIRECT_VIA_TRIPLET = "indirect_via_triplet"
    FALLBACK = "fallback"  # empty-result guard: top-scoring object kept


@dataclass
class RetentionDecision:
    kept_objects: set[int] = field(default_factory=set)
    kept_triplets: set[int] = field(default_factory=set)
    object_reasons: dict[int, RetentionReason] = field(default_factory=dict)
    triplet_reasons: dict[int, RetentionReason] = field(default_factory=dict)
    node_id_map: dict[int, int] = field(default_factory=dict)  # old id -> new id
    n_objects: int = 0
    n_triplets: int = 0


def _rule_mask(scores: np.ndarray, b: float, use_jenks: bool) -> tuple[np.ndarray, np.ndarray]:
    """(absolute mask, relative mask) for one score population."""
    absolute = scores > b
    relative = np.zeros_like(absolute)
    if use_jenks and scores.size >= JENKS_MIN_ITEMS:
        # high-class membership by value, so tied scores stay together
        threshold = jenks_high_threshold(scores)
        relative = scores >= threshold
    return absolute, relative


def prune(graph: SceneGraph, obj_scores: dict[int, float], trip_scores: dict[int, float],
          b: float, use_jenks: bool = True) -> tuple[SceneGraph, RetentionDecision]:
    """Apply the three retention rules and build the pruned graph.

    ``use_jenks=False`` disables the relative rule, leaving only the absolute
    threshold and triplet closure (useful for monotonicity analysis).
    """
    n, m = graph.n, len(graph.edges)
    missing_obj = [i for i in range(n) if i not in obj_scores]
    missing_trip = [j for j in range(m) if j not in trip_scores]
    if missing_obj or missing_trip:
        raise ScoreCoverageIncomplete(
            f"missing scores for objects {missing_obj} / triplets {missing_trip}")

    decision = RetentionDecision(n_objects=n, n_triplets=m)
    o_scores = np.array([obj_scores[i] for i in range(n)], dtype=np.float64)
    t_scores = np.array([trip_scores[j] for j in range(m)], dtype=np.float64)

    # rules 1 and 2 fire independently for each item category
    o_abs, o_rel = _rule_mask(o_scores, b, use_jenks)
    t_abs, t_rel = ((np.zeros(0, bool), np.zeros(0, bool)) if m == 0
                    else _rule_mask(t_scores, b, use_jenks))

    for j in range(m):
        if t_abs[j]:
            decision.triplet_reasons[j] = RetentionReason.ABSOLUTE
        elif t_rel[j]:
            decision.triplet_reasons[j] = RetentionReason.RELATIVE
    decision.kept_triplets = set(decision.triplet_reasons)

    for i in range(n):
        if o_abs[i]:
            decision.object_reasons[i] = RetentionReason.ABSOLUTE
        elif o_rel[i]:
            decision.object_reasons[i] = RetentionReason.RELATIVE
    # rule 3: endpoints of kept triplets survive regardless
    for j in decision.kept_triplets:
        e = graph.edges[j]
        for endpoint in (e.src, e.dst):
            decision.object_reasons.setdefault(endpoint, RetentionReason.INDIRECT_VIA_TRIPLET)
    decision.kept_objects = set(decision.object_reasons)

    if not decision.kept_objects:
        # never emit an empty graph; the downstream embedding needs >= 1 node
        top = int(np.argmax(o_scores))
        decision.object_reasons[top] = RetentionReason.FALLBACK
        decision.kept_objects = {top}

    old_ids = sorted(decision.kept_objects)
    decision.node_id_map = {old: new for new, old in enumerate(old_ids)}
    nodes = [ObjectNode(id=decision.node_id_map[i],
                        label=graph.nodes[i].label,
                        text_emb=graph.nodes[i].text_emb,
                        vis_emb=graph.nodes[i].vis_emb,
                        bbox=graph.nodes[i].bbox,
                        area=graph.nodes[i].area)
             for i in old_ids]
    edges = [RelationEdge(src=decision.node_id_map[graph.edges[j].src],
                          dst=decision.node_id_map[graph.edges[j].dst],
                          label=graph.edges[j].label,
                          rel_emb=graph.edges[j].rel_emb)
             for j in sorted(decision.kept_triplets)]
    return SceneGraph(nodes=nodes, edges=edges), decision


DEFAULT_BUCKET_EDGES = (4, 8, 12)


@dataclass
class RetentionBucket:
    label: str
    graph_count: int
    object_retention: float          # kept objects / objects, averaged over graphs
    direct_retention: float          # kept for their own score
    indirect_retention: float        # kept only through a triplet
    triplet_retention: float


def retention_report(decisions: list[RetentionDecision],
                     bucket_edges=DEFAULT_BUCKET_EDGES) -> list[RetentionBucket]:
    """Per graph-size bucket retention rates, graphs bucketed by object count."""
    edges = list(bucket_edges)
    bounds = [(1, edges[0])] + [(edges[i] + 1, edges[i + 1]) for i in range(len(edges) - 1)]
    bounds.append((edges[-1] + 1, None))
    buckets: list[RetentionBucket] = []
    for lo, hi in bounds:
        members = [d for d in decisions if d.n_objects >= lo and (hi is None or d.n_objects <= hi)]
        label = f"{lo}-{hi}" if hi is not None else f"{lo}+"
        if not members:
            continue
        obj_rates, direct_rates, indirect_rates, trip_rates = [], [], [], []
        for d in members:
            direct = sum(1 for r in d.object_reasons.values()
                         if r is not RetentionReason.INDIRECT_VIA_TRIPLET)
            indirect = sum(1 for r in d.object_reasons.values()
                           if r is RetentionReason.INDIRECT_VIA_TRIPLET)
            obj_rates.append(len(d.kept_objects) / d.n_objects)
            direct_rates.append(direct / d.n_objects)
            indirect_rates.append(indirect / d.n_objects)
            if d.n_triplets:
                trip_rates.append(len(d.kept_triplets) / d.n_triplets)
        buckets.append(RetentionBucket(
            label=label,
            graph_count=len(members),
            object_retention=float(np.mean(obj_rates)),
            direct_retention=float(np.mean(direct_rates)),
            indirect_retention=float(np.mean(indirect_rates)),
            triplet_retention=float(np.mean(trip_rates)) if trip_rates else 0.0,
        ))
    return buckets
