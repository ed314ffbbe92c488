"""Scene-graph based image-to-image retrieval engine.

Pipeline: caption-anchored importance scoring, rule-based graph pruning,
an edge-aware attention GNN fused with a norm-capped global visual stream,
and exhaustive inner-product retrieval with NDCG/MAP/MRR evaluation.
Operates entirely on precomputed embedding fixtures.
"""

__version__ = "0.1.0"
