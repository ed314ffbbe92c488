"""Finite-difference gradient suites over every learned component.

Each suite builds a small float64 instance (dims <= 16) from a seed and
compares analytic gradients against central differences at h = 1e-3 (with
the harness's kink-aware refinement for piecewise-linear units).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gnn import EdgeAwareLayer, GnnStack, GraphFeatures
from .importance import ImportanceModel
from .numerics import (MLP, Linear, MultiHeadAttention, Tensor, TransformerEncoder,
                       finite_difference_check)
from .numerics import tensor as T
from .retrieval import DualStreamModel

H = 1e-3


def checked(build, seed: int, max_coords: int = 12) -> float:
    """Max relative gradient error for one seeded instance."""
    build_loss, params = build(seed)
    return finite_difference_check(build_loss, params, h=H,
                                   max_coords_per_param=max_coords,
                                   rng=np.random.default_rng(seed))


def _probe(rng, shape):
    return Tensor(rng.standard_normal(shape), dtype=np.float64)


def _build_linear(seed):
    rng = np.random.default_rng(seed)
    lin = Linear(7, 5, rng, dtype=np.float64)
    x = Tensor(rng.standard_normal((3, 7)), requires_grad=True, dtype=np.float64)
    w = _probe(rng, (3, 5))
    return (lambda: T.sum_(T.mul(lin(x), w))), lin.parameters() + [x]


def _build_mlp(seed):
    rng = np.random.default_rng(seed)
    mlp = MLP([6, 10, 4], rng, activation="leaky_relu", dtype=np.float64)
    x = Tensor(rng.standard_normal((4, 6)), requires_grad=True, dtype=np.float64)
    w = _probe(rng, (4, 4))
    return (lambda: T.sum_(T.mul(mlp(x), w))), mlp.parameters() + [x]


def _build_mha(seed):
    rng = np.random.default_rng(seed)
    mha = MultiHeadAttention(8, 2, rng, dtype=np.float64)
    q = Tensor(rng.standard_normal((4, 8)), requires_grad=True, dtype=np.float64)
    kv = Tensor(rng.standard_normal((4, 8)), requires_grad=True, dtype=np.float64)
    w = _probe(rng, (4, 8))
    return (lambda: T.sum_(T.mul(mha(q, kv, kv), w))), mha.parameters() + [q, kv]


def _build_transformer(seed):
    rng = np.random.default_rng(seed)
    enc = TransformerEncoder(8, 1, 2, 0.0, rng, dtype=np.float64)
    enc.eval()
    x = Tensor(rng.standard_normal((5, 8)), requires_grad=True, dtype=np.float64)
    w = _probe(rng, (5, 8))
    return (lambda: T.sum_(T.mul(enc(x), w))), enc.parameters() + [x]


def _build_importance(seed):
    rng = np.random.default_rng(seed)
    model = ImportanceModel(9, hidden=8, layers=1, heads=2, num_queries=2,
                            p_drop=0.0, rng=rng, dtype=np.float64)
    model.eval()
    tokens = Tensor(rng.standard_normal((2, 5, 9)), requires_grad=True, dtype=np.float64)
    w = _probe(rng, (2,))
    return (lambda: T.sum_(T.mul(model.forward(tokens), w))), model.parameters() + [tokens]


def _random_feats(rng, n, m, d_text, d_vis):
    pairs = set()
    while len(pairs) < m:
        i, j = rng.integers(0, n, size=2)
        if i != j:
            pairs.add((int(i), int(j)))
    edge_index = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    return GraphFeatures(
        node_text=rng.standard_normal((n, d_text)).astype(np.float64),
        node_vis=rng.standard_normal((n, d_vis)).astype(np.float64),
        edge_index=edge_index,
        edge_emb=rng.standard_normal((len(pairs), d_text)).astype(np.float64),
    )


def _build_edge_layer(seed):
    rng = np.random.default_rng(seed)
    feats = _random_feats(rng, 4, 5, 6, 5)
    layer = EdgeAwareLayer(6, 5, 8, 2, rng, dtype=np.float64)
    nt = Tensor(feats.node_text, requires_grad=True, dtype=np.float64)
    nv = Tensor(feats.node_vis, requires_grad=True, dtype=np.float64)
    ee = Tensor(feats.edge_emb, requires_grad=True, dtype=np.float64)
    w = _probe(rng, (4, 8))
    return (lambda: T.sum_(T.mul(layer(nt, nv, feats.edge_index, ee), w))), \
        layer.parameters() + [nt, nv, ee]


def _build_gnn_stack(seed):
    rng = np.random.default_rng(seed)
    feats = _random_feats(rng, 4, 4, 6, 5)
    stack = GnnStack(d_text=6, d_vis=5, hidden=8, heads=2, layers=3, out_dim=6,
                     rng=rng, dtype=np.float64)
    nt = Tensor(feats.node_text, requires_grad=True, dtype=np.float64)
    nv = Tensor(feats.node_vis, requires_grad=True, dtype=np.float64)
    ee = Tensor(feats.edge_emb, requires_grad=True, dtype=np.float64)
    w = _probe(rng, (1, 6))
    return (lambda: T.sum_(T.mul(
        stack(feats, node_text=nt, node_vis=nv, edge_emb=ee), w))), \
        stack.parameters() + [nt, nv, ee]


def _build_dual_stream_loss(seed):
    rng = np.random.default_rng(seed)
    model = DualStreamModel(d_vis=6, d_text=6, vis_hidden=8, d_vis_out=6, d_graph_out=6,
                            gnn_hidden=8, gnn_heads=2, gnn_layers=2,
                            rng=rng, dtype=np.float64)
    model.eval()
    feats = [_random_feats(rng, 3, 3, 6, 11) for _ in range(3)]
    z_imgs = [Tensor(rng.standard_normal((1, 6)), dtype=np.float64) for _ in range(3)]
    targets = rng.uniform(-0.5, 0.9, size=3)
    weights = np.exp(2.0 * targets)
    pairs = [(0, 1), (0, 2), (1, 2)]

    def loss():
        emb = [model.embed(f, z) for f, z in zip(feats, z_imgs)]
        total = None
        for (i, j), s, w in zip(pairs, targets, weights):
            pred = T.sum_(T.mul(emb[i], emb[j]))
            err = T.sub(pred, Tensor(np.asarray(s), dtype=np.float64))
            term = T.mul(T.mul(err, err), float(w))
            total = term if total is None else T.add(total, term)
        return total

    return loss, model.parameters()


SUITES = {
    "linear": (_build_linear, 12),
    "mlp": (_build_mlp, 12),
    "multi_head_attention": (_build_mha, 10),
    "transformer_block": (_build_transformer, 8),
    "importance_model": (_build_importance, 5),
    "edge_aware_layer": (_build_edge_layer, 8),
    "gnn_stack": (_build_gnn_stack, 5),
    "dual_stream_loss": (_build_dual_stream_loss, 4),
}


@dataclass
class SuiteResult:
    name: str
    max_rel_err: float
    seeds: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err < 1e-3


def run_suite(name: str, seeds: int = 20) -> SuiteResult:
    build, max_coords = SUITES[name]
    worst = 0.0
    for seed in range(seeds):
        worst = max(worst, checked(build, seed, max_coords=max_coords))
    return SuiteResult(name, worst, seeds)


def run_all_suites(seeds: int = 20) -> list[SuiteResult]:
    return [run_suite(name, seeds) for name in SUITES]
