"""Edge-aware contextual graph attention stack.

Layer 1 fuses each neighbor's text feature with the connecting relation
embedding before attention, so the message from a neighbor is conditioned on
its specific relationship to the target node. Upper layers are standard
attention layers over node states only, with residual connections. Messages
flow along edge direction (subject to object); every node also gets a
self-loop (with a learned 'self' relation embedding in layer 1) so isolated
nodes have well-defined updates. Readout is a mean over final node states
followed by an output projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyGraph, MissingEdgeEmbedding
from .graphcore import SceneGraph
from .numerics import MLP, Linear, Module, Parameter, Tensor
from .numerics import tensor as T

ATTN_SLOPE = 0.2


@dataclass
class GraphFeatures:
    """Dense per-graph inputs: node text/visual blocks and per-edge embeddings.

    ``node_vis`` already includes bbox coordinates and area alongside the crop
    embedding; only ``node_text`` takes part in relation fusion.
    """

    node_text: np.ndarray   # (n, d_text)
    node_vis: np.ndarray    # (n, d_vis + 5)
    edge_index: np.ndarray  # (m, 2) int, rows (src, dst)
    edge_emb: np.ndarray    # (m, d_text)

    @property
    def n(self) -> int:
        return self.node_text.shape[0]


def graph_features(graph: SceneGraph, reverse_edges: bool = False) -> GraphFeatures:
    """Assemble GNN inputs from a scene graph; node feature = [text | vis | bbox | area]."""
    if graph.n == 0:
        raise EmptyGraph("cannot embed a graph with no nodes")
    node_text = np.stack([nd.text_emb for nd in graph.nodes]).astype(np.float32)
    geo = np.array([[*nd.bbox, nd.area] for nd in graph.nodes], dtype=np.float32)
    node_vis = np.concatenate(
        [np.stack([nd.vis_emb for nd in graph.nodes]).astype(np.float32), geo], axis=1)
    pairs = [(e.src, e.dst) for e in graph.edges]
    if reverse_edges:
        pairs = pairs + [(d, s) for s, d in pairs]
    edge_index = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    edge_emb = (np.stack([e.rel_emb for e in graph.edges]).astype(np.float32)
                if graph.edges else np.zeros((0, node_text.shape[1]), dtype=np.float32))
    if reverse_edges and len(graph.edges):
        edge_emb = np.concatenate([edge_emb, edge_emb], axis=0)
    return GraphFeatures(node_text, node_vis, edge_index, edge_emb)


class EdgeAwareLayer(Module):
    """First-layer attention over relation-contextualized neighbor messages."""

    def __init__(self, d_text: int, d_vis: int, out_dim: int, heads: int,
                 rng: np.random.Generator, dtype=np.float32):
        if out_dim % heads != 0:
            raise ValueError(f"out_dim {out_dim} not divisible by {heads} heads")
        self.d_text = d_text
        self.d_vis = d_vis
        self.heads = heads
        self.out_dim = out_dim
        self.head_dim = out_dim // heads
        d_node = d_text + d_vis
        # fuses [neighbor text | relation embedding] into a relation-aware text part
        self.fusion = MLP([2 * d_text, d_text, d_text], rng, activation="leaky_relu", dtype=dtype)
        self.att = Linear(2 * d_node, heads * self.head_dim, rng, dtype=dtype)
        self.att_vec = Parameter(
            rng.normal(0.0, 0.02, size=(heads, self.head_dim)), dtype=dtype)
        self.value = Linear(d_node, out_dim, rng, dtype=dtype)
        self.self_edge = Parameter(rng.normal(0.0, 0.02, size=(d_text,)), dtype=dtype)
        self.last_attn: np.ndarray | None = None

    def contextualize(self, neighbor_text: Tensor, relation: Tensor,
                      neighbor_vis: Tensor) -> Tensor:
        """Fused [MLP([text | relation]) | vis] rows; the visual block passes through."""
        fused = self.fusion(T.concat([neighbor_text, relation], axis=1))
        return T.concat([fused, neighbor_vis], axis=1)

    def __call__(self, node_text: Tensor, node_vis: Tensor,
                 edge_index: np.ndarray, edge_emb: Tensor) -> Tensor:
        if edge_emb.shape[0] != edge_index.shape[0]:
            raise MissingEdgeEmbedding(
                f"{edge_index.shape[0]} edges but {edge_emb.shape[0]} edge embeddings")
        n = node_text.shape[0]
        # self-loops carry the learned 'self' relation embedding
        self_rel = T.broadcast_to(T.reshape(self.self_edge, (1, self.d_text)),
                                  (n, self.d_text))
        loop_idx = np.arange(n, dtype=np.int64)
        src = np.concatenate([edge_index[:, 0], loop_idx])
        dst = np.concatenate([edge_index[:, 1], loop_idx])

        nbr_text = T.concat([T.gather_rows(node_text, edge_index[:, 0]), node_text], axis=0) \
            if edge_index.shape[0] else node_text
        nbr_vis = T.concat([T.gather_rows(node_vis, edge_index[:, 0]), node_vis], axis=0) \
            if edge_index.shape[0] else node_vis
        rel = T.concat([edge_emb, self_rel], axis=0) if edge_index.shape[0] else self_rel

        messages = self.contextualize(nbr_text, rel, nbr_vis)          # (E+n, d_node)
        target = T.concat([
            T.gather_rows(node_text, dst), T.gather_rows(node_vis, dst)], axis=1)
        logits_in = T.leaky_relu(self.att(T.concat([target, messages], axis=1)), ATTN_SLOPE)
        logits_in = T.reshape(logits_in, (len(dst), self.heads, self.head_dim))
        logits = T.sum_(T.mul(logits_in, self.att_vec), axis=2)        # (E+n, heads)
        alpha = T.segment_softmax(logits, dst, n)
        self.last_attn = alpha.data.copy()
        values = T.reshape(self.value(messages), (len(dst), self.heads, self.head_dim))
        weighted = T.mul(values, T.reshape(alpha, (len(dst), self.heads, 1)))
        out = T.scatter_add_rows(T.reshape(weighted, (len(dst), self.out_dim)), dst, n)
        return out


class NodeAttentionLayer(Module):
    """Standard attention layer over node states only (no edge features)."""

    def __init__(self, in_dim: int, out_dim: int, heads: int,
                 rng: np.random.Generator, dtype=np.float32):
        if out_dim % heads != 0:
            raise ValueError(f"out_dim {out_dim} not divisible by {heads} heads")
        self.heads = heads
        self.out_dim = out_dim
        self.head_dim = out_dim // heads
        self.att = Linear(2 * in_dim, heads * self.head_dim, rng, dtype=dtype)
        self.att_vec = Parameter(
            rng.normal(0.0, 0.02, size=(heads, self.head_dim)), dtype=dtype)
        self.value = Linear(in_dim, out_dim, rng, dtype=dtype)
        self.last_attn: np.ndarray | None = None

    def __call__(self, h: Tensor, edge_index: np.ndarray) -> Tensor:
        n = h.shape[0]
        loop_idx = np.arange(n, dtype=np.int64)
        if edge_index.shape[0]:
            src = np.concatenate([edge_index[:, 0], loop_idx])
            dst = np.concatenate([edge_index[:, 1], loop_idx])
        else:
            src = dst = loop_idx
        h_src = T.gather_rows(h, src)
        h_dst = T.gather_rows(h, dst)
        logits_in = T.leaky_relu(self.att(T.concat([h_dst, h_src], axis=1)), ATTN_SLOPE)
        logits_in = T.reshape(logits_in, (len(dst), self.heads, self.head_dim))
        logits = T.sum_(T.mul(logits_in, self.att_vec), axis=2)
        alpha = T.segment_softmax(logits, dst, n)
        self.last_attn = alpha.data.copy()
        values = T.reshape(self.value(h_src), (len(dst), self.heads, self.head_dim))
        weighted = T.mul(values, T.reshape(alpha, (len(dst), self.heads, 1)))
        return T.scatter_add_rows(T.reshape(weighted, (len(dst), self.out_dim)), dst, n)


class GnnStack(Module):
    """Edge-aware first layer, standard upper layers with residuals, mean readout.

    ``edge_aware=False`` swaps layer 1 for a standard layer on raw node
    features; relation embeddings are then ignored entirely (the ablation).
    """

    def __init__(self, d_text: int, d_vis: int, hidden: int = 64, heads: int = 4,
                 layers: int = 3, out_dim: int = 32, edge_aware: bool = True,
                 reverse_edges: bool = False,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if layers < 1:
            raise ValueError("GNN stack needs at least 1 layer")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.edge_aware = edge_aware
        self.reverse_edges = reverse_edges
        d_node = d_text + d_vis
        if edge_aware:
            self.first = EdgeAwareLayer(d_text, d_vis, hidden, heads, rng, dtype=dtype)
        else:
            self.first = NodeAttentionLayer(d_node, hidden, heads, rng, dtype=dtype)
        self.upper = [NodeAttentionLayer(hidden, hidden, heads, rng, dtype=dtype)
                      for _ in range(layers - 1)]
        self.readout = Linear(hidden, out_dim, rng, dtype=dtype)

    def node_states(self, feats: GraphFeatures, node_text: Tensor | None = None,
                    node_vis: Tensor | None = None, edge_emb: Tensor | None = None) -> Tensor:
        """Final per-node states; tensor inputs may be supplied for gradchecks."""
        node_text = node_text if node_text is not None else Tensor(feats.node_text)
        node_vis = node_vis if node_vis is not None else Tensor(feats.node_vis)
        edge_emb = edge_emb if edge_emb is not None else Tensor(feats.edge_emb)
        if self.edge_aware:
            h = self.first(node_text, node_vis, feats.edge_index, edge_emb)
        else:
            h = self.first(T.concat([node_text, node_vis], axis=1), feats.edge_index)
        h = T.leaky_relu(h, ATTN_SLOPE)
        for layer in self.upper:
            h = T.add(h, T.leaky_relu(layer(h, feats.edge_index), ATTN_SLOPE))
        return h

    def __call__(self, feats: GraphFeatures, **kw) -> Tensor:
        h = self.node_states(feats, **kw)
        pooled = T.reshape(T.mean(h, axis=0), (1, h.shape[1]))
        return self.readout(pooled)    # (1, out_dim)


def forward_graph(stack: GnnStack, graph: SceneGraph) -> np.ndarray:
    """Graph-level embedding of a (pruned) scene graph as a plain vector."""
    feats = graph_features(graph, reverse_edges=stack.reverse_edges)
    return stack(feats).data[0].copy()
