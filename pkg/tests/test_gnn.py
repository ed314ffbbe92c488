"""Edge-aware attention layer and stack: contextualization, attention
normalization, permutation invariance, edge sensitivity, gradients."""

import numpy as np
import pytest

from conftest import random_bundle, unit
from sgretrieval.errors import EmptyGraph, MissingEdgeEmbedding
from sgretrieval.gnn import (EdgeAwareLayer, GnnStack, GraphFeatures, NodeAttentionLayer,
                             forward_graph, graph_features)
from sgretrieval.gradsuite import checked, _build_edge_layer, _build_gnn_stack
from sgretrieval.graphcore import ObjectNode, RelationEdge, SceneGraph
from sgretrieval.numerics import Tensor, finite_difference_check
from sgretrieval.numerics import tensor as T

D_TEXT, D_VIS = 8, 6  # bundle dims from conftest; node_vis gains bbox+area (5)


def feats_for(bundle):
    return graph_features(bundle.graph)


def small_stack(rng, layers=3, edge_aware=True, dtype=np.float32):
    return GnnStack(d_text=D_TEXT, d_vis=D_VIS + 5, hidden=16, heads=4, layers=layers,
                    out_dim=8, edge_aware=edge_aware, rng=rng, dtype=dtype)


class TestContextualize:
    def test_visual_slice_passes_through(self, rng):
        layer = EdgeAwareLayer(D_TEXT, D_VIS + 5, 16, 4, rng)
        txt = Tensor(rng.standard_normal((3, D_TEXT)).astype(np.float32))
        rel = Tensor(rng.standard_normal((3, D_TEXT)).astype(np.float32))
        vis = Tensor(rng.standard_normal((3, D_VIS + 5)).astype(np.float32))
        out = layer.contextualize(txt, rel, vis).data
        np.testing.assert_array_equal(out[:, D_TEXT:], vis.data)

    def test_deterministic_for_identical_inputs(self, rng):
        layer = EdgeAwareLayer(D_TEXT, D_VIS + 5, 16, 4, rng)
        txt = Tensor(np.repeat(rng.standard_normal((1, D_TEXT)), 2, axis=0).astype(np.float32))
        rel = Tensor(np.repeat(rng.standard_normal((1, D_TEXT)), 2, axis=0).astype(np.float32))
        vis = Tensor(np.repeat(rng.standard_normal((1, D_VIS + 5)), 2, axis=0).astype(np.float32))
        out = layer.contextualize(txt, rel, vis).data
        np.testing.assert_array_equal(out[0], out[1])

    def test_relation_changes_message(self, rng):
        # same neighbor, different relations: contextualized messages differ
        layer = EdgeAwareLayer(D_TEXT, D_VIS + 5, 16, 4, rng)
        txt = Tensor(np.repeat(rng.standard_normal((1, D_TEXT)), 2, axis=0).astype(np.float32))
        vis = Tensor(np.repeat(rng.standard_normal((1, D_VIS + 5)), 2, axis=0).astype(np.float32))
        rel = Tensor(rng.standard_normal((2, D_TEXT)).astype(np.float32))
        out = layer.contextualize(txt, rel, vis).data
        assert np.abs(out[0, :D_TEXT] - out[1, :D_TEXT]).max() > 1e-6


class TestEdgeAwareAttention:
    def test_single_in_neighbor_plus_self_loop(self, rng):
        b = random_bundle(rng, n_nodes=2, edges=((0, 1),))
        layer = EdgeAwareLayer(D_TEXT, D_VIS + 5, 16, 4, rng)
        f = feats_for(b)
        layer(Tensor(f.node_text), Tensor(f.node_vis), f.edge_index, Tensor(f.edge_emb))
        # rows: edge (0->1), self 0, self 1. node 0 has only its self-loop
        np.testing.assert_allclose(layer.last_attn[1], 1.0, atol=1e-6)
        # node 1: edge message + self-loop sum to 1 per head
        np.testing.assert_allclose(layer.last_attn[0] + layer.last_attn[2], 1.0, atol=1e-6)

    def test_identical_messages_split_evenly(self, rng):
        layer = EdgeAwareLayer(D_TEXT, D_VIS + 5, 16, 4, rng)
        n_text = np.repeat(rng.standard_normal((1, D_TEXT)), 3, axis=0).astype(np.float32)
        n_vis = np.repeat(rng.standard_normal((1, D_VIS + 5)), 3, axis=0).astype(np.float32)
        edge_index = np.array([[0, 2], [1, 2]], dtype=np.int64)
        rel = np.repeat(rng.standard_normal((1, D_TEXT)), 2, axis=0).astype(np.float32)
        # make the self-loop identical too by reusing the learned self embedding
        layer.self_edge.data = rel[0].copy()
        layer(Tensor(n_text), Tensor(n_vis), edge_index, Tensor(rel))
        attn = layer.last_attn
        # rows 0,1 are the two edges into node 2; row 4 is node 2's self-loop
        np.testing.assert_allclose(attn[0], attn[1], atol=1e-6)
        np.testing.assert_allclose(attn[0], 1.0 / 3.0, atol=1e-6)

    def test_attention_rows_normalize(self, rng):
        b = random_bundle(rng, n_nodes=4, edges=((0, 1), (2, 1), (3, 1), (1, 0)))
        layer = EdgeAwareLayer(D_TEXT, D_VIS + 5, 16, 4, rng)
        f = feats_for(b)
        layer(Tensor(f.node_text), Tensor(f.node_vis), f.edge_index, Tensor(f.edge_emb))
        dst = np.concatenate([f.edge_index[:, 1], np.arange(4)])
        sums = np.zeros((4, 4))
        np.add.at(sums, dst, layer.last_attn)
        np.testing.assert_allclose(sums, 1.0, atol=1e-6)

    def test_missing_edge_embedding(self, rng):
        b = random_bundle(rng, n_nodes=2, edges=((0, 1),))
        layer = EdgeAwareLayer(D_TEXT, D_VIS + 5, 16, 4, rng)
        f = feats_for(b)
        with pytest.raises(MissingEdgeEmbedding):
            layer(Tensor(f.node_text), Tensor(f.node_vis), f.edge_index,
                  Tensor(np.zeros((0, D_TEXT), dtype=np.float32)))

    def test_gradcheck_one_layer(self):
        for seed in range(5):
            assert checked(_build_edge_layer, seed) < 1e-3


class TestStack:
    def test_single_node_graph(self, rng):
        b = random_bundle(rng, n_nodes=1, edges=())
        stack = small_stack(rng)
        out = forward_graph(stack, b.graph)
        assert out.shape == (8,)
        assert np.all(np.isfinite(out))

    def test_empty_graph_error(self, rng):
        stack = small_stack(rng)
        with pytest.raises(EmptyGraph):
            forward_graph(stack, SceneGraph(nodes=[], edges=[]))

    def test_permutation_invariance(self, rng):
        b = random_bundle(rng, n_nodes=5, edges=((0, 1), (1, 2), (3, 2), (4, 0)))
        stack = small_stack(rng)
        base = forward_graph(stack, b.graph)
        perm = np.array([3, 0, 4, 1, 2])
        inv = np.argsort(perm)
        g = b.graph
        nodes = [ObjectNode(id=i, label=g.nodes[perm[i]].label,
                            text_emb=g.nodes[perm[i]].text_emb,
                            vis_emb=g.nodes[perm[i]].vis_emb,
                            bbox=g.nodes[perm[i]].bbox, area=g.nodes[perm[i]].area)
                 for i in range(5)]
        edges = [RelationEdge(src=int(inv[e.src]), dst=int(inv[e.dst]), label=e.label,
                              rel_emb=e.rel_emb) for e in g.edges]
        permuted = forward_graph(stack, SceneGraph(nodes=nodes, edges=edges))
        np.testing.assert_allclose(permuted, base, atol=1e-6)

    def test_edge_label_swap_changes_embedding(self, rng):
        # swapping one relation embedding must move the graph embedding
        b = random_bundle(rng, n_nodes=3, edges=((0, 1), (1, 2)))
        stack = small_stack(rng)
        base = forward_graph(stack, b.graph)
        b.graph.edges[0].rel_emb = unit(rng.standard_normal(D_TEXT))
        swapped = forward_graph(stack, b.graph)
        assert np.linalg.norm(swapped - base) > 0

    def test_edge_sensitivity_over_seeds(self):
        # a unit perturbation of one relation embedding changes the output
        for seed in range(20):
            rng = np.random.default_rng(seed)
            b = random_bundle(rng, n_nodes=3, edges=((0, 1), (1, 2)))
            stack = small_stack(rng)
            base = forward_graph(stack, b.graph)
            delta = rng.standard_normal(D_TEXT).astype(np.float32)
            delta /= np.linalg.norm(delta)
            b.graph.edges[1].rel_emb = b.graph.edges[1].rel_emb + delta
            assert np.linalg.norm(forward_graph(stack, b.graph) - base) > 1e-7

    def test_upper_layers_ignore_edge_embeddings(self, rng):
        # structural check: upper layers consume node states and topology only
        stack = small_stack(rng)
        for layer in stack.upper:
            assert isinstance(layer, NodeAttentionLayer)
        b = random_bundle(rng, n_nodes=3, edges=((0, 1), (1, 2)))
        f = feats_for(b)
        h = Tensor(rng.standard_normal((3, 16)).astype(np.float32))
        out1 = stack.upper[0](h, f.edge_index).data
        f_zeroed = GraphFeatures(f.node_text, f.node_vis, f.edge_index,
                                 np.zeros_like(f.edge_emb))
        out2 = stack.upper[0](h, f_zeroed.edge_index).data
        np.testing.assert_array_equal(out1, out2)

    def test_zeroed_edges_change_first_layer_only_path(self, rng):
        b = random_bundle(rng, n_nodes=3, edges=((0, 1), (1, 2)))
        stack = small_stack(rng)
        f = feats_for(b)
        base = stack(f).data
        zeroed = stack(GraphFeatures(f.node_text, f.node_vis, f.edge_index,
                                     np.zeros_like(f.edge_emb))).data
        assert np.abs(base - zeroed).max() > 0

    def test_ablation_stack_ignores_edge_embeddings_entirely(self, rng):
        b = random_bundle(rng, n_nodes=3, edges=((0, 1), (1, 2)))
        stack = small_stack(rng, edge_aware=False)
        f = feats_for(b)
        base = stack(f).data
        zeroed = stack(GraphFeatures(f.node_text, f.node_vis, f.edge_index,
                                     np.zeros_like(f.edge_emb))).data
        np.testing.assert_array_equal(base, zeroed)

    def test_full_stack_gradcheck(self):
        for seed in range(5):
            assert checked(_build_gnn_stack, seed) < 1e-3
