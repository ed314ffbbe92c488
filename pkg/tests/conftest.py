"""Shared synthetic-fixture builders for the test suite."""

import numpy as np
import pytest

from sgretrieval.graphcore import (EmbeddingBundle, ObjectNode, RelationEdge, SceneGraph)


def unit(v):
    v = np.asarray(v, dtype=np.float32)
    return v / np.linalg.norm(v)


def unit_rows(m):
    m = np.asarray(m, dtype=np.float32)
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def random_bundle(rng, image_id="img0", n_nodes=3, edges=((0, 1), (1, 2)),
                  d_text=8, d_vis=6, d_g=4, num_captions=2):
    """A valid random bundle with the given topology."""
    nodes = []
    for i in range(n_nodes):
        x, y = rng.uniform(0, 0.5, size=2)
        w, h = rng.uniform(0.05, 0.4, size=2)
        nodes.append(ObjectNode(
            id=i, label=f"obj{i}",
            text_emb=unit(rng.standard_normal(d_text)),
            vis_emb=rng.standard_normal(d_vis).astype(np.float32),
            bbox=(float(x), float(y), float(w), float(h)),
            area=float(w * h)))
    edge_list = [RelationEdge(src=s, dst=d, label=f"rel{k}",
                              rel_emb=unit(rng.standard_normal(d_text)))
                 for k, (s, d) in enumerate(edges)]
    return EmbeddingBundle(
        image_id=image_id,
        caption_embs=(unit_rows(rng.standard_normal((num_captions, d_text)))
                      if num_captions else np.zeros((0, d_text), dtype=np.float32)),
        global_vis=rng.standard_normal(d_vis).astype(np.float32),
        graph_emb=rng.standard_normal(d_g).astype(np.float32),
        graph=SceneGraph(nodes=nodes, edges=edge_list),
        phrase_embs=(unit_rows(rng.standard_normal((len(edge_list), d_text)))
                     if edge_list else np.zeros((0, d_text), dtype=np.float32)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
