"""Seeded synthetic fixtures with planted importance and similarity structure.

Caption embeddings are noisy copies of per-cluster prototype directions, and
salient item embeddings are noisy copies of the same directions, so both the
item importance scores and the pair similarity matrix are controlled:
salient items score ~0.9 against their image's captions, planted noise items
~0 (their embeddings are kept orthogonal to every prototype), and images in
the same cluster are mutually similar while clusters stay near-orthogonal.

Two modes:

* ``clusters``: graph sizes sweep 3..15 with extra noise nodes on larger
  graphs (retention analysis), and object/relation/visual features all carry
  the cluster signal.
* ``relations``: every image shares identical objects, layout, and global
  visual embedding; only the relation embeddings (and captions/phrases)
  differ by cluster. Distinguishing clusters then requires reading edges.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid
from .graphcore import (EmbeddingBundle, ManifestDims, ObjectNode, RelationEdge,
                        SceneGraph, save_manifest)

MODES = ("clusters", "relations")

N_SALIENT = 3          # cluster mode: salient objects per graph
MIN_SIZE, MAX_SIZE = 3, 15


@dataclass
class SynthSettings:
    images: int = 50
    clusters: int = 5
    captions_per_image: int = 3
    mode: str = "clusters"
    d_text: int = 32
    d_vis: int = 32
    d_g: int = 16
    seed: int = 7

    def validate(self) -> "SynthSettings":
        if self.mode not in MODES:
            raise ConfigInvalid(f"synth mode must be one of {MODES}, got {self.mode!r}")
        if self.images < 2 or self.clusters < 2:
            raise ConfigInvalid("need at least 2 images and 2 clusters")
        if self.images < self.clusters:
            raise ConfigInvalid("need at least one image per cluster")
        if self.captions_per_image < 1:
            raise ConfigInvalid("need at least one caption per image")
        min_dim = max(self.clusters + 4, N_SALIENT + 1)
        if self.d_text < min_dim:
            raise ConfigInvalid(f"d_text must be >= {min_dim} for {self.clusters} clusters")
        return self


def _orthonormal(rng: np.random.Generator, dim: int, count: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((dim, count)))
    return q.T.astype(np.float32)  # rows are orthonormal directions


def _noisy_unit(rng: np.random.Generator, base: np.ndarray, sigma: float) -> np.ndarray:
    d = base.shape[0]
    v = base + sigma * rng.standard_normal(d).astype(np.float32) / math.sqrt(d)
    return (v / np.linalg.norm(v)).astype(np.float32)


def _orthogonal_noise(rng: np.random.Generator, protos: np.ndarray) -> np.ndarray:
    """Unit vector orthogonal to every prototype row (scores stay near zero)."""
    d = protos.shape[1]
    v = rng.standard_normal(d).astype(np.float32)
    v = v - protos.T @ (protos @ v)
    return (v / np.linalg.norm(v)).astype(np.float32)


def _bbox(rng: np.random.Generator) -> tuple[float, float, float, float]:
    w, h = rng.uniform(0.08, 0.45, size=2)
    x = rng.uniform(0.0, 1.0 - w)
    y = rng.uniform(0.0, 1.0 - h)
    return float(x), float(y), float(w), float(h)


def _graph_emb(rng: np.random.Generator, node_text: np.ndarray, d_g: int) -> np.ndarray:
    mean = node_text.mean(axis=0)
    base = mean[:d_g] if mean.shape[0] >= d_g else np.pad(mean, (0, d_g - mean.shape[0]))
    return (base + 0.05 * rng.standard_normal(d_g)).astype(np.float32)


def _clusters_image(rng, s, image_id, cluster, size, text_protos, rel_protos, vis_protos):
    u = text_protos[cluster]
    r = rel_protos[cluster]
    v = vis_protos[cluster]
    protos = np.concatenate([text_protos, rel_protos], axis=0)
    planted_objects, planted_triplets = {}, {}

    nodes = []
    for i in range(size):
        salient = i < N_SALIENT
        text = _noisy_unit(rng, u, 0.3) if salient else _orthogonal_noise(rng, protos)
        vis = (v + 0.3 * rng.standard_normal(s.d_vis).astype(np.float32) / math.sqrt(s.d_vis)
               if salient else rng.standard_normal(s.d_vis).astype(np.float32)
               / math.sqrt(s.d_vis))
        x, y, w, h = _bbox(rng)
        nodes.append(ObjectNode(id=i, label=(f"s{i}" if salient else f"n{i}"),
                                text_emb=text, vis_emb=vis.astype(np.float32),
                                bbox=(x, y, w, h), area=w * h))
        planted_objects[i] = salient

    edges, phrases = [], []
    for j in range(N_SALIENT - 1):  # salient chain: important triplets
        edges.append(RelationEdge(src=j, dst=j + 1, label=f"r{len(edges)}",
                                  rel_emb=_noisy_unit(rng, r, 0.3)))
        phrases.append(_noisy_unit(rng, u, 0.3))
        planted_triplets[len(edges) - 1] = True
    for i in range(N_SALIENT, size):  # one incidental edge per noise node
        src = int(rng.integers(0, i))
        edges.append(RelationEdge(src=src, dst=i, label=f"r{len(edges)}",
                                  rel_emb=_orthogonal_noise(rng, protos)))
        phrases.append(_orthogonal_noise(rng, protos))
        planted_triplets[len(edges) - 1] = False

    node_text = np.stack([n.text_emb for n in nodes])
    caps = np.stack([_noisy_unit(rng, u, 0.2) for _ in range(s.captions_per_image)])
    bundle = EmbeddingBundle(
        image_id=image_id,
        caption_embs=caps,
        global_vis=(v + 0.2 * rng.standard_normal(s.d_vis).astype(np.float32)
                    / math.sqrt(s.d_vis)).astype(np.float32),
        graph_emb=_graph_emb(rng, node_text, s.d_g),
        graph=SceneGraph(nodes=nodes, edges=edges),
        phrase_embs=np.stack(phrases),
    )
    return bundle, planted_objects, planted_triplets


def _relations_image(rng, s, image_id, cluster, shared, rel_protos):
    r = rel_protos[cluster]
    nodes = [ObjectNode(id=i, label=f"o{i}", text_emb=shared["text"][i],
                        vis_emb=shared["vis"][i], bbox=shared["bbox"][i],
                        area=shared["area"][i])
             for i in range(len(shared["text"]))]
    edges, phrases = [], []
    for j, (src, dst) in enumerate(shared["topology"]):
        edges.append(RelationEdge(src=src, dst=dst, label=f"rel{j}",
                                  rel_emb=_noisy_unit(rng, r, 0.15)))
        phrases.append(_noisy_unit(rng, r, 0.2))
    caps = np.stack([_noisy_unit(rng, r, 0.2) for _ in range(s.captions_per_image)])
    bundle = EmbeddingBundle(
        image_id=image_id,
        caption_embs=caps,
        global_vis=shared["global_vis"],
        graph_emb=shared["graph_emb"],
        graph=SceneGraph(nodes=nodes, edges=edges),
        phrase_embs=np.stack(phrases),
    )
    planted_objects = {i: True for i in range(len(nodes))}   # kept via closure
    planted_triplets = {j: True for j in range(len(edges))}
    return bundle, planted_objects, planted_triplets


def generate_fixtures(settings: SynthSettings) -> tuple[list[EmbeddingBundle], dict]:
    """Bundles plus the planted ground truth (cluster and salience labels)."""
    s = settings.validate()
    rng = np.random.default_rng(s.seed)
    text_protos = _orthonormal(rng, s.d_text, s.clusters)
    rel_protos = _orthonormal(rng, s.d_text, s.clusters)
    vis_protos = _orthonormal(rng, s.d_vis, s.clusters)

    shared = None
    if s.mode == "relations":
        n_obj = 4
        obj_dirs = _orthonormal(rng, s.d_text, n_obj)
        # object embeddings orthogonal to every relation prototype
        obj_dirs = np.stack([_orthogonal_noise(rng, np.concatenate([rel_protos, obj_dirs[:i]]))
                             if i else _orthogonal_noise(rng, rel_protos)
                             for i in range(n_obj)])
        geo = [_bbox(rng) for _ in range(n_obj)]
        shared = {
            "text": obj_dirs,
            "vis": rng.standard_normal((n_obj, s.d_vis)).astype(np.float32)
            / math.sqrt(s.d_vis),
            "bbox": geo,
            "area": [w * h for (_, _, w, h) in geo],
            "topology": [(0, 1), (1, 2), (2, 3)],
            "global_vis": rng.standard_normal(s.d_vis).astype(np.float32)
            / math.sqrt(s.d_vis),
            "graph_emb": rng.standard_normal(s.d_g).astype(np.float32),
        }

    bundles = []
    planted = {"mode": s.mode, "cluster": {}, "objects": {}, "triplets": {}}
    for k in range(s.images):
        cluster = k % s.clusters
        image_id = f"img{k:04d}"
        if s.mode == "clusters":
            size = MIN_SIZE + (k % (MAX_SIZE - MIN_SIZE + 1))
            bundle, objs, trips = _clusters_image(
                rng, s, image_id, cluster, size, text_protos, rel_protos, vis_protos)
        else:
            bundle, objs, trips = _relations_image(rng, s, image_id, cluster,
                                                   shared, rel_protos)
        bundles.append(bundle)
        planted["cluster"][image_id] = cluster
        planted["objects"].update({f"{image_id}:{i}": flag for i, flag in objs.items()})
        planted["triplets"].update({f"{image_id}:{j}": flag for j, flag in trips.items()})
    return bundles, planted


def write_fixtures(settings: SynthSettings, out_dir: Path) -> tuple[Path, Path]:
    """Write manifest + blobs + planted-labels sidecar; returns their paths."""
    out_dir = Path(out_dir)
    bundles, planted = generate_fixtures(settings)
    manifest = out_dir / "manifest.jsonl"
    save_manifest(bundles, manifest,
                  dims=ManifestDims(settings.d_text, settings.d_vis, settings.d_g),
                  meta={"generator": "synth-fixtures", "mode": settings.mode,
                        "seed": str(settings.seed)})
    planted_path = out_dir / "planted.json"
    planted_path.write_text(json.dumps(planted, sort_keys=True, indent=1) + "\n",
                            encoding="utf-8")
    return manifest, planted_path
