"""Dual-stream multimodal embeddings and inner-product retrieval.

The visual stream pushes the global image embedding through a shallow MLP
and rescales it to a fixed L2 norm (a magnitude cap that keeps the global
features from dominating); the graph stream runs the attention GNN over the
pruned scene graph. Their concatenation is the final image embedding, and
retrieval ranks candidates by plain inner product against it.

Training regresses pair inner products onto a caption-derived similarity
with weights exp(2 * s), which up-weights highly similar pairs; the pair
sampler additionally oversamples the top decile of similarities.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (EmptyCaptions, EmptyIndex, InsufficientPairs, IoFailure,
                     ZeroVisualActivation)
from .gnn import GnnStack, GraphFeatures, graph_features
from .graphcore import EmbeddingBundle, SceneGraph, pack_blob, unpack_blob
from .numerics import Adam, Linear, LrSchedule, Module, Tensor
from .numerics import tensor as T

VISUAL_NORM_FLOOR = 1e-9


def surrogate_similarity(caps_i: np.ndarray, caps_j: np.ndarray) -> float:
    """Average pairwise inner product between two caption-embedding sets."""
    if caps_i.shape[0] == 0 or caps_j.shape[0] == 0:
        raise EmptyCaptions("surrogate similarity needs captions on both sides")
    return float(np.mean(caps_i.astype(np.float64) @ caps_j.astype(np.float64).T))


def pair_similarity_matrix(bundles: list[EmbeddingBundle]) -> np.ndarray:
    """Symmetric matrix of surrogate similarities over all bundle pairs."""
    means = []
    for b in bundles:
        if b.num_captions == 0:
            raise EmptyCaptions(f"{b.image_id}: no captions for pair ground truth")
        means.append(b.caption_embs.astype(np.float64).mean(axis=0))
    m = np.stack(means)
    # mean of pairwise inner products equals the inner product of means
    return m @ m.T


def cached_pair_matrix(bundles: list[EmbeddingBundle], manifest_path: Path | None,
                       cache_path: Path | None = None) -> np.ndarray:
    """Pair ground truth, cached on disk keyed by the manifest's content hash."""
    if manifest_path is None or cache_path is None:
        return pair_similarity_matrix(bundles)
    key = hashlib.sha256(Path(manifest_path).read_bytes()).hexdigest()[:16]
    cache_path = Path(cache_path)
    if cache_path.is_file():
        raw = cache_path.read_bytes()
        nl = raw.find(b"\n")
        try:
            header = json.loads(raw[:nl].decode("utf-8"))
            if header.get("manifest_hash") == key:
                mat, _ = unpack_blob(raw, nl + 1, origin=str(cache_path))
                return mat.astype(np.float64)
        except (json.JSONDecodeError, UnicodeDecodeError, IoFailure):
            pass  # stale or corrupt cache: recompute below
    s = pair_similarity_matrix(bundles)
    cache_path.parent.mkdir(parents=True, exist_ok=True)
    with open(cache_path, "wb") as fh:
        fh.write(json.dumps({"manifest_hash": key}).encode("utf-8"))
        fh.write(b"\n")
        fh.write(pack_blob(s.astype(np.float32)))
    return s


def weighted_pair_loss(s_hat: float, s: float) -> tuple[float, float]:
    """(loss contribution, weight) for one pair: w = exp(2 s), w * (s_hat - s)^2."""
    w = float(np.exp(2.0 * s))
    return w * (s_hat - s) ** 2, w


class DualStreamModel(Module):
    """Norm-capped visual MLP alongside the graph attention stack."""

    def __init__(self, d_vis: int, d_text: int, alpha: float = 0.7,
                 vis_hidden: int = 64, d_vis_out: int = 32, d_graph_out: int = 32,
                 gnn_hidden: int = 64, gnn_heads: int = 4, gnn_layers: int = 3,
                 edge_aware: bool = True, reverse_edges: bool = False,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.alpha = alpha
        self.d_vis_out = d_vis_out
        self.d_graph_out = d_graph_out
        self.vis1 = Linear(d_vis, vis_hidden, rng, dtype=dtype)
        self.vis2 = Linear(vis_hidden, d_vis_out, rng, dtype=dtype)
        self.gnn = GnnStack(d_text=d_text, d_vis=d_vis + 5, hidden=gnn_hidden,
                            heads=gnn_heads, layers=gnn_layers, out_dim=d_graph_out,
                            edge_aware=edge_aware, reverse_edges=reverse_edges,
                            rng=rng, dtype=dtype)

    @property
    def out_dim(self) -> int:
        return self.d_vis_out + self.d_graph_out

    def visual_stream(self, z_img: Tensor) -> Tensor:
        """(1, d_vis) -> (1, d_vis_out) with L2 norm pinned to alpha."""
        y = self.vis2(T.leaky_relu(self.vis1(z_img), 0.2))
        if float(np.linalg.norm(y.data)) < VISUAL_NORM_FLOOR:
            raise ZeroVisualActivation("visual projection collapsed to zero norm")
        return T.l2_scale(y, self.alpha)

    def embed(self, feats: GraphFeatures, z_img: Tensor) -> Tensor:
        """Concatenated [visual | graph] embedding, shape (1, out_dim)."""
        return T.concat([self.visual_stream(z_img), self.gnn(feats)], axis=1)


def embed_image(model: DualStreamModel, bundle: EmbeddingBundle,
                pruned: SceneGraph) -> np.ndarray:
    """Final embedding of one image from its global visual input and pruned graph."""
    feats = graph_features(pruned, reverse_edges=model.gnn.reverse_edges)
    z_img = Tensor(bundle.global_vis.reshape(1, -1))
    return model.embed(feats, z_img).data[0].copy()


@dataclass
class RetrievalTrainSettings:
    epochs: int = 60
    pairs_per_image: int = 64      # sampled pairs per epoch = this * n_images
    batch_pairs: int | None = None  # None: one optimizer step over the epoch's sample
    hard_fraction: float = 0.5     # share of each batch drawn from the hard-positive pool
    hard_top_fraction: float = 0.1  # hard pool = this top fraction by similarity
    schedule: LrSchedule = field(default_factory=LrSchedule)
    seed: int = 0


@dataclass
class RetrievalTrainReport:
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


def _sample_pairs(rng, all_pairs: np.ndarray, hard_pool: np.ndarray,
                  count: int, hard_fraction: float) -> np.ndarray:
    n_hard = int(round(count * hard_fraction)) if hard_pool.size else 0
    n_uniform = count - n_hard
    picks = [all_pairs[rng.integers(0, len(all_pairs), size=n_uniform)]]
    if n_hard:
        picks.append(hard_pool[rng.integers(0, len(hard_pool), size=n_hard)])
    return np.concatenate(picks, axis=0)


def train_retrieval(model: DualStreamModel, bundles: list[EmbeddingBundle],
                    graphs: list[SceneGraph], settings: RetrievalTrainSettings,
                    sim: np.ndarray | None = None, log=None) -> RetrievalTrainReport:
    """Fit pair inner products to the caption-derived similarity targets.

    ``graphs`` are the (already pruned) scene graphs to embed, parallel to
    ``bundles``; ``sim`` may supply a precomputed pair ground-truth matrix.
    """
    n = len(bundles)
    if n < 2:
        raise InsufficientPairs("training needs at least two bundles")
    if sim is None:
        sim = pair_similarity_matrix(bundles)
    feats = [graph_features(g, reverse_edges=model.gnn.reverse_edges) for g in graphs]
    z_imgs = [b.global_vis.reshape(1, -1) for b in bundles]

    iu, ju = np.triu_indices(n, k=1)
    all_pairs = np.stack([iu, ju], axis=1)
    pair_sims = sim[iu, ju]
    pool_size = max(1, int(round(len(all_pairs) * settings.hard_top_fraction)))
    hard_pool = all_pairs[np.argsort(-pair_sims)[:pool_size]]

    rng = np.random.default_rng(settings.seed)
    opt = Adam(model.parameters(), lr=settings.schedule.base_lr)
    model.train(True)
    report = RetrievalTrainReport()
    per_epoch = settings.pairs_per_image * n
    batch = settings.batch_pairs or per_epoch
    for epoch in range(settings.epochs):
        opt.lr = settings.schedule.lr(epoch)
        sampled = _sample_pairs(rng, all_pairs, hard_pool, per_epoch, settings.hard_fraction)
        epoch_loss, seen = 0.0, 0
        for start in range(0, len(sampled), batch):
            chunk = sampled[start: start + batch]
            used = np.unique(chunk)
            remap = {int(img): k for k, img in enumerate(used)}
            rows = [model.embed(feats[int(img)], Tensor(z_imgs[int(img)])) for img in used]
            emb = T.concat(rows, axis=0)
            li = np.array([remap[int(i)] for i in chunk[:, 0]])
            rj = np.array([remap[int(j)] for j in chunk[:, 1]])
            preds = T.sum_(T.mul(T.gather_rows(emb, li), T.gather_rows(emb, rj)), axis=1)
            targets = sim[chunk[:, 0], chunk[:, 1]].astype(np.float32)
            weights = np.exp(2.0 * targets).astype(np.float32)
            err = T.sub(preds, Tensor(targets))
            loss = T.mean(T.mul(Tensor(weights), T.mul(err, err)))
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.data) * len(chunk)
            seen += len(chunk)
        report.losses.append(epoch_loss / seen)
        report.lrs.append(opt.lr)
        if log:
            log(epoch, report.losses[-1])
    model.eval()
    return report


# ---------------------------------------------------------------------------
# index


@dataclass(frozen=True)
class RetrievalIndex:
    image_ids: tuple[str, ...]
    embeddings: np.ndarray  # (n, out_dim) float32

    def __post_init__(self):
        if not np.all(np.isfinite(self.embeddings)):
            raise IoFailure("index embeddings must be finite")

    def __len__(self) -> int:
        return len(self.image_ids)


def build_index(model: DualStreamModel, bundles: list[EmbeddingBundle],
                graphs: list[SceneGraph]) -> RetrievalIndex:
    model.eval()
    emb = np.stack([embed_image(model, b, g) for b, g in zip(bundles, graphs)])
    return RetrievalIndex(tuple(b.image_id for b in bundles), emb.astype(np.float32))


def query(index: RetrievalIndex, query_emb: np.ndarray, top_k: int,
          exclude: str | None = None) -> list[tuple[int, str, float]]:
    """Top-k candidates by inner product, ties broken by ascending image id."""
    if len(index) == 0:
        raise EmptyIndex("cannot query an empty index")
    scores = index.embeddings.astype(np.float64) @ query_emb.astype(np.float64)
    order = sorted(range(len(index)),
                   key=lambda k: (-scores[k], index.image_ids[k]))
    out = []
    for k in order:
        if exclude is not None and index.image_ids[k] == exclude:
            continue
        out.append((len(out) + 1, index.image_ids[k], float(scores[k])))
        if len(out) == top_k:
            break
    return out


def save_index(path: Path, index: RetrievalIndex, config_hash: str = "") -> None:
    header = {
        "format": "sg-index",
        "version": 1,
        "image_ids": list(index.image_ids),
        "dim": int(index.embeddings.shape[1]) if len(index) else 0,
        "config_hash": config_hash,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(pack_blob(index.embeddings))


def load_index(path: Path) -> tuple[RetrievalIndex, dict]:
    path = Path(path)
    if not path.is_file():
        raise IoFailure(f"index not found: {path}")
    raw = path.read_bytes()
    nl = raw.find(b"\n")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise IoFailure(f"malformed index header: {exc}") from exc
    if header.get("format") != "sg-index":
        raise IoFailure(f"not an index file: {path}")
    mat, _ = unpack_blob(raw, nl + 1, origin=str(path))
    ids = tuple(header["image_ids"])
    if mat.shape[0] != len(ids):
        raise IoFailure("index row count does not match id table")
    return RetrievalIndex(ids, mat), header
