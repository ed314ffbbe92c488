"""Importance scoring of scene-graph objects and triplets.

Ground truth: an item's score is the mean inner product between its text
embedding and the image's caption embeddings. Predictions come from a
transformer scoring model: the five item tokens are projected, encoded,
summarized by cross-attention against a set of learned queries, mean-pooled
and mapped to a scalar.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import (DimMismatch, EmptyCaptions, InsufficientData, LengthMismatch,
                     MissingGroundTruth)
from .graphcore import EmbeddingBundle
from .numerics import (Adam, LrSchedule, MLP, Module, MultiHeadAttention, Parameter,
                       Tensor, TransformerEncoder)
from .numerics import tensor as T

NUM_TOKENS = 5  # subject, object, relation, global visual, global graph


def triplet_phrase(subj_label: str, rel_label: str, obj_label: str) -> str:
    """Space-joined phrase form of a triplet, e.g. "dog biting frisbee"."""
    return f"{subj_label} {rel_label} {obj_label}"


def gt_object_score(obj_text_emb: np.ndarray, caption_embs: np.ndarray) -> float:
    """Mean inner product of the object embedding with each caption embedding."""
    if caption_embs.shape[0] == 0:
        raise EmptyCaptions("ground-truth scores need at least one caption")
    return float(np.mean(caption_embs @ obj_text_emb))


def gt_triplet_score(phrase_emb: np.ndarray, caption_embs: np.ndarray) -> float:
    """Same contract as the object score, applied to the triplet-phrase embedding."""
    if caption_embs.shape[0] == 0:
        raise EmptyCaptions("ground-truth scores need at least one caption")
    return float(np.mean(caption_embs @ phrase_emb))


class TargetKind(enum.Enum):
    OBJECT = "object"
    TRIPLET = "triplet"


@dataclass
class ScoreTarget:
    """One scoring instance: five input token vectors plus optional ground truth.

    For object targets the object-b and relation tokens are exact zero
    vectors. ``ref`` is the node id (objects) or edge index (triplets).
    """

    kind: TargetKind
    ref: int
    tokens: np.ndarray          # (5, token_dim)
    gt_score: float | None = None
    image_id: str = ""


def _pad(vec: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros(width, dtype=np.float32)
    out[: vec.shape[0]] = vec
    return out


def token_dim(d_text: int, d_vis: int, d_g: int) -> int:
    # object tokens concatenate text and visual features; everything else pads up
    return max(d_text + d_vis, d_text, d_vis, d_g)


def build_targets(bundle: EmbeddingBundle, with_gt: bool = True) -> list[ScoreTarget]:
    """All object and triplet scoring targets for one bundle, in node then edge order."""
    g = bundle.graph
    d_text = g.nodes[0].text_emb.shape[0]
    d_vis = bundle.global_vis.shape[0]
    d_g = bundle.graph_emb.shape[0]
    width = token_dim(d_text, d_vis, d_g)
    z_img = _pad(bundle.global_vis, width)
    z_graph = _pad(bundle.graph_emb, width)
    zero = np.zeros(width, dtype=np.float32)

    def obj_token(i: int) -> np.ndarray:
        return _pad(np.concatenate([g.nodes[i].text_emb, g.nodes[i].vis_emb]), width)

    targets = []
    for node in g.nodes:
        tokens = np.stack([obj_token(node.id), zero, zero, z_img, z_graph])
        gt = gt_object_score(node.text_emb, bundle.caption_embs) if with_gt else None
        targets.append(ScoreTarget(TargetKind.OBJECT, node.id, tokens, gt, bundle.image_id))
    for j, edge in enumerate(g.edges):
        tokens = np.stack([obj_token(edge.src), obj_token(edge.dst),
                           _pad(edge.rel_emb, width), z_img, z_graph])
        gt = gt_triplet_score(bundle.phrase_embs[j], bundle.caption_embs) if with_gt else None
        targets.append(ScoreTarget(TargetKind.TRIPLET, j, tokens, gt, bundle.image_id))
    return targets


class ImportanceModel(Module):
    """Transformer scorer with learned-query cross-attention pooling."""

    def __init__(self, in_dim: int, hidden: int = 1536, layers: int = 3, heads: int = 32,
                 num_queries: int = 4, p_drop: float = 0.1,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        if num_queries < 1:
            raise ValueError("need at least one learned query")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim = in_dim
        self.hidden = hidden
        self.input_mlp = MLP([in_dim, hidden, hidden], rng, dtype=dtype)
        self.encoder = TransformerEncoder(hidden, layers, heads, p_drop, rng, dtype=dtype)
        self.queries = Parameter(rng.normal(0.0, 0.02, size=(num_queries, hidden)), dtype=dtype)
        self.pool_attn = MultiHeadAttention(hidden, heads, rng, dtype=dtype)
        self.out_mlp = MLP([hidden, hidden, 1], rng, dtype=dtype)

    def forward(self, tokens: Tensor) -> Tensor:
        """tokens (batch, n_tokens, in_dim) -> scores (batch,)."""
        if tokens.shape[-1] != self.in_dim:
            raise DimMismatch(f"model expects token dim {self.in_dim}, got {tokens.shape}")
        batch = tokens.shape[0]
        enc = self.encoder(self.input_mlp(tokens))
        q = T.broadcast_to(T.reshape(self.queries, (1,) + self.queries.shape),
                           (batch,) + self.queries.shape)
        summaries = self.pool_attn(q, enc, enc)      # (batch, num_queries, hidden)
        pooled = T.mean(summaries, axis=1)           # (batch, hidden)
        return T.reshape(self.out_mlp(pooled), (batch,))


def predict_score(model: ImportanceModel, target: ScoreTarget) -> float:
    model.eval()
    out = model.forward(Tensor(target.tokens[None, :, :]))
    return float(out.data[0])


def predict_scores(model: ImportanceModel, targets: list[ScoreTarget]) -> np.ndarray:
    model.eval()
    if not targets:
        return np.zeros(0, dtype=np.float32)
    tokens = Tensor(np.stack([t.tokens for t in targets]))
    return model.forward(tokens).data.copy()


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


def train_importance(model: ImportanceModel, targets: list[ScoreTarget], *,
                     epochs: int, batch_size: int = 32,
                     schedule: LrSchedule | None = None, seed: int = 0,
                     log=None) -> TrainReport:
    """Minimize mean squared error between predicted and ground-truth scores."""
    if not targets:
        raise InsufficientData("no scoring targets to train on")
    for t in targets:
        if t.gt_score is None:
            raise MissingGroundTruth(f"target {t.kind.value}:{t.ref} has no ground truth")
    schedule = schedule or LrSchedule()
    rng = np.random.default_rng(seed)
    tokens = np.stack([t.tokens for t in targets])
    gts = np.array([t.gt_score for t in targets], dtype=np.float32)
    n = len(targets)
    opt = Adam(model.parameters(), lr=schedule.base_lr)
    model.train(True)
    report = TrainReport()
    for epoch in range(epochs):
        opt.lr = schedule.lr(epoch)
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            idx = order[start: start + batch_size]
            preds = model.forward(Tensor(tokens[idx]))
            err = T.sub(preds, Tensor(gts[idx]))
            loss = T.mean(T.mul(err, err))
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.data) * len(idx)
        report.losses.append(epoch_loss / n)
        report.lrs.append(opt.lr)
        if log:
            log(epoch, report.losses[-1])
    model.eval()
    return report


def eval_importance_classifier(preds, gts, threshold: float) -> dict:
    """Binarize both score lists at ``threshold`` and report positive-class
    recall and F1. Vacuous cases (nothing positive anywhere) count as perfect."""
    preds = np.asarray(preds, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    if preds.shape != gts.shape:
        raise LengthMismatch(f"{preds.shape} predictions vs {gts.shape} ground truths")
    p = preds > threshold
    g = gts > threshold
    tp = int(np.sum(p & g))
    fp = int(np.sum(p & ~g))
    fn = int(np.sum(~p & g))
    recall = tp / (tp + fn) if (tp + fn) else 1.0
    f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 1.0
    return {"recall": recall, "f1": f1, "tp": tp, "fp": fp, "fn": fn}
