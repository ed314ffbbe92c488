"""Scene-graph domain types and the manifest/blob fixture format.

A fixture is a line-delimited manifest (one JSON record per image, after a
header record declaring embedding dims) plus sidecar binary blobs holding
the float32 embedding matrices. The blob byte layout is the contract with
the external extractor tool:

    magic "PRSM" | version u16 | dtype u16 (1 = float32) | rows u32 | cols u32
    followed by row-major little-endian data.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimMismatch, InvariantViolation, IoFailure, MissingBlob

BLOB_MAGIC = b"PRSM"
BLOB_VERSION = 1
_DTYPE_F32 = 1
_HEADER = struct.Struct("<4sHHII")

BBOX_EPS = 1e-6
UNIT_NORM_TOL = 1e-5


@dataclass
class ObjectNode:
    id: int
    label: str
    text_emb: np.ndarray   # (d_text,), unit L2 norm
    vis_emb: np.ndarray    # (d_vis,)
    bbox: tuple[float, float, float, float]  # (x, y, w, h), all in [0, 1]
    area: float


@dataclass
class RelationEdge:
    src: int
    dst: int
    label: str
    rel_emb: np.ndarray    # (d_text,), unit L2 norm


@dataclass
class SceneGraph:
    nodes: list[ObjectNode]
    edges: list[RelationEdge]

    @property
    def n(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class Triplet:
    subj: int
    rel_edge_index: int
    obj: int


@dataclass
class EmbeddingBundle:
    """Per-image fixture: caption embeddings, global visual and graph
    embeddings, the scene graph, and per-edge triplet-phrase embeddings
    (rows aligned with edge order)."""

    image_id: str
    caption_embs: np.ndarray   # (K, d_text), rows unit norm; K may be 0
    global_vis: np.ndarray     # (d_vis,)
    graph_emb: np.ndarray      # (d_g,)
    graph: SceneGraph
    phrase_embs: np.ndarray    # (|edges|, d_text), rows unit norm

    @property
    def num_captions(self) -> int:
        return int(self.caption_embs.shape[0])


def extract_triplets(g: SceneGraph) -> list[Triplet]:
    """One triplet per edge, in edge order."""
    return [Triplet(e.src, i, e.dst) for i, e in enumerate(g.edges)]


# ---------------------------------------------------------------------------
# blob i/o


def pack_blob(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise IoFailure(f"blobs hold 2-d matrices, got shape {arr.shape}")
    rows, cols = arr.shape
    return _HEADER.pack(BLOB_MAGIC, BLOB_VERSION, _DTYPE_F32, rows, cols) + \
        arr.astype("<f4").tobytes(order="C")


def unpack_blob(buf: bytes, offset: int = 0, origin: str = "<buffer>") -> tuple[np.ndarray, int]:
    """Parse one blob record starting at ``offset``; return (matrix, next offset)."""
    if len(buf) - offset < _HEADER.size:
        raise IoFailure(f"truncated blob header: {origin}")
    magic, version, dtype, rows, cols = _HEADER.unpack_from(buf, offset)
    if magic != BLOB_MAGIC:
        raise IoFailure(f"bad blob magic in {origin}")
    if version != BLOB_VERSION or dtype != _DTYPE_F32:
        raise IoFailure(f"unsupported blob version/dtype in {origin}")
    start = offset + _HEADER.size
    end = start + rows * cols * 4
    if len(buf) < end:
        raise IoFailure(f"blob data truncated in {origin}")
    data = np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=start)
    return data.reshape(rows, cols).astype(np.float32), end


def write_blob(path: Path, arr: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(pack_blob(arr))


def read_blob(path: Path) -> np.ndarray:
    if not path.is_file():
        raise MissingBlob(f"blob not found: {path}")
    raw = path.read_bytes()
    arr, end = unpack_blob(raw, 0, origin=str(path))
    if end != len(raw):
        raise IoFailure(f"blob size mismatch in {path}: {len(raw)} != {end}")
    return arr


# ---------------------------------------------------------------------------
# validation


def _check_finite(name: str, arr: np.ndarray, image_id: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise InvariantViolation(f"{image_id}: non-finite values in {name}")


def _check_unit_rows(name: str, arr: np.ndarray, image_id: str) -> None:
    if arr.shape[0] == 0:
        return
    norms = np.linalg.norm(arr, axis=1)
    bad = np.abs(norms - 1.0) > UNIT_NORM_TOL
    if np.any(bad):
        i = int(np.argmax(bad))
        raise InvariantViolation(
            f"{image_id}: {name} row {i} has L2 norm {norms[i]:.6f}, expected 1")


def validate_bundle(b: EmbeddingBundle) -> None:
    """Raise InvariantViolation unless every bundle invariant holds."""
    g = b.graph
    if g.n < 1:
        raise InvariantViolation(f"{b.image_id}: graph must have at least one node")
    for i, node in enumerate(g.nodes):
        if node.id != i:
            raise InvariantViolation(f"{b.image_id}: node ids must be contiguous from 0")
        x, y, w, h = node.bbox
        for v, nm in ((x, "x"), (y, "y"), (w, "w"), (h, "h"), (node.area, "area")):
            if not (0.0 <= v <= 1.0) or not np.isfinite(v):
                raise InvariantViolation(f"{b.image_id}: node {i} bbox {nm}={v} out of [0,1]")
        if x + w > 1.0 + BBOX_EPS or y + h > 1.0 + BBOX_EPS:
            raise InvariantViolation(f"{b.image_id}: node {i} bbox extends past the frame")
        _check_finite(f"node {i} vis_emb", node.vis_emb, b.image_id)
    seen = set()
    for j, e in enumerate(g.edges):
        if e.src == e.dst:
            raise InvariantViolation(f"{b.image_id}: edge {j} is a self loop")
        if not (0 <= e.src < g.n and 0 <= e.dst < g.n):
            raise InvariantViolation(f"{b.image_id}: edge {j} references a missing node")
        key = (e.src, e.dst, e.label)
        if key in seen:
            raise InvariantViolation(f"{b.image_id}: duplicate edge {key}")
        seen.add(key)
    node_text = np.stack([n.text_emb for n in g.nodes]) if g.nodes else np.zeros((0, 0))
    _check_finite("node text embeddings", node_text, b.image_id)
    _check_unit_rows("node text embeddings", node_text, b.image_id)
    if g.edges:
        edge_text = np.stack([e.rel_emb for e in g.edges])
        _check_finite("edge embeddings", edge_text, b.image_id)
        _check_unit_rows("edge embeddings", edge_text, b.image_id)
    _check_finite("caption embeddings", b.caption_embs, b.image_id)
    _check_unit_rows("caption embeddings", b.caption_embs, b.image_id)
    _check_finite("global visual embedding", b.global_vis, b.image_id)
    _check_finite("graph embedding", b.graph_emb, b.image_id)
    if b.phrase_embs.shape[0] != len(g.edges):
        raise InvariantViolation(
            f"{b.image_id}: {b.phrase_embs.shape[0]} phrase rows for {len(g.edges)} edges")
    _check_finite("phrase embeddings", b.phrase_embs, b.image_id)
    _check_unit_rows("phrase embeddings", b.phrase_embs, b.image_id)


# ---------------------------------------------------------------------------
# manifest i/o


@dataclass
class ManifestDims:
    d_text: int
    d_vis: int
    d_g: int


_BLOB_KEYS = ("captions", "global_vis", "graph_emb", "node_text", "node_vis", "edge_text", "phrase")


def save_manifest(bundles: list[EmbeddingBundle], path: Path,
                  dims: ManifestDims | None = None, meta: dict | None = None) -> None:
    """Write bundles as manifest + blobs under the manifest's directory.

    Blobs land in a ``blobs/`` sibling directory, one file per matrix.
    """
    path = Path(path)
    if dims is None:
        if not bundles:
            raise IoFailure("empty bundle list needs explicit dims")
        b0 = bundles[0]
        dims = ManifestDims(d_text=int(b0.graph.nodes[0].text_emb.shape[0]),
                            d_vis=int(b0.global_vis.shape[0]),
                            d_g=int(b0.graph_emb.shape[0]))
    for b in bundles:
        validate_bundle(b)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob_dir = path.parent / "blobs"
    header = {
        "format": "sg-manifest",
        "version": 1,
        "d_text": dims.d_text,
        "d_vis": dims.d_vis,
        "d_g": dims.d_g,
        "count": len(bundles),
    }
    if meta:
        header["meta"] = meta
    lines = [json.dumps(header, sort_keys=True)]
    for b in bundles:
        g = b.graph
        mats = {
            "captions": b.caption_embs.reshape(-1, dims.d_text),
            "global_vis": b.global_vis.reshape(1, -1),
            "graph_emb": b.graph_emb.reshape(1, -1),
            "node_text": np.stack([n.text_emb for n in g.nodes]),
            "node_vis": np.stack([n.vis_emb for n in g.nodes]),
            "edge_text": (np.stack([e.rel_emb for e in g.edges])
                          if g.edges else np.zeros((0, dims.d_text), dtype=np.float32)),
            "phrase": b.phrase_embs.reshape(-1, dims.d_text),
        }
        refs = {}
        for key in _BLOB_KEYS:
            rel = f"blobs/{b.image_id}.{key}.bin"
            write_blob(path.parent / rel, mats[key])
            refs[key] = rel
        record = {
            "image_id": b.image_id,
            "blobs": refs,
            "nodes": [{"label": n.label,
                       "bbox": [float(v) for v in n.bbox],
                       "area": float(n.area)} for n in g.nodes],
            "edges": [{"src": e.src, "dst": e.dst, "label": e.label} for e in g.edges],
        }
        lines.append(json.dumps(record, sort_keys=True))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _expect_shape(name: str, arr: np.ndarray, rows: int, cols: int, image_id: str) -> None:
    if arr.shape[1] != cols:
        raise DimMismatch(
            f"{image_id}: {name} has {arr.shape[1]} columns, manifest declares {cols}")
    if rows >= 0 and arr.shape[0] != rows:
        raise DimMismatch(
            f"{image_id}: {name} has {arr.shape[0]} rows, expected {rows}")


def load_manifest(path: Path) -> list[EmbeddingBundle]:
    """Load and validate all bundles referenced by a manifest, in file order."""
    path = Path(path)
    if not path.is_file():
        raise IoFailure(f"manifest not found: {path}")
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise IoFailure(f"empty manifest: {path}")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise IoFailure(f"bad manifest header: {exc}") from exc
    if header.get("format") != "sg-manifest":
        raise IoFailure(f"not a manifest file: {path}")
    dims = ManifestDims(int(header["d_text"]), int(header["d_vis"]), int(header["d_g"]))
    bundles = []
    for ln in lines[1:]:
        try:
            rec = json.loads(ln)
        except json.JSONDecodeError as exc:
            raise IoFailure(f"bad manifest record: {exc}") from exc
        image_id = rec["image_id"]
        mats = {key: read_blob(path.parent / rec["blobs"][key]) for key in _BLOB_KEYS}
        n = len(rec["nodes"])
        n_edges = len(rec["edges"])
        _expect_shape("captions", mats["captions"], -1, dims.d_text, image_id)
        _expect_shape("global_vis", mats["global_vis"], 1, dims.d_vis, image_id)
        _expect_shape("graph_emb", mats["graph_emb"], 1, dims.d_g, image_id)
        _expect_shape("node_text", mats["node_text"], n, dims.d_text, image_id)
        _expect_shape("node_vis", mats["node_vis"], n, dims.d_vis, image_id)
        _expect_shape("edge_text", mats["edge_text"], n_edges, dims.d_text, image_id)
        _expect_shape("phrase", mats["phrase"], n_edges, dims.d_text, image_id)
        nodes = [ObjectNode(id=i, label=nd["label"],
                            text_emb=mats["node_text"][i],
                            vis_emb=mats["node_vis"][i],
                            bbox=tuple(float(v) for v in nd["bbox"]),
                            area=float(nd["area"]))
                 for i, nd in enumerate(rec["nodes"])]
        edges = [RelationEdge(src=int(ed["src"]), dst=int(ed["dst"]), label=ed["label"],
                              rel_emb=mats["edge_text"][j])
                 for j, ed in enumerate(rec["edges"])]
        bundle = EmbeddingBundle(
            image_id=image_id,
            caption_embs=mats["captions"],
            global_vis=mats["global_vis"][0],
            graph_emb=mats["graph_emb"][0],
            graph=SceneGraph(nodes=nodes, edges=edges),
            phrase_embs=mats["phrase"],
        )
        validate_bundle(bundle)
        bundles.append(bundle)
    return bundles


def manifest_dims(path: Path) -> ManifestDims:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
    return ManifestDims(int(header["d_text"]), int(header["d_vis"]), int(header["d_g"]))
