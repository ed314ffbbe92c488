"""Command-line surface for the retrieval engine.

Commands cover the whole pipeline: fixture synthesis, importance training
and scoring, pruning, retrieval training, indexing, querying, evaluation,
retention reporting, and gradient self-verification. Report-emitting
commands write a delimited .tsv plus a rendered .png figure side by side.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import evalmetrics, gradsuite, importance, pruner, retrieval
from .config import RunConfig, load_config
from .errors import EngineError, IoFailure, ScoreCoverageIncomplete
from .graphcore import EmbeddingBundle, load_manifest, manifest_dims, save_manifest
from .numerics import LrSchedule, load_checkpoint, save_checkpoint
from .synth import SynthSettings, write_fixtures


def _float_cell(v: float) -> str:
    return f"{v:.8f}"


def _write_tsv(path: Path, header: list[str], rows: list[tuple]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join(_float_cell(c) if isinstance(c, float) else str(c)
                               for c in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _importance_model(cfg: RunConfig, dims, dtype=np.float32) -> importance.ImportanceModel:
    width = importance.token_dim(dims.d_text, dims.d_vis, dims.d_g)
    rng = np.random.default_rng(cfg.seed)
    return importance.ImportanceModel(width, hidden=cfg.imp_hidden, layers=cfg.imp_layers,
                                      heads=cfg.imp_heads, num_queries=cfg.imp_queries,
                                      p_drop=cfg.dropout, rng=rng, dtype=dtype)


def _retrieval_model(cfg: RunConfig, dims, edge_aware: bool | None = None):
    rng = np.random.default_rng(cfg.seed)
    return retrieval.DualStreamModel(
        d_vis=dims.d_vis, d_text=dims.d_text, alpha=cfg.alpha,
        vis_hidden=cfg.vis_hidden, d_vis_out=cfg.d_vis_out, d_graph_out=cfg.d_graph_out,
        gnn_hidden=cfg.gnn_hidden, gnn_heads=cfg.gnn_heads, gnn_layers=cfg.gnn_layers,
        edge_aware=cfg.edge_aware if edge_aware is None else edge_aware,
        reverse_edges=cfg.reverse_edges, rng=rng)


def _schedule(cfg: RunConfig) -> LrSchedule:
    return LrSchedule(base_lr=cfg.base_lr, gamma=cfg.lr_gamma,
                      warmup_epochs=cfg.warmup_epochs)


# ---------------------------------------------------------------------------
# commands


def cmd_synth_fixtures(args, cfg: RunConfig) -> int:
    settings = SynthSettings(images=args.images, clusters=args.clusters,
                             captions_per_image=args.captions, mode=args.mode,
                             d_text=cfg.d_text, d_vis=cfg.d_vis, d_g=cfg.d_g,
                             seed=cfg.seed)
    manifest, planted = write_fixtures(settings, Path(args.out))
    print(f"wrote {manifest} ({args.images} images, mode={args.mode})")
    print(f"wrote {planted}")
    return 0


def cmd_train_importance(args, cfg: RunConfig) -> int:
    bundles = load_manifest(Path(args.manifest))
    dims = manifest_dims(Path(args.manifest))
    model = _importance_model(cfg, dims)
    targets = [t for b in bundles for t in importance.build_targets(b)]
    report = importance.train_importance(
        model, targets, epochs=cfg.epochs, batch_size=cfg.batch_size,
        schedule=_schedule(cfg), seed=cfg.seed,
        log=lambda e, l: print(f"epoch {e + 1}/{cfg.epochs} loss {l:.6f}")
        if args.verbose else None)
    meta = {"config_hash": cfg.hash(), "epochs": cfg.epochs,
            "final_lr": report.lrs[-1], "final_loss": report.final_loss,
            "kind": "importance",
            "dims": {"d_text": dims.d_text, "d_vis": dims.d_vis, "d_g": dims.d_g}}
    save_checkpoint(Path(args.out), model, meta)
    print(f"wrote {args.out} (final loss {report.final_loss:.6f})")
    if args.report:
        report_dir = Path(args.report)
        _write_tsv(report_dir / "importance_train.tsv", ["epoch", "loss", "lr"],
                   [(e + 1, report.losses[e], report.lrs[e]) for e in range(len(report.losses))])
        from .plots import save_loss_figure
        save_loss_figure(report.losses, report_dir / "importance_train.png",
                         title="importance training loss")
        print(f"wrote {report_dir}/importance_train.tsv and .png")
    return 0


def _score_rows(bundles: list[EmbeddingBundle], scorer, jobs: int) -> list[tuple]:
    def one(b: EmbeddingBundle) -> list[tuple]:
        return scorer(b)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(one, bundles))
    else:
        chunks = [one(b) for b in bundles]
    return [row for chunk in chunks for row in chunk]


def cmd_score(args, cfg: RunConfig) -> int:
    bundles = load_manifest(Path(args.manifest))
    dims = manifest_dims(Path(args.manifest))
    if args.gt:
        def scorer(b: EmbeddingBundle) -> list[tuple]:
            rows = []
            for node in b.graph.nodes:
                rows.append((b.image_id, "object", node.id,
                             importance.gt_object_score(node.text_emb, b.caption_embs)))
            for j in range(len(b.graph.edges)):
                rows.append((b.image_id, "triplet", j,
                             importance.gt_triplet_score(b.phrase_embs[j], b.caption_embs)))
            return rows
    else:
        if not args.checkpoint:
            raise IoFailure("score needs --gt or --checkpoint")
        model = _importance_model(cfg, dims)
        load_checkpoint(Path(args.checkpoint), model)
        model.eval()

        def scorer(b: EmbeddingBundle) -> list[tuple]:
            targets = importance.build_targets(b, with_gt=False)
            preds = importance.predict_scores(model, targets)
            return [(b.image_id, t.kind.value, t.ref, float(p))
                    for t, p in zip(targets, preds)]

    rows = _score_rows(bundles, scorer, args.jobs or cfg.jobs)
    _write_tsv(Path(args.out), ["image_id", "kind", "ref", "score"], rows)
    print(f"wrote {args.out} ({len(rows)} scores)")
    return 0


def _read_scores(path: Path) -> dict[str, tuple[dict[int, float], dict[int, float]]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    out: dict[str, tuple[dict[int, float], dict[int, float]]] = {}
    for line in lines[1:]:
        image_id, kind, ref, score = line.split("\t")
        objs, trips = out.setdefault(image_id, ({}, {}))
        (objs if kind == "object" else trips)[int(ref)] = float(score)
    return out


def cmd_prune(args, cfg: RunConfig) -> int:
    bundles = load_manifest(Path(args.manifest))
    dims = manifest_dims(Path(args.manifest))
    scores = _read_scores(Path(args.scores))
    out_dir = Path(args.out)
    pruned_bundles, decision_rows = [], []
    for b in bundles:
        if b.image_id not in scores:
            raise ScoreCoverageIncomplete(f"no scores for {b.image_id}")
        obj_scores, trip_scores = scores[b.image_id]
        g_pruned, dec = pruner.prune(b.graph, obj_scores, trip_scores,
                                     b=args.threshold if args.threshold is not None
                                     else cfg.prune_threshold)
        kept_edges = sorted(dec.kept_triplets)
        pruned_bundles.append(EmbeddingBundle(
            image_id=b.image_id,
            caption_embs=b.caption_embs,
            global_vis=b.global_vis,
            graph_emb=b.graph_emb,
            graph=g_pruned,
            phrase_embs=(b.phrase_embs[kept_edges]
                         if kept_edges else np.zeros((0, dims.d_text), dtype=np.float32)),
        ))
        decision_rows.append({
            "image_id": b.image_id,
            "n_objects": dec.n_objects,
            "n_triplets": dec.n_triplets,
            "kept_objects": sorted(dec.kept_objects),
            "kept_triplets": kept_edges,
            "object_reasons": {str(i): r.value for i, r in sorted(dec.object_reasons.items())},
            "triplet_reasons": {str(j): r.value for j, r in sorted(dec.triplet_reasons.items())},
            "node_id_map": {str(k): v for k, v in sorted(dec.node_id_map.items())},
        })
    save_manifest(pruned_bundles, out_dir / "manifest.jsonl",
                  dims=dims, meta={"pruned_from": str(args.manifest),
                                   "config_hash": cfg.hash()})
    decisions_path = out_dir / "decisions.jsonl"
    decisions_path.write_text(
        "\n".join(json.dumps(r, sort_keys=True) for r in decision_rows) + "\n",
        encoding="utf-8")
    kept_o = sum(len(r["kept_objects"]) for r in decision_rows)
    total_o = sum(r["n_objects"] for r in decision_rows)
    print(f"wrote {out_dir}/manifest.jsonl and decisions.jsonl "
          f"(objects kept {kept_o}/{total_o})")
    return 0


def cmd_train_retrieval(args, cfg: RunConfig) -> int:
    manifest_path = Path(args.manifest)
    bundles = load_manifest(manifest_path)
    dims = manifest_dims(manifest_path)
    model = _retrieval_model(cfg, dims,
                             edge_aware=False if args.ablate_edge_aware else None)
    sim = retrieval.cached_pair_matrix(
        bundles, manifest_path,
        Path(args.pair_cache) if args.pair_cache else None)
    settings = retrieval.RetrievalTrainSettings(
        epochs=cfg.epochs, pairs_per_image=cfg.pairs_per_image,
        batch_pairs=cfg.batch_pairs or None, schedule=_schedule(cfg), seed=cfg.seed)
    report = retrieval.train_retrieval(
        model, bundles, [b.graph for b in bundles], settings, sim=sim,
        log=lambda e, l: print(f"epoch {e + 1}/{cfg.epochs} loss {l:.6f}")
        if args.verbose else None)
    meta = {"config_hash": cfg.hash(), "epochs": cfg.epochs,
            "final_lr": report.lrs[-1], "final_loss": report.final_loss,
            "kind": "retrieval", "edge_aware": model.gnn.edge_aware,
            "gnn_attention": "separate-source-target-transforms",
            "visual_activation": "leaky_relu",
            "dims": {"d_text": dims.d_text, "d_vis": dims.d_vis, "d_g": dims.d_g}}
    save_checkpoint(Path(args.out), model, meta)
    print(f"wrote {args.out} (final loss {report.final_loss:.6f})")
    if args.report:
        report_dir = Path(args.report)
        _write_tsv(report_dir / "retrieval_train.tsv", ["epoch", "loss", "lr"],
                   [(e + 1, report.losses[e], report.lrs[e]) for e in range(len(report.losses))])
        from .plots import save_loss_figure
        save_loss_figure(report.losses, report_dir / "retrieval_train.png",
                         title="retrieval training loss")
        print(f"wrote {report_dir}/retrieval_train.tsv and .png")
    return 0


def _load_retrieval_model(cfg: RunConfig, checkpoint: Path, dims):
    meta_probe = json.loads(checkpoint.read_bytes().split(b"\n", 1)[0])
    edge_aware = meta_probe.get("meta", {}).get("edge_aware", cfg.edge_aware)
    model = _retrieval_model(cfg, dims, edge_aware=edge_aware)
    load_checkpoint(checkpoint, model)
    model.eval()
    return model


def cmd_index(args, cfg: RunConfig) -> int:
    bundles = load_manifest(Path(args.manifest))
    dims = manifest_dims(Path(args.manifest))
    model = _load_retrieval_model(cfg, Path(args.checkpoint), dims)
    index = retrieval.build_index(model, bundles, [b.graph for b in bundles])
    retrieval.save_index(Path(args.out), index, config_hash=cfg.hash())
    print(f"wrote {args.out} ({len(index)} images)")
    return 0


def cmd_query(args, cfg: RunConfig) -> int:
    index, _ = retrieval.load_index(Path(args.index))
    if args.image_id not in index.image_ids:
        raise IoFailure(f"{args.image_id} is not in the index")
    qpos = index.image_ids.index(args.image_id)
    results = retrieval.query(index, index.embeddings[qpos], top_k=args.top_k,
                              exclude=None if args.include_self else args.image_id)
    for rank, image_id, score in results:
        print(f"{rank}\t{image_id}\t{_float_cell(score)}")
    if args.out:
        _write_tsv(Path(args.out), ["rank", "image_id", "score"], results)
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    index, _ = retrieval.load_index(Path(args.index))
    bundles = load_manifest(Path(args.manifest))
    ks = tuple(int(k) for k in args.ks.split(","))
    report = evalmetrics.evaluate_testset(index, bundles, ks=ks,
                                          relevant_top=args.relevant_top,
                                          relevant_frac=args.relevant_frac,
                                          jobs=args.jobs or cfg.jobs)
    print(f"# queries={report.queries} relevant_top={report.relevant_top} "
          f"relevant_frac={report.relevant_frac} config={cfg.hash()}")
    print(evalmetrics.format_metrics_table(report))
    if args.out:
        out_dir = Path(args.out)
        header_rows = [(m, k, v) for m, k, v in report.rows()]
        _write_tsv(out_dir / "metrics.tsv", ["metric", "k", "value"], header_rows)
        from .plots import save_metrics_figure
        save_metrics_figure(report, out_dir / "metrics.png")
        print(f"wrote {out_dir}/metrics.tsv and metrics.png")
    return 0


def cmd_report_retention(args, cfg: RunConfig) -> int:
    decisions = []
    for line in Path(args.decisions).read_text(encoding="utf-8").splitlines():
        rec = json.loads(line)
        decisions.append(pruner.RetentionDecision(
            kept_objects=set(rec["kept_objects"]),
            kept_triplets=set(rec["kept_triplets"]),
            object_reasons={int(i): pruner.RetentionReason(v)
                            for i, v in rec["object_reasons"].items()},
            triplet_reasons={int(j): pruner.RetentionReason(v)
                             for j, v in rec["triplet_reasons"].items()},
            node_id_map={int(k): v for k, v in rec["node_id_map"].items()},
            n_objects=rec["n_objects"],
            n_triplets=rec["n_triplets"]))
    buckets = pruner.retention_report(decisions)
    rows = [(b.label, b.graph_count, b.object_retention, b.direct_retention,
             b.indirect_retention, b.triplet_retention) for b in buckets]
    for r in rows:
        print(f"{r[0]:>6s}  graphs={r[1]:<4d} objects={100 * r[2]:5.1f}% "
              f"(direct {100 * r[3]:5.1f}% / indirect {100 * r[4]:5.1f}%) "
              f"triplets={100 * r[5]:5.1f}%")
    if args.out:
        out_dir = Path(args.out)
        _write_tsv(out_dir / "retention.tsv",
                   ["bucket", "graphs", "object_retention", "direct_retention",
                    "indirect_retention", "triplet_retention"], rows)
        from .plots import save_retention_figure
        save_retention_figure(buckets, out_dir / "retention.png")
        print(f"wrote {out_dir}/retention.tsv and retention.png")
    return 0


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    results = gradsuite.run_all_suites(seeds=args.seeds)
    failed = False
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:24s} seeds={r.seeds} max_rel_err={r.max_rel_err:.3e} {status}")
        failed = failed or not r.passed
    worst = max(r.max_rel_err for r in results)
    print(f"overall max relative error {worst:.3e} (tolerance 1e-3)")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# argument wiring


def build_parser() -> argparse.ArgumentParser:
    # shared flags are accepted before or after the subcommand; SUPPRESS keeps
    # an unset subcommand flag from clobbering a top-level one
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="key = value config file (default: $SGRETRIEVAL_CONFIG)")
    common.add_argument("--desk", action="store_true", default=argparse.SUPPRESS,
                        help="start from the small-scale config preset")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override config seed")
    common.add_argument("--epochs", type=int, default=argparse.SUPPRESS,
                        help="override config epochs")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    # no set_defaults here: it would mutate the shared parent actions and let
    # the subparser re-apply defaults over flags parsed before the subcommand
    parser = argparse.ArgumentParser(
        prog="sgretrieval", parents=[common],
        description="Scene-graph image retrieval engine (fixtures, training, "
                    "pruning, indexing, evaluation)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_parser(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    p = add_parser("synth-fixtures", help="generate a seeded synthetic manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--images", type=int, default=50)
    p.add_argument("--clusters", type=int, default=5)
    p.add_argument("--captions", type=int, default=3)
    p.add_argument("--mode", choices=("clusters", "relations"), default="clusters")
    p.set_defaults(func=cmd_synth_fixtures)

    p = add_parser("train-importance", help="train the importance scorer")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="directory for loss table + figure")
    p.set_defaults(func=cmd_train_importance)

    p = add_parser("score", help="score objects and triplets")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gt", action="store_true",
                   help="caption-derived ground-truth scores instead of a model")
    p.add_argument("--checkpoint")
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_score)

    p = add_parser("prune", help="apply retention rules to scored graphs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_prune)

    p = add_parser("train-retrieval", help="train the dual-stream model")
    p.add_argument("--manifest", required=True, help="pruned manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="directory for loss table + figure")
    p.add_argument("--pair-cache", help="cache file for the pair ground truth")
    p.add_argument("--ablate-edge-aware", action="store_true",
                   help="replace the edge-aware first layer with a standard one")
    p.set_defaults(func=cmd_train_retrieval)

    p = add_parser("index", help="embed all images into an index file")
    p.add_argument("--manifest", required=True, help="pruned manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index)

    p = add_parser("query", help="rank candidates for one indexed image")
    p.add_argument("--index", required=True)
    p.add_argument("--image-id", required=True)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--include-self", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_query)

    p = add_parser("evaluate", help="leave-one-out metrics over an index")
    p.add_argument("--index", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--ks", default="1,3,5")
    p.add_argument("--relevant-top", type=int, default=evalmetrics.RELEVANT_TOP_DEFAULT)
    p.add_argument("--relevant-frac", type=float, default=evalmetrics.RELEVANT_FRAC_DEFAULT)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", help="directory for metrics table + figure")
    p.set_defaults(func=cmd_evaluate)

    p = add_parser("report-retention", help="retention rates by graph size")
    p.add_argument("--decisions", required=True)
    p.add_argument("--out", help="directory for retention table + figure")
    p.set_defaults(func=cmd_report_retention)

    p = add_parser("gradcheck", help="finite-difference checks for all layers")
    p.add_argument("--seeds", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, fallback in (("config", None), ("desk", False), ("seed", None),
                           ("epochs", None), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, fallback)
    try:
        cfg = load_config(args.config, overrides={"seed": args.seed,
                                                  "epochs": args.epochs},
                          desk=args.desk)
        return args.func(args, cfg)
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
