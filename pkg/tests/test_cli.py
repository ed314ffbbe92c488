"""CLI contracts: determinism, file outputs, exit codes, config handling."""

import json
import subprocess
import sys

import pytest

from sgretrieval import cli
from sgretrieval.config import CONFIG_ENV_VAR, RunConfig, load_config, parse_config_text
from sgretrieval.errors import ConfigInvalid


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def synth(tmp_path, name="fx", images=8, clusters=2, seed=11, mode="clusters"):
    out = tmp_path / name
    assert run_cli("--desk", "synth-fixtures", "--out", out, "--images", images,
                   "--clusters", clusters, "--seed", seed, "--mode", mode) == 0
    return out / "manifest.jsonl"


class TestConfig:
    def test_defaults_validate(self):
        RunConfig().validate()
        RunConfig.desk().validate()

    def test_parse_text_overrides(self):
        cfg = parse_config_text("seed = 3\nalpha = 0.5\nedge_aware = false\n")
        assert cfg.seed == 3 and cfg.alpha == 0.5 and cfg.edge_aware is False

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigInvalid):
            parse_config_text("bogus = 1\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigInvalid):
            parse_config_text("seed = banana\n")

    def test_heads_divisibility_checked(self):
        with pytest.raises(ConfigInvalid):
            parse_config_text("gnn_hidden = 65\n")

    def test_env_var_default_path(self, tmp_path, monkeypatch):
        path = tmp_path / "cfg.txt"
        path.write_text("seed = 99\n")
        monkeypatch.setenv(CONFIG_ENV_VAR, str(path))
        assert load_config().seed == 99

    def test_round_trip_text(self):
        cfg = RunConfig.desk(seed=5)
        assert parse_config_text(cfg.to_text()) == cfg
        assert cfg.hash() == parse_config_text(cfg.to_text()).hash()


class TestSynthDeterminism:
    def test_byte_identical_manifests(self, tmp_path):
        m1 = synth(tmp_path, "a", seed=7)
        m2 = synth(tmp_path, "b", seed=7)
        assert m1.read_bytes() == m2.read_bytes()
        for blob in sorted((m1.parent / "blobs").iterdir()):
            twin = m2.parent / "blobs" / blob.name
            assert blob.read_bytes() == twin.read_bytes()

    def test_seed_changes_content(self, tmp_path):
        m1 = synth(tmp_path, "a", seed=7)
        m2 = synth(tmp_path, "b", seed=8)
        blobs1 = sorted((m1.parent / "blobs").iterdir())
        blobs2 = sorted((m2.parent / "blobs").iterdir())
        assert any(x.read_bytes() != y.read_bytes() for x, y in zip(blobs1, blobs2))


class TestPipelineCommands:
    @pytest.fixture()
    def pipeline(self, tmp_path):
        manifest = synth(tmp_path, images=8, clusters=2, seed=3)
        scores = tmp_path / "scores.tsv"
        assert run_cli("--desk", "score", "--manifest", manifest, "--gt",
                       "--out", scores) == 0
        pruned = tmp_path / "pruned"
        assert run_cli("--desk", "prune", "--manifest", manifest,
                       "--scores", scores, "--out", pruned) == 0
        ckpt = tmp_path / "ret.ckpt"
        assert run_cli("--desk", "train-retrieval",
                       "--manifest", pruned / "manifest.jsonl",
                       "--out", ckpt, "--epochs", 15) == 0
        index = tmp_path / "idx.bin"
        assert run_cli("--desk", "index", "--manifest", pruned / "manifest.jsonl",
                       "--checkpoint", ckpt, "--out", index) == 0
        return tmp_path, manifest, pruned, index

    def test_query_contract(self, pipeline, capsys):
        tmp_path, _, _, index = pipeline
        out = tmp_path / "q.tsv"
        assert run_cli("--desk", "query", "--index", index, "--image-id", "img0004",
                       "--top-k", 3, "--out", out) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "rank\timage_id\tscore"
        rows = [ln.split("\t") for ln in lines[1:]]
        assert [r[0] for r in rows] == ["1", "2", "3"]
        assert "img0004" not in [r[1] for r in rows]
        scores = [float(r[2]) for r in rows]
        assert scores == sorted(scores, reverse=True)

    def test_evaluate_writes_table_and_figure(self, pipeline):
        tmp_path, _, pruned, index = pipeline
        out = tmp_path / "metrics"
        assert run_cli("--desk", "evaluate", "--index", index,
                       "--manifest", pruned / "manifest.jsonl", "--out", out) == 0
        table = (out / "metrics.tsv").read_text().splitlines()
        assert table[0] == "metric\tk\tvalue"
        assert len(table) == 8  # 3 ndcg + 3 map + mrr
        assert (out / "metrics.png").stat().st_size > 0

    def test_retention_report_files(self, pipeline):
        tmp_path, _, pruned, _ = pipeline
        out = tmp_path / "rep"
        assert run_cli("--desk", "report-retention",
                       "--decisions", pruned / "decisions.jsonl", "--out", out) == 0
        assert (out / "retention.tsv").is_file()
        assert (out / "retention.png").stat().st_size > 0

    def test_model_scoring_path(self, pipeline, tmp_path):
        _, manifest, _, _ = pipeline
        ckpt = tmp_path / "imp.ckpt"
        assert run_cli("--desk", "train-importance", "--manifest", manifest,
                       "--out", ckpt, "--epochs", 3) == 0
        scores = tmp_path / "model_scores.tsv"
        assert run_cli("--desk", "score", "--manifest", manifest,
                       "--checkpoint", ckpt, "--out", scores, "--jobs", 2) == 0
        lines = scores.read_text().splitlines()
        assert lines[0] == "image_id\tkind\tref\tscore"
        assert len(lines) > 8

    def test_pruned_manifest_loads(self, pipeline):
        from sgretrieval.graphcore import load_manifest
        _, _, pruned, _ = pipeline
        bundles = load_manifest(pruned / "manifest.jsonl")
        assert all(b.graph.n >= 1 for b in bundles)

    def test_decisions_reasons_are_valid(self, pipeline):
        _, _, pruned, _ = pipeline
        valid = {"absolute", "relative", "indirect_via_triplet", "fallback"}
        for line in (pruned / "decisions.jsonl").read_text().splitlines():
            rec = json.loads(line)
            assert set(rec["object_reasons"].values()) <= valid
            assert set(rec["triplet_reasons"].values()) <= valid


class TestErrorPaths:
    def test_missing_manifest_exit_code(self, tmp_path, capsys):
        code = run_cli("--desk", "score", "--manifest", tmp_path / "nope.jsonl",
                       "--gt", "--out", tmp_path / "s.tsv")
        assert code == 3  # IoFailure
        assert "error:" in capsys.readouterr().err

    def test_bad_config_exit_code(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("dropout = 1.5\n")
        code = run_cli("--config", cfg, "synth-fixtures", "--out", tmp_path / "x",
                       "--images", 4, "--clusters", 2)
        assert code == 2  # ConfigInvalid

    def test_score_without_mode(self, tmp_path):
        manifest = synth(tmp_path)
        code = run_cli("--desk", "score", "--manifest", manifest,
                       "--out", tmp_path / "s.tsv")
        assert code == 3

    def test_query_unknown_id(self, tmp_path):
        manifest = synth(tmp_path, images=4, clusters=2)
        scores = tmp_path / "s.tsv"
        run_cli("--desk", "score", "--manifest", manifest, "--gt", "--out", scores)
        pruned = tmp_path / "p"
        run_cli("--desk", "prune", "--manifest", manifest, "--scores", scores,
                "--out", pruned)
        ckpt = tmp_path / "c.ckpt"
        run_cli("--desk", "train-retrieval", "--manifest", pruned / "manifest.jsonl",
                "--out", ckpt, "--epochs", 2)
        index = tmp_path / "i.bin"
        run_cli("--desk", "index", "--manifest", pruned / "manifest.jsonl",
                "--checkpoint", ckpt, "--out", index)
        assert run_cli("--desk", "query", "--index", index,
                       "--image-id", "missing", "--top-k", 1) == 3


def test_console_script_installed():
    proc = subprocess.run([sys.executable, "-m", "sgretrieval.cli", "gradcheck",
                           "--seeds", "1"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "overall max relative error" in proc.stdout
