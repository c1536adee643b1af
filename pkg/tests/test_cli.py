"""Command-line behavior: exit codes, determinism, config handling."""

import json
import subprocess
import sys

import pytest

from objforge.cli import main
from objforge.corpus import corpus_from_lists, save_corpus_jsonl
from objforge.model import load_checkpoint


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture()
def vocab_file(tmp_path, capsys):
    path = tmp_path / "vocab.json"
    code, _, _ = run_cli(capsys, "tok", "train", "--out", str(path))
    assert code == 0
    return path


@pytest.fixture()
def ids_file(tmp_path, vocab_file, capsys):
    lines = tmp_path / "lines.txt"
    lines.write_text(
        "Amber north mist wind. Amber north sand frost.\n"
        "Basalt south stone river. Basalt east wave cloud.\n"
    )
    out = tmp_path / "ids.jsonl"
    code, _, _ = run_cli(
        capsys, "tok", "encode", "--vocab", str(vocab_file), "--input", str(lines), "--out", str(out)
    )
    assert code == 0
    return out


class TestFlops:
    def test_report_table(self, capsys):
        code, out, _ = run_cli(capsys, "flops", "report", "--d", "768", "--vocab", "30522", "--k", "5")
        assert code == 0
        assert "1536" in out
        assert "23,440,896" in out
        assert "23440896" in out
        assert "1.8" in out

    def test_missing_d_is_validation_error(self, capsys):
        code, _, err = run_cli(capsys, "flops", "report", "--vocab", "30522")
        assert code == 1
        assert "--d" in err

    def test_bad_flag_value(self, capsys):
        code, _, err = run_cli(capsys, "flops", "report", "--d", "0", "--vocab", "10")
        assert code == 1
        assert "d" in err


class TestGen:
    def test_two_shards_deterministic(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            code, _, _ = run_cli(capsys, "gen", "ssp", "--seed", "7", "--shards", "2", "--out-dir", str(out))
            assert code == 0
        for name in ("ssp-00000.jsonl", "ssp-00001.jsonl"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
            assert (a / name).stat().st_size > 0

    def test_all_objectives_emit(self, tmp_path, capsys):
        for obj in ("sp", "psd", "mspp", "sdc", "dpc", "dslc", "sds"):
            code, out, _ = run_cli(capsys, "gen", obj, "--out-dir", str(tmp_path / obj))
            assert code == 0, obj
            assert f"{obj}-00000.jsonl" in out

    def test_insufficient_corpus_is_runtime_error(self, tmp_path, capsys):
        solo = corpus_from_lists(
            [("only", [["One sentence here.", "Two sentences here.", "Third one now."]])]
        )
        path = tmp_path / "solo.jsonl"
        save_corpus_jsonl(solo, path)
        code, _, err = run_cli(capsys, "gen", "ssp", "--corpus", str(path), "--out-dir", str(tmp_path))
        assert code == 2
        assert err.startswith("error:")

    def test_unknown_objective_rejected(self, capsys):
        code, _, err = run_cli(capsys, "gen", "nope")
        assert code == 1
        assert "objective" in err

    def test_mspp_k_too_small(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "gen", "mspp", "--k", "3", "--out-dir", str(tmp_path))
        assert code == 1
        assert "--k" in err

    def test_jobs_flag_accepted(self, tmp_path, capsys):
        code, _, _ = run_cli(capsys, "gen", "psd", "--shards", "3", "--jobs", "2", "--out-dir", str(tmp_path))
        assert code == 0
        assert (tmp_path / "psd-00002.jsonl").exists()


class TestCorpus:
    def test_ingest_then_stats(self, tmp_path, capsys):
        raw = tmp_path / "raw.txt"
        raw.write_text(
            "First sentence of one. Second sentence of one.\n\n"
            "Second paragraph here. It has two sentences.\n"
        )
        out = tmp_path / "corpus.jsonl"
        code, _, _ = run_cli(capsys, "corpus", "ingest", "--input", str(raw), "--out", str(out))
        assert code == 0
        code, stdout, _ = run_cli(capsys, "corpus", "stats", "--corpus", str(out))
        assert code == 0
        stats = json.loads(stdout)
        assert set(stats) == {"n_docs", "n_words", "words_per_doc", "paras_per_doc", "sents_per_para"}

    def test_missing_input(self, capsys):
        code, _, err = run_cli(capsys, "corpus", "ingest", "--input", "/definitely/missing.txt")
        assert code == 1
        assert "--input" in err

    def test_toy_stats(self, capsys):
        code, stdout, _ = run_cli(capsys, "corpus", "stats")
        assert code == 0
        assert json.loads(stdout)["n_docs"] == 12


class TestTok:
    def test_encode_rows(self, ids_file, capsys):
        rows = [json.loads(ln) for ln in ids_file.read_text().splitlines()]
        assert len(rows) == 2
        assert all(isinstance(i, int) for row in rows for i in row["ids"])

    def test_encode_deterministic(self, tmp_path, vocab_file, capsys):
        lines = tmp_path / "l.txt"
        lines.write_text("Cedar west moss sand.\n")
        outs = []
        for name in ("x.jsonl", "y.jsonl"):
            out = tmp_path / name
            code, _, _ = run_cli(
                capsys, "tok", "encode", "--vocab", str(vocab_file), "--input", str(lines), "--out", str(out)
            )
            assert code == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_decode_round_trip(self, tmp_path, vocab_file, ids_file, capsys):
        out = tmp_path / "text.jsonl"
        code, _, _ = run_cli(
            capsys, "tok", "decode", "--vocab", str(vocab_file), "--input", str(ids_file), "--out", str(out)
        )
        assert code == 0
        texts = [json.loads(ln)["text"] for ln in out.read_text().splitlines()]
        assert texts == [
            "Amber north mist wind. Amber north sand frost.",
            "Basalt south stone river. Basalt east wave cloud.",
        ]

    def test_decode_requires_marks(self, tmp_path, vocab_file, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"ids": [1, 2]}\n')
        code, _, err = run_cli(capsys, "tok", "decode", "--vocab", str(vocab_file), "--input", str(bad))
        assert code == 1
        assert "marks" in err

    def test_wordpiece_algo(self, tmp_path, capsys):
        out = tmp_path / "wp.json"
        code, _, _ = run_cli(capsys, "tok", "train", "--algo", "wordpiece", "--vocab-size", "40", "--out", str(out))
        assert code == 0
        assert out.exists()

    def test_missing_vocab(self, tmp_path, capsys):
        lines = tmp_path / "l.txt"
        lines.write_text("x.\n")
        code, _, err = run_cli(capsys, "tok", "encode", "--vocab", "/missing.json", "--input", str(lines))
        assert code == 1
        assert "--vocab" in err


class TestCorrupt:
    def test_mlm_schema_and_determinism(self, tmp_path, vocab_file, ids_file, capsys):
        outs = []
        for name in ("a.jsonl", "b.jsonl"):
            out = tmp_path / name
            code, _, _ = run_cli(
                capsys, "corrupt", "mlm", "--vocab", str(vocab_file),
                "--input", str(ids_file), "--out", str(out), "--seed", "3",
            )
            assert code == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
        row = json.loads(outs[0].splitlines()[0])
        assert len(row["ids"]) == len(row["labels"]) == len(row["selection"])

    def test_crts_requires_clusters(self, vocab_file, ids_file, capsys):
        code, _, err = run_cli(
            capsys, "corrupt", "crts", "--vocab", str(vocab_file), "--input", str(ids_file)
        )
        assert code == 1
        assert "--clusters" in err

    def test_crts_records_provenance(self, tmp_path, vocab_file, ids_file, capsys):
        emb = tmp_path / "emb.npy"
        code, _, _ = run_cli(
            capsys, "cluster", "embed", "--vocab", str(vocab_file),
            "--dim", "8", "--epochs", "1", "--out", str(emb),
        )
        assert code == 0
        cl = tmp_path / "cl.json"
        code, _, _ = run_cli(capsys, "cluster", "kmeans", "--emb", str(emb), "--n", "4", "--out", str(cl))
        assert code == 0
        out = tmp_path / "cc.jsonl"
        code, _, _ = run_cli(
            capsys, "corrupt", "crts", "--vocab", str(vocab_file), "--input", str(ids_file),
            "--clusters", str(cl), "--out", str(out),
        )
        assert code == 0
        row = json.loads(out.read_text().splitlines()[0])
        assert "provenance" in row
        assert sum(row["selection"]) == len(row["provenance"])


class TestTrain:
    ARGS = (
        "--steps", "6", "--warmup", "2", "--batch-size", "4",
        "--d", "16", "--f", "32", "--l-max", "32",
    )

    def test_two_objective_csv(self, tmp_path, capsys):
        out = tmp_path / "trace.csv"
        code, _, _ = run_cli(capsys, "train", "mlm:1.0", "ssp:1.0", *self.ARGS, "--out", str(out))
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "step,lr,mlm,ssp"
        assert len(lines) == 7

    def test_rerun_byte_identical(self, tmp_path, capsys):
        outs = []
        for name in ("t1.csv", "t2.csv"):
            out = tmp_path / name
            code, _, _ = run_cli(capsys, "train", "rts:1.0", *self.ARGS, "--out", str(out))
            assert code == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_save_params_checkpoint(self, tmp_path, capsys):
        out = tmp_path / "trace.csv"
        ckpt = tmp_path / "params.ckpt"
        code, _, _ = run_cli(
            capsys, "train", "mlm:1.0", *self.ARGS, "--out", str(out), "--save-params", str(ckpt)
        )
        assert code == 0
        arrays = load_checkpoint(ckpt)
        assert any(name == "e" for name in arrays)

    def test_bad_spec_shapes(self, capsys):
        for spec in ("mlm", "mlm:zero", "mlm:-1", "nope:1.0"):
            code, _, err = run_cli(capsys, "train", spec)
            assert code == 1, spec
            assert "objective spec" in err

    def test_duplicate_objective(self, capsys):
        code, _, err = run_cli(capsys, "train", "mlm:1.0", "mlm:2.0")
        assert code == 1
        assert "duplicate" in err

    def test_warmup_exceeding_steps(self, capsys):
        code, _, err = run_cli(capsys, "train", "mlm:1.0", "--steps", "5", "--warmup", "9")
        assert code == 1
        assert "--warmup" in err


class TestEval:
    def test_report(self, tmp_path, capsys):
        src = tmp_path / "groups.jsonl"
        src.write_text(
            '{"scores": [0.9, 0.1], "relevance": [1, 0]}\n'
            '{"scores": [0.9, 0.1], "relevance": [0, 1]}\n'
        )
        code, stdout, _ = run_cli(capsys, "eval", "rank", "--input", str(src))
        assert code == 0
        report = json.loads(stdout)
        assert report["map"] == 0.75
        assert report["p@1"] == 0.5
        assert report["excluded"] == 0

    def test_excluded_group_warns_on_stderr(self, tmp_path, capsys):
        src = tmp_path / "groups.jsonl"
        src.write_text(
            '{"scores": [0.9, 0.1], "relevance": [1, 0]}\n'
            '{"scores": [0.5], "relevance": [0]}\n'
        )
        code, stdout, err = run_cli(capsys, "eval", "rank", "--input", str(src))
        assert code == 0
        assert "warning" in err
        assert json.loads(stdout)["excluded"] == 1

    def test_all_excluded_is_runtime_error(self, tmp_path, capsys):
        src = tmp_path / "groups.jsonl"
        src.write_text('{"scores": [0.5], "relevance": [0]}\n')
        code, _, err = run_cli(capsys, "eval", "rank", "--input", str(src))
        assert code == 2

    def test_schema_violation_names_field(self, tmp_path, capsys):
        src = tmp_path / "groups.jsonl"
        src.write_text('{"scores": [0.5]}\n')
        code, _, err = run_cli(capsys, "eval", "rank", "--input", str(src))
        assert code == 1
        assert "relevance" in err


class TestClusterSelect:
    def test_select_reports_argmin(self, tmp_path, vocab_file, capsys):
        emb = tmp_path / "emb.npy"
        code, _, _ = run_cli(
            capsys, "cluster", "embed", "--vocab", str(vocab_file),
            "--dim", "8", "--epochs", "1", "--out", str(emb),
        )
        assert code == 0
        code, stdout, _ = run_cli(
            capsys, "cluster", "select", "--vocab", str(vocab_file), "--emb", str(emb),
            "--candidates", "2,4", "--proxy-steps", "2",
        )
        assert code == 0
        result = json.loads(stdout)
        assert result["selected"] in (2, 4)
        accs = result["accuracy"]
        assert result["selected"] == min((2, 4), key=lambda n: (accs[str(n)], n))

    def test_bad_candidates(self, tmp_path, vocab_file, capsys):
        emb = tmp_path / "emb.npy"
        run_cli(capsys, "cluster", "embed", "--vocab", str(vocab_file), "--dim", "4", "--epochs", "1", "--out", str(emb))
        code, _, err = run_cli(
            capsys, "cluster", "select", "--vocab", str(vocab_file), "--emb", str(emb),
            "--candidates", "4,eight",
        )
        assert code == 1
        assert "--candidates" in err


class TestDryRunAndConfig:
    def test_dry_run_writes_nothing(self, tmp_path, capsys):
        out_dir = tmp_path / "never"
        code, stdout, _ = run_cli(capsys, "gen", "ssp", "--dry-run", "--out-dir", str(out_dir))
        assert code == 0
        assert "dry-run" in stdout
        assert not out_dir.exists()

    def test_dry_run_still_validates(self, capsys):
        code, _, err = run_cli(capsys, "gen", "ssp", "--dry-run", "--corpus", "/missing.jsonl")
        assert code == 1

    def test_toml_config(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.toml"
        cfg.write_text('seed = 9\n[tok]\nvocab_size = 40\nalgo = "bpe"\n')
        out = tmp_path / "v.json"
        code, _, _ = run_cli(capsys, "tok", "train", "--config", str(cfg), "--out", str(out))
        assert code == 0
        assert len(json.loads(out.read_text())["tokens"]) > 0

    def test_json_config_fallback(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"seed": 4, "gen": {"shards": 2}}')
        code, _, _ = run_cli(capsys, "gen", "psd", "--config", str(cfg), "--out-dir", str(tmp_path))
        assert code == 0
        assert (tmp_path / "psd-00001.jsonl").exists()

    def test_flag_overrides_config(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.toml"
        cfg.write_text("[gen]\nshards = 5\n")
        code, _, _ = run_cli(
            capsys, "gen", "psd", "--config", str(cfg), "--shards", "1", "--out-dir", str(tmp_path)
        )
        assert code == 0
        assert (tmp_path / "psd-00000.jsonl").exists()
        assert not (tmp_path / "psd-00001.jsonl").exists()

    def test_unknown_config_key_named(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.toml"
        cfg.write_text("[tok]\nvocabulary = 10\n")
        code, _, err = run_cli(capsys, "tok", "train", "--config", str(cfg))
        assert code == 1
        assert "tok.vocabulary" in err

    def test_config_value_out_of_range(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.toml"
        cfg.write_text("[corrupt]\nrate = 1.5\n")
        code, _, err = run_cli(capsys, "corpus", "stats", "--config", str(cfg))
        assert code == 1
        assert "corrupt.rate" in err

    def test_unparseable_config(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("not toml [ and not json {")
        code, _, err = run_cli(capsys, "corpus", "stats", "--config", str(cfg))
        assert code == 1
        assert "--config" in err

    def test_bad_env_jobs(self, capsys, monkeypatch):
        monkeypatch.setenv("OBJFORGE_JOBS", "many")
        code, _, err = run_cli(capsys, "corpus", "stats")
        assert code == 1
        assert "OBJFORGE_JOBS" in err

    def test_env_jobs_used(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("OBJFORGE_JOBS", "2")
        code, _, _ = run_cli(capsys, "gen", "sds", "--out-dir", str(tmp_path))
        assert code == 0

    def test_unknown_flag(self, capsys):
        code, _, err = run_cli(capsys, "corpus", "stats", "--bogus")
        assert code == 1


class TestEntryPoint:
    def test_module_invocation(self):
        proc = subprocess.run(
            [sys.executable, "-m", "objforge.cli", "flops", "report", "--d", "256", "--vocab", "100"],
            capture_output=True, text=True, timeout=120,
        )
        assert proc.returncode == 0
        assert "512" in proc.stdout
