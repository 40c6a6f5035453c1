import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lengthgen import cli, harness, tasks
from lengthgen.config import TrainConfig
from lengthgen.errors import NumericDomainError

TINY_FLAGS = ["--task", "reverse_string", "--scheme", "relative+rand", "--n", "5", "--m", "8",
              "--max-position", "32", "--steps", "20", "--batch-size", "4", "--eval-batch", "20"]


@pytest.fixture
def small_file(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text("# model size for tests\nd_model = 16\nblocks = 1\nheads = 2\nlog_every = 10\n")
    return path


def run_dir(root, scheme="relative+rand", seed=0, lr="0.0003"):
    return root / "reverse_string" / scheme / f"seed{seed}_lr{lr}"


def test_train_writes_self_describing_run(tmp_path, small_file, capsys):
    out = tmp_path / "out"
    assert cli.main(["train", *TINY_FLAGS, "--config", str(small_file), "--out", str(out)]) == 0
    d = run_dir(out)
    for name in ("config.txt", "trace.csv", "results.csv", "summary.json", "params.manifest", "params.bin"):
        assert (d / name).exists(), name
    cfg = TrainConfig.from_text((d / "config.txt").read_text())
    assert (cfg.d_model, cfg.n_train, cfg.steps, cfg.max_position) == (16, 5, 20, 32)
    assert "score" in capsys.readouterr().out
    # re-evaluation from checkpoint + echo reproduces the stored CSV byte for byte
    assert cli.main(["eval", str(d), "--output", str(tmp_path / "again.csv")]) == 0
    assert (tmp_path / "again.csv").read_text() == (d / "results.csv").read_text()
    assert "matches stored" in capsys.readouterr().out


def test_flags_override_file(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("steps = 99\nlr = 0.0001\n")
    args = cli.build_parser().parse_args(["train", "--config", str(path), "--steps", "7"])
    cfg = cli.build_config(args)
    assert cfg.steps == 7 and cfg.lr == 1e-4 and cfg.n_train == 20


def test_paper_scale_defaults():
    cfg = cli.build_config(cli.build_parser().parse_args(["train", "--paper-scale"]))
    assert (cfg.n_train, cfg.m_eval, cfg.max_position, cfg.batch_size, cfg.steps) == (40, 500, 2048, 128, 2_000_000)
    cfg = cli.build_config(cli.build_parser().parse_args(["train", "--paper-scale", "--n", "30"]))
    assert cfg.n_train == 30 and cfg.m_eval == 500


def test_env_output_root(tmp_path, small_file, monkeypatch):
    monkeypatch.setenv("LENGTHGEN_OUT", str(tmp_path / "env"))
    assert cli.main(["train", *TINY_FLAGS, "--steps", "2", "--config", str(small_file)]) == 0
    assert run_dir(tmp_path / "env").is_dir()


def test_sweep_counts(tmp_path, small_file):
    out = tmp_path / "sweep"
    assert cli.main(["sweep", *TINY_FLAGS, "--steps", "3", "--config", str(small_file), "--seeds", "0,1",
                     "--lrs", "0.0001,0.0005", "--out", str(out)]) == 0
    runs = sorted(p.parent for p in out.rglob("summary.json"))
    assert len(runs) == 4
    summary = json.loads((out / "sweep_summary.json").read_text())
    assert list(summary) == ["reverse_string/relative+rand"]
    assert summary["reverse_string/relative+rand"]["runs"] == 4


def test_sweep_parallel_matches_serial(tmp_path, small_file):
    args = ["sweep", *TINY_FLAGS, "--steps", "3", "--config", str(small_file), "--seeds", "0,1", "--lrs", "0.0003"]
    assert cli.main([*args, "--out", str(tmp_path / "a")]) == 0
    assert cli.main([*args, "--jobs", "2", "--out", str(tmp_path / "b")]) == 0
    for seed in (0, 1):
        a = (run_dir(tmp_path / "a", seed=seed) / "results.csv").read_text()
        b = (run_dir(tmp_path / "b", seed=seed) / "results.csv").read_text()
        assert a == b


@pytest.mark.parametrize("argv", [
    ["train", "--bogus"],
    ["train", "--steps", "many"],
    ["sweep", "--seeds", ""],
    ["sweep", "--jobs", "0"],
    ["frobnicate"],
])
def test_usage_errors(argv):
    with pytest.raises(SystemExit) as info:
        cli.main(argv)
    assert info.value.code == 2


def test_invalid_combination_message(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["train", "--scheme", "sincos+unsorted", "--out", str(tmp_path)])
    assert info.value.code == 2
    assert "unsorted" in capsys.readouterr().err


def test_failure_leaves_error_manifest(tmp_path, small_file, monkeypatch):
    def boom(config, **_):
        raise harness.TrainingDiverged(17, config)

    monkeypatch.setattr(harness, "train", boom)
    with pytest.raises(SystemExit) as info:
        cli.main(["train", *TINY_FLAGS, "--config", str(small_file), "--out", str(tmp_path)])
    assert info.value.code == 1
    manifest = json.loads((run_dir(tmp_path) / "error.json").read_text())
    assert manifest["error"] == "TrainingDiverged" and manifest["step"] == 17
    assert (run_dir(tmp_path) / "config.txt").exists()


def test_dump_corpus(tmp_path):
    target = tmp_path / "corpus.jsonl"
    assert cli.main(["dump-corpus", "--task", "bucket_sort", "--n", "6", "--count", "3", "--output",
                     str(target)]) == 0
    rows = [json.loads(line) for line in target.read_text().splitlines()]
    assert len(rows) == 18
    for row in rows:
        assert set(row) == {"task", "length", "input", "target"}
        assert len(row["input"]) == row["length"]
        assert row["target"] == tasks.oracle("bucket_sort", row["input"]).tolist()


def test_analysis_commands(tmp_path, small_file, capsys):
    out = tmp_path / "out"
    assert cli.main(["train", *TINY_FLAGS, "--config", str(small_file), "--out", str(out), "--capture"]) == 0
    d = run_dir(out)
    pca = (d / "pca.csv").read_text().splitlines()
    assert pca[0] == "layer,length,pc1,pc2"
    # 2 layers x 30 sequences x (10 + 16 slots)
    assert len(pca) == 1 + 2 * 30 * (10 + 16)
    att = (d / "attention_len5.csv").read_text().splitlines()
    assert len(att) == 1 + 1 * 10 * 10
    assert "anti-diagonal" in capsys.readouterr().out


def test_throughput_command(tmp_path, small_file):
    assert cli.main(["throughput", "--config", str(small_file), "--task", "reverse_string", "--n", "4",
                     "--long-n", "12", "--steps", "4", "--warmup", "1", "--batch-size", "2",
                     "--out", str(tmp_path)]) == 0
    body = json.loads((tmp_path / "throughput.json").read_text())
    assert body["ratio"] > 0 and 0 <= body["overhead"] < 1


def test_selfcheck_passes():
    assert cli.main(["selfcheck"]) == 0


@settings(max_examples=50, deadline=None)
@given(st.builds(TrainConfig, task=st.sampled_from(tasks.TASK_NAMES), steps=st.integers(0, 10**7),
                 lr=st.floats(0, 1, allow_nan=False), seed=st.integers(0, 2**31),
                 max_norm=st.floats(1e-3, 1e3, allow_nan=False)))
def test_config_echo_round_trip(cfg):
    assert TrainConfig.from_text(cfg.to_text()) == cfg
