import json
import subprocess
import sys

import numpy as np
import pytest

from prefrank import dataset, manifest, model, pipeline, ranking
from prefrank.errors import IoError


def run_cli(args, cwd, env_extra=None):
    import os

    env = os.environ.copy()
    env.update(env_extra or {})
    return subprocess.run([sys.executable, "-m", "prefrank", *args],
                          cwd=cwd, env=env, capture_output=True, text=True)


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """One small pool -> subset -> session fixture shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    pipeline.gen_pool(data / "pool", count=40, seed=3)
    pipeline.select_subset(data / "pool" / "pool.jsonl", data / "subset", k=12)
    pipeline.annotate_synthetic(data / "subset" / "subset.jsonl", "anger",
                                data / "sessions", seed=1)
    return data


def test_gen_pool_writes_manifest_and_images(tmp_path):
    out = run_cli(["--data-dir", str(tmp_path / "d"), "gen-pool", "--count", "5",
                   "--seed", "7"], cwd=tmp_path)
    assert out.returncode == 0, out.stderr
    pool_dir = tmp_path / "d" / "pool"
    pool = dataset.load_pool(pool_dir / "pool.jsonl")
    assert len(pool) == 5
    assert (pool_dir / "pool" / "0000.png").is_file()
    data = manifest.read_manifest(pool_dir / "manifest-gen-pool.json")
    assert data["seed"] == 7
    assert len(data["outputs"]) == 6  # 5 images + pool.jsonl
    manifest.verify_outputs(pool_dir / "manifest-gen-pool.json")


def test_gen_pool_count_one(tmp_path):
    out = run_cli(["--data-dir", str(tmp_path / "d"), "gen-pool", "--count", "1"],
                  cwd=tmp_path)
    assert out.returncode == 0, out.stderr
    pool = dataset.load_pool(tmp_path / "d" / "pool" / "pool.jsonl")
    assert len(pool) == 1


def test_gen_pool_determinism(tmp_path):
    for d in ("a", "b"):
        out = run_cli(["--data-dir", str(tmp_path / d), "gen-pool", "--count", "8",
                       "--seed", "11"], cwd=tmp_path)
        assert out.returncode == 0, out.stderr
    ma = manifest.read_manifest(tmp_path / "a" / "pool" / "manifest-gen-pool.json")
    mb = manifest.read_manifest(tmp_path / "b" / "pool" / "manifest-gen-pool.json")
    assert ma["outputs"] == mb["outputs"]


def test_select_identity_when_k_equals_pool(pipeline_dir, tmp_path):
    out_dir = tmp_path / "sel"
    pipeline.select_subset(pipeline_dir / "pool" / "pool.jsonl", out_dir, k=40)
    subset = dataset.load_pool(out_dir / "subset.jsonl")
    assert sorted(subset.ids()) == list(range(40))
    pairs = dataset.load_pairs(out_dir / "pairs.csv")
    assert len(pairs) == 40 * 39 // 2


def test_select_pair_count_matches_formula(pipeline_dir):
    pairs = dataset.load_pairs(pipeline_dir / "subset" / "pairs.csv")
    assert len(pairs) == 12 * 11 // 2


def test_select_detects_corrupted_pool(tmp_path):
    data = tmp_path / "d"
    pipeline.gen_pool(data / "pool", count=6, seed=0)
    pool_file = data / "pool" / "pool.jsonl"
    pool_file.write_text(pool_file.read_text().replace("0.5", "0.4999", 1))
    with pytest.raises(IoError):
        pipeline.select_subset(pool_file, data / "subset", k=3)


def test_annotate_synthetic_outputs(pipeline_dir):
    path = pipeline_dir / "sessions" / "session-synthetic-anger.jsonl"
    session = ranking.load_session(path)
    assert session.completed
    pool = dataset.load_pool(pipeline_dir / "subset" / "subset.jsonl")
    assert session.result.order == ranking.latent_order(pool, "anger").order
    assert len(session.log) <= ranking.worst_case_comparisons(12)
    assert ranking.consistency_check(session.result, session.log) == 1.0


def test_annotate_requires_emotion(tmp_path):
    out = run_cli(["--data-dir", str(tmp_path), "annotate", "--mode", "synthetic"],
                  cwd=tmp_path)
    assert out.returncode == 1


def test_annotate_existing_session_needs_resume_flag(pipeline_dir, tmp_path):
    args = ["--data-dir", str(pipeline_dir.parent / "data"), "annotate",
            "--mode", "synthetic", "--emotion", "anger", "--seed", "1"]
    out = run_cli(args, cwd=tmp_path)
    assert out.returncode == 1  # refuses to touch the existing file, non-tty
    out = run_cli(args + ["--resume"], cwd=tmp_path)
    assert out.returncode == 0, out.stderr
    assert "already complete" in out.stdout


def test_train_and_optimize_roundtrip(pipeline_dir):
    model_path = pipeline.train_stage(
        pipeline_dir / "subset" / "subset.jsonl",
        [pipeline_dir / "sessions" / "session-synthetic-anger.jsonl"],
        pipeline_dir / "models", folds=3,
        config=model.TrainConfig(epochs=4, batch_size=16, seed=0))
    assert model_path.is_file()
    report = json.loads((pipeline_dir / "models" / "train-anger.json").read_text())
    assert report["config"]["learning_rate"] == 0.005
    assert report["config"]["weight_decay"] == 1e-5
    assert report["config"]["momentum"] == 0.9
    assert len(report["fold_accuracies"]) == 3

    result = pipeline.optimize_stage(model_path, pipeline_dir / "runs",
                                     budget=12, init=5, seed=2)
    trace = result["trace"]
    assert trace.name == "bo-anger-2.csv"
    rows = trace.read_text().splitlines()
    assert len(rows) == 13  # header + budget rows
    assert (pipeline_dir / "runs" / "best-anger.png").is_file()
    best = json.loads((pipeline_dir / "runs" / "best-anger.json").read_text())
    assert len(best["actuators"]) == 35


def test_report_aggregates(pipeline_dir, tmp_path):
    pipeline.optimize_stage(pipeline_dir / "models" / "model-anger.json",
                            pipeline_dir / "runs", budget=6, init=6, seed=2)
    out = run_cli(["--data-dir", str(pipeline_dir), "report"], cwd=tmp_path)
    assert out.returncode == 0, out.stderr
    report = (pipeline_dir / "report" / "report.csv").read_text().splitlines()
    assert report[0].startswith("emotion,")
    assert any("anger" in line for line in report[1:])
    assert "| anger |" in out.stdout


def test_missing_input_exits_2(tmp_path):
    out = run_cli(["--data-dir", str(tmp_path / "none"), "train",
                   "--emotion", "anger"], cwd=tmp_path)
    assert out.returncode == 2
    assert "error" in out.stderr.lower() or "no session" in out.stderr.lower()


def test_bad_usage_exits_1(tmp_path):
    out = run_cli(["gen-pool", "--count", "not-a-number"], cwd=tmp_path)
    assert out.returncode == 1
    out2 = run_cli(["no-such-command"], cwd=tmp_path)
    assert out2.returncode == 1


def test_config_file_and_env_var(tmp_path):
    cfg = tmp_path / "conf.json"
    cfg.write_text(json.dumps({"count": 4, "seed": 9}))
    out = run_cli(["--config", str(cfg), "gen-pool"], cwd=tmp_path,
                  env_extra={"PREFRANK_DATA_DIR": str(tmp_path / "envd")})
    assert out.returncode == 0, out.stderr
    pool = dataset.load_pool(tmp_path / "envd" / "pool" / "pool.jsonl")
    assert len(pool) == 4


def test_toml_config(tmp_path):
    cfg = tmp_path / "conf.toml"
    cfg.write_text("count = 3\n")
    out = run_cli(["--data-dir", str(tmp_path / "d"), "--config", str(cfg),
                   "gen-pool"], cwd=tmp_path)
    assert out.returncode == 0, out.stderr
    assert len(dataset.load_pool(tmp_path / "d" / "pool" / "pool.jsonl")) == 3
