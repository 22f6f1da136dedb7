import json

import numpy as np
import pytest

from trokens import pipeline
from trokens.cli import main
from trokens.data import load_manifest, read_tensor, read_trajectories
from trokens.errors import ConfigError


@pytest.fixture(scope="module")
def gen_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen") / "data"
    assert main(["gen", "--classes", "6", "--per-class", "4", "--test-classes", "2", "--seed", "1",
                 "--out", str(out)]) == 0
    return out


def run_json(d):
    return json.loads((d / "run.json").read_text())


def test_gen_writes_manifest_and_record(gen_dir):
    m = load_manifest(gen_dir / "manifest.json")
    assert len(m.videos) == 24 and len(m.split["test"]) == 2 and len(m.split["train"]) == 4
    rec = run_json(gen_dir)
    assert rec["command"] == "gen" and rec["seed"] == 1 and len(rec["config_hash"]) == 16
    assert set(rec["versions"]) >= {"trokens", "numpy", "python"}


def test_stage_by_stage_chain(gen_dir, tmp_path):
    m = load_manifest(gen_dir / "manifest.json")
    v = m.videos[0]
    feats, tracks = m.resolve(v.feature_path), m.resolve(v.trajectory_path)
    w = tmp_path
    assert main(["cluster", "--features", str(feats), "--L", "4", "--out", str(w / "assign.trok")]) == 0
    labels = read_tensor(w / "assign.trok")
    assert labels.shape == read_tensor(feats).shape[:3] and labels.dtype == np.float32
    assert main(["sample", "--assign", str(w / "assign.trok"), "--M", "16", "--out", str(w / "seeds.json")]) == 0
    assert main(["sample", "--mode", "grid", "--M", "16", "--out", str(w / "grid.json")]) == 0
    assert main(["track", "--seeds", str(w / "seeds.json"), "--tracks", str(tracks),
                 "--out", str(w / "traj.trok")]) == 0
    traj = read_trajectories(w / "traj.trok")
    assert traj.M == 16
    assert main(["motion", "--traj", str(w / "traj.trok"), "--bins", "8",
                 "--out", f"{w / 'hod.trok'},{w / 'cross.trok'}"]) == 0
    assert read_tensor(w / "hod.trok").shape == (16, traj.T, 8)
    assert read_tensor(w / "cross.trok").shape == (16, traj.T, 32)
    assert run_json(w)["command"] == "motion"


def test_train_then_eval(gen_dir, tmp_path):
    ck = tmp_path / "ck"
    assert main(["train", "--manifest", str(gen_dir / "manifest.json"), "--points", "16", "--clusters", "4",
                 "--dim", "16", "--heads", "2", "--episodes", "3", "--way", "2", "--query", "1",
                 "--out", str(ck)]) == 0
    assert (ck / "config.json").exists() and (ck / "train_log.json").exists()
    assert len(json.loads((ck / "train_log.json").read_text())) == 3
    args = ["eval", "--manifest", str(gen_dir / "manifest.json"), "--ckpt", str(ck), "--episodes", "4",
            "--way", "2", "--query", "1"]
    assert main(args + ["--out", str(tmp_path / "e1")]) == 0
    assert main(args + ["--out", str(tmp_path / "e2")]) == 0
    r1 = (tmp_path / "e1" / "report.json").read_bytes()
    assert r1 == (tmp_path / "e2" / "report.json").read_bytes()
    rep = json.loads(r1)
    assert rep["queries"] == 8 and 0 <= rep["accuracy"] <= 1
    # --json alone is enough; the run record goes next to it
    assert main(args + ["--json", str(tmp_path / "e3" / "r.json")]) == 0
    assert (tmp_path / "e3" / "r.json").read_bytes() == r1 and (tmp_path / "e3" / "run.json").exists()
    assert main(args) == 2


def small_config(**over):
    cfg = {
        "seed": 2,
        "data": {"per_class": 4, "classes": 6, "test_classes": 2},
        "model": {"points": 16, "clusters": 4, "net": {"model_dim": 16, "heads": 2}},
        "train": {"episodes": 3, "way": 2, "query": 1},
        "eval": {"episodes": 3, "way": 2, "shots": [1, 2], "query": 1},
    }
    cfg.update(over)
    return cfg


def test_run_is_byte_identical(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(small_config()))
    for d in ("a", "b"):
        assert main(["run", str(path), "--deterministic", "--out", str(tmp_path / d)]) == 0
    ra, rb = (tmp_path / "a" / "report.json").read_bytes(), (tmp_path / "b" / "report.json").read_bytes()
    assert ra == rb
    rep = json.loads(ra)
    assert set(rep["eval"]) == {"1shot", "2shot"} and rep["train"]["episodes"] == 3
    assert run_json(tmp_path / "a")["config_hash"] == rep["config_hash"]


def test_toml_config(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text('seed = 1\n[data]\nper_class = 4\nclasses = 6\ntest_classes = 2\n'
                    '[model]\npoints = 16\nclusters = 4\n[model.net]\nmodel_dim = 16\nheads = 2\n'
                    '[train]\nepisodes = 2\nway = 2\nquery = 1\n'
                    '[eval]\nepisodes = 2\nway = 2\nshots = 1\nquery = 1\n')
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == 0
    assert "1shot" in json.loads((tmp_path / "o" / "report.json").read_text())["eval"]


@pytest.mark.parametrize("drop", ["seed", "data.per_class", "train.episodes", "eval.way", "eval.shots"])
def test_missing_field_is_named(drop, tmp_path, capsys):
    cfg = small_config()
    head, _, leaf = drop.rpartition(".")
    (cfg[head] if head else cfg).pop(leaf)
    with pytest.raises(ConfigError, match=f"'{drop}'"):
        pipeline.resolve_config(cfg)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == 2
    assert drop in capsys.readouterr().err


def test_unknown_field_rejected():
    with pytest.raises(ConfigError, match="bogus"):
        pipeline.resolve_config(small_config(train={"episodes": 1, "bogus": 3}))


def test_config_hash_tracks_content():
    a = pipeline.resolve_config(small_config())
    b = pipeline.resolve_config(small_config(seed=3))
    assert pipeline.config_hash(a) == pipeline.config_hash(pipeline.resolve_config(small_config()))
    assert pipeline.config_hash(a) != pipeline.config_hash(b)


def test_bench_dry_run(tmp_path, capsys):
    assert main(["bench", "--repeats", "0", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "bench.json").read_text())
    assert doc == {"rows": [], "slopes": {}}
    assert "dry run" in capsys.readouterr().out
    assert (tmp_path / "bench.csv").read_text().count("\n") == 1


def test_bench_small(tmp_path):
    assert main(["bench", "--kernel", "hod", "--sizes", "8,16", "--T", "4", "--repeats", "2",
                 "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "bench.json").read_text())
    assert [r["M"] for r in doc["rows"]] == [8, 16] and "hod" in doc["slopes"]


def test_errors_exit_2(tmp_path, capsys):
    assert main(["cluster", "--features", str(tmp_path / "nope.trok"), "--out", str(tmp_path / "a.trok")]) == 2
    assert main(["sample", "--M", "16", "--out", str(tmp_path / "s.json")]) == 2
    assert "assign" in capsys.readouterr().err
    assert main(["motion", "--traj", "x", "--out", str(tmp_path / "one.trok")]) == 2
    assert main(["bench", "--threads", "0", "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit):
        main(["gen"])
