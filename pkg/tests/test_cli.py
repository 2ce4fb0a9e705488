import hashlib
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from reminet.cli import main
from reminet.dataset import load_dataset, read_matrix, write_matrix
from oracles import assert_cbt_valid

FAST = ["--epochs", "2", "--k", "2", "--hidden-dims", "3,4", "--seed", "5"]


def _tree_digest(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            p = os.path.join(dirpath, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = hashlib.sha256(fh.read()).hexdigest()
    return out


@pytest.fixture
def data_dir(tmp_path):
    out = tmp_path / "data"
    assert main(["simulate", "--subjects", "6", "--rois", "4", "--views", "2", "--seed", "3", "--out", str(out)]) == 0
    return out


def test_simulate_round_trip(data_dir):
    ds = load_dataset(data_dir / "manifest.json")
    assert len(ds) == 6 and ds.dims == (4, 2, 2)
    ds.validate()


def test_simulate_six_timepoints(tmp_path):
    out = tmp_path / "d6"
    assert main(["simulate", "--subjects", "3", "--rois", "4", "--views", "2",
                 "--timepoints", "6", "--out", str(out)]) == 0
    assert load_dataset(out / "manifest.json").dims[2] == 6


def test_missing_required_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["simulate"])
    assert exc.value.code == 2
    assert "--out" in capsys.readouterr().err


def test_invalid_value_is_usage_error(tmp_path, capsys):
    assert main(["simulate", "--subjects", "0", "--out", str(tmp_path / "x")]) == 2
    assert "subjects" in capsys.readouterr().err


def test_missing_data_is_usage_error(tmp_path):
    assert main(["crossval", "--out", str(tmp_path / "o")] + FAST) == 2


def test_bad_manifest_is_runtime_error(tmp_path, capsys):
    (tmp_path / "manifest.json").write_text("{}")
    code = main(["crossval", "--data", str(tmp_path / "manifest.json"), "--out", str(tmp_path / "o")] + FAST)
    assert code == 1
    assert "Error" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, data_dir, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"epochs": 2, "momentum": 0.9}))
    code = main(["train", "--config", str(cfg), "--data", str(data_dir / "manifest.json"),
                 "--out", str(tmp_path / "o")])
    assert code == 2
    assert "momentum" in capsys.readouterr().err


def test_crossval_outputs(tmp_path, data_dir):
    out = tmp_path / "cv"
    before = _tree_digest(data_dir)
    code = main(["crossval", "--data", str(data_dir / "manifest.json"), "--folds", "3", "--out", str(out)] + FAST)
    assert code == 0
    rows = (out / "folds.csv").read_text().splitlines()
    assert len(rows) == 1 + 3 * 2  # header + folds x {last, best}
    summary = json.loads((out / "summary.json").read_text())
    assert summary
    for f in range(3):
        for s in ("last", "best"):
            assert (out / "checkpoints" / f"full_fold{f}_{s}.json").exists()
            for t in (1, 2):
                assert_cbt_valid(read_matrix(out / "population" / f"full_fold{f}_{s}_t{t}.csv"))
        assert (out / "histories" / f"full_fold{f}.csv").exists()
    assert _tree_digest(data_dir) == before


def test_crossval_rerun_bit_identical(tmp_path, data_dir):
    args = ["crossval", "--data", str(data_dir / "manifest.json"), "--folds", "2"] + FAST
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")


def test_config_file_and_flag_precedence(tmp_path, data_dir):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"epochs": 1, "k_samples": 2, "hidden_dims": [3], "alpha": 0.7}))
    out = tmp_path / "t"
    assert main(["train", "--config", str(cfg), "--alpha", "0.1",
                 "--data", str(data_dir / "manifest.json"), "--out", str(out)]) == 0
    saved = json.loads((out / "config.json").read_text())
    assert saved["alpha"] == 0.1 and saved["epochs"] == 1
    assert len((out / "history.csv").read_text().splitlines()) == 2


def test_env_seed(tmp_path, data_dir, monkeypatch):
    monkeypatch.setenv("REMI_SEED", "17")
    out = tmp_path / "t"
    assert main(["train", "--epochs", "1", "--k", "2", "--hidden-dims", "3",
                 "--data", str(data_dir / "manifest.json"), "--out", str(out)]) == 0
    assert json.loads((out / "config.json").read_text())["seed"] == 17


def test_discriminate_identical_templates(tmp_path, capsys):
    rng = np.random.default_rng(0)
    m = rng.uniform(0, 1, (6, 6))
    m = (m + m.T) / 2
    np.fill_diagonal(m, 0)
    write_matrix(tmp_path / "a.csv", m)
    out = tmp_path / "disc"
    assert main(["discriminate", "--cbt-a", str(tmp_path / "a.csv"), "--cbt-b", str(tmp_path / "a.csv"),
                 "--topk", "3", "--out", str(out)]) == 0
    doc = json.loads((out / "discriminability.json").read_text())
    assert doc["overlap"] == 1.0
    assert doc["scores"] == [0.0] * 6
    assert doc["top_rois"] == [0, 1, 2]


def test_discriminate_with_reference(tmp_path):
    a, b = np.zeros((4, 4)), np.zeros((4, 4))
    a[2, 3] = a[3, 2] = 1.0
    write_matrix(tmp_path / "a.csv", a)
    write_matrix(tmp_path / "b.csv", b)
    (tmp_path / "ref.txt").write_text("0\n1\n2\n3\n")
    out = tmp_path / "disc"
    assert main(["discriminate", "--cbt-a", str(tmp_path / "a.csv"), "--cbt-b", str(tmp_path / "b.csv"),
                 "--topk", "2", "--reference", str(tmp_path / "ref.txt"), "--out", str(out)]) == 0
    doc = json.loads((out / "discriminability.json").read_text())
    assert doc["top_rois"] == [2, 3]
    assert doc["overlap"] == 0.0


def test_discriminate_topk_out_of_range(tmp_path):
    write_matrix(tmp_path / "a.csv", np.zeros((3, 3)))
    assert main(["discriminate", "--cbt-a", str(tmp_path / "a.csv"), "--cbt-b", str(tmp_path / "a.csv"),
                 "--topk", "4"]) == 2


def test_export_cbt(tmp_path, data_dir):
    tr = tmp_path / "t"
    assert main(["train", "--data", str(data_dir / "manifest.json"), "--out", str(tr)] + FAST) == 0
    out = tmp_path / "pop"
    assert main(["export-cbt", "--checkpoint", str(tr / "last.json"), "--data", str(data_dir / "manifest.json"),
                 "--timepoints", "4", "--out", str(out)]) == 0
    for t in range(1, 5):
        assert_cbt_valid(read_matrix(out / f"population_t{t}.csv"))


def test_compare_writes_pvalues(tmp_path, data_dir):
    out = tmp_path / "cmp"
    assert main(["compare", "--data", str(data_dir / "manifest.json"), "--variants", "vanilla,full",
                 "--folds", "2", "--out", str(out)] + FAST) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["paired_ttests"]) == 2
    assert (out / "checkpoints" / "vanilla_fold1_best.json").exists()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "reminet", "simulate", "--subjects", "2", "--rois", "3",
                           "--views", "1", "--out", str(tmp_path / "d")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "resolved settings" in proc.stderr
    assert (tmp_path / "d" / "manifest.json").exists()
