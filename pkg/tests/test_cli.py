import json
import subprocess
import sys
import time

import numpy as np
import pytest

from tinyunet import cli
from tinyunet.bench import validate_report
from tinyunet.serialize import load_model, save_model
from tinyunet.unet import ModelConfig, build_model


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert run("gen-data", "--count", 12, "--out", d, "--seed", 4) == 0
    return d


@pytest.fixture(scope="module")
def model_path(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("model") / "m.tunw"
    assert run("train", "--data", data_dir, "--B", 1, "--F", 16, "--epochs", 2, "--out", out) == 0
    return out


def test_gen_data_layout_and_rerun(data_dir, tmp_path, capsys):
    manifest = json.loads((data_dir / "manifest.json").read_text())
    assert manifest["count"] == 12
    assert sum(s["split"] == "val" for s in manifest["scenes"]) == 2
    assert run("--json", "gen-data", "--count", 12, "--out", tmp_path, "--seed", 4, "--pgm") == 0
    assert json.loads(capsys.readouterr().out)["train"] == 10
    for f in data_dir.iterdir():
        assert (tmp_path / f.name).read_bytes() == f.read_bytes()
    assert len(list((tmp_path / "pgm").glob("*.pgm"))) == 12


def test_gen_data_default_count(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run("gen-data", "--no-plot") == 0
    manifest = json.loads((tmp_path / "data" / "manifest.json").read_text())
    assert sum(s["split"] == "train" for s in manifest["scenes"]) == 72
    assert sum(s["split"] == "val" for s in manifest["scenes"]) == 8


def test_train_outputs(model_path):
    model = load_model(model_path)
    assert model.config == ModelConfig(1, 16)
    csv_lines = model_path.with_name("m_train.csv").read_text().splitlines()
    assert len(csv_lines) == 1 + 2
    assert model_path.with_name("m_train.png").stat().st_size > 0


def test_train_lr_zero_keeps_weights(data_dir, tmp_path):
    out = tmp_path / "z.tunw"
    assert run("train", "--data", data_dir, "--B", 1, "--F", 8, "--epochs", 1, "--lr", 0, "--out", out,
               "--no-plot", "--seed", 2) == 0
    fresh = build_model(ModelConfig(1, 8), 2)
    trained = load_model(out)
    for k in fresh.params:
        assert trained.params[k].tobytes() == fresh.params[k].tobytes()


def test_eval_truth_as_pred(data_dir, capsys):
    assert run("eval", "--truth-as-pred", "--data", data_dir, "--json") == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["mean_iou"] == rep["mean_dice"] == rep["mean_precision"] == rep["mean_recall"] == 1.0


def test_eval_model_and_quantized(data_dir, model_path, tmp_path):
    out = tmp_path / "ev.json"
    assert run("eval", "--model", model_path, "--data", data_dir, "--out", out) == 0
    rep = json.loads(out.read_text())
    assert 0 <= rep["mean_iou"] <= 1
    assert (tmp_path / "ev_confusion.png").exists()
    assert run("eval", "--model", model_path, "--data", data_dir, "--quantized", "--out", tmp_path / "q.json",
               "--no-plot") == 0


def test_quantize_and_eval_quantized_file(data_dir, model_path, tmp_path, capsys):
    q = tmp_path / "mq.tunw"
    assert run("quantize", "--model", model_path, "--data", data_dir, "--out", q, "--json") == 0
    info = json.loads(capsys.readouterr().out)
    assert info["activation_sites"] > 0 and q.stat().st_size == info["bytes"]
    assert run("eval", "--model", q, "--data", data_dir, "--json") == 0
    assert run("quantize", "--model", model_path, "--data", data_dir, "--weights-only") == 0
    assert model_path.with_name("m_q.tunw").exists()
    assert run("quantize", "--model", q, "--data", data_dir) == 2


def test_missing_model_file(data_dir, tmp_path, capsys):
    code = run("eval", "--model", tmp_path / "none.tunw", "--data", data_dir)
    assert code == 3
    assert "none.tunw" in capsys.readouterr().err


def test_corrupt_manifest_refused(data_dir, tmp_path, capsys):
    for f in data_dir.iterdir():
        if f.is_file():
            (tmp_path / f.name).write_bytes(f.read_bytes())
    m = json.loads((tmp_path / "manifest.json").read_text())
    m["master_seed"] = 999
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    assert run("eval", "--truth-as-pred", "--data", tmp_path) == 3
    assert "checksum" in capsys.readouterr().err


def test_config_errors(tmp_path, data_dir):
    bad = tmp_path / "bad.ini"
    bad.write_text("[model]\nB = 9\n")
    assert run("--config", bad, "size-table") == 2
    assert run("train", "--data", data_dir, "--B", 2, "--F", 3) == 2
    assert run("bench", "--B", 3, "--F", 16, "--dims", "1x9x10x10") == 2
    with pytest.raises(SystemExit):
        run("frobnicate")


def test_numeric_failure_exit(data_dir, model_path, tmp_path):
    model = load_model(model_path)
    model.params["head.weight"][:] = np.nan
    bad = tmp_path / "nan.tunw"
    save_model(model, bad)
    assert run("eval", "--model", bad, "--data", data_dir) == 4


def test_sweep_subset_and_point_regeneration(data_dir, tmp_path):
    out = tmp_path / "sw.csv"
    assert run("sweep", "--data", data_dir, "--points", "1,16;2,16", "--epochs", 1, "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0].split(",") == list(cli.dse.SWEEP_FIELDS) and len(lines) == 3
    summary = json.loads((tmp_path / "sw.json").read_text())
    assert "surrogate" in summary["provenance"]["metrics"]
    assert (tmp_path / "sw.png").exists()
    point = json.loads((tmp_path / "sw_points" / "B2_F16.json").read_text())
    solo = tmp_path / "solo.csv"
    assert run("sweep", "--data", data_dir, "--points", "2,16", "--epochs", 1, "--out", solo, "--no-plot") == 0
    again = json.loads((tmp_path / "solo_points" / "B2_F16.json").read_text())
    assert {k: v for k, v in point.items() if k != "highlight"} == {k: v for k, v in again.items() if k != "highlight"}
    assert run("sweep", "--data", data_dir, "--points", "2;4") == 2


def test_size_table_stdout_and_json(capsys):
    assert run("size-table") == 0
    cap = capsys.readouterr()
    rows = cap.out.strip().splitlines()
    assert rows[0] == "B,F,params,size_mib,size_mb_reported" and len(rows) == 21
    assert "269.3" in cap.err
    assert run("size-table", "--json") == 0
    d = json.loads(capsys.readouterr().out)
    assert len(d["rows"]) == 20 and d["ratio_4_1_over_2_4"]["reported"] == pytest.approx(269.27, abs=0.01)


def test_size_table_entry_point_fast(tmp_path):
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "tinyunet", "size-table", "--out", tmp_path / "s.csv"],
                          capture_output=True, text=True)
    elapsed = time.perf_counter() - t0
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "s.csv").read_text().count("\n") == 21
    assert (tmp_path / "s.png").exists()
    assert elapsed < 1.0


def test_bench_verb(model_path, tmp_path):
    out = tmp_path / "b.json"
    assert run("bench", "--model", model_path, "--dims", "1x9x16x16", "--runs", 30, "--warmup", 1, "--out", out) == 0
    rep = json.loads(out.read_text())
    validate_report(rep)
    assert rep["config"] == {"B": 1, "F": 16} and not rep["quantized"]
    assert (tmp_path / "b.png").exists()
    assert run("bench", "--B", 1, "--F", 16, "--quantized", "--runs", 30, "--out", tmp_path / "q.json", "--no-plot") == 0
    assert json.loads((tmp_path / "q.json").read_text())["quantized"] is True
    assert run("bench", "--B", 1, "--F", 16, "--runs", 5) == 2


def test_global_flags_either_side(capsys):
    assert run("--json", "size-table") == 0
    a = capsys.readouterr().out
    assert run("size-table", "--json") == 0
    assert capsys.readouterr().out == a
