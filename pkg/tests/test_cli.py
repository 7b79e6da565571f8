import json
import subprocess
import sys

import numpy as np
import pytest

from ppgsqa.cli import main

SUBCOMMANDS = ["count", "synth", "preprocess", "train", "cv", "eval", "predict"]


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        main([cmd, "--help"])
    assert exc.value.code == 0
    assert "--out-dir" in capsys.readouterr().out


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "ppgsqa", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip()


@pytest.mark.parametrize("channels,se,params_k", [("ppg,fdp,sdp", "on", "61.67"), ("ppg", "off", "58.66")])
def test_count_totals(tmp_path, capsys, channels, se, params_k):
    assert main(["count", "--channels", channels, "--se", se, "--out-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert f"{params_k}k" in out
    rep = json.loads((tmp_path / "cost_report.json").read_text())
    assert round(rep["totals"]["params"] / 1000, 2) == float(params_k)
    resolved = json.loads((tmp_path / "count.resolved.json").read_text())
    assert resolved["channels"] == channels and resolved["se"] == (se == "on")


def test_count_duplicate_channel_exit_2(tmp_path):
    r = subprocess.run([sys.executable, "-m", "ppgsqa", "count", "--channels", "ppg,ppg",
                        "--out-dir", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 2 and "duplicate" in r.stderr


def test_count_ablation(tmp_path, capsys):
    assert main(["count", "--ablation", "--out-dir", str(tmp_path)]) == 0
    rows = json.loads((tmp_path / "ablation_costs.json").read_text())
    assert len(rows) == 22


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--n-subjects", "6", "--minutes", "2", "--n-test", "1", "--seed", "3",
                 "--out-dir", str(d)]) == 0
    return d


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    assert main(["train", "--manifest", str(corpus / "manifest.tsv"), "--epochs", "1",
                 "--channels", "ppg,sdp", "--deterministic", "--out-dir", str(d)]) == 0
    return d


def test_train_outputs(trained):
    assert (trained / "weights.bin").exists()
    lines = (trained / "train_metrics.jsonl").read_text().splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["epoch"] == 0


def test_preprocess(corpus, tmp_path):
    assert main(["preprocess", "--manifest", str(corpus / "manifest.tsv"), "--channels", "atc",
                 "--out-dir", str(tmp_path)]) == 0
    data = np.load(tmp_path / "segments.npz")
    assert data["X"].shape == (24, 1, 960)


def test_eval(corpus, trained, tmp_path):
    assert main(["eval", "--manifest", str(corpus / "manifest.tsv"), "--weights",
                 str(trained / "weights.bin"), "--out-dir", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "eval.json").read_text())
    assert res["segments"] == 4 and res["channels"] == "ppg,sdp"
    assert len((tmp_path / "predictions.csv").read_text().splitlines()) == 5


def test_predict_echoes_channels(corpus, trained, tmp_path, capsys):
    rec = corpus / "records" / "S000.txt"
    assert main(["predict", "--weights", str(trained / "weights.bin"), "--record", str(rec),
                 "--out-dir", str(tmp_path)]) == 0
    assert "channels: ppg,sdp" in capsys.readouterr().out
    rows = (tmp_path / "predictions.csv").read_text().splitlines()
    assert len(rows) == 5 and rows[1].endswith(",")


def test_predict_short_record_exit_4(trained, tmp_path):
    rec = tmp_path / "short.txt"
    rec.write_text("".join(f"{np.sin(i / 3):.4f}\n" for i in range(100)))
    assert main(["predict", "--weights", str(trained / "weights.bin"), "--record", str(rec),
                 "--out-dir", str(tmp_path)]) == 4


def test_cv_too_few_subjects_exit_3(tmp_path):
    corpus = tmp_path / "c"
    assert main(["synth", "--n-subjects", "4", "--minutes", "1", "--n-test", "0",
                 "--out-dir", str(corpus)]) == 0
    assert main(["cv", "--manifest", str(corpus / "manifest.tsv"), "--epochs", "1",
                 "--out-dir", str(tmp_path / "o")]) == 3


def test_missing_manifest_exit_3(tmp_path):
    assert main(["train", "--manifest", str(tmp_path / "none.tsv"), "--out-dir", str(tmp_path)]) == 3


def test_bad_weights_exit_4(corpus, tmp_path):
    w = tmp_path / "w.bin"
    w.write_bytes(b"garbage")
    assert main(["eval", "--manifest", str(corpus / "manifest.tsv"), "--weights", str(w),
                 "--out-dir", str(tmp_path)]) == 4
