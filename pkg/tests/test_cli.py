import csv
import json

import numpy as np
import pytest

from san import tensor
from san.cli import main
from san.datasets import read_pgm

TINY = {
    "image_size": 16,
    "backbone_channels": [2, 3, 4],
    "fusion_width": 3,
    "encoder_channels": [2, 3],
    "d": 4,
    "k": 6,
    "emb_dim": 4,
    "stage1": {"iterations": 3, "batch": 4},
    "stage2": {"epochs": 2, "batch": 4},
    "split": [0.5, 0.25, 0.25],
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--seed", "7", "--n", "12", "--image-size", "16", "--out", str(root / "data")]) == 0
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({**TINY, "data": str(root / "data")}))
    assert main(["train", "--config", str(cfg), "--out", str(root / "run")]) == 0
    return root


def test_gen_data_writes_corpus_and_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-data", "--seed", "7", "--n", "5", "--out", str(tmp_path / name)]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 11  # manifest + 5 images + 5 masks
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_missing_out_is_a_usage_error(capsys):
    assert main(["gen-data", "--n", "3"]) == 1
    assert "--out" in capsys.readouterr().err


def test_unknown_flag_and_no_command():
    assert main(["train", "--bogus"]) == 1
    assert main([]) == 1


def test_train_writes_checkpoints_logs_and_config(workspace):
    run = workspace / "run"
    for name in ("stage1.ckpt", "stage2.ckpt", "stage1_log.csv", "stage2_log.csv", "config.json"):
        assert (run / name).exists(), name
    echoed = json.loads((run / "config.json").read_text())
    assert echoed["k"] == 6 and echoed["data"].endswith("data")
    last = list(csv.DictReader(open(run / "stage2_log.csv")))[-1]
    assert "train_sR@1" in last and "train_iR@1" in last


def test_train_stage_one_only(workspace, tmp_path):
    cfg = workspace / "cfg.json"
    assert main(["train", "--config", str(cfg), "--stage", "1", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "stage1.ckpt").exists() and not (tmp_path / "stage2.ckpt").exists()


def test_train_missing_corpus_is_a_data_error(tmp_path):
    assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 2


def test_unknown_config_key(tmp_path, workspace):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"epochs": 3}))
    assert main(["train", "--config", str(bad), "--data", str(workspace / "data"), "--out", str(tmp_path)]) == 1


def test_eval_report_and_determinism(workspace, tmp_path):
    args = ["eval", "--config", str(workspace / "cfg.json"), "--checkpoint", str(workspace / "run" / "stage2.ckpt")]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    head = (tmp_path / "a" / "report.csv").read_text().splitlines()[0]
    assert head == "variant,sR@1,sR@5,sR@10,iR@1,iR@5,iR@10,mR"
    assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()


def test_eval_dimension_mismatch_is_a_checkpoint_error(workspace):
    code = main(["eval", "--config", str(workspace / "cfg.json"), "--checkpoint",
                 str(workspace / "run" / "stage2.ckpt"), "--variant", "GV+GT", "--seed", "0"])
    assert code == 0
    bad = workspace / "bad_dims.json"
    bad.write_text(json.dumps({**TINY, "k": 5, "data": str(workspace / "data")}))
    assert main(["eval", "--config", str(bad), "--checkpoint", str(workspace / "run" / "stage2.ckpt")]) == 2


def test_eval_ablate_runs_requested_variants(workspace, tmp_path, capsys):
    code = main(["eval", "--config", str(workspace / "cfg.json"), "--ablate", "--variant", "GV+GT,SV+GT",
                 "--out", str(tmp_path)])
    assert code == 0
    rows = (tmp_path / "report.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in rows[1:]] == ["GV+GT", "SV+GT"]


def test_retrieve_ranks_images(workspace, capsys):
    code = main(["retrieve", "--config", str(workspace / "cfg.json"), "--checkpoint",
                 str(workspace / "run" / "stage2.ckpt"), "--query", "a red circle", "--top", "3"])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert [line.split("\t")[0] for line in lines] == ["1", "2", "3"]
    scores = [float(line.split("\t")[2]) for line in lines]
    assert scores == sorted(scores, reverse=True)


def test_export_attention(workspace, tmp_path):
    manifest = (workspace / "data" / "manifest.jsonl").read_text().splitlines()
    rec = json.loads(manifest[0])
    code = main(["export-attention", "--config", str(workspace / "cfg.json"), "--checkpoint",
                 str(workspace / "run" / "stage2.ckpt"), "--sample", rec["id"], "--out", str(tmp_path)])
    assert code == 0
    heat = read_pgm(tmp_path / f"{rec['id']}_saliency.pgm")
    assert heat.shape == (16, 16)
    a_v = np.loadtxt(tmp_path / f"{rec['id']}_a_v.csv", delimiter=",")
    assert a_v.shape == (2, 2) and abs(a_v.sum() - 1.0) <= 1e-9
    rows = list(csv.reader(open(tmp_path / f"{rec['id']}_a_t.csv")))
    words = rec["captions"][0].replace(".", "").split()
    assert rows[0] == ["token", "weight"] and len(rows) - 1 == len(words)
    assert abs(sum(float(w) for _, w in rows[1:]) - 1.0) <= 1e-12


def test_export_unknown_sample_is_a_data_error(workspace, tmp_path):
    code = main(["export-attention", "--config", str(workspace / "cfg.json"), "--checkpoint",
                 str(workspace / "run" / "stage2.ckpt"), "--sample", "nope", "--out", str(tmp_path)])
    assert code == 2


def test_gradcheck_single_module(capsys):
    assert main(["gradcheck", "--module", "sta"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("sta") and "ok" in out


def test_gradcheck_unknown_module():
    assert main(["gradcheck", "--module", "nope"]) == 1


def test_gradcheck_detects_corrupted_backward(monkeypatch, capsys):
    original = tensor.Tanh.backward

    def skewed(self, grad):
        return tuple(g * 1.01 for g in original(self, grad))

    monkeypatch.setattr(tensor.Tanh, "backward", skewed)
    assert main(["gradcheck", "--module", "sta"]) == 3
    assert "FAIL" in capsys.readouterr().out
