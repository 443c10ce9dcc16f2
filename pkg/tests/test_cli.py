import csv
import json

import numpy as np
import pytest

from prunekit import checkpoint
from prunekit.cli import main
from prunekit.harness import build_toy_vdsr

SMALL_RUN = ["--images", "8", "--patch", "8", "--depth", "4", "--width", "8",
             "--pretrain-epochs", "5", "--epochs", "1"]


@pytest.fixture
def ckpt(tmp_path):
    net = build_toy_vdsr(4, 8, seed=0)
    net.layers[1].kernels[2] = 0
    path = tmp_path / "net.pkt"
    checkpoint.save(net, path)
    return path


def error_of(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_analyze_csv(ckpt, tmp_path):
    out = tmp_path / "s.csv"
    assert main(["analyze", str(ckpt), "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["layer", "kernel", "sparsity", "rank"]
    assert len(rows) == 1 + 8 + 8 + 8 + 1
    assert rows[1 + 8] == ["1", "2", "1.000000", "0"]


def test_budget_vdsr(tmp_path, capsys):
    spec = tmp_path / "vdsr.txt"
    spec.write_text("vdsr 20 64\n")
    assert main(["budget", str(spec), "--r", "0.25"]) == 0
    out = capsys.readouterr().out
    assert out.strip().endswith("(56.3%)")
    assert "0,64,48,0.250000" in out


def test_budget_from_checkpoint_and_vector(ckpt, capsys):
    assert main(["budget", str(ckpt), "--r", "0.25,0.5,0.25,0"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[1:5] == ["0,8,6,0.250000", "1,8,4,0.500000", "2,8,6,0.250000", "3,1,1,0.000000"]


def test_prune_zero_is_bit_identical(ckpt, tmp_path):
    out = tmp_path / "p.pkt"
    assert main(["prune", str(ckpt), "--r", "0", "--out", str(out)]) == 0
    assert out.read_bytes() == ckpt.read_bytes()
    sidecar = json.loads((tmp_path / "p.plan.json").read_text())
    assert sidecar["weights_remained"] == 1.0


def test_prune_with_factor_then_plan(ckpt, tmp_path):
    out = tmp_path / "p.pkt"
    assert main(["prune", str(ckpt), "--r", "0.25", "--out", str(out)]) == 0
    pruned = checkpoint.load(out)
    assert [l.n_kernels for l in pruned.layers] == [6, 6, 6, 1]
    plan_path = tmp_path / "p.plan.json"
    again = tmp_path / "q.pkt"
    assert main(["prune", str(ckpt), "--plan", str(plan_path), "--out", str(again)]) == 0
    assert again.read_bytes() == out.read_bytes()


def test_eval_same_network(ckpt, capsys):
    assert main(["eval", str(ckpt), str(ckpt), "--images", "6", "--patch", "8"]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["drop"] == 0.0
    assert set(result) == {"baseline_psnr", "pruned_psnr", "drop"}


def test_malformed_checkpoint(tmp_path, capsys):
    bad = tmp_path / "bad.pkt"
    bad.write_bytes(b"NOPE" + bytes(20))
    assert main(["analyze", str(bad)]) == 4
    assert error_of(capsys)["error"] == "checkpoint"


def test_missing_file(capsys):
    assert main(["analyze", "/nonexistent/x.pkt"]) == 3
    assert error_of(capsys)["error"] == "io"


def test_infeasible_budget(tmp_path, capsys):
    code = main(["lwp", *SMALL_RUN, "--harness", "mean", "--budget", "0.01",
                 "--candidates", "0.25", "--out", str(tmp_path)])
    assert code == 5
    assert error_of(capsys)["error"] == "infeasible"


def test_config_file_and_flag_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# lwp settings\nharness = mean\nbudget=0.9\ncandidates=0.25\nseed = 4\nmultiple=1\n")
    monkeypatch.setenv("PRUNEKIT_SEED", "99")
    out = tmp_path / "o"
    assert main(["lwp", *SMALL_RUN, "--config", str(cfg), "--budget", "0.95", "--out", str(out)]) == 0
    header = [l for l in (out / "lwp_report.csv").read_text().splitlines() if l.startswith("#")]
    assert "# budget=0.95" in header and "# seed=4" in header and "# harness=mean" in header


def test_env_seed_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("PRUNEKIT_SEED", "11")
    out = tmp_path / "o"
    assert main(["lwp", *SMALL_RUN, "--harness", "mean", "--candidates", "0.25",
                 "--budget", "0.9", "--multiple", "1", "--out", str(out)]) == 0
    assert "# seed=11" in (out / "lwp_report.csv").read_text()


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("bugdet=0.5\n")
    assert main(["lwp", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert error_of(capsys)["error"] == "config"


def run_twice(tmp_path, argv):
    texts = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main([*argv, "--out", str(out)]) == 0
        texts.append(out)
    return texts


def test_lwp_outputs_and_determinism(tmp_path):
    a, b = run_twice(tmp_path, ["lwp", *SMALL_RUN, "--candidates", "0.25,0.5", "--budget", "0.9",
                                "--delta-grid", "0,0.125", "--tolerance", "0.1", "--multiple", "1"])
    assert (a / "lwp_report.csv").read_bytes() == (b / "lwp_report.csv").read_bytes()
    assert (a / "lwp_winner.pkt").read_bytes() == (b / "lwp_winner.pkt").read_bytes()
    plan = json.loads((a / "lwp_plan.json").read_text())
    winner = checkpoint.load(a / "lwp_winner.pkt")
    assert [l.n_kernels for l in winner.layers] == plan["kept"]
    rows = [r for r in csv.reader(l for l in (a / "lwp_report.csv").open() if not l.startswith("#"))]
    assert rows[0] == ["stage", "index", "delta", "r", "kernels_per_layer", "weights_remained",
                       "drop", "selected"]
    assert sum(int(r[-1]) for r in rows[1:]) == 1


def test_go_outputs_and_determinism(tmp_path):
    a, b = run_twice(tmp_path, ["go", *SMALL_RUN, "--samples", "6", "--target-drop", "0.2",
                                "--surrogate-epochs", "500"])
    for name in ("go_pairs.csv", "go_trajectory.csv", "go_plan.json", "go_winner.pkt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    plan = json.loads((a / "go_plan.json").read_text())
    assert plan["target_drop"] == 0.2
    assert len(plan["kept"]) == 4 and plan["kept"][-1] == 1
    pairs = [l for l in (a / "go_pairs.csv").read_text().splitlines() if not l.startswith("#")]
    assert pairs[0] == "sample,p,r" and len(pairs) == 7
