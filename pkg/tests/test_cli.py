import subprocess
import sys

from riemnet.cli import main

CONFIG = """
task = mlp_classify
architecture.layers = 16, 8, 4
dataset = synthetic(4, 16, 64)
batch_size = 16
epochs = 2
"""


def test_train_success(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(CONFIG)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "metrics.csv").exists()
    assert (tmp_path / "out" / "checkpoint.txt").exists()
    assert capsys.readouterr().out.count("epoch") == 2


def test_seed_override_changes_run(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(CONFIG)
    main(["train", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["train", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "2"])
    assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "b" / "metrics.csv").read_bytes()


def test_config_error_exits_2(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("optimizer.learning_rat = 0.1\n")
    assert main(["train", "--config", str(cfg)]) == 2
    assert "learning_rat" in capsys.readouterr().err


def test_bad_csv_exits_2(tmp_path):
    data = tmp_path / "d.csv"
    data.write_text("1,2,0\n3,4,9\n")
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"architecture.layers = 2, 2\ndataset = {data}\nbatch_size = 2\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_runtime_error_exits_1(tmp_path, capsys):
    # width mismatch between the CSV and the first layer only shows up at run time
    data = tmp_path / "d.csv"
    data.write_text("1,2,3,0\n3,4,5,1\n")
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"architecture.layers = 2, 2\ndataset = {data}\nbatch_size = 2\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "error" in capsys.readouterr().err


def test_check_suite(capsys):
    assert main(["check", "--suite", "retraction"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)


def test_module_entry_point(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("task = regression\n")
    proc = subprocess.run([sys.executable, "-m", "riemnet", "train", "--config", str(cfg)],
                          capture_output=True, text=True)
    assert proc.returncode == 2
