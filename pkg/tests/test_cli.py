import json
import os
import subprocess
import sys

import pytest

from fedcvr.cli import main, read_config_file

SMALL = ["--samples", "120", "--dim", "5", "--clients", "4", "--participate", "2", "--rounds", "20",
         "--eval-every", "5", "--reg-alpha", "0.1"]


def test_check_quadratic_example(capsys):
    code = main(["check", "--problem", "quadratic", "--clients", "1", "--participate", "1",
                 "--compressor", "identity", "--smoothness", "1", "--dim", "3"])
    out = capsys.readouterr().out
    assert code == 0
    assert "eta=0.2 " in out and "alpha=1 " in out and "omega=0" in out


def test_check_does_not_write(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(["check", *SMALL, "--algo", "frecon"]) == 0
    assert "lambda=0.5" in capsys.readouterr().out
    assert os.listdir(tmp_path) == []


def test_run_same_seed_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["run", *SMALL, "--seed", "7", "--out", str(out)]) == 0
    name = "cofig_natural_uniform_seed7.csv"
    assert (a / name).read_bytes() == (b / name).read_bytes()
    manifest = json.loads((a / "cofig_natural_uniform_seed7.manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["csv"] == name
    assert {"eta", "alpha", "L", "omega"} <= set(manifest["derived"])


def test_replay_from_manifest(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", *SMALL, "--compressor", "randk:2", "--batch", "3", "--out", str(a)]) == 0
    m = a / "cofig_randk2_uniform_seed0.manifest.json"
    assert main(["run", "--from-manifest", str(m), "--out", str(b)]) == 0
    name = "cofig_randk2_uniform_seed0.csv"
    assert (a / name).read_bytes() == (b / name).read_bytes()


@pytest.mark.parametrize(
    "argv",
    [["check", "--clients", "10", "--participate", "11"],
     ["run", "--no-such-flag"],
     ["run", "--dataset", "/nonexistent/data.svm"],
     ["check", "--compressor", "topk:3"],
     ["check", "--eta", "fast"],
     ["frobnicate"]],
)
def test_errors_exit_nonzero(argv, tmp_path, capsys):
    assert main(argv + (["--out", str(tmp_path)] if argv[0] == "run" else [])) == 2
    assert "fedcvr: error:" in capsys.readouterr().err


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("# comment\nalgo = frecon\nclients=4\nparticipate=2\nreg-alpha=0.1\nsamples=120\ndim=5\n")
    assert read_config_file(str(cfg))["algo"] == "frecon"
    assert main(["check", "--config", str(cfg), "--participate", "4"]) == 0
    assert "lambda=1 " in capsys.readouterr().out
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour=blue\n")
    assert main(["check", "--config", str(bad)]) == 2


def test_sweep_writes_cells_and_summary(tmp_path, capsys):
    out = tmp_path / "sweep"
    assert main(["sweep", *SMALL, "--compressors", "natural,randk:2", "--seeds", "0,1", "--eps", "0.5",
                 "--out", str(out)]) == 0
    lines = (out / "summary.csv").read_text().splitlines()
    assert lines[0].startswith("cell,algo,compressor,partition,seed,eps,reached,t_hit,bits_to_eps")
    assert len(lines) == 1 + 2 * 2 * 2
    assert {l.split(",")[1] for l in lines[1:]} == {"cofig", "frecon"}
    assert len(list(out.glob("*.csv"))) == 9


def test_omega_audit(capsys):
    assert main(["omega", "--compressor", "natural", "--dim", "10", "--trials", "20000"]) == 0
    out = capsys.readouterr().out
    assert "omega=0.125" in out and "probe 4" in out


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "fedcvr", "omega", "--compressor", "randk:2", "--dim", "4",
                          "--trials", "2000"], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "omega=1" in res.stdout
