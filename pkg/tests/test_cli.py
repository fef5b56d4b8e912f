import hashlib
import json
import math
import shutil

import numpy as np
import pytest

from spdelab.cli import main, read_samples

CONFIG = """
[operator]
kind = "heat"
dim = 1

[measure]
kind = "white"

[grid]
length = 4.0
modes = 32
horizon = 0.25
steps = 16

[coefficients]
sigma = { kind = "sine", a0 = 1.0, a1 = 0.5 }
b = { kind = "cosine", a0 = 0.0, a1 = 0.3 }

[run]
samples = 10000
seed = 1
"""


@pytest.fixture(scope="module")
def cfg_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "exp.toml"
    p.write_text(CONFIG)
    return p


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, cfg_path):
    out = tmp_path_factory.mktemp("runs") / "r1"
    assert main(["simulate", "--config", str(cfg_path), "--out", str(out)]) == 0
    return out


def test_check_measure(capsys):
    assert main(["check-measure", "--measure", "white"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["value"] == pytest.approx(math.pi, rel=1e-8)
    assert main(["check-measure", "--measure", "white", "--dim", "2"]) == 2


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["phi", "--operator", "heat"])
    assert exc.value.code == 1
    assert main(["simulate"]) == 1
    assert main(["simulate", "--config", "/nonexistent.toml", "--out", "x"]) == 1


def test_phi_zero_horizon(capsys):
    assert main(["phi", "--operator", "heat", "--measure", "white", "--t-max", "0"]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if not l.startswith("#")]
    assert lines[0].startswith("t,phi")
    row = lines[1].split(",")
    assert float(row[0]) == 0.0 and float(row[1]) == 0.0 and float(row[2]) == 0.0


def test_phi_table_and_gamma(capsys):
    assert main(["phi", "--operator", "heat", "--measure", "white", "--t-max", "1",
                 "--points", "4"]) == 0
    rows = [l.split(",") for l in capsys.readouterr().out.splitlines()
            if l and not l.startswith("#")][1:]
    assert len(rows) == 5
    # heat, white, d = 1: Phi(t) = sqrt(t / (2 pi))... checked through the library
    from spdelab.fundamental import FundamentalSolution
    from spdelab.phi import phi
    from spdelab.spectral import SpectralMeasure
    assert float(rows[-1][1]) == pytest.approx(
        phi(SpectralMeasure.white(1), FundamentalSolution("heat", 1), 1.0), rel=1e-10)
    assert main(["phi", "--operator", "wave", "--measure", "white", "--t-max", "1",
                 "--gamma", "3"]) == 0
    assert main(["phi", "--operator", "heat", "--measure", "riesz", "--beta", "0.5",
                 "--t-max", "1", "--gamma", "0.3"]) == 2


def test_simulate_outputs(run_dir):
    files = sorted(p.name for p in run_dir.iterdir())
    assert files == ["manifest.json", "samples.csv"]
    text = (run_dir / "samples.csv").read_text()
    header = text.splitlines()[0]
    man = json.loads((run_dir / "manifest.json").read_text())
    assert header == f"# tool=spdelab 0.1.0 config_hash={man['config_hash']} seed=1"
    assert text.splitlines()[1] == "u"
    assert man["files"]["samples.csv"] == hashlib.sha256(text.encode()).hexdigest()
    x = read_samples(run_dir / "samples.csv")
    assert x.size == man["samples"] == 10_000
    assert man["phi_truncated"] <= man["phi"]
    assert man["c3"] == pytest.approx(0.3)
    assert man["mean"] == pytest.approx(float(x.mean()))


def test_threads_byte_identical(tmp_path, cfg_path, run_dir):
    out = tmp_path / "t3"
    assert main(["simulate", "--config", str(cfg_path), "--out", str(out), "--threads", "3"]) == 0
    assert (out / "samples.csv").read_bytes() == (run_dir / "samples.csv").read_bytes()


def test_density_and_verify(tmp_path, run_dir, capsys):
    out = tmp_path / "dens"
    assert main(["density", "--run", str(run_dir), "--out", str(out)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["status"] == "PASS"
    assert "tail_fit" in rep
    assert (out / "density.csv").read_text().splitlines()[1] == "z,p_hat,ci,bound"
    assert main(["verify-upper-bound", "--run", str(run_dir)]) == 0


def test_verify_cauchy_fails(tmp_path):
    x = np.random.default_rng(0).standard_cauchy(20_000)
    f = tmp_path / "cauchy.csv"
    f.write_text("u\n" + "\n".join(repr(float(v)) for v in x) + "\n")
    assert main(["verify-upper-bound", "--input", str(f), "--phi", "1.0"]) == 2
    assert main(["density", "--input", str(f)]) == 1


def test_point_mass_exit(tmp_path):
    f = tmp_path / "const.csv"
    f.write_text("u\n" + "0.5\n" * 10_000)
    assert main(["density", "--input", str(f), "--phi", "1.0"]) == 2


def test_report_pools_runs(tmp_path, cfg_path, run_dir, capsys):
    root = tmp_path / "batch"
    shutil.copytree(run_dir, root / "a")
    assert main(["simulate", "--config", str(cfg_path), "--out", str(root / "b"),
                 "--seed", "2"]) == 0
    capsys.readouterr()
    assert main(["report", str(root)]) == 0
    assert json.loads(capsys.readouterr().out)["pooled_n"] == 20_000
    rep = json.loads((root / "report" / "report.json").read_text())
    assert rep["pooled"]["seeds"] == [1, 2]
    assert rep["gamma_certificate"]["valid"] if "valid" in rep["gamma_certificate"] else True
    for name in ("density_vs_bound.csv", "phi_vs_t.csv", "manifest.json"):
        assert (root / "report" / name).is_file()
    assert not list((root / "report").glob("*.tmp"))


def test_report_refuses_mixed(tmp_path, cfg_path, run_dir):
    root = tmp_path / "mixed"
    shutil.copytree(run_dir, root / "a")
    other = tmp_path / "other.toml"
    other.write_text(CONFIG.replace("a1 = 0.3", "a1 = 0.2"))
    assert main(["simulate", "--config", str(other), "--out", str(root / "b"),
                 "--seed", "2"]) == 0
    assert main(["report", str(root)]) == 1


def test_report_refuses_tampered(tmp_path, run_dir):
    root = tmp_path / "tampered"
    shutil.copytree(run_dir, root / "a")
    with open(root / "a" / "samples.csv", "a") as fh:
        fh.write("0.0\n")
    assert main(["report", str(root)]) == 1


def test_inadmissible_config_exit(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text(CONFIG.replace("dim = 1", "dim = 2"))
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_malliavin_cli(tmp_path, capsys):
    p = tmp_path / "m.toml"
    text = CONFIG.replace("samples = 10000", "samples = 4") + (
        "\n[malliavin]\ndeltas = [0.015625, 0.03125, 0.0625, 0.125]\n")
    p.write_text(text)
    code = main(["malliavin-scaling", "--config", str(p), "--out", str(tmp_path / "m")])
    summary = json.loads(capsys.readouterr().out)
    assert code == (0 if summary["status"] == "PASS" else 2)
    for name in ("scaling.csv", "inverse_moment.csv", "scaling.json", "manifest.json"):
        assert (tmp_path / "m" / name).is_file()
