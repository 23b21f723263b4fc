import csv
import json

import pytest

from jacobihmc.cli import main
from jacobihmc.registration import gaussian_blobs, write_pgm


def run(args, out):
    return main(list(args) + ["--out", str(out)])


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_sample_is_byte_identical(tmp_path):
    args = ["sample", "--model", "gaussian", "--dim", "1", "--T", "1000", "--seed", "7"]
    assert run(args, tmp_path) == 0
    first = {name: (tmp_path / name).read_bytes() for name in ("chain.csv", "summary.json")}
    assert run(args, tmp_path) == 0
    for name, data in first.items():
        assert (tmp_path / name).read_bytes() == data
    rows = read_csv(tmp_path / "chain.csv")
    assert len(rows) == 1000 and set(rows[0]) == {"step", "accepted", "h", "q0"}
    meta = json.loads((tmp_path / "summary.json").read_text())
    assert meta["config"]["chain"]["T"] == 1000 and meta["config"]["seed"] == 7


def test_floats_have_17_significant_digits(tmp_path):
    assert run(["sample", "--dim", "2", "--T", "5"], tmp_path) == 0
    value = read_csv(tmp_path / "chain.csv")[1]["h"]
    assert float("%.17g" % float(value)) == float(value)
    assert len(value.replace("-", "").replace(".", "").split("e")[0].lstrip("0")) >= 15


def test_missing_model_file(tmp_path, capsys):
    assert run(["sample", "--model", str(tmp_path / "nope.json")], tmp_path) == 2
    assert "not found" in capsys.readouterr().err


def test_zero_length_chain_rejected(tmp_path, capsys):
    assert run(["sample", "--T", "0"], tmp_path) == 2
    assert "chain.T" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"chain": {"T": 10, "tt": 3}}))
    assert run(["sample", "--config", str(cfg)], tmp_path) == 2
    assert "chain.tt" in capsys.readouterr().err


def test_flags_override_json(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"seed": 3, "model": {"dim": 4}, "chain": {"T": 50}}))
    assert run(["sample", "--config", str(cfg), "--T", "20"], tmp_path) == 0
    meta = json.loads((tmp_path / "summary.json").read_text())["config"]
    assert (meta["seed"], meta["model"]["dim"], meta["chain"]["T"]) == (3, 4, 20)


def test_model_file_with_dense_precision(tmp_path):
    model = tmp_path / "model.json"
    model.write_text(json.dumps({"kind": "student_t", "nu": 5, "dim": 2, "precision": [[2, 0.5], [0.5, 1]]}))
    assert run(["sample", "--model", str(model), "--T", "30"], tmp_path) == 0
    model.write_text(json.dumps({"kind": "gaussian", "dim": 2, "precision": [[1, 2], [0, 1]]}))
    assert run(["sample", "--model", str(model), "--T", "30"], tmp_path) == 2


def test_threads_env_default(tmp_path, monkeypatch):
    monkeypatch.setenv("JHMC_THREADS", "3")
    assert run(["curvature", "--dim", "5", "--T", "20", "--frames", "2"], tmp_path) == 0
    assert json.loads((tmp_path / "histogram.json").read_text())["config"]["threads"] == 3
    monkeypatch.setenv("JHMC_THREADS", "x")
    assert run(["curvature", "--dim", "5", "--T", "20"], tmp_path) == 2


def test_curvature_identity_d100(tmp_path):
    args = ["curvature", "--dim", "100", "--T", "10000", "--frames", "100", "--threads", "4"]
    assert run(args, tmp_path) == 0
    summary = json.loads((tmp_path / "histogram.json").read_text())["results"]
    assert 0.5e-4 <= summary["mean"] <= 2e-4
    assert sum(summary["histogram"]["counts"]) == 10000 * 100


def test_curvature_reproducible_and_thread_independent(tmp_path):
    base = ["curvature", "--dim", "8", "--T", "300", "--frames", "4", "--seed", "5"]
    assert run(base + ["--threads", "1"], tmp_path / "a") == 0
    assert run(base + ["--threads", "3"], tmp_path / "b") == 0
    assert (tmp_path / "a" / "scan.csv").read_bytes() == (tmp_path / "b" / "scan.csv").read_bytes()
    rows = read_csv(tmp_path / "a" / "scan.csv")
    assert len(rows) == 1200 and list(rows[0]) == ["step", "frame", "h", "sec"]


def test_curvature_zero_frames(tmp_path):
    assert run(["curvature", "--dim", "5", "--T", "10", "--frames", "0"], tmp_path) == 2


def test_bound_sweep(tmp_path, capsys):
    args = ["bound", "--kappa", "0.0048", "--sigma2", "100", "--local-dim", "100", "--granularity", "20",
            "--lipschitz", "0.2", "--r", "0.25", "--per-decade", "2"]
    assert run(args, tmp_path) == 0
    rows = read_csv(tmp_path / "bound.csv")
    Ts = [int(r["T"]) for r in rows]
    probs = [float(r["bound"]) for r in rows]
    assert Ts[0] == 1000 and Ts[-1] == 10**8
    assert all(b <= a for a, b in zip(probs, probs[1:]))
    assert probs[-1] <= 1e-3
    assert all(r["regime"] in ("gaussian", "exponential") for r in rows)
    summary = json.loads((tmp_path / "summary.json").read_text())["results"]
    assert "exp(-c sqrt(d))" in summary["exceptional_set"]
    assert "exp(-c sqrt(d))" in capsys.readouterr().out


def test_bound_from_gaussian_model(tmp_path):
    assert run(["bound", "--structure", "exp_sq_decay", "--dim", "100"], tmp_path) == 0
    ing = json.loads((tmp_path / "summary.json").read_text())["results"]["ingredients"]
    assert ing["kappa"] == pytest.approx(0.0048, rel=0.05)
    assert ing["granularity"] == 20.0


def test_bound_nonpositive_curvature(tmp_path, capsys):
    args = ["bound", "--kappa", "-0.1", "--sigma2", "1", "--local-dim", "1", "--granularity", "1",
            "--lipschitz", "1"]
    assert run(args, tmp_path) == 2
    assert "bound inapplicable: nonpositive curvature" in capsys.readouterr().err


def test_register_synthetic(tmp_path):
    args = ["register", "--synthetic", "--iters", "20", "--posterior-T", "30", "--seed", "2"]
    assert run(args, tmp_path / "a") == 0
    ssd = [float(r["ssd"]) for r in read_csv(tmp_path / "a" / "ssd.csv")]
    assert len(ssd) == 21
    assert all(b <= a + 1e-9 * ssd[0] for a, b in zip(ssd[5:], ssd[6:]))
    assert (tmp_path / "a" / "warped.pgm").read_bytes().startswith(b"P5\n64 64\n255\n")
    assert len(read_csv(tmp_path / "a" / "field.csv")) == 84
    assert run(args, tmp_path / "b") == 0
    assert (tmp_path / "a" / "chain.csv").read_bytes() == (tmp_path / "b" / "chain.csv").read_bytes()


def test_register_from_files(tmp_path):
    write_pgm(tmp_path / "f.pgm", gaussian_blobs(40, 30, [(20, 15)], 5.0))
    write_pgm(tmp_path / "m.pgm", gaussian_blobs(40, 30, [(22, 15)], 5.0))
    args = ["register", "--fixed", str(tmp_path / "f.pgm"), "--moving", str(tmp_path / "m.pgm"),
            "--iters", "5", "--grid", "8", "6"]
    assert run(args, tmp_path / "o") == 0


def test_register_mismatched_sizes(tmp_path, capsys):
    write_pgm(tmp_path / "f.pgm", gaussian_blobs(40, 30, [(20, 15)], 5.0))
    write_pgm(tmp_path / "m.pgm", gaussian_blobs(30, 40, [(15, 20)], 5.0))
    args = ["register", "--fixed", str(tmp_path / "f.pgm"), "--moving", str(tmp_path / "m.pgm")]
    assert run(args, tmp_path / "o") == 2
    assert "sizes differ" in capsys.readouterr().err


def test_register_needs_images(tmp_path):
    assert run(["register"], tmp_path) == 2


def test_help_documents_columns(capsys):
    assert main(["curvature", "--help"]) == 0
    assert "sec " in capsys.readouterr().out


def test_bad_subcommand():
    assert main(["plot"]) == 2
