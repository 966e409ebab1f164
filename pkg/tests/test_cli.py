import json

import numpy as np
import pytest

from actions.images import load_pgm, render_pgm
from conftest import TOY_LABEL0, make_tie_model
from executer import exit_code_for
from errors import CnfFormatError, ManifestMismatchError, ProtocolError, UsageError
from main import main
from model import forward_folded, load_model, save_model
from settings import DEFAULT_CONFIG
from test_train import write_idx
from train import MNIST_FILES


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("BNN_INVERT_CONFIG", str(tmp_path / "config.json"))
    return tmp_path


@pytest.fixture
def encoded(workdir, toy_model):
    save_model(toy_model, workdir / "toy.json")
    code = main(["encode", "--model", "toy.json", "--out-cnf", "toy.cnf", "--out-manifest", "toy.manifest.json"])
    assert code == 0
    return workdir


def query_args(*extra):
    return ["--cnf", "toy.cnf", "--manifest", "toy.manifest.json", *extra]


def last_json(capsys):
    lines = [line for line in capsys.readouterr().out.splitlines() if line.startswith("{")]
    return json.loads(lines[-1])


def test_config_is_written_with_defaults(encoded):
    config = json.loads((encoded / "config.json").read_text())
    assert config == json.loads(json.dumps(DEFAULT_CONFIG))


def test_existing_config_values_survive(workdir, toy_model):
    (workdir / "config.json").write_text(json.dumps({"sample": {"samples": 7}}))
    save_model(toy_model, workdir / "toy.json")
    main(["encode", "--model", "toy.json"])
    config = json.loads((workdir / "config.json").read_text())
    assert config["sample"]["samples"] == 7
    assert config["sample"]["distinct"] is True


def test_encode_prints_stats(workdir, toy_model, capsys):
    save_model(toy_model, workdir / "toy.json")
    assert main(["encode", "--model", "toy.json", "--out-cnf", "a.cnf", "--out-manifest", "a.json"]) == 0
    out = capsys.readouterr().out
    assert "num_vars=" in out and "num_clauses=" in out
    assert (workdir / "a.cnf").read_text().startswith("p cnf ")


def test_infer_from_bit_string(encoded, capsys):
    assert main(["infer", *query_args("--input", "1011")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert "label=0" in lines  # (1, -1, 1, 1)
    assert {line.split("=")[0] for line in lines if "=" in line and not line.startswith("{")} >= {
        "conflicts", "decisions", "propagations", "restarts", "learned"}
    assert json.loads(lines[-1])["solver_stats"]["conflicts"] >= 0


def test_infer_from_vector_and_pgm(encoded, toy_model, capsys):
    assert main(["infer", *query_args("--input", "-1,-1,-1,-1")]) == 0
    assert last_json(capsys)["label"] == 1
    render_pgm((1, -1, 1, -1), 2, 2, encoded / "x.pgm")
    assert main(["infer", *query_args("--input", "x.pgm")]) == 0
    assert last_json(capsys)["label"] == 0


def test_infer_bad_input(encoded):
    assert main(["infer", *query_args("--input", "101")]) == 2
    assert main(["infer", *query_args("--input", "hello")]) == 2


def test_invert_writes_images_and_report(encoded, toy_model, capsys):
    code = main(["invert", *query_args("--model", "toy.json", "--label", "1", "--samples", "5",
                                        "--seed", "3", "--out-dir", "out")])
    assert code == 0
    out = encoded / "out"
    samples = sorted(out.glob("sample_*.pgm"))
    assert len(samples) == 5
    assert (out / "grid.pgm").exists()
    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "Satisfiable"
    assert report["all_verified"] is True
    assert report["distinct_count"] == 5
    assert set(report["solver_stats"]) == {"conflicts", "decisions", "propagations", "restarts", "learned"}
    assert "status=Satisfiable" in capsys.readouterr().out.splitlines()
    for path in samples:
        x, width, height = load_pgm(path)
        assert (width, height) == (2, 2)
        assert forward_folded(toy_model, x)[0] == 1


def test_invert_exhausts_label(encoded):
    assert main(["invert", *query_args("--label", "0", "--samples", "10", "--out-dir", "out")]) == 0
    report = json.loads((encoded / "out" / "report.json").read_text())
    assert {tuple(x) for x in report["inputs"]} == TOY_LABEL0
    assert report["exhausted"] is True


def test_invert_unreachable_label_exit_code(workdir):
    save_model(make_tie_model(), workdir / "tie.json")
    main(["encode", "--model", "tie.json", "--out-cnf", "tie.cnf", "--out-manifest", "tie.manifest.json"])
    code = main(["invert", "--cnf", "tie.cnf", "--manifest", "tie.manifest.json", "--label", "1",
                 "--out-dir", "out"])
    assert code == 10
    assert json.loads((workdir / "out" / "report.json").read_text())["status"] == "UnsatLabel"


def test_invert_label_out_of_range(encoded):
    assert main(["invert", *query_args("--label", "2", "--out-dir", "out")]) == 2


def test_invert_novelty_needs_dataset(encoded):
    rng = np.random.default_rng(0)
    names = MNIST_FILES["train"]
    write_idx(encoded, rng.integers(0, 256, size=(12, 28, 28)), np.arange(12) % 10, names=names)
    assert main(["invert", *query_args("--label", "1", "--samples", "2", "--data-dir", ".",
                                        "--out-dir", "out")]) == 0
    report = json.loads((encoded / "out" / "report.json").read_text())
    assert len(report["min_train_hamming"]) == 2


def test_manifest_mismatch(encoded):
    with open(encoded / "toy.cnf", "a") as f:
        f.write("c edited\n")
    assert main(["infer", *query_args("--input", "1111")]) == 11


def test_enumerate(encoded):
    assert main(["enumerate", *query_args("--label", "0", "--out-dir", "pre")]) == 0
    report = json.loads((encoded / "pre" / "report.json").read_text())
    assert report["count"] == 3
    assert report["truncated"] is False
    assert len(list((encoded / "pre").glob("preimage_*.pgm"))) == 3


def test_enumerate_with_cap(encoded, capsys):
    assert main(["enumerate", *query_args("--label", "1", "--cap", "2")]) == 0
    result = last_json(capsys)
    assert result["count"] == 2 and result["truncated"] is True


def test_verify_exhaustive(encoded):
    code = main(["verify", "--model", "toy.json", *query_args("--mode", "exhaustive", "--out", "v.json")])
    assert code == 0
    report = json.loads((encoded / "v.json").read_text())
    assert report["pass"] is True
    assert report["total_checked"] == 32  # inference over 16 inputs plus both preimages


def test_verify_encodes_in_memory(encoded):
    assert main(["verify", "--model", "toy.json", "--mode", "random", "--samples", "5"]) == 0


def test_verify_needs_both_files(encoded):
    assert main(["verify", "--model", "toy.json", "--cnf", "toy.cnf"]) == 2


def test_train_end_to_end(workdir):
    rng = np.random.default_rng(1)
    for split in ("train", "test"):
        write_idx(workdir, rng.integers(0, 256, size=(30, 28, 28)), np.arange(30) % 10, names=MNIST_FILES[split])
    code = main(["train", "--data-dir", ".", "--arch", "4,3,10", "--image-size", "2x2",
                 "--epochs", "1", "--seed", "2", "--out", "m.json"])
    assert code == 0
    model = load_model(workdir / "m.json")
    assert model.arch == [4, 3, 10]
    assert model.image_shape == (2, 2)


def test_train_bad_arch(workdir):
    assert main(["train", "--data-dir", ".", "--arch", "4,x,10"]) == 2
    assert main(["train", "--data-dir", ".", "--arch", "5,3,10"]) == 2


def test_train_missing_data(workdir):
    assert main(["train", "--data-dir", "nowhere", "--arch", "4,3,10"]) == 3


def test_missing_model_file(workdir):
    assert main(["encode", "--model", "missing.json"]) == 3


def test_malformed_cnf(encoded):
    (encoded / "bad.cnf").write_text("garbage\n")
    manifest = json.loads((encoded / "toy.manifest.json").read_text())
    manifest["cnf_sha256"] = None
    (encoded / "bad.json").write_text(json.dumps(manifest))
    assert main(["infer", "--cnf", "bad.cnf", "--manifest", "bad.json", "--input", "1111"]) == 3


def test_usage_errors(workdir):
    assert main([]) == 2
    assert main(["nonsense"]) == 2
    assert main(["infer"]) == 2


@pytest.mark.parametrize("error, code", [
    (UsageError("x"), 2),
    (FileNotFoundError("x"), 3),
    (CnfFormatError("x", 3), 3),
    (ProtocolError("x"), 4),
    (ManifestMismatchError("x"), 11),
    (RuntimeError("x"), 1),
])
def test_exit_codes(error, code):
    assert exit_code_for(error) == code
