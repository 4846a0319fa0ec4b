import json

import pytest

from dualforge import cli, metrics


@pytest.fixture
def data_file(tmp_path):
    path = tmp_path / "d.libsvm"
    assert cli.main(["gen", str(path), "--n", "80", "--d", "6", "--density", "0.5", "--seed", "3"]) == 0
    return path


def _strip_time(path):
    return [{k: v for k, v in r.items() if k != "time_ms"} for r in metrics.read_metrics(path)]


def test_gen_and_inspect(data_file, capsys):
    assert cli.main(["inspect", str(data_file)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].split() == ["dataset", "n", "d", "nnz", "sparsity", "R"]
    fields = out[1].split()
    assert fields[:3] == ["d.libsvm", "80", "6"]


def test_train_outputs_and_config_rerun(data_file, tmp_path, capsys):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    args = ["train", str(data_file), "--lambda", "1e-2", "--m", "3", "--sp", "0.5", "--seed", "2",
            "--target-gap", "1e-6", "--max-rounds", "50"]
    assert cli.main(args + ["--out-dir", str(out1)]) == 0
    assert "kappa = 0.0" in capsys.readouterr().out
    manifest = json.loads((out1 / "manifest.json").read_text())
    assert manifest["params"]["lam"] == 1e-2 and manifest["params"]["m"] == 3
    assert manifest["resolved"]["n"] == 80
    with open(out1 / "metrics.csv") as fh:
        assert fh.readline().strip() == metrics.HEADER
    assert cli.main(["train", "--config", str(out1 / "manifest.json"), "--out-dir", str(out2)]) == 0
    assert _strip_time(out1 / "metrics.csv") == _strip_time(out2 / "metrics.csv")
    ck = metrics.load_checkpoint(out1 / "model.json")
    assert ck["n"] == 80 and ck["m"] == 3


def test_acc_train_prints_auto_kappa(data_file, tmp_path, capsys):
    from dualforge import accel, dataio
    ds = dataio.load_libsvm(str(data_file))
    expected = accel.default_kappa(4, ds.stats.R, 1.0, ds.n, 1e-4)
    out = tmp_path / "acc"
    assert cli.main(["train", str(data_file), "--algo", "acc-dadm", "--kappa", "auto", "--lambda", "1e-4", "--m", "4",
                     "--target-gap", "1e-3", "--max-rounds", "400", "--format", "jsonl", "--out-dir", str(out)]) == 0
    assert f"kappa = {expected!r}" in capsys.readouterr().out
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["resolved"]["kappa"] == expected
    assert manifest["result"]["comms"] <= 400
    rows = metrics.read_metrics(out / "metrics.jsonl")
    assert rows[-1]["kappa"] == expected


def test_hinge_acc_is_smoothed(data_file, tmp_path):
    out = tmp_path / "h"
    assert cli.main(["train", str(data_file), "--algo", "acc-dadm", "--loss", "hinge", "--lambda", "1e-2",
                     "--target-gap", "1e-2", "--max-rounds", "200", "--out-dir", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["resolved"]["smoothing_gamma"] == 1e-2


def test_plot_and_verify(data_file, tmp_path, capsys):
    out = tmp_path / "r"
    assert cli.main(["train", str(data_file), "--lambda", "1e-2", "--max-rounds", "30", "--out-dir", str(out)]) == 0
    svg = tmp_path / "p.svg"
    assert cli.main(["plot", str(out / "metrics.csv"), "--out", str(svg)]) == 0
    first = svg.read_text()
    assert first.startswith("<svg") and first.count("<polyline") == 1
    assert cli.main(["plot", str(out / "metrics.csv"), "--out", str(svg)]) == 0
    assert svg.read_text() == first
    assert cli.main(["verify", str(data_file), "--lambda", "1e-2", "--model", str(out / "model.json")]) == 0
    text = capsys.readouterr().out
    assert "reference: P(w*)" in text and "model: P(w)" in text


@pytest.mark.parametrize("argv", [
    ["train", "--lambda", "-1", "x"],
    ["train", "--m", "0", "x"],
    ["train", "--bogus"],
    ["plot"],
])
def test_bad_flags_exit_2(argv):
    with pytest.raises(SystemExit) as err:
        cli.main(argv)
    assert err.value.code == 2


def test_missing_dataset_is_usage_error(tmp_path, capsys):
    assert cli.main(["train", str(tmp_path / "nope.libsvm")]) == 2
    assert "dataset not found" in capsys.readouterr().err


def test_malformed_dataset_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.libsvm"
    bad.write_text("1 3:abc\n")
    assert cli.main(["inspect", str(bad)]) == 1
    assert "LibSVMFormatError" in capsys.readouterr().err


def test_plot_schema_error(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    assert cli.main(["plot", str(p), "--out", str(tmp_path / "o.svg")]) == 1
