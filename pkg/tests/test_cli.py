import json

import numpy as np
import pytest

from deepsl import checkpoint
from deepsl.model import DslModel
from deepsl.cli import EXIT_CONFIG, EXIT_IO, main

TINY = """
[model]
d = 3
hidden = [6]
[train]
epochs = 2
knots = 40
batch_size = 10
lr = 0.01
"""


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["--seed", "1", "gen-moons", "--m", "30", "--out", str(root / "train.csv")]) == 0
    assert main(["--seed", "2", "gen-moons", "--m", "20", "--out", str(root / "val.csv")]) == 0
    (root / "run.toml").write_text(TINY, encoding="utf-8")
    code = main(["train", "--config", str(root / "run.toml"), "--train", str(root / "train.csv"),
                 "--val", str(root / "val.csv"), "--out", str(root / "model.ckpt")])
    assert code == 0
    return root


def test_train_outputs(trained):
    ckpt = checkpoint.load(trained / "model.ckpt")
    assert ckpt.model.d == 3 and ckpt.classes == ["0", "1"]
    lines = (trained / "model.history.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_accuracy,skipped" and len(lines) == 3


def test_eval_and_predict(trained, capsys):
    assert main(["eval", "--model", str(trained / "model.ckpt"), "--data", str(trained / "val.csv")]) == 0
    report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert 0.0 <= report["accuracy"] <= 1.0 and report["failures"] == 0
    out = trained / "pred.csv"
    assert main(["predict", "--model", str(trained / "model.ckpt"), "--data", str(trained / "val.csv"),
                 "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "logit_0,logit_1,predicted" and len(rows) == 21


def test_basis(trained):
    out = trained / "basis.csv"
    assert main(["basis", "--model", str(trained / "model.ckpt"), "--data", str(trained / "val.csv"),
                 "--index", "3", "--grid", "11", "--out", str(out)]) == 0
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    assert data.shape == (11, 4)
    assert np.allclose(data[[0, -1], 1:], 0.0, atol=1e-6)
    assert main(["basis", "--model", str(trained / "model.ckpt"), "--data", str(trained / "val.csv"),
                 "--index", "99", "--out", str(out)]) == EXIT_IO


def test_error_exit_codes(tmp_path, trained):
    bad = tmp_path / "bad.toml"
    bad.write_text("[train]\nmystery = 1\n", encoding="utf-8")
    args = ["--train", str(trained / "train.csv"), "--val", str(trained / "val.csv"), "--out", str(tmp_path / "m")]
    assert main(["train", "--config", str(bad), *args]) == EXIT_CONFIG
    assert main(["train", "--config", str(tmp_path / "missing.toml"), *args]) == EXIT_IO
    assert main(["eval", "--model", str(tmp_path / "missing.ckpt"), "--data", str(trained / "val.csv")]) == EXIT_IO
    assert main(["gen-moons", "--m", "5", "--out", str(tmp_path / "x.csv")]) == EXIT_CONFIG


def test_selfcheck_passes(capsys):
    assert main(["selfcheck"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_basis_of_constant_model(tmp_path):
    model = DslModel.constant(2, 2, 3, inv_p=2.0, q=1.0, w=1.5, speed=0.5)
    checkpoint.save(tmp_path / "c.ckpt", checkpoint.Checkpoint(checkpoint.FORMAT_VERSION, model,
                                                               {"knots": 400, "tol_t": 1e-10, "tol_lambda": 1e-10,
                                                                "rtol": 1e-10, "atol": 1e-10}))
    (tmp_path / "x.csv").write_text("x1,x2\n0.5,0.5\n", encoding="utf-8")
    out = tmp_path / "b.csv"
    assert main(["basis", "--model", str(tmp_path / "c.ckpt"), "--data", str(tmp_path / "x.csv"),
                 "--grid", "201", "--out", str(out)]) == 0
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    assert data.shape[1] == 4
    t = data[:, 0]
    length = t[-1] - t[0]
    assert length == pytest.approx(2.0, rel=1e-8)
    for n in (1, 2, 3):
        exact = np.sin(n * np.pi * (t - t[0]) / length) * length / (n * np.pi)
        assert np.max(np.abs(data[:, n] - exact)) < 1e-4
        assert max(abs(data[0, n]), abs(data[-1, n])) <= 1e-4 * np.max(np.abs(data[:, n]))
