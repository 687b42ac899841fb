import numpy as np
import pytest

from deepsl import checkpoint, dataio
from deepsl.config import parse_config
from deepsl.errors import ConfigError
from deepsl.learner import TrainConfig
from deepsl.model import DslModel


@pytest.mark.parametrize("kwargs", [dict(), dict(learn_v=True, head_bias=False), dict(ablation=True)])
def test_checkpoint_roundtrip(tmp_path, kwargs):
    model = DslModel.create(3, 4, 5, hidden=(6, 4), seed=7, **kwargs)
    ckpt = checkpoint.Checkpoint(checkpoint.FORMAT_VERSION, model, TrainConfig(d=5).to_dict(),
                                 {"mins": [0, 0, 0], "maxs": [1, 1, 1]}, ["a", "b", "c", "d"], "y")
    path = tmp_path / "m.ckpt"
    checkpoint.save(path, ckpt)
    back = checkpoint.load(path)
    assert np.array_equal(back.model.flat(), model.flat())
    assert back.classes == ckpt.classes and back.label_column == "y"
    assert back.model.ablation == model.ablation and (back.model.v_net is None) == (model.v_net is None)
    assert checkpoint.to_bytes(back) == checkpoint.to_bytes(ckpt)


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValueError):
        checkpoint.from_bytes(b"not a checkpoint at all")
    data = bytearray(checkpoint.to_bytes(checkpoint.Checkpoint(1, DslModel.create(2, 2, 2, hidden=(3,)))))
    with pytest.raises(ValueError):
        checkpoint.from_bytes(bytes(data[:-8]))


def test_config_parsing():
    run = parse_config("""
[model]
d = 6
hidden = [16, 8]
[train]
lr = 0.01
epochs = 3
loss = "cross-entropy"
[data]
label_column = "target"
""")
    assert run.train.d == 6 and run.train.hidden == (16, 8) and run.train.lr == 0.01
    assert run.label_column == "target"


@pytest.mark.parametrize("text", ["[train]\nlearning_rate = 1", "[optimizer]\nlr = 1", "[train]\nepochs = 'ten'",
                                  "[train]\nlr = -1", "[model]\nd = 2.5", "not toml ["])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_csv_roundtrip(tmp_path):
    path = tmp_path / "d.csv"
    dataio.write_csv(path, ["x1", "label", "x2"], [[0.1, "b", 2.0], [0.3, "a", -1.5]])
    table = dataio.read_table(path, "label")
    assert table.feature_names == ["x1", "x2"]
    assert np.allclose(table.features, [[0.1, 2.0], [0.3, -1.5]])
    classes = dataio.class_values(table.labels)
    assert classes == ["a", "b"]
    assert list(dataio.encode_labels(table.labels, classes)) == [1, 0]
    assert dataio.class_values(["10", "9", "2"]) == ["2", "9", "10"]


def test_csv_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x1,label\n1.0\n", encoding="utf-8")
    with pytest.raises(ValueError):
        dataio.read_table(path, "label")
    path.write_text("x1,label\nabc,1\n", encoding="utf-8")
    with pytest.raises(ValueError):
        dataio.read_table(path, "label")
    path.write_text("x1,x2\n1,2\n", encoding="utf-8")
    with pytest.raises(ValueError):
        dataio.read_table(path, "label")
    assert dataio.read_table(path, "label", require_label=False).labels is None
    with pytest.raises(ValueError):
        dataio.encode_labels(["z"], ["a"])
