import numpy as np
import pytest

from discdl import MethodConfig, predict, train
from discdl.data_io import SynthSpec, synth_planted
from discdl.model_io import ModelFormatError, coerce_value, dumps, load_model, loads, read_config, save_model
from discdl.trainers import ConfigError


@pytest.fixture(scope="module")
def dataset():
    return synth_planted(SynthSpec(n_classes=3, n_features=10, atoms_per_class=2, samples_per_class=8, sparsity=2, seed=2))[0]


@pytest.mark.parametrize("method", ["dlsi", "lcksvd", "supervised_dl", "fddl"])
def test_round_trip_is_exact(dataset, method, tmp_path):
    model = train(dataset, MethodConfig(method, atoms_per_class=2, max_outer=8))
    path = tmp_path / "m.txt"
    save_model(model, path)
    back = load_model(path)
    np.testing.assert_array_equal(back.dictionary.atoms, model.dictionary.atoms)
    assert back.config == model.config
    assert back.trace.objective == model.trace.objective
    for name, value in model.params.items():
        np.testing.assert_array_equal(back.params[name], value)
        assert back.params[name].shape == value.shape
    assert len(back.members) == len(model.members)
    np.testing.assert_array_equal(predict(back, dataset.signals), predict(model, dataset.signals))
    assert dumps(back) == dumps(model)


def test_header_fields(dataset):
    text = dumps(train(dataset, MethodConfig("dksvd", atoms_per_class=2, max_outer=3)))
    lines = text.splitlines()
    assert lines[0] == "discdl-model 1"
    assert "shape 10 6" in lines and "n_classes 3" in lines
    assert any(line.startswith("matrix W 3 6") for line in lines)


def test_version_mismatch_rejected(dataset):
    text = dumps(train(dataset, MethodConfig("metaface", atoms_per_class=2, max_outer=2)))
    with pytest.raises(ModelFormatError, match="version"):
        loads(text.replace("discdl-model 1", "discdl-model 2", 1))
    with pytest.raises(ModelFormatError):
        loads("something else\n")
    with pytest.raises(ModelFormatError):
        loads(text.replace("shape 10 6", "shape 10 7"))


def test_config_file_parsing(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# comment\natoms_per_class = 4\nlam=0.25\n\nclassifier = bilinear\nn_atoms = none\n")
    cfg = read_config(p, "supervised_dl", seed=3)
    assert (cfg.atoms_per_class, cfg.lam, cfg.classifier, cfg.seed) == (4, 0.25, "bilinear", 3)
    for bad, fragment in [("foo = 1", "unknown"), ("lam = x", "number"), ("atoms_per_class = 1.5", "integer"), ("seed = 2", "command line"), ("lam", "key=value")]:
        p.write_text(bad + "\n")
        with pytest.raises(ConfigError, match=fragment):
            read_config(p, "metaface")


def test_coerce_value_types():
    assert coerce_value("max_outer", "7") == 7
    assert coerce_value("eta", "None") is None
    assert coerce_value("fidelity", "plain") == "plain"
