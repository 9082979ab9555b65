import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from discdl.data_io import (
    DataError,
    LabeledDataset,
    SynthSpec,
    load_csv,
    normalize_signals,
    save_csv,
    save_dictionaries,
    split,
    synth_planted,
)
from oracles import max_cross_coherence


def test_load_two_rows(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1,0.0,1.0\n2,1.0,0.0\n")
    ds = load_csv(p)
    assert (ds.n_features, ds.n_samples, ds.n_classes) == (2, 2, 2)
    np.testing.assert_array_equal(ds.signals, [[0.0, 1.0], [1.0, 0.0]])


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("", "no data"),
        ("1,0.5,0.5\n2,0.5\n", "line 2"),
        ("1,0.5\nx,0.2\n", "line 2"),
        ("1,0.5\n1,abc\n", "line 2"),
        ("0,0.5\n", "line 1"),
    ],
)
def test_load_errors_name_the_line(tmp_path, text, fragment):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(DataError, match=fragment):
        load_csv(p)


@settings(max_examples=30, deadline=None)
@given(
    arrays(float, st.tuples(st.integers(1, 5), st.integers(1, 8)), elements=st.floats(-1e6, 1e6, allow_subnormal=True)),
    st.integers(0, 1000),
)
def test_csv_round_trip_is_exact(tmp_path_factory, X, seed):
    labels = np.random.default_rng(seed).integers(1, 4, X.shape[1])
    ds = LabeledDataset(X, labels)
    p = tmp_path_factory.mktemp("rt") / "x.csv"
    save_csv(ds, p)
    back = load_csv(p)
    np.testing.assert_array_equal(back.signals, ds.signals)
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_dataset_invariants():
    with pytest.raises(DataError):
        LabeledDataset(np.ones((2, 2)), [1])
    with pytest.raises(DataError):
        LabeledDataset(np.ones((2, 2)), [0, 1])
    with pytest.raises(DataError):
        LabeledDataset(np.ones((2, 2)), [1, 3], n_classes=2)


# synthetic data


def test_noise_free_sparsity_one_samples_are_scaled_atoms():
    ds, dicts = synth_planted(SynthSpec(n_classes=2, n_features=10, atoms_per_class=3, samples_per_class=5, sparsity=1, noise=0.0))
    for n in range(ds.n_samples):
        D = dicts[ds.labels[n] - 1]
        x = ds.signals[:, n]
        cos = np.abs(D.T @ x) / np.linalg.norm(x)
        assert cos.max() == pytest.approx(1.0, abs=1e-12)


def test_same_seed_same_data():
    spec = SynthSpec(seed=3, samples_per_class=10)
    a, da = synth_planted(spec)
    b, db = synth_planted(spec)
    np.testing.assert_array_equal(a.signals, b.signals)
    np.testing.assert_array_equal(np.hstack(da), np.hstack(db))


def test_zero_coherence_blocks_are_orthogonal():
    spec = SynthSpec(n_classes=4, n_features=32, atoms_per_class=6, samples_per_class=2)
    _, dicts = synth_planted(spec)
    atoms = np.hstack(dicts)
    np.testing.assert_allclose(np.linalg.norm(atoms, axis=0), 1.0, atol=1e-15)
    assert max_cross_coherence(atoms, np.repeat(np.arange(4), 6)) < 1e-10


def test_coherence_and_shared_atoms_overlap_classes():
    _, dicts = synth_planted(SynthSpec(n_features=32, samples_per_class=2, coherence=0.5, shared_atoms=1))
    atoms = np.hstack([D[:, :-1] for D in dicts])
    assert max_cross_coherence(atoms, np.repeat(np.arange(4), 6)) > 0.1
    np.testing.assert_array_equal(dicts[0][:, -1], dicts[3][:, -1])


def test_positive_coefficients_by_default():
    ds, dicts = synth_planted(SynthSpec(n_classes=2, n_features=12, samples_per_class=6, noise=0.0))
    for n in range(ds.n_samples):
        D = dicts[ds.labels[n] - 1]
        coef = np.linalg.lstsq(D, ds.signals[:, n], rcond=None)[0]
        assert coef.min() > -1e-10


@pytest.mark.parametrize(
    "kw", [dict(sparsity=7), dict(noise=-1.0), dict(coherence=2.0), dict(n_classes=0), dict(shared_rate=1.5)]
)
def test_invalid_specs(kw):
    with pytest.raises(ValueError):
        synth_planted(SynthSpec(**kw))


def test_save_dictionaries(tmp_path):
    _, dicts = synth_planted(SynthSpec(n_classes=2, n_features=8, atoms_per_class=2, samples_per_class=2, sparsity=1))
    save_dictionaries(dicts, tmp_path / "dict.csv")
    back = load_csv(tmp_path / "dict.csv")
    np.testing.assert_array_equal(back.signals, np.hstack(dicts))
    np.testing.assert_array_equal(back.labels, [1, 1, 2, 2])


# normalization


def test_normalize_examples():
    ds = LabeledDataset(np.array([[3.0, 0.0], [4.0, 0.0]]), [1, 1])
    out = normalize_signals(ds)
    np.testing.assert_allclose(out.signals[:, 0], [0.6, 0.8])
    np.testing.assert_array_equal(out.signals[:, 1], 0.0)
    assert normalize_signals(ds, "none") is ds
    np.testing.assert_allclose(normalize_signals(out).signals, out.signals, atol=1e-16)
    with pytest.raises(ValueError):
        normalize_signals(ds, "max")


# split


def test_split_half_of_four():
    ds = LabeledDataset(np.arange(16.0).reshape(2, 8), [1, 1, 1, 1, 2, 2, 2, 2])
    tr, te = split(ds, 0.5, seed=0)
    assert list(tr.class_counts()) == [2, 2] and list(te.class_counts()) == [2, 2]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=40), st.floats(0.05, 0.95), st.integers(0, 1000))
def test_split_properties(labels, fraction, seed):
    labels = np.array(labels)
    ds = LabeledDataset(np.arange(labels.size, dtype=float)[None, :], labels, n_classes=int(labels.max()))
    counts = ds.class_counts()
    if np.any(counts == 0):
        with pytest.raises(DataError):
            split(ds, fraction, seed)
        return
    kept = np.maximum(1, np.floor(fraction * counts + 0.5))
    if np.all(kept == counts):
        with pytest.raises(DataError, match="no test samples"):
            split(ds, fraction, seed)
        return
    tr, te = split(ds, fraction, seed)
    ids = sorted(tr.signals[0].tolist() + te.signals[0].tolist())
    assert ids == list(range(labels.size))
    assert np.all(tr.class_counts() >= 1)
    for n_c, n_tr in zip(ds.class_counts(), tr.class_counts()):
        assert abs(n_tr - fraction * n_c) <= 1 or n_tr == 1
    tr2, _ = split(ds, fraction, seed)
    np.testing.assert_array_equal(tr.signals, tr2.signals)


def test_split_rejects_bad_fraction():
    ds = LabeledDataset(np.ones((1, 2)), [1, 1])
    with pytest.raises(ValueError):
        split(ds, 1.0)
