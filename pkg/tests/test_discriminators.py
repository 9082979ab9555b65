import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from discdl.dict_optimize import Dictionary
from discdl.discriminators import (
    build_consistency_matrix,
    build_label_indicator,
    coherence_report,
    discriminative_fidelity,
    discriminative_fidelity_grad,
    fisher_term,
    incoherence_penalty,
    logistic_loss,
    scatter_matrices,
)
from oracles import central_diff, fidelity_terms, rel_err, scatter_loops


def _unit(M):
    return M / np.linalg.norm(M, axis=0)


# label matrices


def test_label_indicator_examples():
    np.testing.assert_array_equal(build_label_indicator([1, 2, 1], 2), [[1, 0, 1], [0, 1, 0]])
    np.testing.assert_array_equal(build_label_indicator([1], 1), [[1]])


@given(st.lists(st.integers(1, 5), min_size=1, max_size=30))
def test_label_indicator_columns_are_one_hot(labels):
    H = build_label_indicator(labels, 5)
    np.testing.assert_array_equal(H.sum(axis=0), 1.0)
    assert all(H[c - 1, n] == 1 for n, c in enumerate(labels))


def test_label_indicator_rejects_out_of_range():
    with pytest.raises(ValueError):
        build_label_indicator([1, 3], 2)
    with pytest.raises(ValueError):
        build_label_indicator([0], 2)


def test_consistency_matrix_examples():
    Q = build_consistency_matrix([1, 2], [1, 1, 2, 2])
    np.testing.assert_array_equal(Q[:, 0], [1, 1, 0, 0])
    np.testing.assert_array_equal(Q[:, 1], [0, 0, 1, 1])
    np.testing.assert_array_equal(build_consistency_matrix([1, 1, 1], [1, 1]), np.ones((2, 3)))
    np.testing.assert_array_equal(build_consistency_matrix([2, 2], [1, 1, 1]), np.zeros((3, 2)))


def test_consistency_matrix_needs_assignment():
    with pytest.raises(ValueError, match="atom-to-class"):
        build_consistency_matrix([1, 2], None)


# logistic loss


def test_logistic_loss_values():
    assert logistic_loss(0.0) == pytest.approx(math.log(2))
    assert logistic_loss(1e4) == 0.0
    assert logistic_loss(-1e4) == pytest.approx(1e4)
    assert np.isfinite(logistic_loss(-1e4))


@given(st.floats(-50, 50))
def test_logistic_loss_reflection_identity(x):
    assert logistic_loss(-x) == pytest.approx(logistic_loss(x) + x, abs=1e-12, rel=1e-12)


# incoherence


def test_incoherence_examples():
    e = np.eye(3)
    assert incoherence_penalty(e[:, :1], e[:, 1:]) == 0.0
    u = _unit(np.array([[1.0], [2.0], [2.0]]))
    assert incoherence_penalty(u, u) == pytest.approx(1.0)


@given(st.integers(0, 10_000))
def test_incoherence_matches_double_loop_and_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    Di, Dj = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
    brute = sum((Di[:, a] @ Dj[:, b]) ** 2 for a in range(2) for b in range(2))
    assert incoherence_penalty(Di, Dj) == pytest.approx(brute, rel=1e-12)
    assert incoherence_penalty(Di, Dj) == pytest.approx(incoherence_penalty(Dj, Di), rel=1e-12)


# scatter and Fisher term


def test_scatter_single_class_and_exact_means():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((3, 5))
    np.testing.assert_array_equal(scatter_matrices(A, [1] * 5).between, 0.0)
    means = rng.standard_normal((3, 2))
    labels = [1, 1, 2, 2, 2]
    B = means[:, np.array(labels) - 1]
    np.testing.assert_allclose(scatter_matrices(B, labels).within, 0.0, atol=1e-15)


def test_scatter_random_instance_matches_loops():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((4, 9))
    labels = [1, 2, 3, 1, 2, 3, 3, 1, 1]
    sp = scatter_matrices(A, labels)
    Sw, Sb = scatter_loops(A, labels)
    np.testing.assert_allclose(sp.within, Sw, atol=1e-12)
    np.testing.assert_allclose(sp.between, Sb, atol=1e-12)


def test_scatter_empty_class_fails():
    with pytest.raises(ValueError, match="class 2"):
        scatter_matrices(np.ones((2, 3)), [1, 1, 3])
    with pytest.raises(ValueError):
        fisher_term(np.ones((2, 3)), [1, 1, 1], 1.0, n_classes=2)


def test_fisher_hand_example():
    value, _ = fisher_term(np.array([[1.0, -1.0]]), [1, 2], 1.0)
    assert value == pytest.approx(0.0, abs=1e-15)
    sp = scatter_matrices(np.array([[1.0, -1.0]]), [1, 2])
    assert np.trace(sp.within) == 0.0
    assert np.trace(sp.between) == pytest.approx(2.0)


def test_fisher_zero_terms():
    A = np.tile(np.array([[0.5], [2.0]]), (1, 4))
    value, _ = fisher_term(A, [1, 1, 2, 2], 0.0)
    assert value == pytest.approx(0.0, abs=1e-14)  # tr S_W = tr S_B = 0


def test_fisher_rejects_negative_eta():
    with pytest.raises(ValueError):
        fisher_term(np.ones((1, 2)), [1, 2], -0.1)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 3), st.integers(0, 6), st.floats(0, 3), st.integers(0, 10_000))
def test_fisher_value_and_gradient(K, C, extra, eta, seed):
    rng = np.random.default_rng(seed)
    labels = np.concatenate([np.arange(1, C + 1), rng.integers(1, C + 1, size=extra)])
    A = rng.standard_normal((K, labels.size))

    def f(Z):
        Sw, Sb = scatter_loops(Z, labels)
        return np.trace(Sw) - np.trace(Sb) + eta * np.sum(Z * Z)

    value, grad = fisher_term(A, labels, eta)
    assert value == pytest.approx(f(A), abs=1e-10)
    assert rel_err(grad, central_diff(f, A)) < 1e-5


# discriminative fidelity


def _structured(rng, d=6, counts=(2, 3, 2)):
    return Dictionary.from_blocks([_unit(rng.standard_normal((d, k))) for k in counts])


def test_fidelity_zero_when_own_block_reconstructs():
    rng = np.random.default_rng(2)
    D = _structured(rng)
    A = np.zeros((D.n_atoms, 4))
    A[D.atom_class == 2] = rng.standard_normal((3, 4))
    X = D.atoms @ A
    assert discriminative_fidelity(X, D, A, 2) == pytest.approx(0.0, abs=1e-24)


def test_fidelity_zero_codes_is_twice_signal_energy():
    rng = np.random.default_rng(3)
    D = _structured(rng)
    X = rng.standard_normal((6, 5))
    assert discriminative_fidelity(X, D, np.zeros((D.n_atoms, 5)), 1) == pytest.approx(2 * np.sum(X * X))


@given(st.integers(0, 10_000), st.integers(1, 3))
def test_fidelity_matches_termwise_oracle_and_gradient(seed, c):
    rng = np.random.default_rng(seed)
    D = _structured(rng)
    X = rng.standard_normal((6, 4))
    A = rng.standard_normal((D.n_atoms, 4))
    value = discriminative_fidelity(X, D, A, c)
    assert value == pytest.approx(fidelity_terms(X, D.atoms, list(D.atom_class), A, c), rel=1e-12)
    grad = discriminative_fidelity_grad(X, D, A, c)
    assert rel_err(grad, central_diff(lambda Z: discriminative_fidelity(X, D, Z, c), A)) < 1e-6
    perm = rng.permutation(4)
    assert discriminative_fidelity(X[:, perm], D, A[:, perm], c) == pytest.approx(value, rel=1e-12)


def test_fidelity_needs_structure():
    with pytest.raises(ValueError):
        discriminative_fidelity(np.ones((2, 1)), Dictionary(np.eye(2)), np.ones((2, 1)), 1)


# coherence report


def test_coherence_report_flags_duplicates():
    e = np.eye(4)
    D = Dictionary(np.column_stack([e[:, 0], e[:, 1], e[:, 0], e[:, 2]]), [1, 1, 2, 2])
    report = coherence_report(D, 0.95)
    assert report["pairs"][0]["max"] == pytest.approx(1.0)
    assert sorted(f["atom"] for f in report["flagged"]) == [0, 2]
    with pytest.raises(ValueError, match="atom-to-class"):
        coherence_report(Dictionary(e))
