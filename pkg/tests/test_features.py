import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_state
from groundspan.features import (
    ONE_BODY,
    TWO_BODY_EDGE,
    TWO_BODY_NN,
    DegenerateFeatureWarning,
    FeatureSpec,
    batch_diversity_loss,
    compute_features,
    compute_features_batch,
    cosine_similarity,
    diversity_loss_and_grad,
    similarity_matrix,
    write_similarity_csv,
)
from groundspan.models import SpinModelSpec, model_ground_space
from groundspan.qsim import StateVector

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@pytest.mark.parametrize("n", [3, 5, 10])
def test_term_counts(n):
    assert len(FeatureSpec(ONE_BODY, n)) == 3 * n
    assert len(FeatureSpec(TWO_BODY_NN, n)) == 9 * n
    assert len(FeatureSpec(TWO_BODY_EDGE, n)) == 27


def test_pairs():
    assert FeatureSpec(TWO_BODY_NN, 4).pairs == [(0, 1), (1, 2), (2, 3), (3, 0)]
    assert FeatureSpec(TWO_BODY_EDGE, 10).pairs == [(0, 1), (8, 9), (9, 0)]


def test_invalid_spec():
    with pytest.raises(ValueError):
        FeatureSpec("THREE_BODY", 4)
    with pytest.raises(ValueError):
        FeatureSpec(TWO_BODY_NN, 2)


def test_zero_state_one_body():
    spec = FeatureSpec(ONE_BODY, 4)
    feats = compute_features(StateVector.zero(4), spec)
    for ops, value in zip(spec.strings, feats):
        assert value == (1.0 if ops[0][1] == "z" else 0.0)


def test_zero_state_two_body():
    spec = FeatureSpec(TWO_BODY_NN, 4)
    feats = compute_features(StateVector.zero(4), spec)
    for ops, value in zip(spec.strings, feats):
        assert value == (1.0 if ops[0][1] == ops[1][1] == "z" else 0.0)


def test_entries_bounded(rng):
    psi = random_state(rng, 5, batch=10)
    for kind in (ONE_BODY, TWO_BODY_NN, TWO_BODY_EDGE):
        feats = compute_features_batch(psi, FeatureSpec(kind, 5))
        assert np.abs(feats).max() <= 1 + 1e-12


def test_size_mismatch():
    with pytest.raises(ValueError):
        compute_features(StateVector.zero(3), FeatureSpec(ONE_BODY, 4))


def test_shot_features_agree_with_exact():
    g = model_ground_space(SpinModelSpec("MG", 9))
    spec = FeatureSpec(ONE_BODY, 9)
    psi = g.basis[:, 0]
    exact = compute_features(psi, spec)
    shots = compute_features(psi, spec, mode="shots", plan=100_000, seed=3)
    assert np.abs(shots - exact).max() < 0.02


def test_shot_mode_needs_plan(rng):
    with pytest.raises(ValueError):
        compute_features(random_state(rng, 3), FeatureSpec(ONE_BODY, 3), mode="shots")


class TestCosine:
    def test_identical(self):
        assert cosine_similarity([1.0, 2.0], [1.0, 2.0]) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 3.0]) == 0.0

    def test_opposite(self):
        assert cosine_similarity([1.0, -2.0], [-1.0, 2.0]) == pytest.approx(-1.0)

    def test_zero_norm_flagged(self):
        with pytest.warns(DegenerateFeatureWarning):
            assert cosine_similarity([0.0, 0.0], [1.0, 0.0]) == 0.0

    @given(arrays(float, 6, elements=finite), arrays(float, 6, elements=finite), st.floats(1e-3, 1e3))
    def test_scale_invariance_and_bounds(self, a, b, c):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateFeatureWarning)
            s = cosine_similarity(a, b)
            assert -1.0 <= s <= 1.0
            if np.linalg.norm(a) > 1e-6 and np.linalg.norm(b) > 1e-6:
                assert cosine_similarity(c * a, b) == pytest.approx(s, abs=1e-12)


class TestDiversity:
    def test_identical_vectors(self):
        assert batch_diversity_loss(np.tile([0.3, -1.0, 2.0], (5, 1))) == pytest.approx(1.0)

    def test_opposite_pair(self):
        assert batch_diversity_loss(np.array([[1.0, 2.0], [-1.0, -2.0]])) == pytest.approx(-1.0)

    def test_orthogonal_triple(self):
        assert batch_diversity_loss(np.eye(3)) == 0.0

    def test_needs_two(self):
        with pytest.raises(ValueError):
            batch_diversity_loss(np.ones((1, 3)))

    @given(st.integers(0, 2**32 - 1))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        v = rng.normal(size=(5, 4))
        _, grad, _ = diversity_loss_and_grad(v)
        h = 1e-6
        fd = np.zeros_like(v)
        for idx in np.ndindex(v.shape):
            p, m = v.copy(), v.copy()
            p[idx] += h
            m[idx] -= h
            fd[idx] = (batch_diversity_loss(p) - batch_diversity_loss(m)) / (2 * h)
        np.testing.assert_allclose(grad, fd, atol=1e-8)

    def test_zero_rows_get_no_gradient(self):
        v = np.array([[1.0, 0.0], [0.0, 0.0], [0.5, 0.5]])
        with pytest.warns(DegenerateFeatureWarning):
            _, grad, n_small = diversity_loss_and_grad(v)
        assert n_small == 1
        np.testing.assert_array_equal(grad[1], 0.0)


class TestSimilarityMatrix:
    def test_single(self):
        np.testing.assert_array_equal(similarity_matrix([[2.0, 1.0]]), [[1.0]])

    def test_identical_pair(self):
        np.testing.assert_allclose(similarity_matrix([[1.0, 1.0], [1.0, 1.0]]), np.ones((2, 2)))

    @given(arrays(float, (4, 3), elements=finite))
    def test_symmetric_unit_diagonal(self, v):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateFeatureWarning)
            m = similarity_matrix(v)
        np.testing.assert_array_equal(m, m.T)
        np.testing.assert_array_equal(np.diag(m), 1.0)
        assert np.all(np.abs(m) <= 1.0)

    def test_mg9_exact_basis_structure(self):
        g = model_ground_space(SpinModelSpec("MG", 9))
        basis = g.basis.T
        m1 = similarity_matrix(compute_features_batch(basis, FeatureSpec(ONE_BODY, 9)))
        m2 = similarity_matrix(compute_features_batch(basis, FeatureSpec(TWO_BODY_NN, 9)))
        for i, j in ((0, 3), (1, 2)):
            assert m1[i, j] == pytest.approx(-1.0, abs=1e-6)
            assert m2[i, j] == pytest.approx(1.0, abs=1e-6)
        # set-level: these are the only pairs at +/-1
        off = ~np.eye(4, dtype=bool)
        assert np.count_nonzero(np.abs(np.abs(m2[off]) - 1) < 1e-6) == 4

    def test_csv(self, tmp_path):
        path = tmp_path / "m.csv"
        write_similarity_csv(path, np.eye(2), ["g1", "g2"])
        lines = path.read_text().splitlines()
        assert lines[0] == "state,g1,g2"
        assert lines[1] == "g1,1.0,0.0"
