import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from hsiprop.propagation import (
    LabelMatrix,
    PropagationConfig,
    build_Y,
    conjugate_gradient,
    harden,
    propagate_closed_form,
    propagate_iterative,
    to_raster,
)
from hsiprop.sparse_graph import symmetric_normalize


def random_S(rng, n, density=0.2):
    W = sp.random(n, n, density=density, random_state=np.random.RandomState(rng.integers(2**31)))
    W = W + W.T
    return symmetric_normalize(W).S


def random_Y(rng, n, c):
    Y = rng.random((n, c))
    return Y / Y.sum(axis=1, keepdims=True)


class TestBuildY:
    def test_stack_order(self):
        Y = build_Y([[0.0, 1.0]], [[1.0, 0.0]])
        np.testing.assert_array_equal(Y, [[0, 1], [1, 0]])

    def test_uniform_pixels(self):
        Y = build_Y(np.eye(3), np.full((4, 3), 1 / 3))
        np.testing.assert_allclose(Y[3:], 1 / 3)

    def test_slice_shape(self):
        # 80 anchors, one 3000-pixel slice, 16 classes
        Y = build_Y(np.eye(16)[np.arange(80) % 16], np.full((3000, 16), 1 / 16))
        assert Y.shape == (3080, 16)

    def test_class_mismatch(self):
        with pytest.raises(ValueError):
            build_Y(np.eye(2), np.ones((3, 3)))


class TestIterative:
    def test_alpha_near_zero_returns_Y(self, rng):
        S, Y = random_S(rng, 10), random_Y(rng, 10, 3)
        res = propagate_iterative(S, Y, alpha=1e-12, max_iter=1, tol=1e-9)
        np.testing.assert_allclose(res.F, Y, atol=1e-10)

    def test_identity_graph_is_fixed_point(self, rng):
        Y = random_Y(rng, 6, 2)
        res = propagate_iterative(sp.eye(6), Y, alpha=0.9, tol=1e-12)
        np.testing.assert_allclose(res.F, Y, atol=1e-12)
        assert res.n_iter == 1

    def test_three_node_converges_to_closed_form(self):
        S = symmetric_normalize(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)).S
        Y = np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]])
        res = propagate_iterative(S, Y, alpha=0.9, tol=1e-12, max_iter=5000)
        exact = 0.1 * np.linalg.solve(np.eye(3) - 0.9 * S.toarray(), Y)
        np.testing.assert_allclose(res.F, exact, atol=1e-10)

    def test_non_convergence_warns(self, rng):
        with pytest.warns(RuntimeWarning, match="did not converge"):
            res = propagate_iterative(random_S(rng, 20), random_Y(rng, 20, 2), alpha=0.99,
                                      tol=1e-14, max_iter=3)
        assert not res.converged and res.n_iter == 3

    def test_rejects_alpha_outside_unit_interval(self):
        for a in (0.0, 1.0, 1.5):
            with pytest.raises(ValueError):
                PropagationConfig(alpha=a)


class TestClosedForm:
    def test_zero_graph(self, rng):
        Y = random_Y(rng, 5, 2)
        res = propagate_closed_form(sp.csr_matrix((5, 5)), Y)
        np.testing.assert_allclose(res.F, Y, atol=1e-12)

    def test_two_node_hand_inverse(self):
        # (I - 0.5 [[0,1],[1,0]])^-1 = [[4/3, 2/3], [2/3, 4/3]]
        S = np.array([[0.0, 1.0], [1.0, 0.0]])
        Y = np.array([[1.0, 0.0], [0.0, 1.0]])
        res = propagate_closed_form(S, Y, alpha=0.5)
        np.testing.assert_allclose(res.F, [[4 / 3, 2 / 3], [2 / 3, 4 / 3]], atol=1e-9)
        direct = propagate_closed_form(S, Y, config=PropagationConfig(alpha=0.5, mode="direct"))
        np.testing.assert_allclose(direct.F, [[4 / 3, 2 / 3], [2 / 3, 4 / 3]], atol=1e-14)

    def test_fifty_nodes_against_iteration(self, rng):
        S, Y = random_S(rng, 50), random_Y(rng, 50, 4)
        closed = propagate_closed_form(S, Y, alpha=0.99)
        it = propagate_iterative(S, Y, alpha=0.99, tol=1e-10, max_iter=20000)
        np.testing.assert_allclose(it.F, 0.01 * closed.F, rtol=0, atol=1e-6)

    def test_modes_agree(self, rng):
        S, Y = random_S(rng, 40), random_Y(rng, 40, 3)
        ref = propagate_closed_form(S, Y, config=PropagationConfig(mode="direct"))
        for mode in ("closed_form", "iterative"):
            cfg = PropagationConfig(mode=mode, tol=1e-12, max_iter=50000)
            np.testing.assert_allclose(propagate_closed_form(S, Y, config=cfg).F, ref.F,
                                       rtol=1e-6, atol=1e-6)

    def test_scaling_Y_keeps_argmax(self, rng):
        S, Y = random_S(rng, 60), random_Y(rng, 60, 5)
        F = propagate_closed_form(S, Y).F
        G = propagate_closed_form(S, 0.01 * Y).F
        np.testing.assert_array_equal(harden(F), harden(G))

    def test_reports_iterations(self, rng):
        res = propagate_closed_form(random_S(rng, 80), random_Y(rng, 80, 3))
        assert res.converged and res.n_iter > 0
        assert len(res.residuals) == res.n_iter + 1


class TestConjugateGradient:
    def test_energy_norm_error_is_monotone(self, rng):
        S = random_S(rng, 60).toarray()
        A = np.eye(60) - 0.99 * S
        b = rng.random((60, 1))
        x_star = np.linalg.solve(A, b)
        errs = []
        for k in range(1, 40):
            x, *_ = conjugate_gradient(lambda V: A @ V, b, tol=1e-300, max_iter=k)
            e = x - x_star
            errs.append(float(e[:, 0] @ A @ e[:, 0]))
        assert all(b <= a * (1 + 1e-9) + 1e-28 for a, b in zip(errs, errs[1:]))

    def test_columns_converge_independently(self, rng):
        A = np.diag(np.arange(1.0, 11.0))
        B = np.column_stack([np.zeros(10), np.ones(10), np.arange(10.0)])
        X, it, ok, hist = conjugate_gradient(lambda V: A @ V, B, tol=1e-12)
        assert ok
        np.testing.assert_allclose(A @ X, B, atol=1e-10)
        assert hist[-1] <= 1e-12


class TestHarden:
    def test_one_hot(self):
        assert harden(np.eye(3)[[2, 0]]).tolist() == [2, 0]

    def test_tie_goes_to_smaller_index(self):
        assert harden([[0.5, 0.5]]).tolist() == [0]

    def test_zero_row_unclassified(self):
        with pytest.warns(RuntimeWarning):
            assert harden([[0.0, 0.0], [0.1, 0.2]]).tolist() == [-1, 1]

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            harden([[np.nan, 1.0]])

    def test_label_matrix_property(self):
        assert LabelMatrix(np.array([[0.2, 0.8]])).hardened.tolist() == [1]

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 20), st.integers(1, 6), st.integers(0, 2**32 - 1),
           st.floats(1e-3, 1e3))
    def test_positive_scaling_invariance(self, n, c, seed, scale):
        F = np.random.default_rng(seed).random((n, c)) + 1e-3
        np.testing.assert_array_equal(harden(F), harden(F * scale))


def test_to_raster():
    raster = to_raster([0, 2, -1], [[0, 0], [1, 1], [0, 1]], (2, 2), classes=[4, 5, 6])
    assert raster.tolist() == [[4, 0], [0, 6]]
