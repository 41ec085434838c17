"""Tests for the joint loss surface: distances, weights, loss matrix,
total loss, and analytic gradients."""

import math

import numpy as np
import pytest

from conftest import (central_difference, max_grad_error, random_instance,
                      scalar_total_loss)
from slisemap.errors import NumericError, ShapeError
from slisemap.model import TaskKind, hellinger_sq, linear_predict, \
    multinomial_predict, quadratic_loss
from slisemap.objective import (Hyperparams, added_loss_and_gradients,
                                local_loss_matrix, loss_and_gradients,
                                loss_gradients, loss_state,
                                pairwise_distances, softmax_weights,
                                total_loss)

REG = TaskKind.regression()


def random_orthogonal(d, rng):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return Q


class TestHyperparams:
    def test_requires_positive_lambda_z(self):
        with pytest.raises(ValueError):
            Hyperparams(lambda_z=0.0)
        with pytest.raises(ValueError):
            Hyperparams(lambda_z=-1.0)

    def test_defaults(self):
        hp = Hyperparams(lambda_z=0.1)
        assert hp.lambda_lasso == 1e-4
        assert hp.d == 2


class TestPairwiseDistances:
    def test_three_four_five_triangle(self):
        D = pairwise_distances(np.array([[0.0, 0.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(D, [[0.0, 5.0], [5.0, 0.0]])

    def test_coincident_points(self):
        D = pairwise_distances(np.ones((4, 2)))
        np.testing.assert_array_equal(D, np.zeros((4, 4)))

    def test_matches_nested_loop_oracle(self, rng):
        Z = rng.standard_normal((5, 2))
        D = pairwise_distances(Z)
        for i in range(5):
            for j in range(5):
                ref = math.sqrt(sum((Z[i, k] - Z[j, k]) ** 2 for k in range(2)))
                assert abs(D[i, j] - ref) < 1e-12

    def test_symmetry_and_zero_diagonal(self, rng):
        D = pairwise_distances(rng.standard_normal((8, 3)))
        np.testing.assert_array_equal(D, D.T)
        np.testing.assert_array_equal(np.diag(D), np.zeros(8))


class TestSoftmaxWeights:
    def test_uniform_on_zero_distances(self):
        W = softmax_weights(np.zeros((3, 3)))
        np.testing.assert_allclose(W, np.full((3, 3), 1.0 / 3.0), atol=1e-15)

    def test_log_two_example(self):
        D = np.array([[0.0, math.log(2.0)], [math.log(2.0), 0.0]])
        W = softmax_weights(D)
        np.testing.assert_allclose(W, [[2 / 3, 1 / 3], [1 / 3, 2 / 3]],
                                   atol=1e-15)

    def test_rows_sum_to_one_and_match_oracle(self, rng):
        import mpmath

        mpmath.mp.dps = 40
        for _ in range(5):
            D = np.abs(rng.standard_normal((6, 6)))
            np.fill_diagonal(D, 0.0)
            W = softmax_weights(D)
            np.testing.assert_allclose(W.sum(axis=1), np.ones(6), atol=1e-12)
            for i in range(6):
                den = mpmath.fsum(mpmath.exp(-mpmath.mpf(D[i, k]))
                                  for k in range(6))
                for j in range(6):
                    ref = float(mpmath.exp(-mpmath.mpf(D[i, j])) / den)
                    assert abs(W[i, j] - ref) < 1e-12

    def test_self_weight_is_row_max(self, rng):
        for _ in range(20):
            D = pairwise_distances(rng.standard_normal((7, 2)))
            W = softmax_weights(D)
            assert (np.diag(W)[:, None] >= W - 1e-15).all()


class TestLocalLossMatrix:
    def test_true_coefficients_zero_row(self, rng):
        # single linear regime, noise free: the true model's row is zero
        n, m = 8, 3
        X = np.hstack([rng.standard_normal((n, m)), np.ones((n, 1))])
        b_true = rng.standard_normal(m + 1)
        Y = (X @ b_true)[:, None]
        B = rng.standard_normal((n, m + 1))
        B[2] = b_true
        L = local_loss_matrix(B, X, Y, REG)
        np.testing.assert_allclose(L[2], np.zeros(n), atol=1e-20)

    def test_single_point(self, rng):
        X = np.array([[1.0, 1.0]])
        Y = np.array([[2.0]])
        B = np.array([[3.0, -2.0]])
        L = local_loss_matrix(B, X, Y, REG)
        assert L.shape == (1, 1)
        assert L[0, 0] == quadratic_loss(linear_predict(X[0], B[0]), 2.0)

    @pytest.mark.parametrize("task", [REG, TaskKind.classification(3)])
    def test_matches_pairwise_loop_oracle(self, task, rng):
        X, Y, B, Z, hp = random_instance(task, 4, 3, 2, rng)
        L = local_loss_matrix(B, X, Y, task)
        for i in range(4):
            for j in range(4):
                if task.is_classification:
                    pred = multinomial_predict(X[j], B[i], task.n_classes)
                    ref = hellinger_sq(pred, Y[j])
                else:
                    ref = quadratic_loss(linear_predict(X[j], B[i]), Y[j, 0])
                assert abs(L[i, j] - ref) < 1e-12

    def test_rectangular_models_vs_points(self, rng):
        X, Y, B, Z, hp = random_instance(REG, 6, 3, 2, rng)
        L = local_loss_matrix(B[:2], X, Y, REG)
        assert L.shape == (2, 6)

    def test_dimension_mismatch(self, rng):
        X, Y, B, Z, hp = random_instance(REG, 4, 3, 2, rng)
        with pytest.raises(ShapeError):
            local_loss_matrix(B[:, :2], X, Y, REG)


class TestTotalLoss:
    def test_single_row_formula(self, rng):
        X, Y, B, Z, hp = random_instance(REG, 1, 3, 2, rng)
        expected = local_loss_matrix(B, X, Y, REG)[0, 0] \
            + hp.lambda_z * (Z[0] ** 2).sum() \
            + hp.lambda_lasso * np.abs(B[0]).sum()
        assert abs(total_loss(X, Y, B, Z, hp, REG) - expected) < 1e-12

    def test_rotation_invariance(self, rng):
        X, Y, B, Z, hp = random_instance(REG, 6, 3, 2, rng)
        base = total_loss(X, Y, B, Z, hp, REG)
        for _ in range(25):
            R = random_orthogonal(2, rng)
            rotated = total_loss(X, Y, B, Z @ R, hp, REG)
            assert abs(rotated - base) < 1e-9 * (1.0 + abs(base))

    def test_translation_changes_loss(self, rng):
        for _ in range(10):
            X, Y, B, Z, hp = random_instance(REG, 5, 3, 2, rng)
            shifted = total_loss(X, Y, B, Z + np.array([1.0, -0.5]), hp, REG)
            assert abs(shifted - total_loss(X, Y, B, Z, hp, REG)) > 1e-6

    @pytest.mark.parametrize("task", [REG, TaskKind.classification(3)])
    def test_matches_scalar_loop_oracle(self, task, rng):
        X, Y, B, Z, hp = random_instance(task, 6, 3, 2, rng)
        ref = scalar_total_loss(X, Y, B, Z, hp, task)
        got = total_loss(X, Y, B, Z, hp, task)
        assert abs(got - ref) < 1e-10 * (1.0 + abs(ref))

    def test_monotone_in_lambda_z(self, rng):
        X, Y, B, Z, _ = random_instance(REG, 5, 3, 2, rng)
        values = [total_loss(X, Y, B, Z, Hyperparams(lambda_z=lz), REG)
                  for lz in (1e-3, 1e-2, 1e-1, 1.0, 10.0)]
        assert all(a <= b for a, b in zip(values, values[1:]))

    def test_non_finite_names_term(self, rng):
        X, Y, B, Z, hp = random_instance(REG, 4, 3, 2, rng)
        Y = Y * 1e200  # squared residuals overflow
        with pytest.raises(NumericError) as err:
            total_loss(X, Y, B, Z, hp, REG)
        assert "data term" in str(err.value)


class TestLossState:
    def test_state_invariants(self, rng):
        X, Y, B, Z, hp = random_instance(REG, 7, 3, 2, rng)
        st = loss_state(X, Y, B, Z, hp, REG)
        np.testing.assert_array_equal(st.D, st.D.T)
        np.testing.assert_allclose(st.W.sum(axis=1), np.ones(7), atol=1e-9)
        assert (st.L >= 0).all()
        assert np.isfinite(st.total)


class TestLossGradients:
    def test_zero_model_zero_response_stationary_in_b(self):
        X = np.hstack([np.zeros((3, 2)), np.ones((3, 1))])
        X[:, :2] = np.eye(3, 2)
        Y = np.zeros((3, 1))
        B = np.zeros((3, 3))
        Z = np.linspace(0, 1, 6).reshape(3, 2)
        hp = Hyperparams(lambda_z=0.5)
        gB, _ = loss_gradients(X, Y, B, Z, hp, REG)
        np.testing.assert_array_equal(gB, np.zeros_like(B))  # sign(0) == 0

    def test_zero_embedding_penalty_gradient_vanishes(self, rng):
        X, Y, B, _, _ = random_instance(REG, 5, 3, 2, rng)
        Z = np.zeros((5, 2))
        g1 = loss_gradients(X, Y, B, Z, Hyperparams(lambda_z=0.1), REG)[1]
        g2 = loss_gradients(X, Y, B, Z, Hyperparams(lambda_z=100.0), REG)[1]
        np.testing.assert_array_equal(g1, g2)

    @pytest.mark.parametrize("task", [REG, TaskKind.classification(3),
                                      TaskKind.binary_logit()])
    def test_finite_difference_agreement(self, task, rng):
        for trial in range(20):
            n = int(rng.integers(3, 9))
            m = int(rng.integers(2, 6))
            X, Y, B, Z, hp = random_instance(task, n, m, 2, rng)
            f, gB, gZ = loss_and_gradients(X, Y, B, Z, hp, task)
            fdB = central_difference(
                lambda Bv: total_loss(X, Y, Bv, Z, hp, task), B)
            fdZ = central_difference(
                lambda Zv: total_loss(X, Y, B, Zv, hp, task), Z)
            assert max_grad_error(gB, fdB) < 1e-4
            assert max_grad_error(gZ, fdZ) < 1e-4
            assert abs(f - total_loss(X, Y, B, Z, hp, task)) < 1e-12


class TestAddedRowsObjective:
    def test_finite_difference_agreement(self, rng):
        for task in (REG, TaskKind.classification(3)):
            n_old, n_new, m = 5, 2, 3
            X, Y, B, Z, hp = random_instance(task, n_old + n_new, m, 2, rng)
            B_old, B_new = B[:n_old], B[n_old:]
            Z_old, Z_new = Z[:n_old], Z[n_old:]

            def value(Bn, Zn):
                return added_loss_and_gradients(
                    X, Y, B_old, Z_old, Bn, Zn, hp, task)[0]

            f, gB, gZ = added_loss_and_gradients(
                X, Y, B_old, Z_old, B_new, Z_new, hp, task)
            fdB = central_difference(lambda v: value(v, Z_new), B_new)
            fdZ = central_difference(lambda v: value(B_new, v), Z_new)
            assert max_grad_error(gB, fdB) < 1e-4
            assert max_grad_error(gZ, fdZ) < 1e-4

    def test_single_feasible_copy_matches_row_contribution(self, rng):
        """Appending an exact copy of row i at row i's position gives the
        same contribution as an independent scalar computation."""
        from conftest import scalar_row_contribution

        X, Y, B, Z, hp = random_instance(REG, 4, 3, 2, rng)
        i = 1
        Xc = np.vstack([X, X[i:i + 1]])
        Yc = np.vstack([Y, Y[i:i + 1]])
        f, _, _ = added_loss_and_gradients(Xc, Yc, B, Z, B[i:i + 1],
                                           Z[i:i + 1], hp, REG)
        Bc = np.vstack([B, B[i:i + 1]])
        Zc = np.vstack([Z, Z[i:i + 1]])
        ref = scalar_row_contribution(Xc, Yc, Bc, Zc, hp, REG, 4)
        assert abs(f - ref) < 1e-10
