import numpy as np
import pytest

from cbsprune.errors import NumericError
from cbsprune.fisher import DenseHessian, EmpiricalFisher, surrogate_loss
from cbsprune.inv_fisher import InverseFisher, inverse_of_dense, woodfisher_inverse
from cbsprune.update import cbs_update, obs_single_update, reduced_system_update

from conftest import random_spd


def random_case(rng, n_max=100):
    n = int(rng.integers(2, n_max + 1))
    h = random_spd(rng, n)
    w = rng.standard_normal(n)
    p = np.sort(rng.choice(n, size=int(rng.integers(1, n)), replace=False))
    return h, w, p


class TestCbsUpdate:
    def test_identity(self):
        w = np.array([0.5, -1.0, 2.0, 3.0])
        inv = woodfisher_inverse(EmpiricalFisher(np.zeros((2, 4))), damping=1.0)
        res = cbs_update(inv, w, [1, 2])
        np.testing.assert_array_equal(res.lambda_star, [-1.0, 2.0])
        np.testing.assert_array_equal(res.w_star, [0.5, 0.0, 0.0, 3.0])

    def test_hand_example(self, toy2x2):
        h, w = toy2x2
        res = cbs_update(inverse_of_dense(h.H), w, [0], h)
        assert res.lambda_star[0] == pytest.approx(5 / 3, abs=1e-12)
        assert res.w_star[0] == 0.0
        assert abs(res.w_star[1] - 7 / 3) <= 1e-12
        np.testing.assert_allclose(res.delta, [-1.0, 1 / 3], atol=1e-12)

    def test_full_pruning(self):
        rng = np.random.default_rng(0)
        h = random_spd(rng, 6)
        w = rng.standard_normal(6)
        res = cbs_update(inverse_of_dense(h), w, range(6), DenseHessian(h))
        np.testing.assert_array_equal(res.w_star, np.zeros(6))
        assert res.predicted_increase == pytest.approx(surrogate_loss(DenseHessian(h), w, range(6)), rel=1e-12)

    def test_matches_reduced_system(self):
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(30):
            h, w, p = random_case(rng)
            got = cbs_update(inverse_of_dense(h), w, p).w_star
            expected = w + reduced_system_update(h, w, p)
            worst = max(worst, np.linalg.norm(got - expected) / np.linalg.norm(expected))
        assert worst <= 1e-8

    def test_constraint_and_kkt(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            h, w, p = random_case(rng, 60)
            res = cbs_update(inverse_of_dense(h), w, p)
            assert np.all(res.w_star[p] == 0.0)
            free = np.setdiff1d(np.arange(w.size), p)
            grad = h @ (res.w_star - w)
            bound = 1e-6 * (1 + np.abs(h).sum(axis=1).max() * np.abs(w).max())
            assert np.abs(grad[free]).max() <= bound

    def test_dominates_selection_only(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            h, w, p = random_case(rng, 40)
            hh = DenseHessian(h)
            res = cbs_update(inverse_of_dense(h), w, p, hh)
            assert res.predicted_increase <= surrogate_loss(hh, w, p) + 1e-10
            assert res.predicted_increase >= -1e-10

    def test_implied_loss_without_hessian(self):
        rng = np.random.default_rng(4)
        h, w, p = random_case(rng, 20)
        with_h = cbs_update(inverse_of_dense(h), w, p, DenseHessian(h)).predicted_increase
        implied = cbs_update(inverse_of_dense(h), w, p).predicted_increase
        assert implied == pytest.approx(with_h, rel=1e-8)

    def test_blocks_match_whole(self):
        rng = np.random.default_rng(5)
        sizes = [4, 3, 5]
        blocks, start = [], 0
        whole = np.zeros((12, 12))
        for s in sizes:
            a = random_spd(rng, s)
            idx = np.arange(start, start + s)
            whole[np.ix_(idx, idx)] = a
            blocks.append((idx, np.linalg.inv(a)))
            start += s
        w = rng.standard_normal(12)
        p = [0, 2, 5, 8, 9, 11]
        block_res = cbs_update(InverseFisher(0.0, blocks), w, p)
        whole_res = cbs_update(inverse_of_dense(whole), w, p)
        np.testing.assert_allclose(block_res.w_star, whole_res.w_star, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(block_res.lambda_star, whole_res.lambda_star, rtol=1e-10, atol=1e-12)

    def test_cross_block_untouched(self):
        rng = np.random.default_rng(6)
        G = rng.standard_normal((10, 8))
        inv = woodfisher_inverse(EmpiricalFisher(G), 1e-2, block_size=4)
        w = rng.standard_normal(8)
        res = cbs_update(inv, w, [1])
        np.testing.assert_array_equal(res.w_star[4:], w[4:])

    def test_singular(self):
        inv = InverseFisher(0.0, [(np.arange(2), np.ones((2, 2)))])
        with pytest.raises(NumericError):
            cbs_update(inv, [1.0, 2.0], [0, 1])


class TestObsSingle:
    def test_matches_cbs(self):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(20):
            n = int(rng.integers(2, 30))
            h = random_spd(rng, n)
            w = rng.standard_normal(n)
            inv = inverse_of_dense(h)
            q = int(rng.integers(n))
            a, b = obs_single_update(inv, w, q), cbs_update(inv, w, [q])
            worst = max(worst, np.abs(a.w_star - b.w_star).max())
            assert a.predicted_increase == pytest.approx(b.predicted_increase, rel=1e-12)
        assert worst <= 1e-12

    def test_identity(self):
        inv = woodfisher_inverse(EmpiricalFisher(np.zeros((1, 3))), 1.0)
        np.testing.assert_array_equal(obs_single_update(inv, [1.0, 2.0, 3.0], 1).w_star, [1.0, 0.0, 3.0])

    def test_hand_example(self, toy2x2):
        h, w = toy2x2
        res = obs_single_update(inverse_of_dense(h.H), w, 0)
        assert res.w_star[0] == 0.0 and abs(res.w_star[1] - 7 / 3) <= 1e-12

    def test_non_positive_diagonal(self):
        inv = InverseFisher(0.0, [(np.arange(2), np.diag([1.0, -1.0]))])
        with pytest.raises(NumericError):
            obs_single_update(inv, [1.0, 1.0], 1)


class TestReducedSystem:
    def test_hand_example(self, toy2x2):
        h, w = toy2x2
        delta = reduced_system_update(h.H, w, [0])
        assert delta[1] == pytest.approx(1 / 3, abs=1e-15)

    def test_diagonal(self):
        delta = reduced_system_update(np.diag([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 3.0]), [1])
        np.testing.assert_array_equal(delta, [0.0, -2.0, 0.0])

    def test_no_free_coordinates(self):
        w = np.array([1.0, -2.0])
        np.testing.assert_array_equal(reduced_system_update(np.eye(2), w, [0, 1]), -w)

    def test_singular_free_block(self):
        with pytest.raises(NumericError):
            reduced_system_update(np.zeros((3, 3)), np.ones(3), [0])
