import math

import numpy as np
import pytest

from cbsprune.mlp import (
    LabeledBatch,
    MlpNetwork,
    TrainHyper,
    accuracy,
    apply_mask_loss,
    forward,
    gradgen,
    make_blobs,
    make_rings,
    mean_gradient,
    per_sample_gradient,
    per_sample_gradients,
    sample_loss,
    train_test_split,
    train_toy,
)
from cbsprune.selection import PruneMask


def hand_net():
    w1 = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
    b1 = [0.0, -3.0, 0.5]
    w2 = [[1.0, -1.0, 0.5], [0.0, 2.0, -1.0]]
    b2 = [0.1, 0.0]
    return MlpNetwork([w1, w2], [b1, b2])


def random_net(rng, dims, scale=0.5):
    net = MlpNetwork.initialize(dims, seed=int(rng.integers(1 << 30)))
    return net.with_flat(net.flat() + scale * rng.standard_normal(net.n_params))


def central_difference(net, x, y, h=1e-6):
    w = net.flat()
    batch = LabeledBatch([x], [y])
    out = np.empty_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        out[i] = (sample_loss(net.with_flat(w + e), batch) - sample_loss(net.with_flat(w - e), batch)) / (2 * h)
    return out


class TestForward:
    def test_zero_network(self):
        net = MlpNetwork([np.zeros((3, 2)), np.zeros((2, 3))], [np.zeros(3), np.zeros(2)])
        np.testing.assert_array_equal(forward(net, [0.3, -1.2]), [0.0, 0.0])

    def test_identity_layer(self):
        net = MlpNetwork([np.eye(2)], [np.zeros(2)])
        np.testing.assert_array_equal(forward(net, [1.0, 2.0]), [1.0, 2.0])

    def test_hand_trace(self):
        # hidden pre-activations (1, -1, 3.5) -> relu (1, 0, 3.5)
        np.testing.assert_allclose(forward(hand_net(), [1.0, 2.0]), [2.85, -3.5], rtol=0, atol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            forward(hand_net(), [1.0, 2.0, 3.0])

    def test_store_roundtrip(self):
        net = hand_net()
        store = net.to_store()
        assert store.names == ["fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"]
        assert store.n == net.n_params == 3 * 2 + 3 + 2 * 3 + 2
        np.testing.assert_array_equal(MlpNetwork.from_store(store).flat(), net.flat())
        np.testing.assert_array_equal(store.flatten(), net.flat())


class TestSampleLoss:
    def test_uniform_logits(self):
        net = MlpNetwork([np.zeros((2, 2))], [np.zeros(2)])
        batch = LabeledBatch([[1.0, 2.0], [-1.0, 0.5]], [0, 1])
        assert sample_loss(net, batch) == pytest.approx(math.log(2), abs=1e-15)

    def test_large_margin(self):
        net = MlpNetwork([np.zeros((2, 1))], [np.array([50.0, 0.0])])
        assert sample_loss(net, LabeledBatch([[0.0]], [0])) < 1e-8

    def test_mean_of_singles(self):
        rng = np.random.default_rng(0)
        net = random_net(rng, [2, 3, 2])
        batch = LabeledBatch(rng.standard_normal((4, 2)), [0, 1, 1, 0])
        singles = [sample_loss(net, batch.subset([m])) for m in range(4)]
        assert sample_loss(net, batch) == pytest.approx(np.mean(singles), abs=1e-12)

    def test_non_negative(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            net = random_net(rng, [3, 4, 3], scale=3.0)
            batch = LabeledBatch(rng.standard_normal((5, 3)), rng.integers(0, 3, 5))
            assert sample_loss(net, batch) >= 0.0

    def test_large_logits_stable(self):
        net = MlpNetwork([np.zeros((2, 1))], [np.array([1000.0, -1000.0])])
        assert np.isfinite(sample_loss(net, LabeledBatch([[0.0]], [1])))


class TestGradients:
    def test_stationary_point(self):
        net = MlpNetwork([np.eye(2)], [np.zeros(2)])
        g = per_sample_gradient(net, [60.0, 0.0], 0)
        assert np.linalg.norm(g) <= 1e-8

    def test_finite_differences(self):
        rng = np.random.default_rng(2)
        worst = 0.0
        for _ in range(50):
            dims = [int(rng.integers(2, 5)) for _ in range(int(rng.integers(2, 4)))] + [int(rng.integers(2, 4))]
            net = random_net(rng, dims, scale=0.1)
            x = rng.standard_normal(dims[0])
            y = int(rng.integers(dims[-1]))
            g = per_sample_gradient(net, x, y)
            fd = central_difference(net, x, y)
            big = np.abs(g) > 1e-8
            worst = max(worst, float(np.max(np.abs(fd - g)[big] / np.abs(g)[big])))
        assert worst <= 1e-5

    def test_duplicate_average(self):
        rng = np.random.default_rng(3)
        net = random_net(rng, [2, 3, 2])
        x = rng.standard_normal(2)
        single = per_sample_gradient(net, x, 1)
        assert np.array_equal(mean_gradient(net, LabeledBatch([x, x], [1, 1])), single)

    def test_batch_rows_are_singles(self):
        rng = np.random.default_rng(4)
        net = random_net(rng, [2, 4, 3])
        batch = LabeledBatch(rng.standard_normal((5, 2)), [0, 1, 2, 1, 0])
        rows = per_sample_gradients(net, batch)
        for m in range(5):
            np.testing.assert_allclose(rows[m], per_sample_gradient(net, batch.inputs[m], batch.labels[m]),
                                       rtol=1e-14, atol=1e-16)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            per_sample_gradient(hand_net(), [1.0, 2.0], 2)


class TestGradgen:
    def setup_method(self):
        rng = np.random.default_rng(5)
        self.net = random_net(rng, [2, 3, 2])
        self.batch = LabeledBatch(rng.standard_normal((6, 2)), [0, 1, 0, 1, 1, 0])

    def test_without_replacement_is_whole_batch(self):
        rows = gradgen(self.net, self.batch, 6, seed=0)
        expected = per_sample_gradients(self.net, self.batch)
        key = lambda a: a[np.lexsort(a.T[::-1])]  # noqa: E731
        np.testing.assert_array_equal(key(rows), key(expected))

    def test_deterministic(self):
        a = gradgen(self.net, self.batch, 4, seed=9)
        b = gradgen(self.net, self.batch, 4, seed=9)
        assert a.tobytes() == b.tobytes()

    def test_too_many_without_replacement(self):
        with pytest.raises(ValueError):
            gradgen(self.net, self.batch, 7, seed=0)
        assert gradgen(self.net, self.batch, 7, seed=0, replace=True).shape == (7, self.net.n_params)

    def test_file_size(self, tmp_path):
        from cbsprune.tensor_io import GradientMatrix, save_gradient_matrix

        data = make_rings(500, seed=0)
        net = MlpNetwork.initialize([2, 8, 2], seed=0)
        rows = gradgen(net, data, 400, seed=0)
        path = tmp_path / "g.grd"
        save_gradient_matrix(GradientMatrix(rows), path)
        assert path.stat().st_size == 8 * 400 * net.n_params + 12


class TestTraining:
    def test_separable_blobs(self):
        data = make_blobs(400, seed=0)
        net, loss = train_toy([2, 8, 2], data, TrainHyper(epochs=200), seed=0)
        assert accuracy(net, data) >= 0.99
        assert loss < 0.1

    def test_zero_epochs(self):
        data = make_blobs(50, seed=1)
        net, _ = train_toy([2, 8, 2], data, TrainHyper(epochs=0), seed=3)
        np.testing.assert_array_equal(net.flat(), MlpNetwork.initialize([2, 8, 2], seed=3).flat())

    def test_deterministic(self):
        data = make_rings(100, seed=2)
        a, _ = train_toy([2, 8, 2], data, TrainHyper(epochs=5), seed=4)
        b, _ = train_toy([2, 8, 2], data, TrainHyper(epochs=5), seed=4)
        assert a.flat().tobytes() == b.flat().tobytes()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self):
        from cbsprune.errors import TrainingError

        data = make_blobs(40, seed=0, separation=1e3)
        with pytest.raises(TrainingError):
            train_toy([2, 8, 2], data, TrainHyper(epochs=5, lr=1e300, momentum=0.99), seed=0)

    def test_split_is_partition(self):
        data = make_rings(20, seed=0)
        tr, te = train_test_split(data, 0.25, seed=1)
        assert len(tr) == 15 and len(te) == 5


class TestApplyMaskLoss:
    def setup_method(self):
        rng = np.random.default_rng(6)
        self.net = random_net(rng, [2, 4, 3])
        self.batch = LabeledBatch(rng.standard_normal((8, 2)), rng.integers(0, 3, 8))

    def test_empty_mask(self):
        before = self.net.flat().copy()
        assert apply_mask_loss(self.net, [], self.batch) == sample_loss(self.net, self.batch)
        np.testing.assert_array_equal(self.net.flat(), before)

    def test_full_mask(self):
        n = self.net.n_params
        assert apply_mask_loss(self.net, PruneMask(np.arange(n), n), self.batch) == pytest.approx(math.log(3), abs=1e-15)

    def test_single_index_matches_rebuild(self):
        for i in (0, 5, self.net.n_params - 1):
            weights = [w.copy() for w in self.net.weights]
            biases = [b.copy() for b in self.net.biases]
            flat_params = [p for pair in zip(weights, biases) for p in pair]
            pos = i
            for p in flat_params:
                if pos < p.size:
                    p.reshape(-1)[pos] = 0.0
                    break
                pos -= p.size
            rebuilt = MlpNetwork(weights, biases)
            assert apply_mask_loss(self.net, [i], self.batch) == sample_loss(rebuilt, self.batch)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            apply_mask_loss(self.net, PruneMask([0], 3), self.batch)
