import numpy as np
import pytest

from conftest import numeric_grad, rel_err
from domainmoe import tensor as T
from domainmoe.discriminator import (Discriminator, classify, encode_features,
                                     pool)
from domainmoe.optim import Adam
from domainmoe.rng import RngStream


class TestPool:
    def test_hand_case(self):
        h = T.Tensor(np.array([[[1.0, 3.0], [3.0, 5.0]]]))
        np.testing.assert_allclose(pool(h).data, [[2.0, 4.0]])

    def test_pad_positions_excluded(self):
        h = T.Tensor(np.array([[[2.0, 2.0], [100.0, 100.0]]]))
        mask = np.array([[True, False]])
        np.testing.assert_allclose(pool(h, mask).data, [[2.0, 2.0]])

    def test_all_pad_sentence_rejected(self):
        h = T.Tensor(np.zeros((1, 2, 3)))
        with pytest.raises(ValueError):
            pool(h, np.array([[False, False]]))

    def test_grad_matches_finite_differences(self):
        T.set_checked(True)
        rng = RngStream(41)
        x = rng.normal((2, 3, 4))
        mask = np.array([[True, True, False], [True, True, True]])
        w = rng.normal((2, 4))
        tx = T.Tensor(x, requires_grad=True)
        (pool(tx, mask) * T.Tensor(w)).sum().backward()

        def fn(x_):
            num = (x_ * mask[:, :, None]).sum(axis=1)
            return (num / mask.sum(axis=1)[:, None] * w).sum()

        assert rel_err(tx.grad, numeric_grad(fn, [x], 0)) <= 1e-4


class TestDiscriminator:
    def test_zero_second_projection_gives_uniform_probs(self):
        T.set_checked(True)
        disc = Discriminator(4, 3, RngStream(1, 2))
        disc.lin2.W.data[:] = 0.0
        disc.lin2.b.data[:] = 0.0
        p = disc.probs(T.Tensor(np.ones((2, 4)))).data
        np.testing.assert_allclose(p, np.full((2, 3), 1 / 3), atol=1e-7)

    def test_probs_sum_to_one(self):
        disc = Discriminator(8, 4, RngStream(2, 2))
        p = disc.probs(T.Tensor(RngStream(3).normal((5, 8)))).data
        np.testing.assert_allclose(p.sum(axis=1), np.ones(5), atol=1e-5)

    def test_feature_width_checked(self):
        disc = Discriminator(8, 4, RngStream(2, 2))
        with pytest.raises(T.DimensionError):
            disc.score(T.Tensor(np.zeros((2, 7))))

    def test_label_out_of_range(self):
        disc = Discriminator(4, 2, RngStream(2, 2))
        with pytest.raises(IndexError):
            disc.loss(T.Tensor(np.zeros((1, 4))), [2])

    def test_grad_matches_finite_differences(self):
        T.set_checked(True)
        rng = RngStream(43)
        disc = Discriminator(5, 3, RngStream(44, 2))
        feats = rng.normal((6, 5))
        labels = rng.integers(0, 3, shape=6)
        disc.loss(T.Tensor(feats), labels).backward()
        params = disc.named_params()
        arrays = {n: p.data.copy() for n, p in params.items()}

        def fn(which_name, arr):
            saved = params[which_name].data.copy()
            params[which_name].data[:] = arr
            with T.no_grad():
                val = disc.loss(T.Tensor(feats), labels).item()
            params[which_name].data[:] = saved
            return val

        for name, p in params.items():
            num = numeric_grad(lambda a: fn(name, a), [arrays[name]], 0)
            assert rel_err(p.grad, num) <= 1e-4, name

    def test_classify_ties_to_lowest_index(self):
        assert classify([0.5, 0.5, 0.1]) == 0
        assert classify([0.1, 0.9, 0.9]) == 1

    def test_learns_separable_gaussians(self):
        T.set_checked(True)
        rng = RngStream(45)
        d, n = 6, 200
        centers = np.array([[4.0] + [0.0] * 5, [-4.0] + [0.0] * 5,
                            [0.0, 4.0] + [0.0] * 4])
        feats = np.concatenate([rng.normal((n, d)) * 0.5 + c for c in centers])
        labels = np.repeat([0, 1, 2], n)
        disc = Discriminator(d, 3, RngStream(46, 2))
        opt = Adam(disc.named_params())
        for _ in range(150):
            loss = disc.loss(T.Tensor(feats), labels)
            loss.backward()
            opt.step(0.05)
            opt.zero_grad()
        with T.no_grad():
            pred = disc.score(T.Tensor(feats)).data.argmax(axis=1)
        assert (pred == labels).mean() >= 0.98

    def test_encode_features_frozen(self, tiny_model, small_corpus):
        model, _ = tiny_model
        pairs = small_corpus["dev"].pairs[:8]
        before = {n: p.data.copy() for n, p in model.named_params().items()}
        feats = encode_features(model, pairs, batch_size=3)
        assert feats.shape == (8, model.config.model_dim)
        for n, p in model.named_params().items():
            np.testing.assert_array_equal(p.data, before[n])
            assert p.grad is None

    def test_encode_features_batch_size_invariant(self, tiny_model, small_corpus):
        model, _ = tiny_model
        pairs = small_corpus["dev"].pairs[:10]
        a = encode_features(model, pairs, batch_size=3)
        b = encode_features(model, pairs, batch_size=10)
        np.testing.assert_allclose(a, b, atol=1e-5)
