import math

import numpy as np
import pytest

from domainmoe import tensor as T
from domainmoe.optim import Adam, noam_lr


class TestNoam:
    def test_peak_at_warmup(self):
        assert noam_lr(4000, 4000, 0.0007) == pytest.approx(0.0007)

    def test_linear_warmup(self):
        assert noam_lr(1000, 4000, 0.0007) == pytest.approx(0.0007 / 4)

    def test_inverse_sqrt_decay(self):
        assert noam_lr(16000, 4000, 0.0007) == pytest.approx(0.0007 / 2)

    def test_monotone_shape(self):
        warm = [noam_lr(s, 100, 1.0) for s in range(1, 101)]
        decay = [noam_lr(s, 100, 1.0) for s in range(100, 400)]
        assert all(a < b for a, b in zip(warm, warm[1:]))
        assert all(a >= b for a, b in zip(decay, decay[1:]))

    def test_step_zero_rejected(self):
        with pytest.raises(ValueError):
            noam_lr(0, 4000, 0.0007)


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        p = T.Tensor(np.array([1.0, -2.0]), requires_grad=True)
        opt = Adam({"p": p})
        before = p.data.copy()
        for _ in range(5):
            p.grad = np.zeros_like(p.data)
            opt.step(0.1)
        np.testing.assert_array_equal(p.data, before)

    def test_single_step_hand_evaluated(self):
        # m1 = (1-b1)*g, v1 = (1-b2)*g^2, bias-corrected: mhat = g, vhat = g^2
        # update = -lr * g / (|g| + eps)
        b1, b2, eps, lr, g = 0.9, 0.98, 1e-9, 0.01, 1.0
        m1 = (1 - b1) * g
        v1 = (1 - b2) * g * g
        expected = -lr * (m1 / (1 - b1)) / (math.sqrt(v1 / (1 - b2)) + eps)
        p = T.Tensor(np.array([0.0]), dtype=np.float64, requires_grad=True)
        opt = Adam({"p": p}, beta1=b1, beta2=b2, eps=eps)
        p.grad = np.array([g])
        opt.step(lr)
        assert p.data[0] == pytest.approx(expected, rel=1e-12)
        assert p.data[0] == pytest.approx(-lr, rel=1e-6)  # sign-corrected step

    def test_identical_histories_identical_updates(self):
        a = T.Tensor(np.array([0.5, 0.5]), requires_grad=True)
        b = T.Tensor(np.array([0.5, 0.5]), requires_grad=True)
        opt = Adam({"a": a, "b": b})
        for step in range(4):
            g = np.array([0.3 * (step + 1), -0.1], dtype=a.data.dtype)
            a.grad, b.grad = g.copy(), g.copy()
            opt.step(0.05)
        np.testing.assert_array_equal(a.data, b.data)

    def test_step_counter_increments(self):
        p = T.Tensor(np.array([1.0]), requires_grad=True)
        opt = Adam({"p": p})
        for i in range(3):
            p.grad = np.ones_like(p.data)
            opt.step(0.01)
            assert opt.step_count == i + 1

    def test_nonfinite_gradient_rejected_in_checked_mode(self):
        T.set_checked(True)
        p = T.Tensor(np.array([1.0]), requires_grad=True)
        opt = Adam({"p": p})
        p.grad = np.array([np.nan])
        with pytest.raises(T.NonFiniteError):
            opt.step(0.01)

    def test_nonpositive_lr_rejected(self):
        p = T.Tensor(np.array([1.0]), requires_grad=True)
        with pytest.raises(ValueError):
            Adam({"p": p}).step(0.0)
