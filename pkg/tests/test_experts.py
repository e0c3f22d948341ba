import numpy as np
import pytest

from conftest import numeric_grad, rel_err
from domainmoe import tensor as T
from domainmoe.experts import (Expert, ExpertBank, gumbel_max_route,
                               gumbel_topk_sample, inference_route)
from domainmoe.rng import RngStream


def softmax(x):
    e = np.exp(x - x.max())
    return e / e.sum()


class TestExpertModule:
    def test_identity_at_initialization(self):
        T.set_checked(True)
        ex = Expert(8, 4, RngStream(81, 3))
        z = T.Tensor(RngStream(82).normal((2, 5, 8)))
        out = ex(z)
        np.testing.assert_array_equal(out.data, z.data)  # bitwise

    def test_not_identity_after_perturbation(self):
        ex = Expert(8, 4, RngStream(83, 3))
        ex.ffn.lin2.W.data[:] = 0.1
        z = T.Tensor(RngStream(84).normal((1, 3, 8)))
        assert np.abs(ex(z).data - z.data).max() > 1e-4

    def test_grad_matches_finite_differences(self):
        T.set_checked(True)
        ex = Expert(5, 3, RngStream(85, 3))
        ex.ffn.lin2.W.data[:] = RngStream(86).normal((3, 5)) * 0.3
        z = RngStream(87).normal((2, 4, 5))
        w = RngStream(88).normal((2, 4, 5))
        tz = T.Tensor(z, requires_grad=True)
        (ex(tz) * T.Tensor(w)).sum().backward()

        def fn(z_):
            with T.no_grad():
                return (ex(T.Tensor(z_)) * T.Tensor(w)).sum().item()

        assert rel_err(tz.grad, numeric_grad(fn, [z], 0)) <= 1e-4


class TestExpertBank:
    def make_bank(self, layers=2, experts=3, d=6, inner=4, seed=90):
        return ExpertBank(layers, experts, d, inner, RngStream(seed, 3))

    def test_index_errors(self):
        bank = self.make_bank()
        z = T.Tensor(np.zeros((1, 2, 6)))
        with pytest.raises(IndexError):
            bank.forward(z, 0, 3)
        with pytest.raises(IndexError):
            bank.forward(z, 2, 0)

    def test_apply_selects_per_sentence(self):
        T.set_checked(True)
        bank = self.make_bank()
        for e in range(3):
            bank.experts[0][e].ffn.lin2.W.data[:] = 0.1 * (e + 1)
        z = T.Tensor(RngStream(91).normal((2, 4, 6)))
        onehot = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        out = bank.apply(z, 0, onehot).data
        e0 = bank.forward(z, 0, 0).data
        e2 = bank.forward(z, 0, 2).data
        np.testing.assert_array_equal(out[0], e0[0])
        np.testing.assert_array_equal(out[1], e2[1])

    def test_apply_identity_at_init_bitwise(self):
        bank = self.make_bank()
        z = T.Tensor(RngStream(92).normal((3, 4, 6)))
        onehot = np.eye(3)
        np.testing.assert_array_equal(bank.apply(z, 1, onehot).data, z.data)

    def test_empty_assignment_rejected(self):
        bank = self.make_bank()
        with pytest.raises(ValueError):
            bank.apply(T.Tensor(np.zeros((1, 2, 6))), 0, np.zeros((1, 3)))

    def test_named_params_cover_all_experts(self):
        bank = self.make_bank()
        names = bank.named_params().keys()
        for li in range(2):
            for ei in range(3):
                assert f"expert.{li}.{ei}.ffn.lin1.W" in names
                assert f"expert.{li}.{ei}.ln.gain" in names


class TestRoutingSampler:
    def test_k_one_is_argmax_every_time(self):
        scores = np.array([0.3, 2.0, -1.0, 1.9])
        rng = RngStream(93)
        for _ in range(50):
            chosen, cand, probs = gumbel_topk_sample(scores, 1, 1.0, rng)
            assert chosen[0] == 1
            assert cand.tolist() == [1] and probs.tolist() == [1.0]

    def test_candidates_are_the_top_k(self):
        scores = np.array([0.1, 5.0, 3.0, -2.0, 4.0])
        _, cand, probs = gumbel_topk_sample(scores, 3, 1.0, RngStream(94))
        assert cand.tolist() == [1, 2, 4]
        np.testing.assert_allclose(probs, softmax(scores[[1, 2, 4]]), rtol=1e-12)

    def test_ties_at_cut_break_to_lowest_index(self):
        scores = np.array([1.0, 2.0, 1.0, 1.0])
        _, cand, _ = gumbel_topk_sample(scores, 2, 1.0, RngStream(95))
        assert cand.tolist() == [0, 1]

    def test_empirical_frequencies_match_softmax(self):
        scores = np.array([2.0, 1.0, 0.0, -1.0])
        k, tau, n = 3, 1.0, 200_000
        chosen, cand, probs = gumbel_topk_sample(scores, k, tau, RngStream(96),
                                                 n_draws=n)
        counts = np.bincount(chosen, minlength=4)[cand] / n
        assert np.abs(counts - probs).max() <= 0.005
        assert counts.sum() == pytest.approx(1.0)  # never leaves the top-k

    def test_low_temperature_concentrates(self):
        scores = np.array([1.0, 0.9, 0.0])
        chosen, _, _ = gumbel_topk_sample(scores, 3, 0.01, RngStream(97),
                                          n_draws=10_000)
        assert (chosen == 0).mean() >= 0.999

    def test_invalid_arguments(self):
        scores = np.array([1.0, 2.0])
        with pytest.raises(ValueError):
            gumbel_topk_sample(scores, 2, 0.0, RngStream(0))
        with pytest.raises(ValueError):
            gumbel_topk_sample(scores, 3, 1.0, RngStream(0))
        with pytest.raises(ValueError):
            gumbel_topk_sample(scores, 0, 1.0, RngStream(0))

    def test_decision_record_fields(self):
        dec = gumbel_max_route(np.array([0.0, 3.0, 1.0]), 2, 1.0,
                               RngStream(98), sentence_id=7)
        obj = dec.to_json_obj()
        assert obj["sentence_id"] == 7
        assert obj["mode"] == "sampled"
        assert obj["chosen"] in obj["candidates"]
        assert len(obj["candidates"]) == len(obj["p"]) == 2

    def test_inference_route_deterministic(self):
        assert inference_route([0.5, 0.5, 0.4]) == 0
        assert inference_route([-1.0, 2.0, 1.0]) == 1
