import math

import numpy as np
import pytest

from cfalearn import autodiff as ad
from cfalearn import sensor
from cfalearn.autodiff import Tensor
from cfalearn.sensor import AnnealSchedule, ContractError, SensorPattern

from oracles import entropy_direct, finite_diff_grad, rel_err


def _pattern_from(w):
    w = np.asarray(w, dtype=np.float64)
    return SensorPattern(w.shape[0], w.shape[2], Tensor(w, requires_grad=True))


class TestAnnealSchedule:
    def test_base_case(self):
        assert AnnealSchedule(2.5e-5).alpha_at(0) == 1.0

    def test_reference_endpoint(self):
        # 1 + (2.5e-5 * 1.5e6)^2 = 1 + 37.5^2
        assert AnnealSchedule(2.5e-5).alpha_at(1_500_000) == pytest.approx(1407.25, abs=1e-9)

    def test_strictly_increasing(self):
        sched = AnnealSchedule(0.01)
        alphas = [sched.alpha_at(t) for t in range(1, 100)]
        assert all(b > a for a, b in zip(alphas, alphas[1:]))

    def test_invalid_gamma(self):
        with pytest.raises(ContractError):
            AnnealSchedule(0.0)


class TestSoftSelect:
    def test_uniform_logits(self):
        pat = _pattern_from(np.zeros((2, 2, 4)))
        for alpha in (1.0, 10.0, 1e4):
            np.testing.assert_allclose(sensor.soft_select(pat, alpha).data, 0.25, atol=1e-15)

    def test_initial_entropy_is_ln4(self):
        pat = _pattern_from(np.zeros((8, 8, 4)))
        ent = sensor.mean_entropy(sensor.soft_select(pat, 1.0))
        assert ent == pytest.approx(math.log(4), abs=1e-12)

    def test_high_alpha_concentrates(self):
        # draws with a top-two gap below ~ln(3000)/alpha cannot concentrate,
        # so only clearly distinct maxima are asserted on
        rng = np.random.default_rng(0)
        checked = 0
        for _ in range(1000):
            w = rng.normal(size=(1, 1, 4))
            top2 = np.sort(w[0, 0])[-2:]
            if top2[1] - top2[0] < 1e-3:
                continue
            sel = sensor.soft_select(_pattern_from(w), 1e4).data[0, 0]
            assert sel.max() > 0.999
            checked += 1
        assert checked > 950

    def test_alpha_below_one_rejected(self):
        with pytest.raises(ContractError):
            sensor.soft_select(_pattern_from(np.zeros((2, 2, 4))), 0.5)


class TestHarden:
    def test_argmax(self):
        pat = _pattern_from(np.array([[[0.1, 0.9, 0.2, 0.3]]]))
        assert sensor.harden(pat)[0, 0] == 1

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        w = rng.normal(size=(4, 4, 4))
        base = sensor.harden(_pattern_from(w))
        shifted = sensor.harden(_pattern_from(w + 7.3))
        np.testing.assert_array_equal(base, shifted)

    def test_ties_break_to_lowest_index(self):
        pat = _pattern_from(np.array([[[0.5, 0.5, 0.1, 0.5]]]))
        assert sensor.harden(pat)[0, 0] == 0

    def test_matches_soft_argmax_at_any_alpha(self):
        rng = np.random.default_rng(2)
        w = rng.normal(size=(8, 8, 4))
        pat = _pattern_from(w)
        hard = sensor.harden(pat)
        for alpha in (1.0, 5.0, 100.0, 1e4):
            np.testing.assert_array_equal(
                np.argmax(sensor.soft_select(pat, alpha).data, axis=-1), hard)


class TestMeasure:
    def test_one_hot_selection(self):
        sel = np.zeros((1, 1, 4))
        sel[0, 0, 2] = 1.0
        x = np.array([[[0.1, 0.2, 0.3, 0.6]]])
        assert float(sensor.measure(sel, x).data[0, 0]) == pytest.approx(0.3)

    def test_uniform_selection_averages(self):
        sel = np.full((1, 1, 4), 0.25)
        x = np.array([[[0.1, 0.2, 0.3, 0.6]]])
        assert float(sensor.measure(sel, x).data[0, 0]) == pytest.approx(0.3)

    def test_tiled_matches_modular_oracle(self):
        rng = np.random.default_rng(3)
        sel = rng.uniform(size=(8, 8, 4))
        sel /= sel.sum(-1, keepdims=True)
        x = rng.uniform(size=(16, 16, 4))
        out = sensor.measure(sel, x).data
        for i in range(16):
            for j in range(16):
                expected = sum(sel[i % 8, j % 8, c] * x[i, j, c] for c in range(4))
                assert out[i, j] == pytest.approx(expected, abs=1e-12)

    def test_hard_selection_extracts_single_channel(self):
        rng = np.random.default_rng(4)
        w = rng.normal(size=(4, 4, 4))
        pat = _pattern_from(w)
        hard = sensor.harden(pat)
        x = rng.uniform(size=(4, 4, 4))
        out = sensor.measure(sensor.one_hot(hard, 4), x).data
        for i in range(4):
            for j in range(4):
                assert out[i, j] == x[i, j, hard[i, j]]

    def test_non_tiling_shape_rejected(self):
        with pytest.raises(ad.ShapeError):
            sensor.measure(np.full((8, 8, 4), 0.25), np.ones((12, 12, 4)))

    def test_gradient_through_measurement(self):
        rng = np.random.default_rng(5)
        pat = _pattern_from(rng.normal(size=(2, 2, 4)) * 0.1)
        x = rng.uniform(0.2, 1.0, size=(4, 4, 4))
        target = rng.uniform(size=(4, 4))

        def loss():
            return ad.mse_loss(sensor.measure(sensor.soft_select(pat, 3.0), x), target)

        l = loss()
        ad.backward(l)
        analytic = pat.w.grad.copy()
        pat.w.zero_grad()
        numeric = finite_diff_grad(lambda: float(loss().data), [pat.w.data])[0]
        assert rel_err(analytic, numeric) < 1e-4


class TestMeanEntropy:
    def test_uniform_over_four(self):
        sel = np.full((8, 8, 4), 0.25)
        assert sensor.mean_entropy(sel) == pytest.approx(math.log(4), abs=1e-12)

    def test_one_hot_is_zero(self):
        sel = sensor.one_hot(np.zeros((4, 4), dtype=np.int64), 4)
        assert sensor.mean_entropy(sel) == 0.0

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(6)
        p = rng.uniform(size=(3, 3, 4))
        p /= p.sum(-1, keepdims=True)
        expected = np.mean([entropy_direct(p[i, j]) for i in range(3) for j in range(3)])
        assert sensor.mean_entropy(p) == pytest.approx(expected, abs=1e-12)

    def test_non_distribution_rejected(self):
        with pytest.raises(ContractError):
            sensor.mean_entropy(np.full((2, 2, 4), 0.3))


class TestEntropyMonotonicity:
    def test_nonincreasing_in_alpha(self):
        rng = np.random.default_rng(7)
        alphas = [1.0, 2.0, 5.0, 10.0, 50.0, 1e2, 1e3, 1e4]
        for _ in range(200):
            pat = _pattern_from(rng.normal(size=(1, 1, 4)))
            ents = [sensor.mean_entropy(sensor.soft_select(pat, a)) for a in alphas]
            for lo, hi in zip(ents, ents[1:]):
                assert hi <= lo + 1e-12


def test_init_near_uniform():
    pat = SensorPattern.init(8, 4, seed=0)
    assert np.abs(pat.w.data).max() <= 0.01
    ent = sensor.mean_entropy(sensor.soft_select(pat, 1.0))
    assert ent == pytest.approx(math.log(4), abs=1e-3)
