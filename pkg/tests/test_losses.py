import itertools
import math

import numpy as np
import pytest

from calib_lab import autodiff as ad
from calib_lab.autodiff import Parameter
from calib_lab.losses import LossSpec, brier, composite_loss, cross_entropy, entropy_penalty, label_smooth, one_hot


def probs_param(rng, b=4, k=3):
    return Parameter(rng.normal(size=(b, k)))


class TestValues:
    def test_cross_entropy(self):
        assert cross_entropy(np.array([0.0, 1.0]), np.array([0.0, 1.0])).item() == 0.0
        assert cross_entropy(np.array([0.5, 0.5]), np.array([1.0, 0.0])).item() == pytest.approx(0.693147, abs=1e-6)
        assert cross_entropy(np.full(6, 1 / 6), one_hot([2], 6)).item() == pytest.approx(1.791759, abs=1e-6)

    def test_brier(self):
        assert brier(np.array([0.7, 0.3]), np.array([1.0, 0.0])).item() == pytest.approx(0.18, abs=1e-15)
        assert brier(np.array([0.5, 0.5]), np.array([0.0, 1.0])).item() == pytest.approx(0.5, abs=1e-15)
        assert brier(np.array([0.2, 0.8]), np.array([0.2, 0.8])).item() == 0.0

    def test_brier_bounds(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            k = int(rng.integers(2, 8))
            p = rng.dirichlet(np.ones(k) * 0.3)
            val = brier(p, one_hot([rng.integers(k)], k)).item()
            assert 0.0 <= val <= 2.0

    def test_entropy_penalty(self):
        assert entropy_penalty(np.array([0.0, 1.0, 0.0])).item() == 0.0
        assert entropy_penalty(np.array([0.5, 0.5])).item() == pytest.approx(-0.693147, abs=1e-6)
        rng = np.random.default_rng(1)
        for _ in range(100):
            k = int(rng.integers(2, 10))
            val = entropy_penalty(rng.dirichlet(np.ones(k))).item()
            assert -math.log(k) - 1e-12 <= val <= 0.0

    def test_label_smoothing(self):
        np.testing.assert_allclose(label_smooth([0], 2, 0.1), [[0.95, 0.05]])
        t = label_smooth([2], 6, 0.01)[0]
        assert t[2] == pytest.approx(0.991667, abs=1e-6)
        np.testing.assert_allclose(np.delete(t, 2), 0.001667, atol=1e-6)
        np.testing.assert_array_equal(label_smooth([1], 3, 0.0), one_hot([1], 3))
        with pytest.raises(ValueError):
            label_smooth([0], 2, 1.0)

    def test_batch_mean(self):
        p = np.array([[0.5, 0.5], [0.9, 0.1]])
        expected = (-math.log(0.5) - math.log(0.9)) / 2
        assert cross_entropy(p, one_hot([0, 0], 2)).item() == pytest.approx(expected)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            cross_entropy(np.array([0.5, 0.5]), np.array([1.0, 0.0, 0.0]))
        with pytest.raises(ValueError):
            one_hot([3], 3)


class TestComposite:
    def test_plain_ce_reduction(self):
        p = np.array([[0.2, 0.5, 0.3]])
        assert composite_loss(LossSpec(), p, [1]).item() == cross_entropy(p, one_hot([1], 3)).item()

    def test_brier_erl_uniform(self):
        got = composite_loss(LossSpec("brier", erl_beta=0.001), np.array([[0.5, 0.5]]), [0]).item()
        assert got == pytest.approx(0.499307, abs=1e-6)

    def test_mixup_endpoints(self):
        rng = np.random.default_rng(0)
        p = rng.dirichlet(np.ones(4), size=5)
        yi, yj = rng.integers(0, 4, 5), rng.integers(0, 4, 5)
        for spec in (LossSpec("ce", 0.01, 0.1), LossSpec("brier")):
            assert composite_loss(spec, p, mix=(yi, yj, 1.0)).item() == composite_loss(spec, p, yi).item()
            assert composite_loss(spec, p, mix=(yi, yj, 0.0)).item() == composite_loss(spec, p, yj).item()

    def test_mixup_mixes_losses_not_targets(self):
        p = np.array([[0.6, 0.3, 0.1]])
        lam = 0.3
        spec = LossSpec("brier")
        want = lam * brier(p, one_hot([0], 3)).item() + (1 - lam) * brier(p, one_hot([1], 3)).item()
        assert composite_loss(spec, p, mix=([0], [1], lam)).item() == pytest.approx(want, abs=1e-15)
        mixed_target = lam * one_hot([0], 3) + (1 - lam) * one_hot([1], 3)
        assert composite_loss(spec, p, target=mixed_target).item() != pytest.approx(want)

    def test_exactly_one_target_form(self):
        p = np.array([[0.5, 0.5]])
        with pytest.raises(ValueError):
            composite_loss(LossSpec(), p)
        with pytest.raises(ValueError):
            composite_loss(LossSpec(), p, [0], target=np.array([1.0, 0.0]))

    def test_spec_validation_and_name(self):
        with pytest.raises(ValueError):
            LossSpec("focal")
        with pytest.raises(ValueError):
            LossSpec(erl_beta=-1)
        assert LossSpec("brier", 0.001).name == "BL+ERL"
        assert LossSpec("ce", 0, 0.01).name == "CE+LS"

    def test_smoothing_increases_ce(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            k = int(rng.integers(2, 8))
            p = rng.dirichlet(np.ones(k))
            y = int(p.argmax())
            if p[y] <= 1 / k:
                continue
            eps = float(rng.uniform(0.001, 0.5))
            hard = composite_loss(LossSpec(), p, [y]).item()
            assert composite_loss(LossSpec(ls_epsilon=eps), p, [y]).item() > hard

    def test_entropy_gradient_at_uniform_is_normal_to_simplex(self):
        for k in (2, 5, 11):
            p = Parameter(np.full((1, k), 1.0 / k))
            ad.backward(entropy_penalty(p))
            g = p.grad[0]
            assert np.abs(g - g.mean()).max() < 1e-8


class TestGradients:
    @pytest.mark.parametrize("base,erl,ls,mix", list(itertools.product(
        ("ce", "brier"), (0.0, 0.3), (0.0, 0.1), (False, True))))
    def test_all_spec_combinations(self, base, erl, ls, mix):
        spec = LossSpec(base, erl, ls)
        rng = np.random.default_rng(hash((base, erl, ls, mix)) % 2 ** 32)
        logits = probs_param(rng)
        yi, yj = rng.integers(0, 3, 4), rng.integers(0, 3, 4)
        lam = 0.35

        def f():
            p = ad.softmax(logits)
            return composite_loss(spec, p, mix=(yi, yj, lam)) if mix else composite_loss(spec, p, yi)

        assert ad.finite_difference_check(f, [logits], max_coords=None) < 1e-6
