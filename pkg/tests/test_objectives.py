import numpy as np
import pytest

from hicl.errors import ConfigError, DataError
from hicl.numerics import Adam, finite_diff_check
from hicl.objectives import CRConfig, cr_loss, tap_loss, tii_loss, wtp_loss


class TestContrastiveRegularization:
    def test_no_old_classes_is_zero(self):
        h = np.random.default_rng(0).standard_normal((4, 6))
        loss, grad = cr_loss(h, [], temperature=0.8)
        assert loss == 0.0
        np.testing.assert_array_equal(grad, np.zeros_like(h))

    def test_single_pair_hand_value(self):
        # one representation h with h.h = 1 and one old mean with h.mu = 1
        # at temperature 1: log(e / (e + e)) = -ln 2
        h = np.zeros((1, 4))
        h[0, 0] = 1.0
        loss, _ = cr_loss(h, [h[0].copy()], temperature=1.0)
        assert abs(loss - (-np.log(2.0))) < 1e-12

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        H = rng.standard_normal((5, 7))
        means = [rng.standard_normal(7) for _ in range(3)]
        loss, grad = cr_loss(H, means, 0.8)
        err = finite_diff_check(lambda p: cr_loss(p["H"], means, 0.8)[0],
                                {"H": H.copy()}, {"H": grad}, seed=0)
        assert err < 1e-4

    def test_permutation_invariance(self):
        rng = np.random.default_rng(2)
        H = rng.standard_normal((6, 5))
        means = [rng.standard_normal(5) for _ in range(4)]
        base, _ = cr_loss(H, means, 0.8)
        perm_means, _ = cr_loss(H, means[::-1], 0.8)
        perm_batch, _ = cr_loss(H[::-1].copy(), means, 0.8)
        assert abs(base - perm_means) <= 1e-12
        assert abs(base - perm_batch) <= 1e-12

    def test_temperature_validated(self):
        with pytest.raises(ConfigError):
            cr_loss(np.zeros((1, 2)), [np.zeros(2)], temperature=0.0)

    def test_large_similarities_stable(self):
        h = np.full((2, 64), 1.0)
        means = [np.full(64, 1.0)]
        loss, grad = cr_loss(h, means, temperature=0.8)
        assert np.isfinite(loss) and np.all(np.isfinite(grad))


class TestWithinTaskLoss:
    def setup_method(self):
        rng = np.random.default_rng(3)
        self.H = rng.standard_normal((6, 5))
        self.w = rng.standard_normal((3, 5)) * 0.2
        self.b = np.zeros(3)
        self.targets = rng.integers(0, 3, 6)
        self.means = [rng.standard_normal(5) for _ in range(2)]

    def test_zero_weight_equals_plain_ce(self):
        from hicl.objectives import _linear_ce

        bundle, (ce, cr) = wtp_loss(self.H, self.targets, self.w, self.b,
                                    self.means, CRConfig(0.8, 0.0))
        direct, _, _, _ = _linear_ce(self.H, self.targets, self.w, self.b)
        assert bundle.loss == direct and cr == 0.0

    def test_hand_composed_total(self):
        # ce = ln 2 and cr = -ln 2 with weight 0.1 -> 0.9 ln 2
        h = np.zeros((1, 4))
        h[0, 0] = 1.0
        w = np.zeros((2, 4))
        bundle, (ce, cr) = wtp_loss(h, [0], w, np.zeros(2), [h[0].copy()],
                                    CRConfig(1.0, 0.1))
        assert abs(ce - np.log(2)) < 1e-12
        assert abs(cr + np.log(2)) < 1e-12
        assert abs(bundle.loss - 0.9 * np.log(2)) < 1e-12

    def test_gradients_match_finite_differences(self):
        bundle, _ = wtp_loss(self.H, self.targets, self.w, self.b,
                             self.means, CRConfig(0.8, 0.1))

        def loss_fn(p):
            out, _ = wtp_loss(p["reps"], self.targets, p["head_w"],
                              p["head_b"], self.means, CRConfig(0.8, 0.1))
            return out.loss

        err = finite_diff_check(loss_fn, {"reps": self.H.copy(),
                                          "head_w": self.w.copy(),
                                          "head_b": self.b.copy()},
                                bundle.grads, seed=1)
        assert err < 1e-4

    def test_label_outside_slice(self):
        with pytest.raises(DataError):
            wtp_loss(self.H, [5], self.w, self.b, [], CRConfig())


class TestTaskIdentityLoss:
    def test_zero_head_is_log_t(self):
        rng = np.random.default_rng(4)
        for t in (1, 2, 5):
            w = np.zeros((t, 6))
            b = np.zeros(t)
            batches = {(i, c): rng.standard_normal((4, 6))
                       for i in range(t) for c in range(2)}
            loss, _ = tii_loss(w, b, batches)
            assert abs(loss - np.log(t)) < 1e-12

    def test_single_task_zero_loss(self):
        batches = {(0, 0): np.random.default_rng(5).standard_normal((4, 3))}
        loss, _ = tii_loss(np.zeros((1, 3)), np.zeros(1), batches)
        assert loss == 0.0

    def test_trains_to_separation(self):
        rng = np.random.default_rng(6)
        batches = {(0, 0): rng.standard_normal((24, 4)) + [8, 0, 0, 0],
                   (1, 1): rng.standard_normal((24, 4)) - [8, 0, 0, 0]}
        w = np.zeros((2, 4))
        b = np.zeros(2)
        opt = Adam({"w": w, "b": b}, learning_rate=0.05)
        loss = None
        for _ in range(400):
            loss, grads = tii_loss(w, b, batches)
            opt.step({"w": grads["head_w"], "b": grads["head_b"]})
        assert loss < 0.01

    def test_unknown_task_index(self):
        batches = {(3, 0): np.zeros((2, 4))}
        with pytest.raises(DataError):
            tii_loss(np.zeros((2, 4)), np.zeros(2), batches)

    def test_unbalanced_rejected(self):
        batches = {(0, 0): np.zeros((2, 4)), (1, 1): np.zeros((3, 4))}
        with pytest.raises(DataError):
            tii_loss(np.zeros((2, 4)), np.zeros(2), batches)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        w = rng.standard_normal((3, 5)) * 0.3
        b = rng.standard_normal(3) * 0.1
        batches = {(i, c): rng.standard_normal((3, 5))
                   for i in range(3) for c in range(2)}
        loss, grads = tii_loss(w, b, batches)
        err = finite_diff_check(
            lambda p: tii_loss(p["head_w"], p["head_b"], batches)[0],
            {"head_w": w.copy(), "head_b": b.copy()},
            {"head_w": grads["head_w"], "head_b": grads["head_b"]}, seed=2)
        assert err < 1e-4


class TestAllClassLoss:
    def test_zero_head_is_log_c(self):
        rng = np.random.default_rng(8)
        for n_cls in (1, 3, 6):
            w = np.zeros((n_cls, 4))
            b = np.zeros(n_cls)
            batches = {(0, c): rng.standard_normal((4, 4))
                       for c in range(n_cls)}
            loss, _ = tap_loss(w, b, batches, {c: c for c in range(n_cls)})
            assert abs(loss - np.log(n_cls)) < 1e-12

    def test_single_class_zero(self):
        batches = {(0, 0): np.zeros((3, 4))}
        loss, _ = tap_loss(np.zeros((1, 4)), np.zeros(1), batches, {0: 0})
        assert loss == 0.0

    def test_class_outside_union(self):
        batches = {(0, 9): np.zeros((3, 4))}
        with pytest.raises(DataError):
            tap_loss(np.zeros((2, 4)), np.zeros(2), batches, {0: 0, 1: 1})

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        w = rng.standard_normal((4, 5)) * 0.3
        b = rng.standard_normal(4) * 0.1
        batches = {(i, 2 * i + j): rng.standard_normal((3, 5))
                   for i in range(2) for j in range(2)}
        c2r = {0: 0, 1: 1, 2: 2, 3: 3}
        loss, grads = tap_loss(w, b, batches, c2r)
        err = finite_diff_check(
            lambda p: tap_loss(p["head_w"], p["head_b"], batches, c2r)[0],
            {"head_w": w.copy(), "head_b": b.copy()},
            {"head_w": grads["head_w"], "head_b": grads["head_b"]}, seed=3)
        assert err < 1e-4
