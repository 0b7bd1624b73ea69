import numpy as np
import pytest
from hypothesis import given, strategies as st

from adaptive_pinn.net import MLP, ParamGrad
from adaptive_pinn.optimizer import (EXAMPLE1_SCHEDULE, AdamState, LrSchedule, adam_step,
                                     clip_gradient, lr_for_slice)


def scalar_net(theta=0.0):
    """A model whose only parameters are one weight (theta) and a zero bias."""
    return MLP((1, 1), (np.array([[theta]]),), (np.zeros(1),))


def grad_like(mlp, values):
    return ParamGrad.from_flat(mlp.layer_sizes, np.asarray(values, dtype=float))


class TestClip:
    def test_small_unchanged(self):
        g = grad_like(scalar_net(), [0.3, 0.4])
        assert clip_gradient(g, 1.0).flat().tolist() == [0.3, 0.4]

    def test_large_scaled(self):
        g = grad_like(scalar_net(), [0.0, 4.0])
        c = clip_gradient(g, 1.0)
        np.testing.assert_allclose(c.flat(), [0.0, 1.0])
        assert c.norm() == pytest.approx(1.0)

    def test_zero(self):
        assert np.all(clip_gradient(grad_like(scalar_net(), [0.0, 0.0]), 1.0).flat() == 0)

    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=2), st.floats(0.01, 10))
    def test_idempotent(self, vals, max_norm):
        once = clip_gradient(grad_like(scalar_net(), vals), max_norm)
        twice = clip_gradient(once, max_norm)
        np.testing.assert_allclose(twice.flat(), once.flat(), rtol=1e-12, atol=0)
        assert once.norm() <= max_norm * (1 + 1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            clip_gradient(grad_like(scalar_net(), [1.0, 1.0]), 0.0)


class TestAdam:
    def test_first_step(self):
        m = scalar_net()
        st0 = AdamState.zeros(m)
        new, st1 = adam_step(m, grad_like(m, [1.0, 0.0]), st0, 1e-3)
        assert new.weights[0][0, 0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)
        assert new.weights[0][0, 0] == pytest.approx(-9.99999994e-4, rel=1e-8)
        assert st1.step_count == 1 and st0.step_count == 0

    def test_zero_gradient(self):
        m = scalar_net(0.7)
        new, _ = adam_step(m, grad_like(m, [0.0, 0.0]), AdamState.zeros(m), 1e-3)
        assert new.flat().tolist() == m.flat().tolist()

    def test_equal_gradients_equal_updates(self):
        m = scalar_net(0.0)
        new, _ = adam_step(m, grad_like(m, [0.5, 0.5]), AdamState.zeros(m), 1e-2)
        assert new.flat()[0] == new.flat()[1] != 0

    @pytest.mark.parametrize("a", [3.0, 10.0])
    def test_quadratic_converges_monotonically(self, a):
        # 1/2 (theta - a)^2 from theta = 0 with lr 1e-2: the distance never grows after burn-in
        m = scalar_net()
        state = AdamState.zeros(m)
        dist = []
        for _ in range(1000):
            m, state = adam_step(m, grad_like(m, m.flat() - a), state, 1e-2)
            dist.append(np.abs(m.flat() - a).max())
        dist = np.array(dist[50:])
        assert np.all(np.diff(dist) <= 0)
        assert dist[-1] < a

    def test_non_finite_gradient(self):
        m = scalar_net()
        with pytest.raises(FloatingPointError):
            adam_step(m, grad_like(m, [np.nan, 0.0]), AdamState.zeros(m), 1e-3)

    def test_bad_inputs(self):
        m = scalar_net()
        with pytest.raises(ValueError):
            adam_step(m, grad_like(m, [1.0, 0.0]), AdamState.zeros(m), 0.0)
        other = MLP((2, 1), (np.zeros((1, 2)),), (np.zeros(1),))
        with pytest.raises(ValueError):
            adam_step(m, grad_like(m, [1.0, 0.0]), AdamState.zeros(other), 1e-3)


class TestSchedule:
    @pytest.mark.parametrize("s, lr", [(0.1, 1e-3), (0.2, 1e-3), (0.3, 5e-4), (0.4, 5e-4),
                                       (0.5, 1e-4), (0.6, 1e-4), (0.7, 5e-5), (0.9, 1e-5),
                                       (1.0, 1e-5)])
    def test_example1(self, s, lr):
        assert lr_for_slice(EXAMPLE1_SCHEDULE, s) == lr

    def test_accumulated_slice_times(self):
        # 3 * 0.1 is 0.30000000000000004 and must still land in the 0.4 bucket
        assert lr_for_slice(EXAMPLE1_SCHEDULE, 3 * 0.1) == 5e-4
        assert lr_for_slice(EXAMPLE1_SCHEDULE, 0.1 + 0.1) == 1e-3

    def test_past_last_threshold_keeps_last_rate(self):
        assert lr_for_slice(EXAMPLE1_SCHEDULE, 5.0) == 1e-5

    @pytest.mark.parametrize("steps", [(), ((0.5, 1e-3), (0.2, 1e-4)), ((0.5, -1.0),)])
    def test_validation(self, steps):
        with pytest.raises(ValueError):
            LrSchedule(steps)

    def test_round_trip(self):
        assert LrSchedule(EXAMPLE1_SCHEDULE.to_list()) == EXAMPLE1_SCHEDULE
