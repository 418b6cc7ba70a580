import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optbias.optimizers import (
    Algo,
    AdamState,
    HyperParams,
    adam_step,
    run_epoch,
    sgdm_step,
)
from optbias.problems import PartitionSpec, ShiftedQuadratic


class TestAdamStep:
    def test_first_step_bias_correction_cancels(self):
        # with eps negligible the first update is -eta * g / |g| regardless of betas
        hp = HyperParams(eta=0.1, beta1=0.9, beta2=0.999, eps=1e-18)
        state, delta = adam_step(AdamState.zeros(1), np.array([3.0]), hp)
        assert delta[0] == pytest.approx(-0.1, abs=1e-12)
        assert state.t == 1

    def test_zero_gradient_never_moves(self):
        hp = HyperParams(eta=0.1)
        state = AdamState.zeros(3)
        for _ in range(5):
            state, delta = adam_step(state, np.zeros(3), hp)
            np.testing.assert_array_equal(delta, 0.0)
        np.testing.assert_array_equal(state.m, 0.0)
        np.testing.assert_array_equal(state.v, 0.0)

    def test_constant_gradient_gives_normalized_steps(self):
        hp = HyperParams(eta=0.1, beta1=0.9, beta2=0.999, eps=1e-18)
        theta = np.zeros(1)
        state = AdamState.zeros(1)
        for _ in range(2):
            state, delta = adam_step(state, np.array([3.0]), hp)
            theta = theta + delta
        assert theta[0] == pytest.approx(-0.2, abs=1e-10)

    @given(
        g=st.lists(
            st.floats(min_value=0.25, max_value=5.0), min_size=1, max_size=4
        ),
        signs=st.lists(st.sampled_from([-1.0, 1.0]), min_size=4, max_size=4),
    )
    @settings(max_examples=40, deadline=None)
    def test_memoryless_limit_is_sign_step(self, g, signs):
        grad = np.array([v * s for v, s in zip(g, signs)])
        hp = HyperParams(eta=0.2, beta1=0.0, beta2=0.0, eps=1e-18)
        _, delta = adam_step(AdamState.zeros(len(grad)), grad, hp)
        np.testing.assert_allclose(delta, -hp.eta * np.sign(grad), atol=1e-12)

    def test_nonfinite_gradient_rejected(self):
        with pytest.raises(ValueError, match="nonfinite"):
            adam_step(AdamState.zeros(1), np.array([np.nan]), HyperParams(eta=0.1))

    def test_negative_second_moment_rejected(self):
        with pytest.raises(ValueError, match="nonnegative"):
            AdamState(m=np.zeros(1), v=np.array([-1.0]), t=0)


class TestSgdmStep:
    def test_zero_momentum_is_plain_sgd(self):
        hp = HyperParams(eta=0.3, beta=0.0)
        vel, delta = sgdm_step(np.zeros(2), np.array([1.0, -2.0]), hp)
        np.testing.assert_allclose(delta, [-0.3, 0.6], atol=1e-15)

    def test_geometric_accumulation(self):
        hp = HyperParams(eta=0.1, beta=0.5)
        vel = np.zeros(1)
        vel, _ = sgdm_step(vel, np.array([1.0]), hp)
        assert vel[0] == pytest.approx(1.0)
        vel, _ = sgdm_step(vel, np.array([1.0]), hp)
        assert vel[0] == pytest.approx(1.5)

    def test_velocity_limit_under_constant_gradient(self):
        hp = HyperParams(eta=0.1, beta=0.7)
        vel = np.zeros(1)
        for _ in range(200):
            vel, _ = sgdm_step(vel, np.array([2.0]), hp)
        assert vel[0] == pytest.approx(2.0 / (1.0 - 0.7), rel=1e-12)


class TestRunEpoch:
    def test_zero_step_size_keeps_trajectory_constant(self, quad1236):
        part = PartitionSpec.identity(2, 2)
        hp = HyperParams(eta=0.0)
        traj = run_epoch(quad1236, part, hp, np.array([0.5]), Algo.ADAM)
        np.testing.assert_array_equal(traj.points, 0.5 * np.ones((3, 1)))

    def test_single_batch_equals_full_batch_adam(self, quad1236, rng):
        hp = HyperParams(eta=0.05)
        theta0 = np.array([0.2])
        a = run_epoch(quad1236, PartitionSpec.identity(1, 4), hp, theta0, Algo.ADAM)
        b = run_epoch(
            quad1236, PartitionSpec.random(1, 4, rng), hp, theta0, Algo.ADAM
        )
        np.testing.assert_array_equal(a.points, b.points)

    def test_two_adam_steps_match_hand_rolled_recursion(self, quad1236):
        # independent literal evaluation of the three-line update
        eta, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        theta = 0.0
        m = v = 0.0
        for t, batch_center in enumerate([1.5, 4.5]):
            g = theta - batch_center
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            m_hat = m / (1 - b1 ** (t + 1))
            v_hat = v / (1 - b2 ** (t + 1))
            theta = theta - eta * m_hat / math.sqrt(v_hat + eps)

        part = PartitionSpec.identity(2, 2)
        hp = HyperParams(eta=eta, beta1=b1, beta2=b2, eps=eps)
        traj = run_epoch(quad1236, part, hp, np.zeros(1), Algo.ADAM, n_steps=2)
        assert traj.points[-1, 0] == pytest.approx(theta, abs=1e-14)

    def test_single_epoch_step_cap(self, quad1236):
        part = PartitionSpec.identity(2, 2)
        with pytest.raises(ValueError, match="at most m=2"):
            run_epoch(quad1236, part, HyperParams(eta=0.1), np.zeros(1), Algo.ADAM, n_steps=5)

    def test_multi_epoch_needs_rng(self, quad1236):
        part = PartitionSpec.identity(2, 2)
        with pytest.raises(ValueError, match="rng"):
            run_epoch(quad1236, part, HyperParams(eta=0.1), np.zeros(1), Algo.ADAM, n_epochs=2)

    def test_deterministic_given_seed(self, quad1236):
        part = PartitionSpec.identity(2, 2)
        hp = HyperParams(eta=0.05, beta=0.6)
        runs = [
            run_epoch(
                quad1236,
                part,
                hp,
                np.zeros(1),
                Algo.SGDM,
                n_epochs=3,
                rng=np.random.default_rng(7),
            )
            for _ in range(2)
        ]
        np.testing.assert_array_equal(runs[0].points, runs[1].points)

    def test_divergence_flagged_and_truncated(self):
        # SGDM with eta far above the stability threshold on a unit quadratic
        problem = ShiftedQuadratic.generate(32, 1, 0, spread=0.5)
        part = PartitionSpec.identity(32, 1)
        hp = HyperParams(eta=3.0, beta=0.0)
        traj = run_epoch(problem, part, hp, np.array([50.0]), Algo.SGDM)
        assert traj.diverged
        assert traj.points.shape[0] <= 33


class TestTrajectorySerialization:
    def test_csv_schema_and_roundtrip(self, quad1236, tmp_path):
        part = PartitionSpec.identity(2, 2)
        traj = run_epoch(quad1236, part, HyperParams(eta=0.1), np.zeros(1), Algo.ADAM)
        path = tmp_path / "traj.csv"
        traj.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# schema: optbias.trajectory.v1")
        assert lines[1] == "t,theta_1"
        values = [float(line.split(",")[1]) for line in lines[2:]]
        np.testing.assert_allclose(values, traj.points[:, 0], atol=0)

    def test_json_roundtrip(self, quad1236, tmp_path):
        part = PartitionSpec.identity(2, 2)
        traj = run_epoch(quad1236, part, HyperParams(eta=0.1), np.zeros(1), Algo.ADAM)
        path = tmp_path / "traj.json"
        traj.to_json(path)
        payload = json.loads(path.read_text())
        assert payload["schema"] == "optbias.trajectory.v1"
        np.testing.assert_allclose(np.asarray(payload["points"]), traj.points, atol=0)


class TestHyperParams:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"eta": -0.1},
            {"eta": 0.1, "beta1": 1.0},
            {"eta": 0.1, "beta2": -0.2},
            {"eta": 0.1, "beta": 1.5},
            {"eta": 0.1, "eps": 0.0},
        ],
    )
    def test_invalid_ranges_rejected(self, kwargs):
        with pytest.raises(ValueError):
            HyperParams(**kwargs)
