import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optbias.problems import (
    Logistic2D,
    PartitionSpec,
    RandomPSDQuadratic,
    ShiftedQuadratic,
    TeacherStudentMLP,
    all_minibatch_noise,
    batch_loss_grad,
    empirical_covariance,
    full_loss_grad,
    minibatch_noise,
    problem_from_config,
    replicated,
    scale_noise,
)


def fd_gradient(f, theta, h=1e-5):
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (f(up) - f(dn)) / (2.0 * h)
    return grad


def fd_hessian(gfun, theta, h=1e-5):
    cols = []
    for i in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        cols.append((gfun(up) - gfun(dn)) / (2.0 * h))
    return np.stack(cols, axis=1)


def all_families(seed=0):
    return [
        ShiftedQuadratic.generate(6, 3, seed),
        RandomPSDQuadratic.generate(6, 3, seed + 1),
        Logistic2D.generate(8, seed + 2),
        TeacherStudentMLP.generate(6, 2, 3, seed + 3),
    ]


class TestDerivativeOracles:
    def test_logistic_full_gradient_matches_finite_differences(self):
        problem = Logistic2D.generate(8, 21)
        theta = np.array([0.3, -0.2])

        def full_value(th):
            return np.mean([problem.per_sample_value(p, th) for p in range(8)])

        fd = fd_gradient(full_value, theta)
        analytic = full_loss_grad(problem, theta).grad
        assert np.max(np.abs(fd - analytic)) <= 1e-6 * max(1.0, np.max(np.abs(analytic)))

    def test_every_family_matches_finite_differences_at_random_points(self, rng):
        for problem in all_families():
            for trial in range(20):
                theta = rng.normal(size=problem.dim)
                p = trial % problem.n_samples
                g = problem.per_sample_grad(p, theta)
                h = problem.per_sample_hess(p, theta)
                g_fd = fd_gradient(lambda th: problem.per_sample_value(p, th), theta)
                h_fd = fd_hessian(lambda th: problem.per_sample_grad(p, th), theta)
                scale_g = max(1.0, np.max(np.abs(g)))
                scale_h = max(1.0, np.max(np.abs(h)))
                assert np.max(np.abs(g - g_fd)) <= 1e-6 * scale_g, problem.family_id
                assert np.max(np.abs(h - h_fd)) <= 1e-6 * scale_h, problem.family_id

    def test_hessians_symmetric(self, rng):
        for problem in all_families(1):
            theta = rng.normal(size=problem.dim)
            h = problem.per_sample_hess(0, theta)
            np.testing.assert_allclose(h, h.T, atol=1e-12)


class TestFullLoss:
    def test_shifted_quadratic_gradient_is_theta_minus_mean(self, quad1236):
        full = full_loss_grad(quad1236, np.zeros(1))
        assert full.grad[0] == pytest.approx(-3.0, abs=1e-14)

    def test_gradient_vanishes_at_empirical_minimizer(self, quad1236):
        full = full_loss_grad(quad1236, np.array([3.0]))
        np.testing.assert_allclose(full.grad, 0.0, atol=1e-14)

    def test_dimension_mismatch_rejected(self, quad1236):
        with pytest.raises(ValueError, match="shape"):
            full_loss_grad(quad1236, np.zeros(2))

    def test_sign_and_l1_gradient_exposed(self):
        problem = RandomPSDQuadratic.generate(5, 3, 2)
        theta = np.array([1.0, -2.0, 0.5])
        full = full_loss_grad(problem, theta)
        np.testing.assert_array_equal(full.sign, np.sign(full.grad))
        expected = np.array(
            [sum(full.sign[i] * full.hess[i, j] for i in range(3)) for j in range(3)]
        )
        np.testing.assert_allclose(full.l1_grad_norm_gradient(), expected, atol=1e-14)


class TestMinibatchNoise:
    def test_single_batch_noise_is_zero(self, quad1236):
        part = PartitionSpec.identity(1, 4)
        noise = minibatch_noise(quad1236, part, 0, np.zeros(1))
        assert noise.value == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(noise.grad, 0.0, atol=1e-15)
        np.testing.assert_allclose(noise.hess, 0.0, atol=1e-15)

    def test_hand_enumerated_gradient_noise(self, quad1236, identity_partition_22):
        # batch {1,2} mean gradient at 0 is -1.5, full mean is -3: noise +1.5
        noise = minibatch_noise(quad1236, identity_partition_22, 0, np.zeros(1))
        assert noise.grad[0] == pytest.approx(1.5, abs=1e-14)

    def test_noise_averages_to_zero_over_batches(self, rng):
        problem = RandomPSDQuadratic.generate(8, 2, 3)
        part = PartitionSpec.random(4, 2, rng)
        theta = rng.normal(size=2)
        noises = all_minibatch_noise(problem, part, theta)
        np.testing.assert_allclose(
            np.mean([n.grad for n in noises], axis=0), 0.0, atol=1e-12
        )
        np.testing.assert_allclose(
            np.mean([n.hess for n in noises], axis=0), 0.0, atol=1e-12
        )
        assert abs(np.mean([n.value for n in noises])) <= 1e-12

    def test_batch_index_out_of_range(self, quad1236, identity_partition_22):
        with pytest.raises(ValueError, match="batch index"):
            minibatch_noise(quad1236, identity_partition_22, 2, np.zeros(1))

    @given(perm_seed=st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_batch_mean_identity_for_every_permutation(self, perm_seed):
        problem = ShiftedQuadratic.generate(6, 2, 0)
        part = PartitionSpec.random(3, 2, np.random.default_rng(perm_seed))
        theta = np.array([0.7, -1.1])
        full = full_loss_grad(problem, theta)
        mean_batch = np.mean(
            [batch_loss_grad(problem, part, k, theta)[0] for k in range(3)]
        )
        assert abs(mean_batch - full.value) <= 1e-12


class TestEmpiricalCovariance:
    def test_identical_samples_give_zero_covariance(self):
        problem = ShiftedQuadratic(np.full((5, 2), 1.3))
        cov = empirical_covariance(problem, np.zeros(2))
        np.testing.assert_allclose(cov.sigma, 0.0, atol=1e-15)

    def test_hand_variance(self, quad1236):
        cov = empirical_covariance(quad1236, np.zeros(1))
        assert cov.sigma[0, 0] == pytest.approx(3.5, abs=1e-12)

    def test_gradient_of_diagonal_vanishes_for_constant_deviations(self, quad1236):
        cov = empirical_covariance(quad1236, np.array([0.4]))
        np.testing.assert_allclose(cov.grad_sigma_diag, 0.0, atol=1e-15)

    def test_gradient_of_diagonal_matches_finite_differences(self, rng):
        problem = RandomPSDQuadratic.generate(6, 3, 5)
        theta = rng.normal(size=3)

        def sigma_diag(th):
            return np.diag(empirical_covariance(problem, th).sigma)

        for i in range(3):
            up, dn = theta.copy(), theta.copy()
            up[i] += 1e-6
            dn[i] -= 1e-6
            fd = (sigma_diag(up) - sigma_diag(dn)) / 2e-6
            np.testing.assert_allclose(
                empirical_covariance(problem, theta).grad_sigma_diag[i], fd, atol=1e-6
            )

    def test_sigma_positive_semidefinite(self, rng):
        for problem in all_families(7):
            theta = rng.normal(size=problem.dim)
            sigma = empirical_covariance(problem, theta).sigma
            assert np.linalg.eigvalsh(sigma).min() >= -1e-10


class TestScaleNoise:
    def test_zero_scale_makes_batches_equal_full(self, quad1236, identity_partition_22):
        flat = scale_noise(quad1236, 0.0)
        theta = np.array([0.2])
        full = full_loss_grad(flat, theta)
        for k in range(2):
            value, _ = batch_loss_grad(flat, identity_partition_22, k, theta)
            assert value == pytest.approx(full.value, abs=1e-14)

    def test_unit_scale_is_identity(self, quad1236):
        same = scale_noise(quad1236, 1.0)
        theta = np.array([0.3])
        for p in range(4):
            assert same.per_sample_value(p, theta) == pytest.approx(
                quad1236.per_sample_value(p, theta), abs=1e-14
            )

    def test_covariance_scales_quadratically(self, quad1236):
        half = scale_noise(quad1236, 0.5)
        cov = empirical_covariance(half, np.zeros(1))
        assert cov.sigma[0, 0] == pytest.approx(0.875, abs=1e-12)

    def test_full_loss_unchanged(self, quad1236):
        scaled = scale_noise(quad1236, 0.3)
        theta = np.array([-0.7])
        np.testing.assert_allclose(
            full_loss_grad(scaled, theta).value,
            full_loss_grad(quad1236, theta).value,
            atol=1e-14,
        )

    def test_negative_scale_rejected(self, quad1236):
        with pytest.raises(ValueError, match="nonnegative"):
            scale_noise(quad1236, -0.1)

    def test_nested_scaling_multiplies(self, quad1236):
        twice = scale_noise(scale_noise(quad1236, 0.5), 0.5)
        cov = empirical_covariance(twice, np.zeros(1))
        assert cov.sigma[0, 0] == pytest.approx(3.5 * 0.0625, abs=1e-12)


class TestPartitionSpec:
    def test_rejects_non_permutation(self):
        with pytest.raises(ValueError, match="permutation"):
            PartitionSpec(2, 2, (0, 1, 2, 2))

    def test_rejects_wrong_size(self):
        with pytest.raises(ValueError, match="permutation"):
            PartitionSpec(2, 2, (0, 1, 2))

    def test_batch_indices(self):
        part = PartitionSpec(2, 2, (3, 1, 0, 2))
        assert part.batch_indices(0) == (3, 1)
        assert part.batch_indices(1) == (0, 2)

    def test_partition_must_cover_problem(self, quad1236):
        with pytest.raises(ValueError, match="covers"):
            batch_loss_grad(quad1236, PartitionSpec.identity(3, 1), 0, np.zeros(1))


class TestReplication:
    def test_replication_preserves_full_loss_and_covariance(self, quad1236):
        doubled = replicated(quad1236, 2)
        theta = np.array([0.9])
        assert doubled.n_samples == 8
        np.testing.assert_allclose(
            full_loss_grad(doubled, theta).grad,
            full_loss_grad(quad1236, theta).grad,
            atol=1e-14,
        )
        np.testing.assert_allclose(
            empirical_covariance(doubled, theta).sigma,
            empirical_covariance(quad1236, theta).sigma,
            atol=1e-14,
        )


class TestConfigConstruction:
    def test_deterministic_given_seed(self):
        cfg = {"family": "random_psd_quadratic", "n_samples": "6", "dim": "3", "seed": "11"}
        a = problem_from_config(cfg)
        b = problem_from_config(cfg)
        theta = np.ones(3)
        assert a.per_sample_value(2, theta) == b.per_sample_value(2, theta)

    def test_unknown_family_rejected(self):
        with pytest.raises(ValueError, match="unknown problem family"):
            problem_from_config({"family": "nope", "n_samples": "4", "seed": "0"})

    def test_missing_key_reported(self):
        with pytest.raises(ValueError, match="n_samples"):
            problem_from_config({"family": "logistic_2d", "seed": "0"})
