"""LQR solver, product-of-experts fusion, and rollout behavior."""

import numpy as np
import pytest

from activelfd.control import (
    LinearSystem,
    Rollout,
    lqr_gain,
    make_lqt_expert,
    poe_fuse,
    rollout,
    single_integrator,
)
from activelfd.gaussians import GMM, Gaussian


def random_spd(rng, d, scale=1.0):
    a = rng.standard_normal((d, d))
    return scale * (a @ a.T + d * np.eye(d))


class TestLQRGain:
    def test_scalar_golden_ratio(self):
        # P = Q + P - P^2/(1+P) has fixed point P = (1+sqrt(5))/2
        sys = LinearSystem(np.eye(1), np.eye(1), dt=1.0)
        gain = lqr_gain(sys, np.eye(1), np.eye(1))
        p = (1 + np.sqrt(5)) / 2
        np.testing.assert_allclose(gain, [[p / (1 + p)]], rtol=1e-9)

    def test_vanishing_state_cost(self):
        sys = LinearSystem(0.8 * np.eye(2), np.eye(2), dt=1.0)
        gain = lqr_gain(sys, 1e-12 * np.eye(2), np.eye(2))
        assert np.max(np.abs(gain)) < 1e-6

    def test_random_system_closed_loop_stable(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            a = rng.standard_normal((4, 4))
            a = 1.2 * a / np.max(np.abs(np.linalg.eigvals(a)))
            b = rng.standard_normal((4, 2))
            sys = LinearSystem(a, b, dt=1.0)
            gain = lqr_gain(sys, np.eye(4), np.eye(2))
            radius = np.max(np.abs(np.linalg.eigvals(a - b @ gain)))
            assert radius < 1.0

    def test_matches_scipy_dare(self):
        from scipy.linalg import solve_discrete_are

        rng = np.random.default_rng(7)
        a = rng.standard_normal((3, 3)) * 0.9
        b = rng.standard_normal((3, 2))
        q = random_spd(rng, 3)
        r = random_spd(rng, 2)
        sys = LinearSystem(a, b, dt=1.0)
        gain = lqr_gain(sys, q, r)
        p_ref = solve_discrete_are(a, b, q, r)
        gain_ref = np.linalg.solve(r + b.T @ p_ref @ b, b.T @ p_ref @ a)
        np.testing.assert_allclose(gain, gain_ref, rtol=1e-7, atol=1e-9)

    def test_closed_loop_decay_rate(self):
        sys = single_integrator(dt=0.05)
        gain = lqr_gain(sys, np.eye(2), 10.0 * np.eye(2))
        closed = sys.A - sys.B @ gain
        rho = np.max(np.abs(np.linalg.eigvals(closed)))
        steps = int(np.ceil(10.0 / (1.0 - rho)))
        x = np.array([1.0, 0.0])
        for _ in range(steps):
            x = closed @ x
        assert np.linalg.norm(x) < 1e-3


class TestPoEFuse:
    def test_uninformative_expert_is_identity(self):
        rng = np.random.default_rng(11)
        w = rng.dirichlet(np.ones(3))
        comps = [Gaussian(rng.standard_normal(2), random_spd(rng, 2, 0.5)) for _ in range(3)]
        g = GMM(w, comps)
        expert = Gaussian(np.zeros(2), 1e12 * np.eye(2))
        fused = poe_fuse(g, expert)
        np.testing.assert_allclose(fused.weights, g.weights, atol=1e-3)
        for a, b in zip(fused.components, g.components):
            np.testing.assert_allclose(a.mean, b.mean, atol=1e-3)

    def test_single_component_reduces_to_product(self):
        from activelfd.gaussians import gaussian_product

        rng = np.random.default_rng(13)
        comp = Gaussian(rng.standard_normal(2), random_spd(rng, 2))
        expert = Gaussian(rng.standard_normal(2), random_spd(rng, 2))
        fused = poe_fuse(GMM(np.array([1.0]), [comp]), expert)
        prod, _ = gaussian_product(comp, expert)
        np.testing.assert_allclose(fused.components[0].mean, prod.mean, rtol=1e-12)
        np.testing.assert_allclose(fused.weights, [1.0])

    def test_pointwise_product_oracle(self):
        # fused density is proportional to policy(x) * expert(x) pointwise
        rng = np.random.default_rng(17)
        w = rng.dirichlet(np.ones(3))
        g = GMM(w, [Gaussian(rng.standard_normal(2), random_spd(rng, 2, 0.5)) for _ in range(3)])
        expert = Gaussian(rng.standard_normal(2) * 0.5, random_spd(rng, 2))
        fused = poe_fuse(g, expert)
        from activelfd.gaussians import gmm_log_density

        pts = rng.standard_normal((20, 2))
        log_ratio = (
            gmm_log_density(g, pts)
            + expert.log_density(pts)
            - gmm_log_density(fused, pts)
        )
        np.testing.assert_allclose(log_ratio, log_ratio[0], rtol=1e-6, atol=1e-8)

    def test_weights_normalized_and_covariance_shrinks(self):
        rng = np.random.default_rng(19)
        w = rng.dirichlet(np.ones(4))
        g = GMM(w, [Gaussian(rng.standard_normal(2), random_spd(rng, 2)) for _ in range(4)])
        expert = Gaussian(np.zeros(2), random_spd(rng, 2))
        fused = poe_fuse(g, expert)
        assert abs(fused.weights.sum() - 1.0) < 1e-14
        for orig, new in zip(g.components, fused.components):
            eig = np.linalg.eigvalsh(orig.covariance - new.covariance)
            assert np.all(eig > -1e-10)


class TestRollout:
    def _lqr_policy(self, sys, goal, cov_scale=1e-4):
        gain = lqr_gain(sys, np.eye(2), 10.0 * np.eye(2))
        cov = cov_scale * np.eye(2)

        def source(x):
            return GMM(np.array([1.0]), [Gaussian(gain @ (goal - x), cov)])

        return source

    def test_stable_policy_reaches_goal(self):
        sys = single_integrator(dt=0.05)
        goal = np.array([5.0, 5.0])
        source = self._lqr_policy(sys, goal)
        r = rollout(source, sys, np.array([0.0, 1.0]), horizon=5000,
                    mode="mean", goal=goal, eps=0.05)
        assert r.termination == "goal_reached"
        assert np.linalg.norm(r.states[-1] - goal) <= 0.05

    def test_zero_command_policy_stays_fixed(self):
        sys = single_integrator(dt=0.05)

        def source(x):
            return GMM(np.array([1.0]), [Gaussian(np.zeros(2), 1e-12 * np.eye(2))])

        x0 = np.array([1.0, 2.0])
        r = rollout(source, sys, x0, horizon=50, mode="mean",
                    goal=np.array([9.0, 9.0]), eps=0.01)
        assert r.termination == "max_steps"
        np.testing.assert_allclose(r.states[-1], x0, atol=1e-9)
        assert r.n_steps == 50

    def test_mean_mode_deterministic(self):
        sys = single_integrator(dt=0.05)
        goal = np.array([3.0, -2.0])
        source = self._lqr_policy(sys, goal)
        a = rollout(source, sys, np.zeros(2), horizon=200, mode="mean", goal=goal, eps=0.1)
        b = rollout(source, sys, np.zeros(2), horizon=200, mode="mean", goal=goal, eps=0.1)
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.commands, b.commands)

    def test_sample_mode_deterministic_given_seed(self):
        sys = single_integrator(dt=0.05)
        goal = np.array([3.0, -2.0])
        source = self._lqr_policy(sys, goal, cov_scale=0.05)
        a = rollout(source, sys, np.zeros(2), horizon=100, mode="sample",
                    goal=goal, eps=0.1, rng_seed=4)
        b = rollout(source, sys, np.zeros(2), horizon=100, mode="sample",
                    goal=goal, eps=0.1, rng_seed=4)
        np.testing.assert_array_equal(a.states, b.states)

    def test_divergence_bound_triggers(self):
        sys = single_integrator(dt=0.05)

        def source(x):
            return GMM(np.array([1.0]), [Gaussian(np.full(2, 100.0), 1e-9 * np.eye(2))])

        r = rollout(source, sys, np.zeros(2), horizon=10_000, mode="mean",
                    goal=np.array([-5.0, -5.0]), eps=0.01, divergence_bound=20.0)
        assert r.termination == "diverged"

    def test_policy_failure_marks_diverged(self):
        sys = single_integrator(dt=0.05)

        def source(x):
            raise ValueError("policy broke")

        r = rollout(source, sys, np.zeros(2), horizon=10, mode="mean")
        assert r.termination == "diverged"
        assert r.n_steps == 0

    def test_expert_policy_builder(self):
        sys = single_integrator(dt=0.05)
        expert = make_lqt_expert(sys, np.array([1.0, 1.0]), 0.1 * np.eye(2))
        g = expert.policy(np.zeros(2))
        assert g.dim == 2
        # command points toward the target
        assert g.mean @ np.array([1.0, 1.0]) > 0

    def test_states_commands_shape_contract(self):
        with pytest.raises(ValueError, match="one more row"):
            Rollout(np.zeros((3, 2)), np.zeros((3, 2)), "max_steps")
