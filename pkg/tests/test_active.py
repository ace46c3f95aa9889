"""Information-density cost, variational GMM fit, query selection."""

import numpy as np
import pytest

from activelfd.active import (
    ALConfig,
    CostTerm,
    Feasibility,
    InfoDensityCost,
    QFitConfig,
    VariationalGMM,
    al_step,
    fit_variational_gmm,
    info_density_logcost,
    info_density_logcost_batch,
    mvn_from_box,
    select_query,
    soft_limit_logcost,
    start_session,
)
from activelfd.bgmm import Dataset, default_prior, fit_vb
from activelfd.gaussians import GMM, Gaussian, gmm_log_density, renyi2_entropy


def mvn_cost(gaussian, weight=1.0):
    return InfoDensityCost(
        [CostTerm("similarity_log_density", weight, {"gaussian": gaussian})], dim=gaussian.dim
    )


@pytest.fixture(scope="module")
def small_posterior():
    rng = np.random.default_rng(99)
    x = rng.uniform(-2, 2, size=(300, 2))
    u = np.column_stack([x[:, 0], x[:, 1] * 0.5]) + 0.1 * rng.standard_normal((300, 2))
    return fit_vb(Dataset(np.column_stack([x, u]), 2, 2), 5, rng_seed=3)


class TestMvnFromBox:
    def test_unit_box_moments(self):
        g = mvn_from_box(np.zeros(2), np.ones(2))
        np.testing.assert_allclose(g.mean, [0.5, 0.5])
        np.testing.assert_allclose(np.diag(g.covariance), [1 / 12, 1 / 12])

    def test_symmetric_box_zero_mean(self):
        g = mvn_from_box(np.array([-3.0, -3.0]), np.array([3.0, 3.0]))
        np.testing.assert_allclose(g.mean, [0.0, 0.0])

    def test_monte_carlo_moment_oracle(self):
        rng = np.random.default_rng(11)
        samples = rng.uniform(0.0, 3.0, size=1_000_000)
        g = mvn_from_box(np.array([0.0]), np.array([3.0]))
        assert abs(samples.var() - g.covariance[0, 0]) / g.covariance[0, 0] < 0.01

    def test_degenerate_axis_rejected(self):
        with pytest.raises(ValueError, match="positive extent"):
            mvn_from_box(np.array([0.0, 1.0]), np.array([1.0, 1.0]))


class TestSoftLimit:
    def test_interior_saturation(self):
        lower, upper = np.zeros(2), np.array([4.0, 4.0])
        sharp = 10.0 / 4.0
        center = np.array([2.0, 2.0])
        assert abs(soft_limit_logcost(center, lower, upper, sharp)) < 1e-6

    def test_outside_by_two_widths(self):
        lower, upper = np.zeros(1), np.ones(1)
        value = soft_limit_logcost(np.array([3.0]), lower, upper, 10.0)
        assert value < -10.0

    def test_monotone_along_exit_ray(self):
        lower, upper = np.zeros(2), np.ones(2)
        ss = np.linspace(0.5, 4.0, 100)
        values = [
            soft_limit_logcost(np.array([0.5 + s, 0.5]), lower, upper, 5.0) for s in ss
        ]
        assert np.all(np.diff(values) < 0)

    def test_differentiable_at_limit(self):
        lower, upper = np.zeros(1), np.ones(1)
        h = 1e-6
        at = 1.0
        fd = (
            soft_limit_logcost(np.array([at + h]), lower, upper, 3.0)
            - soft_limit_logcost(np.array([at - h]), lower, upper, 3.0)
        ) / (2 * h)
        assert np.isfinite(fd)


class TestInfoDensityCost:
    def test_term_reorder_invariance(self, small_posterior):
        sim = CostTerm("similarity_log_density", 0.5,
                       {"gaussian": Gaussian(np.zeros(2), 4.0 * np.eye(2))})
        ent = CostTerm("epistemic_entropy", 1.0,
                       {"posterior": small_posterior, "mode": "epistemic"})
        a = InfoDensityCost([ent, sim], dim=2)
        b = InfoDensityCost([sim, ent], dim=2)
        x = np.array([0.7, -1.2])
        np.testing.assert_allclose(info_density_logcost(a, x), info_density_logcost(b, x))

    def test_additive_in_weights(self, small_posterior):
        g = Gaussian(np.zeros(2), 4.0 * np.eye(2))
        base = InfoDensityCost(
            [CostTerm("epistemic_entropy", 1.0, {"posterior": small_posterior}),
             CostTerm("similarity_log_density", 0.3, {"gaussian": g})], dim=2)
        doubled = InfoDensityCost(
            [CostTerm("epistemic_entropy", 1.0, {"posterior": small_posterior}),
             CostTerm("similarity_log_density", 0.6, {"gaussian": g})], dim=2)
        x = np.array([1.5, 0.5])
        delta = info_density_logcost(doubled, x) - info_density_logcost(base, x)
        np.testing.assert_allclose(delta, 0.3 * g.log_density(x), rtol=1e-12)

    def test_entropy_only_ordering(self, small_posterior):
        # beta = 0: ordering over a grid equals ordering of the entropy alone
        from activelfd.bgmm import epistemic_entropy_values

        cost = InfoDensityCost(
            [CostTerm("epistemic_entropy", 1.0, {"posterior": small_posterior}),
             CostTerm("similarity_log_density", 0.0,
                      {"gaussian": Gaussian(np.zeros(2), np.eye(2))}),
             CostTerm("soft_limit", 1e-12,
                      {"lower": -np.full(2, 50.0), "upper": np.full(2, 50.0),
                       "sharpness": 1.0})],
            dim=2)
        rng = np.random.default_rng(5)
        pts = rng.uniform(-3, 3, size=(30, 2))
        values = info_density_logcost_batch(cost, pts)
        entropies = epistemic_entropy_values(small_posterior, pts, mode="epistemic")
        np.testing.assert_array_equal(np.argsort(values), np.argsort(entropies))

    def test_beta_dominant_argmax_at_similarity_mean(self, small_posterior):
        g = Gaussian(np.array([0.5, -0.5]), 2.0 * np.eye(2))
        cost = InfoDensityCost(
            [CostTerm("epistemic_entropy", 1.0, {"posterior": small_posterior}),
             CostTerm("similarity_log_density", 1e5, {"gaussian": g})], dim=2)
        xs = np.linspace(-3, 3, 41)
        xx, yy = np.meshgrid(xs, xs, indexing="ij")
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        values = info_density_logcost_batch(cost, pts)
        best = pts[np.argmax(values)]
        assert np.linalg.norm(best - g.mean) < 0.3

    def test_requires_decaying_term(self, small_posterior):
        with pytest.raises(ValueError, match="decaying"):
            InfoDensityCost(
                [CostTerm("epistemic_entropy", 1.0, {"posterior": small_posterior})],
                dim=2)

    def test_at_most_one_entropy_term(self, small_posterior):
        ent = CostTerm("epistemic_entropy", 1.0, {"posterior": small_posterior})
        sim = CostTerm("similarity_log_density", 1.0,
                       {"gaussian": Gaussian(np.zeros(2), np.eye(2))})
        with pytest.raises(ValueError, match="at most one"):
            InfoDensityCost([ent, ent, sim], dim=2)


class TestFitVariationalGMM:
    def test_self_recovery_single_component(self):
        target = Gaussian(np.array([1.0, -0.5]), np.array([[0.5, 0.2], [0.2, 0.8]]))
        q = fit_variational_gmm(mvn_cost(target), 1, rng_seed=0)
        comp = q.gmm().components[0]
        assert np.all(np.abs(comp.mean - target.mean) < 0.05)
        rel = np.linalg.norm(comp.covariance - target.covariance) / np.linalg.norm(
            target.covariance)
        assert rel < 0.10

    def test_bimodal_recovery(self):
        targets = [Gaussian(np.array([-3.0, 0.0]), 0.3 * np.eye(2)),
                   Gaussian(np.array([3.0, 0.5]), 0.3 * np.eye(2))]
        mix = GMM(np.array([0.6, 0.4]), targets)
        cost = InfoDensityCost(
            [CostTerm("custom", 1.0, {
                "fn": lambda pts: gmm_log_density(mix, pts),
                "decaying": True,
                "init_gaussian": Gaussian(np.zeros(2), 9.0 * np.eye(2))})],
            dim=2)
        q = fit_variational_gmm(cost, 2, rng_seed=0)
        g = q.gmm()
        order = np.argsort([c.mean[0] for c in g.components])
        for idx, target in zip(order, targets):
            assert np.linalg.norm(g.components[idx].mean - target.mean) < 0.1
        np.testing.assert_allclose(np.sort(g.weights), [0.4, 0.6], atol=0.1)

    def test_constant_shift_invariance(self):
        # adding a constant to c(x) leaves the optimum unchanged
        target = Gaussian(np.array([0.5, 0.5]), np.array([[0.6, -0.1], [-0.1, 0.4]]))
        shifted = InfoDensityCost(
            [CostTerm("similarity_log_density", 1.0, {"gaussian": target}),
             CostTerm("custom", 1.0, {"fn": lambda pts: np.full(pts.shape[0], 7.0)})],
            dim=2)
        for seed in (0, 1, 2):
            qa = fit_variational_gmm(mvn_cost(target), 1, rng_seed=seed)
            qb = fit_variational_gmm(shifted, 1, rng_seed=seed)
            assert np.all(np.abs(qa.means[0] - qb.means[0]) < 0.05)

    def test_similarity_dominated_entropy(self):
        # q collapses toward the similarity MVN: H2 within 0.5 nat of analytic
        sim = mvn_from_box(np.zeros(2), np.array([6.0, 4.0]))
        q = fit_variational_gmm(
            mvn_cost(sim), 3,
            config=QFitConfig(steps=1500, samples_per_component=32), rng_seed=1)
        analytic = (renyi2_entropy(GMM(np.array([1.0]),
                                       [Gaussian(sim.mean, sim.covariance)])))
        assert abs(renyi2_entropy(q.gmm()) - analytic) < 0.5

    def test_deterministic_given_seed(self):
        target = Gaussian(np.zeros(2), np.eye(2))
        cfg = QFitConfig(steps=100, samples_per_component=8)
        a = fit_variational_gmm(mvn_cost(target), 2, config=cfg, rng_seed=7)
        b = fit_variational_gmm(mvn_cost(target), 2, config=cfg, rng_seed=7)
        np.testing.assert_array_equal(a.means, b.means)
        np.testing.assert_array_equal(a.logits, b.logits)
        np.testing.assert_array_equal(a.tril_raw, b.tril_raw)

    def test_divergence_reported_with_step(self):
        bad = InfoDensityCost(
            [CostTerm("similarity_log_density", 1.0,
                      {"gaussian": Gaussian(np.zeros(1), np.eye(1))}),
             CostTerm("custom", 1.0,
                      {"fn": lambda pts: np.full(pts.shape[0], np.nan)})],
            dim=1)
        with pytest.raises(RuntimeError, match="step 0"):
            fit_variational_gmm(bad, 1, config=QFitConfig(steps=10), rng_seed=0)

    def test_warm_start_round_trip(self):
        target = Gaussian(np.zeros(2), np.eye(2))
        cfg = QFitConfig(steps=50, samples_per_component=8)
        q0 = fit_variational_gmm(mvn_cost(target), 2, config=cfg, rng_seed=0)
        q1 = fit_variational_gmm(mvn_cost(target), 2, init=q0, config=cfg, rng_seed=1)
        assert q1.k == 2
        back = VariationalGMM.from_dict(q1.to_dict())
        np.testing.assert_array_equal(back.means, q1.means)


class TestSelectQuery:
    def _q(self, weights, means):
        k = len(weights)
        logits = np.log(np.asarray(weights))
        tril = np.zeros((k, 2, 2))
        tril[:, [0, 1], [0, 1]] = np.log(0.3)
        return VariationalGMM(logits, np.asarray(means, dtype=float), tril)

    def test_argmax_weight_mean(self):
        q = self._q([0.7, 0.3], [[1.0, 2.0], [-1.0, -2.0]])
        np.testing.assert_array_equal(select_query(q), [1.0, 2.0])

    def test_tie_breaks_to_lowest_index(self):
        q = self._q([0.5, 0.5], [[1.0, 2.0], [-1.0, -2.0]])
        np.testing.assert_array_equal(select_query(q), [1.0, 2.0])

    def test_projector_applied_when_infeasible(self):
        q = self._q([1.0], [[5.0, 5.0]])
        feas = Feasibility(
            predicate=lambda p: p[0] < 2.0,
            project=lambda p: np.array([2.0, p[1]]),
        )
        np.testing.assert_array_equal(select_query(q, feas), [2.0, 5.0])

    def test_sample_mode_from_top_component(self):
        q = self._q([0.9, 0.1], [[10.0, 10.0], [-10.0, -10.0]])
        pt = select_query(q, mode="sample", rng_seed=3)
        assert np.linalg.norm(pt - [10.0, 10.0]) < 3.0

    def test_grid_projection_oracle(self):
        from activelfd.world import collides, collides_batch, default_world, nearest_free_point

        world = default_world()
        inside = 0.5 * (world.obstacles[0].lo + world.obstacles[0].hi)
        q = self._q([1.0], [inside])
        feas = Feasibility(
            predicate=lambda p: not collides(world, p),
            project=lambda p: nearest_free_point(world, p),
        )
        point = select_query(q, feas)
        assert not collides(world, point)
        xs = np.linspace(world.bounds.lo[0], world.bounds.hi[0], 200)
        xx, yy = np.meshgrid(xs, xs, indexing="ij")
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        free = pts[~collides_batch(world, pts)]
        best = np.min(np.linalg.norm(free - inside, axis=1))
        np.testing.assert_allclose(np.linalg.norm(point - inside), best, rtol=1e-12)


class TestALStep:
    def _session(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-1, 1, size=(150, 1))
        u = 0.5 * x + 0.05 * rng.standard_normal((150, 1))
        data = Dataset(np.column_stack([x, u]), 1, 1)
        prior = default_prior(data.points)
        sim = mvn_from_box(np.array([-2.0]), np.array([2.0]))
        cfg = ALConfig(
            k_policy=3, k_q=2, seed=0,
            q_fit=QFitConfig(steps=120, samples_per_component=8),
            q_fit_warm=QFitConfig(steps=60, samples_per_component=8),
        )
        return start_session(data, prior, sim, cfg)

    def test_failed_teacher_keeps_dataset(self):
        session = self._session()

        def empty_teacher(query):
            return None

        after = al_step(session, empty_teacher)
        assert after.history[-1].failed
        assert after.dataset.n == session.dataset.n
        assert after.history[-1].iteration == 1
        assert len(after.history) == len(session.history) + 1

    def test_successful_step_appends(self):
        from activelfd.world import Demonstration

        session = self._session()

        def teacher(query):
            states = np.linspace(query[0], 0.0, 11)[:, None]
            cmds = np.vstack([np.diff(states, axis=0) / 0.05,
                              [(states[-1] - states[-2]) / 0.05]])
            return Demonstration(states, cmds, dt=0.05, source="scripted", query=query)

        after = al_step(session, teacher)
        assert not after.history[-1].failed
        assert after.dataset.n == session.dataset.n + 11
        assert after.history[-1].entropy == renyi2_entropy(after.q.gmm())
        # original session untouched
        assert len(session.history) == 1

    def test_history_iterations_consecutive(self):
        session = self._session()

        def empty_teacher(query):
            return None

        for _ in range(3):
            session = al_step(session, empty_teacher)
        assert [e.iteration for e in session.history] == [0, 1, 2, 3]
