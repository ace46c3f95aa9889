"""Batch experiments: initial fit, active and random campaigns, grids, rollouts.

Everything here is a pure function of (config, world fixture, seeds); repeated
runs produce byte-identical output files.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .active import (
    ALConfig,
    ALSession,
    CostTerm,
    Feasibility,
    QFitConfig,
    al_step,
    mvn_from_box,
    select_query,
    start_session,
)
from .bgmm import (
    BGMMPosterior,
    Dataset,
    FitConfig,
    conditional_policy,
    decompose_uncertainty,
    default_prior,
    epistemic_entropy_inputs,
    epistemic_entropy_values,
    posterior_predictive,
)
from .control import LQTExpert, make_lqt_expert, poe_fuse, rollout, single_integrator
from .gaussians import GMM, moment_match_t, renyi2_entropy
from .active import info_density_logcost_batch
from .world import (
    TeacherOracle,
    World2D,
    collides,
    default_world,
    evaluate_rollout,
    load_world,
    nearest_free_point,
    scripted_demo,
    uniform_free_point,
)

__all__ = [
    "ExperimentConfig",
    "run_active",
    "run_random_baseline",
    "dump_uncertainty_grid",
    "run_rollouts",
    "fit_initial",
    "build_session",
    "should_stop",
    "poe_policy_source",
    "bgmm_policy_source",
    "poe_policy_batch",
    "bgmm_policy_batch",
    "goal_expert",
    "make_teacher",
    "initial_dataset",
]

REPORT_SCHEMA_VERSION = 1

# held-out test starts for post-learning competence checks
DEFAULT_TEST_STARTS = (
    (2.4, 2.4),
    (6.6, 1.2),
    (11.2, 1.4),
    (11.2, 10.6),
    (6.0, 9.6),
)

# clustered near the left edge so one connected unexplored region remains,
# mirroring the initial-demonstrations layout of the reaching figure
DEFAULT_INITIAL_STARTS = (
    (0.6, 1.8),
    (0.6, 4.2),
    (0.6, 6.6),
    (0.6, 9.0),
    (1.2, 0.7),
)


@dataclass
class ExperimentConfig:
    """Every paper-unspecified constant, in one auditable place."""

    world: str = ""  # empty: packaged reaching fixture
    out: str = "out"
    seeds: tuple = (0, 1, 2, 3, 4)
    iterations: int = 10
    k_policy: int = 8
    k_q: int = 10
    alpha0: float = 1e-3
    beta0: float = 1.0
    beta: float = -1.0  # information-density weight; <0: auto-scale
    temperature: float = 1.0
    rho: float = 0.3  # uncertainty-reduction stopping fraction (reported)
    entropy_mode: str = "epistemic"
    # scripted teacher
    teacher_speed: float = 1.0
    teacher_noise_std: float = 0.05
    teacher_inflation: float = 0.45
    demo_max_length: float = 0.0  # >0: truncate taught paths (partial demos)
    data_stride: int = 1  # fit on every n-th demonstration row
    dt: float = 0.05
    initial_starts: tuple = DEFAULT_INITIAL_STARTS
    # variational q fit
    q_steps: int = 800
    q_steps_warm: int = 300
    q_samples: int = 24
    q_samples_warm: int = 16
    q_lr: float = 0.01
    q_logit_lr_scale: float = 0.25
    q_fd_scheme: str = "forward"
    # bounds soft-limit term
    limit_weight: float = 1.0
    limit_sharpness: float = 2.0
    # rollouts
    horizon: int = 1500
    rollouts_per_start: int = 10
    test_starts: tuple = DEFAULT_TEST_STARTS
    expert_var_scale: float = 0.5  # expert command variance / median aleatoric variance
    grid_resolution: int = 100

    def load_world(self) -> World2D:
        return load_world(self.world) if self.world else default_world()

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        d["initial_starts"] = [list(s) for s in self.initial_starts]
        d["test_starts"] = [list(s) for s in self.test_starts]
        return d


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot render {type(v)} as TOML")


def config_to_toml(config: ExperimentConfig) -> str:
    lines = [f"{name} = {_toml_value(getattr(config, name))}"
             for name in (f.name for f in dataclasses.fields(ExperimentConfig))]
    return "\n".join(lines) + "\n"


def config_from_toml(path) -> ExperimentConfig:
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for key in ("seeds", "initial_starts", "test_starts"):
        if key in raw:
            raw[key] = tuple(tuple(v) if isinstance(v, list) else v for v in raw[key]) \
                if key != "seeds" else tuple(raw[key])
    return ExperimentConfig(**raw)


# ---------------------------------------------------------------------------
# Session wiring on a world
# ---------------------------------------------------------------------------


def make_teacher(config: ExperimentConfig, world: World2D,
                 partial: bool = False) -> TeacherOracle:
    """Full-path teacher for initial demos; partial segments at query points."""
    max_length = config.demo_max_length if partial and config.demo_max_length > 0 else None
    return TeacherOracle(
        world,
        speed=config.teacher_speed,
        noise_std=config.teacher_noise_std,
        inflation=config.teacher_inflation,
        dt=config.dt,
        max_length=max_length,
    )


def initial_dataset(config: ExperimentConfig, world: World2D, seed: int) -> Dataset:
    teacher = make_teacher(config, world)
    demos = [
        scripted_demo(teacher, np.asarray(s, dtype=float),
                      rng_seed=_seed_for(seed, 0, 10 + i))
        for i, s in enumerate(config.initial_starts)
    ]
    pts = np.vstack([d.joint_points()[:: max(1, config.data_stride)] for d in demos])
    return Dataset(pts, 2, 2)


def _seed_for(seed: int, iteration: int, role: int) -> int:
    return int(np.random.SeedSequence((seed, iteration, role)).generate_state(1)[0])


def _al_config(config: ExperimentConfig, seed: int) -> ALConfig:
    beta = None if config.beta < 0 else config.beta
    q_fit = QFitConfig(
        steps=config.q_steps, samples_per_component=config.q_samples,
        lr=config.q_lr, logit_lr_scale=config.q_logit_lr_scale,
        temperature=config.temperature, fd_scheme=config.q_fd_scheme,
    )
    q_warm = QFitConfig(
        steps=config.q_steps_warm, samples_per_component=config.q_samples_warm,
        lr=config.q_lr, logit_lr_scale=config.q_logit_lr_scale,
        temperature=config.temperature, fd_scheme=config.q_fd_scheme,
    )
    return ALConfig(
        k_policy=config.k_policy, k_q=config.k_q, beta=beta,
        temperature=config.temperature, entropy_mode=config.entropy_mode,
        seed=seed, fit=FitConfig(), q_fit=q_fit, q_fit_warm=q_warm,
        data_stride=config.data_stride,
    )


def build_session(config: ExperimentConfig, world: World2D, seed: int) -> ALSession:
    """Initial demos, prior, similarity MVN, bounds soft-limit, first fits."""
    dataset = initial_dataset(config, world, seed)
    prior = default_prior(dataset.points, alpha0=config.alpha0, beta0=config.beta0)
    similarity = mvn_from_box(world.bounds.lo, world.bounds.hi)
    teacher = make_teacher(config, world)
    feasibility = Feasibility(
        predicate=lambda p: not collides(world, p, clearance=teacher.inflation),
        project=lambda p: nearest_free_point(world, p, clearance=teacher.inflation),
    )
    limit = CostTerm(
        "soft_limit", config.limit_weight,
        {"lower": world.bounds.lo, "upper": world.bounds.hi,
         "sharpness": config.limit_sharpness},
    )
    return start_session(
        dataset, prior, similarity, _al_config(config, seed),
        feasibility=feasibility, extra_terms=[limit],
    )


def should_stop(entropies: list[float], rho: float) -> bool:
    """Uncertainty-reduction stopping rule (reported, not a loop controller).

    Stop once H2(q) has dropped below (1 - rho) of the iteration-0 value, or
    once it has failed to improve the running best for 2 consecutive
    iterations while still above that target.
    """
    if len(entropies) < 3:
        return False
    target = (1.0 - rho) * entropies[0]
    if entropies[-1] < target:
        return True
    best = np.minimum.accumulate(entropies)
    return entropies[-1] >= best[-3] and entropies[-2] >= best[-3]


# ---------------------------------------------------------------------------
# Policies for rollouts
# ---------------------------------------------------------------------------


def bgmm_policy_source(posterior: BGMMPosterior):
    """Moment-matched conditional policy as a command GMM per state."""

    def source(x):
        return moment_match_t(conditional_policy(posterior, np.asarray(x, dtype=float)))

    return source


def median_aleatoric_variance(posterior: BGMMPosterior) -> float:
    split = decompose_uncertainty(posterior, posterior.prior.m0[: posterior.dim_in])
    diag = np.concatenate([np.diag(a) for a in split.aleatoric])
    return float(np.median(diag))


def goal_expert(config: ExperimentConfig, world: World2D,
                posterior: BGMMPosterior) -> LQTExpert:
    sys_ = single_integrator(dim=2, dt=config.dt)
    var = config.expert_var_scale * median_aleatoric_variance(posterior)
    return make_lqt_expert(sys_, world.goal, var * np.eye(2))


def poe_policy_source(posterior: BGMMPosterior, expert: LQTExpert):
    def source(x):
        x = np.asarray(x, dtype=float)
        policy = moment_match_t(conditional_policy(posterior, x))
        return poe_fuse(policy, expert.policy(x))

    return source


def bgmm_policy_batch(posterior: BGMMPosterior):
    """Batched mixture parameters of the moment-matched conditional policy."""

    def batch(x):
        return epistemic_entropy_inputs(posterior, x, mode="total")

    return batch


def poe_policy_batch(posterior: BGMMPosterior, expert: LQTExpert):
    """Batched product-of-experts fusion of the policy with the goal expert."""
    cov_e = expert.command_covariance
    prec_e = np.linalg.inv(cov_e)
    d = cov_e.shape[0]
    log2pi = np.log(2.0 * np.pi)

    def batch(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        weights, means, covs = epistemic_entropy_inputs(posterior, x, mode="total")
        mean_e = (expert.target - x) @ expert.gain.T  # (m, d)
        prec = np.linalg.inv(covs)
        fused_prec = prec + prec_e
        fused_cov = np.linalg.inv(fused_prec)
        fused_cov = 0.5 * (fused_cov + np.swapaxes(fused_cov, -1, -2))
        rhs = np.einsum("mkij,mkj->mki", prec, means) + mean_e[:, None] @ prec_e.T
        fused_mean = np.einsum("mkij,mkj->mki", fused_cov, rhs)
        overlap = covs + cov_e
        diff = means - mean_e[:, None, :]
        sol = np.linalg.solve(overlap, diff[..., None])[..., 0]
        quad = np.einsum("mkd,mkd->mk", diff, sol)
        _, logdet = np.linalg.slogdet(overlap)
        log_scale = -0.5 * (d * log2pi + logdet + quad)
        with np.errstate(divide="ignore"):
            log_w = np.log(weights) + log_scale
        log_w -= log_w.max(axis=1, keepdims=True)
        w = np.exp(log_w)
        w /= w.sum(axis=1, keepdims=True)
        return w, fused_mean, fused_cov

    return batch


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def history_rows(session: ALSession):
    """One row per active iteration (iteration 0 lives in the report JSON)."""
    return [
        (e.iteration, e.entropy, e.dataset_size,
         e.query[0] if e.query is not None else "",
         e.query[1] if e.query is not None else "",
         int(e.failed))
        for e in session.history
        if e.iteration > 0
    ]


HISTORY_HEADER = ["iteration", "H2_q", "dataset_size", "query_x", "query_y", "failed"]


def rollout_rows(r):
    rows = []
    for t in range(r.commands.shape[0]):
        rows.append((t, r.states[t, 0], r.states[t, 1],
                     r.commands[t, 0], r.commands[t, 1], r.termination))
    return rows


ROLLOUT_HEADER = ["t", "x", "y", "vx", "vy", "termination"]


# ---------------------------------------------------------------------------
# Campaigns
# ---------------------------------------------------------------------------


def _campaign(config: ExperimentConfig, out_subdir: str, random_queries: bool,
              iterations: int | None = None) -> dict:
    world = config.load_world()
    out = Path(config.out) / out_subdir
    n_iter = config.iterations if iterations is None else iterations
    per_seed = {}
    for seed in config.seeds:
        session = build_session(config, world, seed)
        teacher = make_teacher(config, world, partial=True)
        snapshots = {"q": [session.q.to_dict()], "posterior": [session.posterior.to_dict()]}
        for it in range(1, n_iter + 1):
            def teach(query, _it=it, _seed=seed):
                return scripted_demo(teacher, query, rng_seed=_seed_for(_seed, _it, 3))

            if random_queries:
                rng = np.random.default_rng(_seed_for(seed, it, 4))
                point = uniform_free_point(world, rng, clearance=teacher.inflation)
                session = _forced_query_step(session, teach, point)
            else:
                session = al_step(session, teach)
            snapshots["q"].append(session.q.to_dict())
            snapshots["posterior"].append(session.posterior.to_dict())
        entropies = [e.entropy for e in session.history]
        coeffs = (
            np.polyfit(np.arange(len(entropies)), np.asarray(entropies), 2).tolist()
            if len(entropies) >= 3 else []
        )
        stop_at = next(
            (i for i in range(2, len(entropies))
             if should_stop(entropies[: i + 1], config.rho)), None,
        )
        tag = f"seed{seed}"
        write_csv(out / f"history_{tag}.csv", HISTORY_HEADER, history_rows(session))
        write_csv(
            out / f"queries_{tag}.csv", ["iteration", "x", "y"],
            [(e.iteration, e.query[0], e.query[1]) for e in session.history
             if e.query is not None],
        )
        for i, (qd, pd) in enumerate(zip(snapshots["q"], snapshots["posterior"])):
            write_json(out / f"q_{tag}_iter{i}.json", qd)
            write_json(out / f"posterior_{tag}_iter{i}.json", pd)
        per_seed[str(seed)] = {
            "entropies": entropies,
            "initial_entropy": entropies[0],
            "final_entropy": entropies[-1],
            "dataset_sizes": [e.dataset_size for e in session.history],
            "entropy_polyfit_deg2": coeffs,
            "stop_iteration": stop_at,
            "beta": session.config.beta,
        }

    traces = np.array([per_seed[str(s)]["entropies"] for s in config.seeds])
    aggregate = {
        "mean": traces.mean(axis=0).tolist(),
        "std": traces.std(axis=0).tolist(),
    }
    write_csv(
        out / "aggregate.csv", ["iteration", "mean_H2", "std_H2"],
        [(i, m, s) for i, (m, s) in enumerate(zip(aggregate["mean"], aggregate["std"]))],
    )
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": "random" if random_queries else "active",
        "config": config.to_dict(),
        "iterations": n_iter,
        "per_seed": per_seed,
        "aggregate": aggregate,
    }
    write_json(out / "report.json", report)
    return report


def _forced_query_step(session: ALSession, teacher, point: np.ndarray) -> ALSession:
    """al_step with the query point overridden (random-exploration baseline)."""
    pinned = dataclasses.replace(
        session,
        q=_point_mass_q(session.q, point),
    )
    return al_step(pinned, teacher)


def _point_mass_q(q, point: np.ndarray):
    """Copy of q whose argmax component mean is the forced point."""
    from .active import VariationalGMM

    logits = q.logits.copy()
    means = q.means.copy()
    k = int(np.argmax(q.weights()))
    means[k] = np.asarray(point, dtype=float)
    logits[k] = logits.max() + 1.0
    return VariationalGMM(logits, means, q.tril_raw.copy(), dict(q.diagnostics))


def run_active(config: ExperimentConfig, iterations: int | None = None) -> dict:
    """Active campaign per seed; writes history, snapshots, queries, report."""
    return _campaign(config, "active", random_queries=False, iterations=iterations)


def run_random_baseline(config: ExperimentConfig, iterations: int | None = None) -> dict:
    """Identical pipeline with uniform free-space queries instead of q means."""
    return _campaign(config, "random", random_queries=True, iterations=iterations)


# ---------------------------------------------------------------------------
# Initial fit, grids, rollouts
# ---------------------------------------------------------------------------


def fit_initial(config: ExperimentConfig, seed: int | None = None) -> ALSession:
    world = config.load_world()
    session = build_session(config, world, config.seeds[0] if seed is None else seed)
    out = Path(config.out) / "fit"
    write_json(out / "posterior.json", session.posterior.to_dict())
    write_json(out / "q.json", session.q.to_dict())
    write_json(out / "world.json", world.to_dict())
    write_csv(out / "dataset.csv", ["x", "y", "vx", "vy"],
              [tuple(row) for row in session.dataset.points])
    return session


def dump_uncertainty_grid(config: ExperimentConfig, mode: str,
                          resolution: int | None = None,
                          session: ALSession | None = None) -> Path:
    """CSV grid (x, y, value) over the world bounds.

    Modes total/aleatoric/epistemic dump the conditional-entropy heatmaps;
    mode=cost dumps the information-density cost and writes the fitted q's
    component ellipses alongside.
    """
    if mode not in ("total", "aleatoric", "epistemic", "cost"):
        raise ValueError(f"unknown grid mode {mode!r}")
    res = config.grid_resolution if resolution is None else resolution
    world = config.load_world()
    if session is None:
        session = fit_initial(config)
    xs = np.linspace(world.bounds.lo[0], world.bounds.hi[0], res)
    ys = np.linspace(world.bounds.lo[1], world.bounds.hi[1], res)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    if mode == "cost":
        values = info_density_logcost_batch(session.cost, pts)
    else:
        values = epistemic_entropy_values(session.posterior, pts, mode=mode)
    out = Path(config.out) / "grids"
    path = out / f"grid_{mode}_res{res}.csv"
    write_csv(path, ["x", "y", "value"],
              [(p[0], p[1], v) for p, v in zip(pts, values)])
    if mode == "cost":
        g = session.q.gmm()
        ellipses = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "components": [
                {"mean": c.mean.tolist(), "covariance": c.covariance.tolist(),
                 "weight": float(w)}
                for w, c in zip(g.weights, g.components)
            ],
            "entropy": renyi2_entropy(g),
        }
        write_json(out / f"q_ellipses_res{res}.json", ellipses)
    return path


def run_rollouts(config: ExperimentConfig, session: ALSession | None = None,
                 policy: str = "poe", mode: str = "sample",
                 n_per_start: int | None = None, seed: int = 0) -> dict:
    """Rollouts from the held-out starts; writes one CSV per rollout."""
    world = config.load_world()
    if session is None:
        session = fit_initial(config)
    sys_ = single_integrator(dim=2, dt=config.dt)
    if policy == "poe":
        expert = goal_expert(config, world, session.posterior)
        source = poe_policy_source(session.posterior, expert)
    elif policy == "bgmm":
        source = bgmm_policy_source(session.posterior)
    else:
        raise ValueError(f"unknown policy {policy!r}")
    n = config.rollouts_per_start if n_per_start is None else n_per_start
    bound = 3.0 * world.diagonal
    out = Path(config.out) / "rollouts"
    results = []
    for si, start in enumerate(config.test_starts):
        for j in range(n):
            r = rollout(
                source, sys_, np.asarray(start, dtype=float), config.horizon,
                mode=mode, goal=world.goal, eps=world.goal_eps,
                rng_seed=_seed_for(seed, si, 100 + j), divergence_bound=bound,
            )
            ev = evaluate_rollout(world, r)
            write_csv(out / f"rollout_{policy}_s{si}_r{j}.csv",
                      ROLLOUT_HEADER, rollout_rows(r))
            results.append({
                "start": list(start), "run": j, "termination": r.termination,
                "success": ev.success, "collided": ev.collided,
                "path_length": ev.path_length,
            })
    summary = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "policy": policy,
        "mode": mode,
        "results": results,
        "n_success": sum(r["success"] for r in results),
        "n_diverged": sum(r["termination"] == "diverged" for r in results),
    }
    write_json(out / f"summary_{policy}_{mode}.json", summary)
    return summary
