"""Stabilizing LQT expert, product-of-experts fusion, closed-loop rollout.

The unstable mixture policy learned from demonstrations is fused with a
stable goal-attracting linear-quadratic expert by multiplying the densities;
a GMM times an MVN is again a GMM with reweighted components.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .gaussians import GMM, Gaussian, gaussian_product, gmm_sample

__all__ = [
    "LinearSystem",
    "LQTExpert",
    "Rollout",
    "lqr_gain",
    "make_lqt_expert",
    "poe_fuse",
    "rollout",
]


@dataclass
class LinearSystem:
    """Discrete-time linear dynamics x' = A x + B u."""

    A: np.ndarray
    B: np.ndarray
    dt: float

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.A.shape[0] != self.A.shape[1] or self.B.shape[0] != self.A.shape[0]:
            raise ValueError("inconsistent A/B shapes")

    @property
    def dim_state(self) -> int:
        return self.A.shape[0]

    @property
    def dim_command(self) -> int:
        return self.B.shape[1]


def single_integrator(dim: int = 2, dt: float = 0.05) -> LinearSystem:
    """x' = x + u dt; commands are velocities."""
    return LinearSystem(np.eye(dim), dt * np.eye(dim), dt)


def lqr_gain(sys: LinearSystem, q: np.ndarray, r: np.ndarray,
             tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Infinite-horizon discrete LQR gain via Riccati fixed-point iteration.

    Iterates P <- Q + A'PA - A'PB (R + B'PB)^{-1} B'PA until the update is
    below ``tol`` (max-norm), then returns K = (R + B'PB)^{-1} B'PA. The
    closed loop A - BK is verified stable.

    Raises:
        RuntimeError: if the iteration does not converge (system not
            stabilizable or detectability fails).
    """
    a, b = sys.A, sys.B
    q = np.asarray(q, dtype=float)
    r = np.asarray(r, dtype=float)
    p = q.copy()
    for _ in range(max_iter):
        btp = b.T @ p
        gain = np.linalg.solve(r + btp @ b, btp @ a)
        p_next = q + a.T @ p @ (a - b @ gain)
        p_next = 0.5 * (p_next + p_next.T)
        if np.max(np.abs(p_next - p)) < tol:
            p = p_next
            break
        p = p_next
    else:
        raise RuntimeError("Riccati iteration did not converge")
    btp = b.T @ p
    gain = np.linalg.solve(r + btp @ b, btp @ a)
    closed = a - b @ gain
    radius = np.max(np.abs(np.linalg.eigvals(closed)))
    if radius >= 1.0:
        raise RuntimeError(f"closed loop unstable, spectral radius {radius:.6f}")
    return gain


@dataclass
class LQTExpert:
    """Probabilistic goal tracker: u ~ N(gain (target - x), command_covariance)."""

    gain: np.ndarray
    target: np.ndarray
    command_covariance: np.ndarray

    def __post_init__(self):
        self.gain = np.asarray(self.gain, dtype=float)
        self.target = np.asarray(self.target, dtype=float)
        self.command_covariance = np.asarray(self.command_covariance, dtype=float)

    def policy(self, x: np.ndarray) -> Gaussian:
        return Gaussian(self.gain @ (self.target - np.asarray(x, dtype=float)),
                        self.command_covariance)


def make_lqt_expert(
    sys: LinearSystem,
    target: np.ndarray,
    command_covariance: np.ndarray,
    q: np.ndarray | None = None,
    r: np.ndarray | None = None,
) -> LQTExpert:
    """LQT expert attracting to ``target`` with LQR feedback (Q=I, R=10I default)."""
    if q is None:
        q = np.eye(sys.dim_state)
    if r is None:
        r = 10.0 * np.eye(sys.dim_command)
    gain = lqr_gain(sys, q, r)
    return LQTExpert(gain, np.asarray(target, dtype=float),
                     np.asarray(command_covariance, dtype=float))


def poe_fuse(policy: GMM, expert: Gaussian) -> GMM:
    """Product of experts: fuse a GMM policy with a Gaussian expert.

    Each component is multiplied with the expert; the Gaussian-product log
    normalizers reweight the mixture, renormalized in the log domain.
    """
    if policy.dim != expert.dim:
        raise ValueError(f"dimension mismatch: {policy.dim} vs {expert.dim}")
    comps = []
    log_w = np.empty(policy.n_components)
    with np.errstate(divide="ignore"):
        log_pi = np.log(policy.weights)
    for k, comp in enumerate(policy.components):
        fused, log_scale = gaussian_product(comp, expert)
        comps.append(fused)
        log_w[k] = log_pi[k] + log_scale
    log_w = log_w - logsumexp(log_w)
    weights = np.exp(log_w)
    weights = weights / weights.sum()
    return GMM(weights, comps)


@dataclass
class Rollout:
    """Closed-loop trace: visited states (T+1, incl. start), commands (T)."""

    states: np.ndarray
    commands: np.ndarray
    termination: str  # goal_reached | max_steps | diverged

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.commands = np.asarray(self.commands, dtype=float)
        if self.states.shape[0] != self.commands.shape[0] + 1:
            raise ValueError("states must have exactly one more row than commands")
        if self.termination not in ("goal_reached", "max_steps", "diverged"):
            raise ValueError(f"unknown termination {self.termination!r}")

    @property
    def n_steps(self) -> int:
        return self.commands.shape[0]


def rollout(
    policy_source,
    sys: LinearSystem,
    x0: np.ndarray,
    horizon: int,
    mode: str = "sample",
    goal: np.ndarray | None = None,
    eps: float = 0.0,
    rng_seed=0,
    divergence_bound: float = np.inf,
) -> Rollout:
    """Run the closed loop from ``x0`` against a state-dependent GMM policy.

    ``policy_source`` maps a state to a command GMM; the command is a seeded
    sample (mode="sample") or the weighted mixture mean (mode="mean", fully
    deterministic). Terminates on |x - goal| <= eps, on the horizon, or when
    |x| exceeds ``divergence_bound``; a policy evaluation failure marks the
    rollout diverged at the failing state.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if mode not in ("sample", "mean"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(rng_seed)
    x = np.asarray(x0, dtype=float).copy()
    states = [x.copy()]
    commands = []
    termination = "max_steps"
    for _ in range(horizon):
        try:
            g = policy_source(x)
            if mode == "sample":
                u = gmm_sample(g, rng, 1)[0]
            else:
                u = g.weights @ g.means()
        except Exception:
            termination = "diverged"
            break
        x = sys.A @ x + sys.B @ u
        states.append(x.copy())
        commands.append(u)
        if goal is not None and np.linalg.norm(x - goal) <= eps:
            termination = "goal_reached"
            break
        if np.linalg.norm(x) > divergence_bound or not np.all(np.isfinite(x)):
            termination = "diverged"
            break
    cmds = np.asarray(commands, dtype=float).reshape(len(commands), sys.dim_command)
    return Rollout(np.stack(states), cmds, termination)


def rollout_batch(
    policy_batch,
    sys: LinearSystem,
    x0s: np.ndarray,
    horizon: int,
    mode: str = "sample",
    goal: np.ndarray | None = None,
    eps: float = 0.0,
    rng_seed: int = 0,
    divergence_bound: float = np.inf,
) -> list[Rollout]:
    """Run many rollouts in lockstep against a batched policy evaluator.

    ``policy_batch`` maps (m, D) states to mixture parameters
    (weights (m, K), means (m, K, D_u), covariances (m, K, D_u, D_u));
    one evaluator call per step serves every still-active rollout. Each
    rollout draws from its own RNG stream (seed = rng_seed + index), so
    results do not depend on which other rollouts run alongside.
    """
    if mode not in ("sample", "mean"):
        raise ValueError(f"unknown mode {mode!r}")
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    m = x0s.shape[0]
    rngs = [np.random.default_rng(rng_seed + i) for i in range(m)]
    current = x0s.copy()
    states = [[x0s[i].copy()] for i in range(m)]
    commands: list[list[np.ndarray]] = [[] for _ in range(m)]
    termination = ["max_steps"] * m
    active = list(range(m))
    for _ in range(horizon):
        if not active:
            break
        batch = current[active]
        try:
            weights, means, covs = policy_batch(batch)
            chols = np.linalg.cholesky(covs) if mode == "sample" else None
        except Exception:
            for i in active:
                termination[i] = "diverged"
            break
        next_active = []
        for local, i in enumerate(active):
            if mode == "sample":
                k = rngs[i].choice(weights.shape[1], p=weights[local])
                z = rngs[i].standard_normal(means.shape[2])
                u = means[local, k] + chols[local, k] @ z
            else:
                u = weights[local] @ means[local]
            x = sys.A @ current[i] + sys.B @ u
            states[i].append(x.copy())
            commands[i].append(u)
            current[i] = x
            if goal is not None and np.linalg.norm(x - goal) <= eps:
                termination[i] = "goal_reached"
            elif np.linalg.norm(x) > divergence_bound or not np.all(np.isfinite(x)):
                termination[i] = "diverged"
            else:
                next_active.append(i)
        active = next_active
    return [
        Rollout(np.stack(states[i]),
                np.asarray(commands[i], dtype=float).reshape(len(commands[i]),
                                                             sys.dim_command),
                termination[i])
        for i in range(m)
    ]
