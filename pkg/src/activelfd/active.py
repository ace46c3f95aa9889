"""Information-density query selection and uncertainty monitoring.

The cost to maximize is c(x) = H2(p(u|x)) + beta log p_sim(x) (+ optional
soft-limit terms): the closed-form epistemic entropy of the conditional
policy weighted by a similarity density over the region where
generalization is wanted. A variational GMM q(x) is fitted to exp(c/T) by
stochastic reverse-KL minimization; its highest-weight component mean is the
next query point and H2(q) monitors the uncertainty reduction across
iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import log_ndtr, logsumexp

from .bgmm import (
    BGMMPosterior,
    BGMMPrior,
    Dataset,
    FitConfig,
    epistemic_entropy_values,
    fit_vb,
)
from .gaussians import GMM, Gaussian, renyi2_entropy

__all__ = [
    "CostTerm",
    "InfoDensityCost",
    "VariationalGMM",
    "QFitConfig",
    "ALConfig",
    "ALSession",
    "HistoryEntry",
    "Feasibility",
    "mvn_from_box",
    "soft_limit_logcost",
    "info_density_logcost",
    "info_density_logcost_batch",
    "fit_variational_gmm",
    "select_query",
    "apply_demonstration",
    "refreshed_q",
    "build_cost",
    "auto_beta",
    "start_session",
    "al_step",
]

_SQRT2 = float(np.sqrt(2.0))


# ---------------------------------------------------------------------------
# Cost terms
# ---------------------------------------------------------------------------


def mvn_from_box(lower: np.ndarray, upper: np.ndarray) -> Gaussian:
    """Moment-matched MVN stand-in for a uniform box distribution.

    Mean at the box center, diagonal variance (upper - lower)^2 / 12 per
    axis, so the first two moments agree with the uniform.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(upper <= lower):
        raise ValueError("box must have positive extent on every axis")
    mean = 0.5 * (lower + upper)
    var = (upper - lower) ** 2 / 12.0
    return Gaussian(mean, np.diag(var))


def soft_limit_logcost(x, lower, upper, sharpness: float):
    """Smooth log box-membership: ~0 well inside, steeply negative outside.

    Per axis, sum of log(step(s (x - l))) + log(step(s (u - x))) with the
    error-function step step(z) = (1 + erf(z)) / 2, evaluated through the
    numerically stable normal log-CDF. Monotone in each coordinate's
    distance past its limit and differentiable everywhere.
    """
    if sharpness <= 0:
        raise ValueError("sharpness must be positive")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    lo_term = log_ndtr(_SQRT2 * sharpness * (pts - lower))
    hi_term = log_ndtr(_SQRT2 * sharpness * (upper - pts))
    out = lo_term.sum(axis=1) + hi_term.sum(axis=1)
    return float(out[0]) if single else out


@dataclass
class CostTerm:
    """One additive term of the information-density cost.

    kind: epistemic_entropy | similarity_log_density | soft_limit | custom.
    payload keys by kind:
        epistemic_entropy: posterior (BGMMPosterior), mode (str)
        similarity_log_density: gaussian (Gaussian)
        soft_limit: lower, upper (vectors), sharpness (float)
        custom: fn ((N, D) -> (N,) log values), plus optional
            decaying (bool, declares exp(fn) integrable) and
            init_gaussian (Gaussian seeding the cold-start region)
    """

    kind: str
    weight: float
    payload: dict

    def __post_init__(self):
        if self.kind not in ("epistemic_entropy", "similarity_log_density",
                             "soft_limit", "custom"):
            raise ValueError(f"unknown cost term kind {self.kind!r}")
        if not np.isfinite(self.weight) or self.weight < 0:
            raise ValueError("term weight must be finite and non-negative")


@dataclass
class InfoDensityCost:
    """Weighted sum of cost terms over the input space.

    Requires at least one decaying term (similarity or soft limit) so that
    exp(cost) stays integrable, and at most one epistemic-entropy term.
    """

    terms: list[CostTerm]
    dim: int

    def __post_init__(self):
        n_entropy = sum(1 for t in self.terms if t.kind == "epistemic_entropy")
        if n_entropy > 1:
            raise ValueError("at most one epistemic_entropy term is allowed")
        decaying = any(
            (t.kind in ("similarity_log_density", "soft_limit")
             or (t.kind == "custom" and t.payload.get("decaying", False)))
            and t.weight > 0
            for t in self.terms
        )
        if not decaying:
            raise ValueError(
                "cost needs a decaying term (similarity or soft limit) "
                "for exp(cost) to be integrable"
            )

    def similarity_gaussian(self) -> Gaussian | None:
        for t in self.terms:
            if t.kind == "similarity_log_density":
                return t.payload["gaussian"]
        return None


def info_density_logcost_batch(cost: InfoDensityCost, x: np.ndarray) -> np.ndarray:
    """Evaluate the cost (quantity to MAXIMIZE) at (N, D) inputs."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if pts.shape[1] != cost.dim:
        raise ValueError(f"expected dim {cost.dim}, got {pts.shape[1]}")
    total = np.zeros(pts.shape[0])
    for term in cost.terms:
        if term.kind == "epistemic_entropy":
            value = epistemic_entropy_values(
                term.payload["posterior"], pts, mode=term.payload.get("mode", "epistemic")
            )
        elif term.kind == "similarity_log_density":
            value = term.payload["gaussian"].log_density(pts)
        elif term.kind == "soft_limit":
            value = soft_limit_logcost(
                pts, term.payload["lower"], term.payload["upper"],
                term.payload["sharpness"],
            )
        else:
            value = term.payload["fn"](pts)
        total = total + term.weight * np.asarray(value, dtype=float)
    return total


def info_density_logcost(cost: InfoDensityCost, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("query point contains non-finite values")
    return float(info_density_logcost_batch(cost, x[None, :])[0])


# ---------------------------------------------------------------------------
# Variational GMM approximation (reverse KL)
# ---------------------------------------------------------------------------


@dataclass
class QFitConfig:
    steps: int = 2000
    samples_per_component: int = 64
    lr: float = 0.01
    logit_lr_scale: float = 0.25  # weights adapt slower than means/factors
    temperature: float = 1.0
    fd_step: float = 1e-4  # relative finite-difference step for cost gradients
    fd_scheme: str = "central"  # "forward" trades gradient accuracy for speed


@dataclass
class VariationalGMM:
    """GMM over the input space in unconstrained parameterization.

    Weight logits, component means, and a lower-triangular covariance factor
    whose diagonal is stored in the log domain. ``tril_raw`` holds the strict
    lower triangle as-is and the log of the diagonal on the diagonal.
    """

    logits: np.ndarray
    means: np.ndarray
    tril_raw: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.tril_raw = np.asarray(self.tril_raw, dtype=float)

    @property
    def k(self) -> int:
        return self.logits.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def weights(self) -> np.ndarray:
        z = self.logits - self.logits.max()
        w = np.exp(z)
        return w / w.sum()

    def scale_tril(self) -> np.ndarray:
        k, d = self.means.shape
        tril = np.tril(self.tril_raw, k=-1)
        idx = np.arange(d)
        tril[:, idx, idx] = np.exp(self.tril_raw[:, idx, idx])
        return tril

    def gmm(self) -> GMM:
        tril = self.scale_tril()
        comps = [
            Gaussian(self.means[j], tril[j] @ tril[j].T) for j in range(self.k)
        ]
        return GMM(self.weights(), comps)

    def to_dict(self) -> dict:
        return {
            "logits": self.logits.tolist(),
            "means": self.means.tolist(),
            "tril_raw": self.tril_raw.tolist(),
            "diagnostics": dict(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VariationalGMM":
        return cls(
            logits=np.asarray(d["logits"]),
            means=np.asarray(d["means"]),
            tril_raw=np.asarray(d["tril_raw"]),
            diagnostics=dict(d.get("diagnostics", {})),
        )


def _cold_start(cost: InfoDensityCost, k_q: int, rng: np.random.Generator) -> VariationalGMM:
    """Means drawn from the similarity MVN, covariances similarity/K_q."""
    sim = cost.similarity_gaussian()
    if sim is None:
        for t in cost.terms:
            if t.kind == "soft_limit":
                sim = mvn_from_box(t.payload["lower"], t.payload["upper"])
                break
            if t.kind == "custom" and "init_gaussian" in t.payload:
                sim = t.payload["init_gaussian"]
                break
    if sim is None:
        raise ValueError("cost has no similarity or soft-limit term to initialize from")
    means = sim.sample(rng, k_q)
    cov = sim.covariance / k_q
    chol = np.linalg.cholesky(cov)
    d = cost.dim
    tril_raw = np.tile(np.tril(chol, k=-1), (k_q, 1, 1))
    idx = np.arange(d)
    tril_raw[:, idx, idx] = np.log(np.diag(chol))
    return VariationalGMM(np.zeros(k_q), means, tril_raw)


def _mixture_logpdf_and_grad(x, weights, means, tril):
    """log q(x) and its gradient in x for a GMM given scale factors."""
    k, d = means.shape
    n = x.shape[0]
    log_comp = np.empty((k, n))
    prec_diff = np.empty((k, n, d))
    for j in range(k):
        diff = x - means[j]
        z = np.linalg.solve(tril[j], diff.T)  # (d, n)
        maha = np.sum(z * z, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(tril[j])))
        log_comp[j] = -0.5 * (d * np.log(2 * np.pi) + logdet + maha)
        prec_diff[j] = np.linalg.solve(tril[j].T, z).T
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    log_joint = log_w[:, None] + log_comp
    log_q = logsumexp(log_joint, axis=0)
    resp = np.exp(log_joint - log_q)
    grad = -np.einsum("kn,knd->nd", resp, prec_diff)
    return log_q, grad


class _Adam:
    def __init__(self, shapes, lrs):
        self.lrs = lrs
        self.b1, self.b2, self.eps = 0.9, 0.999, 1e-8
        self.t = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]

    def step(self, params, grads):
        self.t += 1
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            mhat = self.m[i] / (1 - self.b1**self.t)
            vhat = self.v[i] / (1 - self.b2**self.t)
            out.append(p - self.lrs[i] * mhat / (np.sqrt(vhat) + self.eps))
        return out


def fit_variational_gmm(
    cost: InfoDensityCost,
    k_q: int,
    init: VariationalGMM | None = None,
    config: QFitConfig | None = None,
    rng_seed: int = 0,
) -> VariationalGMM:
    """Fit q(x) to exp(c(x)/T) by stochastic reverse-KL minimization.

    Minimizes E_q[log q(x) - c(x)/T] with per-component reparameterized
    samples for the mean/covariance-factor gradients (cost gradients by
    batched central differences), a stratified score-function estimator for
    the weight logits, and Adam on the unconstrained parameterization.
    Deterministic given ``rng_seed``; warm starts from ``init`` when given.

    Raises:
        RuntimeError: if the objective becomes non-finite (reports the step).
    """
    if k_q < 1:
        raise ValueError("K_q must be >= 1")
    if config is None:
        config = QFitConfig()
    rng = np.random.default_rng(rng_seed)
    if init is None:
        q = _cold_start(cost, k_q, rng)
    else:
        if init.k != k_q:
            raise ValueError("warm-start component count does not match K_q")
        q = VariationalGMM(init.logits.copy(), init.means.copy(), init.tril_raw.copy())

    d = cost.dim
    s = config.samples_per_component
    temp = config.temperature
    sim = cost.similarity_gaussian()
    axis_scale = (
        np.sqrt(np.diag(sim.covariance)) if sim is not None else np.ones(d)
    )
    h = config.fd_step * axis_scale

    logits, means, tril_raw = q.logits, q.means, q.tril_raw
    opt = _Adam([logits.shape, means.shape, tril_raw.shape],
                [config.lr * config.logit_lr_scale, config.lr, config.lr])
    idx = np.arange(d)
    objective = np.nan

    for step in range(config.steps):
        z = logits - logits.max()
        weights = np.exp(z)
        weights = weights / weights.sum()
        tril = np.tril(tril_raw, k=-1)
        tril[:, idx, idx] = np.exp(tril_raw[:, idx, idx])

        eps_draw = rng.standard_normal((k_q, s, d))
        x = means[:, None, :] + np.einsum("kde,kse->ksd", tril, eps_draw)
        flat = x.reshape(k_q * s, d)

        # one batched cost call covering values and finite-difference stencils
        stencil = [flat]
        for a in range(d):
            offset = np.zeros(d)
            offset[a] = h[a]
            stencil.append(flat + offset)
            if config.fd_scheme == "central":
                stencil.append(flat - offset)
        c_all = info_density_logcost_batch(cost, np.concatenate(stencil, axis=0)) / temp
        n = flat.shape[0]
        c_val = c_all[:n]
        c_grad = np.empty((n, d))
        per = 2 if config.fd_scheme == "central" else 1
        for a in range(d):
            plus = c_all[(1 + per * a) * n: (2 + per * a) * n]
            if config.fd_scheme == "central":
                minus = c_all[(2 + per * a) * n: (3 + per * a) * n]
                c_grad[:, a] = (plus - minus) / (2.0 * h[a])
            else:
                c_grad[:, a] = (plus - c_val) / h[a]

        log_q, q_grad = _mixture_logpdf_and_grad(flat, weights, means, tril)
        g_val = (log_q - c_val).reshape(k_q, s)
        g_grad = (q_grad - c_grad).reshape(k_q, s, d)

        f_bar = g_val.mean(axis=1)
        objective = float(weights @ f_bar)
        if not np.isfinite(objective):
            raise RuntimeError(f"variational fit diverged at step {step}")

        grad_means = weights[:, None] * g_grad.mean(axis=1)
        grad_tril = weights[:, None, None] * np.einsum(
            "ksd,kse->kde", g_grad, eps_draw
        ) / s
        grad_tril = np.tril(grad_tril)
        grad_raw = grad_tril.copy()
        grad_raw[:, idx, idx] = grad_tril[:, idx, idx] * tril[:, idx, idx]
        grad_logits = weights * (f_bar - objective)

        logits, means, tril_raw = opt.step(
            [logits, means, tril_raw], [grad_logits, grad_means, grad_raw]
        )

    return VariationalGMM(
        logits, means, tril_raw,
        diagnostics={"final_objective": objective, "iterations": config.steps},
    )


# ---------------------------------------------------------------------------
# Query selection
# ---------------------------------------------------------------------------


@dataclass
class Feasibility:
    """Feasible-set predicate plus a projector to the closest feasible point."""

    predicate: object  # (2,) -> bool
    project: object  # (2,) -> (2,)


def select_query(
    q: VariationalGMM,
    feasibility: Feasibility | None = None,
    mode: str = "mean",
    rng_seed: int = 0,
) -> np.ndarray:
    """Query point from the fitted q: the highest-weight component's mean.

    Ties break toward the lowest component index. mode="sample" draws from
    that component instead of taking its mean. An infeasible point is
    replaced by the projector's closest feasible point.
    """
    if mode not in ("mean", "sample"):
        raise ValueError(f"unknown mode {mode!r}")
    weights = q.weights()
    k = int(np.argmax(weights))
    if mode == "mean":
        point = q.means[k].copy()
    else:
        rng = np.random.default_rng(rng_seed)
        tril = q.scale_tril()[k]
        point = q.means[k] + tril @ rng.standard_normal(q.dim)
    if feasibility is not None and not feasibility.predicate(point):
        point = np.asarray(feasibility.project(point), dtype=float)
    return point


# ---------------------------------------------------------------------------
# Active-learning session
# ---------------------------------------------------------------------------


@dataclass
class ALConfig:
    k_policy: int = 15
    k_q: int = 10
    beta: float | None = None  # None: auto-scaled from the entropy magnitude
    temperature: float = 1.0
    entropy_mode: str = "epistemic"
    seed: int = 0
    fit: FitConfig = field(default_factory=FitConfig)
    q_fit: QFitConfig = field(default_factory=QFitConfig)
    q_fit_warm: QFitConfig | None = None  # lighter settings for warm refits
    query_mode: str = "mean"
    data_stride: int = 1  # keep every n-th demonstration row when fitting


@dataclass
class HistoryEntry:
    iteration: int
    query: np.ndarray | None
    entropy: float
    dataset_size: int
    failed: bool = False

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "query": None if self.query is None else np.asarray(self.query).tolist(),
            "entropy": self.entropy,
            "dataset_size": self.dataset_size,
            "failed": self.failed,
        }


@dataclass
class ALSession:
    """One active-learning run: model, cost, q, and append-only history."""

    config: ALConfig
    prior: BGMMPrior
    similarity: Gaussian
    dataset: Dataset
    posterior: BGMMPosterior
    cost: InfoDensityCost
    q: VariationalGMM
    history: list[HistoryEntry]
    feasibility: Feasibility | None = None

    @property
    def iteration(self) -> int:
        return self.history[-1].iteration if self.history else 0


def _sub_seed(base: int, iteration: int, role: int) -> int:
    return int(np.random.SeedSequence((base, iteration, role)).generate_state(1)[0])


def build_cost(
    posterior: BGMMPosterior,
    similarity: Gaussian,
    beta: float,
    mode: str = "epistemic",
    extra_terms: list[CostTerm] | None = None,
) -> InfoDensityCost:
    terms = [
        CostTerm("epistemic_entropy", 1.0, {"posterior": posterior, "mode": mode}),
        CostTerm("similarity_log_density", beta, {"gaussian": similarity}),
    ]
    if extra_terms:
        terms = terms + list(extra_terms)
    return InfoDensityCost(terms, dim=posterior.dim_in)


def auto_beta(posterior: BGMMPosterior, similarity: Gaussian,
              mode: str = "epistemic", grid: int = 32) -> float:
    """0.1 times the grid-median epistemic entropy magnitude.

    The grid spans the similarity mean +/- sqrt(3) std (the box the MVN was
    matched to), making the two cost terms commensurate without hand tuning.
    """
    std = np.sqrt(np.diag(similarity.covariance))
    lo = similarity.mean - np.sqrt(3.0) * std
    hi = similarity.mean + np.sqrt(3.0) * std
    axes = [np.linspace(lo[a], hi[a], grid) for a in range(len(lo))]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    h2 = epistemic_entropy_values(posterior, pts, mode=mode)
    return 0.1 * float(np.median(np.abs(h2)))


def start_session(
    dataset: Dataset | None,
    prior: BGMMPrior,
    similarity: Gaussian,
    config: ALConfig,
    feasibility: Feasibility | None = None,
    extra_terms: list[CostTerm] | None = None,
) -> ALSession:
    """Fit the initial model and q, recording the iteration-0 entropy.

    With ``dataset=None`` the model starts prior-dominated (no data).
    """
    if dataset is None:
        posterior = BGMMPosterior.from_prior(
            prior, config.k_policy,
            dim_in=similarity.dim, dim_out=prior.dim - similarity.dim,
        )
    else:
        posterior = fit_vb(dataset, config.k_policy, prior=prior, config=config.fit,
                           rng_seed=_sub_seed(config.seed, 0, 0))
    beta = config.beta
    if beta is None:
        beta = auto_beta(posterior, similarity, mode=config.entropy_mode)
        config = replace(config, beta=beta)
    cost = build_cost(posterior, similarity, beta, config.entropy_mode, extra_terms)
    q = fit_variational_gmm(cost, config.k_q, init=None, config=config.q_fit,
                            rng_seed=_sub_seed(config.seed, 0, 1))
    entry = HistoryEntry(0, None, renyi2_entropy(q.gmm()),
                         0 if dataset is None else dataset.n)
    return ALSession(
        config=config, prior=prior, similarity=similarity, dataset=dataset,
        posterior=posterior, cost=cost, q=q, history=[entry],
        feasibility=feasibility,
    )


def apply_demonstration(session: ALSession, demo, query: np.ndarray | None) -> ALSession:
    """Append a demonstration and refit: posterior (warm), cost, q (warm).

    Shared by the batch loop and the teaching service so that replaying
    recorded demonstrations reproduces identical posteriors.
    """
    cfg = session.config
    iteration = session.iteration + 1
    points = demo.joint_points()[:: max(1, cfg.data_stride)]
    dataset = (
        session.dataset.extended(points)
        if session.dataset is not None
        else Dataset(points, session.posterior.dim_in, session.posterior.dim_out)
    )
    warm = session.posterior if session.dataset is not None else None
    posterior = fit_vb(
        dataset, cfg.k_policy, prior=session.prior, config=cfg.fit,
        rng_seed=_sub_seed(cfg.seed, iteration, 0), warm_start=warm,
    )
    extra = [t for t in session.cost.terms
             if t.kind not in ("epistemic_entropy", "similarity_log_density")]
    cost = build_cost(posterior, session.similarity, cfg.beta, cfg.entropy_mode,
                      extra or None)
    q_config = cfg.q_fit_warm if cfg.q_fit_warm is not None else cfg.q_fit
    q = fit_variational_gmm(cost, cfg.k_q, init=session.q, config=q_config,
                            rng_seed=_sub_seed(cfg.seed, iteration, 1))
    entry = HistoryEntry(iteration, query, renyi2_entropy(q.gmm()), dataset.n)
    return replace(
        session, dataset=dataset, posterior=posterior, cost=cost, q=q,
        history=session.history + [entry],
    )


def refreshed_q(session: ALSession, iteration_tag: int | None = None) -> ALSession:
    """Warm-refit q against the current cost (used before serving a query)."""
    cfg = session.config
    tag = session.iteration + 1 if iteration_tag is None else iteration_tag
    q_config = cfg.q_fit_warm if cfg.q_fit_warm is not None else cfg.q_fit
    q = fit_variational_gmm(session.cost, cfg.k_q, init=session.q, config=q_config,
                            rng_seed=_sub_seed(cfg.seed, tag, 5))
    return replace(session, q=q)


def al_step(session: ALSession, teacher) -> ALSession:
    """One active-learning round; returns a new session, never mutates.

    Select the query from the current q, ask the teacher, append the
    demonstration, warm-refit the posterior, rebuild the cost, warm-refit q,
    and extend the history with the new H2(q). A teacher failure (exception
    or an empty demonstration) is logged as a failed iteration and leaves the
    model and dataset unchanged.
    """
    cfg = session.config
    iteration = session.iteration + 1
    query = select_query(
        session.q, session.feasibility, mode=cfg.query_mode,
        rng_seed=_sub_seed(cfg.seed, iteration, 2),
    )
    try:
        demo = teacher(query)
        if demo is None or demo.n == 0:
            raise RuntimeError("teacher returned an empty demonstration")
    except Exception:
        size = session.dataset.n if session.dataset is not None else 0
        entry = HistoryEntry(iteration, query, session.history[-1].entropy,
                             size, failed=True)
        return replace(session, history=session.history + [entry])
    return apply_demonstration(session, demo, query)
