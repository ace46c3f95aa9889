"""Variational Bayesian GMM policies on joint state-action data.

Fits a Dirichlet + Normal-Wishart mixture by variational EM, exposes the
posterior-predictive Student-t mixture, the conditional policy p(out | in),
and the decomposition of the conditional scale into an input-independent
aleatoric part and a quadratically growing epistemic part.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln, logsumexp

from .gaussians import (
    GMM,
    Gaussian,
    StudentTComponent,
    StudentTMixture,
    chol_with_jitter,
    moment_match_t,
)

__all__ = [
    "BGMMPrior",
    "BGMMPosterior",
    "Dataset",
    "FitConfig",
    "UncertaintySplit",
    "default_prior",
    "fit_vb",
    "posterior_predictive",
    "conditional_policy",
    "decompose_uncertainty",
    "epistemic_conditional_gmm",
    "epistemic_entropy_values",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class BGMMPrior:
    """Shared Dirichlet / Normal-Wishart prior.

    alpha0: Dirichlet concentration; beta0: mean-precision scaling;
    m0: prior mean; W0: Wishart scale (SPD); nu0: Wishart dof (> D - 1).
    """

    alpha0: float
    beta0: float
    m0: np.ndarray
    W0: np.ndarray
    nu0: float

    def __post_init__(self):
        self.m0 = np.asarray(self.m0, dtype=float)
        self.W0 = np.asarray(self.W0, dtype=float)
        d = self.m0.shape[0]
        if self.W0.shape != (d, d):
            raise ValueError("W0 shape does not match m0 dimension")
        if not self.nu0 > d - 1:
            raise ValueError(f"nu0 must exceed D - 1 = {d - 1}, got {self.nu0}")
        if self.alpha0 <= 0 or self.beta0 <= 0:
            raise ValueError("alpha0 and beta0 must be positive")
        chol_with_jitter(self.W0)

    @property
    def dim(self) -> int:
        return self.m0.shape[0]

    def to_dict(self) -> dict:
        return {
            "alpha0": self.alpha0,
            "beta0": self.beta0,
            "m0": self.m0.tolist(),
            "W0": self.W0.tolist(),
            "nu0": self.nu0,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BGMMPrior":
        return cls(d["alpha0"], d["beta0"], np.asarray(d["m0"]),
                   np.asarray(d["W0"]), d["nu0"])


@dataclass
class Dataset:
    """Joint observations x = [x_in, x_out] with a fixed dimension split."""

    points: np.ndarray
    dim_in: int
    dim_out: int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2:
            raise ValueError("points must be an N x D matrix")
        if self.points.shape[0] < 1:
            raise ValueError("dataset needs at least one point")
        if self.dim_in + self.dim_out != self.points.shape[1]:
            raise ValueError("dim_in + dim_out must equal the point dimension")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def extended(self, new_points: np.ndarray) -> "Dataset":
        return Dataset(np.vstack([self.points, new_points]), self.dim_in, self.dim_out)


def default_prior(points: np.ndarray, alpha0: float = 1e-3, beta0: float = 1.0) -> BGMMPrior:
    """Weak scale-aware prior: sparse Dirichlet, data-moment Wishart scale."""
    points = np.asarray(points, dtype=float)
    d = points.shape[1]
    nu0 = float(d + 2)
    m0 = points.mean(axis=0)
    var = np.maximum(points.var(axis=0), 1e-12)
    w0 = np.diag(1.0 / (var * nu0))
    return BGMMPrior(alpha0, beta0, m0, w0, nu0)


@dataclass
class FitConfig:
    max_iter: int = 500
    tol_scale: float = 1e-6  # stop at |dELBO| < tol_scale * N
    n_restarts: int = 3


@dataclass
class BGMMPosterior:
    """Per-component variational parameters plus the shared prior."""

    alpha: np.ndarray
    beta: np.ndarray
    m: np.ndarray
    W: np.ndarray
    nu: np.ndarray
    prior: BGMMPrior
    dim_in: int
    dim_out: int
    elbo_trace: list = field(default_factory=list)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        self.m = np.asarray(self.m, dtype=float)
        self.W = np.asarray(self.W, dtype=float)
        self.nu = np.asarray(self.nu, dtype=float)

    @property
    def n_components(self) -> int:
        return self.alpha.shape[0]

    @property
    def dim(self) -> int:
        return self.m.shape[1]

    @classmethod
    def from_prior(cls, prior: BGMMPrior, k: int, dim_in: int, dim_out: int) -> "BGMMPosterior":
        """Posterior with no data: every component sits at the prior."""
        d = prior.dim
        if dim_in + dim_out != d:
            raise ValueError("dim split does not match prior dimension")
        return cls(
            alpha=np.full(k, prior.alpha0),
            beta=np.full(k, prior.beta0),
            m=np.tile(prior.m0, (k, 1)),
            W=np.tile(prior.W0, (k, 1, 1)),
            nu=np.full(k, prior.nu0),
            prior=prior,
            dim_in=dim_in,
            dim_out=dim_out,
        )

    def mixture_weights(self) -> np.ndarray:
        return self.alpha / self.alpha.sum()

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "m": self.m.tolist(),
            "W": self.W.tolist(),
            "nu": self.nu.tolist(),
            "prior": self.prior.to_dict(),
            "dim_in": self.dim_in,
            "dim_out": self.dim_out,
            "elbo_trace": list(self.elbo_trace),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BGMMPosterior":
        return cls(
            alpha=np.asarray(d["alpha"]),
            beta=np.asarray(d["beta"]),
            m=np.asarray(d["m"]),
            W=np.asarray(d["W"]),
            nu=np.asarray(d["nu"]),
            prior=BGMMPrior.from_dict(d["prior"]),
            dim_in=d["dim_in"],
            dim_out=d["dim_out"],
            elbo_trace=list(d["elbo_trace"]),
        )


@dataclass
class UncertaintySplit:
    """Aleatoric / epistemic split of the conditional scale per component.

    aleatoric + epistemic reproduces the conditional scale through the exact
    same arithmetic path, so the identity holds to the last bit.
    """

    aleatoric: np.ndarray  # (K, D_o, D_o), input-independent
    epistemic: np.ndarray  # (K, D_o, D_o), zero at the component input mean
    weights: np.ndarray  # (K,) conditional mixing weights
    dofs: np.ndarray  # (K,) conditional dofs
    means: np.ndarray  # (K, D_o) conditional means


# ---------------------------------------------------------------------------
# Variational fit
# ---------------------------------------------------------------------------


def _kmeanspp_responsibilities(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Hard one-hot responsibilities from k-means++ center seeding."""
    n = x.shape[0]
    centers = [x[int(rng.integers(n))]]
    for _ in range(1, k):
        d2 = np.min(
            np.stack([np.sum((x - c) ** 2, axis=1) for c in centers]), axis=0
        )
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers.append(x[idx])
    dists = np.stack([np.sum((x - c) ** 2, axis=1) for c in centers], axis=1)
    assign = np.argmin(dists, axis=1)
    resp = np.zeros((n, k))
    resp[np.arange(n), assign] = 1.0
    return resp


def _m_step(x: np.ndarray, resp: np.ndarray, prior: BGMMPrior):
    """Closed-form conjugate updates from responsibilities."""
    n, d = x.shape
    nk = resp.sum(axis=0)
    safe = np.maximum(nk, 1e-12)
    xbar = (resp.T @ x) / safe[:, None]
    k = resp.shape[1]
    sk = np.empty((k, d, d))
    for j in range(k):
        diff = x - xbar[j]
        sk[j] = (resp[:, j][:, None] * diff).T @ diff / safe[j]

    alpha = prior.alpha0 + nk
    beta = prior.beta0 + nk
    m = (prior.beta0 * prior.m0 + nk[:, None] * xbar) / beta[:, None]
    nu = prior.nu0 + nk
    w0_inv = np.linalg.inv(prior.W0)
    w = np.empty((k, d, d))
    for j in range(k):
        dm = xbar[j] - prior.m0
        w_inv = w0_inv + nk[j] * sk[j] + (prior.beta0 * nk[j] / beta[j]) * np.outer(dm, dm)
        w_inv = 0.5 * (w_inv + w_inv.T)
        w[j] = np.linalg.inv(w_inv)
        w[j] = 0.5 * (w[j] + w[j].T)
    return alpha, beta, m, w, nu, nk, xbar, sk


def _expected_log_det(w: np.ndarray, nu: np.ndarray) -> np.ndarray:
    k, d, _ = w.shape
    _, logdet = np.linalg.slogdet(w)
    i = np.arange(1, d + 1)
    return digamma(0.5 * (nu[:, None] + 1.0 - i)).sum(axis=1) + d * np.log(2.0) + logdet


def _e_step(x, alpha, beta, m, w, nu):
    """Responsibilities from the expected log mixture terms."""
    n, d = x.shape
    ln_pi = digamma(alpha) - digamma(alpha.sum())
    ln_lam = _expected_log_det(w, nu)
    k = alpha.shape[0]
    quad = np.empty((n, k))
    for j in range(k):
        diff = x - m[j]
        quad[:, j] = np.einsum("ni,ij,nj->n", diff, w[j], diff)
    e_maha = d / beta + nu * quad
    log_rho = ln_pi + 0.5 * ln_lam - 0.5 * d * _LOG_2PI - 0.5 * e_maha
    log_norm = logsumexp(log_rho, axis=1, keepdims=True)
    return np.exp(log_rho - log_norm)


def _log_wishart_b(w: np.ndarray, nu: float, logdet_w: float) -> float:
    d = w.shape[0]
    i = np.arange(1, d + 1)
    return float(
        -0.5 * nu * logdet_w
        - 0.5 * nu * d * np.log(2.0)
        - 0.25 * d * (d - 1) * np.log(np.pi)
        - gammaln(0.5 * (nu + 1.0 - i)).sum()
    )


def _elbo(x, resp, prior, alpha, beta, m, w, nu, nk, xbar, sk):
    n, d = x.shape
    k = alpha.shape[0]
    ln_pi = digamma(alpha) - digamma(alpha.sum())
    ln_lam = _expected_log_det(w, nu)
    _, logdet_w = np.linalg.slogdet(w)

    tr_sw = np.einsum("kij,kji->k", sk, w)
    quad_xbar = np.einsum("ki,kij,kj->k", xbar - m, w, xbar - m)
    p_x = 0.5 * np.sum(
        nk * (ln_lam - d / beta - nu * tr_sw - nu * quad_xbar - d * _LOG_2PI)
    )

    p_z = float(np.sum(nk * ln_pi))

    ln_c_prior = gammaln(k * prior.alpha0) - k * gammaln(prior.alpha0)
    p_pi = ln_c_prior + (prior.alpha0 - 1.0) * ln_pi.sum()

    quad_m = np.einsum("ki,kij,kj->k", m - prior.m0, w, m - prior.m0)
    w0_inv = np.linalg.inv(prior.W0)
    tr_w0inv_w = np.einsum("ij,kji->k", w0_inv, w)
    logdet_w0 = np.linalg.slogdet(prior.W0)[1]
    ln_b0 = _log_wishart_b(prior.W0, prior.nu0, logdet_w0)
    p_mu_lam = (
        0.5 * np.sum(d * np.log(prior.beta0 / (2.0 * np.pi)) + ln_lam
                     - d * prior.beta0 / beta - prior.beta0 * nu * quad_m)
        + k * ln_b0
        + 0.5 * (prior.nu0 - d - 1.0) * ln_lam.sum()
        - 0.5 * np.sum(nu * tr_w0inv_w)
    )

    with np.errstate(divide="ignore", invalid="ignore"):
        log_resp = np.where(resp > 0.0, np.log(resp), 0.0)
    q_z = float(np.sum(resp * log_resp))

    ln_c_post = gammaln(alpha.sum()) - gammaln(alpha).sum()
    q_pi = float(np.sum((alpha - 1.0) * ln_pi) + ln_c_post)

    h_wishart = np.array(
        [
            -_log_wishart_b(w[j], nu[j], logdet_w[j])
            - 0.5 * (nu[j] - d - 1.0) * ln_lam[j]
            + 0.5 * nu[j] * d
            for j in range(k)
        ]
    )
    q_mu_lam = float(
        np.sum(0.5 * ln_lam + 0.5 * d * np.log(beta / (2.0 * np.pi)) - 0.5 * d - h_wishart)
    )

    return p_x + p_z + p_pi + p_mu_lam - q_z - q_pi - q_mu_lam


def _run_vb(x, k, prior, config, resp0):
    resp = resp0
    params = _m_step(x, resp, prior)
    trace = []
    tol = config.tol_scale * x.shape[0]
    for _ in range(config.max_iter):
        alpha, beta, m, w, nu = params[:5]
        resp = _e_step(x, alpha, beta, m, w, nu)
        params = _m_step(x, resp, prior)
        trace.append(_elbo(x, resp, prior, *params))
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) < tol:
            break
    return params, trace


def fit_vb(
    data: Dataset,
    k: int,
    prior: BGMMPrior | None = None,
    config: FitConfig | None = None,
    rng_seed: int = 0,
    warm_start: BGMMPosterior | None = None,
) -> BGMMPosterior:
    """Fit a Bayesian GMM to joint observations by variational EM.

    Iterates digamma-based E-steps against conjugate M-step updates until
    |dELBO| < tol_scale * N or max_iter. Initialization is k-means++ hard
    assignments with ``n_restarts`` seeded restarts keeping the best final
    ELBO; a ``warm_start`` posterior replaces the restarts with a single run
    whose initial responsibilities come from that posterior's E-step.

    Deterministic given ``rng_seed``.
    """
    if k < 1:
        raise ValueError("K must be >= 1")
    x = data.points
    if not np.all(np.isfinite(x)):
        raise ValueError("data contains non-finite values")
    if prior is None:
        prior = default_prior(x)
    if config is None:
        config = FitConfig()

    if warm_start is not None:
        if warm_start.n_components != k:
            raise ValueError("warm start component count does not match K")
        resp0 = _e_step(x, warm_start.alpha, warm_start.beta, warm_start.m,
                        warm_start.W, warm_start.nu)
        best_params, best_trace = _run_vb(x, k, prior, config, resp0)
    else:
        children = np.random.SeedSequence(rng_seed).spawn(config.n_restarts)
        best_params, best_trace = None, None
        for child in children:
            rng = np.random.default_rng(child)
            resp0 = _kmeanspp_responsibilities(x, k, rng)
            params, trace = _run_vb(x, k, prior, config, resp0)
            if best_trace is None or trace[-1] > best_trace[-1]:
                best_params, best_trace = params, trace

    alpha, beta, m, w, nu = best_params[:5]
    return BGMMPosterior(
        alpha=alpha, beta=beta, m=m, W=w, nu=nu, prior=prior,
        dim_in=data.dim_in, dim_out=data.dim_out, elbo_trace=best_trace,
    )


# ---------------------------------------------------------------------------
# Predictive and conditional distributions
# ---------------------------------------------------------------------------


def posterior_predictive(post: BGMMPosterior) -> StudentTMixture:
    """Posterior-predictive mixture of multivariate t components.

    Weights alpha_k / sum(alpha); dof nu_k + 1 - D; mean m_k; and the
    covariance-parameterized scale ((1 + beta_k) / ((nu_k + 1 - D) beta_k))
    W_k^{-1}, i.e. the inverse of the precision-form scale.
    """
    d = post.dim
    dof = post.nu + 1.0 - d
    if np.any(dof <= 0.0):
        raise ValueError(f"predictive dof must be positive, got {dof}")
    weights = post.alpha / post.alpha.sum()
    comps = []
    for j in range(post.n_components):
        w_inv = np.linalg.inv(post.W[j])
        w_inv = 0.5 * (w_inv + w_inv.T)
        scale = ((1.0 + post.beta[j]) / (dof[j] * post.beta[j])) * w_inv
        comps.append(StudentTComponent(post.m[j], scale, float(dof[j])))
    return StudentTMixture(weights, comps)


def _predictive_cache(post: BGMMPosterior) -> dict:
    """Conditioning blocks of the predictive mixture, cached per posterior."""
    if "pred" in post._cache:
        return post._cache["pred"]
    pred = posterior_predictive(post)
    di, do = post.dim_in, post.dim_out
    k = post.n_components
    means = np.stack([c.mean for c in pred.components])
    scales = np.stack([c.scale for c in pred.components])
    dofs = np.array([c.dof for c in pred.components])

    inv_ii = np.empty((k, di, di))
    logdet_ii = np.empty(k)
    gain = np.empty((k, do, di))
    schur = np.empty((k, do, do))
    for j in range(k):
        lii = scales[j][:di, :di]
        loi = scales[j][di:, :di]
        loo = scales[j][di:, di:]
        chol, jit = chol_with_jitter(lii)
        if jit > 0.0:
            lii = lii + jit * np.eye(di)
            chol, _ = chol_with_jitter(lii)
        inv_ii[j] = np.linalg.inv(lii)
        inv_ii[j] = 0.5 * (inv_ii[j] + inv_ii[j].T)
        logdet_ii[j] = 2.0 * np.sum(np.log(np.diag(chol)))
        gain[j] = loi @ inv_ii[j]
        s = loo - gain[j] @ loi.T
        schur[j] = 0.5 * (s + s.T)

    # input-marginal t-density constant per component
    tconst = (
        gammaln(0.5 * (dofs + di))
        - gammaln(0.5 * dofs)
        - 0.5 * di * np.log(dofs * np.pi)
        - 0.5 * logdet_ii
    )
    cache = {
        "weights": pred.weights,
        "log_weights": np.log(pred.weights),
        "dofs": dofs,
        "mean_in": means[:, :di],
        "mean_out": means[:, di:],
        "inv_ii": inv_ii,
        "gain": gain,
        "schur": schur,
        "tconst": tconst,
    }
    post._cache["pred"] = cache
    return cache


def conditional_parts(post: BGMMPosterior, x_in: np.ndarray):
    """Batched conditional-policy pieces at query inputs.

    Args:
        x_in: (N, D_i) query inputs.

    Returns:
        log_weights (N, K), means (N, K, D_o), maha (N, K), dofs_cond (K,),
        dofs_joint (K,), schur (K, D_o, D_o).
    """
    cache = _predictive_cache(post)
    x_in = np.atleast_2d(np.asarray(x_in, dtype=float))
    if not np.all(np.isfinite(x_in)):
        raise ValueError("query input contains non-finite values")
    di = post.dim_in
    if x_in.shape[1] != di:
        raise ValueError(f"expected input dim {di}, got {x_in.shape[1]}")

    diff = x_in[:, None, :] - cache["mean_in"][None, :, :]  # (N, K, Di)
    maha = np.einsum("nki,kij,nkj->nk", diff, cache["inv_ii"], diff)
    dofs = cache["dofs"]
    log_t = cache["tconst"] - 0.5 * (dofs + di) * np.log1p(maha / dofs)
    log_w = cache["log_weights"] + log_t
    peak = log_w.max(axis=1, keepdims=True)
    log_w = log_w - (peak + np.log(np.exp(log_w - peak).sum(axis=1, keepdims=True)))
    means = cache["mean_out"][None] + np.einsum("koi,nki->nko", cache["gain"], diff)
    dofs_cond = dofs + di
    return log_w, means, maha, dofs_cond, dofs, cache["schur"]


def conditional_policy(post: BGMMPosterior, x_in: np.ndarray) -> StudentTMixture:
    """Policy over outputs conditioned on one input point.

    Component weights are the input-marginal t-density responsibilities
    (computed in the log domain); the conditional scale inflates with the
    input Mahalanobis distance and is assembled as aleatoric + epistemic so
    the decomposition identity is exact.
    """
    x_in = np.asarray(x_in, dtype=float)
    log_w, means, maha, dofs_cond, dofs, schur = conditional_parts(post, x_in[None, :])
    weights = np.exp(log_w[0])
    weights = weights / weights.sum()
    comps = []
    for j in range(post.n_components):
        aleatoric = (dofs[j] / dofs_cond[j]) * schur[j]
        epistemic = (maha[0, j] / dofs_cond[j]) * schur[j]
        comps.append(
            StudentTComponent(means[0, j], aleatoric + epistemic, float(dofs_cond[j]))
        )
    return StudentTMixture(weights, comps)


def decompose_uncertainty(post: BGMMPosterior, x_in: np.ndarray) -> UncertaintySplit:
    """Split each conditional scale into aleatoric and epistemic parts.

    aleatoric_k = (nu_k / nu_cond_k) * schur_k  (input-independent)
    epistemic_k = (maha_k(x_in) / nu_cond_k) * schur_k  (quadratic in x_in)
    """
    x_in = np.asarray(x_in, dtype=float)
    log_w, means, maha, dofs_cond, dofs, schur = conditional_parts(post, x_in[None, :])
    weights = np.exp(log_w[0])
    weights = weights / weights.sum()
    aleatoric = (dofs / dofs_cond)[:, None, None] * schur
    epistemic = (maha[0] / dofs_cond)[:, None, None] * schur
    return UncertaintySplit(
        aleatoric=aleatoric,
        epistemic=epistemic,
        weights=weights,
        dofs=dofs_cond,
        means=means[0],
    )


def epistemic_floor(post: BGMMPosterior) -> float:
    """Default diagonal floor for epistemic covariances.

    1e-6 times the median aleatoric trace over components, per output axis;
    input-independent, so cached with the posterior.
    """
    if "ep_floor" in post._cache:
        return post._cache["ep_floor"]
    cache = _predictive_cache(post)
    dofs = cache["dofs"]
    traces = (dofs / (dofs + post.dim_in)) * np.einsum("kii->k", cache["schur"])
    floor = 1e-6 * float(np.median(traces)) / post.dim_out
    post._cache["ep_floor"] = floor
    return floor


def epistemic_conditional_gmm(
    post: BGMMPosterior,
    x_in: np.ndarray,
    mode: str = "epistemic",
) -> GMM:
    """Conditional policy as a GMM carrying one uncertainty part.

    The t-mixture conditional is moment-matched (covariances scaled by
    nu/(nu-2)) and the component covariances keep only the requested part:
    ``total``, ``aleatoric``, or ``epistemic``. The epistemic part gets the
    diagonal floor from :func:`epistemic_floor` so it stays non-singular at
    the component input means.
    """
    if mode not in ("total", "aleatoric", "epistemic"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "total":
        return moment_match_t(conditional_policy(post, x_in))
    split = decompose_uncertainty(post, x_in)
    if np.any(split.dofs <= 2.0):
        bad = int(np.argmax(split.dofs <= 2.0))
        raise ValueError(f"component {bad} conditional dof {split.dofs[bad]} <= 2")
    factors = split.dofs / (split.dofs - 2.0)
    do = post.dim_out
    comps = []
    for j in range(post.n_components):
        if mode == "aleatoric":
            cov = factors[j] * split.aleatoric[j]
        else:
            cov = factors[j] * split.epistemic[j] + epistemic_floor(post) * np.eye(do)
        comps.append(Gaussian(split.means[j], cov))
    return GMM(split.weights, comps)


def _scaled_parts(post: BGMMPosterior, x_in: np.ndarray, mode: str):
    """(log_weights, means, scalars, eps) with cov_nk = scalars_nk * schur_k + eps I."""
    log_w, means, maha, dofs_cond, dofs, schur = conditional_parts(post, x_in)
    if np.any(dofs_cond <= 2.0):
        bad = int(np.argmax(dofs_cond <= 2.0))
        raise ValueError(f"component {bad} conditional dof {dofs_cond[bad]} <= 2")
    factors = dofs_cond / (dofs_cond - 2.0)
    n, k = maha.shape
    if mode == "total":
        scalars = factors * (dofs + maha) / dofs_cond
        eps = 0.0
    elif mode == "aleatoric":
        scalars = np.broadcast_to(factors * dofs / dofs_cond, (n, k))
        eps = 0.0
    elif mode == "epistemic":
        scalars = factors * maha / dofs_cond
        eps = epistemic_floor(post)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return log_w, means, scalars, schur, eps


def epistemic_entropy_values(
    post: BGMMPosterior, x_in: np.ndarray, mode: str = "epistemic"
) -> np.ndarray:
    """Quadratic Renyi entropy of the uncertainty GMM at (N, D_i) inputs.

    Hot path of the information-density cost: for D_o <= 2 the pairwise
    Gaussian overlaps are evaluated with scalar arithmetic on the upper
    triangle of the shared Schur factors instead of materializing
    (N, K, K, D_o, D_o) covariances.
    """
    log_w, means, scalars, schur, eps = _scaled_parts(post, x_in, mode)
    do = post.dim_out
    n, k = scalars.shape
    if do > 2:
        from .gaussians import renyi2_batch

        covs = scalars[:, :, None, None] * schur[None] + eps * np.eye(do)
        weights = np.exp(log_w)
        weights = weights / weights.sum(axis=1, keepdims=True)
        return renyi2_batch(weights, means, covs)

    iu, ju = np.triu_indices(k)
    pair_logw = log_w[:, iu] + log_w[:, ju]
    pair_logw[:, iu != ju] += np.log(2.0)  # off-diagonal pairs count twice
    if do == 1:
        cm = scalars * schur[None, :, 0, 0]
        var = cm[:, iu] + cm[:, ju] + 2.0 * eps
        dx = means[:, iu, 0] - means[:, ju, 0]
        log_norm = -0.5 * (_LOG_2PI + np.log(var) + dx * dx / var)
    else:
        c00 = scalars * schur[None, :, 0, 0]
        c01 = scalars * schur[None, :, 0, 1]
        c11 = scalars * schur[None, :, 1, 1]
        s00 = c00[:, iu] + c00[:, ju] + 2.0 * eps
        s01 = c01[:, iu] + c01[:, ju]
        s11 = c11[:, iu] + c11[:, ju] + 2.0 * eps
        det = s00 * s11 - s01 * s01
        dx = means[:, iu, 0] - means[:, ju, 0]
        dy = means[:, iu, 1] - means[:, ju, 1]
        quad = (s11 * dx * dx - 2.0 * s01 * dx * dy + s00 * dy * dy) / det
        log_norm = -_LOG_2PI - 0.5 * np.log(det) - 0.5 * quad
    terms = pair_logw + log_norm
    peak = terms.max(axis=1)
    return -(peak + np.log(np.exp(terms - peak[:, None]).sum(axis=1)))


def epistemic_entropy_inputs(
    post: BGMMPosterior, x_in: np.ndarray, mode: str = "epistemic"
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched (weights, means, covariances) of the uncertainty GMM.

    Same construction as :func:`epistemic_conditional_gmm` across (N, D_i)
    inputs at once; feeds :func:`activelfd.gaussians.renyi2_batch` for grid
    and Monte-Carlo cost evaluation.
    """
    log_w, means, maha, dofs_cond, dofs, schur = conditional_parts(post, x_in)
    if np.any(dofs_cond <= 2.0):
        bad = int(np.argmax(dofs_cond <= 2.0))
        raise ValueError(f"component {bad} conditional dof {dofs_cond[bad]} <= 2")
    weights = np.exp(log_w)
    weights = weights / weights.sum(axis=1, keepdims=True)
    factors = dofs_cond / (dofs_cond - 2.0)
    do = post.dim_out
    n, k = maha.shape
    if mode == "total":
        scalars = factors * (dofs + maha) / dofs_cond
        covs = scalars[:, :, None, None] * schur[None]
    elif mode == "aleatoric":
        scalars = factors * dofs / dofs_cond
        covs = np.broadcast_to(
            (scalars[:, None, None] * schur)[None], (n, k, do, do)
        ).copy()
    elif mode == "epistemic":
        scalars = factors * maha / dofs_cond
        covs = scalars[:, :, None, None] * schur[None]
        covs = covs + epistemic_floor(post) * np.eye(do)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return weights, means, covs
