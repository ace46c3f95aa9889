"""Exact Gaussian / GMM / Student-t numerics.

Densities, sampling, products, conditioning, moment matching and the
closed-form quadratic Renyi entropy of Gaussian mixtures, together with a
quadrature oracle for verifying the closed form in low dimensions.

All values are immutable after construction and all operations are pure
functions of their inputs; RNG state is caller-supplied per call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson
from scipy.special import gammaln, logsumexp

__all__ = [
    "Gaussian",
    "GMM",
    "StudentTComponent",
    "StudentTMixture",
    "chol_with_jitter",
    "gaussian_product",
    "gaussian_condition",
    "gmm_log_density",
    "gmm_sample",
    "moment_match_t",
    "renyi2_entropy",
    "renyi2_batch",
    "renyi2_entropy_quadrature",
    "student_t_logpdf",
]

# Jitter policy: a covariance failing Cholesky gets eps*trace/d added to its
# diagonal, starting at eps=1e-9 and multiplying eps by 100 on each of up to
# 3 retries; the final failure is an error.
_JITTER_EPS0 = 1e-9
_JITTER_GROWTH = 100.0
_JITTER_RETRIES = 3

_LOG_2PI = float(np.log(2.0 * np.pi))


def chol_with_jitter(cov: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky factor of ``cov``, applying the diagonal jitter policy.

    Returns:
        (lower_triangular_factor, jitter): jitter is the diagonal amount that
        had to be added (0.0 when the matrix factorizes as given).

    Raises:
        np.linalg.LinAlgError: if the matrix is still not positive-definite
            after the final retry.
    """
    cov = np.asarray(cov, dtype=float)
    d = cov.shape[0]
    scale = np.trace(cov) / d
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    eps = _JITTER_EPS0
    jitter = 0.0
    attempt = cov
    for retry in range(_JITTER_RETRIES + 1):
        try:
            return np.linalg.cholesky(attempt), jitter
        except np.linalg.LinAlgError:
            if retry == _JITTER_RETRIES:
                raise np.linalg.LinAlgError(
                    f"covariance not positive-definite after jitter up to "
                    f"{jitter:.3e}"
                )
            jitter = eps * scale
            attempt = cov + jitter * np.eye(d)
            eps *= _JITTER_GROWTH
    raise AssertionError("unreachable")


def _as_vector(x, dim: int | None = None) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"expected a vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {v.shape[0]}")
    return v


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass
class Gaussian:
    """Multivariate normal with mean vector and SPD covariance.

    The constructor validates symmetry (1e-12 relative asymmetry) and
    enforces positive-definiteness through the jitter policy, so every
    constructed instance has a valid Cholesky factor.
    """

    mean: np.ndarray
    covariance: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = _as_vector(self.mean)
        cov = np.asarray(self.covariance, dtype=float)
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise ValueError(f"covariance shape {cov.shape} does not match dim {d}")
        sym_err = np.abs(cov - cov.T).max()
        scale = max(np.abs(cov).max(), 1.0)
        if sym_err > 1e-12 * scale:
            raise ValueError(f"covariance asymmetric: |A - A^T| max {sym_err:.3e}")
        cov = 0.5 * (cov + cov.T)
        chol, jitter = chol_with_jitter(cov)
        if jitter > 0.0:
            cov = cov + jitter * np.eye(d)
            chol, _ = chol_with_jitter(cov)
        self.mean = _freeze(mean)
        self.covariance = _freeze(cov)
        self._chol = _freeze(chol)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def chol(self) -> np.ndarray:
        """Lower Cholesky factor of the covariance."""
        return self._chol

    def log_density(self, x: np.ndarray) -> np.ndarray | float:
        """Log N(x | mean, covariance); ``x`` may be (d,) or (n, d)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        if pts.shape[1] != self.dim:
            raise ValueError(f"dimension mismatch: got {pts.shape[1]}, expected {self.dim}")
        diff = pts - self.mean
        z = np.linalg.solve(self._chol, diff.T)
        maha = np.sum(z * z, axis=0)
        logdet = 2.0 * np.sum(np.log(np.diag(self._chol)))
        out = -0.5 * (self.dim * _LOG_2PI + logdet + maha)
        return float(out[0]) if single else out

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self._chol.T

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "covariance": self.covariance.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Gaussian":
        return cls(np.asarray(d["mean"]), np.asarray(d["covariance"]))


@dataclass
class GMM:
    """Gaussian mixture: probability weights over components of equal dim."""

    weights: np.ndarray
    components: list[Gaussian]

    def __post_init__(self):
        w = _as_vector(self.weights)
        if len(self.components) != w.shape[0]:
            raise ValueError("weights and components length mismatch")
        if np.any(w < 0.0):
            raise ValueError("weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1 within 1e-9")
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise ValueError(f"components have mixed dims {sorted(dims)}")
        self.weights = _freeze(w)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def n_components(self) -> int:
        return len(self.components)

    def means(self) -> np.ndarray:
        return np.stack([c.mean for c in self.components])

    def covariances(self) -> np.ndarray:
        return np.stack([c.covariance for c in self.components])

    def mean(self) -> np.ndarray:
        """Mixture mean."""
        return self.weights @ self.means()

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "components": [c.to_dict() for c in self.components],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GMM":
        return cls(
            np.asarray(d["weights"]),
            [Gaussian.from_dict(c) for c in d["components"]],
        )


@dataclass
class StudentTComponent:
    """Multivariate Student-t with covariance-parameterized scale matrix."""

    mean: np.ndarray
    scale: np.ndarray
    dof: float

    def __post_init__(self):
        mean = _as_vector(self.mean)
        scale = np.asarray(self.scale, dtype=float)
        d = mean.shape[0]
        if scale.shape != (d, d):
            raise ValueError(f"scale shape {scale.shape} does not match dim {d}")
        if not self.dof > 0.0:
            raise ValueError(f"dof must be > 0, got {self.dof}")
        scale = 0.5 * (scale + scale.T)
        chol, jitter = chol_with_jitter(scale)
        if jitter > 0.0:
            scale = scale + jitter * np.eye(d)
        self.mean = _freeze(mean)
        self.scale = _freeze(scale)
        self.dof = float(self.dof)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def log_density(self, x: np.ndarray) -> np.ndarray | float:
        return student_t_logpdf(x, self.mean, self.scale, self.dof)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "dof": self.dof,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StudentTComponent":
        return cls(np.asarray(d["mean"]), np.asarray(d["scale"]), float(d["dof"]))


@dataclass
class StudentTMixture:
    """Mixture of multivariate t-distributions."""

    weights: np.ndarray
    components: list[StudentTComponent]

    def __post_init__(self):
        w = _as_vector(self.weights)
        if len(self.components) != w.shape[0]:
            raise ValueError("weights and components length mismatch")
        if np.any(w < 0.0):
            raise ValueError("weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1 within 1e-9")
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise ValueError(f"components have mixed dims {sorted(dims)}")
        self.weights = _freeze(w)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def log_density(self, x: np.ndarray) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        logs = np.stack([c.log_density(pts) for c in self.components])
        out = logsumexp(logs, axis=0, b=self.weights[:, None])
        return float(out[0]) if single else out

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "components": [c.to_dict() for c in self.components],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StudentTMixture":
        return cls(
            np.asarray(d["weights"]),
            [StudentTComponent.from_dict(c) for c in d["components"]],
        )


def student_t_logpdf(x, mean, scale, dof) -> np.ndarray | float:
    """Log density of a multivariate t with covariance-parameterized scale.

    log t(x) = lgamma((nu+p)/2) - lgamma(nu/2) - p/2 log(nu pi)
               - 1/2 log|S| - (nu+p)/2 log(1 + maha/nu)
    """
    x = np.asarray(x, dtype=float)
    mean = _as_vector(mean)
    p = mean.shape[0]
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if pts.shape[1] != p:
        raise ValueError(f"dimension mismatch: got {pts.shape[1]}, expected {p}")
    chol, _ = chol_with_jitter(np.asarray(scale, dtype=float))
    diff = pts - mean
    z = np.linalg.solve(chol, diff.T)
    maha = np.sum(z * z, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    out = (
        gammaln(0.5 * (dof + p))
        - gammaln(0.5 * dof)
        - 0.5 * p * np.log(dof * np.pi)
        - 0.5 * logdet
        - 0.5 * (dof + p) * np.log1p(maha / dof)
    )
    return float(out[0]) if single else out


def gaussian_product(a: Gaussian, b: Gaussian) -> tuple[Gaussian, float]:
    """Pointwise product of two Gaussian densities.

    N_a(x) * N_b(x) = exp(log_scale) * N_result(x) for all x, where the
    result has precision prec(a) + prec(b) and precision-weighted mean, and
    log_scale = log N(mean_a | mean_b, cov_a + cov_b).

    Raises:
        ValueError: on dimension mismatch.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    prec_a = np.linalg.inv(a.covariance)
    prec_b = np.linalg.inv(b.covariance)
    prec = prec_a + prec_b
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (prec_a @ a.mean + prec_b @ b.mean)
    overlap = Gaussian(b.mean, a.covariance + b.covariance)
    log_scale = float(overlap.log_density(a.mean))
    return Gaussian(mean, cov), log_scale


def gaussian_condition(joint: Gaussian, input_dims, x_in) -> Gaussian:
    """Condition a joint Gaussian on the coordinates in ``input_dims``.

    Returns the Gaussian over the remaining coordinates (in their original
    order) with mean mu_o + S_oi S_ii^{-1} (x_in - mu_i) and the Schur
    complement covariance S_oo - S_oi S_ii^{-1} S_io.
    """
    input_dims = np.asarray(input_dims, dtype=int)
    d = joint.dim
    if input_dims.size == 0 or input_dims.size >= d:
        raise ValueError("input_dims must be a strict non-empty subset of dimensions")
    if len(set(input_dims.tolist())) != input_dims.size:
        raise ValueError("input_dims contains duplicates")
    x_in = _as_vector(x_in, input_dims.size)
    mask = np.zeros(d, dtype=bool)
    mask[input_dims] = True
    out_dims = np.flatnonzero(~mask)

    cov = joint.covariance
    s_ii = cov[np.ix_(input_dims, input_dims)]
    s_oi = cov[np.ix_(out_dims, input_dims)]
    s_oo = cov[np.ix_(out_dims, out_dims)]
    chol_ii, jitter = chol_with_jitter(s_ii)
    if jitter > 0.0:
        chol_ii, _ = chol_with_jitter(s_ii + jitter * np.eye(s_ii.shape[0]))

    diff = x_in - joint.mean[input_dims]
    # gain = S_oi S_ii^{-1} via two triangular solves against the factor
    tmp = np.linalg.solve(chol_ii, s_oi.T)
    gain = np.linalg.solve(chol_ii.T, tmp).T
    mean = joint.mean[out_dims] + gain @ diff
    cov_out = s_oo - gain @ s_oi.T
    cov_out = 0.5 * (cov_out + cov_out.T)
    return Gaussian(mean, cov_out)


def gmm_log_density(g: GMM, x) -> np.ndarray | float:
    """log sum_k w_k N(x | mu_k, S_k), accumulated in the log domain."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if pts.shape[1] != g.dim:
        raise ValueError(f"dimension mismatch: got {pts.shape[1]}, expected {g.dim}")
    logs = np.stack([c.log_density(pts) for c in g.components])
    out = logsumexp(logs, axis=0, b=g.weights[:, None])
    return float(out[0]) if single else out


def gmm_sample(g: GMM, rng_seed, n: int) -> np.ndarray:
    """Draw ``n`` samples; categorical component draw, then Gaussian draw.

    ``rng_seed`` is an int seed or a ``np.random.Generator``; output is
    deterministic given a seed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng_seed) if not isinstance(rng_seed, np.random.Generator) else rng_seed
    idx = rng.choice(g.n_components, size=n, p=g.weights)
    z = rng.standard_normal((n, g.dim))
    out = np.empty((n, g.dim))
    for k in range(g.n_components):
        sel = idx == k
        if np.any(sel):
            comp = g.components[k]
            out[sel] = comp.mean + z[sel] @ comp.chol.T
    return out


def moment_match_t(t: StudentTMixture) -> GMM:
    """Gaussian approximation of a t-mixture preserving means and weights.

    Each component keeps its mean and gets covariance (nu/(nu-2)) * scale;
    mixing coefficients are copied unchanged.

    Raises:
        ValueError: if any component has dof <= 2 (variance undefined),
            naming the offending component.
    """
    comps = []
    for k, c in enumerate(t.components):
        if c.dof <= 2.0:
            raise ValueError(
                f"component {k} has dof {c.dof} <= 2: variance undefined, "
                "cannot moment-match"
            )
        comps.append(Gaussian(c.mean, (c.dof / (c.dof - 2.0)) * c.scale))
    return GMM(t.weights.copy(), comps)


def renyi2_batch(weights: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """Quadratic Renyi entropy for a batch of GMMs sharing K and d.

    Args:
        weights: (N, K) rows of mixture weights.
        means: (N, K, d) component means.
        covs: (N, K, d, d) component covariances (assumed SPD).

    Returns:
        (N,) entropies H2 = -log sum_ij w_i w_j N(mu_i | mu_j, S_i + S_j),
        with the K^2 sum accumulated via log-sum-exp.

    The pairwise Gaussian overlap is evaluated with closed-form d<=2
    arithmetic (the hot path of the active-learning cost) and a batched
    linalg fallback for d >= 3.
    """
    weights = np.asarray(weights, dtype=float)
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    n, k, d = means.shape

    pair_cov = covs[:, :, None, :, :] + covs[:, None, :, :, :]
    diff = means[:, :, None, :] - means[:, None, :, :]

    if d == 1:
        var = pair_cov[..., 0, 0]
        log_norm = -0.5 * (_LOG_2PI + np.log(var) + diff[..., 0] ** 2 / var)
    elif d == 2:
        s00 = pair_cov[..., 0, 0]
        s01 = pair_cov[..., 0, 1]
        s11 = pair_cov[..., 1, 1]
        det = s00 * s11 - s01 * s01
        dx = diff[..., 0]
        dy = diff[..., 1]
        quad = (s11 * dx * dx - 2.0 * s01 * dx * dy + s00 * dy * dy) / det
        log_norm = -_LOG_2PI - 0.5 * np.log(det) - 0.5 * quad
    else:
        sign, logdet = np.linalg.slogdet(pair_cov)
        sol = np.linalg.solve(pair_cov, diff[..., None])[..., 0]
        quad = np.einsum("nijd,nijd->nij", diff, sol)
        log_norm = -0.5 * (d * _LOG_2PI + logdet + quad)

    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    log_terms = logw[:, :, None] + logw[:, None, :] + log_norm
    return -logsumexp(log_terms.reshape(n, k * k), axis=1)


def renyi2_entropy(g: GMM) -> float:
    """Closed-form quadratic Renyi entropy H2 = -log integral p^2.

    For a single Gaussian this reduces to (d/2) log(4 pi) + (1/2) log|S|.
    """
    return float(
        renyi2_batch(g.weights[None], g.means()[None], g.covariances()[None])[0]
    )


def _adaptive_simpson(f, a: float, b: float, tol: float) -> float:
    """Adaptive Simpson quadrature with Richardson acceptance test.

    ``f`` must accept a vector of abscissae. Interval stack based, so stack
    depth is bounded and evaluation stays vectorized per level.
    """
    def simp(x0, x2, f0, f1, f2):
        return (x2 - x0) / 6.0 * (f0 + 4.0 * f1 + f2)

    mid = 0.5 * (a + b)
    fa, fm, fb = f(np.array([a, mid, b]))
    whole = simp(a, b, fa, fm, fb)
    # stack entries: (a, b, fa, fm, fb, whole, tol)
    stack = [(a, b, fa, fm, fb, whole, tol)]
    total = 0.0
    max_splits = 10_000_000
    splits = 0
    while stack:
        x0, x2, f0, f1, f2, s_whole, t = stack.pop()
        xl = 0.5 * (x0 + 0.5 * (x0 + x2))
        xr = 0.5 * (0.5 * (x0 + x2) + x2)
        fl, fr = f(np.array([xl, xr]))
        xm = 0.5 * (x0 + x2)
        s_left = simp(x0, xm, f0, fl, f1)
        s_right = simp(xm, x2, f1, fr, f2)
        err = s_left + s_right - s_whole
        if abs(err) <= 15.0 * t or splits >= max_splits:
            total += s_left + s_right + err / 15.0
        else:
            splits += 1
            stack.append((x0, xm, f0, fl, f1, s_left, 0.5 * t))
            stack.append((xm, x2, f1, fr, f2, s_right, 0.5 * t))
    return total


def renyi2_entropy_quadrature(g: GMM) -> float:
    """Quadrature oracle for the quadratic Renyi entropy, d <= 2 only.

    Integrates p^2 over the union of mean +/- 8 std boxes: adaptive Simpson
    (tol 1e-9) in 1D, a 2001^2 tensor grid with Simpson weights in 2D.
    Documented accuracy: ~1e-7 (1D), ~1e-4 (2D).

    Raises:
        ValueError: for d > 2.
    """
    d = g.dim
    if d > 2:
        raise ValueError(f"quadrature oracle supports d <= 2, got {d}")
    means = g.means()
    stds = np.sqrt(np.stack([np.diag(c.covariance) for c in g.components]))
    lo = (means - 8.0 * stds).min(axis=0)
    hi = (means + 8.0 * stds).max(axis=0)

    if d == 1:
        def p_squared(x):
            return np.exp(2.0 * gmm_log_density(g, x[:, None]))

        integral = _adaptive_simpson(p_squared, float(lo[0]), float(hi[0]), 1e-9)
        return -float(np.log(integral))

    n_grid = 2001
    xs = np.linspace(lo[0], hi[0], n_grid)
    ys = np.linspace(lo[1], hi[1], n_grid)
    row_integrals = np.empty(n_grid)
    chunk = 64
    for start in range(0, n_grid, chunk):
        stop = min(start + chunk, n_grid)
        xx, yy = np.meshgrid(xs[start:stop], ys, indexing="ij")
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        dens = np.exp(2.0 * gmm_log_density(g, pts)).reshape(stop - start, n_grid)
        row_integrals[start:stop] = simpson(dens, x=ys, axis=1)
    integral = simpson(row_integrals, x=xs)
    return -float(np.log(integral))
