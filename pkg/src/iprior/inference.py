"""Marginal likelihood and posterior computations.

The model is y_i = f0 + f(x_i) + e_i with f(x) = sum_j h(x, x_j) w_j,
w ~ N(0, psi I) and iid errors e ~ N(0, psi^{-1} I), so the response
covariance is V = psi H^2 + psi^{-1} I.  V shares eigenvectors with H,
hence one symmetric eigendecomposition of H serves every likelihood,
posterior, and gradient evaluation; no dense V or V^{-1} is ever formed.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import anova, kernels
from .anova import assemble, build_term_cache, d_assemble, scale_vector
from .errors import ConfigError, DataMismatchError, NumericalFailure
from .kernels import build_gram_set, cross_gram, pair_gram

log = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ErrorModel:
    """Observation-noise model; iid precision is the only structure."""

    psi: float
    kind: str = "iid"

    def __post_init__(self):
        if self.kind != "iid":
            raise ConfigError(f"unsupported error structure {self.kind!r}")
        if not np.isfinite(self.psi) or self.psi <= 0.0:
            raise ConfigError(f"error precision must be positive, got {self.psi}")


def spectral_factor(H):
    """Eigendecomposition of a symmetric kernel matrix.

    A failed decomposition is retried once with a relative jitter of
    1e-10 times the largest entry on the diagonal; the event is logged.
    """
    H = np.asarray(H, dtype=float)
    try:
        d, U = np.linalg.eigh(H)
    except np.linalg.LinAlgError:
        scale = float(np.max(np.abs(H))) or 1.0
        log.warning("eigendecomposition failed, retrying with jitter %.3e", 1e-10 * scale)
        d, U = np.linalg.eigh(H + 1e-10 * scale * np.eye(H.shape[0]))
    return d, U


@dataclass(frozen=True)
class VyFactor:
    """Spectral form of V = psi H^2 + psi^{-1} I."""

    U: object
    d: object
    psi: float

    @property
    def n(self):
        return len(self.d)

    @property
    def variances(self):
        return self.psi * self.d**2 + 1.0 / self.psi

    def rotate(self, x):
        return self.U.T @ x

    def solve(self, x):
        """V^{-1} x for a vector or a stack of columns."""
        xr = self.U.T @ x
        if xr.ndim == 1:
            return self.U @ (xr / self.variances)
        return self.U @ (xr / self.variances[:, None])

    def logdet(self):
        return float(np.sum(np.log(self.variances)))

    def dense(self):
        return (self.U * self.variances[None, :]) @ self.U.T


def marginal_cov(H, error):
    """Factorized response covariance for a combined kernel matrix."""
    d, U = spectral_factor(H)
    return VyFactor(U=U, d=d, psi=float(error.psi))


# ---------------------------------------------------------------------------
# training bundle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Problem:
    """Everything fixed during estimation: grams, terms, response."""

    grams: object        # GramSet
    spec: object         # AnovaSpec
    cache: dict          # term -> entrywise product of grams
    y: object
    f0: float
    response_name: str = "y"

    @property
    def n(self):
        return len(self.y)

    @property
    def residual(self):
        return self.y - self.f0

    def h_matrix(self, lam):
        return assemble(self.spec, lam, self.cache)

    def h_derivative(self, lam, k):
        return d_assemble(self.spec, lam, self.cache, k)


def build_problem(dataset, kernel_specs, spec, f0=None):
    """Assemble the training-side bundle from a dataset with a response."""
    if dataset.response is None:
        raise ConfigError("training data needs a response column")
    missing = [name for name in spec.covariates if name not in kernel_specs]
    if missing:
        raise ConfigError(f"no kernel assigned to covariates {missing}")
    grams = build_gram_set(dataset, {name: kernel_specs[name] for name in spec.covariates})
    cache = build_term_cache(spec, {name: grams[name].matrix for name in grams.names()})
    y = np.asarray(dataset.response, dtype=float)
    f0 = float(np.mean(y)) if f0 is None else float(f0)
    return Problem(grams=grams, spec=spec, cache=cache, y=y, f0=f0,
                   response_name=dataset.response_name or "y")


# ---------------------------------------------------------------------------
# likelihood and posterior
# ---------------------------------------------------------------------------

def loglik_from_factor(factor, r):
    """Log marginal density of the residual under the factorized V."""
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        rr = factor.rotate(r)
        v = factor.variances
        value = -0.5 * (factor.n * LOG_2PI + np.sum(np.log(v)) + np.sum(rr * rr / v))
    if not np.isfinite(value):
        raise NumericalFailure("non-finite log marginal likelihood",
                               psi=factor.psi, n=factor.n)
    return float(value)


def log_marginal_likelihood(H, error, y, f0=None):
    """Log marginal likelihood of responses under the combined kernel."""
    y = np.asarray(y, dtype=float)
    f0 = float(np.mean(y)) if f0 is None else float(f0)
    return loglik_from_factor(marginal_cov(H, error), y - f0)


def posterior_weights(factor, r):
    """Posterior mean of the hidden weights, psi H V^{-1} r."""
    rr = factor.rotate(r)
    gain = factor.psi * factor.d / factor.variances
    return factor.U @ (gain * rr)


def gradient_log_marginal(problem, lam, psi):
    """Analytic gradient of the log marginal likelihood.

    Returns (d/d lambda, d/d log psi); the precision is differentiated on
    the log scale since that is how it is profiled and error-barred.
    """
    H = problem.h_matrix(lam)
    factor = marginal_cov(H, ErrorModel(psi))
    r = problem.residual
    v = factor.variances
    rr = factor.rotate(r)
    a_bar = rr / v                      # V^{-1} r in the eigenbasis
    a = factor.U @ a_bar
    Ha = factor.U @ (factor.d * a_bar)
    VinvH = (factor.U * (factor.d / v)[None, :]) @ factor.U.T

    grad_lam = np.empty(problem.spec.n_scales)
    for k in range(problem.spec.n_scales):
        B = problem.h_derivative(lam, k)
        # dV/dlam_k = psi (B H + H B); both trace and quadratic parts pair up
        trace = 2.0 * psi * float(np.sum(VinvH * B))
        quad = 2.0 * psi * float(a @ (B @ Ha))
        grad_lam[k] = -0.5 * trace + 0.5 * quad
    # dV/dpsi = H^2 - psi^{-2} I, diagonal in the eigenbasis
    dv = factor.d**2 - 1.0 / psi**2
    grad_psi = -0.5 * float(np.sum(dv / v)) + 0.5 * float(np.sum(a_bar * a_bar * dv))
    return grad_lam, psi * grad_psi


# ---------------------------------------------------------------------------
# fitted models and prediction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FittedModel:
    """A trained model: scales, noise precision, and posterior state."""

    problem: object
    lam: object          # ScaleVector
    error: ErrorModel
    w_hat: object
    factor: VyFactor
    loglik: float
    status: str = "fixed"
    label: str = "model"
    trace: tuple = ()          # EMState per iteration of the winning restart
    diagnostics: tuple = ()    # one report per restart

    @property
    def f0(self):
        return self.problem.f0

    @property
    def n(self):
        return self.problem.n

    @property
    def n_rows(self):
        return self.problem.n

    @property
    def spec(self):
        return self.problem.spec

    def h_matrix(self):
        return self.problem.h_matrix(self.lam.values)


def evaluate_model(problem, lam, psi, status="fixed", label="model"):
    """FittedModel at explicitly chosen parameters (no estimation)."""
    lam = np.asarray(lam, dtype=float).ravel()
    factor = marginal_cov(problem.h_matrix(lam), ErrorModel(psi))
    r = problem.residual
    return FittedModel(problem=problem,
                       lam=scale_vector(problem.spec, lam),
                       error=ErrorModel(psi),
                       w_hat=posterior_weights(factor, r),
                       factor=factor,
                       loglik=loglik_from_factor(factor, r),
                       status=status,
                       label=label)


def _points_columns(model, points):
    used = {name for term in model.spec.terms for name in term}
    out = {}
    for name in sorted(used):
        entry = model.problem.grams[name]
        if hasattr(points, "column"):
            col = points.column(name)
        else:
            try:
                col = points[name]
            except KeyError:
                raise DataMismatchError(f"prediction points lack covariate {name!r}") from None
        out[name] = (entry, col)
    return out


def cross_matrix(model, points):
    """(n_new, n_train) combined kernel block between new and training points."""
    cols = _points_columns(model, points)
    blocks = {name: cross_gram(entry, col) for name, (entry, col) in cols.items()}
    cache = build_term_cache(model.spec, blocks)
    return assemble(model.spec, model.lam.values, cache)


@dataclass(frozen=True)
class PosteriorF:
    mean: object
    var: object

    @property
    def sd(self):
        return np.sqrt(np.maximum(self.var, 0.0))


def posterior_f(model, points, full_cov=False):
    """Posterior mean and variance of the regression function at new points."""
    K = cross_matrix(model, points)
    mean = model.f0 + K @ model.w_hat
    KU = K @ model.factor.U
    scaled = KU / model.factor.variances[None, :]
    if full_cov:
        cov = scaled @ KU.T
        return PosteriorF(mean=mean, var=np.diag(cov).copy()), cov
    var = np.sum(scaled * KU, axis=1)
    return PosteriorF(mean=mean, var=var)


def predictive(model, points):
    """Posterior predictive for new responses: adds the noise variance."""
    post = posterior_f(model, points)
    return PosteriorF(mean=post.mean, var=post.var + 1.0 / model.error.psi)


def fitted_values(model):
    """Posterior mean of f0 + f at the training points."""
    rr = model.factor.rotate(model.problem.residual)
    shrink = model.factor.psi * model.factor.d**2 / model.factor.variances
    return model.f0 + model.factor.U @ (shrink * rr)


def training_posterior(model):
    """Posterior over f at the training points via the spectral factor."""
    mean = fitted_values(model)
    M = model.factor.U * (model.factor.d**2 / model.factor.variances)[None, :]
    cov = M @ model.factor.U.T
    return PosteriorF(mean=mean, var=np.diag(cov).copy()), cov


# ---------------------------------------------------------------------------
# Fisher information
# ---------------------------------------------------------------------------

def fisher_information(grams, spec, lam, psi, points_a, points_b=None, sample=None):
    """Fisher information of the regression function between point sets.

    With iid error precision psi the information between x and x' is
    psi * sum_i h(x, s_i) h(x', s_i), summed over the weighting sample
    (the training points unless `sample` overrides them; kernels stay
    centered by the training statistics either way).
    """
    lam = np.asarray(lam, dtype=float).ravel()
    used = sorted({name for term in spec.terms for name in term})

    def _col(points, name):
        if hasattr(points, "column"):
            return points.column(name)
        return points[name]

    def rows(points):
        if sample is None:
            blocks = {name: cross_gram(grams[name], _col(points, name)) for name in used}
        else:
            blocks = {name: pair_gram(grams[name], _col(points, name), _col(sample, name))
                      for name in used}
        return assemble(spec, lam, build_term_cache(spec, blocks))

    Ka = rows(points_a)
    Kb = Ka if points_b is None else rows(points_b)
    return psi * (Ka @ Kb.T)
