"""EM estimation of the kernel scales and the error precision.

The E-step needs the posterior moments of the hidden weights; with iid
errors their posterior precision coincides with the response covariance V,
so the moments fall out of the same spectral factor as the likelihood.
The M-step maximizes the expected complete-data objective

    Q = -psi/2 * E||y - f0 - H w||^2 - 1/(2 psi) * tr E[w w']

coordinate by coordinate.  Because the combined matrix H is affine in each
scale coordinate, each coordinate update is an exact Newton step on a
concave quadratic; the precision update is a closed-form square root.
Everything the sweeps need reduces to the per-term-pair traces
P[i, j] = tr(T_i T_j W) and linear terms s[i] = r' T_i w, so sweeping is
O(#terms^2) scalar work no matter how large n is.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .anova import d_term_coefficients, scale_vector, term_coefficients
from .errors import ConfigError, FitError, NumericalFailure
from .inference import (
    ErrorModel,
    FittedModel,
    build_problem,
    loglik_from_factor,
    log_marginal_likelihood,
    marginal_cov,
    posterior_weights,
)
from .kernels import FBM, SQEXP

log = logging.getLogger(__name__)

_CURV_EPS = 1e-13


@dataclass(frozen=True)
class FitConfig:
    """Knobs for em_fit; restart draws all flow from `seed`."""

    max_iter: int = 200
    rel_tol: float = 1e-8
    restarts: int = 4
    seed: int = 0
    psi_init: float = None
    lam_init: tuple = None
    q_tol: float = 1e-10
    max_sweeps: int = 100

    def __post_init__(self):
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")
        if self.rel_tol <= 0 or self.q_tol <= 0:
            raise ConfigError("tolerances must be positive")
        if self.restarts < 1:
            raise ConfigError("restarts must be at least 1")
        if self.psi_init is not None and not self.psi_init > 0:
            raise ConfigError("psi_init must be positive")


@dataclass(frozen=True)
class EMState:
    """One row of the fit trace."""

    iteration: int
    lam: tuple
    psi: float
    loglik: float


@dataclass(frozen=True)
class RestartReport:
    index: int
    lam0: tuple
    psi0: float
    loglik: float = None
    status: str = "failed"
    error: str = None


@dataclass(frozen=True)
class EMoments:
    """Posterior mean and second moment of the hidden weights."""

    w: object
    W: object


@dataclass(frozen=True)
class EStepStats:
    """Everything an M-step sweep reads, already reduced over n."""

    loglik: float
    pair: object      # P[i, j] = tr(T_i T_j W)
    lin: object       # s[i] = r' T_i w
    tr_w: float       # tr W
    rss: float        # r' r


# ---------------------------------------------------------------------------
# dense backend
# ---------------------------------------------------------------------------

class DenseBackend:
    """E-step reductions computed from explicit n x n matrices."""

    # above this many cached pair-product entries, recompute them on the fly
    _CACHE_BUDGET = 30_000_000

    def __init__(self, problem):
        self.problem = problem
        self.spec = problem.spec
        self.r = problem.residual
        self.n_rows = problem.n
        self.terms = [problem.cache[t] for t in problem.spec.terms]
        t = len(self.terms)
        n = problem.n
        self._pair_products = None
        if t * (t + 1) // 2 * n * n <= self._CACHE_BUDGET:
            self._pair_products = {}
            for i in range(t):
                for j in range(i, t):
                    self._pair_products[i, j] = self.terms[i] @ self.terms[j]

    @property
    def n_scales(self):
        return self.spec.n_scales

    def default_psi(self):
        v = float(np.var(self.r))
        return 1.0 / v if v > 0 else 1.0

    def moments(self, lam, psi):
        factor = marginal_cov(self.problem.h_matrix(lam), ErrorModel(psi))
        w = posterior_weights(factor, self.r)
        Vinv = (factor.U / factor.variances[None, :]) @ factor.U.T
        return factor, EMoments(w=w, W=Vinv + np.outer(w, w))

    def prepare(self, lam, psi):
        try:
            factor, mom = self.moments(lam, psi)
            loglik = loglik_from_factor(factor, self.r)
        except NumericalFailure as exc:
            raise NumericalFailure("E-step failed", lam=lam, psi=psi,
                                   n=self.problem.n) from exc
        t = len(self.terms)
        P = np.empty((t, t))
        for i in range(t):
            for j in range(i, t):
                prod = (self._pair_products[i, j] if self._pair_products is not None
                        else self.terms[i] @ self.terms[j])
                P[i, j] = P[j, i] = float(np.vdot(prod, mom.W))
        s = np.asarray([float(self.r @ (T @ mom.w)) for T in self.terms])
        return EStepStats(loglik=loglik, pair=P, lin=s,
                          tr_w=float(np.trace(mom.W)), rss=float(self.r @ self.r))


def e_step(problem, lam, psi):
    """Posterior moments of the hidden weights at fixed parameters."""
    _, mom = DenseBackend(problem).moments(np.asarray(lam, dtype=float), psi)
    return mom


def q_value(lam, psi, moments, problem):
    """Expected complete-data objective (additive constant dropped)."""
    lam = np.asarray(lam, dtype=float)
    H = problem.h_matrix(lam)
    r = problem.residual
    expected_sq = (float(r @ r) - 2.0 * float(r @ (H @ moments.w))
                   + float(np.vdot(H @ H, moments.W)))
    return -0.5 * (psi * expected_sq + float(np.trace(moments.W)) / psi)


def q_gradient(lam, psi, moments, problem):
    """Analytic gradient of q_value: (d/d lambda, d/d psi)."""
    lam = np.asarray(lam, dtype=float)
    spec = problem.spec
    terms = [problem.cache[t] for t in spec.terms]
    r = problem.residual
    c = term_coefficients(spec, lam)
    s = np.asarray([float(r @ (T @ moments.w)) for T in terms])
    t = len(terms)
    P = np.empty((t, t))
    for i in range(t):
        for j in range(i, t):
            P[i, j] = P[j, i] = float(np.vdot(terms[i] @ terms[j], moments.W))
    grad_lam = np.asarray([psi * float(d_term_coefficients(spec, lam, k) @ (s - P @ c))
                           for k in range(spec.n_scales)])
    expected_sq = float(r @ r) - 2.0 * float(c @ s) + float(c @ (P @ c))
    grad_psi = -0.5 * (expected_sq - float(np.trace(moments.W)) / psi**2)
    return grad_lam, grad_psi


# ---------------------------------------------------------------------------
# M-step
# ---------------------------------------------------------------------------

def _update_coordinate(spec, lam, psi, stats, k):
    """Exact Newton step for one scale coordinate; returns the Q gain."""
    b = d_term_coefficients(spec, lam, k)
    if not b.any():
        return 0.0
    c = term_coefficients(spec, lam)
    Pb = stats.pair @ b
    slope = psi * (float(b @ stats.lin) - float(c @ Pb))
    curv = psi * float(b @ Pb)
    if curv > _CURV_EPS * (1.0 + abs(slope)):
        delta = slope / curv
        gain = 0.5 * slope * delta
    elif slope != 0.0:
        # degenerate (numerically linear) direction: bounded step uphill
        delta = math.copysign(1.0, slope)
        gain = abs(slope)
    else:
        return 0.0
    lam[k] += delta
    return gain


def _expected_sq_residual(spec, lam, stats):
    c = term_coefficients(spec, lam)
    return stats.rss - 2.0 * float(c @ stats.lin) + float(c @ stats.pair @ c)


def _update_psi(spec, lam, psi, stats, n):
    e_quad = _expected_sq_residual(spec, lam, stats)
    if not e_quad > 0.0:
        raise NumericalFailure("nonpositive expected squared residual in the "
                               "precision update", lam=lam, psi=psi, n=n)
    psi_new = math.sqrt(stats.tr_w / e_quad)
    q_old = -0.5 * (psi * e_quad + stats.tr_w / psi)
    q_new = -0.5 * (psi_new * e_quad + stats.tr_w / psi_new)
    if q_new > q_old:
        return psi_new, q_new - q_old
    return psi, 0.0


def m_step(spec, lam, psi, stats, n, q_tol=1e-10, max_sweeps=100):
    """Cyclic coordinate ascent on Q until a full sweep gains < q_tol."""
    lam = np.array(lam, dtype=float)
    for _ in range(max_sweeps):
        gain = 0.0
        for k in range(spec.n_scales):
            gain += _update_coordinate(spec, lam, psi, stats, k)
        psi, dq = _update_psi(spec, lam, psi, stats, n)
        gain += dq
        if gain < q_tol:
            break
    return lam, psi


# ---------------------------------------------------------------------------
# EM driver
# ---------------------------------------------------------------------------

def _run_single(backend, lam0, psi0, config):
    lam = np.array(lam0, dtype=float)
    psi = float(psi0)
    trace = []
    status = "stalled"
    prev = None
    for it in range(config.max_iter):
        stats = backend.prepare(lam, psi)
        trace.append(EMState(iteration=it, lam=tuple(lam), psi=psi, loglik=stats.loglik))
        if prev is not None and abs(stats.loglik - prev) <= config.rel_tol * (1.0 + abs(prev)):
            status = "converged"
            break
        prev = stats.loglik
        if it == config.max_iter - 1:
            break
        lam, psi = m_step(backend.spec, lam, psi, stats, backend.n_rows,
                          config.q_tol, config.max_sweeps)
    last = trace[-1]
    return np.asarray(last.lam), last.psi, last.loglik, status, trace


def _starts(backend, config):
    psi_base = config.psi_init if config.psi_init is not None else backend.default_psi()
    out = []
    for i in range(config.restarts):
        if i == 0:
            lam0 = (np.ones(backend.n_scales) if config.lam_init is None
                    else np.asarray(config.lam_init, dtype=float))
            if len(lam0) != backend.n_scales:
                raise ConfigError(f"lam_init needs {backend.n_scales} entries")
            out.append((lam0, psi_base))
        else:
            rng = np.random.default_rng((config.seed, i))
            signs = rng.choice([-1.0, 1.0], size=backend.n_scales)
            lam0 = signs * np.exp(rng.normal(0.0, 1.0, size=backend.n_scales))
            out.append((lam0, psi_base * float(np.exp(rng.normal(0.0, 1.0)))))
    return out


def _thread_count():
    raw = os.environ.get("IPRIOR_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("ignoring non-integer IPRIOR_THREADS=%r", raw)
        return 1


def run_em(backend, config):
    """All restarts of one EM problem; returns the best and the reports."""
    starts = _starts(backend, config)

    def attempt(item):
        i, (lam0, psi0) = item
        try:
            lam, psi, loglik, status, trace = _run_single(backend, lam0, psi0, config)
        except NumericalFailure as exc:
            log.warning("restart %d failed: %s", i, exc)
            return RestartReport(i, tuple(lam0), psi0, error=str(exc)), None
        report = RestartReport(i, tuple(lam0), psi0, loglik=loglik, status=status)
        return report, (lam, psi, loglik, status, trace)

    threads = min(_thread_count(), len(starts))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(attempt, enumerate(starts)))
    else:
        outcomes = [attempt(item) for item in enumerate(starts)]

    reports = tuple(rep for rep, _ in outcomes)
    best = None
    for rep, result in outcomes:
        if result is None:
            continue
        if best is None or result[2] > best[2]:
            best = result
    if best is None:
        raise FitError("every restart failed: "
                       + "; ".join(rep.error or "?" for rep in reports))
    lam, psi, loglik, status, trace = best
    return lam, psi, loglik, status, tuple(trace), reports


def em_fit(problem, config=None, label="model"):
    """Empirical-Bayes fit of scales and precision via EM restarts."""
    config = config or FitConfig()
    backend = DenseBackend(problem)
    lam, psi, loglik, status, trace, reports = run_em(backend, config)
    factor = marginal_cov(problem.h_matrix(lam), ErrorModel(psi))
    w_hat = posterior_weights(factor, problem.residual)
    return FittedModel(problem=problem,
                       lam=scale_vector(problem.spec, lam),
                       error=ErrorModel(psi),
                       w_hat=w_hat,
                       factor=factor,
                       loglik=loglik,
                       status=status,
                       label=label,
                       trace=trace,
                       diagnostics=reports)


# ---------------------------------------------------------------------------
# profile search over a kernel hyperparameter
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProfileResult:
    which: str
    value: float
    loglik: float
    model: object
    evaluations: tuple   # (hyperparameter, loglik) in evaluation order


_PROFILE_FAMILY = {"gamma": FBM, "sigma": SQEXP}


def profile_hyperparameter(dataset, kernel_specs, spec, which, lo, hi,
                           config=None, f0=None, tol=1e-3, label="model"):
    """Golden-section maximization of the profile likelihood over one
    kernel hyperparameter, refitting scales and precision at every probe.

    gamma is searched on its natural scale inside (0, 1); sigma on the log
    scale, with `tol` applied there.  A probe whose fit fails scores -inf.
    """
    if which not in _PROFILE_FAMILY:
        raise ConfigError(f"cannot profile {which!r}; pick gamma or sigma")
    family = _PROFILE_FAMILY[which]
    targets = [name for name, ks in kernel_specs.items() if ks.family == family]
    if not targets:
        raise ConfigError(f"no {family} kernel to profile {which!r} over")
    if which == "gamma" and not (0.0 < lo < hi < 1.0):
        raise ConfigError("gamma bounds must satisfy 0 < lo < hi < 1")
    if which == "sigma" and not (0.0 < lo < hi):
        raise ConfigError("sigma bounds must satisfy 0 < lo < hi")
    config = config or FitConfig()

    to_search = (lambda v: v) if which == "gamma" else math.log
    from_search = (lambda x: x) if which == "gamma" else math.exp

    evaluations = []
    cache = {}

    def score(x):
        if x in cache:
            return cache[x]
        value = from_search(x)
        probed = {name: (ks.with_hyperparameter(which, value) if name in targets else ks)
                  for name, ks in kernel_specs.items()}
        try:
            model = em_fit(build_problem(dataset, probed, spec, f0), config, label)
            got = (model.loglik, model)
        except (FitError, NumericalFailure) as exc:
            log.warning("profile probe %s=%.6g failed: %s", which, value, exc)
            got = (-np.inf, None)
        cache[x] = got
        evaluations.append((value, got[0]))
        return got

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = to_search(lo), to_search(hi)
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    score(a), score(b)
    while b - a > tol:
        if score(c)[0] >= score(d)[0]:
            b, d = d, c
            c = b - invphi * (b - a)
        else:
            a, c = c, d
            d = a + invphi * (b - a)
    best_x = max(cache, key=lambda x: cache[x][0])
    loglik, model = cache[best_x]
    if model is None:
        raise FitError(f"every profile probe of {which!r} failed")
    return ProfileResult(which=which, value=from_search(best_x), loglik=loglik,
                         model=model, evaluations=tuple(evaluations))


# ---------------------------------------------------------------------------
# observed-information standard errors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StdErrResult:
    names: tuple         # scale coordinates plus "log_psi"
    se: object           # None when unavailable
    status: str
    hessian: object = None


def standard_errors(model, step=1e-4):
    """Delta-method standard errors from the numerical Hessian of the log
    marginal likelihood in (scales, log precision).

    Unavailable (with a reason) when the model did not converge or the
    observed information is not positive definite.
    """
    names = model.spec.coordinates() + ("log_psi",)
    if model.status != "converged":
        return StdErrResult(names, None, f"unavailable: status is {model.status!r}")
    problem = model.problem
    theta = np.r_[model.lam.values, math.log(model.error.psi)]
    p = len(theta)

    def L(th):
        return log_marginal_likelihood(problem.h_matrix(th[:-1]),
                                       ErrorModel(math.exp(th[-1])),
                                       problem.y, problem.f0)

    steps = step * (1.0 + np.abs(theta))
    try:
        base = L(theta)
        hess = np.empty((p, p))
        for i in range(p):
            ei = np.zeros(p)
            ei[i] = steps[i]
            hess[i, i] = (L(theta + ei) - 2.0 * base + L(theta - ei)) / steps[i] ** 2
            for j in range(i + 1, p):
                ej = np.zeros(p)
                ej[j] = steps[j]
                hess[i, j] = hess[j, i] = (
                    L(theta + ei + ej) - L(theta + ei - ej)
                    - L(theta - ei + ej) + L(theta - ei - ej)
                ) / (4.0 * steps[i] * steps[j])
    except NumericalFailure as exc:
        return StdErrResult(names, None, f"unavailable: {exc}", None)

    try:
        cov = np.linalg.inv(-hess)
    except np.linalg.LinAlgError:
        return StdErrResult(names, None, "unavailable: information matrix is singular", hess)
    diag = np.diag(cov)
    if np.any(diag <= 0):
        return StdErrResult(names, None,
                            "unavailable: information matrix is not positive definite", hess)
    return StdErrResult(names, np.sqrt(diag), "ok", hess)
