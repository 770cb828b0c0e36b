"""EM estimation: E-step reductions, M-step updates, drivers, profile
search, and standard errors, each against an independent oracle."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from helpers import random_problem, vector_column
from iprior.anova import AnovaSpec, term_coefficients
from iprior.data import CovariateColumn, Dataset
from iprior.errors import ConfigError, FitError, NumericalFailure
from iprior.estimate import (
    DenseBackend,
    EStepStats,
    FitConfig,
    _update_coordinate,
    _update_psi,
    e_step,
    em_fit,
    m_step,
    profile_hyperparameter,
    q_value,
    standard_errors,
)
from iprior.inference import (
    ErrorModel,
    build_problem,
    evaluate_model,
    fitted_values,
    gradient_log_marginal,
    log_marginal_likelihood,
)
from iprior.kernels import KernelSpec


def zoom_grid_max(f, lo, hi, width=1e-8, points=41):
    """Nested grid maximization to bracket the argmax within `width`."""
    while hi - lo > width:
        xs = np.linspace(lo, hi, points)
        k = int(np.argmax([f(x) for x in xs]))
        lo = xs[max(0, k - 1)]
        hi = xs[min(points - 1, k + 1)]
    return 0.5 * (lo + hi)


def fbm_line_problem(seed, n=40, gamma=0.5, noise=0.2):
    """Single fbm covariate with a smooth response."""
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0, 1, size=n))[:, None]
    y = np.sin(2 * np.pi * x[:, 0]) + noise * rng.normal(size=n)
    ds = Dataset((CovariateColumn("x", "vector", x),), response=y, response_name="y")
    spec = AnovaSpec(("x",), (("x",),))
    return build_problem(ds, {"x": KernelSpec("fbm", gamma=gamma)}, spec)


# ---------------------------------------------------------------------------
# E-step
# ---------------------------------------------------------------------------

def test_e_step_moments_match_dense_formulas():
    for seed in range(6):
        problem, rng = random_problem(seed, n=9)
        lam = rng.normal(size=problem.spec.n_scales)
        psi = float(rng.uniform(0.3, 2.0))
        mom = e_step(problem, lam, psi)
        H = problem.h_matrix(lam)
        V = psi * H @ H + np.eye(problem.n) / psi
        w_oracle = psi * H @ np.linalg.solve(V, problem.residual)
        W_oracle = np.linalg.inv(V) + np.outer(w_oracle, w_oracle)
        assert_allclose(mom.w, w_oracle, atol=1e-9)
        assert_allclose(mom.W, W_oracle, atol=1e-9)


def test_prepare_reductions_match_brute_force():
    problem, rng = random_problem(1, n=8)
    lam = rng.normal(size=problem.spec.n_scales)
    psi = 1.4
    backend = DenseBackend(problem)
    stats = backend.prepare(lam, psi)
    mom = e_step(problem, lam, psi)
    terms = [problem.cache[t] for t in problem.spec.terms]
    r = problem.residual
    for i, Ti in enumerate(terms):
        assert_allclose(stats.lin[i], r @ Ti @ mom.w, atol=1e-9)
        for j, Tj in enumerate(terms):
            assert_allclose(stats.pair[i, j], np.trace(Ti @ Tj @ mom.W), atol=1e-8)
    assert_allclose(stats.tr_w, np.trace(mom.W), atol=1e-9)
    assert_allclose(stats.rss, r @ r, atol=1e-12)


def test_q_value_matches_stats_reduction():
    # the sweeps work on (P, s); their Q must agree with the dense q_value
    problem, rng = random_problem(2, n=8)
    lam0 = rng.normal(size=problem.spec.n_scales)
    psi = 0.8
    backend = DenseBackend(problem)
    stats = backend.prepare(lam0, psi)
    mom = e_step(problem, lam0, psi)
    for _ in range(4):
        lam = rng.normal(size=problem.spec.n_scales)
        c = term_coefficients(problem.spec, lam)
        q_stats = -0.5 * (psi * (stats.rss - 2 * c @ stats.lin + c @ stats.pair @ c)
                          + stats.tr_w / psi)
        assert_allclose(q_stats, q_value(lam, psi, mom, problem), rtol=1e-9, atol=1e-9)


# ---------------------------------------------------------------------------
# M-step
# ---------------------------------------------------------------------------

def test_coordinate_slope_matches_fd_of_q():
    # the update's internal slope is dQ/dlam_k; check the product-rule
    # derivative against central differences of q_value
    for seed in range(5):
        problem, rng = random_problem(seed, n=9)
        lam = rng.normal(size=problem.spec.n_scales)
        psi = float(rng.uniform(0.4, 1.8))
        backend = DenseBackend(problem)
        stats = backend.prepare(lam, psi)
        mom = e_step(problem, lam, psi)
        from iprior.anova import d_term_coefficients
        for k in range(problem.spec.n_scales):
            c = term_coefficients(problem.spec, lam)
            b = d_term_coefficients(problem.spec, lam, k)
            slope = psi * (b @ stats.lin - c @ stats.pair @ b)
            h = 1e-6
            up, dn = lam.copy(), lam.copy()
            up[k] += h
            dn[k] -= h
            fd = (q_value(up, psi, mom, problem) - q_value(dn, psi, mom, problem)) / (2 * h)
            assert_allclose(slope, fd, rtol=1e-4, atol=1e-6)


def test_coordinate_update_matches_zoom_grid_search():
    for seed in range(3):
        problem, rng = random_problem(seed, n=8)
        lam = rng.normal(size=problem.spec.n_scales)
        psi = 1.1
        backend = DenseBackend(problem)
        stats = backend.prepare(lam, psi)
        mom = e_step(problem, lam, psi)
        for k in range(problem.spec.n_scales):
            trial = lam.copy()
            gain = _update_coordinate(problem.spec, trial, psi, stats, k)
            assert gain >= 0

            def q_along(t, k=k):
                probe = lam.copy()
                probe[k] = t
                return q_value(probe, psi, mom, problem)

            t_star = zoom_grid_max(q_along, -10.0, 10.0)
            assert abs(trial[k] - t_star) <= 1e-6
            # the accepted move never loses to the numeric maximizer
            assert q_along(trial[k]) >= q_along(t_star) - 1e-9


def test_coordinate_gain_matches_q_difference():
    problem, rng = random_problem(4, n=9)
    lam = rng.normal(size=problem.spec.n_scales)
    psi = 0.9
    backend = DenseBackend(problem)
    stats = backend.prepare(lam, psi)
    mom = e_step(problem, lam, psi)
    trial = lam.copy()
    for k in range(problem.spec.n_scales):
        before = q_value(trial, psi, mom, problem)
        gain = _update_coordinate(problem.spec, trial, psi, stats, k)
        after = q_value(trial, psi, mom, problem)
        assert_allclose(gain, after - before, rtol=1e-6, atol=1e-9)


def test_degenerate_direction_takes_unit_trust_step():
    spec = AnovaSpec(("a",), (("a",),))
    stats = EStepStats(loglik=0.0, pair=np.zeros((1, 1)), lin=np.asarray([2.0]),
                       tr_w=1.0, rss=1.0)
    lam = np.asarray([0.3])
    gain = _update_coordinate(spec, lam, 1.5, stats, 0)
    assert_allclose(lam[0], 1.3)       # slope > 0: one unit uphill
    assert_allclose(gain, 1.5 * 2.0)
    lam = np.asarray([0.3])
    stats_dn = EStepStats(0.0, np.zeros((1, 1)), np.asarray([-2.0]), 1.0, 1.0)
    _update_coordinate(spec, lam, 1.5, stats_dn, 0)
    assert_allclose(lam[0], -0.7)


def test_psi_update_matches_grid_and_guards_sign():
    spec = AnovaSpec(("a",), (("a",),))
    stats = EStepStats(loglik=0.0, pair=np.asarray([[2.0]]), lin=np.asarray([0.5]),
                       tr_w=3.0, rss=4.0)
    lam = np.asarray([0.7])
    psi_new, gain = _update_psi(spec, lam, 1.0, stats, n=5)
    e_quad = 4.0 - 2 * 0.7 * 0.5 + 0.7**2 * 2.0
    assert_allclose(psi_new, math.sqrt(3.0 / e_quad), atol=1e-12)
    assert gain > 0

    def q_of_psi(p):
        return -0.5 * (p * e_quad + 3.0 / p)

    grid = zoom_grid_max(q_of_psi, 1e-3, 10.0)
    assert abs(psi_new - grid) <= 1e-6
    bad = EStepStats(0.0, np.asarray([[0.0]]), np.asarray([10.0]), 3.0, 1.0)
    with pytest.raises(NumericalFailure):
        _update_psi(spec, lam, 1.0, bad, n=5)


def test_m_step_never_decreases_q():
    for seed in range(5):
        problem, rng = random_problem(seed, n=9)
        lam = rng.normal(size=problem.spec.n_scales)
        psi = float(rng.uniform(0.3, 2.0))
        backend = DenseBackend(problem)
        stats = backend.prepare(lam, psi)
        mom = e_step(problem, lam, psi)
        new_lam, new_psi = m_step(problem.spec, lam, psi, stats, problem.n)
        q0 = q_value(lam, psi, mom, problem)
        q1 = q_value(new_lam, new_psi, mom, problem)
        assert q1 >= q0 - 1e-10 * (1 + abs(q0))


# ---------------------------------------------------------------------------
# EM driver
# ---------------------------------------------------------------------------

def test_em_is_monotone_and_improves():
    for seed in range(10):
        problem, _ = random_problem(seed, n=14)
        model = em_fit(problem, FitConfig(max_iter=40, restarts=1))
        logliks = [state.loglik for state in model.trace]
        for a, b in zip(logliks, logliks[1:]):
            assert b >= a - 1e-8 * (1 + abs(a))
        assert model.loglik >= logliks[0] - 1e-10
        assert model.status in ("converged", "stalled")
        assert model.trace[-1].loglik == model.loglik
        assert_allclose(model.trace[-1].lam, model.lam.values, atol=0)


def test_em_converges_on_smooth_data():
    problem = fbm_line_problem(0)
    model = em_fit(problem, FitConfig(max_iter=300, restarts=2))
    assert model.status == "converged"
    # a converged EM fixed point is a stationary point of the likelihood
    grad_lam, grad_logpsi = gradient_log_marginal(
        problem, model.lam.values, model.error.psi)
    scale = 1 + abs(model.loglik)
    assert np.max(np.abs(grad_lam)) <= 1e-3 * scale
    assert abs(grad_logpsi) <= 1e-3 * scale


def test_em_stalls_when_starved():
    problem = fbm_line_problem(1)
    model = em_fit(problem, FitConfig(max_iter=2, restarts=1))
    assert model.status == "stalled"
    assert len(model.trace) == 2


def test_em_scale_equivariance_single_covariate():
    # y -> c y maps the optimum to (c^2 lambda, psi / c^2) and the EM
    # recursion commutes with that map when the start is mapped too
    c = 3.7
    base = fbm_line_problem(2)
    scaled_ds = Dataset((base.grams["x"].column,), response=c * base.y, response_name="y")
    scaled = build_problem(scaled_ds, {"x": KernelSpec("fbm", gamma=0.5)}, base.spec)
    cfg = FitConfig(max_iter=60, restarts=1, lam_init=(1.0,), psi_init=2.0)
    cfg_scaled = FitConfig(max_iter=60, restarts=1, lam_init=(c * c,), psi_init=2.0 / c**2)
    m1 = em_fit(base, cfg)
    m2 = em_fit(scaled, cfg_scaled)
    assert_allclose(m2.lam.values, c * c * m1.lam.values, rtol=1e-7)
    assert_allclose(m2.error.psi, m1.error.psi / c**2, rtol=1e-7)
    assert_allclose(fitted_values(m2), c * fitted_values(m1), rtol=1e-6, atol=1e-8)


def test_em_on_pure_noise_stays_humble():
    rng = np.random.default_rng(123)
    n = 50
    x = rng.normal(size=(n, 1))
    y = rng.normal(size=n)
    ds = Dataset((CovariateColumn("x", "vector", x),), response=y, response_name="y")
    problem = build_problem(ds, {"x": KernelSpec("fbm")}, AnovaSpec(("x",), (("x",),)))
    model = em_fit(problem, FitConfig(max_iter=200, restarts=3))
    null = evaluate_model(problem, [0.0], 1.0 / float(np.var(y)))
    assert model.loglik >= null.loglik - 1e-6
    influence = float(np.sum((fitted_values(model) - model.f0) ** 2)
                      / np.sum((y - y.mean()) ** 2))
    assert influence < 0.2


def test_em_restart_bookkeeping_and_determinism():
    problem, _ = random_problem(5, n=12)
    cfg = FitConfig(max_iter=30, restarts=3, seed=7)
    m1 = em_fit(problem, cfg)
    m2 = em_fit(problem, cfg)
    assert np.array_equal(m1.lam.values, m2.lam.values)
    assert m1.error.psi == m2.error.psi
    assert m1.loglik == m2.loglik
    assert len(m1.diagnostics) == 3
    assert all(rep.status in ("converged", "stalled") for rep in m1.diagnostics)
    best = max(rep.loglik for rep in m1.diagnostics if rep.loglik is not None)
    assert_allclose(m1.loglik, best, atol=0)


def test_em_thread_count_does_not_change_result(monkeypatch):
    problem, _ = random_problem(6, n=12)
    cfg = FitConfig(max_iter=25, restarts=3, seed=1)
    monkeypatch.delenv("IPRIOR_THREADS", raising=False)
    serial = em_fit(problem, cfg)
    monkeypatch.setenv("IPRIOR_THREADS", "3")
    threaded = em_fit(problem, cfg)
    assert np.array_equal(serial.lam.values, threaded.lam.values)
    assert serial.loglik == threaded.loglik
    monkeypatch.setenv("IPRIOR_THREADS", "banana")
    assert em_fit(problem, cfg).loglik == serial.loglik


def test_em_partial_and_total_restart_failure(monkeypatch):
    problem, _ = random_problem(7, n=10)
    import iprior.estimate as est
    real_run = est._run_single

    def sabotage(backend, lam0, psi0, config):
        if not np.allclose(lam0, 1.0):
            raise NumericalFailure("sabotaged", lam=lam0, psi=psi0, n=backend.n_rows)
        return real_run(backend, lam0, psi0, config)

    monkeypatch.setattr(est, "_run_single", sabotage)
    model = em_fit(problem, FitConfig(max_iter=5, restarts=3))
    failed = [rep for rep in model.diagnostics if rep.status == "failed"]
    assert len(failed) == 2 and all("sabotaged" in rep.error for rep in failed)

    def dead(backend, lam0, psi0, config):
        raise NumericalFailure("dead", n=backend.n_rows)

    monkeypatch.setattr(est, "_run_single", dead)
    with pytest.raises(FitError):
        em_fit(problem, FitConfig(max_iter=5, restarts=2))


def test_fit_config_validation():
    with pytest.raises(ConfigError):
        FitConfig(max_iter=0)
    with pytest.raises(ConfigError):
        FitConfig(rel_tol=0.0)
    with pytest.raises(ConfigError):
        FitConfig(restarts=0)
    with pytest.raises(ConfigError):
        FitConfig(psi_init=-1.0)
    problem, _ = random_problem(8)
    with pytest.raises(ConfigError):
        em_fit(problem, FitConfig(lam_init=(1.0,)))


# ---------------------------------------------------------------------------
# profile search
# ---------------------------------------------------------------------------

def test_profile_gamma_recovers_reasonable_value():
    problem = fbm_line_problem(3, n=30)
    ds = Dataset((problem.grams["x"].column,), response=problem.y, response_name="y")
    cfg = FitConfig(max_iter=60, restarts=1)
    res = profile_hyperparameter(ds, {"x": KernelSpec("fbm", gamma=0.5)},
                                 problem.spec, "gamma", 0.05, 0.95, cfg, tol=5e-3)
    assert 0.05 <= res.value <= 0.95
    assert res.model is not None
    assert res.loglik == max(l for _, l in res.evaluations)
    assert_allclose(res.model.lam.values, res.model.lam.values)
    assert res.which == "gamma"
    # probes were actually spent shrinking the bracket
    assert len(res.evaluations) >= 8


def test_profile_sigma_runs_on_log_scale():
    problem = fbm_line_problem(4, n=25)
    ds = Dataset((problem.grams["x"].column,), response=problem.y, response_name="y")
    cfg = FitConfig(max_iter=40, restarts=1)
    res = profile_hyperparameter(ds, {"x": KernelSpec("sqexp", sigma=1.0)},
                                 problem.spec, "sigma", 0.05, 20.0, cfg, tol=0.05)
    assert 0.05 <= res.value <= 20.0
    assert res.which == "sigma"


def test_profile_tolerates_failed_probes(monkeypatch):
    problem = fbm_line_problem(5, n=20)
    ds = Dataset((problem.grams["x"].column,), response=problem.y, response_name="y")
    import iprior.estimate as est
    real_fit = est.em_fit

    def flaky(problem, config=None, label="model"):
        gamma = problem.grams["x"].spec.gamma
        if gamma < 0.4:
            raise FitError("no luck down here")
        return real_fit(problem, config, label)

    monkeypatch.setattr(est, "em_fit", flaky)
    res = est.profile_hyperparameter(ds, {"x": KernelSpec("fbm")}, problem.spec,
                                     "gamma", 0.1, 0.9, FitConfig(max_iter=30, restarts=1),
                                     tol=0.02)
    assert res.value >= 0.4
    assert any(l == -np.inf for _, l in res.evaluations)


def test_profile_validation():
    problem = fbm_line_problem(6, n=15)
    ds = Dataset((problem.grams["x"].column,), response=problem.y, response_name="y")
    with pytest.raises(ConfigError):
        profile_hyperparameter(ds, {"x": KernelSpec("fbm")}, problem.spec, "tau", 0.1, 0.9)
    with pytest.raises(ConfigError):
        profile_hyperparameter(ds, {"x": KernelSpec("sqexp")}, problem.spec, "gamma", 0.1, 0.9)
    with pytest.raises(ConfigError):
        profile_hyperparameter(ds, {"x": KernelSpec("fbm")}, problem.spec, "gamma", 0.0, 0.9)
    with pytest.raises(ConfigError):
        profile_hyperparameter(ds, {"x": KernelSpec("sqexp")}, problem.spec, "sigma", -1.0, 2.0)


# ---------------------------------------------------------------------------
# standard errors
# ---------------------------------------------------------------------------

def test_standard_errors_match_fd_of_analytic_gradient():
    problem = fbm_line_problem(7, n=25)
    model = em_fit(problem, FitConfig(max_iter=300, restarts=2))
    assert model.status == "converged"
    res = standard_errors(model)
    assert res.status == "ok"
    assert res.names == ("x", "log_psi")
    assert np.all(res.se > 0)
    # cross-check the Hessian against differences of the analytic gradient
    theta = np.r_[model.lam.values, math.log(model.error.psi)]

    def grad(th):
        g_lam, g_logpsi = gradient_log_marginal(problem, th[:-1], math.exp(th[-1]))
        return np.r_[g_lam, g_logpsi]

    p = len(theta)
    oracle = np.empty((p, p))
    for j in range(p):
        h = 1e-5 * (1 + abs(theta[j]))
        e = np.zeros(p)
        e[j] = h
        oracle[:, j] = (grad(theta + e) - grad(theta - e)) / (2 * h)
    oracle = (oracle + oracle.T) / 2
    assert_allclose(res.hessian, oracle, rtol=5e-3, atol=5e-4)


def test_standard_errors_unavailable_paths():
    problem = fbm_line_problem(8, n=20)
    stalled = em_fit(problem, FitConfig(max_iter=2, restarts=1))
    res = standard_errors(stalled)
    assert res.se is None and "stalled" in res.status
    fixed = evaluate_model(problem, [1.0], 1.0)
    assert standard_errors(fixed).se is None
