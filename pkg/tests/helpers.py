"""Shared builders for randomized test instances."""

import numpy as np

from iprior.data import CATEGORICAL, FUNCTIONAL, VECTOR, CovariateColumn


def vector_column(rng, n, d=2, name="x", scale=1.0):
    return CovariateColumn(name, VECTOR, scale * rng.normal(size=(n, d)))


def curve_column(rng, n, m=6, name="curve"):
    grid = np.sort(rng.uniform(0.0, 1.0, size=m))
    grid += np.arange(m) * 1e-3
    return CovariateColumn(name, FUNCTIONAL, rng.normal(size=(n, m)), grid)


def cat_column(rng, n, labels=("A", "B", "C"), name="group"):
    draws = rng.integers(0, len(labels), size=n)
    draws[: min(len(labels), n)] = np.arange(min(len(labels), n))
    return CovariateColumn(name, CATEGORICAL, tuple(labels[i] for i in draws))


def random_problem(seed, n=12, interactions=True, curve=False):
    """Small mixed-covariate training problem with random response."""
    from iprior.anova import AnovaSpec, expand_sperner
    from iprior.data import Dataset
    from iprior.inference import build_problem
    from iprior.kernels import KernelSpec

    rng = np.random.default_rng(seed)
    cols = [vector_column(rng, n, 2, name="x"), cat_column(rng, n, name="g")]
    specs = {"x": KernelSpec("fbm", gamma=0.5), "g": KernelSpec("pearson")}
    names = ["x", "g"]
    if curve:
        cols.append(curve_column(rng, n, name="curve"))
        specs["curve"] = KernelSpec("canonical_linear")
        names.append("curve")
    ds = Dataset(tuple(cols), response=rng.normal(size=n), response_name="y")
    if interactions:
        terms = expand_sperner([tuple(names)])
    else:
        terms = tuple((name,) for name in names)
    return build_problem(ds, specs, AnovaSpec(tuple(names), terms)), rng
