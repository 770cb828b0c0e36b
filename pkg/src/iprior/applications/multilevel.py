"""Grouped regressions with smooth per-group deviations.

A categorical grouping column and a numeric covariate combine into one of
three nested models: a per-group intercept shift, a shared slope on top of
it, or fully group-specific lines.  There are no explicit random-effect
parameters; group lines are read off the posterior mean surface, so
"intercept" and "slope" below are its values at x = 0 and its unit-step
increments.
"""

from dataclasses import dataclass

import numpy as np

from ..anova import AnovaSpec
from ..data import CATEGORICAL, CovariateColumn
from ..errors import ConfigError, DataSchemaError
from ..estimate import FitConfig, em_fit
from ..inference import build_problem, posterior_f
from ..kernels import CANONICAL_LINEAR, PEARSON, KernelSpec

MULTILEVEL_MODELS = ("varying_intercept", "constant_slope", "varying_slope")

_TERMS = {
    "varying_intercept": lambda g, x: ((g,),),
    "constant_slope": lambda g, x: ((g,), (x,)),
    "varying_slope": lambda g, x: ((g,), (x,), (g, x)),
}


def multilevel_spec(group, x, model="varying_slope", parameterization="parsimonious"):
    """Term structure of one multilevel variant."""
    if model not in _TERMS:
        raise ConfigError(f"unknown multilevel model {model!r}; "
                          f"pick one of {MULTILEVEL_MODELS}")
    terms = _TERMS[model](group, x)
    covariates = (group,) if model == "varying_intercept" else (group, x)
    return AnovaSpec(covariates, terms, parameterization)


def build_multilevel(dataset, group, x, model="varying_slope", x_kernel=None,
                     parameterization="parsimonious", config=None, label=None):
    """Fit one multilevel variant; returns an ordinary fitted model."""
    if dataset.column(group).kind != CATEGORICAL:
        raise ConfigError(f"grouping column {group!r} must be categorical")
    spec = multilevel_spec(group, x, model, parameterization)
    kernels = {group: KernelSpec(PEARSON)}
    if x in spec.covariates:
        kernels[x] = x_kernel or KernelSpec(CANONICAL_LINEAR)
    problem = build_problem(dataset, kernels, spec)
    return em_fit(problem, config or FitConfig(), label=label or model)


@dataclass(frozen=True)
class GroupEffects:
    """Per-group lines of the posterior mean surface."""

    groups: tuple
    intercepts: object   # posterior mean at x = 0
    slopes: object       # increment of the mean from x = 0 to x = 1

    def summary(self):
        """Location/spread of the group lines; sd uses ddof=1."""
        out = {
            "mean_intercept": float(np.mean(self.intercepts)),
            "sd_intercept": float(np.std(self.intercepts, ddof=1)),
            "mean_slope": float(np.mean(self.slopes)),
            "sd_slope": float(np.std(self.slopes, ddof=1)),
        }
        spread = out["sd_intercept"] * out["sd_slope"]
        if spread > 0:
            corr = float(np.corrcoef(self.intercepts, self.slopes)[0, 1])
        else:
            corr = float("nan")
        out["correlation"] = corr
        return out


def extract_group_effects(model, group, x):
    """Group intercepts and slopes from a fitted multilevel model.

    Evaluates the posterior mean at x = 0 and x = 1 for every training
    group; works for any fitted model whose surface is affine in x, which
    the canonical linear kernel guarantees.
    """
    grams = model.problem.grams
    group_col = grams[group].column
    if group_col.kind != CATEGORICAL:
        raise ConfigError(f"column {group!r} is not categorical")
    groups = group_col.labels()
    k = len(groups)
    points = {group: CovariateColumn(group, CATEGORICAL,
                                     tuple(g for g in groups for _ in (0, 1)))}
    if x in grams.names():
        x_entry = grams[x]
        if x_entry.column.kind == CATEGORICAL or x_entry.column.dim != 1:
            raise DataSchemaError(f"slope extraction needs a scalar covariate, "
                                  f"but {x!r} is not one")
        points[x] = CovariateColumn(x, x_entry.column.kind,
                                    np.tile([[0.0], [1.0]], (k, 1)))
    mean = posterior_f(model, points).mean.reshape(k, 2)
    return GroupEffects(groups=groups,
                        intercepts=mean[:, 0].copy(),
                        slopes=(mean[:, 1] - mean[:, 0]))
