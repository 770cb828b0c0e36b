"""Growth-curve models over repeated measurements.

The response is a smooth function of time, optionally varying by
experimental unit and by treatment group.  Each named model is the full
interaction closure of a few maximal covariate sets, so nested variants
differ only in which closures enter; fits are comparable through their
marginal likelihoods and information criteria.
"""

from ..anova import AnovaSpec, expand_sperner
from ..data import CATEGORICAL
from ..errors import ConfigError
from ..estimate import FitConfig, em_fit
from ..inference import build_problem
from ..kernels import FBM, PEARSON, KernelSpec

# maximal covariate sets per model, over (time, unit, group)
_FAMILIES = {
    "base": ((0,),),
    "group": ((0, 2),),
    "unit": ((0, 1),),
    "additive": ((0, 1), (0, 2)),
    "interaction": ((0, 1, 2),),
}

LONGITUDINAL_MODELS = ("base", "group", "unit", "additive", "interaction")


def longitudinal_spec(time, unit, group, model="base",
                      parameterization="parsimonious"):
    """Term structure of one growth-curve variant."""
    if model not in _FAMILIES:
        raise ConfigError(f"unknown longitudinal model {model!r}; "
                          f"pick one of {LONGITUDINAL_MODELS}")
    names = (time, unit, group)
    family = [tuple(names[i] for i in member) for member in _FAMILIES[model]]
    used = tuple(dict.fromkeys(name for member in family for name in member))
    terms = expand_sperner(family, order=used)
    return AnovaSpec(used, terms, parameterization)


def build_longitudinal(dataset, time, unit, group, model="base", gamma=0.3,
                       time_kernel=None, parameterization="parsimonious",
                       config=None, label=None):
    """Fit one growth-curve variant; returns an ordinary fitted model.

    Time gets a fractional Brownian motion kernel (exponent `gamma`)
    unless `time_kernel` overrides it; unit and group get pearson kernels
    and must be categorical.
    """
    spec = longitudinal_spec(time, unit, group, model, parameterization)
    kernels = {time: time_kernel or KernelSpec(FBM, gamma=gamma)}
    for name in (unit, group):
        if name in spec.covariates:
            if dataset.column(name).kind != CATEGORICAL:
                raise ConfigError(f"column {name!r} must be categorical")
            kernels[name] = KernelSpec(PEARSON)
    problem = build_problem(dataset, kernels, spec)
    return em_fit(problem, config or FitConfig(), label=label or model)
