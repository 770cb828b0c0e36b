"""Model summaries and likelihood-based comparison.

Information criteria count one parameter per free scale coordinate plus
one for the error precision; the prior-mean intercept is a plug-in, not a
free parameter.  Ranking uses BIC.  Models with the same parameter count
can also be compared by marginal likelihood alone, so those pairs are
called out explicitly.
"""

import math
from dataclasses import dataclass

from ..errors import ConfigError


@dataclass(frozen=True)
class ModelReport:
    """Fit summary of one model."""

    label: str
    loglik: float
    n_params: int       # free scales + error precision
    n_rows: int
    aic: float
    bic: float
    status: str
    scales: dict        # coordinate name -> estimate
    psi: float


def model_report(model):
    """Report for any fitted model (regression or classifier)."""
    k = model.spec.n_scales + 1
    loglik = float(model.loglik)
    n_rows = int(model.n_rows)
    return ModelReport(label=model.label,
                       loglik=loglik,
                       n_params=k,
                       n_rows=n_rows,
                       aic=-2.0 * loglik + 2.0 * k,
                       bic=-2.0 * loglik + k * math.log(n_rows),
                       status=model.status,
                       scales=dict(zip(model.lam.names, map(float, model.lam.values))),
                       psi=float(model.error.psi))


@dataclass(frozen=True)
class ComparisonTable:
    """Reports ranked by BIC, plus the pairs comparable by likelihood."""

    reports: tuple
    comparable_pairs: tuple

    def best(self):
        return self.reports[0]


def compare_models(models):
    """Rank fitted models by BIC (ascending).

    Pairs with equal parameter counts land in `comparable_pairs`: for
    those, the likelihoods themselves are directly comparable and the
    criteria agree with them.
    """
    reports = [m if isinstance(m, ModelReport) else model_report(m) for m in models]
    if len(reports) < 2:
        raise ConfigError("model comparison needs at least two models")
    if len({rep.label for rep in reports}) != len(reports):
        raise ConfigError("model labels must be distinct for comparison")
    ranked = tuple(sorted(reports, key=lambda rep: rep.bic))
    pairs = tuple((a.label, b.label)
                  for i, a in enumerate(ranked)
                  for b in ranked[i + 1:]
                  if a.n_params == b.n_params)
    return ComparisonTable(reports=ranked, comparable_pairs=pairs)
