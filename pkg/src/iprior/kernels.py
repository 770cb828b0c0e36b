"""Kernel families on mixed covariates, with empirical centering.

Every family produces a raw positive-semidefinite kernel matrix; centering
then subtracts row means, column means, and adds back the grand mean, which
puts the corresponding feature map at the sample mean of the training
points.  The same statistics are reused when evaluating the kernel between
new points and the training sample, so gram and cross_gram agree exactly on
the training set.

The constant kernel is the one exception: centering would annihilate it,
so it is always left raw.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import data as _data
from .errors import ConfigError, DataSchemaError

CONSTANT = "constant"
CANONICAL_FINITE = "canonical_finite"
PEARSON = "pearson"
CANONICAL_LINEAR = "canonical_linear"
MAHALANOBIS = "mahalanobis"
FBM = "fbm"
SQEXP = "sqexp"

FAMILIES = (CONSTANT, CANONICAL_FINITE, PEARSON, CANONICAL_LINEAR, MAHALANOBIS, FBM, SQEXP)

_ALIASES = {"finite": CANONICAL_FINITE, "linear": CANONICAL_LINEAR}

_CATEGORICAL_FAMILIES = (CANONICAL_FINITE, PEARSON)
_NUMERIC_FAMILIES = (CANONICAL_LINEAR, MAHALANOBIS, FBM, SQEXP)


@dataclass(frozen=True)
class KernelSpec:
    """One kernel family plus its hyperparameters."""

    family: str
    gamma: float = 0.5
    sigma: float = 1.0
    metric: str = None
    centered: bool = True

    def __post_init__(self):
        family = _ALIASES.get(self.family, self.family)
        object.__setattr__(self, "family", family)
        if family not in FAMILIES:
            raise ConfigError(f"unknown kernel family {self.family!r}")
        if family == FBM and not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"fbm gamma must lie in (0, 1), got {self.gamma}")
        if family == SQEXP and not self.sigma > 0.0:
            raise ConfigError(f"sqexp sigma must be positive, got {self.sigma}")
        if family == CONSTANT and self.centered:
            object.__setattr__(self, "centered", False)

    def with_hyperparameter(self, name, value):
        if name not in ("gamma", "sigma"):
            raise ConfigError(f"unknown hyperparameter {name!r}")
        return replace(self, **{name: value})


@dataclass(frozen=True)
class CenteringStats:
    """Training-sample quantities needed to center new kernel evaluations."""

    row_means: object          # m(x_i) over the training sample
    grand_mean: float          # g, the mean of row_means
    n: int
    frequencies: dict = None   # categorical label -> empirical probability
    cov: object = None         # mahalanobis covariance actually used


@dataclass(frozen=True)
class GramEntry:
    """Centered gram matrix for one covariate, with everything needed
    to evaluate the same kernel at new points."""

    spec: KernelSpec
    column: object
    stats: CenteringStats
    matrix: object

    @property
    def n(self):
        return self.matrix.shape[0]


@dataclass(frozen=True)
class GramSet:
    """Per-covariate gram entries over one training sample."""

    entries: dict

    def __getitem__(self, name):
        try:
            return self.entries[name]
        except KeyError:
            raise ConfigError(f"no gram entry for covariate {name!r}") from None

    def names(self):
        return tuple(self.entries)

    @property
    def n(self):
        return next(iter(self.entries.values())).n


def _check_kind(spec, column):
    fam, kind = spec.family, column.kind
    if fam in _CATEGORICAL_FAMILIES and kind != _data.CATEGORICAL:
        raise ConfigError(f"{fam} kernel needs a categorical column, {column.name!r} is {kind}")
    if fam in _NUMERIC_FAMILIES and kind == _data.CATEGORICAL:
        raise ConfigError(f"{fam} kernel cannot act on categorical column {column.name!r}")
    if fam == MAHALANOBIS and kind != _data.VECTOR:
        raise ConfigError(f"mahalanobis kernel needs a vector column, {column.name!r} is {kind}")


def _metric_for(spec, column):
    if spec.family == MAHALANOBIS:
        return _data.MAHALANOBIS
    if spec.metric is not None:
        return spec.metric
    return _data.default_metric(column)


def _codes(labels, order):
    index = {lab: k for k, lab in enumerate(order)}
    return np.asarray([index.get(lab, -1) for lab in labels])


def _raw_gram(spec, column, cov):
    fam = spec.family
    if fam == CONSTANT:
        return np.ones((column.n, column.n))
    if fam == CANONICAL_FINITE:
        codes = _codes(column.values, column.labels())
        return (codes[:, None] == codes[None, :]).astype(float)
    if fam == PEARSON:
        freqs = column.label_frequencies()
        p = np.asarray([freqs[lab] for lab in column.values])
        eq = np.asarray(column.values)[:, None] == np.asarray(column.values)[None, :]
        return np.where(eq, 1.0 / p[:, None], 0.0) - 1.0
    metric = _metric_for(spec, column)
    if fam in (CANONICAL_LINEAR, MAHALANOBIS):
        return _data.inner_product_matrix(column, metric, cov)
    if fam == FBM:
        e = 2.0 * spec.gamma
        norms = _data.point_norms(column, metric, cov) ** e
        return 0.5 * (norms[:, None] + norms[None, :]
                      - _data.pairwise_distance(column, metric, cov) ** e)
    if fam == SQEXP:
        D = _data.pairwise_distance(column, metric, cov)
        return np.exp(-(D * D) / (2.0 * spec.sigma**2))
    raise ConfigError(f"unknown kernel family {fam!r}")


def _raw_cross(spec, column, new, stats):
    fam = spec.family
    if fam == CONSTANT:
        return np.ones((new.n, column.n))
    if fam == CANONICAL_FINITE:
        order = column.labels()
        train = _codes(column.values, order)
        probe = _codes(new.values, order)
        return ((probe[:, None] == train[None, :]) & (probe[:, None] >= 0)).astype(float)
    if fam == PEARSON:
        # zero whenever either label is unseen in training; training labels
        # always have positive frequency
        p_train = np.asarray([stats.frequencies[lab] for lab in column.values])
        seen = np.asarray([lab in stats.frequencies for lab in new.values])
        eq = np.asarray(new.values)[:, None] == np.asarray(column.values)[None, :]
        raw = np.where(eq, 1.0 / p_train[None, :], 0.0) - 1.0
        return np.where(seen[:, None], raw, 0.0)
    metric = _metric_for(spec, column)
    cov = stats.cov
    if fam in (CANONICAL_LINEAR, MAHALANOBIS):
        return _data.cross_inner_product(column, new, metric, cov)
    if fam == FBM:
        e = 2.0 * spec.gamma
        train_norms = _data.point_norms(column, metric, cov) ** e
        new_norms = _data.point_norms(new, metric, cov) ** e
        D = _data.cross_distance(column, new, metric, cov)
        return 0.5 * (new_norms[:, None] + train_norms[None, :] - D**e)
    if fam == SQEXP:
        D = _data.cross_distance(column, new, metric, cov)
        return np.exp(-(D * D) / (2.0 * spec.sigma**2))
    raise ConfigError(f"unknown kernel family {fam!r}")


def gram(spec, column, cov=None):
    """Centered gram matrix of one covariate under one kernel spec."""
    _check_kind(spec, column)
    if spec.family == MAHALANOBIS and cov is None:
        cov = _data.sample_covariance(column)
    raw = _raw_gram(spec, column, cov)
    if spec.centered:
        m = raw.mean(axis=1)
        g = float(m.mean())
        H = raw - m[:, None] - m[None, :] + g
    else:
        m = np.zeros(column.n)
        g = 0.0
        H = raw
    H = (H + H.T) / 2.0
    freqs = column.label_frequencies() if column.kind == _data.CATEGORICAL else None
    stats = CenteringStats(row_means=_data._freeze(m), grand_mean=g, n=column.n,
                           frequencies=freqs, cov=None if cov is None else _data._freeze(cov))
    return GramEntry(spec=spec, column=column, stats=stats, matrix=_data._freeze(H))


def cross_gram(entry, new):
    """(n_new, n_train) kernel evaluations against the training sample."""
    raw = _raw_cross(entry.spec, entry.column, new, entry.stats)
    if not entry.spec.centered:
        return raw
    m_new = raw.mean(axis=1)
    return raw - m_new[:, None] - entry.stats.row_means[None, :] + entry.stats.grand_mean


def _raw_pair(spec, left, right, stats):
    fam = spec.family
    if fam == CONSTANT:
        return np.ones((left.n, right.n))
    if fam == CANONICAL_FINITE:
        eq = np.asarray(left.values)[:, None] == np.asarray(right.values)[None, :]
        return eq.astype(float)
    if fam == PEARSON:
        p_left = np.asarray([stats.frequencies.get(lab, 0.0) for lab in left.values])
        p_right = np.asarray([stats.frequencies.get(lab, 0.0) for lab in right.values])
        eq = np.asarray(left.values)[:, None] == np.asarray(right.values)[None, :]
        with np.errstate(divide="ignore"):
            raw = np.where(eq, np.where(p_left[:, None] > 0, 1.0 / p_left[:, None], 0.0), 0.0) - 1.0
        both = (p_left[:, None] > 0) & (p_right[None, :] > 0)
        return np.where(both, raw, 0.0)
    # numeric families share their geometry with the cross path
    return _raw_cross(spec, right, left, stats)


def pair_gram(entry, left, right):
    """Kernel values between two arbitrary point sets, centered (when the
    spec asks for it) by the stored training statistics."""
    _data._check_compatible(entry.column, left)
    _data._check_compatible(entry.column, right)
    raw = _raw_pair(entry.spec, left, right, entry.stats)
    if not entry.spec.centered:
        return raw
    m_left = _raw_cross(entry.spec, entry.column, left, entry.stats).mean(axis=1)
    m_right = _raw_cross(entry.spec, entry.column, right, entry.stats).mean(axis=1)
    return raw - m_left[:, None] - m_right[None, :] + entry.stats.grand_mean


def build_gram_set(dataset, specs):
    """Gram entries for every covariate named in `specs`."""
    entries = {}
    for name, spec in specs.items():
        entries[name] = gram(spec, dataset.column(name))
    return GramSet(entries)


def pearson_fisher_identity_check(column, tol=1e-9):
    """True when the empirical second moment of the Pearson kernel map
    reproduces the kernel itself: mean_i h(x, x_i) h(x', x_i) == h(x, x')
    over all label pairs of the column."""
    if column.kind != _data.CATEGORICAL:
        raise ConfigError("the Pearson identity applies to categorical columns")
    spec = KernelSpec(PEARSON, centered=False)
    raw = _raw_gram(spec, column, None)
    order = column.labels()
    codes = _codes(column.values, order)
    first = [int(np.argmax(codes == k)) for k in range(len(order))]
    sub = raw[np.ix_(first, first)]
    moment = raw[first] @ raw[first].T / column.n
    return bool(np.max(np.abs(moment - sub)) <= tol)
