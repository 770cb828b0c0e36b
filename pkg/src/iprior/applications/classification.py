"""Categorical responses via class-indicator regression.

Each observation is expanded into one row per class carrying a 0/1
indicator response, so a training set of n points and m classes becomes a
regression problem on n*m rows.  The model couples a class effect with
class-by-feature interactions; predicted class probabilities of a point
are read off the posterior mean of its m indicator rows and the argmax is
the predicted label.

The expanded combined kernel is the Kronecker product of an n x n
observation matrix and the m x m class matrix, because every term shares
the same class factor.  Centered feature grams annihilate the all-ones
class-effect block, so the observation factor stays symmetric and small:
one n x n eigendecomposition per E-step replaces an (n*m) x (n*m) one.
The `kron` engine exploits this; the `dense` engine runs the expanded
rows through the ordinary machinery and exists as a cross-check.
"""

import logging
from dataclasses import dataclass

import numpy as np

from ..anova import AnovaSpec, scale_vector, term_coefficients
from ..data import CATEGORICAL, CovariateColumn, Dataset
from ..errors import ConfigError, DataSchemaError, NumericalFailure
from ..estimate import EStepStats, FitConfig, em_fit, run_em
from ..inference import LOG_2PI, ErrorModel, build_problem, spectral_factor
from ..kernels import FBM, PEARSON, KernelSpec, cross_gram, gram

log = logging.getLogger(__name__)


def _default_feature_kernels(dataset, label_column):
    out = {}
    for col in dataset.columns:
        if col.name == label_column:
            continue
        if col.kind == CATEGORICAL:
            out[col.name] = KernelSpec(PEARSON)
        else:
            out[col.name] = KernelSpec(FBM)
    return out


@dataclass(frozen=True)
class ClassificationProblem:
    """Training labels plus the feature columns and their kernels."""

    dataset: Dataset
    label_column: str
    classes: tuple
    feature_kernels: dict

    def __post_init__(self):
        col = self.dataset.column(self.label_column)
        if col.kind != CATEGORICAL:
            raise ConfigError(f"label column {self.label_column!r} must be categorical")
        if len(self.classes) < 2:
            raise ConfigError("classification needs at least two classes")
        if not self.feature_kernels:
            raise ConfigError("classification needs at least one feature column")
        for name in self.feature_kernels:
            if name == self.label_column:
                raise ConfigError("the label column cannot also be a feature")
            self.dataset.column(name)

    @property
    def n(self):
        return self.dataset.n

    @property
    def n_classes(self):
        return len(self.classes)

    @property
    def feature_names(self):
        return tuple(self.feature_kernels)

    def labels(self):
        return self.dataset.column(self.label_column).values

    def anova_spec(self):
        label = self.label_column
        terms = [(label,)] + [(label, f) for f in self.feature_names]
        return AnovaSpec((label,) + self.feature_names, tuple(terms))

    def indicators(self):
        """One-hot responses, flattened observation-major."""
        index = {c: j for j, c in enumerate(self.classes)}
        y = np.zeros((self.n, self.n_classes))
        for k, lab in enumerate(self.labels()):
            y[k, index[lab]] = 1.0
        return y.ravel()


def classification_problem(dataset, label_column, feature_kernels=None):
    """Bundle a labelled dataset into a classification problem.

    Features default to every non-label column, with an fbm kernel on
    numeric columns and a pearson kernel on categorical ones.
    """
    labels = dataset.column(label_column)
    if labels.kind != CATEGORICAL:
        raise ConfigError(f"label column {label_column!r} must be categorical")
    if feature_kernels is None:
        feature_kernels = _default_feature_kernels(dataset, label_column)
    return ClassificationProblem(dataset=dataset,
                                 label_column=label_column,
                                 classes=labels.labels(),
                                 feature_kernels=dict(feature_kernels))


def _class_gram(problem):
    """Pearson gram over the distinct classes (uniform frequencies)."""
    col = CovariateColumn(problem.label_column, CATEGORICAL, problem.classes)
    return gram(KernelSpec(PEARSON), col)


def _feature_entries(problem):
    return {name: gram(spec, problem.dataset.column(name))
            for name, spec in problem.feature_kernels.items()}


# ---------------------------------------------------------------------------
# kron engine
# ---------------------------------------------------------------------------

class KronBackend:
    """E-step reductions on the (observation x class) product structure.

    Every term of the expanded model is A_i (x) Hp with a shared class
    factor Hp, so the combined kernel is M(lam) (x) Hp and its spectrum is
    the outer product of the spectra of M and Hp.  All the sweep inputs
    reduce to sums over that n x m eigenvalue grid plus one rotated-trace
    pass per term pair.
    """

    def __init__(self, problem):
        self.problem = problem
        self.spec = problem.anova_spec()
        n, m = problem.n, problem.n_classes
        self.n_rows = n * m

        self.class_entry = _class_gram(problem)
        self.entries = _feature_entries(problem)
        hp = self.class_entry.matrix
        self.hp = hp
        self.hp2 = hp @ hp
        self.eta, self.up = spectral_factor(hp)

        # observation-side factor of each term, in spec.terms order
        self.parts = [np.ones((n, n))]
        self.parts += [self.entries[f].matrix for f in problem.feature_names]
        t = len(self.parts)
        self._products = {(i, j): self.parts[i] @ self.parts[j]
                          for i in range(t) for j in range(i, t)}

        y = problem.indicators()
        self.f0 = float(np.mean(y))
        self.resid = (y - self.f0).reshape(n, m)
        self._rss = float(np.vdot(self.resid, self.resid))

    @property
    def n_scales(self):
        return self.spec.n_scales

    def default_psi(self):
        v = float(np.var(self.resid))
        return 1.0 / v if v > 0 else 1.0

    def _grid(self, lam, psi):
        """Spectral pieces of V on the observation x class grid."""
        c = term_coefficients(self.spec, np.asarray(lam, dtype=float))
        M = sum(ci * Ai for ci, Ai in zip(c, self.parts))
        mu, um = spectral_factor(M)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            h = np.outer(mu, self.eta)
            v = psi * h * h + 1.0 / psi
            rt = um.T @ self.resid @ self.up
            loglik = -0.5 * (self.n_rows * LOG_2PI + float(np.sum(np.log(v)))
                             + float(np.sum(rt * rt / v)))
        if not np.isfinite(loglik):
            raise NumericalFailure("non-finite marginal likelihood",
                                   lam=lam, psi=psi, n=self.n_rows)
        return um, h, v, rt, loglik

    def weights(self, lam, psi):
        """Posterior mean of the expanded weights, as an (n, m) matrix."""
        um, h, v, rt, _ = self._grid(lam, psi)
        return um @ (psi * h / v * rt) @ self.up.T

    def prepare(self, lam, psi):
        um, h, v, rt, loglik = self._grid(lam, psi)
        w = um @ (psi * h / v * rt) @ self.up.T

        # class-side diagonal of V^{-1} summed per observation eigenvalue
        col_sums = (self.eta**2)[None, :] / v
        inv_sums = col_sums.sum(axis=1)

        t = len(self.parts)
        P = np.empty((t, t))
        for i in range(t):
            for j in range(i, t):
                X = self._products[i, j]
                diag = np.einsum("ka,ka->a", um, X @ um)
                P[i, j] = P[j, i] = (float(diag @ inv_sums)
                                     + float(np.vdot(w, X @ w @ self.hp2)))
        s = np.asarray([float(np.vdot(self.resid, Ai @ w @ self.hp))
                        for Ai in self.parts])
        tr_w = float(np.sum(1.0 / v)) + float(np.vdot(w, w))
        return EStepStats(loglik=loglik, pair=P, lin=s, tr_w=tr_w, rss=self._rss)


# ---------------------------------------------------------------------------
# dense engine
# ---------------------------------------------------------------------------

def expanded_dataset(problem):
    """The n*m-row indicator regression behind a classification problem."""
    n, m = problem.n, problem.n_classes
    obs = np.repeat(np.arange(n), m)
    cols = [CovariateColumn(problem.label_column, CATEGORICAL,
                            tuple(problem.classes) * n)]
    cols += [problem.dataset.column(f).take(obs) for f in problem.feature_names]
    return Dataset(tuple(cols), problem.indicators(), response_name="indicator")


def _dense_fit(problem, config, label):
    specs = {problem.label_column: KernelSpec(PEARSON), **problem.feature_kernels}
    expanded = build_problem(expanded_dataset(problem), specs, problem.anova_spec())
    return em_fit(expanded, config, label=label)


# ---------------------------------------------------------------------------
# fitted model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassifierModel:
    """Fitted classifier: scales, precision and the posterior weight grid."""

    label_column: str
    classes: tuple
    train_labels: tuple
    spec: AnovaSpec
    lam: object            # ScaleVector
    error: ErrorModel
    f0: float
    w_mat: object           # (n, m) posterior weight matrix
    class_gram: object      # (m, m)
    feature_entries: dict   # name -> GramEntry on the original columns
    loglik: float
    status: str
    engine: str
    label: str = "classifier"
    trace: tuple = ()
    diagnostics: tuple = ()

    @property
    def n(self):
        return self.w_mat.shape[0]

    @property
    def n_classes(self):
        return len(self.classes)

    @property
    def n_rows(self):
        return self.n * self.n_classes

    @property
    def n_scales(self):
        return self.spec.n_scales

    @property
    def feature_names(self):
        return tuple(self.feature_entries)


def build_classifier(problem, config=None, engine="kron", label="classifier"):
    """Fit the class-indicator regression of a classification problem.

    engine="kron" runs EM on the product structure (one n x n
    eigendecomposition per step); engine="dense" materializes all n*m
    expanded rows.  Both maximize the same likelihood.
    """
    config = config or FitConfig()
    if engine not in ("kron", "dense"):
        raise ConfigError(f"unknown engine {engine!r}; pick kron or dense")

    if engine == "kron":
        backend = KronBackend(problem)
        lam, psi, loglik, status, trace, reports = run_em(backend, config)
        lam_vec = scale_vector(backend.spec, lam)
        w_mat = backend.weights(lam, psi)
        f0 = backend.f0
        spec = backend.spec
        class_gram = backend.class_entry.matrix
        entries = backend.entries
        error = ErrorModel(psi)
        diagnostics = reports
    else:
        fitted = _dense_fit(problem, config, label)
        spec = fitted.spec
        lam_vec = fitted.lam
        error = fitted.error
        f0 = fitted.f0
        w_mat = fitted.w_hat.reshape(problem.n, problem.n_classes)
        loglik = fitted.loglik
        status = fitted.status
        trace = fitted.trace
        diagnostics = fitted.diagnostics
        class_gram = _class_gram(problem).matrix
        entries = _feature_entries(problem)

    w_mat = np.asarray(w_mat)
    w_mat.flags.writeable = False
    return ClassifierModel(label_column=problem.label_column,
                           classes=problem.classes,
                           train_labels=tuple(problem.labels()),
                           spec=spec,
                           lam=lam_vec,
                           error=error,
                           f0=f0,
                           w_mat=w_mat,
                           class_gram=class_gram,
                           feature_entries=entries,
                           loglik=loglik,
                           status=status,
                           engine=engine,
                           label=label,
                           trace=trace,
                           diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------

def _feature_columns(model, points):
    if isinstance(points, Dataset):
        return {name: points.column(name) for name in model.feature_names}
    out = {}
    for name in model.feature_names:
        if name not in points:
            raise DataSchemaError(f"prediction points lack covariate {name!r}")
        out[name] = points[name]
    return out


def class_scores(model, points):
    """Posterior mean of the class indicators at new points, (n_new, m)."""
    cols = _feature_columns(model, points)
    sizes = {col.n for col in cols.values()}
    if len(sizes) != 1:
        raise DataSchemaError("prediction columns disagree on row count")
    n_new = sizes.pop()

    c = term_coefficients(model.spec, model.lam.values)
    cm = c[0] * np.ones((n_new, model.n))
    for i, name in enumerate(model.feature_names):
        cm += c[1 + i] * cross_gram(model.feature_entries[name], cols[name])
    return model.f0 + cm @ model.w_mat @ model.class_gram


@dataclass(frozen=True)
class ClassPrediction:
    classes: tuple
    scores: object
    labels: tuple


def predict_classes(model, points):
    """Argmax of the indicator means; ties go to the earliest class."""
    scores = class_scores(model, points)
    best = np.argmax(scores, axis=1)
    ties = int(np.sum(np.sum(scores == scores.max(axis=1, keepdims=True), axis=1) > 1))
    if ties:
        log.info("%d prediction rows had tied class scores", ties)
    labels = tuple(model.classes[j] for j in best)
    return ClassPrediction(classes=model.classes, scores=scores, labels=labels)


@dataclass(frozen=True)
class ClassificationMetrics:
    n: int
    errors: int
    error_rate: float
    unseen: int


def classification_metrics(true_labels, predicted_labels, classes=None):
    """Error counts; true labels outside `classes` count as unseen (and wrong)."""
    true_labels = tuple(str(v) for v in true_labels)
    predicted_labels = tuple(str(v) for v in predicted_labels)
    if len(true_labels) != len(predicted_labels):
        raise DataSchemaError("label sequences differ in length")
    n = len(true_labels)
    if n == 0:
        raise DataSchemaError("no labels to score")
    errors = sum(t != p for t, p in zip(true_labels, predicted_labels))
    unseen = 0
    if classes is not None:
        known = set(classes)
        unseen = sum(t not in known for t in true_labels)
    return ClassificationMetrics(n=n, errors=errors, error_rate=errors / n,
                                 unseen=unseen)
