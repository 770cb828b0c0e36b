"""Covariate containers, CSV ingestion, and the geometry behind the kernels.

Columns come in three kinds: categorical labels, real vectors, and curves
sampled on a shared grid.  Curves are treated as piecewise linear, so their
inner product integrates the product of per-interval slopes.  All three
metrics (euclidean, mahalanobis, sobolev) reduce to euclidean geometry on an
embedded coordinate matrix, which keeps the distance and inner-product code
in one place.
"""

import csv
import hashlib
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DataMismatchError, DataSchemaError

CATEGORICAL = "categorical"
VECTOR = "vector"
FUNCTIONAL = "functional"

_KINDS = (CATEGORICAL, VECTOR, FUNCTIONAL)


def _freeze(arr):
    arr = np.asarray(arr, dtype=float)
    arr.flags.writeable = False
    return arr


# ---------------------------------------------------------------------------
# columns and datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CovariateColumn:
    """One named covariate: labels, an (n, d) matrix, or (n, m) curves."""

    name: str
    kind: str
    values: object
    grid: object = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise DataSchemaError(f"unknown column kind {self.kind!r} for {self.name!r}")
        if self.kind == CATEGORICAL:
            object.__setattr__(self, "values", tuple(str(v) for v in self.values))
        else:
            vals = np.asarray(self.values, dtype=float)
            if vals.ndim == 1:
                vals = vals[:, None]
            if vals.ndim != 2:
                raise DataSchemaError(f"column {self.name!r} needs a 2-d value array")
            if not np.all(np.isfinite(vals)):
                raise DataSchemaError(f"column {self.name!r} contains non-finite values")
            object.__setattr__(self, "values", _freeze(vals))
        if self.kind == FUNCTIONAL:
            if self.grid is None:
                raise DataSchemaError(f"functional column {self.name!r} needs a grid")
            grid = np.asarray(self.grid, dtype=float)
            if grid.ndim != 1 or grid.size != self.values.shape[1]:
                raise DataSchemaError(f"grid of {self.name!r} does not match its sample count")
            if grid.size < 2:
                raise DataSchemaError(f"functional column {self.name!r} needs at least 2 grid points")
            if not np.all(np.diff(grid) > 0):
                raise DataSchemaError(f"grid of {self.name!r} must be strictly increasing")
            object.__setattr__(self, "grid", _freeze(grid))
        elif self.grid is not None:
            raise DataSchemaError(f"column {self.name!r} of kind {self.kind} cannot carry a grid")

    @property
    def n(self):
        return len(self.values)

    @property
    def dim(self):
        if self.kind == CATEGORICAL:
            raise DataSchemaError(f"categorical column {self.name!r} has no dimension")
        return self.values.shape[1]

    def labels(self):
        """Distinct labels in first-appearance order."""
        if self.kind != CATEGORICAL:
            raise DataSchemaError(f"column {self.name!r} is not categorical")
        return tuple(dict.fromkeys(self.values))

    def label_frequencies(self):
        """Empirical label probabilities, first-appearance order."""
        labs = self.labels()
        n = self.n
        counts = {lab: 0 for lab in labs}
        for v in self.values:
            counts[v] += 1
        return {lab: counts[lab] / n for lab in labs}

    def take(self, indices):
        """New column with rows picked by integer index."""
        if self.kind == CATEGORICAL:
            vals = tuple(self.values[i] for i in indices)
        else:
            vals = self.values[np.asarray(indices, dtype=int)]
        return CovariateColumn(self.name, self.kind, vals, self.grid)


@dataclass(frozen=True)
class Dataset:
    """Covariate columns plus an optional real response."""

    columns: tuple
    response: object = None
    response_name: str = None

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        if not self.columns:
            raise DataSchemaError("a dataset needs at least one covariate column")
        n = self.columns[0].n
        for col in self.columns:
            if col.n != n:
                raise DataSchemaError(f"column {col.name!r} has {col.n} rows, expected {n}")
        if self.response is not None:
            resp = np.asarray(self.response, dtype=float).ravel()
            if resp.size != n:
                raise DataSchemaError(f"response has {resp.size} rows, expected {n}")
            if not np.all(np.isfinite(resp)):
                raise DataSchemaError("response contains non-finite values")
            object.__setattr__(self, "response", _freeze(resp))

    @property
    def n(self):
        return self.columns[0].n

    def column(self, name):
        for col in self.columns:
            if col.name == name:
                return col
        raise DataSchemaError(f"no column named {name!r}")

    def column_names(self):
        return tuple(col.name for col in self.columns)

    def take(self, indices):
        cols = tuple(col.take(indices) for col in self.columns)
        resp = None if self.response is None else self.response[np.asarray(indices, dtype=int)]
        return Dataset(cols, resp, self.response_name)


# ---------------------------------------------------------------------------
# CSV loading
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ColumnSchema:
    """How to pull one covariate out of a CSV header.

    Selectors, in priority order: an explicit column list, a header prefix
    whose numeric suffixes double as the curve grid, or the conventions
    `name` (single column) and `name:<value>` (block with grid values).
    """

    kind: str
    columns: tuple = None
    prefix: str = None
    grid: tuple = None

    def __post_init__(self):
        kind = VECTOR if self.kind == "real" else self.kind
        object.__setattr__(self, "kind", kind)
        if kind not in _KINDS:
            raise DataSchemaError(f"unknown schema kind {self.kind!r}")
        if self.columns is not None:
            object.__setattr__(self, "columns", tuple(self.columns))


def _parse_cell(text, row_index, col_name):
    try:
        value = float(text)
    except ValueError:
        raise DataSchemaError(
            f"row {row_index}, column {col_name!r}: {text!r} is not a number"
        ) from None
    if not np.isfinite(value):
        raise DataSchemaError(f"row {row_index}, column {col_name!r}: non-finite value {text!r}")
    return value


def _numeric_suffix(header, prefix):
    tail = header[len(prefix):]
    try:
        return float(tail)
    except ValueError:
        return None


def _select_headers(name, schema, header):
    """Resolve one schema entry to (header names, grid or None)."""
    if schema.kind == CATEGORICAL:
        if name not in header:
            raise DataSchemaError(f"missing column {name!r}")
        return [name], None

    if schema.columns is not None:
        missing = [c for c in schema.columns if c not in header]
        if missing:
            raise DataSchemaError(f"missing columns for {name!r}: {missing}")
        grid = None if schema.grid is None else np.asarray(schema.grid, dtype=float)
        return list(schema.columns), grid

    if schema.prefix is not None:
        picked = [(h, _numeric_suffix(h, schema.prefix)) for h in header
                  if h.startswith(schema.prefix)]
        picked = [(h, s) for h, s in picked if s is not None]
        if not picked:
            raise DataSchemaError(f"no columns with prefix {schema.prefix!r} for {name!r}")
        names = [h for h, _ in picked]
        grid = np.asarray([s for _, s in picked], dtype=float)
        return names, (grid if schema.kind == FUNCTIONAL else None)

    block = [h for h in header if h.startswith(name + ":")]
    if block:
        if schema.kind == FUNCTIONAL:
            grid = np.asarray([_parse_cell(h.split(":", 1)[1], 0, h) for h in block])
            return block, grid
        return block, None
    if name in header:
        if schema.kind == FUNCTIONAL:
            raise DataSchemaError(f"functional column {name!r} needs multiple grid columns")
        return [name], None
    raise DataSchemaError(f"missing column {name!r}")


def _read_rows(source):
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, "r", newline="") as fh:
            text = fh.read()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise DataSchemaError("empty CSV: no header row")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise DataSchemaError("duplicate column names in header")
    body = []
    for i, row in enumerate(rows[1:], start=1):
        if not row or (len(row) == 1 and row[0].strip() == ""):
            continue
        if len(row) != len(header):
            raise DataSchemaError(f"row {i} has {len(row)} fields, header has {len(header)}")
        body.append([cell.strip() for cell in row])
    return header, body


def load_dataset(source, schema, response=None, min_rows=2):
    """Read a CSV into a Dataset.

    `schema` maps covariate name to a ColumnSchema (or bare kind string).
    `response`, when given, names a plain numeric column.  Training data
    must have at least `min_rows` rows; prediction inputs may pass 0.
    """
    header, body = _read_rows(source)
    if len(body) < min_rows:
        raise DataSchemaError(f"need at least {min_rows} data rows, found {len(body)}")
    index = {h: k for k, h in enumerate(header)}

    columns = []
    for name, cs in schema.items():
        if isinstance(cs, str):
            cs = ColumnSchema(cs)
        picked, grid = _select_headers(name, cs, header)
        cols_idx = [index[h] for h in picked]
        if cs.kind == CATEGORICAL:
            vals = tuple(row[cols_idx[0]] for row in body)
        else:
            vals = np.empty((len(body), len(cols_idx)))
            for i, row in enumerate(body, start=1):
                for j, (h, k) in enumerate(zip(picked, cols_idx)):
                    vals[i - 1, j] = _parse_cell(row[k], i, h)
        columns.append(CovariateColumn(name, cs.kind, vals, grid))

    resp = None
    if response is not None:
        if response not in index:
            raise DataSchemaError(f"missing response column {response!r}")
        k = index[response]
        resp = np.asarray([_parse_cell(row[k], i, response)
                           for i, row in enumerate(body, start=1)])
    return Dataset(tuple(columns), resp, response)


def _format(value):
    return repr(float(value))


def write_dataset(dataset):
    """Serialize a Dataset to CSV text; load_dataset round-trips it."""
    header = []
    getters = []
    if dataset.response is not None:
        header.append(dataset.response_name or "y")
        getters.append(lambda i: _format(dataset.response[i]))
    for col in dataset.columns:
        if col.kind == CATEGORICAL:
            header.append(col.name)
            getters.append(lambda i, c=col: c.values[i])
        elif col.kind == FUNCTIONAL:
            for j, g in enumerate(col.grid):
                header.append(f"{col.name}:{_format(g)}")
                getters.append(lambda i, c=col, j=j: _format(c.values[i, j]))
        elif col.dim == 1:
            header.append(col.name)
            getters.append(lambda i, c=col: _format(c.values[i, 0]))
        else:
            for j in range(col.dim):
                header.append(f"{col.name}:{j + 1}")
                getters.append(lambda i, c=col, j=j: _format(c.values[i, j]))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for i in range(dataset.n):
        writer.writerow([g(i) for g in getters])
    return buf.getvalue()


def dataset_checksum(dataset):
    """Stable fingerprint of the training data, stored with fitted models."""
    return hashlib.sha256(write_dataset(dataset).encode()).hexdigest()


def schema_of(dataset):
    """Schema dict that reloads write_dataset output into the same shape."""
    out = {}
    for col in dataset.columns:
        out[col.name] = ColumnSchema(col.kind)
    return out


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

EUCLIDEAN = "euclidean"
MAHALANOBIS = "mahalanobis"
SOBOLEV = "sobolev"


def default_metric(column):
    if column.kind == VECTOR:
        return EUCLIDEAN
    if column.kind == FUNCTIONAL:
        return SOBOLEV
    raise DataSchemaError(f"categorical column {column.name!r} has no metric")


def sample_covariance(column):
    """Sample covariance of a vector column (mahalanobis default)."""
    if column.kind != VECTOR:
        raise DataSchemaError("mahalanobis applies to vector columns")
    if column.n < 2:
        raise DataSchemaError("covariance needs at least 2 rows")
    return np.cov(column.values, rowvar=False, ddof=1).reshape(column.dim, column.dim)


def _embed(column, metric, cov):
    """Coordinates in which the requested metric is plain euclidean."""
    if column.kind == CATEGORICAL:
        raise DataSchemaError(f"no metric geometry for categorical column {column.name!r}")
    if metric is None:
        metric = default_metric(column)
    if metric == EUCLIDEAN:
        if column.kind != VECTOR:
            raise DataSchemaError("euclidean metric applies to vector columns")
        return column.values
    if metric == MAHALANOBIS:
        if column.kind != VECTOR:
            raise DataSchemaError("mahalanobis metric applies to vector columns")
        S = sample_covariance(column) if cov is None else np.asarray(cov, dtype=float)
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise DataSchemaError("mahalanobis covariance is not positive definite") from None
        return np.linalg.solve(L, column.values.T).T
    if metric == SOBOLEV:
        if column.kind != FUNCTIONAL:
            raise DataSchemaError("sobolev metric applies to functional columns")
        dt = np.diff(column.grid)
        slopes = np.diff(column.values, axis=1) / dt
        return slopes * np.sqrt(dt)
    raise DataSchemaError(f"unknown metric {metric!r}")


def _check_compatible(column, new):
    if new.kind != column.kind:
        raise DataMismatchError(
            f"column {column.name!r}: expected kind {column.kind}, got {new.kind}")
    if column.kind == FUNCTIONAL and not np.array_equal(column.grid, new.grid):
        raise DataMismatchError(f"column {column.name!r}: grids differ")
    if column.kind != CATEGORICAL and new.dim != column.dim:
        raise DataMismatchError(
            f"column {column.name!r}: expected dimension {column.dim}, got {new.dim}")


def inner_product_matrix(column, metric=None, cov=None):
    """Pairwise inner products under the column's metric."""
    Z = _embed(column, metric, cov)
    return Z @ Z.T


def cross_inner_product(column, new, metric=None, cov=None):
    """(n_new, n_train) inner products; mahalanobis reuses the training cov."""
    _check_compatible(column, new)
    if metric is None:
        metric = default_metric(column)
    if metric == MAHALANOBIS and cov is None:
        cov = sample_covariance(column)
    return _embed(new, metric, cov) @ _embed(column, metric, cov).T


def point_norms(column, metric=None, cov=None):
    """Distance of each point from the zero element of the metric space."""
    Z = _embed(column, metric, cov)
    return np.sqrt(np.sum(Z * Z, axis=1))


def _direct_distance(left, right):
    # differences computed outright so identical rows give exactly zero,
    # which matters once distances are raised to small fractional powers
    out = np.empty((len(left), len(right)))
    block = max(1, int(4_000_000 / max(1, right.size)))
    for s in range(0, len(left), block):
        diff = left[s:s + block, None, :] - right[None, :, :]
        out[s:s + block] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return out


def pairwise_distance(column, metric=None, cov=None):
    """Pairwise distances under the column's metric."""
    Z = _embed(column, metric, cov)
    return _direct_distance(Z, Z)


def cross_distance(column, new, metric=None, cov=None):
    """(n_new, n_train) distances; mahalanobis reuses the training cov."""
    _check_compatible(column, new)
    if metric is None:
        metric = default_metric(column)
    if metric == MAHALANOBIS and cov is None:
        cov = sample_covariance(column)
    return _direct_distance(_embed(new, metric, cov), _embed(column, metric, cov))
