"""Column containers, CSV schema handling, and metric geometry."""

import io

import numpy as np
import pytest
from numpy.testing import assert_allclose

from helpers import cat_column, curve_column, vector_column
from iprior import data
from iprior.data import (
    ColumnSchema,
    CovariateColumn,
    Dataset,
    cross_distance,
    cross_inner_product,
    dataset_checksum,
    inner_product_matrix,
    load_dataset,
    pairwise_distance,
    point_norms,
    write_dataset,
)
from iprior.errors import DataMismatchError, DataSchemaError


# ---------------------------------------------------------------------------
# hand-checked metric values
# ---------------------------------------------------------------------------

def test_euclidean_hand_values():
    col = CovariateColumn("x", "vector", [[0.0, 0.0], [3.0, 4.0]])
    assert_allclose(pairwise_distance(col)[0, 1], 5.0)
    col2 = CovariateColumn("x", "vector", [[1.0, 2.0], [3.0, 4.0]])
    assert_allclose(inner_product_matrix(col2)[0, 1], 11.0)


def test_sobolev_distance_between_zero_and_identity():
    # x(t) = 0 and x'(t) = t on the grid {0, 1}: slopes 0 and 1, one interval
    col = CovariateColumn("f", "functional", [[0.0, 0.0], [0.0, 1.0]], grid=[0.0, 1.0])
    assert_allclose(pairwise_distance(col)[0, 1], 1.0)


def test_sobolev_inner_product_of_scaled_lines():
    # x(t) = t and x'(t) = 2t on {0, 1/2, 1}: integral of 1 * 2 over [0, 1]
    grid = [0.0, 0.5, 1.0]
    col = CovariateColumn("f", "functional", [[0.0, 0.5, 1.0], [0.0, 1.0, 2.0]], grid=grid)
    assert_allclose(inner_product_matrix(col)[0, 1], 2.0)


def test_sobolev_is_slope_geometry():
    # constant shifts of a curve are invisible to the metric
    rng = np.random.default_rng(5)
    base = curve_column(rng, 4)
    shifted = CovariateColumn(base.name, base.kind, base.values + 7.5, base.grid)
    assert_allclose(pairwise_distance(shifted), pairwise_distance(base), atol=1e-12)


def test_mahalanobis_identity_matches_euclidean():
    rng = np.random.default_rng(0)
    col = vector_column(rng, 6, 3)
    eye = np.eye(3)
    assert_allclose(pairwise_distance(col, "mahalanobis", eye), pairwise_distance(col))
    assert_allclose(inner_product_matrix(col, "mahalanobis", eye), inner_product_matrix(col))


def test_mahalanobis_diagonal_weighting():
    col = CovariateColumn("x", "vector", [[0.0, 0.0], [2.0, 3.0]])
    S = np.diag([4.0, 9.0])
    assert_allclose(pairwise_distance(col, "mahalanobis", S)[0, 1], np.sqrt(2.0))


def test_mahalanobis_rejects_singular_covariance():
    rng = np.random.default_rng(1)
    col = vector_column(rng, 5, 2)
    with pytest.raises(DataSchemaError):
        inner_product_matrix(col, "mahalanobis", np.zeros((2, 2)))


def test_norm_expansion_identity_all_metrics():
    # ||x - x'||^2 == <x,x> - 2<x,x'> + <x',x'> within 1e-10
    rng = np.random.default_rng(42)
    cases = [
        (vector_column(rng, 8, 3), "euclidean", None),
        (vector_column(rng, 8, 3), "mahalanobis", None),
        (curve_column(rng, 8), "sobolev", None),
    ]
    for col, metric, cov in cases:
        G = inner_product_matrix(col, metric, cov)
        D = pairwise_distance(col, metric, cov)
        sq = np.diag(G)
        expected = sq[:, None] - 2 * G + sq[None, :]
        assert_allclose(D**2, expected, atol=1e-10)


def test_distance_matches_direct_norms():
    rng = np.random.default_rng(7)
    col = vector_column(rng, 5, 4)
    D = pairwise_distance(col)
    for i in range(5):
        for j in range(5):
            assert_allclose(D[i, j], np.linalg.norm(col.values[i] - col.values[j]), atol=1e-10)


def test_cross_operations_match_pairwise_on_train_points():
    rng = np.random.default_rng(3)
    for col, metric in [(vector_column(rng, 6, 2), "euclidean"),
                        (vector_column(rng, 6, 2), "mahalanobis"),
                        (curve_column(rng, 6), "sobolev")]:
        assert_allclose(cross_distance(col, col, metric), pairwise_distance(col, metric), atol=1e-12)
        assert_allclose(cross_inner_product(col, col, metric),
                        inner_product_matrix(col, metric), atol=1e-12)


def test_point_norms_are_distances_to_zero():
    rng = np.random.default_rng(9)
    col = vector_column(rng, 5, 3)
    zero = CovariateColumn("x", "vector", np.zeros((1, 3)))
    assert_allclose(point_norms(col), cross_distance(col, zero).ravel(), atol=1e-12)


def test_metric_kind_mismatches_rejected():
    rng = np.random.default_rng(11)
    with pytest.raises(DataSchemaError):
        pairwise_distance(cat_column(rng, 5))
    with pytest.raises(DataSchemaError):
        pairwise_distance(curve_column(rng, 4), "euclidean")
    with pytest.raises(DataSchemaError):
        pairwise_distance(vector_column(rng, 4), "sobolev")


def test_cross_grid_mismatch_rejected():
    rng = np.random.default_rng(13)
    a = curve_column(rng, 4)
    b = CovariateColumn(a.name, a.kind, a.values, a.grid * 2.0)
    with pytest.raises(DataMismatchError):
        cross_distance(a, b)


# ---------------------------------------------------------------------------
# columns and datasets
# ---------------------------------------------------------------------------

def test_column_validation():
    with pytest.raises(DataSchemaError):
        CovariateColumn("x", "nonsense", [[1.0]])
    with pytest.raises(DataSchemaError):
        CovariateColumn("f", "functional", [[1.0, 2.0]], grid=[1.0, 0.5])
    with pytest.raises(DataSchemaError):
        CovariateColumn("f", "functional", [[1.0, 2.0]], grid=[1.0])
    with pytest.raises(DataSchemaError):
        CovariateColumn("x", "vector", [[np.nan]])
    with pytest.raises(DataSchemaError):
        CovariateColumn("x", "vector", [[1.0]], grid=[0.0])


def test_label_bookkeeping():
    col = CovariateColumn("g", "categorical", ["b", "a", "b", "c"])
    assert col.labels() == ("b", "a", "c")
    freqs = col.label_frequencies()
    assert_allclose([freqs["b"], freqs["a"], freqs["c"]], [0.5, 0.25, 0.25])


def test_dataset_row_checks():
    rng = np.random.default_rng(2)
    x = vector_column(rng, 4)
    with pytest.raises(DataSchemaError):
        Dataset((x, vector_column(rng, 5, name="z")))
    with pytest.raises(DataSchemaError):
        Dataset((x,), response=[1.0, 2.0])
    ds = Dataset((x,), response=rng.normal(size=4), response_name="y")
    assert ds.n == 4
    assert ds.column("x") is x
    with pytest.raises(DataSchemaError):
        ds.column("missing")


def test_take_subsets_rows():
    rng = np.random.default_rng(21)
    ds = Dataset((vector_column(rng, 6), cat_column(rng, 6)),
                 response=np.arange(6.0), response_name="y")
    sub = ds.take([4, 1])
    assert sub.n == 2
    assert_allclose(sub.response, [4.0, 1.0])
    assert sub.column("group").values == tuple(ds.column("group").values[i] for i in (4, 1))


# ---------------------------------------------------------------------------
# CSV loading
# ---------------------------------------------------------------------------

CSV_BASIC = """y,x,group,f:0.0,f:0.5,f:1.0
1.0,0.5,A,0,1,2
2.0,1.5,B,1,2,3
3.0,2.5,A,2,3,4
"""


def test_load_basic_csv():
    ds = load_dataset(io.StringIO(CSV_BASIC),
                      {"x": "real", "group": "categorical", "f": "functional"},
                      response="y")
    assert ds.n == 3
    assert ds.column("x").dim == 1
    assert ds.column("group").values == ("A", "B", "A")
    assert_allclose(ds.column("f").grid, [0.0, 0.5, 1.0])
    assert_allclose(ds.response, [1.0, 2.0, 3.0])


def test_load_with_prefix_selectors():
    csv_text = "y,t1,t2,t10,x.1,x.2\n1,0,1,2,5,6\n2,3,4,5,7,8\n"
    ds = load_dataset(io.StringIO(csv_text),
                      {"curve": ColumnSchema("functional", prefix="t"),
                       "x": ColumnSchema("vector", prefix="x.")},
                      response="y")
    assert_allclose(ds.column("curve").grid, [1.0, 2.0, 10.0])
    assert ds.column("x").dim == 2
    assert_allclose(ds.column("x").values, [[5.0, 6.0], [7.0, 8.0]])


def test_load_with_explicit_columns():
    csv_text = "a,b,y\n1,2,3\n4,5,6\n"
    ds = load_dataset(io.StringIO(csv_text),
                      {"x": ColumnSchema("vector", columns=("b", "a"))}, response="y")
    assert_allclose(ds.column("x").values, [[2.0, 1.0], [5.0, 4.0]])


def test_load_error_paths():
    good = {"x": "real"}
    with pytest.raises(DataSchemaError, match="missing column"):
        load_dataset(io.StringIO("z\n1\n2\n"), good)
    with pytest.raises(DataSchemaError, match="not a number"):
        load_dataset(io.StringIO("x\n1\noops\n"), good)
    with pytest.raises(DataSchemaError, match="row 1 has"):
        load_dataset(io.StringIO("x,y\n1\n2,3\n"), {"x": "real"})
    with pytest.raises(DataSchemaError, match="at least 2"):
        load_dataset(io.StringIO("x\n1\n"), good)
    with pytest.raises(DataSchemaError, match="duplicate"):
        load_dataset(io.StringIO("x,x\n1,2\n3,4\n"), good)
    with pytest.raises(DataSchemaError, match="header"):
        load_dataset(io.StringIO(""), good)
    with pytest.raises(DataSchemaError, match="response"):
        load_dataset(io.StringIO("x\n1\n2\n"), good, response="y")
    with pytest.raises(DataSchemaError, match="increasing"):
        load_dataset(io.StringIO("f:1.0,f:0.5\n1,2\n3,4\n"), {"f": "functional"})


def test_load_empty_prediction_frame():
    ds = load_dataset(io.StringIO("x\n"), {"x": "real"}, min_rows=0)
    assert ds.n == 0
    assert ds.response is None


def test_roundtrip_through_csv():
    rng = np.random.default_rng(17)
    ds = Dataset((vector_column(rng, 5, 2), cat_column(rng, 5), curve_column(rng, 5)),
                 response=rng.normal(size=5), response_name="y")
    text = write_dataset(ds)
    back = load_dataset(io.StringIO(text),
                        {"x": "vector", "group": "categorical", "curve": "functional"},
                        response="y")
    assert_allclose(back.response, ds.response)
    assert_allclose(back.column("x").values, ds.column("x").values)
    assert back.column("group").values == ds.column("group").values
    assert_allclose(back.column("curve").grid, ds.column("curve").grid)
    assert_allclose(back.column("curve").values, ds.column("curve").values)
    # serialization is canonical, so the checksum is stable
    assert dataset_checksum(back) == dataset_checksum(ds)
    assert write_dataset(back) == text


def test_schema_of_reloads_own_output():
    rng = np.random.default_rng(19)
    ds = Dataset((vector_column(rng, 4, 3), curve_column(rng, 4)),
                 response=rng.normal(size=4), response_name="resp")
    back = load_dataset(io.StringIO(write_dataset(ds)), data.schema_of(ds), response="resp")
    assert_allclose(back.column("x").values, ds.column("x").values)
