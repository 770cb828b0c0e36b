"""Fitted-model payloads: JSON-safe dicts and files.

A payload embeds everything prediction needs: the training columns, the
per-covariate kernels, the term structure, the estimated scales and
precision, and the posterior weights.  Kernel matrices and centering
statistics are deterministic functions of the training columns, so they
are recomputed on load; a checksum of the canonical training CSV guards
the stored columns against corruption or hand editing.
"""

import json

import numpy as np

from .anova import AnovaSpec, scale_vector
from .applications.classification import (
    ClassifierModel,
    _class_gram,
    _feature_entries,
    classification_problem,
)
from .data import CATEGORICAL, CovariateColumn, Dataset, dataset_checksum
from .errors import DataSchemaError
from .inference import ErrorModel, FittedModel, build_problem, marginal_cov
from .kernels import KernelSpec

MODEL_FORMAT = "iprior-model/1"


def _column_payload(col):
    out = {"name": col.name, "kind": col.kind}
    if col.kind == CATEGORICAL:
        out["values"] = list(col.values)
    else:
        out["values"] = col.values.tolist()
    if col.grid is not None:
        out["grid"] = col.grid.tolist()
    return out


def _column_from(payload):
    return CovariateColumn(payload["name"], payload["kind"], payload["values"],
                           payload.get("grid"))


def _kernel_payload(spec):
    return {"family": spec.family, "gamma": spec.gamma, "sigma": spec.sigma,
            "metric": spec.metric, "centered": spec.centered}


def _kernel_from(payload):
    return KernelSpec(family=payload["family"], gamma=payload["gamma"],
                      sigma=payload["sigma"], metric=payload["metric"],
                      centered=payload["centered"])


def _anova_payload(spec):
    return {"covariates": list(spec.covariates),
            "terms": [list(t) for t in spec.terms],
            "parameterization": spec.parameterization}


def _anova_from(payload):
    return AnovaSpec(tuple(payload["covariates"]),
                     tuple(tuple(t) for t in payload["terms"]),
                     payload["parameterization"])


def _train_payload(dataset, kernels):
    return {
        "columns": [_column_payload(c) for c in dataset.columns],
        "kernels": {name: _kernel_payload(ks) for name, ks in kernels.items()},
        "response": None if dataset.response is None else dataset.response.tolist(),
        "response_name": dataset.response_name,
        "checksum": dataset_checksum(dataset),
    }


def _train_from(payload):
    dataset = Dataset(tuple(_column_from(c) for c in payload["columns"]),
                      payload["response"], payload["response_name"])
    if dataset_checksum(dataset) != payload["checksum"]:
        raise DataSchemaError("training data does not match its stored checksum")
    kernels = {name: _kernel_from(ks) for name, ks in payload["kernels"].items()}
    return dataset, kernels


def _fit_summary(model):
    return {
        "iterations": len(model.trace),
        "restarts": [{"index": rep.index, "loglik": rep.loglik,
                      "status": rep.status, "error": rep.error}
                     for rep in model.diagnostics],
    }


def _common_payload(model, kind):
    return {
        "format": MODEL_FORMAT,
        "kind": kind,
        "label": model.label,
        "status": model.status,
        "loglik": model.loglik,
        "anova": _anova_payload(model.spec),
        "scales": {"names": list(model.lam.names),
                   "values": model.lam.values.tolist()},
        "psi": model.error.psi,
        "f0": model.f0,
        "fit": _fit_summary(model),
    }


def model_to_payload(model):
    """JSON-safe dict for a fitted regression or classifier."""
    if isinstance(model, ClassifierModel):
        label_col = CovariateColumn(model.label_column, CATEGORICAL, model.train_labels)
        feature_cols = tuple(model.feature_entries[name].column
                             for name in model.feature_names)
        kernels = {name: model.feature_entries[name].spec
                   for name in model.feature_names}
        out = _common_payload(model, "classifier")
        out["engine"] = model.engine
        out["classes"] = list(model.classes)
        out["label_column"] = model.label_column
        out["weights"] = model.w_mat.tolist()
        out["train"] = _train_payload(Dataset((label_col,) + feature_cols), kernels)
        return out

    grams = model.problem.grams
    train = Dataset(tuple(grams[name].column for name in model.spec.covariates),
                    model.problem.y, model.problem.response_name)
    kernels = {name: grams[name].spec for name in model.spec.covariates}
    out = _common_payload(model, "regression")
    out["weights"] = model.w_hat.tolist()
    out["train"] = _train_payload(train, kernels)
    return out


def model_from_payload(payload):
    """Rebuild a fitted model from its payload; verifies the checksum."""
    try:
        fmt = payload["format"]
        kind = payload["kind"]
    except (TypeError, KeyError):
        raise DataSchemaError("not a model payload") from None
    if fmt != MODEL_FORMAT:
        raise DataSchemaError(f"unsupported model format {fmt!r}")

    try:
        if kind == "classifier":
            return _classifier_from(payload)
        if kind == "regression":
            return _regression_from(payload)
        raise DataSchemaError(f"unknown model kind {kind!r}")
    except KeyError as exc:
        raise DataSchemaError(f"model payload lacks field {exc}") from None


def _regression_from(payload):
    dataset, kernels = _train_from(payload["train"])
    spec = _anova_from(payload["anova"])
    problem = build_problem(dataset, kernels, spec, f0=payload["f0"])
    lam = np.asarray(payload["scales"]["values"], dtype=float)
    error = ErrorModel(payload["psi"])
    factor = marginal_cov(problem.h_matrix(lam), error)
    return FittedModel(problem=problem,
                       lam=scale_vector(spec, lam),
                       error=error,
                       w_hat=np.asarray(payload["weights"], dtype=float),
                       factor=factor,
                       loglik=payload["loglik"],
                       status=payload["status"],
                       label=payload["label"])


def _classifier_from(payload):
    dataset, kernels = _train_from(payload["train"])
    problem = classification_problem(dataset, payload["label_column"], kernels)
    if tuple(payload["classes"]) != problem.classes:
        raise DataSchemaError("stored classes disagree with the training labels")
    spec = _anova_from(payload["anova"])
    w_mat = np.asarray(payload["weights"], dtype=float)
    w_mat.flags.writeable = False
    return ClassifierModel(label_column=problem.label_column,
                           classes=problem.classes,
                           train_labels=tuple(problem.labels()),
                           spec=spec,
                           lam=scale_vector(spec, payload["scales"]["values"]),
                           error=ErrorModel(payload["psi"]),
                           f0=payload["f0"],
                           w_mat=w_mat,
                           class_gram=_class_gram(problem).matrix,
                           feature_entries=_feature_entries(problem),
                           loglik=payload["loglik"],
                           status=payload["status"],
                           engine=payload["engine"],
                           label=payload["label"])


def save_model(model, path):
    """Write a fitted model to a JSON file."""
    with open(path, "w") as fh:
        json.dump(model_to_payload(model), fh, indent=1)
        fh.write("\n")


def load_model(path):
    """Read a fitted model back from a JSON file."""
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataSchemaError(f"model file is not valid JSON: {exc}") from None
    return model_from_payload(payload)
