"""Core glue between realized configurations and fitted artifacts.

Everything here takes CSV text plus a RunConfig and returns plain data;
HTTP status codes and files are the callers' business.
"""

import dataclasses
import io

import numpy as np

from ..anova import assemble, build_term_cache, scale_vector
from ..applications.classification import build_classifier, classification_problem
from ..artifacts import (
    fitted_csv,
    gram_csv,
    predictions_csv,
    report_csv,
    scales_csv,
    trace_csv,
)
from ..config import anova_from_config, load_frame
from ..errors import ConfigError, DataSchemaError
from ..estimate import em_fit
from ..inference import build_problem
from ..kernels import build_gram_set
from ..serialize import model_from_payload, model_to_payload


@dataclasses.dataclass(frozen=True)
class FitResult:
    model: object
    kind: str
    payload: dict
    trace_csv: str
    report_csv: str
    fitted_csv: str
    scales_csv: str
    predictions_csv: str = None


def fit_model(config, train_csv):
    """Fit the model a configuration describes to CSV text."""
    frame = load_frame(config, io.StringIO(train_csv))
    if config.kind == "classification":
        problem = classification_problem(frame, config.label_column,
                                         config.kernels or None)
        return build_classifier(problem, config.fit, label=config.label)
    spec = anova_from_config(config)
    problem = build_problem(frame, config.kernels, spec)
    return em_fit(problem, config.fit, label=config.label)


def prediction_frame(config, data_csv):
    """Load a prediction CSV; returns (columns dict, actual or None).

    The response (or label) column is optional in prediction data: when
    present it comes back as `actual`, otherwise the frame loads without.
    """
    try:
        frame = load_frame(config, io.StringIO(data_csv), min_rows=0)
        if config.kind == "classification":
            actual = frame.column(config.label_column).values
            cols = {c.name: c for c in frame.columns if c.name != config.label_column}
            return cols, actual
        return {c.name: c for c in frame.columns}, frame.response
    except DataSchemaError:
        # the target column may simply be absent from prediction data
        schema = {name: cs for name, cs in config.schema.items()
                  if name != config.label_column}
        slim = dataclasses.replace(config, schema=schema, response=None)
        frame = load_frame(slim, io.StringIO(data_csv), min_rows=0,
                           with_response=False)
        return {c.name: c for c in frame.columns}, None


def _training_points(model, kind):
    if kind == "classifier":
        return {name: model.feature_entries[name].column
                for name in model.feature_names}
    return {name: model.problem.grams[name].column
            for name in model.spec.covariates}


def run_fit(config, train_csv, test_csv=None):
    """Fit plus all artifacts; optionally score a test CSV."""
    model = fit_model(config, train_csv)
    kind = "classifier" if config.kind == "classification" else "regression"
    train_points = _training_points(model, kind)
    if kind == "classifier":
        fitted = predictions_csv(model, train_points, actual=model.train_labels)
    else:
        fitted = fitted_csv(model)
    predictions = None
    if test_csv is not None:
        points, actual = prediction_frame(config, test_csv)
        predictions = predictions_csv(model, points, actual=actual)
    return FitResult(model=model,
                     kind=kind,
                     payload=model_to_payload(model),
                     trace_csv=trace_csv(model),
                     report_csv=report_csv([model]),
                     fitted_csv=fitted,
                     scales_csv=scales_csv(model),
                     predictions_csv=predictions)


def run_predict(payload, data_csv, config=None):
    """Score a CSV with a stored model payload.

    Without a config the CSV must use the canonical column layout the
    model was saved with (`name`, `name:1..d`, or `name:<grid>` headers).
    """
    model = model_from_payload(payload)
    if config is not None:
        points, actual = prediction_frame(config, data_csv)
    else:
        points, actual = _canonical_frame(model, data_csv)
    return model, predictions_csv(model, points, actual=actual), len(next(iter(points.values())).values)


def _canonical_frame(model, data_csv):
    from ..applications.classification import ClassifierModel
    from ..data import load_dataset

    if isinstance(model, ClassifierModel):
        schema = {name: model.feature_entries[name].column.kind
                  for name in model.feature_names}
        label, response = model.label_column, None
    else:
        schema = {name: model.problem.grams[name].column.kind
                  for name in model.spec.covariates}
        label, response = None, model.problem.response_name

    def read(schema, response):
        return load_dataset(io.StringIO(data_csv), schema,
                            response=response, min_rows=0)

    if label is not None:
        try:
            frame = read({**schema, label: "categorical"}, None)
            return ({c.name: c for c in frame.columns if c.name != label},
                    frame.column(label).values)
        except DataSchemaError:
            pass
    elif response is not None:
        try:
            frame = read(schema, response)
            return {c.name: c for c in frame.columns}, frame.response
        except DataSchemaError:
            pass
    frame = read(schema, None)
    return {c.name: c for c in frame.columns}, None


def run_compare(configs_and_csvs):
    """Fit each (config, train_csv) pair and rank the results.

    Returns (ranked labels, comparable label pairs, report CSV).
    """
    from ..applications.reports import compare_models

    models = [fit_model(config, csv_text) for config, csv_text in configs_and_csvs]
    table = compare_models(models)
    ranked = [rep.label for rep in table.reports]
    return ranked, list(table.comparable_pairs), report_csv(table.reports)


def run_gram(config, data_csv, scales=None):
    """Combined kernel matrix of a regression config on CSV data."""
    if config.kind != "regression":
        raise ConfigError("gram dumps need a regression configuration")
    frame = load_frame(config, io.StringIO(data_csv), with_response=False)
    spec = anova_from_config(config)
    grams = build_gram_set(frame, {name: config.kernels[name]
                                   for name in spec.covariates})
    cache = build_term_cache(spec, {name: grams[name].matrix
                                    for name in grams.names()})
    lam = np.ones(spec.n_scales) if scales is None else np.asarray(scales, dtype=float)
    lam = scale_vector(spec, lam).values
    H = assemble(spec, lam, cache)
    return H, gram_csv(H)
