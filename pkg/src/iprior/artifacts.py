"""CSV renderings of fits, predictions and comparisons.

Every renderer returns CSV text with a header row and repr-formatted
floats, so the numbers round-trip exactly and repeated runs produce
byte-identical artifacts.  Nothing here touches the filesystem.
"""

import csv
import io

import numpy as np

from .applications.classification import ClassifierModel, class_scores, predict_classes
from .applications.reports import model_report
from .data import _format
from .errors import ConfigError
from .inference import posterior_f, predictive, training_posterior


def _render(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def trace_csv(model):
    """EM trajectory of the winning restart, one row per iteration."""
    header = ["iteration", "loglik", "psi"] + [f"scale_{n}" for n in model.lam.names]
    rows = [[state.iteration, _format(state.loglik), _format(state.psi)]
            + [_format(v) for v in state.lam]
            for state in model.trace]
    return _render(header, rows)


def fitted_csv(model):
    """Training response next to the posterior mean and its spread."""
    post, _ = training_posterior(model)
    y = model.problem.y
    name = model.problem.response_name
    rows = [[_format(y[i]), _format(post.mean[i]), _format(post.sd[i]),
             _format(y[i] - post.mean[i])]
            for i in range(len(y))]
    return _render([name, "fit", "sd", "residual"], rows)


def predictions_csv(model, points, actual=None):
    """Posterior predictions at new points.

    Regressions report the mean of f, its sd, and the predictive sd (noise
    included); classifiers report the predicted label and per-class
    scores.  `actual` appends the observed responses when available.
    """
    if isinstance(model, ClassifierModel):
        pred = predict_classes(model, points)
        header = ["label"] + [f"score_{c}" for c in pred.classes]
        rows = [[pred.labels[i]] + [_format(v) for v in pred.scores[i]]
                for i in range(len(pred.labels))]
        if actual is not None:
            header.append("actual")
            rows = [row + [str(a)] for row, a in zip(rows, actual)]
        return _render(header, rows)

    post = posterior_f(model, points)
    wide = predictive(model, points)
    header = ["mean", "sd", "sd_pred"]
    rows = [[_format(post.mean[i]), _format(post.sd[i]), _format(wide.sd[i])]
            for i in range(len(post.mean))]
    if actual is not None:
        header.append("actual")
        rows = [row + [_format(a)] for row, a in zip(rows, actual)]
    return _render(header, rows)


def report_csv(items):
    """Ranked fit summaries; `items` holds models or prepared reports.

    Ranking is by BIC.  `comparable_with` lists the other labels sharing a
    parameter count, for which plain likelihood comparison is also valid.
    """
    from .applications.reports import ModelReport

    reports = [item if isinstance(item, ModelReport) else model_report(item)
               for item in items]
    if not reports:
        raise ConfigError("nothing to report")
    reports.sort(key=lambda rep: rep.bic)
    header = ["rank", "label", "loglik", "n_params", "n_rows", "aic", "bic",
              "status", "comparable_with"]
    rows = []
    for rank, rep in enumerate(reports, start=1):
        peers = ";".join(o.label for o in reports
                         if o is not rep and o.n_params == rep.n_params)
        rows.append([rank, rep.label, _format(rep.loglik), rep.n_params,
                     rep.n_rows, _format(rep.aic), _format(rep.bic),
                     rep.status, peers])
    return _render(header, rows)


def scales_csv(model):
    """Estimated scale coordinates and the error precision."""
    rows = [[name, _format(value)]
            for name, value in zip(model.lam.names, model.lam.values)]
    rows.append(["error_precision", _format(model.error.psi)])
    return _render(["parameter", "estimate"], rows)


def gram_csv(matrix):
    """Plain numeric matrix, no header row."""
    matrix = np.asarray(matrix, dtype=float)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in matrix:
        writer.writerow([_format(v) for v in row])
    return buf.getvalue()
