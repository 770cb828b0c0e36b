"""FastAPI application exposing fit, predict, compare and gram.

Every endpoint takes and returns JSON; CSV content travels inside string
fields.  Package errors map onto stable machine-readable codes:
CONFIG_ERROR and SCHEMA_ERROR arrive as 422, DATA_MISMATCH as 409, and
estimation failures as 500 FIT_ERROR.
"""

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from ..config import realize_config
from ..errors import (
    ConfigError,
    DataMismatchError,
    DataSchemaError,
    FitError,
    NumericalFailure,
)
from . import runner
from .schemas import (
    CompareRequest,
    CompareResponse,
    FitRequest,
    FitResponse,
    GramRequest,
    GramResponse,
    HealthResponse,
    PredictRequest,
    PredictResponse,
)

_ERROR_MAP = (
    (ConfigError, 422, "CONFIG_ERROR"),
    (DataMismatchError, 409, "DATA_MISMATCH"),
    (DataSchemaError, 422, "SCHEMA_ERROR"),
    (FitError, 500, "FIT_ERROR"),
    (NumericalFailure, 500, "FIT_ERROR"),
)


def create_app():
    app = FastAPI(title="iprior", version=__version__)

    for exc_type, status, code in _ERROR_MAP:
        def handler(request, exc, status=status, code=code):
            return JSONResponse(status_code=status,
                                content={"detail": {"code": code,
                                                    "message": str(exc)}})
        app.add_exception_handler(exc_type, handler)

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/fit", response_model=FitResponse)
    def fit(req: FitRequest):
        config = realize_config(req.config.model_dump())
        result = runner.run_fit(config, req.train_csv, req.test_csv)
        return FitResponse(label=result.model.label,
                           kind=result.kind,
                           status=result.model.status,
                           loglik=result.model.loglik,
                           model=result.payload,
                           trace_csv=result.trace_csv,
                           report_csv=result.report_csv,
                           fitted_csv=result.fitted_csv,
                           scales_csv=result.scales_csv,
                           predictions_csv=result.predictions_csv)

    @app.post("/predict", response_model=PredictResponse)
    def predict(req: PredictRequest):
        from ..applications.classification import ClassifierModel

        config = None if req.config is None else realize_config(req.config.model_dump())
        model, csv_text, n_rows = runner.run_predict(req.model, req.data_csv, config)
        kind = "classifier" if isinstance(model, ClassifierModel) else "regression"
        return PredictResponse(label=model.label, kind=kind,
                               n_rows=n_rows, predictions_csv=csv_text)

    @app.post("/compare", response_model=CompareResponse)
    def compare(req: CompareRequest):
        if not req.entries:
            raise ConfigError("compare needs at least one entry")
        pairs = []
        for i, entry in enumerate(req.entries):
            train = entry.train_csv or req.train_csv
            if train is None:
                raise ConfigError(f"entry {i} has no training data and no "
                                  "shared train_csv was given")
            pairs.append((realize_config(entry.config.model_dump()), train))
        ranked, comparable, csv_text = runner.run_compare(pairs)
        return CompareResponse(best=ranked[0], ranked=ranked,
                               comparable_pairs=[list(p) for p in comparable],
                               report_csv=csv_text)

    @app.post("/gram", response_model=GramResponse)
    def gram(req: GramRequest):
        config = realize_config(req.config.model_dump())
        H, csv_text = runner.run_gram(config, req.data_csv, req.scales)
        return GramResponse(n=H.shape[0], gram_csv=csv_text)

    return app
