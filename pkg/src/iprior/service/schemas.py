"""Request and response bodies for the HTTP endpoints.

The configuration models mirror the INI grammar one section per model;
`RunConfigModel.model_dump()` is exactly the payload `realize_config`
accepts, so the CLI can parse INI text and ship the result unchanged.
"""

from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ColumnModel(_Strict):
    kind: str
    prefix: Optional[str] = None
    columns: Optional[List[str]] = None
    grid: Optional[List[float]] = None


class KernelModel(_Strict):
    family: str
    gamma: Optional[float] = None
    sigma: Optional[float] = None
    metric: Optional[str] = None
    centered: Optional[bool] = None


class DataSection(_Strict):
    response: Optional[str] = None
    columns: Dict[str, ColumnModel] = {}


class ModelSection(_Strict):
    kind: Optional[str] = None
    terms: Optional[List[List[str]]] = None
    expand: Optional[List[List[str]]] = None
    parameterization: Optional[str] = None
    label: Optional[str] = None
    label_column: Optional[str] = None


class FitSection(_Strict):
    max_iter: Optional[int] = None
    rel_tol: Optional[float] = None
    restarts: Optional[int] = None
    seed: Optional[int] = None
    psi_init: Optional[float] = None
    lam_init: Optional[List[float]] = None
    q_tol: Optional[float] = None
    max_sweeps: Optional[int] = None


class OutputSection(_Strict):
    dir: Optional[str] = None
    stem: Optional[str] = None


class RunConfigModel(_Strict):
    data: DataSection
    kernels: Dict[str, KernelModel] = {}
    model: ModelSection = ModelSection()
    fit: FitSection = FitSection()
    output: OutputSection = OutputSection()


class FitRequest(_Strict):
    config: RunConfigModel
    train_csv: str
    test_csv: Optional[str] = None


class FitResponse(BaseModel):
    label: str
    kind: str
    status: str
    loglik: float
    model: dict
    trace_csv: str
    report_csv: str
    fitted_csv: str
    scales_csv: str
    predictions_csv: Optional[str] = None


class PredictRequest(_Strict):
    model: dict
    data_csv: str
    config: Optional[RunConfigModel] = None


class PredictResponse(BaseModel):
    label: str
    kind: str
    n_rows: int
    predictions_csv: str


class CompareEntry(_Strict):
    config: RunConfigModel
    train_csv: Optional[str] = None


class CompareRequest(_Strict):
    entries: List[CompareEntry]
    train_csv: Optional[str] = None


class CompareResponse(BaseModel):
    best: str
    ranked: List[str]
    comparable_pairs: List[List[str]]
    report_csv: str


class GramRequest(_Strict):
    config: RunConfigModel
    data_csv: str
    scales: Optional[List[float]] = None


class GramResponse(BaseModel):
    n: int
    gram_csv: str


class HealthResponse(BaseModel):
    status: str
    version: str
