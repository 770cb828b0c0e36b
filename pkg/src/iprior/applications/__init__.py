"""Model builders on top of the core machinery: classification via
class-response expansion, multilevel and longitudinal regressions, and
information-criterion model comparison."""

from .classification import (
    ClassificationProblem,
    ClassifierModel,
    build_classifier,
    class_scores,
    classification_metrics,
    classification_problem,
    predict_classes,
)
from .longitudinal import LONGITUDINAL_MODELS, build_longitudinal, longitudinal_spec
from .multilevel import MULTILEVEL_MODELS, build_multilevel, extract_group_effects
from .reports import ModelReport, compare_models, model_report

__all__ = [
    "ClassificationProblem", "ClassifierModel", "build_classifier", "class_scores",
    "classification_metrics", "classification_problem", "predict_classes",
    "LONGITUDINAL_MODELS", "build_longitudinal", "longitudinal_spec",
    "MULTILEVEL_MODELS", "build_multilevel", "extract_group_effects",
    "ModelReport", "compare_models", "model_report",
]
