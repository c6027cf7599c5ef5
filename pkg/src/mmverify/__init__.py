"""Two-stage misinformation checking for image-text posts.

A first-stage model verdict is kept unless the model asks for outside
evidence, in which case web and reverse-image results are gathered,
distilled and handed back for a six-way refined judgment.
"""

from .config import PipelineConfig, load_config
from .core import (
    BinaryLabel,
    DirectResult,
    EvidenceTriplet,
    FinalVerdict,
    FineCategory,
    ImageRef,
    PostRecord,
    PromptVariant,
    QuerySet,
    SourceDataset,
    VisualEvidence,
    WebDocument,
    map_category,
    validate_post,
)
from .evaluation import RunReport, compare_runs, compute_metrics, load_dataset
from .gateway import Gateway, ModelRequest, ModelResponse
from .pipeline import Pipeline, run_post

__version__ = "0.1.0"

__all__ = [
    "BinaryLabel",
    "DirectResult",
    "EvidenceTriplet",
    "FinalVerdict",
    "FineCategory",
    "Gateway",
    "ImageRef",
    "ModelRequest",
    "ModelResponse",
    "Pipeline",
    "PipelineConfig",
    "PostRecord",
    "PromptVariant",
    "QuerySet",
    "RunReport",
    "SourceDataset",
    "VisualEvidence",
    "WebDocument",
    "compare_runs",
    "compute_metrics",
    "load_config",
    "load_dataset",
    "map_category",
    "run_post",
    "validate_post",
]
