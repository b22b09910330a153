"""Age prediction from the knowledge-base types of followed popular accounts."""

__version__ = "0.1.0"

from .domain import (  # noqa: E402
    Dataset,
    EvalReport,
    ModelKind,
    ModelSpec,
    PopularUser,
    ScalingState,
    TypeVocabulary,
    UserRecord,
)

__all__ = [
    "Dataset",
    "EvalReport",
    "ModelKind",
    "ModelSpec",
    "PopularUser",
    "ScalingState",
    "TypeVocabulary",
    "UserRecord",
    "__version__",
]
