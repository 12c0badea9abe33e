"""Preference-guided design generation: choice prediction, popularity labels
and conditional image generators."""

__version__ = "0.1.0"

from .data import (ChoiceRecord, ConsumerProfile, DesignTemplate, Exposure, PopularityLabelSet,  # noqa: E402
                   Source)
from .embeddings import DesignEmbedder, FaceEmbedder  # noqa: E402
from .exceptions import (ConfigError, DataIntegrityError, DegenerateVicinityError, DependencyError,  # noqa: E402
                         DimensionMismatchError, EmptyDatasetError, LabelRangeError, PrefgenError,
                         SingleClassError)
from .labeling import BinningConfig, PopularityLabeler  # noqa: E402
from .predictor import ChoicePredictor, PredictorMetrics  # noqa: E402

__all__ = [
    "BinningConfig", "ChoicePredictor", "ChoiceRecord", "ConfigError", "ConsumerProfile", "DataIntegrityError",
    "DegenerateVicinityError", "DependencyError", "DesignEmbedder", "DesignTemplate", "DimensionMismatchError",
    "EmptyDatasetError", "Exposure", "FaceEmbedder", "LabelRangeError", "PopularityLabelSet", "PopularityLabeler",
    "PredictorMetrics", "PrefgenError", "SingleClassError", "Source", "__version__",
]
