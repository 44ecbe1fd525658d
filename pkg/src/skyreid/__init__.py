"""Three-stream cross-platform person re-identification.

A global appearance stream, an elevated-view head-attention stream and an
attribute-guided distance decomposition stream, trained jointly and evaluated
under cross-platform retrieval protocols.
"""

from .adh import explain_pair, write_explanation
from .config import RunConfig
from .data import ParsedDataset, ProtocolSpec, parse_dataset
from .fixture import generate_fixture
from .model import ReIDModel, build_model
from .protocol import emit_report, run_all_protocols, run_protocol
from .sampler import PKSampler
from .schema import AttributeGroup, AttributeSchema, SchemaError, load_schema
from .train import load_checkpoint, run_ablation, run_training, save_checkpoint
from .types import (
    AffineParams,
    AttributeVector,
    CameraPlatform,
    ConfigurationError,
    DistanceDecomposition,
    FeatureMap,
    FeatureVector,
    ImageRecord,
    ParseError,
    ProtocolResult,
    validate_attribute_vector,
)

__version__ = "0.1.0"

__all__ = [
    "AffineParams",
    "AttributeGroup",
    "AttributeSchema",
    "AttributeVector",
    "CameraPlatform",
    "ConfigurationError",
    "DistanceDecomposition",
    "FeatureMap",
    "FeatureVector",
    "ImageRecord",
    "PKSampler",
    "ParseError",
    "ParsedDataset",
    "ProtocolResult",
    "ProtocolSpec",
    "ReIDModel",
    "RunConfig",
    "SchemaError",
    "build_model",
    "emit_report",
    "explain_pair",
    "generate_fixture",
    "load_checkpoint",
    "load_schema",
    "parse_dataset",
    "run_ablation",
    "run_all_protocols",
    "run_protocol",
    "run_training",
    "save_checkpoint",
    "validate_attribute_vector",
    "write_explanation",
    "__version__",
]
