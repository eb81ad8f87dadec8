"""
Models package for DTO classes, configuration models and artifact IO.
"""

from .base import BaseDTO
from .configs import (
    ArchKind,
    ArchSpec,
    DataSpec,
    EnsembleSettings,
    EstimateSpec,
    ExperimentConfig,
    ImputationSpec,
    InfluenceConfig,
    MaskSpec,
    OracleSpec,
    SplitSpec,
    ToySpec,
    TrainConfig
)
from .gain import GainComponents, GainMatrix, export_gain_matrix, load_gain_matrix
from .params import LossValue, ModelDims, ModelParams, load_checkpoint, save_checkpoint
from .results import (
    AgreementCurve,
    AxiomReport,
    CGDiagnostics,
    DiscardReport,
    EnsembleReport,
    OracleResult,
    TimingTable
)
from .series import ImputationSet, MaskSet, SampleSet, SplitTag, TimeSeriesDataset
from .trajectory import TrainTrajectory, load_trajectory, save_trajectory
from .utils import TimestampUtils, nearest_rank

__all__ = [
    "BaseDTO",
    "ArchKind",
    "ArchSpec",
    "DataSpec",
    "EnsembleSettings",
    "EstimateSpec",
    "ExperimentConfig",
    "ImputationSpec",
    "InfluenceConfig",
    "MaskSpec",
    "OracleSpec",
    "SplitSpec",
    "ToySpec",
    "TrainConfig",
    "GainComponents",
    "GainMatrix",
    "export_gain_matrix",
    "load_gain_matrix",
    "LossValue",
    "ModelDims",
    "ModelParams",
    "load_checkpoint",
    "save_checkpoint",
    "AgreementCurve",
    "AxiomReport",
    "CGDiagnostics",
    "DiscardReport",
    "EnsembleReport",
    "OracleResult",
    "TimingTable",
    "ImputationSet",
    "MaskSet",
    "SampleSet",
    "SplitTag",
    "TimeSeriesDataset",
    "TrainTrajectory",
    "load_trajectory",
    "save_trajectory",
    "TimestampUtils",
    "nearest_rank"
]
