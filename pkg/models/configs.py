"""
Configuration models for experiments, training and estimation.
"""
import re
from enum import Enum
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .utils import TimestampUtils


DEFAULT_RUN_LENGTHS = (2, 4, 6, 12, 24, 48, 96, 120)
ESTIMATOR_PATTERN = re.compile(r"^(seq-sim|seg-[1-9][0-9]*|trajectory|influence)$")


class ArchKind(str, Enum):
    """Available forecaster architectures"""
    MLP = "mlp"
    DLINEAR = "dlinear"


class ArchSpec(BaseModel):
    """Architecture descriptor shared by checkpoints, training and estimators"""
    model_config = ConfigDict(frozen=True)

    kind: ArchKind = Field(ArchKind.MLP, description="Forecaster family", examples=["mlp"])
    layers: int = Field(3, ge=1, description="Number of linear layers of the MLP")
    hidden: int = Field(128, gt=0, description="Hidden width of the MLP")
    bias: bool = Field(True, description="Whether MLP layers carry a bias vector")
    kernel: int = Field(25, ge=1, description="DLinear moving-average kernel")
    output_projection: Optional[bool] = Field(
        None,
        description="DLinear channel projection; defaults to on for multivariate input",
    )

    @field_validator("kernel")
    @classmethod
    def _odd_kernel(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError(f"moving-average kernel must be odd, got {value}")
        return value

    @classmethod
    def mlp(cls, layers: int = 3, hidden: int = 128, bias: bool = True) -> "ArchSpec":
        return cls(kind=ArchKind.MLP, layers=layers, hidden=hidden, bias=bias)

    @classmethod
    def linear(cls, bias: bool = True) -> "ArchSpec":
        """One-layer MLP, i.e. a plain affine (or linear) map."""
        return cls(kind=ArchKind.MLP, layers=1, bias=bias)

    @classmethod
    def dlinear(cls, kernel: int = 25, output_projection: Optional[bool] = None) -> "ArchSpec":
        return cls(kind=ArchKind.DLINEAR, kernel=kernel, output_projection=output_projection)

    def uses_projection(self, n_features: int) -> bool:
        """
        Whether a DLinear model mixes its channels with an output projection.

        Raises:
            ValueError: projection explicitly disabled for multivariate input
        """
        if self.kind != ArchKind.DLINEAR:
            return False
        if self.output_projection is None:
            return n_features > 1
        if not self.output_projection and n_features > 1:
            raise ValueError("DLinear with more than one input feature requires the output projection")
        return self.output_projection

    def layer_sizes(self, dims: Tuple[int, int, int]) -> List[int]:
        n_features, input_len, output_len = dims
        return [n_features * input_len] + [self.hidden] * (self.layers - 1) + [output_len]

    def param_count(self, dims: Tuple[int, int, int]) -> int:
        """Exact parameter count P for the given (D, L1, L2)."""
        n_features, input_len, output_len = dims
        if self.kind == ArchKind.MLP:
            sizes = self.layer_sizes(dims)
            return sum(o * i + (o if self.bias else 0) for i, o in zip(sizes[:-1], sizes[1:]))
        count = 2 * (output_len * input_len + output_len)
        if self.uses_projection(n_features):
            count += n_features + 1
        return count


class MaskSpec(BaseModel):
    """Missing-value simulation settings"""
    missing_rate: float = Field(0.40, gt=0.0, lt=1.0, description="Requested missing fraction")
    run_lengths: Tuple[int, ...] = Field(DEFAULT_RUN_LENGTHS, description="Admissible gap lengths")
    seed: int = Field(0, description="RNG seed for the mask stream")

    @field_validator("run_lengths")
    @classmethod
    def _positive_runs(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if not value:
            raise ValueError("run_lengths must be nonempty")
        if any(length <= 0 for length in value):
            raise ValueError(f"run_lengths must be positive, got {list(value)}")
        return tuple(sorted(set(int(length) for length in value)))


class TrainConfig(BaseModel):
    """Plain SGD with early stopping on validation MSE"""
    learning_rate: float = Field(0.1, gt=0.0)
    max_epochs: int = Field(300, gt=0)
    patience: int = Field(10, gt=0)
    batch_size: int = Field(32, gt=0)
    seed: int = Field(0, description="Seed for the init and shuffle streams")
    shuffle: bool = Field(True, description="Reshuffle samples every epoch")

    @model_validator(mode="after")
    def _patience_bound(self) -> "TrainConfig":
        if self.patience > self.max_epochs:
            raise ValueError(f"patience ({self.patience}) exceeds max_epochs ({self.max_epochs})")
        return self


class InfluenceConfig(BaseModel):
    """Damped Hessian solve settings"""
    damping: float = Field(0.01, ge=0.0, description="Added to the Hessian diagonal")
    cg_max_iters: int = Field(200, gt=0)
    cg_tolerance: float = Field(1e-4, gt=0.0, description="Bound on ||(H + damping I) v - b||")
    discard_percent: float = Field(10.0, gt=0.0, lt=100.0)


class DataSpec(BaseModel):
    path: str = "data/synthetic_load.csv"
    target_index: int = Field(0, ge=0, description="Target column among the feature columns")
    use_covariates: bool = Field(False, description="Feed every feature column as model input")
    input_len: int = Field(24, ge=1)
    output_len: int = Field(24, ge=1)
    stride: int = Field(1, ge=1)
    calendar_period: int = Field(24, ge=1, description="Period used for integer timestamps")


class SplitSpec(BaseModel):
    """Boundaries: train < train_end <= validation < val_end <= test"""
    train_end: Union[int, str]
    val_end: Union[int, str]

    @model_validator(mode="after")
    def _ordered(self) -> "SplitSpec":
        if type(self.train_end) is not type(self.val_end):
            raise ValueError("split boundaries must both be row indices or both be timestamps")
        if isinstance(self.train_end, str):
            ordered = TimestampUtils.parse_boundary(self.train_end) < TimestampUtils.parse_boundary(self.val_end)
        else:
            ordered = self.train_end < self.val_end
        if not ordered:
            raise ValueError(f"split boundaries out of order: {self.train_end} !< {self.val_end}")
        return self


class ImputationSpec(BaseModel):
    baseline: Literal["mean", "linear"] = "mean"
    candidate: str = Field("linear", description="mean | linear | external:<path>")
    mask_validation: bool = Field(True, description="Mask and impute the validation split too")

    @field_validator("candidate")
    @classmethod
    def _known_source(cls, value: str) -> str:
        if value in ("mean", "linear") or (value.startswith("external:") and len(value) > 9):
            return value
        raise ValueError(f"unknown imputation source '{value}'")


class EstimateSpec(BaseModel):
    estimators: List[str] = ["seq-sim", "seg-1", "seg-4", "trajectory", "influence"]
    eval_splits: List[Literal["validation", "test"]] = ["validation", "test"]
    chunk_size: int = Field(16, gt=0)
    axiom_samples: int = Field(16, ge=2)

    @field_validator("estimators")
    @classmethod
    def _known_estimators(cls, value: List[str]) -> List[str]:
        unknown = [name for name in value if not ESTIMATOR_PATTERN.match(name)]
        if unknown:
            raise ValueError(f"unknown estimators: {unknown}")
        return value


class OracleSpec(BaseModel):
    indices: Optional[List[int]] = Field(None, description="Explicit training indices to retrain")
    limit: int = Field(50, gt=0, description="Evenly spaced indices when none are given")
    timestep_level: bool = False
    eval_split: Literal["validation", "test"] = "test"
    percents: List[float] = [float(x) for x in range(10, 101, 10)]


class EnsembleSettings(BaseModel):
    replace_percent: float = Field(10.0, gt=0.0, le=100.0)
    estimator: str = "seq-sim"
    discard: bool = Field(True, description="Also run the influence discard-and-retrain workflow")


class ToySpec(BaseModel):
    noisy_keep: int = Field(4, ge=2)
    clean_keep: int = Field(6, ge=2)
    noise_mean: float = 0.05
    noise_std: float = Field(0.3, ge=0.0)
    seeds: List[int] = [0, 1, 2]


class ExperimentConfig(BaseModel):
    """Complete description of one experiment; serialized as JSON under config/"""
    name: str = "default"
    seed: int = 0
    output_dir: Optional[str] = None
    threads: int = Field(1, ge=1)
    data: DataSpec = DataSpec()
    splits: SplitSpec
    mask: MaskSpec = MaskSpec()
    imputation: ImputationSpec = ImputationSpec()
    arch: ArchSpec = ArchSpec()
    train: TrainConfig = TrainConfig()
    estimate: EstimateSpec = EstimateSpec()
    influence: InfluenceConfig = InfluenceConfig()
    oracle: OracleSpec = OracleSpec()
    ensemble: EnsembleSettings = EnsembleSettings()
    toy: ToySpec = ToySpec()

