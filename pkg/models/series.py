"""
Series, windowed sample sets, masks and imputations.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .base import BaseDTO


class SplitTag(str, Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


@dataclass(eq=False)
class TimeSeriesDataset(BaseDTO):
    """
    Raw multivariate series.

    Attributes:
        values: T_total x D matrix of observations
        timestamps: strictly increasing timestamps (datetime64 or int64)
        feature_names: D column labels
        target_index: column forecast by the models
    """

    values: np.ndarray
    timestamps: np.ndarray
    feature_names: List[str]
    target_index: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        self.timestamps = np.asarray(self.timestamps)
        if self.values.ndim != 2 or self.values.shape[1] < 1:
            raise ValueError(f"values must be a T x D matrix with D >= 1, got shape {self.values.shape}")
        if len(self.timestamps) != self.values.shape[0]:
            raise ValueError(f"{len(self.timestamps)} timestamps for {self.values.shape[0]} rows")
        if len(self.feature_names) != self.values.shape[1]:
            raise ValueError(f"{len(self.feature_names)} feature names for {self.values.shape[1]} columns")
        if not 0 <= self.target_index < self.values.shape[1]:
            raise ValueError(f"target_index {self.target_index} out of range for D={self.values.shape[1]}")
        if len(self.timestamps) > 1 and not np.all(self.timestamps[1:] > self.timestamps[:-1]):
            raise ValueError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("series contains non-finite values")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    @property
    def target(self) -> np.ndarray:
        return self.values[:, self.target_index]

    def slice(self, start: int, stop: int) -> 'TimeSeriesDataset':
        return replace(self, values=self.values[start:stop].copy(), timestamps=self.timestamps[start:stop].copy())

    def with_target(self, target: np.ndarray) -> 'TimeSeriesDataset':
        """Copy with the target column replaced."""
        values = self.values.copy()
        values[:, self.target_index] = target
        return replace(self, values=values)

    def only_target(self) -> 'TimeSeriesDataset':
        """Univariate copy keeping just the target column."""
        return TimeSeriesDataset(
            values=self.values[:, [self.target_index]].copy(),
            timestamps=self.timestamps.copy(),
            feature_names=[self.feature_names[self.target_index]],
            target_index=0,
        )


@dataclass(eq=False)
class SampleSet(BaseDTO):
    """
    Windowed supervised pairs (X_i, y_i) of one split.

    Attributes:
        inputs: n x D x L1 input windows
        targets: n x L2 target windows (ground truth of the target column)
        split_tag: train, validation or test
        stride: window stride on the source series
        series: the split's contiguous source series, when windows were cut from one
    """

    inputs: np.ndarray
    targets: np.ndarray
    split_tag: SplitTag = SplitTag.TRAIN
    stride: int = 1
    series: Optional[TimeSeriesDataset] = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        self.split_tag = SplitTag(self.split_tag)
        if self.inputs.ndim != 3 or self.targets.ndim != 2:
            raise ValueError(f"inputs must be n x D x L1 and targets n x L2, got {self.inputs.shape} and {self.targets.shape}")
        if self.inputs.shape[0] != self.targets.shape[0] or self.inputs.shape[0] < 1:
            raise ValueError(f"sample counts disagree or are empty: {self.inputs.shape[0]} vs {self.targets.shape[0]}")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_features(self) -> int:
        return self.inputs.shape[1]

    @property
    def input_len(self) -> int:
        return self.inputs.shape[2]

    @property
    def output_len(self) -> int:
        return self.targets.shape[1]

    @property
    def dims(self):
        from .params import ModelDims
        return ModelDims(self.n_features, self.input_len, self.output_len)

    @property
    def covered_len(self) -> int:
        """Length of the source series the windows span."""
        return (self.n - 1) * self.stride + self.input_len + self.output_len

    def target_positions(self) -> np.ndarray:
        """n x L2 indices of every target entry on the source series."""
        starts = np.arange(self.n) * self.stride + self.input_len
        return starts[:, None] + np.arange(self.output_len)[None, :]

    def cut_targets(self, series: np.ndarray) -> np.ndarray:
        """Window a series of length covered_len exactly like the targets."""
        series = np.asarray(series)
        return series[self.target_positions()]

    def cut_inputs(self, values: np.ndarray) -> np.ndarray:
        """Window a T x D matrix exactly like the inputs."""
        views = sliding_window_view(values, self.input_len, axis=0)
        return np.ascontiguousarray(views[: (self.n - 1) * self.stride + 1: self.stride])

    def with_inputs(self, inputs: np.ndarray) -> 'SampleSet':
        return replace(self, inputs=inputs)

    def with_targets(self, targets: np.ndarray) -> 'SampleSet':
        return replace(self, targets=targets)

    def subset(self, indices: np.ndarray) -> 'SampleSet':
        """Samples at the given indices; the result no longer maps onto a series."""
        indices = np.asarray(indices, dtype=np.int64)
        return SampleSet(self.inputs[indices], self.targets[indices], self.split_tag, self.stride, None)


@dataclass(eq=False)
class MaskSet(BaseDTO):
    """
    Missing-value masks aligned with a SampleSet's targets.

    Attributes:
        masks: n x L2 booleans, True where the label is missing and imputed
        realized_rate: achieved missing fraction on the source series
        series_mask: mask over the contiguous source series
        requested_rate: rate the mask was drawn for
    """

    masks: np.ndarray
    realized_rate: float
    series_mask: Optional[np.ndarray] = None
    requested_rate: Optional[float] = None

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=bool)
        if self.series_mask is not None:
            self.series_mask = np.asarray(self.series_mask, dtype=bool)

    @property
    def n_masked(self) -> int:
        return int(self.masks.sum())

    @classmethod
    def from_series(cls, series_mask: np.ndarray, samples: SampleSet,
                    requested_rate: Optional[float] = None) -> 'MaskSet':
        """Cut a series-level mask into windows aligned with the sample targets."""
        series_mask = np.asarray(series_mask, dtype=bool)
        if len(series_mask) != samples.covered_len:
            raise ValueError(f"mask length {len(series_mask)} does not cover {samples.covered_len} series steps")
        return cls(
            masks=samples.cut_targets(series_mask),
            realized_rate=float(series_mask.mean()),
            series_mask=series_mask,
            requested_rate=requested_rate,
        )

    @classmethod
    def empty(cls, samples: SampleSet) -> 'MaskSet':
        return cls.from_series(np.zeros(samples.covered_len, dtype=bool), samples, 0.0)


@dataclass(eq=False)
class ImputationSet(BaseDTO):
    """
    Imputed labels for one split.

    Attributes:
        labels: n x L2 imputed target windows
        source_name: mean | linear | external:<name> | spliced provenance
        mask_ref: the MaskSet these labels fill
        series: imputed target series, when the imputation was done on the series
    """

    labels: np.ndarray
    source_name: str
    mask_ref: MaskSet
    series: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.labels.shape != self.mask_ref.masks.shape:
            raise ValueError(f"labels {self.labels.shape} do not match mask {self.mask_ref.masks.shape}")
        if not np.all(np.isfinite(self.labels)):
            raise ValueError(f"imputation '{self.source_name}' contains non-finite labels")

    @property
    def masked(self) -> np.ndarray:
        return self.mask_ref.masks

    def check_alignment(self, samples: SampleSet) -> None:
        """
        Raises:
            ValueError: labels differ from the ground truth at an observed entry
        """
        if self.labels.shape != samples.targets.shape:
            raise ValueError(f"labels {self.labels.shape} misaligned with targets {samples.targets.shape}")
        observed = ~self.masked
        if not np.array_equal(self.labels[observed], samples.targets[observed]):
            raise ValueError(f"imputation '{self.source_name}' alters observed labels")

    def with_labels(self, labels: np.ndarray, source_name: str) -> 'ImputationSet':
        return ImputationSet(labels=labels, source_name=source_name, mask_ref=self.mask_ref)
