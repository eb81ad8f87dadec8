"""
Series ingestion, splitting, windowing, mask simulation and imputation.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import lfilter
from sklearn.preprocessing import StandardScaler

from core.errors import DataError
from models.base import BaseDTO
from models.configs import MaskSpec
from models.series import ImputationSet, MaskSet, SampleSet, SplitTag, TimeSeriesDataset
from models.utils import TimestampUtils

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def load_series(path: PathLike, target_index: int = 0) -> TimeSeriesDataset:
    """
    Read a delimited table: header row, timestamp in column 0, real features after.

    Args:
        path: CSV file
        target_index: target column among the feature columns

    Raises:
        DataError: missing file, empty table, unparseable cell or bad timestamps
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise DataError(f"dataset file is empty: {path}") from None
    if frame.empty or frame.shape[1] < 2:
        raise DataError(f"dataset {path} needs a timestamp column, at least one feature and one row")

    features = frame.iloc[:, 1:].apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))
    values = features.to_numpy(dtype=np.float64)
    bad = np.argwhere(~np.isfinite(values))
    if bad.size:
        row, col = bad[0]
        raise DataError(f"non-finite value at ({row}, {col + 1}) in {path}")

    try:
        timestamps = TimestampUtils.parse_column(frame.iloc[:, 0])
    except (ValueError, TypeError) as e:
        raise DataError(f"unparseable timestamp column in {path}: {e}") from None
    if len(timestamps) > 1 and not np.all(timestamps[1:] > timestamps[:-1]):
        raise DataError(f"timestamps in {path} are not strictly increasing")
    if not 0 <= target_index < values.shape[1]:
        raise DataError(f"target_index {target_index} out of range for {values.shape[1]} feature columns")

    logger.info(f"Loaded {path}: {values.shape[0]} rows x {values.shape[1]} features")
    return TimeSeriesDataset(values=values, timestamps=timestamps,
                             feature_names=[str(c) for c in frame.columns[1:]], target_index=target_index)


def split_by_boundaries(ds: TimeSeriesDataset, train_end: Union[int, str],
                        val_end: Union[int, str]) -> Dict[SplitTag, TimeSeriesDataset]:
    """
    Cut train = [start, train_end), validation = [train_end, val_end), test = [val_end, end].

    Boundaries are row indices or timestamps.

    Raises:
        DataError: a split would be empty
    """
    bounds = []
    for boundary in (train_end, val_end):
        parsed = TimestampUtils.parse_boundary(boundary)
        if isinstance(parsed, int):
            bounds.append(parsed)
        else:
            if not TimestampUtils.is_datetime(ds.timestamps):
                raise DataError(f"timestamp boundary {boundary!r} for a series indexed by integers")
            bounds.append(int(np.searchsorted(ds.timestamps, parsed, side="left")))
    cuts = [0] + bounds + [ds.n_rows]
    splits = {}
    for tag, start, stop in zip(SplitTag, cuts[:-1], cuts[1:]):
        if stop <= start:
            raise DataError(f"{tag.value} split is empty (rows {start}:{stop})")
        splits[tag] = ds.slice(start, stop)
    logger.info("Split sizes: " + ", ".join(f"{tag.value}={part.n_rows}" for tag, part in splits.items()))
    return splits


def normalize(train: TimeSeriesDataset, *others: TimeSeriesDataset
              ) -> Tuple[StandardScaler, List[TimeSeriesDataset]]:
    """Z-score every feature with statistics of the training split."""
    scaler = StandardScaler().fit(train.values)
    scaled = [part.__class__(values=scaler.transform(part.values), timestamps=part.timestamps,
                             feature_names=part.feature_names, target_index=part.target_index)
              for part in (train,) + others]
    return scaler, scaled


def window(ds: TimeSeriesDataset, input_len: int, output_len: int, stride: int = 1,
           split_tag: Union[SplitTag, str] = SplitTag.TRAIN) -> SampleSet:
    """
    Slide (L1 input, L2 target) windows over the series.

    Raises:
        ValueError: non-positive lengths
        DataError: series shorter than L1 + L2
    """
    if min(input_len, output_len, stride) < 1:
        raise ValueError(f"L1, L2 and stride must be >= 1, got {input_len}, {output_len}, {stride}")
    if ds.n_rows < input_len + output_len:
        raise DataError(f"series of length {ds.n_rows} is too short for L1 + L2 = {input_len + output_len}")
    n = (ds.n_rows - input_len - output_len) // stride + 1
    inputs = sliding_window_view(ds.values, input_len, axis=0)[: (n - 1) * stride + 1: stride]
    target_windows = sliding_window_view(ds.target[input_len:], output_len)[: (n - 1) * stride + 1: stride]
    return SampleSet(inputs=np.ascontiguousarray(inputs), targets=np.ascontiguousarray(target_windows),
                     split_tag=SplitTag(split_tag), stride=stride, series=ds.slice(0, (n - 1) * stride + input_len + output_len))


def draw_series_mask(length: int, spec: MaskSpec) -> np.ndarray:
    """
    Place non-overlapping missing runs until ceil(rate * length) steps are masked.

    Run lengths are drawn uniformly from spec.run_lengths; the final run is
    clipped to the remaining count. When no free slot fits the drawn length,
    the smallest admissible length is tried, then the largest free gap is used.

    Raises:
        DataError: every run length exceeds the series
    """
    runs = np.asarray(spec.run_lengths, dtype=np.int64)
    if runs.min() > length:
        raise DataError(f"missing rate unreachable: shortest run {runs.min()} exceeds series length {length}")
    rng = np.random.default_rng(spec.seed)
    target = int(np.ceil(spec.missing_rate * length))
    mask = np.zeros(length, dtype=bool)
    missing = 0
    while missing < target:
        remaining = target - missing
        for run in (int(rng.choice(runs)), int(runs.min())):
            run = min(run, remaining)
            free = np.flatnonzero(~sliding_window_view(mask, run).any(axis=1))
            if free.size:
                start = int(free[rng.integers(free.size)])
                break
        else:
            start, run = _largest_free_gap(mask)
            run = min(run, remaining)
        mask[start:start + run] = True
        missing += run
    return mask


def _largest_free_gap(mask: np.ndarray) -> Tuple[int, int]:
    padded = np.concatenate([[True], mask, [True]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    starts, stops = edges[0::2], edges[1::2]
    widest = int(np.argmax(stops - starts))
    return int(starts[widest]), int(stops[widest] - starts[widest])


def generate_mask(ss: SampleSet, spec: MaskSpec) -> MaskSet:
    """Mask the contiguous series the samples were cut from, then window the mask."""
    series_mask = draw_series_mask(ss.covered_len, spec)
    masks = MaskSet.from_series(series_mask, ss, requested_rate=spec.missing_rate)
    logger.info(f"Mask for {ss.split_tag.value}: requested {spec.missing_rate:.3f}, "
                f"realized {masks.realized_rate:.3f} over {ss.covered_len} steps")
    return masks


@dataclass(eq=False)
class CalendarProfile(BaseDTO):
    """Mean of observed training values per position-within-day."""

    positions: np.ndarray
    means: np.ndarray
    period: int = 24

    def lookup(self, positions: np.ndarray) -> np.ndarray:
        """
        Raises:
            DataError: a position has no observed training value
        """
        slots = np.searchsorted(self.positions, positions)
        slots = np.clip(slots, 0, len(self.positions) - 1)
        known = self.positions[slots] == positions
        if not np.all(known):
            raise DataError(f"calendar position {int(positions[~known][0])} has no observed training values")
        return self.means[slots]


def fit_calendar_profile(train: SampleSet, mask: MaskSet, period: int = 24) -> CalendarProfile:
    """Calendar-position means from the observed entries of the training series."""
    series, observed = _series_and_observed(train, mask)
    positions = TimestampUtils.calendar_positions(series.timestamps, period)[observed]
    keys, inverse = np.unique(positions, return_inverse=True)
    sums = np.bincount(inverse, weights=series.target[observed], minlength=len(keys))
    counts = np.bincount(inverse, minlength=len(keys))
    return CalendarProfile(positions=keys, means=sums / counts, period=period)


def _series_and_observed(ss: SampleSet, mask: MaskSet) -> Tuple[TimeSeriesDataset, np.ndarray]:
    if ss.series is None or mask.series_mask is None:
        raise DataError("imputation needs the source series and its series-level mask")
    if len(mask.series_mask) != ss.series.n_rows:
        raise DataError(f"mask covers {len(mask.series_mask)} steps, series has {ss.series.n_rows}")
    return ss.series, ~mask.series_mask


def impute(ss: SampleSet, mask: MaskSet, method: str,
           profile: Optional[CalendarProfile] = None, period: int = 24) -> ImputationSet:
    """
    Fill masked target entries on the source series, then window the labels.

    Args:
        ss: samples with their source series
        mask: mask over that series
        method: "mean" (calendar-position mean of the training split) or "linear"
        profile: training calendar profile; fitted from ss when omitted
        period: calendar period for integer timestamps

    Raises:
        ValueError: unknown method
        DataError: nothing observed, or a calendar position without observations
    """
    series, observed = _series_and_observed(ss, mask)
    if not observed.any():
        raise DataError("every series step is masked; nothing to impute from")
    filled = series.target.copy()
    missing = ~observed
    if method == "mean":
        profile = profile or fit_calendar_profile(ss, mask, period)
        positions = TimestampUtils.calendar_positions(series.timestamps, profile.period)
        filled[missing] = profile.lookup(positions[missing])
    elif method == "linear":
        steps = np.arange(series.n_rows)
        filled[missing] = np.interp(steps[missing], steps[observed], series.target[observed])
    else:
        raise ValueError(f"unknown imputation method '{method}', expected mean or linear")
    return ImputationSet(labels=ss.cut_targets(filled), source_name=method, mask_ref=mask, series=filled)


def impute_inputs(ss: SampleSet, imputation: ImputationSet) -> SampleSet:
    """Rewrite the target channel of the inputs with an imputed series."""
    if imputation.series is None or ss.series is None:
        raise DataError(f"imputation '{imputation.source_name}' has no series to rewrite inputs with")
    values = ss.series.with_target(imputation.series).values
    return ss.with_inputs(ss.cut_inputs(values))


def load_external_imputation(path: PathLike, ss: SampleSet, mask: MaskSet, source_name: Optional[str] = None,
                             scaler: Optional[StandardScaler] = None) -> ImputationSet:
    """
    Ingest a (timestamp, value) file produced by an external imputer.

    The file holds either one row per masked step or one row per series step;
    observed steps always keep the ground truth. With `scaler` (the one fitted by
    `normalize`) the file is read as physical units and mapped onto the
    normalized target column of `ss`.

    Raises:
        DataError: missing file, misaligned timestamps or non-finite values
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"imputation file not found: {path}")
    frame = pd.read_csv(path, comment="#", float_precision="round_trip")
    if frame.shape[1] < 2:
        raise DataError(f"imputation file {path} needs timestamp and value columns")
    series, observed = _series_and_observed(ss, mask)
    values = pd.to_numeric(frame.iloc[:, 1], errors="coerce").to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise DataError(f"non-finite imputed value in {path}")
    if scaler is not None:
        k = ss.series.target_index
        values = (values - scaler.mean_[k]) / scaler.scale_[k]
    try:
        stamps = TimestampUtils.parse_column(frame.iloc[:, 0])
    except (ValueError, TypeError) as e:
        raise DataError(f"unparseable timestamps in {path}: {e}") from None

    missing = ~observed
    if len(stamps) == series.n_rows:
        expected, chosen = series.timestamps, missing
    else:
        expected, chosen = series.timestamps[missing], slice(None)
    if len(stamps) != len(expected) or not np.array_equal(stamps.astype(expected.dtype), expected):
        raise DataError(f"{path} has {len(stamps)} rows not aligned with the {int(missing.sum())} masked steps")
    filled = series.target.copy()
    filled[missing] = values[chosen]
    name = source_name or f"external:{path.stem}"
    return ImputationSet(labels=ss.cut_targets(filled), source_name=name, mask_ref=mask, series=filled)


def export_mask(mask: MaskSet, ss: SampleSet, path: PathLike) -> Path:
    """Write the series-level mask as (timestamp, missing) rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({
        "timestamp": TimestampUtils.to_text(ss.series.timestamps),
        "missing": mask.series_mask.astype(np.int8),
    }).to_csv(path, index=False)
    return path


def load_mask(path: PathLike, ss: SampleSet, requested_rate: Optional[float] = None) -> MaskSet:
    """
    Raises:
        FileNotFoundError: no mask file
        DataError: file does not line up with the series
    """
    frame = pd.read_csv(path)
    stamps = TimestampUtils.parse_column(frame["timestamp"])
    if len(stamps) != ss.series.n_rows or not np.array_equal(stamps.astype(ss.series.timestamps.dtype),
                                                             ss.series.timestamps):
        raise DataError(f"mask file {path} does not match the {ss.split_tag.value} series")
    return MaskSet.from_series(frame["missing"].to_numpy().astype(bool), ss, requested_rate)


def export_series_imputation(imputation: ImputationSet, ss: SampleSet, path: PathLike,
                             header: Optional[Dict[str, str]] = None) -> Path:
    """Write the imputed values of the masked steps as (timestamp, value) rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    missing = imputation.mask_ref.series_mask
    with open(path, "w", encoding="utf-8", newline="") as f:
        for key, value in (header or {}).items():
            f.write(f"# {key}: {value}\n")
        pd.DataFrame({
            "timestamp": TimestampUtils.to_text(ss.series.timestamps[missing]),
            "value": imputation.series[missing],
        }).to_csv(f, index=False, float_format="%.17g")
    return path


def simulate_toy(base: TimeSeriesDataset, n_keep: Sequence[int] = (4, 6), noise_mean: float = 0.05,
                 noise_std: float = 0.3, seed: int = 0) -> Tuple[TimeSeriesDataset, TimeSeriesDataset]:
    """
    Two imperfect versions of a complete target series.

    Case I observes steps n k and n k + 1 for n = n_keep[0], interpolates
    linearly and adds N(noise_mean, noise_std) noise everywhere. Case II does the
    same with n = n_keep[1] and no noise.
    """
    noisy_keep, clean_keep = n_keep
    if min(noisy_keep, clean_keep) < 2:
        raise ValueError(f"n_keep values must be >= 2, got {tuple(n_keep)}")
    steps = np.arange(base.n_rows)

    def interpolate(keep: int) -> np.ndarray:
        observed = (steps % keep == 0) | (steps % keep == 1)
        return np.interp(steps, steps[observed], base.target[observed])

    rng = np.random.default_rng(seed)
    case_one = interpolate(noisy_keep) + rng.normal(noise_mean, noise_std, size=base.n_rows)
    case_two = interpolate(clean_keep)
    return base.with_target(case_one), base.with_target(case_two)


def make_synthetic_series(n_days: int = 120, start: str = "2011-01-01", seed: int = 0) -> TimeSeriesDataset:
    """
    Hourly load with morning and evening peaks plus a temperature covariate.
    """
    rng = np.random.default_rng(seed)
    hours = np.arange(n_days * 24)
    hour_of_day = hours % 24
    day = hours // 24
    weekday = (day + 5) % 7
    level = 1.0 + 0.15 * np.sin(2 * np.pi * day / 60.0)
    daily = 0.25 * np.sin(2 * np.pi * (hour_of_day - 8) / 24.0)
    peaks = (0.18 * np.exp(-0.5 * ((hour_of_day - 9) / 2.2) ** 2)
             + 0.22 * np.exp(-0.5 * ((hour_of_day - 21) / 2.2) ** 2))
    weekend = np.where(weekday >= 5, 0.85, 1.0)
    noise = lfilter([1.0], [1.0, -0.8], rng.normal(0.0, 0.04, size=hours.size))
    load = level * weekend * (1.0 + daily + peaks) + noise
    temperature = 10.0 + 6.0 * np.sin(2 * np.pi * (hour_of_day - 14) / 24.0) + rng.normal(0.0, 1.0, hours.size)
    timestamps = (np.datetime64(start, "h") + hours.astype("timedelta64[h]")).astype("datetime64[ns]")
    return TimeSeriesDataset(values=np.column_stack([load, temperature]), timestamps=timestamps,
                             feature_names=["load", "temperature"], target_index=0)


def series_mse(estimate: np.ndarray, truth: np.ndarray) -> float:
    return float(np.mean((np.asarray(estimate) - np.asarray(truth)) ** 2))


def write_series(ds: TimeSeriesDataset, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(ds.values, columns=ds.feature_names)
    frame.insert(0, "timestamp", TimestampUtils.to_text(ds.timestamps))
    frame.to_csv(path, index=False, float_format="%.4f")
    return path
