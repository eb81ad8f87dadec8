"""
Evaluation quantities: estimate/oracle agreement, imputation and forecast MSE, timings.
"""

import logging
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.stats import pearsonr

from models.results import AgreementCurve, OracleResult, TimingTable
from models.series import ImputationSet, MaskSet, SampleSet
from models.utils import nearest_rank

logger = logging.getLogger(__name__)

DEFAULT_PERCENTS = tuple(range(10, 101, 10))


def _align(estimates: np.ndarray, truth: Union[OracleResult, np.ndarray]):
    """Pair estimates with oracle gains; full-size estimates are indexed by the oracle's runs."""
    estimates = np.asarray(estimates, dtype=np.float64)
    if not isinstance(truth, OracleResult):
        truth = np.asarray(truth, dtype=np.float64)
        if estimates.shape != truth.shape:
            raise ValueError(f"estimates {estimates.shape} and oracle gains {truth.shape} differ")
        return estimates.reshape(-1), truth.reshape(-1)
    gains = truth.true_gains
    if estimates.ndim == 2:
        if truth.timesteps is not None:
            estimates = estimates[truth.indices, truth.timesteps]
        else:
            estimates = estimates[truth.indices].sum(axis=1)
    elif estimates.size != gains.size:
        estimates = estimates[truth.indices]
    if estimates.shape != gains.shape:
        raise ValueError(f"cannot align {estimates.shape} estimates with {gains.shape} oracle gains")
    return estimates, gains


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    if a.size < 2 or np.std(a) == 0 or np.std(b) == 0:
        return float("nan")
    return float(pearsonr(a, b)[0])


def agreement(estimates: np.ndarray, truth: Union[OracleResult, np.ndarray],
              percents: Sequence[float] = DEFAULT_PERCENTS, label: str = "") -> AgreementCurve:
    """
    Correlation and sign accuracy on the top-x% samples by |estimate|.

    Grid points selecting fewer than two samples are NaN. A zero estimate only
    matches a zero oracle gain.
    """
    est, true = _align(estimates, truth)
    percents = np.asarray(sorted(percents), dtype=np.float64)
    if np.any(percents <= 0) or np.any(percents > 100):
        raise ValueError("percents must lie in (0, 100]")
    order = np.lexsort((np.arange(est.size), -np.abs(est)))

    corr, sign_acc, counts = [], [], []
    for percent in percents:
        count = nearest_rank(percent, est.size)
        chosen = order[:count]
        counts.append(count)
        if count < 2:
            corr.append(float("nan"))
            sign_acc.append(float("nan"))
            continue
        corr.append(pearson(est[chosen], true[chosen]))
        sign_acc.append(float(np.mean(np.sign(est[chosen]) == np.sign(true[chosen]))))
    curve = AgreementCurve(percents=percents, corr=np.array(corr), sign_acc=np.array(sign_acc),
                           counts=np.array(counts, dtype=np.int64), label=label)
    logger.debug(f"agreement {label}: corr {curve.corr} sign {curve.sign_acc}")
    return curve


def imputation_mse(imputation: ImputationSet, truth: SampleSet, mask: Optional[MaskSet] = None) -> float:
    """
    MSE over the masked window entries.

    Raises:
        ValueError: nothing masked, or misaligned inputs
    """
    mask = mask or imputation.mask_ref
    if imputation.labels.shape != truth.targets.shape or mask.masks.shape != truth.targets.shape:
        raise ValueError("imputation, ground truth and mask are misaligned")
    if not mask.masks.any():
        raise ValueError("imputation MSE needs at least one masked entry")
    diff = imputation.labels[mask.masks] - truth.targets[mask.masks]
    return float(np.mean(diff ** 2))


def series_imputation_mse(imputation: ImputationSet, truth: SampleSet) -> float:
    """MSE over the masked steps of the source series; every step counts once."""
    missing = imputation.mask_ref.series_mask
    if imputation.series is None or truth.series is None or missing is None:
        raise ValueError("series-level MSE needs series imputations and a series mask")
    if not missing.any():
        raise ValueError("imputation MSE needs at least one masked entry")
    return float(np.mean((imputation.series[missing] - truth.series.target[missing]) ** 2))


def timing_report(runs: Mapping[str, float], per_retrain_seconds: Optional[float] = None,
                  n_train: Optional[int] = None, reference: str = "seq-sim") -> TimingTable:
    """Wall seconds per method and their ratio to `reference` (the first run when absent)."""
    if not runs:
        raise ValueError("timing_report needs at least one run")
    methods = list(runs)
    if reference not in runs:
        reference = methods[0]
    base = runs[reference]
    ratios = [runs[m] / base if base > 0 else float("nan") for m in methods]
    projected = per_retrain_seconds * n_train if per_retrain_seconds is not None and n_train else None
    return TimingTable(methods=methods, seconds=[float(runs[m]) for m in methods], ratios=ratios,
                       reference=reference, projected_retraining_seconds=projected)


def mse_table(rows: Mapping[str, Mapping[str, float]]) -> pd.DataFrame:
    """Rows keyed by label, columns by metric name."""
    frame = pd.DataFrame.from_dict({k: dict(v) for k, v in rows.items()}, orient="index")
    frame.index.name = "label"
    return frame


def curve_frame(curves: Sequence[AgreementCurve]) -> pd.DataFrame:
    frames = []
    for curve in curves:
        frames.append(pd.DataFrame({"label": curve.label, "percent": curve.percents, "corr": curve.corr,
                                    "sign_acc": curve.sign_acc, "count": curve.counts}))
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
        columns=["label", "percent", "corr", "sign_acc", "count"])


def timing_frame(table: TimingTable) -> pd.DataFrame:
    frame = pd.DataFrame({"method": table.methods, "seconds": table.seconds, "ratio": table.ratios})
    if table.projected_retraining_seconds is not None:
        base = table.seconds[table.methods.index(table.reference)]
        projected = table.projected_retraining_seconds
        frame.loc[len(frame)] = ["retraining (projected)", projected, projected / base if base > 0 else float("nan")]
    return frame
