"""
Task-oriented ensemble of two imputation sources, and the discard-and-retrain workflow.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd

from models.configs import ArchSpec, TrainConfig
from models.gain import GainMatrix
from models.params import ModelParams
from models.results import DiscardReport, EnsembleReport
from models.series import ImputationSet, SampleSet, SplitTag
from models.utils import nearest_rank
from .influence import rank_discard
from .training import evaluate, train

logger = logging.getLogger(__name__)


@dataclass
class EnsembleSpec:
    """
    Attributes:
        gain: gains of swapping baseline for candidate, estimated on the validation split
        baseline: y1, the imputation the model was trained on
        candidate: y2, the source spliced in where it helps
        replace_percent: c, the share of positive gains eligible for replacement
    """

    gain: GainMatrix
    baseline: ImputationSet
    candidate: ImputationSet
    replace_percent: float = 10.0
    estimator: str = ""

    def __post_init__(self):
        if not 0 < self.replace_percent <= 100:
            raise ValueError(f"replace_percent must lie in (0, 100], got {self.replace_percent}")
        if not self.estimator:
            self.estimator = self.gain.estimator


def positive_percentile_threshold(values: np.ndarray, replace_percent: float) -> Optional[float]:
    """
    Nearest-rank (100 - c) percentile of the strictly positive values.

    None when nothing is positive; 0.0 when c = 100 so that every positive value passes.
    """
    positive = np.sort(values[values > 0])
    if positive.size == 0:
        return None
    rank = nearest_rank(100.0 - replace_percent, positive.size)
    return 0.0 if rank == 0 else float(positive[rank - 1])


def splice_positions(spec: EnsembleSpec) -> Tuple[np.ndarray, Optional[float]]:
    """Boolean n x L2 map of the entries taken from the candidate, and the threshold used."""
    if spec.gain.eval_split == SplitTag.TEST.value:
        raise ValueError("ensemble gains must not be estimated on the test split")
    shape = spec.baseline.labels.shape
    if spec.gain.values.shape != shape or spec.candidate.labels.shape != shape:
        raise ValueError(f"gain {spec.gain.values.shape}, baseline {shape} and candidate "
                         f"{spec.candidate.labels.shape} are misaligned")
    threshold = positive_percentile_threshold(spec.gain.values, spec.replace_percent)
    if threshold is None:
        return np.zeros(shape, dtype=bool), None
    return (spec.gain.values > threshold) & spec.baseline.masked, threshold


def combine(spec: EnsembleSpec) -> ImputationSet:
    """Baseline labels with the top-c% positive-gain entries taken from the candidate."""
    replace, threshold = splice_positions(spec)
    labels = np.where(replace, spec.candidate.labels, spec.baseline.labels)
    logger.info(f"Ensemble: replaced {int(replace.sum())} of {int((spec.gain.values > 0).sum())} "
                f"positive-gain entries (threshold {threshold})")
    name = f"{spec.baseline.source_name}+{spec.candidate.source_name}"
    return spec.baseline.with_labels(labels, name)


def splice_header(spec: EnsembleSpec) -> Dict[str, str]:
    replace, threshold = splice_positions(spec)
    return {
        "pair": f"{spec.baseline.source_name},{spec.candidate.source_name}",
        "estimator": spec.estimator,
        "replace_percent": f"{spec.replace_percent:g}",
        "threshold": "none" if threshold is None else repr(threshold),
        "replaced": str(int(replace.sum())),
    }


def export_spliced_labels(spec: EnsembleSpec, spliced: ImputationSet, path: Union[str, Path]) -> Path:
    """Write (sample_index, timestep, value) rows of the masked entries with a provenance header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows, cols = np.nonzero(spliced.masked)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for key, value in splice_header(spec).items():
            f.write(f"# {key}: {value}\n")
        pd.DataFrame({
            "sample_index": rows,
            "timestep": cols,
            "value": spliced.labels[rows, cols],
        }).to_csv(f, index=False, float_format="%.17g")
    return path


def run_ensemble(spec: EnsembleSpec, arch: ArchSpec, cfg: TrainConfig, train_set: SampleSet,
                 val_set: SampleSet, test_set: SampleSet, val_labels: Optional[np.ndarray] = None,
                 baseline_params: Optional[ModelParams] = None) -> Tuple[ModelParams, EnsembleReport]:
    """
    Retrain on the spliced labels and report test MSE next to the baseline-trained model.

    Raises:
        NumericalError: training diverged
    """
    spliced = combine(spec)
    if baseline_params is None:
        baseline_params, _ = train(arch, train_set, spec.baseline, val_set, cfg, val_labels)
    baseline_mse = evaluate(baseline_params, test_set)

    replace, threshold = splice_positions(spec)
    if np.array_equal(spliced.labels, spec.baseline.labels):
        params = baseline_params
    else:
        params, _ = train(arch, train_set, spliced, val_set, cfg, val_labels)
    report = EnsembleReport(
        baseline_mse=baseline_mse,
        ensemble_mse=evaluate(params, test_set),
        threshold=threshold,
        replaced=int(replace.sum()),
        positive_gains=int((spec.gain.values > 0).sum()),
        replace_percent=spec.replace_percent,
        pair=[spec.baseline.source_name, spec.candidate.source_name],
        estimator=spec.estimator,
    )
    logger.info(f"Ensemble test MSE {report.ensemble_mse:.6f} vs baseline {report.baseline_mse:.6f}")
    return params, report


def run_discard(gain: GainMatrix, percent: float, arch: ArchSpec, cfg: TrainConfig, train_set: SampleSet,
                labels: ImputationSet, val_set: SampleSet, test_set: SampleSet,
                val_labels: Optional[np.ndarray] = None) -> Tuple[ModelParams, DiscardReport]:
    """Drop the training samples ranked most harmful and retrain on the rest."""
    discarded = rank_discard(gain, percent)
    kept = np.setdiff1d(np.arange(train_set.n), discarded)
    params, _ = train(arch, train_set.subset(kept), labels.labels[kept], val_set, cfg, val_labels)
    report = DiscardReport(discarded=discarded, percent=percent, test_mse=evaluate(params, test_set),
                           kept=int(kept.size))
    logger.info(f"Discarded {discarded.size} samples; retrained test MSE {report.test_mse:.6f}")
    return params, report
