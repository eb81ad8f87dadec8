"""
Services package: data preparation, training, gain estimation and experiments.
"""

from .ensemble import EnsembleSpec, combine, run_discard, run_ensemble
from .gain import estimate_seg, estimate_seq_sim, estimate_trajectory
from .influence import estimate_influence, rank_discard
from .metrics import agreement, imputation_mse, timing_report
from .oracle import RetrainingOracle, oracle_sweep, true_gain
from .pipeline import ExperimentPipeline
from .training import train

__all__ = [
    "EnsembleSpec",
    "combine",
    "run_discard",
    "run_ensemble",
    "estimate_seg",
    "estimate_seq_sim",
    "estimate_trajectory",
    "estimate_influence",
    "rank_discard",
    "agreement",
    "imputation_mse",
    "timing_report",
    "RetrainingOracle",
    "oracle_sweep",
    "true_gain",
    "ExperimentPipeline",
    "train"
]
