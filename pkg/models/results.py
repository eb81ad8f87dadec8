"""
Result DTOs reported by the oracle, metrics, ensemble and influence services.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .base import BaseDTO


@dataclass(eq=False)
class OracleResult(BaseDTO):
    """
    Ground-truth gains from retraining.

    Attributes:
        indices: training sample indices that were swapped
        true_gains: base_loss_sum - run_loss_sums, per index
        base_loss: evaluation MSE of the model trained on y1
        base_loss_sum: summed per-sample evaluation loss of that model
        per_run_losses: evaluation MSE of every retrained model
        run_loss_sums: summed per-sample evaluation loss of every retrained model
        timesteps: swapped timestep per run for the timestep-level oracle
        retrain_seconds: wall time of every retrain
        n_train: training set size, used to project the full sweep
    """

    indices: np.ndarray
    true_gains: np.ndarray
    base_loss: float
    base_loss_sum: float
    per_run_losses: np.ndarray
    run_loss_sums: np.ndarray
    timesteps: Optional[np.ndarray] = None
    retrain_seconds: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_train: int = 0

    @property
    def mean_retrain_seconds(self) -> float:
        return float(np.mean(self.retrain_seconds)) if len(self.retrain_seconds) else 0.0

    @property
    def projected_full_seconds(self) -> float:
        """Time a sweep over every training sample would take at the measured rate."""
        return self.mean_retrain_seconds * self.n_train


@dataclass(eq=False)
class AgreementCurve(BaseDTO):
    """Correlation and sign accuracy between estimates and oracle gains, per top-x% selection."""

    percents: np.ndarray
    corr: np.ndarray
    sign_acc: np.ndarray
    counts: np.ndarray
    label: str = ""

    def at(self, percent: float) -> Dict[str, float]:
        k = int(np.flatnonzero(np.isclose(self.percents, percent))[0])
        return {"corr": float(self.corr[k]), "sign_acc": float(self.sign_acc[k]), "count": int(self.counts[k])}


@dataclass(eq=False)
class TimingTable(BaseDTO):
    methods: List[str]
    seconds: List[float]
    ratios: List[float]
    reference: str
    projected_retraining_seconds: Optional[float] = None


@dataclass(eq=False)
class EnsembleReport(BaseDTO):
    """Outcome of one splice-and-retrain pass."""

    baseline_mse: float
    ensemble_mse: float
    threshold: Optional[float]
    replaced: int
    positive_gains: int
    replace_percent: float
    pair: List[str] = field(default_factory=list)
    estimator: str = ""

    @property
    def improvement(self) -> float:
        return self.baseline_mse - self.ensemble_mse


@dataclass(eq=False)
class DiscardReport(BaseDTO):
    discarded: np.ndarray
    percent: float
    test_mse: float
    kept: int


@dataclass(eq=False)
class CGDiagnostics(BaseDTO):
    iterations: int
    residual: float
    tolerance: float
    converged: bool
    damping: float


@dataclass(eq=False)
class AxiomReport(BaseDTO):
    """
    Runtime-checkable properties of the kernel attribution.

    Attributes:
        zero_kernel_pairs: training pairs whose projected kernel block is exactly zero
        symmetric_zero_violations: such pairs with a nonzero cross-influence in either direction
        continuity_slope: fitted |dI| / eps for a shifted evaluation input
        continuity_shift: |dI| observed at the smallest eps
        continuity_passed: the smallest shift stays within the fitted slope bound
        diagonal_dominance: per-sample pass flags of |I(i, X_i)| > sum_j |I(i, X_j)|
        efficiency_residual: relative gap between summed per-sample attributions and the joint first-order change
    """

    zero_kernel_pairs: int
    symmetric_zero_violations: int
    continuity_slope: float
    continuity_shift: float
    continuity_eps: float
    continuity_passed: bool
    diagonal_dominance: np.ndarray
    efficiency_residual: float = 0.0

    @property
    def symmetric_zero_holds(self) -> bool:
        return self.symmetric_zero_violations == 0

    @property
    def efficiency_holds(self) -> bool:
        return self.efficiency_residual <= 1e-8

    @property
    def diagonal_dominance_rate(self) -> float:
        return float(np.mean(self.diagonal_dominance)) if len(self.diagonal_dominance) else float("nan")
