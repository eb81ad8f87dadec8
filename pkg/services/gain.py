"""
Retraining-free estimators of the label-swap gain I(i, l).

All variants share one computation: with segment Jacobians J^A = A J,
    w   = sum_k J_k^A^T (A_dag^T g_k)          (eval side, canonical order)
    S_i = A_dag J_i^A w                         (train side)
    I   = -(S @ alpha_hat) * (y1 - y2)
where g_k is the loss gradient at evaluation sample k and
alpha_hat = (1/n) d^2L/(df dy).
"""

import logging
import time
from typing import Optional, Sequence, Tuple

import numpy as np

from core.errors import DataError, NumericalError
from core.forecaster import ForecasterFactory, jvp, loss_cross_derivative, output_jacobians
from core.projector import SegmentProjector, full_projector, make_projector
from models.gain import GainComponents, GainMatrix
from models.params import ModelParams
from models.results import AxiomReport
from models.series import ImputationSet, SampleSet
from models.trajectory import TrainTrajectory

logger = logging.getLogger(__name__)


def canonical_order(inputs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Lexicographic order of evaluation samples, so reductions do not depend on their listing."""
    keys = np.concatenate([inputs.reshape(inputs.shape[0], -1), targets], axis=1)
    return np.lexsort(keys.T[::-1])


def label_delta(y1: ImputationSet, y2: ImputationSet, train: SampleSet) -> np.ndarray:
    """
    Raises:
        DataError: the two imputation sets are not aligned with the samples
    """
    if y1.labels.shape != train.targets.shape or y2.labels.shape != train.targets.shape:
        raise DataError(f"imputations {y1.labels.shape}/{y2.labels.shape} misaligned "
                        f"with {train.targets.shape} training targets")
    return y1.labels - y2.labels


def eval_loss_grads(params: ModelParams, eval_set: SampleSet) -> np.ndarray:
    """dL/df at every evaluation sample, (m, L2)."""
    forecaster = ForecasterFactory.for_params(params)
    out, _ = forecaster.forward(params.theta, eval_set.inputs)
    return 2.0 * (out - eval_set.targets) / eval_set.output_len


def kernel_sensitivity(params: ModelParams, train: SampleSet, eval_set: SampleSet,
                       proj: SegmentProjector, chunk_size: int = 16) -> Tuple[np.ndarray, np.ndarray]:
    """
    Sum over evaluation samples of K(X_i, X_k) g_k for every training sample.

    Returns:
        (S, g): S is n x L2, g the m x L2 evaluation loss gradients in canonical order
    """
    if train.dims != eval_set.dims or train.dims != params.dims:
        raise DataError(f"train {tuple(train.dims)}, eval {tuple(eval_set.dims)} and model "
                        f"{tuple(params.dims)} dimensions differ")
    if proj.output_len != params.dims.output_len:
        raise DataError(f"projector covers {proj.output_len} outputs, model has {params.dims.output_len}")

    order = canonical_order(eval_set.inputs, eval_set.targets)
    ordered = eval_set.subset(order)
    grads = eval_loss_grads(params, ordered)
    coefficients = grads @ proj.A_dag

    w = np.zeros(params.n_params)
    for start in range(0, ordered.n, chunk_size):
        jac = output_jacobians(params, ordered.inputs[start:start + chunk_size], proj)
        w += np.einsum("br,brp->p", coefficients[start:start + chunk_size], jac)

    sensitivity = np.empty(train.targets.shape)
    for start in range(0, train.n, chunk_size):
        jac = output_jacobians(params, train.inputs[start:start + chunk_size], proj)
        sensitivity[start:start + chunk_size] = proj.lift(jac @ w)
    return sensitivity, grads


def gain_components(params: ModelParams, train: SampleSet, y1: ImputationSet, y2: ImputationSet,
                    eval_set: SampleSet, proj: SegmentProjector, chunk_size: int = 16) -> GainComponents:
    delta = label_delta(y1, y2, train)
    sensitivity, grads = kernel_sensitivity(params, train, eval_set, proj, chunk_size)
    alpha_hat = loss_cross_derivative(train.output_len) / train.n
    return GainComponents(alpha_hat=alpha_hat, test_loss_grads=grads, delta=delta, sensitivity=sensitivity)


def _finish(values: np.ndarray, unscaled: np.ndarray, y1: ImputationSet, y2: ImputationSet,
            eval_set: SampleSet, estimator: str, segments: Optional[int]) -> GainMatrix:
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"{estimator} produced non-finite gains")
    return GainMatrix(values=values, masked=y1.masked | y2.masked, eval_split=eval_set.split_tag.value,
                      estimator=estimator, pair=(y1.source_name, y2.source_name),
                      segments=segments, sensitivity=unscaled)


def estimate_seg(params: ModelParams, train: SampleSet, y1: ImputationSet, y2: ImputationSet,
                 eval_set: SampleSet, segments: int, chunk_size: int = 16,
                 estimator: Optional[str] = None) -> GainMatrix:
    """
    Kernel estimator with Jacobians compressed to `segments` block averages.

    Cost grows linearly with the segment count; segments = L2 is the full estimator.
    """
    proj = make_projector(train.output_len, segments)
    started = time.perf_counter()
    components = gain_components(params, train, y1, y2, eval_set, proj, chunk_size)
    gains = _finish(components.gains(), components.unscaled(), y1, y2, eval_set,
                    estimator or f"seg-{segments}", segments)
    logger.info(f"{gains.estimator} on {train.n} x {eval_set.n} samples took {time.perf_counter() - started:.2f}s")
    return gains


def estimate_seq_sim(params: ModelParams, train: SampleSet, y1: ImputationSet, y2: ImputationSet,
                     eval_set: SampleSet, chunk_size: int = 16) -> GainMatrix:
    """Full-resolution kernel estimator over all L2 output coordinates."""
    return estimate_seg(params, train, y1, y2, eval_set, train.output_len, chunk_size, estimator="seq-sim")


def estimate_trajectory(trajectory: TrainTrajectory, train: SampleSet, y1: ImputationSet, y2: ImputationSet,
                        eval_set: SampleSet, chunk_size: int = 16, segments: Optional[int] = None,
                        epochs: Optional[int] = None) -> GainMatrix:
    """
    Accumulate kernel contributions over training epochs.

    Epoch t contributes with weight lr_t / |B_t| for the batch holding sample i,
    with Jacobians and evaluation gradients taken at the checkpoint that opened
    epoch t. Epochs after the early-stopping choice do not shape the returned
    model and are skipped unless `epochs` says otherwise.

    Raises:
        DataError: trajectory recorded for another data shape
    """
    horizon = train.output_len
    proj = make_projector(horizon, segments) if segments else full_projector(horizon)
    last = epochs or trajectory.best_epoch or trajectory.T
    if trajectory.T == 0 or last > trajectory.T:
        raise DataError(f"trajectory has {trajectory.T} epochs, {last} requested")
    for batches in trajectory.batch_members[:last]:
        for batch in batches:
            if len(batch) and (batch.max() >= train.n or batch.min() < 0):
                raise DataError("trajectory batch indices exceed the training set")

    delta = label_delta(y1, y2, train)
    cross = loss_cross_derivative(horizon)
    unscaled = np.zeros(train.targets.shape)
    for epoch in range(1, last + 1):
        checkpoint = trajectory.checkpoints[epoch - 1]
        sensitivity, _ = kernel_sensitivity(checkpoint, train, eval_set, proj, chunk_size)
        weights = trajectory.sample_weights(epoch, train.n)
        unscaled -= weights[:, None] * (sensitivity @ cross)
        logger.debug(f"trajectory epoch {epoch}/{last} accumulated")
    values = unscaled * delta
    values[delta == 0] = 0.0
    return _finish(values, unscaled, y1, y2, eval_set, "trajectory", segments)


def _pair_influence(jac_train: np.ndarray, jac_eval: np.ndarray, grads: np.ndarray, n: int) -> np.ndarray:
    """
    Influence vectors I(i, ., X_k) per unit label change for every (i, k).

    Returns:
        array (a, b, L2)
    """
    horizon = grads.shape[1]
    kernel = np.einsum("ilp,kjp->iklj", jac_train, jac_eval)
    cross = loss_cross_derivative(horizon) / n
    return -np.einsum("iklj,kj,lm->ikm", kernel, grads, cross)


def axiom_checks(params: ModelParams, train: SampleSet, labels: ImputationSet, eval_set: SampleSet,
                 max_samples: int = 16, epsilons: Sequence[float] = (1e-3, 1e-4), shift_eps: float = 1e-6,
                 seed: int = 0) -> AxiomReport:
    """
    Check the runtime-checkable axioms of the kernel attribution on a subset.

    Symmetric zero: a zero kernel block between training samples i and j
    must give zero influence in both directions. Continuity: shifting an
    evaluation input by eps moves the influences by at most the slope fitted
    at larger eps, times eps (with a factor-10 margin). Efficiency: for a random
    joint label change, the per-sample attributions must add up to the
    first-order eval-loss change of applying it at once through parameter
    space; the relative gap is reported. Diagonal dominance is reported per
    sample and not asserted.
    """
    a = min(max_samples, train.n)
    subset = train.subset(np.arange(a))
    train_labels = labels.labels[:a]
    forecaster = ForecasterFactory.for_params(params)
    jac_train = output_jacobians(params, subset.inputs)

    out, _ = forecaster.forward(params.theta, subset.inputs)
    train_grads = 2.0 * (out - train_labels) / train.output_len
    among_train = _pair_influence(jac_train, jac_train, train_grads, train.n)
    kernel_zero = np.all(np.einsum("ilp,kjp->iklj", jac_train, jac_train) == 0.0, axis=(2, 3))
    off_diagonal = ~np.eye(a, dtype=bool)
    zero_pairs = kernel_zero & off_diagonal
    nonzero_influence = np.any(among_train != 0.0, axis=2)
    violations = zero_pairs & (nonzero_influence | nonzero_influence.T)

    magnitudes = np.abs(among_train).sum(axis=2)
    dominance = np.diag(magnitudes) > np.where(off_diagonal, magnitudes, 0.0).sum(axis=1)

    rng = np.random.default_rng(seed)
    anchor_input = eval_set.inputs[:1]
    anchor_target = eval_set.targets[:1]
    direction = rng.normal(size=anchor_input.shape)
    direction /= np.linalg.norm(direction)

    def influence_at(shift: float) -> np.ndarray:
        x = anchor_input + shift * direction
        out_k, _ = forecaster.forward(params.theta, x)
        grads_k = 2.0 * (out_k - anchor_target) / train.output_len
        return _pair_influence(jac_train, output_jacobians(params, x), grads_k, train.n)

    reference = influence_at(0.0)
    slope = max(np.max(np.abs(influence_at(eps) - reference)) / eps for eps in epsilons)
    shifted = float(np.max(np.abs(influence_at(shift_eps) - reference)))
    passed = bool(np.isfinite(slope) and shifted <= 10.0 * slope * shift_eps + 1e-15)

    eval_inputs = eval_set.inputs[:max_samples]
    eval_out, _ = forecaster.forward(params.theta, eval_inputs)
    eval_grads = 2.0 * (eval_out - eval_set.targets[:max_samples]) / train.output_len
    delta = rng.normal(size=train_labels.shape)
    per_sample = np.einsum("ikm,im->i", _pair_influence(jac_train, output_jacobians(params, eval_inputs),
                                                        eval_grads, train.n), delta)
    cross = loss_cross_derivative(train.output_len)
    joint_shift = np.einsum("ilp,il->p", jac_train, delta @ cross.T) / train.n
    joint = -float(np.sum(eval_grads * jvp(params, eval_inputs, joint_shift)))
    total = float(per_sample.sum())
    efficiency = abs(total - joint) / max(abs(joint), abs(total), np.finfo(np.float64).tiny)

    report = AxiomReport(
        zero_kernel_pairs=int(zero_pairs.sum() // 2),
        symmetric_zero_violations=int(violations.sum() // 2),
        continuity_slope=float(slope),
        continuity_shift=shifted,
        continuity_eps=shift_eps,
        continuity_passed=passed,
        diagonal_dominance=dominance,
        efficiency_residual=efficiency,
    )
    logger.info(f"Axioms: {report.zero_kernel_pairs} zero-kernel pairs, "
                f"{report.symmetric_zero_violations} violations, continuity {'ok' if passed else 'FAILED'}, "
                f"diagonal dominance {report.diagonal_dominance_rate:.2f}, efficiency residual {efficiency:.1e}")
    return report
