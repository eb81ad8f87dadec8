"""
Damped influence-function baseline for per-timestep label perturbations.
"""

import logging
from typing import Tuple

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from core.errors import DataError, NumericalError
from core.forecaster import ForecasterFactory, loss_cross_derivative
from models.configs import InfluenceConfig
from models.gain import GainMatrix
from models.params import ModelParams
from models.results import CGDiagnostics
from models.series import ImputationSet, SampleSet
from models.utils import nearest_rank
from .gain import canonical_order, label_delta

logger = logging.getLogger(__name__)

CG_RESTARTS = 3


def damped_hessian_operator(params: ModelParams, train: SampleSet, labels: np.ndarray,
                            damping: float, chunk_size: int = 512) -> LinearOperator:
    """(H + damping I) for H the Hessian of the mean training MSE, as exact R-op products."""
    forecaster = ForecasterFactory.for_params(params)
    n = train.n

    def matvec(v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        total = damping * v
        for start in range(0, n, chunk_size):
            X = train.inputs[start:start + chunk_size]
            Y = labels[start:start + chunk_size]
            total = total + forecaster.loss_hvp(params.theta, X, Y, v) * (X.shape[0] / n)
        return total

    return LinearOperator((params.n_params, params.n_params), matvec=matvec, dtype=np.float64)


def solve_damped(operator: LinearOperator, rhs: np.ndarray, cfg: InfluenceConfig) -> Tuple[np.ndarray, CGDiagnostics]:
    """
    Conjugate gradients with an explicit residual check and warm restarts.

    Success means ||(H + damping I) v - rhs|| <= cg_tolerance, measured directly.
    """
    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    solution = np.zeros_like(rhs)
    residual = float(np.linalg.norm(rhs))
    for _ in range(CG_RESTARTS):
        remaining = cfg.cg_max_iters - iterations
        if residual <= cfg.cg_tolerance or remaining <= 0:
            break
        solution, _ = cg(operator, rhs, x0=solution, rtol=0.0, atol=0.5 * cfg.cg_tolerance,
                         maxiter=remaining, callback=count)
        residual = float(np.linalg.norm(operator.matvec(solution) - rhs))
    converged = residual <= cfg.cg_tolerance
    if not converged:
        logger.warning(f"CG did not reach tolerance {cfg.cg_tolerance:g}: residual {residual:.3e} "
                       f"after {iterations} iterations")
    return solution, CGDiagnostics(iterations=iterations, residual=residual, tolerance=cfg.cg_tolerance,
                                   converged=converged, damping=cfg.damping)


def estimate_influence(params: ModelParams, train: SampleSet, y1: ImputationSet, y2: ImputationSet,
                       eval_set: SampleSet, cfg: InfluenceConfig,
                       chunk_size: int = 512) -> Tuple[GainMatrix, CGDiagnostics]:
    """
    I(i, l) = -(1/n) (J_i v)^T (d^2L/df dy)_l * delta_il,  (H + damping I) v = sum_k grad L_k.

    The model is assumed trained on y1, so H uses the y1 labels; delta = y1 - y2.
    A non-converged solve is returned with a "cg-not-converged" flag.
    """
    forecaster = ForecasterFactory.for_params(params)
    delta = label_delta(y1, y2, train)
    if train.dims != eval_set.dims:
        raise DataError(f"train {tuple(train.dims)} and eval {tuple(eval_set.dims)} dimensions differ")

    order = canonical_order(eval_set.inputs, eval_set.targets)
    rhs = np.zeros(params.n_params)
    for start in range(0, eval_set.n, chunk_size):
        chunk = order[start:start + chunk_size]
        out, cache = forecaster.forward(params.theta, eval_set.inputs[chunk])
        rhs += forecaster.vjp(params.theta, cache, 2.0 * (out - eval_set.targets[chunk]) / eval_set.output_len)

    operator = damped_hessian_operator(params, train, y1.labels, cfg.damping, chunk_size)
    solution, diagnostics = solve_damped(operator, rhs, cfg)

    projected = np.empty(train.targets.shape)
    for start in range(0, train.n, chunk_size):
        _, cache = forecaster.forward(params.theta, train.inputs[start:start + chunk_size])
        projected[start:start + chunk_size] = forecaster.jvp(params.theta, cache, solution)
    unscaled = -(projected @ loss_cross_derivative(train.output_len)) / train.n
    values = unscaled * delta
    values[delta == 0] = 0.0
    if not np.all(np.isfinite(values)):
        raise NumericalError("influence estimate is non-finite")

    gains = GainMatrix(
        values=values, masked=y1.masked | y2.masked, eval_split=eval_set.split_tag.value,
        estimator="influence", pair=(y1.source_name, y2.source_name), sensitivity=unscaled,
        metadata={
            "damping": f"{cfg.damping:g}",
            "cg_iterations": str(diagnostics.iterations),
            "cg_residual": f"{diagnostics.residual:.6e}",
        },
        flags=[] if diagnostics.converged else ["cg-not-converged"],
    )
    return gains, diagnostics


def rank_discard(gain: GainMatrix, percent: float) -> np.ndarray:
    """
    Samples whose aggregate gain is largest, i.e. whose y1 labels hurt most.

    Returns ceil(percent% of n) indices, ties broken by ascending index.

    Raises:
        ValueError: percent outside (0, 100) or empty gain matrix
    """
    if not 0 < percent < 100:
        raise ValueError(f"percent must lie in (0, 100), got {percent}")
    if gain.n == 0:
        raise ValueError("cannot rank an empty gain matrix")
    aggregate = gain.aggregate()
    count = nearest_rank(percent, gain.n)
    order = np.lexsort((np.arange(gain.n), -aggregate))
    return np.sort(order[:count])
