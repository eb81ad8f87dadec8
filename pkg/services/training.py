"""
Deterministic mini-batch SGD with early stopping and a recorded trajectory.
"""

import logging
from typing import Optional, Tuple, Union

import numpy as np
from tqdm import tqdm

from core.errors import NumericalError
from core.forecaster import ForecasterFactory
from core.settings import derive_seed
from models.configs import ArchSpec, TrainConfig
from models.params import ModelParams
from models.series import ImputationSet, SampleSet
from models.trajectory import TrainTrajectory

logger = logging.getLogger(__name__)

Labels = Union[ImputationSet, np.ndarray, None]


def resolve_labels(samples: SampleSet, labels: Labels) -> np.ndarray:
    """Training targets: imputed labels when given, else the sample targets."""
    if labels is None:
        return samples.targets
    values = labels.labels if isinstance(labels, ImputationSet) else np.asarray(labels, dtype=np.float64)
    if values.shape != samples.targets.shape:
        raise ValueError(f"labels {values.shape} misaligned with samples {samples.targets.shape}")
    return values


def train(arch: ArchSpec, train_set: SampleSet, labels: Labels, val_set: SampleSet,
          cfg: TrainConfig, val_labels: Labels = None,
          progress: bool = False) -> Tuple[ModelParams, TrainTrajectory]:
    """
    Train with plain SGD and stop after `patience` epochs without strict
    validation improvement.

    Args:
        arch: architecture to train
        train_set: training samples
        labels: training labels (imputation set or array); defaults to train_set.targets
        val_set: validation samples
        cfg: SGD settings; cfg.seed seeds the init and shuffle streams
        val_labels: validation targets; defaults to val_set.targets
        progress: show a tqdm bar over epochs

    Returns:
        Parameters of the best validation epoch and the full trajectory

    Raises:
        NumericalError: non-finite training or validation loss
    """
    forecaster = ForecasterFactory.create(arch, train_set.dims)
    X, Y = train_set.inputs, resolve_labels(train_set, labels)
    X_val, Y_val = val_set.inputs, resolve_labels(val_set, val_labels)
    n, horizon = Y.shape

    theta = forecaster.initial_theta(np.random.default_rng(derive_seed(cfg.seed, "init")))
    shuffle_rng = np.random.default_rng(derive_seed(cfg.seed, "shuffle"))

    checkpoints, batch_members, train_losses, val_losses = [], [], [], []
    best_val, best_theta, best_epoch, waited = np.inf, theta, 0, 0
    logger.info(f"Training {arch.kind.value} (P={forecaster.n_params}) on {n} samples, "
                f"lr={cfg.learning_rate}, batch={cfg.batch_size}")

    for epoch in tqdm(range(1, cfg.max_epochs + 1), desc="epochs", disable=not progress):
        checkpoints.append(ModelParams(theta=theta, arch=arch, dims=forecaster.dims))
        order = shuffle_rng.permutation(n) if cfg.shuffle else np.arange(n)
        batches = [order[start:start + cfg.batch_size] for start in range(0, n, cfg.batch_size)]
        batch_members.append(batches)

        epoch_loss = 0.0
        for batch in batches:
            out, cache = forecaster.forward(theta, X[batch])
            residual = out - Y[batch]
            batch_loss = float(np.mean(residual ** 2))
            if not np.isfinite(batch_loss):
                logger.warning(f"training diverged at epoch {epoch} (lr={cfg.learning_rate})")
                raise NumericalError(f"non-finite training loss at epoch {epoch}; lower the learning rate")
            epoch_loss += batch_loss * len(batch)
            grad = forecaster.vjp(theta, cache, 2.0 * residual / (horizon * len(batch)))
            theta = theta - cfg.learning_rate * grad

        val_loss = mse(forecaster, theta, X_val, Y_val)
        if not np.isfinite(val_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        train_losses.append(epoch_loss / n)
        val_losses.append(val_loss)
        logger.debug(f"epoch {epoch}: train={train_losses[-1]:.6f} val={val_loss:.6f}")

        if val_loss < best_val:
            best_val, best_theta, best_epoch, waited = val_loss, theta, epoch, 0
        else:
            waited += 1
            if waited >= cfg.patience:
                logger.info(f"Early stop at epoch {epoch}; best epoch {best_epoch} (val {best_val:.6f})")
                break

    trajectory = TrainTrajectory(
        checkpoints=checkpoints,
        step_lrs=[cfg.learning_rate] * len(checkpoints),
        batch_members=batch_members,
        best_epoch=best_epoch,
        train_losses=train_losses,
        val_losses=val_losses,
    )
    return ModelParams(theta=best_theta, arch=arch, dims=forecaster.dims), trajectory


def mse(forecaster, theta: np.ndarray, X: np.ndarray, Y: np.ndarray, chunk_size: int = 1024) -> float:
    total = 0.0
    for start in range(0, X.shape[0], chunk_size):
        out, _ = forecaster.forward(theta, X[start:start + chunk_size])
        total += float(np.sum((out - Y[start:start + chunk_size]) ** 2))
    return total / Y.size


def evaluate(params: ModelParams, samples: SampleSet, targets: Optional[np.ndarray] = None) -> float:
    """Mean of per-sample MSE over the split."""
    forecaster = ForecasterFactory.for_params(params)
    Y = samples.targets if targets is None else np.asarray(targets, dtype=np.float64)
    return mse(forecaster, params.theta, samples.inputs, Y)


def per_sample_losses(params: ModelParams, samples: SampleSet,
                      targets: Optional[np.ndarray] = None, chunk_size: int = 1024) -> np.ndarray:
    forecaster = ForecasterFactory.for_params(params)
    Y = samples.targets if targets is None else np.asarray(targets, dtype=np.float64)
    losses = []
    for start in range(0, samples.n, chunk_size):
        out, _ = forecaster.forward(params.theta, samples.inputs[start:start + chunk_size])
        losses.append(np.mean((out - Y[start:start + chunk_size]) ** 2, axis=1))
    return np.concatenate(losses)
