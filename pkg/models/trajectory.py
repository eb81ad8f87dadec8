"""
Training trajectory: checkpoints, learning rates and batch memberships per epoch.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Union

import numpy as np
import pandas as pd

from .base import BaseDTO
from .configs import ArchSpec
from .params import ModelDims, ModelParams


@dataclass(eq=False)
class TrainTrajectory(BaseDTO):
    """
    Attributes:
        checkpoints: checkpoints[t - 1] is the parameter vector that opened epoch t
        step_lrs: learning rate used during each epoch
        batch_members: per epoch, the index arrays of its mini-batches
        best_epoch: epoch selected by early stopping (1-based)
        train_losses: mean training loss of each epoch
        val_losses: validation MSE after each epoch
    """

    checkpoints: List[ModelParams]
    step_lrs: List[float]
    batch_members: List[List[np.ndarray]]
    best_epoch: int
    train_losses: List[float] = field(default_factory=list)
    val_losses: List[float] = field(default_factory=list)

    @property
    def T(self) -> int:
        return len(self.checkpoints)

    def sample_weights(self, epoch: int, n: int) -> np.ndarray:
        """eta_t / |B_t| for every sample of the batch holding it in `epoch`, zero otherwise."""
        weights = np.zeros(n)
        lr = self.step_lrs[epoch - 1]
        for batch in self.batch_members[epoch - 1]:
            weights[batch] += lr / len(batch)
        return weights

    def check_partition(self, n: int) -> None:
        """
        Raises:
            ValueError: an epoch's batches do not partition range(n)
        """
        for epoch, batches in enumerate(self.batch_members, start=1):
            members = np.sort(np.concatenate(batches)) if batches else np.array([], dtype=np.int64)
            if not np.array_equal(members, np.arange(n)):
                raise ValueError(f"epoch {epoch} batches do not partition the {n} training samples")


def save_trajectory(trajectory: TrainTrajectory, directory: Union[str, Path]) -> Path:
    """One .npy checkpoint and one batch file per epoch, plus manifest.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    first = trajectory.checkpoints[0]
    epochs = []
    for epoch, (params, batches) in enumerate(zip(trajectory.checkpoints, trajectory.batch_members), start=1):
        ckpt_name, batch_name = f"epoch_{epoch:04d}.npy", f"batches_{epoch:04d}.csv"
        np.save(directory / ckpt_name, params.theta)
        pd.DataFrame({
            "batch": np.concatenate([np.full(len(b), k) for k, b in enumerate(batches)]),
            "sample_index": np.concatenate(batches),
        }).to_csv(directory / batch_name, index=False)
        epochs.append({
            "epoch": epoch,
            "lr": trajectory.step_lrs[epoch - 1],
            "checkpoint": ckpt_name,
            "batches": batch_name,
            "train_loss": trajectory.train_losses[epoch - 1] if trajectory.train_losses else None,
            "val_loss": trajectory.val_losses[epoch - 1] if trajectory.val_losses else None,
        })
    manifest = {
        "arch": first.arch.model_dump(mode="json"),
        "dims": list(first.dims),
        "best_epoch": trajectory.best_epoch,
        "epochs": epochs,
    }
    with open(directory / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    return directory


def load_trajectory(directory: Union[str, Path]) -> TrainTrajectory:
    """
    Raises:
        FileNotFoundError: no manifest in directory
    """
    directory = Path(directory)
    with open(directory / "manifest.json", "r", encoding="utf-8") as f:
        manifest = json.load(f)
    arch, dims = ArchSpec.model_validate(manifest["arch"]), ModelDims(*manifest["dims"])
    checkpoints, batch_members = [], []
    for entry in manifest["epochs"]:
        checkpoints.append(ModelParams(theta=np.load(directory / entry["checkpoint"]), arch=arch, dims=dims))
        frame = pd.read_csv(directory / entry["batches"])
        batch_members.append([group["sample_index"].to_numpy(dtype=np.int64)
                              for _, group in frame.groupby("batch", sort=True)])
    return TrainTrajectory(
        checkpoints=checkpoints,
        step_lrs=[entry["lr"] for entry in manifest["epochs"]],
        batch_members=batch_members,
        best_epoch=manifest["best_epoch"],
        train_losses=[entry["train_loss"] for entry in manifest["epochs"]],
        val_losses=[entry["val_loss"] for entry in manifest["epochs"]],
    )
