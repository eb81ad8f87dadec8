"""
Estimated gain matrices and the pieces they are assembled from.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .base import BaseDTO


@dataclass(eq=False)
class GainComponents(BaseDTO):
    """
    Attributes:
        alpha_hat: L2 x L2 matrix whose column l is the representer coefficient of label l
        test_loss_grads: m x L2 loss gradients at the evaluation samples (canonical order)
        delta: n x L2 label differences y1 - y2
        sensitivity: n x L2 kernel-weighted evaluation gradient per training sample
    """

    alpha_hat: np.ndarray
    test_loss_grads: np.ndarray
    delta: np.ndarray
    sensitivity: np.ndarray

    def gains(self) -> np.ndarray:
        unscaled = self.unscaled()
        values = unscaled * self.delta
        values[self.delta == 0] = 0.0
        return values

    def unscaled(self) -> np.ndarray:
        """Gain per unit label change."""
        return -(self.sensitivity @ self.alpha_hat)


@dataclass(eq=False)
class GainMatrix(BaseDTO):
    """
    Estimated I(i, l); positive means swapping y1 for y2 at (i, l) lowers the evaluation loss.

    Attributes:
        values: n x L2 gains, exactly zero where delta is zero
        masked: n x L2 flags of the imputed entries
        eval_split: validation or test
        estimator: seq-sim, seg-N, trajectory or influence
        pair: (source of y1, source of y2)
        segments: projector segment count, when one was used
        sensitivity: optional unscaled gains for debugging
        metadata: extra header entries (solver diagnostics and the like)
        flags: warnings attached to the result
    """

    values: np.ndarray
    masked: np.ndarray
    eval_split: str
    estimator: str
    pair: Tuple[str, str]
    segments: Optional[int] = None
    sensitivity: Optional[np.ndarray] = None
    metadata: Dict[str, str] = field(default_factory=dict)
    flags: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.masked = np.asarray(self.masked, dtype=bool)
        self.pair = tuple(self.pair)
        if self.values.shape != self.masked.shape:
            raise ValueError(f"values {self.values.shape} and mask {self.masked.shape} differ in shape")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"{self.estimator} produced non-finite gains")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def aggregate(self) -> np.ndarray:
        """Per-sample gain: the sum over timesteps."""
        return self.values.sum(axis=1)

    def header(self) -> Dict[str, str]:
        header = {
            "estimator": self.estimator,
            "segments": "" if self.segments is None else str(self.segments),
            "pair": f"{self.pair[0]},{self.pair[1]}",
            "eval_split": self.eval_split,
        }
        header.update(self.metadata)
        if self.flags:
            header["flags"] = ",".join(self.flags)
        return header


def export_gain_matrix(gain: GainMatrix, path: Union[str, Path]) -> Path:
    """Write (sample_index, timestep, gain, masked_flag) rows behind '# key: value' header lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n, horizon = gain.values.shape
    frame = pd.DataFrame({
        "sample_index": np.repeat(np.arange(n), horizon),
        "timestep": np.tile(np.arange(horizon), n),
        "gain": gain.values.reshape(-1),
        "masked_flag": gain.masked.reshape(-1).astype(np.int8),
    })
    with open(path, "w", encoding="utf-8", newline="") as f:
        for key, value in gain.header().items():
            f.write(f"# {key}: {value}\n")
        frame.to_csv(f, index=False, float_format="%.17g")
    return path


def load_gain_matrix(path: Union[str, Path]) -> GainMatrix:
    path = Path(path)
    header = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.startswith("# "):
                break
            key, _, value = line[2:].rstrip("\n").partition(": ")
            header[key] = value
    frame = pd.read_csv(path, comment="#", float_precision="round_trip")
    n, horizon = int(frame["sample_index"].max()) + 1, int(frame["timestep"].max()) + 1
    values = np.zeros((n, horizon))
    masked = np.zeros((n, horizon), dtype=bool)
    rows, cols = frame["sample_index"].to_numpy(), frame["timestep"].to_numpy()
    values[rows, cols] = frame["gain"].to_numpy(dtype=np.float64)
    masked[rows, cols] = frame["masked_flag"].to_numpy() == 1
    known = {"estimator", "segments", "pair", "eval_split", "flags"}
    return GainMatrix(
        values=values,
        masked=masked,
        eval_split=header.get("eval_split", ""),
        estimator=header.get("estimator", ""),
        pair=tuple(header.get("pair", ",").split(",", 1)),
        segments=int(header["segments"]) if header.get("segments") else None,
        metadata={k: v for k, v in header.items() if k not in known},
        flags=[flag for flag in header.get("flags", "").split(",") if flag],
    )
