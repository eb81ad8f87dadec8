"""
Model parameters, loss values and checkpoint files.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np

from .base import BaseDTO
from .configs import ArchSpec


class ModelDims(NamedTuple):
    """(D, L1, L2): input features, input length, output length."""
    n_features: int
    input_len: int
    output_len: int


@dataclass(frozen=True, eq=False)
class ModelParams(BaseDTO):
    """
    Flat, read-only parameter vector with its architecture.

    Attributes:
        theta: float64 vector of length P
        arch: architecture descriptor
        dims: (D, L1, L2)
    """

    theta: np.ndarray
    arch: ArchSpec
    dims: ModelDims

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        theta.setflags(write=False)
        dims = ModelDims(*self.dims)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "dims", dims)
        expected = self.arch.param_count(dims)
        if theta.size != expected:
            raise ValueError(f"theta has {theta.size} entries, architecture needs {expected}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta contains non-finite entries")

    @property
    def n_params(self) -> int:
        return self.theta.size

    def with_theta(self, theta: np.ndarray) -> 'ModelParams':
        return ModelParams(theta=theta, arch=self.arch, dims=self.dims)


@dataclass(eq=False)
class LossValue(BaseDTO):
    """Loss value and its gradient with respect to the model output."""

    value: float
    grad_output: np.ndarray


def save_checkpoint(params: ModelParams, path: Union[str, Path]) -> Path:
    """
    Write theta as text, one value per line, behind a JSON header line.

    %.17g reproduces every float64 exactly on reload.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps({
        "arch": params.arch.model_dump(mode="json"),
        "dims": list(params.dims),
        "n_params": params.n_params,
    }, sort_keys=True)
    np.savetxt(path, params.theta, fmt="%.17g", header=header, comments="# ")
    return path


def load_checkpoint(path: Union[str, Path]) -> ModelParams:
    """
    Raises:
        FileNotFoundError: no checkpoint at path
        ValueError: malformed header or parameter count mismatch
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
    if not first.startswith("# "):
        raise ValueError(f"checkpoint {path} lacks its header line")
    header = json.loads(first[2:])
    theta = np.loadtxt(path, comments="#", dtype=np.float64, ndmin=1)
    if theta.size != header["n_params"]:
        raise ValueError(f"checkpoint {path} holds {theta.size} values, header says {header['n_params']}")
    return ModelParams(theta=theta, arch=ArchSpec.model_validate(header["arch"]), dims=ModelDims(*header["dims"]))
