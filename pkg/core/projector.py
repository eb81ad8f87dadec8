"""
Block-averaging projector used to compress the output dimension of Jacobians.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np


@dataclass(frozen=True)
class SegmentProjector:
    """
    r contiguous blocks over L2 outputs.

    A (r x L2) averages each block; A_dag (L2 x r) copies a block value back
    to every step of the block. A @ A_dag is the identity and A_dag @ A is the
    orthogonal projector onto block-constant vectors.
    """

    output_len: int
    block_lengths: Tuple[int, ...]
    A: np.ndarray
    A_dag: np.ndarray

    @property
    def r(self) -> int:
        return len(self.block_lengths)

    @property
    def is_identity(self) -> bool:
        return self.r == self.output_len

    @property
    def tag(self) -> str:
        return "full" if self.is_identity else f"seg-{self.r}"

    def project(self, values: np.ndarray) -> np.ndarray:
        """(..., L2) -> (..., r) block means."""
        return values @ self.A.T

    def lift(self, values: np.ndarray) -> np.ndarray:
        """(..., r) -> (..., L2) block-constant vectors."""
        return values @ self.A_dag.T


@lru_cache(maxsize=64)
def make_projector(output_len: int, segments: int) -> SegmentProjector:
    """
    Build the projector with segments - 1 blocks of length floor(L2 / segments)
    and a final block taking the remainder.

    Raises:
        ValueError: segments outside [1, output_len]
    """
    if output_len < 1:
        raise ValueError(f"output length must be positive, got {output_len}")
    if not 1 <= segments <= output_len:
        raise ValueError(f"segments must lie in [1, {output_len}], got {segments}")
    base = output_len // segments
    lengths = [base] * (segments - 1) + [output_len - (segments - 1) * base]
    block_of = np.repeat(np.arange(segments), lengths)
    indicator = np.zeros((output_len, segments))
    indicator[np.arange(output_len), block_of] = 1.0
    A = indicator.T / np.asarray(lengths, dtype=np.float64)[:, None]
    A.setflags(write=False)
    indicator.setflags(write=False)
    return SegmentProjector(output_len=output_len, block_lengths=tuple(lengths), A=A, A_dag=indicator)


def full_projector(output_len: int) -> SegmentProjector:
    return make_projector(output_len, output_len)
