"""rng.py

Reproducible, independent random streams for block-parallel Monte Carlo.

A stream is fully determined by ``(seed, stream_id)``; block ``i`` of a run
always draws from stream ``i`` whichever worker executes it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int

    def __post_init__(self) -> None:
        if self.seed < 0 or self.stream_id < 0:
            raise DomainError(f"seed and stream id must be non-negative, got {self.seed}, {self.stream_id}")

    def generator(self) -> np.random.Generator:
        """Fresh PCG64 generator positioned at the start of the stream."""
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(seq))


def block_sizes(n_histories: int, blocks: int) -> List[int]:
    """Split *n_histories* into *blocks* near-equal parts, larger ones first."""
    if n_histories < 1 or blocks < 1:
        raise DomainError(f"need at least one history and one block, got {n_histories}, {blocks}")
    blocks = min(blocks, n_histories)
    base, extra = divmod(n_histories, blocks)
    return [base + (1 if i < extra else 0) for i in range(blocks)]
