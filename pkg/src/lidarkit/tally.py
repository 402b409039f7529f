"""
tally.py

Time-bin bucketing of Monte Carlo detections by scattering order.

Each detection lands in the bin of its arrival time and in one or more
categories (its order, the D0 split for order 2, and the total).  A tally is a
list of per-block partial sums; merging concatenates block lists, and every
read reduces them with ``math.fsum``, so merge is exactly associative and the
result does not depend on how blocks were grouped.

Usage::

    tally = McTally.from_detections(lo, hi, n_histories, history, time, order, weight, in_d0)
    tally = tally.merge(other)
    tally.rate("2"), tally.stderr("2")
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DomainError

# ------------------------------------------------------------
# Categories
# ------------------------------------------------------------

CATEGORIES: Tuple[str, ...] = ("1", "2", "3+", "2:D0", "2:outside", "total")
ORDER_CATEGORIES: Tuple[str, ...] = ("1", "2", "3+")
_ROW = {name: i for i, name in enumerate(CATEGORIES)}


def bin_index(times: ArrayLike, lo: NDArray[np.float64], hi: NDArray[np.float64]) -> NDArray[np.intp]:
    """Index of the ``[lo, hi)`` bin holding each time, ``-1`` when none does.

    Bins must be sorted and non-overlapping; gaps between them are allowed.
    """
    t = np.asarray(times, dtype=float)
    idx = np.searchsorted(lo, t, side="right") - 1
    safe = np.clip(idx, 0, lo.size - 1)
    inside = (idx >= 0) & (t < hi[safe])
    return np.where(inside, idx, -1)


def _category_rows(order: NDArray[np.int64], in_d0: NDArray[np.bool_]) -> Tuple[NDArray[np.intp], NDArray[np.intp]]:
    """Expand detections into ``(detection index, category row)`` pairs."""
    n = order.size
    det = np.arange(n)
    by_order = np.where(order == 1, _ROW["1"], np.where(order == 2, _ROW["2"], _ROW["3+"]))
    second = order == 2
    split = np.where(in_d0[second], _ROW["2:D0"], _ROW["2:outside"])
    dets = np.concatenate((det, det[second], det))
    rows = np.concatenate((by_order, split, np.full(n, _ROW["total"])))
    return dets, rows


# ------------------------------------------------------------
# Per-block partial sums
# ------------------------------------------------------------

@dataclass(frozen=True)
class BlockTally:
    """Sums over one block of histories.

    Attributes:
        n_histories: Histories traced in the block.
        sum_w: ``(category, bin)`` weight sums.
        sum_w2: ``(category, bin)`` sums over histories of the squared
            per-history weight.
        counts: ``(category, bin)`` detection counts.
    """

    n_histories: int
    sum_w: NDArray[np.float64]
    sum_w2: NDArray[np.float64]
    counts: NDArray[np.int64]


def score_block(
    lo: NDArray[np.float64],
    hi: NDArray[np.float64],
    n_histories: int,
    history: ArrayLike,
    time: ArrayLike,
    order: ArrayLike,
    weight: ArrayLike,
    in_d0: ArrayLike,
) -> BlockTally:
    """Bucket the detections of one block of *n_histories* histories.

    Detections outside every bin are dropped.  *history* holds block-local
    history ids in ``[0, n_histories)``.
    """
    n_bins = lo.size
    cells = len(CATEGORIES) * n_bins
    history = np.asarray(history, dtype=np.int64)
    order = np.asarray(order, dtype=np.int64)
    weight = np.asarray(weight, dtype=float)
    in_d0 = np.asarray(in_d0, dtype=bool)
    b = bin_index(time, lo, hi)
    keep = b >= 0
    history, order, weight, in_d0, b = history[keep], order[keep], weight[keep], in_d0[keep], b[keep]

    dets, rows = _category_rows(order, in_d0)
    cell = rows * n_bins + b[dets]
    # aggregate per (cell, history) first for the per-history second moment
    key = cell * np.int64(max(n_histories, 1)) + history[dets]
    uniq, inverse = np.unique(key, return_inverse=True)
    per_history = np.bincount(inverse, weights=weight[dets], minlength=uniq.size)
    owner = uniq // max(n_histories, 1)

    sum_w = np.bincount(owner, weights=per_history, minlength=cells)
    sum_w2 = np.bincount(owner, weights=per_history * per_history, minlength=cells)
    counts = np.bincount(cell, minlength=cells).astype(np.int64)
    shape = (len(CATEGORIES), n_bins)
    return BlockTally(n_histories, sum_w.reshape(shape), sum_w2.reshape(shape), counts.reshape(shape))


# ------------------------------------------------------------
# Tally
# ------------------------------------------------------------

@dataclass(frozen=True)
class McTally:
    """Per-bin, per-category Monte Carlo tally made of block partial sums."""

    lo: NDArray[np.float64]
    hi: NDArray[np.float64]
    blocks: Tuple[BlockTally, ...] = ()
    _cache: Dict[str, NDArray[np.float64]] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size == 0:
            raise DomainError("tally bins need matching, non-empty lo/hi edges")
        if np.any(hi <= lo) or np.any(lo[1:] < hi[:-1]):
            raise DomainError("tally bins must be sorted, non-empty and non-overlapping")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_detections(cls, lo, hi, n_histories: int, history, time, order, weight, in_d0) -> "McTally":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        return cls(lo, hi, (score_block(lo, hi, n_histories, history, time, order, weight, in_d0),))

    def merge(self, other: "McTally") -> "McTally":
        if not (np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)):
            raise DomainError("cannot merge tallies with different bins")
        return McTally(self.lo, self.hi, self.blocks + other.blocks)

    # --------------------------------------------------------

    @property
    def n_histories(self) -> int:
        return sum(b.n_histories for b in self.blocks)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def widths(self) -> NDArray[np.float64]:
        return self.hi - self.lo

    def _reduce(self, name: str) -> NDArray[np.float64]:
        if name not in self._cache:
            stack = np.stack([getattr(b, name) for b in self.blocks]) if self.blocks else None
            out = np.zeros((len(CATEGORIES), self.lo.size))
            if stack is not None:
                for idx in np.ndindex(out.shape):
                    out[idx] = math.fsum(stack[(slice(None),) + idx])
            self._cache[name] = out
        return self._cache[name]

    def _block_means_square(self) -> NDArray[np.float64]:
        """``Σ_b S_b² / n_b`` per cell."""
        if "block_sq" not in self._cache:
            out = np.zeros((len(CATEGORIES), self.lo.size))
            terms = [b.sum_w**2 / b.n_histories for b in self.blocks if b.n_histories > 0]
            if terms:
                stack = np.stack(terms)
                for idx in np.ndindex(out.shape):
                    out[idx] = math.fsum(stack[(slice(None),) + idx])
            self._cache["block_sq"] = out
        return self._cache["block_sq"]

    def _row(self, category: str) -> int:
        if category not in _ROW:
            raise DomainError(f"unknown tally category {category!r}; expected one of {CATEGORIES}")
        return _ROW[category]

    def weight_sum(self, category: str) -> NDArray[np.float64]:
        return self._reduce("sum_w")[self._row(category)].copy()

    def counts(self, category: str) -> NDArray[np.int64]:
        total = np.zeros(self.lo.size, dtype=np.int64)
        for b in self.blocks:
            total += b.counts[self._row(category)]
        return total

    def rate(self, category: str) -> NDArray[np.float64]:
        """Return rate ``Σw / (N Δt)`` per bin.

        ``"total"`` is the sum of the three order rates.
        """
        if category == "total":
            return self.rate("1") + self.rate("2") + self.rate("3+")
        n = self.n_histories
        if n == 0:
            return np.zeros(self.lo.size)
        return self.weight_sum(category) / (n * self.widths)

    def stderr(self, category: str) -> NDArray[np.float64]:
        """Standard error of :meth:`rate`.

        Batch means over blocks when there are at least two, the per-history
        estimator otherwise.
        """
        row = self._row(category)
        n = self.n_histories
        if n < 2:
            return np.zeros(self.lo.size)
        s = self._reduce("sum_w")[row]
        if self.n_blocks >= 2:
            spread = (self._block_means_square()[row] - s * s / n) / (self.n_blocks - 1)
        else:
            spread = (self._reduce("sum_w2")[row] - s * s / n) / (n - 1)
        return np.sqrt(np.maximum(spread, 0.0) / n) / self.widths


def order_ratios(tally: McTally) -> Dict[str, NDArray[np.float64]]:
    """Per-bin ``I2/I1`` and ``I3+/I2`` ratios (``nan`` where undefined)."""
    r1, r2, r3 = (tally.rate(c) for c in ORDER_CATEGORIES)
    with np.errstate(divide="ignore", invalid="ignore"):
        return {
            "2/1": np.where(r1 > 0.0, r2 / r1, np.nan),
            "3+/2": np.where(r2 > 0.0, r3 / r2, np.nan),
        }
