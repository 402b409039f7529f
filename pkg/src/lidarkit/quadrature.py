"""quadrature.py

Globally adaptive two-dimensional cubature on rectangles.

Each cell carries a product Gauss-Legendre estimate of its own and of its four
children; the difference is the cell's error estimate.  The worst cell is split
until the summed error meets the tolerance.  Cell order is fixed by a path key,
so the final ``math.fsum`` gives bit-identical results for identical inputs.

Usage::

    from lidarkit.quadrature import adaptive_integrate

    result = adaptive_integrate(lambda x, y: x * y, [(0.0, 1.0, 0.0, 1.0)])
    result.value   # 0.25
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, Iterable, List, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from .errors import ConvergenceError, DomainError

logger = logging.getLogger(__name__)

# vectorised f(x, y) -> values, arrays of equal shape
Integrand2D = Callable[[NDArray[np.float64], NDArray[np.float64]], NDArray[np.float64]]
Rect = Tuple[float, float, float, float]  # (x0, x1, y0, y1)
CellKey = Tuple[int, ...]


@dataclass(frozen=True)
class QuadratureConfig:
    """Tolerances for :func:`adaptive_integrate`.

    Attributes:
        rel_tol: Relative tolerance, must be positive.
        abs_tol: Absolute tolerance, must be non-negative.
        max_subdivisions: Cell splits allowed before giving up.
        corner_substitution: Integrate the double-scatter domain in
            corner-centred coordinates (see ``double_scatter``).
        order: Gauss-Legendre points per axis and cell.
    """

    rel_tol: float = 1e-6
    abs_tol: float = 1e-30
    max_subdivisions: int = 20000
    corner_substitution: bool = True
    order: int = 7

    def __post_init__(self) -> None:
        if not self.rel_tol > 0.0:
            raise DomainError(f"rel_tol must be positive, got {self.rel_tol}")
        if not self.abs_tol >= 0.0:
            raise DomainError(f"abs_tol must be non-negative, got {self.abs_tol}")
        if self.max_subdivisions < 1:
            raise DomainError(f"max_subdivisions must be >= 1, got {self.max_subdivisions}")
        if self.order < 2:
            raise DomainError(f"order must be >= 2, got {self.order}")


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    error: float
    subdivisions: int
    cells: int


@lru_cache(maxsize=8)
def _rule(order: int) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    return np.polynomial.legendre.leggauss(order)


def _children(rect: Rect) -> List[Rect]:
    x0, x1, y0, y1 = rect
    xm, ym = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    return [(x0, xm, y0, ym), (xm, x1, y0, ym), (x0, xm, ym, y1), (xm, x1, ym, y1)]


def integrate_cells(f: Integrand2D, rects: Sequence[Rect], order: int = 7) -> NDArray[np.float64]:
    """Product Gauss-Legendre estimate of *f* over each rectangle, in one call."""
    x, w = _rule(order)
    r = np.asarray(rects, dtype=float).reshape(-1, 4)
    hx = 0.5 * (r[:, 1] - r[:, 0])
    hy = 0.5 * (r[:, 3] - r[:, 2])
    cx = 0.5 * (r[:, 1] + r[:, 0])
    cy = 0.5 * (r[:, 3] + r[:, 2])
    xs = cx[:, None, None] + hx[:, None, None] * x[None, :, None]
    ys = cy[:, None, None] + hy[:, None, None] * x[None, None, :]
    xs, ys = np.broadcast_arrays(xs, ys)
    values = np.asarray(f(xs, ys), dtype=float)
    if not np.all(np.isfinite(values)):
        raise DomainError("integrand returned non-finite values")
    weights = w[:, None] * w[None, :]
    return hx * hy * np.einsum("cij,ij->c", values, weights)


class _CellStore:
    """Active cells with their refined values and error estimates."""

    def __init__(self, f: Integrand2D, order: int):
        self.f = f
        self.order = order
        self.rects: Dict[CellKey, Rect] = {}
        self.values: Dict[CellKey, float] = {}
        self.errors: Dict[CellKey, float] = {}
        # child estimates of every active cell, reused when it is split
        self.child_values: Dict[CellKey, NDArray[np.float64]] = {}
        self.heap: List[Tuple[float, CellKey]] = []
        self.value_sum = 0.0
        self.error_sum = 0.0

    def add(self, entries: Sequence[Tuple[CellKey, Rect, float]]) -> None:
        """Register cells given their own (coarse) estimates."""
        grandchildren = [c for _, rect, _ in entries for c in _children(rect)]
        fine = integrate_cells(self.f, grandchildren, self.order).reshape(-1, 4)
        for (key, rect, coarse), kids in zip(entries, fine):
            refined = math.fsum(kids)
            err = abs(refined - coarse)
            self.rects[key] = rect
            self.values[key] = refined
            self.errors[key] = err
            self.child_values[key] = kids
            self.value_sum += refined
            self.error_sum += err
            heapq.heappush(self.heap, (-err, key))

    def split_worst(self) -> None:
        _, key = heapq.heappop(self.heap)
        rect = self.rects.pop(key)
        self.value_sum -= self.values.pop(key)
        self.error_sum -= self.errors.pop(key)
        kids = self.child_values.pop(key)
        self.add([(key + (i,), child, float(v)) for i, (child, v) in enumerate(zip(_children(rect), kids))])

    def totals(self) -> Tuple[float, float]:
        order = sorted(self.values)
        return (
            math.fsum(self.values[k] for k in order),
            math.fsum(self.errors[k] for k in order),
        )


def adaptive_integrate(
    f: Integrand2D,
    rects: Iterable[Rect],
    rel_tol: float = 1e-6,
    abs_tol: float = 1e-30,
    max_subdivisions: int = 20000,
    order: int = 7,
) -> QuadratureResult:
    """Integrate *f* over the union of *rects* to ``max(rel_tol*|I|, abs_tol)``.

    Raises:
        ConvergenceError: If the tolerance is not met within
            *max_subdivisions* splits; carries the best estimate.
    """
    rects = list(rects)
    if not rects:
        return QuadratureResult(0.0, 0.0, 0, 0)
    store = _CellStore(f, order)
    coarse = integrate_cells(f, rects, order)
    store.add([((i,), rect, float(v)) for i, (rect, v) in enumerate(zip(rects, coarse))])

    subdivisions = 0
    while True:
        # running sums drive the loop, the fsum totals decide
        if store.error_sum <= max(rel_tol * abs(store.value_sum), abs_tol):
            value, error = store.totals()
            if error <= max(rel_tol * abs(value), abs_tol):
                break
        if subdivisions >= max_subdivisions:
            value, error = store.totals()
            raise ConvergenceError(
                f"adaptive cubature stopped after {subdivisions} subdivisions "
                f"(estimate {value:.6g}, error {error:.3g})",
                estimate=value,
                error=error,
                subdivisions=subdivisions,
            )
        store.split_worst()
        subdivisions += 1

    logger.debug("cubature: %d subdivisions, %d cells, error %.3g", subdivisions, len(store.values), error)
    return QuadratureResult(value, error, subdivisions, len(store.values))
