"""geometry.py

Detector geometry, return-time grids and the regime checks shared by the
analytic and Monte Carlo layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from .errors import DomainError
from .medium import MediumModel


@dataclass(frozen=True)
class DetectorGeometry:
    """Receiver disk of radius *rho0* in ``z = 0`` with half-angle *theta0*.

    The source sits at the disk centre (monostatic) and fires along ``+z``.
    """

    rho0: float
    theta0: float
    epsilon: float = field(init=False)

    def __post_init__(self) -> None:
        if not (math.isfinite(self.rho0) and self.rho0 > 0.0):
            raise DomainError(f"aperture radius must be positive, got {self.rho0}")
        if not 0.0 < self.theta0 < math.pi / 2.0:
            raise DomainError(f"half-angle must lie in (0, pi/2), got {self.theta0}")
        object.__setattr__(self, "epsilon", math.tan(self.theta0))

    @classmethod
    def from_epsilon(cls, rho0: float, epsilon: float) -> "DetectorGeometry":
        if not epsilon > 0.0:
            raise DomainError(f"epsilon must be positive, got {epsilon}")
        geom = cls(rho0, math.atan(epsilon))
        # keep the given tangent exactly rather than tan(atan(epsilon))
        object.__setattr__(geom, "epsilon", float(epsilon))
        return geom

    @property
    def cos_theta0(self) -> float:
        return math.cos(self.theta0)


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing, positive return times."""

    times: NDArray[np.float64]

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float).ravel()
        if t.size == 0:
            raise DomainError("time grid is empty")
        if not np.all(np.isfinite(t)) or np.any(t <= 0.0):
            raise DomainError("times must be finite and positive")
        if np.any(np.diff(t) <= 0.0):
            raise DomainError("times must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @classmethod
    def linear(cls, t_min: float, t_max: float, n: int) -> "TimeGrid":
        return cls(np.linspace(t_min, t_max, n))

    @classmethod
    def log(cls, t_min: float, t_max: float, n: int) -> "TimeGrid":
        if not t_min > 0.0:
            raise DomainError(f"log grid needs t_min > 0, got {t_min}")
        return cls(np.geomspace(t_min, t_max, n))

    def __len__(self) -> int:
        return int(self.times.size)

    def bin_edges(self, width: Optional[float] = None) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Return ``(lo, hi)`` tally bins, one per time.

        Without *width* the bins tile the grid: edges sit at midpoints and the
        outer bins extend half a spacing past the first and last time (a
        single-time grid gets a bin of width ``t/10``).  With *width* every bin
        is ``[t - width/2, t + width/2)``; such bins must not overlap.
        """
        t = self.times
        if width is not None:
            if not width > 0.0:
                raise DomainError(f"bin width must be positive, got {width}")
            if t.size > 1 and width > float(np.diff(t).min()):
                raise DomainError("fixed-width bins overlap: width exceeds the grid spacing")
            return t - 0.5 * width, t + 0.5 * width
        if t.size == 1:
            half = 0.05 * t[0]
            return t - half, t + half
        mid = 0.5 * (t[1:] + t[:-1])
        lo = np.concatenate(([t[0] - (mid[0] - t[0])], mid))
        hi = np.concatenate((mid, [t[-1] + (t[-1] - mid[-1])]))
        return np.maximum(lo, 0.0), hi


# ------------------------------------------------------------
# Regime checks
# ------------------------------------------------------------

class FarField(NamedTuple):
    ok: bool
    margin: float


class Smallness(NamedTuple):
    q: float
    threshold: float
    ok: bool


def check_far_field(t: float, geom: DetectorGeometry) -> FarField:
    """Far field means the echo height ``t/2`` exceeds ``rho0/eps`` strictly."""
    if not math.isfinite(t):
        raise DomainError(f"time must be finite, got {t}")
    crossover = geom.rho0 / geom.epsilon
    half = 0.5 * t
    return FarField(ok=half > crossover, margin=half / crossover)


def check_double_scatter_validity(
    t: float, geom: DetectorGeometry, medium: MediumModel, threshold: float = 0.01
) -> Smallness:
    """Smallness parameter ``eps * sigma_max * rho0 * ln(t/rho0)``.

    The double-scatter estimate is trusted while it stays at or below
    *threshold*.

    Raises:
        DomainError: If ``t <= rho0`` (the logarithm is not positive there).
    """
    if not (math.isfinite(t) and t > geom.rho0):
        raise DomainError(f"smallness parameter needs t > rho0, got t = {t}")
    q = geom.epsilon * medium.sigma_max() * geom.rho0 * math.log(t / geom.rho0)
    return Smallness(q=q, threshold=threshold, ok=q <= threshold)
