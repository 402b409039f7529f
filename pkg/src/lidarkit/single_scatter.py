"""single_scatter.py

Straight-line attenuation and the single-scattering return rate.

Usage::

    from lidarkit.geometry import DetectorGeometry
    from lidarkit.medium import MediumModel
    from lidarkit.single_scatter import single_scatter_return

    geom = DetectorGeometry.from_epsilon(rho0=0.1, epsilon=0.1)
    medium = MediumModel.homogeneous(sigma_t=0.1, scattering=0.05)
    single_scatter_return(50.0, geom, medium)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .geometry import DetectorGeometry, check_far_field
from .medium import MediumModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AttenuationQuery:
    """Straight segment of length *path_length* starting at *start_height*.

    The segment runs along a direction whose cosine with ``+z`` is
    *direction_cosine* reversed: a point at distance ``s`` along it sits at
    ``start_height - s * direction_cosine``.  So ``direction_cosine = -1``
    travels up and ``+1`` travels down toward the receiver.
    """

    path_length: float
    start_height: float
    direction_cosine: float

    def __post_init__(self) -> None:
        for name in ("path_length", "start_height", "direction_cosine"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")
        if self.path_length < 0.0:
            raise DomainError(f"path length must be non-negative, got {self.path_length}")
        if abs(self.direction_cosine) > 1.0:
            raise DomainError(f"direction cosine must lie in [-1, 1], got {self.direction_cosine}")


def attenuation(q: AttenuationQuery, medium: MediumModel) -> float:
    """Transmission ``exp(-∫ sigma_t ds)`` along the queried segment."""
    mu = q.direction_cosine
    if mu == 0.0:
        return math.exp(-medium.sigma_t(q.start_height) * q.path_length)
    end = q.start_height - q.path_length * mu
    return math.exp(-medium.optical_depth(q.start_height, end) / abs(mu))


def single_scatter_return(
    t: float, geom: DetectorGeometry, medium: MediumModel, warn: bool = True
) -> float:
    """Single-scattering return rate ``I1(t)`` per emitted particle.

    The photon climbs to ``t/2``, backscatters once and returns; the signal is
    the solid angle of the aperture seen from ``t/2`` times the two-way
    transmission times ``sigma(-1, t/2)``.

    Args:
        t: Return time (path length), must be positive.
        geom: Detector geometry.
        medium: Scattering medium.
        warn: Log a warning when the far-field condition fails.

    Raises:
        DomainError: If *t* is not positive and finite.
    """
    if not (math.isfinite(t) and t > 0.0):
        raise DomainError(f"return time must be positive, got {t}")
    if warn:
        far = check_far_field(t, geom)
        if not far.ok:
            logger.warning(
                "t=%g: far-field condition fails (margin %.3g), I1 is outside its regime",
                t,
                far.margin,
            )
    h = 0.5 * t
    up = attenuation(AttenuationQuery(h, 0.0, -1.0), medium)
    down = attenuation(AttenuationQuery(h, h, 1.0), medium)
    solid_angle = 2.0 * math.pi * geom.rho0**2 / (t * t)
    return solid_angle * up * down * medium.sigma_scatter(-1.0, h)


def bin_averaged_single_scatter(
    lo: float, hi: float, geom: DetectorGeometry, medium: MediumModel, order: int = 16
) -> float:
    """Average of ``I1`` over the tally bin ``[lo, hi)`` (Gauss-Legendre).

    A Monte Carlo rate is a bin average; comparing it with this value instead
    of the point value removes the bin-width bias.
    """
    if not (0.0 < lo < hi):
        raise DomainError(f"bin must satisfy 0 < lo < hi, got [{lo}, {hi})")
    x, w = np.polynomial.legendre.leggauss(order)
    mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
    values = [single_scatter_return(mid + half * xi, geom, medium, warn=False) for xi in x]
    return 0.5 * math.fsum(wi * vi for wi, vi in zip(w, values))
